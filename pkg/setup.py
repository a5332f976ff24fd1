import sys

from setuptools import Extension, setup
from Cython.Build import cythonize

# The compiled kernels target x86-64 Linux (glibc's libmvec provides the
# vectorized tanhf the hot loops rely on). Elsewhere the package falls back
# to the numpy kernels at import time, so building without the extension is
# fine: `AWATS_SKIP_EXT=1 pip install .`.
import os

if os.environ.get("AWATS_SKIP_EXT") or not sys.platform.startswith("linux"):
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "awats.neural._core",
                sources=["src/awats/neural/_core.pyx"],
                extra_compile_args=["-O3", "-march=native", "-ffast-math"],
                libraries=["mvec", "m"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
