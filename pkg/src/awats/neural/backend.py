"""Kernel backend selection.

The compiled extension (_core) is used for float32 work when it imported
successfully; everything else routes to the numpy kernels. Set
AWATS_BACKEND=numpy to force the fallback or AWATS_BACKEND=compiled to
require the extension (raises if it is missing).
"""

from __future__ import annotations

import logging
import os

import numpy as np

from ..threads import pin_blas_threads
from . import _kernels_np

log = logging.getLogger(__name__)

try:
    from . import _core as _compiled
except ImportError:  # pragma: no cover - depends on how the package was built
    _compiled = None

# after _core so scipy's BLAS copy is loaded and gets pinned too
pin_blas_threads(1)

_choice = os.environ.get("AWATS_BACKEND", "").strip().lower()
if _choice in ("numpy", "python"):
    _compiled = None
elif _choice in ("compiled", "cython"):
    if _compiled is None:
        raise ImportError(
            "AWATS_BACKEND=compiled but the awats.neural._core extension is not built"
        )
elif _choice:
    raise ImportError(f"unknown AWATS_BACKEND value {_choice!r}")

if _compiled is None and not _choice:
    log.info("compiled kernels unavailable; using numpy fallback")


def backend_name() -> str:
    return "compiled" if _compiled is not None else "numpy"


def _use_compiled(arr: np.ndarray) -> bool:
    return _compiled is not None and arr.dtype == np.float32


def lstm_seq_forward(gates, w_hh, h0, c0):
    if _use_compiled(gates):
        return _compiled.lstm_seq_forward(gates, w_hh, h0, c0)
    return _kernels_np.lstm_seq_forward(gates, w_hh, h0, c0)


def lstm_seq_backward(w_hh, gates, h_seq, c_seq, h0, c0, d_h_seq):
    if _use_compiled(gates):
        return _compiled.lstm_seq_backward(w_hh, gates, h_seq, c_seq, h0, c0, d_h_seq)
    return _kernels_np.lstm_seq_backward(w_hh, gates, h_seq, c_seq, h0, c0, d_h_seq)


def adam_step(value, grad, m, v, t, lr, beta1, beta2, eps):
    if _use_compiled(value) and value.flags.c_contiguous:
        _compiled.adam_step(
            value.reshape(-1), grad.reshape(-1), m.reshape(-1), v.reshape(-1),
            t, lr, beta1, beta2, eps,
        )
        return
    _kernels_np.adam_step(value, grad, m, v, t, lr, beta1, beta2, eps)
