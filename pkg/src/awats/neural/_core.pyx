# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled float32 kernels: LSTM recurrence and fused Adam updates.

Mirrors _kernels_np exactly (gate layout i|f|g|o, time-major sequences).
Matrix products go through BLAS sgemm; the pointwise cell math lives in
verbatim C helpers with restrict-qualified pointers so the compiler can
vectorize them (sigmoids run through the vectorized tanhf).
"""

import numpy as np

from scipy.linalg.cython_blas cimport sgemm

cdef extern from *:
    """
    #include <math.h>

    /* activate an (B, 4H) gate slab in place, then advance the cell state */
    static void awats_cell_fwd(float* __restrict gates,
                               const float* __restrict c_prev,
                               float* __restrict c_out,
                               float* __restrict h_out,
                               long n_b, long n_h) {
        long b, j;
        for (b = 0; b < n_b; b++) {
            float* __restrict g = gates + b * 4 * n_h;
            const float* __restrict cp = c_prev + b * n_h;
            float* __restrict ct = c_out + b * n_h;
            float* __restrict ht = h_out + b * n_h;
            for (j = 0; j < 2 * n_h; j++)
                g[j] = 0.5f * tanhf(0.5f * g[j]) + 0.5f;
            for (j = 2 * n_h; j < 3 * n_h; j++)
                g[j] = tanhf(g[j]);
            for (j = 3 * n_h; j < 4 * n_h; j++)
                g[j] = 0.5f * tanhf(0.5f * g[j]) + 0.5f;
            for (j = 0; j < n_h; j++) {
                float c = g[n_h + j] * cp[j] + g[j] * g[2 * n_h + j];
                ct[j] = c;
                ht[j] = g[3 * n_h + j] * tanhf(c);
            }
        }
    }

    /* one step of backprop through the cell pointwise math; dh and dc are
       the running recurrent gradients and are updated in place (dc only;
       dh is consumed here and refilled by the caller's gemm) */
    static void awats_cell_bwd(const float* __restrict gates,
                               const float* __restrict c_prev,
                               const float* __restrict c_cur,
                               const float* __restrict d_h_step,
                               const float* __restrict dh,
                               float* __restrict dc,
                               float* __restrict d_gates,
                               long n_b, long n_h) {
        long b, j;
        for (b = 0; b < n_b; b++) {
            const float* __restrict g = gates + b * 4 * n_h;
            const float* __restrict cp = c_prev + b * n_h;
            const float* __restrict cc = c_cur + b * n_h;
            const float* __restrict ds = d_h_step + b * n_h;
            const float* __restrict dhr = dh + b * n_h;
            float* __restrict dcr = dc + b * n_h;
            float* __restrict dg = d_gates + b * 4 * n_h;
            for (j = 0; j < n_h; j++) {
                float gi = g[j], gf = g[n_h + j];
                float gg = g[2 * n_h + j], go = g[3 * n_h + j];
                float tc = tanhf(cc[j]);
                float dht = dhr[j] + ds[j];
                float dct = dcr[j] + dht * go * (1.0f - tc * tc);
                dg[3 * n_h + j] = dht * tc * go * (1.0f - go);
                dg[j] = dct * gg * gi * (1.0f - gi);
                dg[n_h + j] = dct * cp[j] * gf * (1.0f - gf);
                dg[2 * n_h + j] = dct * gi * (1.0f - gg * gg);
                dcr[j] = dct * gf;
            }
        }
    }

    static void awats_adam(float* __restrict value,
                           const float* __restrict grad,
                           float* __restrict m,
                           float* __restrict v,
                           long n, float lr, float beta1, float beta2,
                           float eps, float bc1, float bc2) {
        long j;
        for (j = 0; j < n; j++) {
            float g = grad[j];
            m[j] = beta1 * m[j] + (1.0f - beta1) * g;
            v[j] = beta2 * v[j] + (1.0f - beta2) * g * g;
            value[j] -= lr * (m[j] / bc1) / (sqrtf(v[j] / bc2) + eps);
        }
    }
    """
    void awats_cell_fwd(float* gates, const float* c_prev, float* c_out,
                        float* h_out, long n_b, long n_h) noexcept nogil
    void awats_cell_bwd(const float* gates, const float* c_prev,
                        const float* c_cur, const float* d_h_step,
                        const float* dh, float* dc, float* d_gates,
                        long n_b, long n_h) noexcept nogil
    void awats_adam(float* value, const float* grad, float* m, float* v,
                    long n, float lr, float beta1, float beta2, float eps,
                    float bc1, float bc2) noexcept nogil


cdef void _gemm_nn(float* a, float* b, float* c,
                   int m, int k, int n, float beta) noexcept nogil:
    # row-major C(m,n) = A(m,k) @ B(k,n) + beta*C via the column-major trick
    cdef float alpha = 1.0
    cdef char no = b'n'
    sgemm(&no, &no, &n, &m, &k, &alpha, b, &n, a, &k, &beta, c, &n)


cdef void _gemm_nt(float* a, float* b, float* c,
                   int m, int k, int n, float beta) noexcept nogil:
    # row-major C(m,n) = A(m,k) @ B(n,k)^T + beta*C
    cdef float alpha = 1.0
    cdef char tr = b't'
    cdef char no = b'n'
    sgemm(&tr, &no, &n, &m, &k, &alpha, b, &k, a, &k, &beta, c, &n)


cdef void _gemm_tn(float* a, float* b, float* c,
                   int m, int k, int n, float beta) noexcept nogil:
    # row-major C(m,n) = A(k,m)^T @ B(k,n) + beta*C
    cdef float alpha = 1.0
    cdef char tr = b't'
    cdef char no = b'n'
    sgemm(&no, &tr, &n, &m, &k, &alpha, b, &n, a, &m, &beta, c, &n)


def lstm_seq_forward(float[:, :, ::1] gates, float[:, ::1] w_hh,
                     float[:, ::1] h0, float[:, ::1] c0):
    """Recurrence over (W, B, 4H) pre-activations; activates gates in place.

    Returns (h_seq, c_seq), each (W, B, H) float32.
    """
    cdef Py_ssize_t n_w = gates.shape[0]
    cdef Py_ssize_t n_b = gates.shape[1]
    cdef Py_ssize_t four_h = gates.shape[2]
    cdef Py_ssize_t n_h = four_h // 4

    h_seq_arr = np.empty((n_w, n_b, n_h), dtype=np.float32)
    c_seq_arr = np.empty((n_w, n_b, n_h), dtype=np.float32)
    cdef float[:, :, ::1] h_seq = h_seq_arr
    cdef float[:, :, ::1] c_seq = c_seq_arr

    cdef Py_ssize_t t
    cdef float* h_prev
    cdef float* c_prev
    with nogil:
        for t in range(n_w):
            h_prev = &h0[0, 0] if t == 0 else &h_seq[t - 1, 0, 0]
            c_prev = &c0[0, 0] if t == 0 else &c_seq[t - 1, 0, 0]
            _gemm_nn(h_prev, &w_hh[0, 0], &gates[t, 0, 0],
                     <int> n_b, <int> n_h, <int> four_h, 1.0)
            awats_cell_fwd(&gates[t, 0, 0], c_prev,
                           &c_seq[t, 0, 0], &h_seq[t, 0, 0], n_b, n_h)
    return h_seq_arr, c_seq_arr


def lstm_seq_backward(float[:, ::1] w_hh, float[:, :, ::1] gates,
                      float[:, :, ::1] h_seq, float[:, :, ::1] c_seq,
                      float[:, ::1] h0, float[:, ::1] c0,
                      float[:, :, ::1] d_h_seq):
    """Reverse pass matching lstm_seq_forward (gates hold activated values).

    Returns (d_gates, d_w_hh, d_h0, d_c0).
    """
    cdef Py_ssize_t n_w = gates.shape[0]
    cdef Py_ssize_t n_b = gates.shape[1]
    cdef Py_ssize_t four_h = gates.shape[2]
    cdef Py_ssize_t n_h = four_h // 4

    d_gates_arr = np.empty((n_w, n_b, four_h), dtype=np.float32)
    d_w_hh_arr = np.zeros((n_h, four_h), dtype=np.float32)
    dh_arr = np.zeros((n_b, n_h), dtype=np.float32)
    dc_arr = np.zeros((n_b, n_h), dtype=np.float32)
    cdef float[:, :, ::1] d_gates = d_gates_arr
    cdef float[:, ::1] d_w_hh = d_w_hh_arr
    cdef float[:, ::1] dh = dh_arr
    cdef float[:, ::1] dc = dc_arr

    cdef Py_ssize_t t
    cdef float* c_prev
    cdef float* h_prev
    with nogil:
        for t in range(n_w - 1, -1, -1):
            c_prev = &c0[0, 0] if t == 0 else &c_seq[t - 1, 0, 0]
            h_prev = &h0[0, 0] if t == 0 else &h_seq[t - 1, 0, 0]
            awats_cell_bwd(&gates[t, 0, 0], c_prev, &c_seq[t, 0, 0],
                           &d_h_seq[t, 0, 0], &dh[0, 0], &dc[0, 0],
                           &d_gates[t, 0, 0], n_b, n_h)
            _gemm_tn(h_prev, &d_gates[t, 0, 0], &d_w_hh[0, 0],
                     <int> n_h, <int> n_b, <int> four_h, 1.0)
            _gemm_nt(&d_gates[t, 0, 0], &w_hh[0, 0], &dh[0, 0],
                     <int> n_b, <int> four_h, <int> n_h, 0.0)
    return d_gates_arr, d_w_hh_arr, dh_arr, dc_arr


def adam_step(float[::1] value, float[::1] grad, float[::1] m, float[::1] v,
              long t, float lr, float beta1, float beta2, float eps):
    """One in-place Adam update on a flat float32 parameter array."""
    cdef float bc1 = <float> (1.0 - beta1 ** t)
    cdef float bc2 = <float> (1.0 - beta2 ** t)
    cdef Py_ssize_t n = value.shape[0]
    if n == 0:
        return
    with nogil:
        awats_adam(&value[0], &grad[0], &m[0], &v[0], n,
                   lr, beta1, beta2, eps, bc1, bc2)
