# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM sequence kernels.

Same contract as ``dannte._lstm_py``. Matrix products go straight to BLAS
through SciPy's Cython bindings so the per-timestep loop never touches the
interpreter.
"""

import numpy as np
from libc.math cimport tanh
from scipy.linalg.cython_blas cimport dgemm


cdef void _mm(bint ta, bint tb, int m, int n, int k,
              double* A, double* B, double* C, double beta) noexcept nogil:
    # row-major C(m, n) = op(A) @ op(B) + beta * C, via column-major dgemm on C^T
    cdef char opa = b'T' if tb else b'N'
    cdef char opb = b'T' if ta else b'N'
    cdef int ldb = k if tb else n
    cdef int lda = m if ta else k
    cdef int ldc = n
    cdef double alpha = 1.0
    dgemm(&opa, &opb, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


cdef void _gate_step(double* z, const double* b, double* c_prev, double* c_new,
                     double* h_new, int B, int H) noexcept nogil:
    # plain contiguous loops so the compiler can use vector tanh
    cdef int r, k, G = 4 * H
    cdef double* zr
    cdef double* cp
    cdef double* cn
    cdef double* hn
    for r in range(B):
        zr = z + r * G
        cp = c_prev + r * H
        cn = c_new + r * H
        hn = h_new + r * H
        for k in range(2 * H):
            zr[k] = 0.5 + 0.5 * tanh(0.5 * (zr[k] + b[k]))
        for k in range(2 * H, 3 * H):
            zr[k] = tanh(zr[k] + b[k])
        for k in range(3 * H, G):
            zr[k] = 0.5 + 0.5 * tanh(0.5 * (zr[k] + b[k]))
        for k in range(H):
            cn[k] = zr[H + k] * cp[k] + zr[k] * zr[2 * H + k]
        for k in range(H):
            hn[k] = zr[3 * H + k] * tanh(cn[k])


def lstm_forward(x, w, u, b):
    cdef int B = x.shape[0], W = x.shape[1], F = x.shape[2]
    cdef int G = w.shape[0], H = G // 4
    cdef double[:, :, ::1] xt = np.ascontiguousarray(np.transpose(x, (1, 0, 2)), dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    h_arr = np.zeros((W + 1, B, H))
    c_arr = np.zeros((W + 1, B, H))
    g_arr = np.empty((W, B, G))
    cdef double[:, :, ::1] hs = h_arr
    cdef double[:, :, ::1] cs = c_arr
    cdef double[:, :, ::1] gs = g_arr
    cdef int t
    with nogil:
        _mm(False, True, W * B, G, F, &xt[0, 0, 0], &wv[0, 0], &gs[0, 0, 0], 0.0)
        for t in range(W):
            _mm(False, True, B, G, H, &hs[t, 0, 0], &uv[0, 0], &gs[t, 0, 0], 1.0)
            _gate_step(&gs[t, 0, 0], &bv[0], &cs[t, 0, 0], &cs[t + 1, 0, 0],
                       &hs[t + 1, 0, 0], B, H)
    return h_arr, c_arr, g_arr


def lstm_final(x, w, u, b):
    cdef int B = x.shape[0], W = x.shape[1], F = x.shape[2]
    cdef int G = w.shape[0], H = G // 4
    cdef double[:, :, ::1] xt = np.ascontiguousarray(np.transpose(x, (1, 0, 2)), dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, :, ::1] zs = np.empty((W, B, G))
    cdef double[:, :, ::1] hs = np.zeros((2, B, H))
    cdef double[:, :, ::1] cs = np.zeros((2, B, H))
    cdef int t, cur = 0
    with nogil:
        _mm(False, True, W * B, G, F, &xt[0, 0, 0], &wv[0, 0], &zs[0, 0, 0], 0.0)
        for t in range(W):
            _mm(False, True, B, G, H, &hs[cur, 0, 0], &uv[0, 0], &zs[t, 0, 0], 1.0)
            _gate_step(&zs[t, 0, 0], &bv[0], &cs[cur, 0, 0], &cs[1 - cur, 0, 0],
                       &hs[1 - cur, 0, 0], B, H)
            cur = 1 - cur
    return np.asarray(hs[cur]).copy()


def lstm_backward(x, w, u, h_seq, c_seq, gates, dh_last):
    cdef int B = x.shape[0], W = x.shape[1], F = x.shape[2]
    cdef int G = w.shape[0], H = G // 4
    cdef double[:, :, ::1] xt = np.ascontiguousarray(np.transpose(x, (1, 0, 2)), dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:, :, ::1] hs = np.ascontiguousarray(h_seq, dtype=np.float64)
    cdef double[:, :, ::1] cs = np.ascontiguousarray(c_seq, dtype=np.float64)
    cdef double[:, :, ::1] gs = np.ascontiguousarray(gates, dtype=np.float64)
    dz_arr = np.empty((W, B, G))
    dw_arr = np.zeros((G, F))
    du_arr = np.zeros((G, H))
    db_arr = np.zeros(G)
    dxt_arr = np.empty((W, B, F))
    cdef double[:, :, ::1] dz = dz_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[:, ::1] du = du_arr
    cdef double[::1] db = db_arr
    cdef double[:, :, ::1] dxt = dxt_arr
    cdef double[:, ::1] dh = np.array(dh_last, dtype=np.float64, order="C").reshape(B, H)
    cdef double[:, ::1] dc = np.zeros((B, H))
    cdef int t, r, j, k
    cdef double ig, fg, gg, og, tc, dhv, dct
    cdef double[::1] tcv = np.empty(H)
    cdef double* tcb = &tcv[0]
    cdef double* a
    cdef double* d
    cdef double* cn
    with nogil:
        for t in range(W - 1, -1, -1):
            for r in range(B):
                a = &gs[t, r, 0]
                d = &dz[t, r, 0]
                cn = &cs[t + 1, r, 0]
                for j in range(H):
                    tcb[j] = tanh(cn[j])
                for j in range(H):
                    ig = a[j]
                    fg = a[H + j]
                    gg = a[2 * H + j]
                    og = a[3 * H + j]
                    tc = tcb[j]
                    dhv = dh[r, j]
                    dct = dc[r, j] + dhv * og * (1.0 - tc * tc)
                    d[j] = dct * gg * ig * (1.0 - ig)
                    d[H + j] = dct * cs[t, r, j] * fg * (1.0 - fg)
                    d[2 * H + j] = dct * ig * (1.0 - gg * gg)
                    d[3 * H + j] = dhv * tc * og * (1.0 - og)
                    dc[r, j] = dct * fg
            _mm(True, False, G, H, B, &dz[t, 0, 0], &hs[t, 0, 0], &du[0, 0], 1.0)
            _mm(False, False, B, H, G, &dz[t, 0, 0], &uv[0, 0], &dh[0, 0], 0.0)
        _mm(True, False, G, F, W * B, &dz[0, 0, 0], &xt[0, 0, 0], &dw[0, 0], 0.0)
        _mm(False, False, W * B, F, G, &dz[0, 0, 0], &wv[0, 0], &dxt[0, 0, 0], 0.0)
        for t in range(W):
            for r in range(B):
                for k in range(G):
                    db[k] += dz[t, r, k]
    return np.ascontiguousarray(dxt_arr.transpose(1, 0, 2)), dw_arr, du_arr, db_arr
