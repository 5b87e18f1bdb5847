# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loss kernels; see ``_kernels_py`` for the reference semantics.

Dense products go through the same BLAS calls as the numpy version; hinge
mining, tie handling and gradient scatter are C loops with a fixed order, so
results are deterministic for a given input.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log

cnp.import_array()

cdef double EPS = 1e-12
HARDEST = 0
cdef int _HARDEST = 0
ALL_PAIRS = 1


def triplet_forward_backward(img, txt, labels, double margin, int mining):
    cdef const double[:, ::1] I = np.ascontiguousarray(img, dtype=np.float64)
    cdef const double[:, ::1] T = np.ascontiguousarray(txt, dtype=np.float64)
    cdef const long long[::1] y = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = I.shape[0], d = I.shape[1]
    cdef Py_ssize_t i, j, k, jbest
    cdef double best, h, w, cnt, acc_i, acc_t

    a_arr = np.empty((n, d))
    b_arr = np.empty((n, d))
    ni_arr = np.empty(n)
    nt_arr = np.empty(n)
    sim_arr = np.empty((n, n))
    gs_arr = np.zeros((n, n))
    cdef double[:, ::1] A = a_arr
    cdef double[:, ::1] B = b_arr
    cdef double[::1] ni = ni_arr
    cdef double[::1] nt = nt_arr
    cdef double[:, ::1] S = sim_arr
    cdef double[:, ::1] G = gs_arr

    for i in range(n):
        acc_i = 0.0
        acc_t = 0.0
        for k in range(d):
            acc_i += I[i, k] * I[i, k]
            acc_t += T[i, k] * T[i, k]
        ni[i] = sqrt(acc_i)
        nt[i] = sqrt(acc_t)
        if ni[i] <= EPS or nt[i] <= EPS:
            raise ValueError("zero-norm embedding in triplet batch")
        for k in range(d):
            A[i, k] = I[i, k] / ni[i]
            B[i, k] = T[i, k] / nt[i]

    # the dense product goes through BLAS; mining and scatter stay in C
    np.clip(np.dot(a_arr, b_arr.T), -1.0, 1.0, out=sim_arr)

    cdef Py_ssize_t n_anchors = 0
    cdef int has_neg
    for i in range(n):
        has_neg = 0
        for j in range(n):
            if y[j] != y[i]:
                has_neg = 1
                break
        n_anchors += has_neg
    if n_anchors == 0:
        return 0.0, np.zeros((n, d)), np.zeros((n, d)), 0
    w = 1.0 / n_anchors

    cdef double loss = 0.0
    for i in range(n):
        if mining == _HARDEST:
            # image anchor i: hardest text negative
            jbest = -1
            best = 0.0
            for j in range(n):
                if y[j] != y[i] and (jbest < 0 or S[i, j] > best):
                    best = S[i, j]
                    jbest = j
            if jbest < 0:
                continue
            h = best - S[i, i] + margin
            if h > 0:
                loss += h * w
                G[i, jbest] += w
                G[i, i] -= w
            # text anchor i: hardest image negative
            jbest = -1
            best = 0.0
            for j in range(n):
                if y[j] != y[i] and (jbest < 0 or S[j, i] > best):
                    best = S[j, i]
                    jbest = j
            h = best - S[i, i] + margin
            if h > 0:
                loss += h * w
                G[jbest, i] += w
                G[i, i] -= w
        else:
            cnt = 0.0
            for j in range(n):
                if y[j] != y[i]:
                    cnt += 1.0
            if cnt == 0.0:
                continue
            acc_i = 0.0
            acc_t = 0.0
            for j in range(n):
                if y[j] == y[i]:
                    continue
                h = S[i, j] - S[i, i] + margin
                if h > 0:
                    acc_i += h
                    G[i, j] += w / cnt
                    G[i, i] -= w / cnt
                h = S[j, i] - S[i, i] + margin
                if h > 0:
                    acc_t += h
                    G[j, i] += w / cnt
                    G[i, i] -= w / cnt
            loss += (acc_i / cnt) * w + (acc_t / cnt) * w

    da_arr = np.dot(gs_arr, b_arr)
    db_arr = np.dot(gs_arr.T, a_arr)
    gi_arr = np.empty((n, d))
    gt_arr = np.empty((n, d))
    cdef double[:, ::1] DA = da_arr
    cdef double[:, ::1] DB = db_arr
    cdef double[:, ::1] GI = gi_arr
    cdef double[:, ::1] GT = gt_arr
    cdef double pa, pb
    # project out the radial component (backward of row normalisation)
    for i in range(n):
        pa = 0.0
        pb = 0.0
        for k in range(d):
            pa += A[i, k] * DA[i, k]
            pb += B[i, k] * DB[i, k]
        for k in range(d):
            GI[i, k] = (DA[i, k] - A[i, k] * pa) / ni[i]
            GT[i, k] = (DB[i, k] - B[i, k] * pb) / nt[i]
    return loss, gi_arr, gt_arr, n_anchors


def balanced_softmax_forward_backward(logits, labels, log_counts):
    cdef const double[:, ::1] L = np.ascontiguousarray(logits, dtype=np.float64)
    cdef const long long[::1] y = np.ascontiguousarray(labels, dtype=np.int64)
    cdef const double[::1] lc = np.ascontiguousarray(log_counts, dtype=np.float64)
    cdef Py_ssize_t n = L.shape[0], c = L.shape[1]
    cdef Py_ssize_t i, j
    cdef double m, s, z, total = 0.0, inv_n = 1.0 / n
    grad_arr = np.empty((n, c))
    cdef double[:, ::1] G = grad_arr
    for i in range(n):
        m = L[i, 0] + lc[0]
        for j in range(1, c):
            z = L[i, j] + lc[j]
            if z > m:
                m = z
        s = 0.0
        for j in range(c):
            G[i, j] = exp(L[i, j] + lc[j] - m)
            s += G[i, j]
        total += log(s) + m - (L[i, y[i]] + lc[y[i]])
        for j in range(c):
            G[i, j] = G[i, j] / s * inv_n
        G[i, y[i]] -= inv_n
    return total * inv_n, grad_arr
