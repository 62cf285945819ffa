# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled log-space forward/backward recursions and the batched E-step.

Mirrors ``_kernels_py`` exactly; see that module for the array conventions.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY, isinf

cnp.import_array()

BACKEND = "cython"

cdef double NEG_INF = -INFINITY


cdef inline double logaddexp(double x, double y) noexcept nogil:
    cdef double hi, lo
    if x == NEG_INF:
        return y
    if y == NEG_INF:
        return x
    if x > y:
        hi = x
        lo = y
    else:
        hi = y
        lo = x
    return hi + log(1.0 + exp(lo - hi))


cdef void _forward(
    const double[:, ::1] lpiA,
    const double[:, :, :, ::1] lA,
    const double[:, :, ::1] lSstay,
    const double[:, :, ::1] lSadv,
    const double[:, ::1] logw,
    const long long[::1] act,
    Py_ssize_t start,
    Py_ssize_t m,
    Py_ssize_t c,
    double[:, :, ::1] f,
) noexcept nogil:
    cdef Py_ssize_t r = f.shape[2]
    cdef Py_ssize_t i, s
    cdef long long ap, an
    cdef double w, stay, adv
    f[c, 0, 0] = lpiA[c, act[start]]
    for s in range(1, r):
        f[c, 0, s] = NEG_INF
    for i in range(1, m):
        ap = act[start + i - 1]
        an = act[start + i]
        w = logw[start + i, c]
        for s in range(r):
            stay = f[c, i - 1, s] + lA[ap, s, c, an] + lSstay[an, s, c]
            if s > 0:
                adv = f[c, i - 1, s - 1] + lA[ap, s - 1, c, an] + lSadv[an, s - 1, c]
            else:
                adv = NEG_INF
            f[c, i, s] = logaddexp(stay, adv) + w


cdef void _backward(
    const double[:, :, :, ::1] lA,
    const double[:, :, ::1] lSstay,
    const double[:, :, ::1] lSadv,
    const double[:, ::1] logw,
    const long long[::1] act,
    Py_ssize_t start,
    Py_ssize_t m,
    Py_ssize_t c,
    Py_ssize_t lo,
    Py_ssize_t hi,
    double[:, :, ::1] g,
) noexcept nogil:
    cdef Py_ssize_t r = g.shape[2]
    cdef Py_ssize_t i, s
    cdef long long ap, an
    cdef double w, stay, adv, base
    for s in range(r):
        g[c, m - 1, s] = 0.0 if lo <= s <= hi else NEG_INF
    for i in range(m - 2, -1, -1):
        ap = act[start + i]
        an = act[start + i + 1]
        w = logw[start + i + 1, c]
        for s in range(r):
            base = lA[ap, s, c, an]
            stay = g[c, i + 1, s] + base + lSstay[an, s, c]
            if s + 1 < r:
                adv = g[c, i + 1, s + 1] + base + lSadv[an, s, c]
            else:
                adv = NEG_INF
            g[c, i, s] = logaddexp(stay, adv) + w


cdef double _loglik_class(double[:, :, ::1] f, double[:, :, ::1] g,
                          Py_ssize_t c, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t s
    cdef Py_ssize_t r = f.shape[2]
    cdef double acc = NEG_INF
    for s in range(r):
        acc = logaddexp(acc, f[c, m - 1, s] + g[c, m - 1, s])
    return acc


def forward_backward(lpiA, lA, lSstay, lSadv, logw, actions, Py_ssize_t lo, Py_ssize_t hi):
    """Forward/backward log tables of one sequence for every class.

    Returns ``(f, g, logp)`` with ``f``/``g`` of shape ``(k, m, r)`` and
    ``logp[c] = log p(a, tau | c)``.
    """
    cdef const long long[::1] act = np.ascontiguousarray(actions, dtype=np.int64)
    cdef const double[:, ::1] lw = np.ascontiguousarray(logw, dtype=np.float64)
    cdef const double[:, ::1] pi = np.ascontiguousarray(lpiA, dtype=np.float64)
    cdef const double[:, :, :, ::1] A = np.ascontiguousarray(lA, dtype=np.float64)
    cdef const double[:, :, ::1] Ss = np.ascontiguousarray(lSstay, dtype=np.float64)
    cdef const double[:, :, ::1] Sa = np.ascontiguousarray(lSadv, dtype=np.float64)
    cdef Py_ssize_t k = pi.shape[0]
    cdef Py_ssize_t r = A.shape[1]
    cdef Py_ssize_t m = act.shape[0]
    f_arr = np.empty((k, m, r))
    g_arr = np.empty((k, m, r))
    lp_arr = np.empty(k)
    cdef double[:, :, ::1] f = f_arr
    cdef double[:, :, ::1] g = g_arr
    cdef double[::1] lp = lp_arr
    cdef Py_ssize_t c
    with nogil:
        for c in range(k):
            _forward(pi, A, Ss, Sa, lw, act, 0, m, c, f)
            _backward(A, Ss, Sa, lw, act, 0, m, c, lo, hi, g)
            lp[c] = _loglik_class(f, g, c, m)
    return f_arr, g_arr, lp_arr


def estep_batch(lthC, lpiA, lA, lSstay, lSadv, logw, actions, offsets, lo, hi):
    """Posterior-weighted sufficient statistics accumulated over a packed dataset.

    Returns ``(NA, MS, I, R, class_post, loglik, ok)``; sequences whose
    likelihood is zero under every class are flagged ``ok = 0`` and skipped.
    """
    cdef const double[::1] thC = np.ascontiguousarray(lthC, dtype=np.float64)
    cdef const double[:, ::1] pi = np.ascontiguousarray(lpiA, dtype=np.float64)
    cdef const double[:, :, :, ::1] A = np.ascontiguousarray(lA, dtype=np.float64)
    cdef const double[:, :, ::1] Ss = np.ascontiguousarray(lSstay, dtype=np.float64)
    cdef const double[:, :, ::1] Sa = np.ascontiguousarray(lSadv, dtype=np.float64)
    cdef const double[:, ::1] lw = np.ascontiguousarray(logw, dtype=np.float64)
    cdef const long long[::1] act = np.ascontiguousarray(actions, dtype=np.int64)
    cdef const long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const long long[::1] wlo = np.ascontiguousarray(lo, dtype=np.int64)
    cdef const long long[::1] whi = np.ascontiguousarray(hi, dtype=np.int64)

    cdef Py_ssize_t k = pi.shape[0]
    cdef Py_ssize_t nA = pi.shape[1]
    cdef Py_ssize_t r = A.shape[1]
    cdef Py_ssize_t N = off.shape[0] - 1
    cdef Py_ssize_t maxm = 0
    cdef Py_ssize_t n, i, s, c, m, start
    for n in range(N):
        if off[n + 1] - off[n] > maxm:
            maxm = off[n + 1] - off[n]

    NA_arr = np.zeros((nA, r, k, nA))
    MS_arr = np.zeros((nA, r, k, 2))
    I_arr = np.zeros((k, nA))
    R_arr = np.zeros(k)
    post_arr = np.zeros((N, k))
    ll_arr = np.full(N, NEG_INF)
    ok_arr = np.zeros(N, dtype=np.uint8)
    f_arr = np.empty((k, max(maxm, 1), r))
    g_arr = np.empty((k, max(maxm, 1), r))
    lp_arr = np.empty(k)

    cdef double[:, :, :, ::1] NA = NA_arr
    cdef double[:, :, :, ::1] MS = MS_arr
    cdef double[:, ::1] I = I_arr
    cdef double[::1] R = R_arr
    cdef double[:, ::1] post = post_arr
    cdef double[::1] ll = ll_arr
    cdef unsigned char[::1] ok = ok_arr
    cdef double[:, :, ::1] f = f_arr
    cdef double[:, :, ::1] g = g_arr
    cdef double[::1] lp = lp_arr
    cdef double total, q, lc, lpair, base, w
    cdef long long ap, an

    with nogil:
        for n in range(N):
            start = off[n]
            m = off[n + 1] - start
            total = NEG_INF
            for c in range(k):
                _forward(pi, A, Ss, Sa, lw, act, start, m, c, f)
                _backward(A, Ss, Sa, lw, act, start, m, c, wlo[n], whi[n], g)
                lp[c] = _loglik_class(f, g, c, m)
                total = logaddexp(total, thC[c] + lp[c])
            if total == NEG_INF:
                continue
            ok[n] = 1
            ll[n] = total
            for c in range(k):
                if lp[c] == NEG_INF or thC[c] == NEG_INF:
                    continue
                q = exp(thC[c] + lp[c] - total)
                post[n, c] = q
                if q == 0.0:
                    continue
                R[c] += q
                I[c, act[start]] += q
                lc = lp[c]
                for i in range(1, m):
                    ap = act[start + i - 1]
                    an = act[start + i]
                    w = lw[start + i, c]
                    for s in range(r):
                        if f[c, i - 1, s] == NEG_INF:
                            continue
                        base = f[c, i - 1, s] + A[ap, s, c, an] + w - lc
                        lpair = base + Ss[an, s, c] + g[c, i, s]
                        if lpair != NEG_INF:
                            lpair = q * exp(lpair)
                            MS[an, s, c, 0] += lpair
                            NA[ap, s, c, an] += lpair
                        if s + 1 < r:
                            lpair = base + Sa[an, s, c] + g[c, i, s + 1]
                            if lpair != NEG_INF:
                                lpair = q * exp(lpair)
                                MS[an, s, c, 1] += lpair
                                NA[ap, s, c, an] += lpair
    return NA_arr, MS_arr, I_arr, R_arr, post_arr, ll_arr, ok_arr
