# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled hot loops: Pi recursion and transition/jump density assembly."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def pi_recursion(const double[:, :, :, ::1] Q, Py_ssize_t L_max):
    """Pi table ``(L_max+1, L_max+1, J, J)`` from one-step matrices ``Q[l, w]``.

    Pi(k, 0) sums over w = 0..k-1 in ascending order, then over the
    intermediate state m ascending.
    """
    cdef Py_ssize_t J = Q.shape[2]
    Pi = np.zeros((L_max + 1, L_max + 1, J, J))
    cdef double[:, :, :, ::1] P = Pi
    cdef Py_ssize_t k, v, i, j, m, w
    cdef double acc
    with nogil:
        for i in range(J):
            P[0, 0, i, i] = 1.0
        for k in range(1, L_max + 1):
            for v in range(1, k + 1):
                for i in range(J):
                    for j in range(J):
                        P[k, v, i, j] = P[k - 1, v - 1, i, j] * Q[k - 1, v - 1, j, j]
            for i in range(J):
                for j in range(J):
                    acc = 0.0
                    for w in range(k):
                        for m in range(J):
                            if m != j:
                                acc = acc + P[k - 1, w, i, m] * Q[k - 1, w, m, j]
                    P[k, 0, i, j] = acc
    return Pi


def density_sum(const double[:, :, :, ::1] PiT, const double[:, ::1] poi_w, const double[:, ::1] erl_m,
                const cnp.int64_t[:, ::1] wins, Py_ssize_t L_use):
    """``out[a] = sum_{w, m>=1, w+m<=L_use} poi_w[a, w] erl_m[a, m] PiT[w, w+m]``.

    ``PiT`` is the duration-major table (``PiT[w, l] = Pi[l, w]``) so that the
    inner loop over ``m`` walks contiguous memory.
    """
    cdef Py_ssize_t n_v = poi_w.shape[0]
    cdef Py_ssize_t n_l = PiT.shape[1]
    cdef Py_ssize_t J = PiT.shape[2]
    cdef Py_ssize_t JJ = J * J
    out = np.zeros((n_v, J, J))
    cdef double[:, :, ::1] O = out
    cdef Py_ssize_t a, w, m, t, m_lo, m_hi
    cdef double pw, wt
    cdef double *o
    cdef const double *src
    cdef const double *base = &PiT[0, 0, 0, 0]
    with nogil:
        for a in range(n_v):
            o = &O[a, 0, 0]
            for w in range(wins[a, 0], wins[a, 1] + 1):
                pw = poi_w[a, w]
                if pw == 0.0:
                    continue
                m_lo = wins[a, 2]
                if m_lo < 1:
                    m_lo = 1
                m_hi = wins[a, 3]
                if m_hi > L_use - w:
                    m_hi = L_use - w
                for m in range(m_lo, m_hi + 1):
                    wt = pw * erl_m[a, m]
                    src = base + (w * n_l + w + m) * JJ
                    for t in range(JJ):
                        o[t] += wt * src[t]
    return out


def jump_density_sum(const double[:, :, :, ::1] PiT, const double[:, :, :, ::1] QT, double gamma,
                     const double[:, ::1] poi_w, const double[:, ::1] erl_m,
                     const cnp.int64_t[:, ::1] wins, Py_ssize_t L_use):
    """As :func:`density_sum` with ``PiT[w, l, i, j] * gamma * QT[w, l, j, k]`` (``k != j``)."""
    cdef Py_ssize_t n_v = poi_w.shape[0]
    cdef Py_ssize_t n_l = PiT.shape[1]
    cdef Py_ssize_t n_lq = QT.shape[1]
    cdef Py_ssize_t J = PiT.shape[2]
    cdef Py_ssize_t JJ = J * J
    out = np.zeros((n_v, J, J, J))
    cdef double[:, :, :, ::1] O = out
    cdef Py_ssize_t a, w, m, i, j, k, m_lo, m_hi
    cdef double pw, wt, pij
    cdef double *o
    cdef const double *p
    cdef const double *q
    cdef const double *pbase = &PiT[0, 0, 0, 0]
    cdef const double *qbase = &QT[0, 0, 0, 0]
    with nogil:
        for a in range(n_v):
            o = &O[a, 0, 0, 0]
            for w in range(wins[a, 0], wins[a, 1] + 1):
                pw = poi_w[a, w]
                if pw == 0.0:
                    continue
                m_lo = wins[a, 2]
                if m_lo < 1:
                    m_lo = 1
                m_hi = wins[a, 3]
                if m_hi > L_use - w:
                    m_hi = L_use - w
                for m in range(m_lo, m_hi + 1):
                    wt = pw * erl_m[a, m] * gamma
                    p = pbase + (w * n_l + w + m) * JJ
                    q = qbase + (w * n_lq + w + m) * JJ
                    for i in range(J):
                        for j in range(J):
                            pij = wt * p[i * J + j]
                            if pij == 0.0:
                                continue
                            for k in range(J):
                                if k != j:
                                    o[(i * J + j) * J + k] += pij * q[j * J + k]
    return out
