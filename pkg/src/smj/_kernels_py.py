"""Pure numpy versions of the hot loops; used when the compiled module is absent.

Signatures and array layouts match ``_ckernels.pyx`` exactly.
"""
import numpy as np


def pi_recursion(Q, L_max):
    """Pi table ``(L_max+1, L_max+1, J, J)`` from one-step matrices ``Q[l, w]``."""
    J = Q.shape[-1]
    idx = np.arange(J)
    Pi = np.zeros((L_max + 1, L_max + 1, J, J))
    Pi[0, 0] = np.eye(J)
    diag = Q[..., idx, idx]
    Qn = Q.copy()
    Qn[..., idx, idx] = 0.0
    for k in range(1, L_max + 1):
        Pi[k, 1:k + 1] = Pi[k - 1, :k] * diag[k - 1, :k, None, :]
        Pi[k, 0] = np.einsum("wim,wmj->ij", Pi[k - 1, :k], Qn[k - 1, :k])
    return Pi


def _pairs(wins, a, L_use):
    w = np.arange(wins[a, 0], wins[a, 1] + 1)
    m = np.arange(max(1, wins[a, 2]), wins[a, 3] + 1)
    ll = w[:, None] + m[None, :]
    ok = ll <= L_use
    ww = np.broadcast_to(w[:, None], ll.shape)[ok]
    mm = np.broadcast_to(m[None, :], ll.shape)[ok]
    return ww, mm


def density_sum(PiT, poi_w, erl_m, wins, L_use):
    """``out[a] = sum_{w, m>=1, w+m<=L_use} poi_w[a, w] erl_m[a, m] PiT[w, w+m]``.

    ``PiT[w, l] = Pi[l, w]`` (duration-major layout); ``wins[a] = (w_lo, w_hi,
    m_lo, m_hi)`` bounds the summation window.
    """
    n_v = poi_w.shape[0]
    J = PiT.shape[-1]
    out = np.zeros((n_v, J, J))
    for a in range(n_v):
        ww, mm = _pairs(wins, a, L_use)
        if len(ww) == 0:
            continue
        wt = poi_w[a, ww] * erl_m[a, mm]
        out[a] = np.tensordot(wt, PiT[ww, ww + mm], axes=(0, 0))
    return out


def jump_density_sum(PiT, QT, gamma, poi_w, erl_m, wins, L_use):
    """As :func:`density_sum` with ``PiT[w, l, i, j] * gamma * QnT[w, l, j, k]``."""
    n_v = poi_w.shape[0]
    J = PiT.shape[-1]
    idx = np.arange(J)
    out = np.zeros((n_v, J, J, J))
    for a in range(n_v):
        ww, mm = _pairs(wins, a, L_use)
        if len(ww) == 0:
            continue
        wt = poi_w[a, ww] * erl_m[a, mm]
        ll = ww + mm
        qn = QT[ww, ll].copy()
        qn[:, idx, idx] = 0.0
        out[a] = gamma * np.einsum("n,nij,njk->ijk", wt, PiT[ww, ll], qn)
    return out
