"""Pure-numpy implementations of the kernels in ``_numba_impl``.

Used when numba is unavailable or disabled with ``TRUNCCOX_DISABLE_NUMBA=1``.
Signatures and return values match the compiled versions exactly.
"""

import numpy as np

CONVERGED, MAX_ITER, SINGULAR, STALLED = 0, 1, 2, 3


def _truncated_mask(lo, hi, rfin, d):
    j = np.arange(d)
    return (j[None, :] < lo[:, None]) | (rfin[:, None] & (j[None, :] >= hi[:, None]))


def _density(lam, eta):
    # f_i(t_j) = lam_j e_i exp(-C_j e_i), shape (n, d)
    C = np.cumsum(lam)
    e = np.exp(eta)[:, None]
    return lam[None, :] * e * np.exp(-C[None, :] * e)


def alpha(lam, eta, lo, hi, rfin, support):
    if support:
        f = _density(lam, eta)
        return 1.0 - np.where(_truncated_mask(lo, hi, rfin, lam.size), f, 0.0).sum(axis=1)
    C = np.cumsum(lam)
    e = np.exp(eta)
    cl = np.where(lo > 0, C[np.maximum(lo - 1, 0)], 0.0)
    cr = np.where(hi > 0, C[np.maximum(hi - 1, 0)], 0.0)
    s_l = np.exp(-cl * e)
    return np.where(rfin, s_l * -np.expm1(-(cr - cl) * e), s_l)


def estep(lam, eta, jidx, lo, hi, rfin, support):
    n, d = eta.size, lam.size
    a = alpha(lam, eta, lo, hi, rfin, support)
    w = np.where(_truncated_mask(lo, hi, rfin, d), _density(lam, eta) / a[:, None], 0.0)
    w[np.arange(n), jidx] += 1.0
    return w, a


def _moment_design(Z):
    n, p = Z.shape
    return np.hstack([np.ones((n, 1)), Z, (Z[:, :, None] * Z[:, None, :]).reshape(n, p * p)])


def _chol_solve(H, U, scale):
    p = H.shape[0]
    Lm = np.zeros((p, p))
    for j in range(p):
        s = H[j, j] - Lm[j, :j] @ Lm[j, :j]
        if not (s > 1e-10 * scale[j]) or scale[j] <= 0.0:
            return np.zeros(p), False
        Lm[j, j] = np.sqrt(s)
        Lm[j + 1 :, j] = (H[j + 1 :, j] - Lm[j + 1 :, :j] @ Lm[j, :j]) / Lm[j, j]
    y = np.linalg.solve(Lm, U)
    return np.linalg.solve(Lm.T, y), True


class _Design:
    """Quantities of a weight matrix that stay fixed during one Newton solve."""

    def __init__(self, w, Z, efron):
        n, d = w.shape
        p = Z.shape[1]
        self.Z, self.p, self.efron = Z, p, efron
        Wr = np.cumsum(w[:, ::-1], axis=1)[:, ::-1]
        self.WrT = np.ascontiguousarray(Wr.T)
        self.wcol = w.sum(axis=0)
        self.wrow = Wr[:, 0].copy()
        self.total = self.wcol.sum()
        self.wz = self.wrow @ Z
        self.M = _moment_design(Z)
        self.live = self.wcol > 0
        if efron:
            # one entry per (column j, rank r) with r < m_j
            ii, jj = np.nonzero(w.T > 0)  # ii: column, jj: row
            self.t_col, self.t_row, self.t_w = ii, jj, w[jj, ii]
            m = np.bincount(ii, minlength=d)
            self.m = m
            start = np.concatenate(([0], np.cumsum(m)[:-1]))
            self.f = (np.arange(ii.size) - start[ii]) / m[ii]
            self.mw = self.wcol[ii] / m[ii]

    def evaluate(self, beta):
        p, Z = self.p, self.Z
        eta = Z @ beta
        e = np.exp(eta)
        S = self.WrT @ (e[:, None] * self.M)
        ll = self.wrow @ eta
        diag = 1 + p + np.arange(p) * (p + 1)
        if not self.efron:
            wc = self.wcol[self.live]
            s = S[self.live]
            s0 = s[:, 0]
            mean = s[:, 1 : 1 + p] / s0[:, None]
            second = s[:, 1 + p :].reshape(-1, p, p) / s0[:, None, None]
            ll -= wc @ np.log(s0)
            U = self.wz - wc @ mean
            H = np.einsum("j,jkl->kl", wc, second - mean[:, :, None] * mean[:, None, :])
            scale = wc @ (s[:, diag] / s0[:, None])
        else:
            col = self.t_col
            D = np.zeros_like(S)
            np.add.at(D, col, (self.t_w * e[self.t_row])[:, None] * self.M[self.t_row])
            num = S[col] - self.f[:, None] * D[col]
            den = num[:, 0]
            mean = num[:, 1 : 1 + p] / den[:, None]
            second = num[:, 1 + p :].reshape(-1, p, p) / den[:, None, None]
            ll -= self.mw @ np.log(den)
            U = self.wz - self.mw @ mean
            H = np.einsum("j,jkl->kl", self.mw, second - mean[:, :, None] * mean[:, None, :])
            scale = self.mw @ (num[:, diag] / den[:, None])
        return ll, U, H, scale, S[:, 0].copy()


def dense_cox_newton(w, Z, beta0, efron, tol, max_iter, max_halving):
    des = _Design(w, Z, efron)
    beta = beta0.copy()
    ll, U, H, scale, S0 = des.evaluate(beta)
    status, it = MAX_ITER, 0
    while True:
        if np.max(np.abs(U)) / des.total < tol:
            status = CONVERGED if _chol_solve(H, U, scale)[1] else SINGULAR
            break
        if it >= max_iter:
            break
        step, ok = _chol_solve(H, U, scale)
        if not ok:
            status = SINGULAR
            break
        t, accepted = 1.0, False
        for _ in range(max_halving + 1):
            nb = beta + t * step
            res = des.evaluate(nb)
            if res[0] >= ll - 1e-12 * abs(ll):
                accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted:
            status = STALLED
            break
        beta = nb
        ll, U, H, scale, S0 = res
    snorm = np.max(np.abs(U)) / des.total
    S0b = des.WrT @ np.exp(Z @ beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(S0b > 0, des.wcol / S0b, 0.0)
    return beta, lam, ll, snorm, it, status


def self_consistency(J, tol, max_iter):
    n, m = J.shape
    k = np.full(m, 1.0 / m)
    pi = J @ k
    converged, it = False, 0
    while it < max_iter:
        it += 1
        f = 1.0 / pi
        f /= f.sum()
        k = 1.0 / (f @ J)
        k /= k.sum()
        new = J @ k
        diff = np.max(np.abs(new - pi))
        pi = new
        if diff < tol:
            converged = True
            break
    f = 1.0 / pi
    return pi, f / f.sum(), k, it, converged


def kendall_sums(T, L, R):
    i, k = np.triu_indices(T.size, 1)
    comp = (np.maximum(L[i], L[k]) <= np.minimum(T[i], T[k])) & (
        np.minimum(R[i], R[k]) >= np.maximum(T[i], T[k])
    )
    i, k = i[comp], k[comp]
    st = np.sign(T[i] - T[k])
    # comparisons instead of subtraction so that inf vs inf is a tie
    sl = (L[i] > L[k]).astype(float) - (L[i] < L[k])
    sr = (R[i] > R[k]).astype(float) - (R[i] < R[k])
    return float(st @ sl), float(st @ sr), int(comp.sum())


def swap_chain(T, L, R, perm, ii, kk):
    acc = 0
    for a, b in zip(ii.tolist(), kk.tolist()):
        if a == b:
            continue
        wa, wb = perm[a], perm[b]
        if L[wb] <= T[a] <= R[wb] and L[wa] <= T[b] <= R[wa]:
            perm[a], perm[b] = wb, wa
            acc += 1
    return acc
