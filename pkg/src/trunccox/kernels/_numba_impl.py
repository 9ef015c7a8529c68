"""Compiled hot loops (numba ``@njit``).

Every function here has a counterpart with the same signature in
``_numpy_impl``; ``trunccox.kernels`` picks one at import time.
"""

import numpy as np
from numba import njit

# Newton status codes shared with the numpy implementation
CONVERGED, MAX_ITER, SINGULAR, STALLED = 0, 1, 2, 3


@njit(cache=True)
def _linear_predictor(Z, beta):
    n, p = Z.shape
    eta = np.zeros(n)
    for i in range(n):
        s = 0.0
        for k in range(p):
            s += Z[i, k] * beta[k]
        eta[i] = s
    return eta


@njit(cache=True)
def alpha(lam, eta, lo, hi, rfin, support):
    n = eta.shape[0]
    d = lam.shape[0]
    C = np.cumsum(lam)
    a = np.empty(n)
    for i in range(n):
        e = np.exp(eta[i])
        if support:
            s = 0.0
            for j in range(lo[i]):
                s += lam[j] * e * np.exp(-C[j] * e)
            if rfin[i]:
                for j in range(hi[i], d):
                    s += lam[j] * e * np.exp(-C[j] * e)
            a[i] = 1.0 - s
        else:
            cl = C[lo[i] - 1] if lo[i] > 0 else 0.0
            s_l = np.exp(-cl * e)
            if rfin[i]:
                cr = C[hi[i] - 1] if hi[i] > 0 else 0.0
                a[i] = s_l * -np.expm1(-(cr - cl) * e)
            else:
                a[i] = s_l
    return a


@njit(cache=True)
def estep(lam, eta, jidx, lo, hi, rfin, support):
    n = eta.shape[0]
    d = lam.shape[0]
    C = np.cumsum(lam)
    if support:
        a = np.empty(n)
    else:
        a = alpha(lam, eta, lo, hi, rfin, False)
    w = np.zeros((n, d))
    for i in range(n):
        e = np.exp(eta[i])
        s = 0.0
        for j in range(lo[i]):
            v = lam[j] * e * np.exp(-C[j] * e)
            w[i, j] = v
            s += v
        if rfin[i]:
            for j in range(hi[i], d):
                v = lam[j] * e * np.exp(-C[j] * e)
                w[i, j] = v
                s += v
        if support:
            a[i] = 1.0 - s
        c = 1.0 / a[i]
        for j in range(lo[i]):
            w[i, j] *= c
        if rfin[i]:
            for j in range(hi[i], d):
                w[i, j] *= c
        w[i, jidx[i]] += 1.0
    return w, a


@njit(cache=True)
def _moment_design(Z):
    # columns: 1, z_k, z_k z_l
    n, p = Z.shape
    M = np.empty((n, 1 + p + p * p))
    for i in range(n):
        M[i, 0] = 1.0
        for k in range(p):
            M[i, 1 + k] = Z[i, k]
            for l in range(p):
                M[i, 1 + p + k * p + l] = Z[i, k] * Z[i, l]
    return M


@njit(cache=True)
def _chol_solve(H, U, scale):
    """Solve H x = U by Cholesky; ok=False if a pivot is negligible."""
    p = H.shape[0]
    Lm = np.zeros((p, p))
    for j in range(p):
        s = H[j, j]
        for k in range(j):
            s -= Lm[j, k] * Lm[j, k]
        if not (s > 1e-10 * scale[j]) or scale[j] <= 0.0:
            return np.zeros(p), False
        Lm[j, j] = np.sqrt(s)
        for i in range(j + 1, p):
            t = H[i, j]
            for k in range(j):
                t -= Lm[i, k] * Lm[j, k]
            Lm[i, j] = t / Lm[j, j]
    y = np.zeros(p)
    for i in range(p):
        t = U[i]
        for k in range(i):
            t -= Lm[i, k] * y[k]
        y[i] = t / Lm[i, i]
    x = np.zeros(p)
    for i in range(p - 1, -1, -1):
        t = y[i]
        for k in range(i + 1, p):
            t -= Lm[k, i] * x[k]
        x[i] = t / Lm[i, i]
    return x, True


@njit(cache=True)
def _risk_moments(WrT, M, e):
    n = e.shape[0]
    q = M.shape[1]
    eM = np.empty((n, q))
    for i in range(n):
        for c in range(q):
            eM[i, c] = e[i] * M[i, c]
    return WrT @ eM  # (d, q)


@njit(cache=True)
def _eval_breslow(beta, Z, WrT, M, wcol, wrow, wz):
    p = Z.shape[1]
    d = wcol.shape[0]
    eta = _linear_predictor(Z, beta)
    e = np.exp(eta)
    S = _risk_moments(WrT, M, e)
    ll = 0.0
    for i in range(eta.shape[0]):
        ll += wrow[i] * eta[i]
    U = wz.copy()
    H = np.zeros((p, p))
    scale = np.zeros(p)
    for j in range(d):
        if wcol[j] == 0.0:
            continue
        s0 = S[j, 0]
        ll -= wcol[j] * np.log(s0)
        for k in range(p):
            mk = S[j, 1 + k] / s0
            U[k] -= wcol[j] * mk
            scale[k] += wcol[j] * S[j, 1 + p + k * p + k] / s0
            for l in range(p):
                H[k, l] += wcol[j] * (S[j, 1 + p + k * p + l] / s0 - mk * S[j, 1 + l] / s0)
    return ll, U, H, scale, S[:, 0].copy()


@njit(cache=True)
def _eval_efron(beta, Z, WrT, M, wcol, wrow, wz, ptr, rows, wts):
    n, p = Z.shape
    d = wcol.shape[0]
    q = M.shape[1]
    eta = _linear_predictor(Z, beta)
    e = np.exp(eta)
    S = _risk_moments(WrT, M, e)
    ll = 0.0
    for i in range(n):
        ll += wrow[i] * eta[i]
    U = wz.copy()
    H = np.zeros((p, p))
    scale = np.zeros(p)
    D = np.zeros(q)
    for j in range(d):
        m = ptr[j + 1] - ptr[j]
        if m == 0:
            continue
        D[:] = 0.0
        for r in range(ptr[j], ptr[j + 1]):
            i = rows[r]
            u = wts[r] * e[i]
            for c in range(q):
                D[c] += u * M[i, c]
        mw = wcol[j] / m
        for r in range(m):
            f = r / m
            den = S[j, 0] - f * D[0]
            ll -= mw * np.log(den)
            for k in range(p):
                mk = (S[j, 1 + k] - f * D[1 + k]) / den
                U[k] -= mw * mk
                scale[k] += mw * (S[j, 1 + p + k * p + k] - f * D[1 + p + k * p + k]) / den
                for l in range(p):
                    ml = (S[j, 1 + l] - f * D[1 + l]) / den
                    H[k, l] += mw * ((S[j, 1 + p + k * p + l] - f * D[1 + p + k * p + l]) / den - mk * ml)
    return ll, U, H, scale, S[:, 0].copy()


@njit(cache=True)
def dense_cox_newton(w, Z, beta0, efron, tol, max_iter, max_halving):
    """Maximise the weighted partial likelihood of the expanded design.

    Row ``(i, j)`` of the expanded design has time ``t_j``, weight ``w[i, j]``
    and covariate ``Z[i]``; risk sets run from the origin. Returns
    ``(beta, lam, loglik, score_norm, iterations, status)`` where ``lam`` is
    the Breslow jump at every column evaluated at the final ``beta`` and
    ``score_norm`` is the max-norm of the score divided by the total weight.
    """
    n, d = w.shape
    p = Z.shape[1]
    Wr = np.empty((n, d))
    for i in range(n):
        acc = 0.0
        for j in range(d - 1, -1, -1):
            acc += w[i, j]
            Wr[i, j] = acc
    WrT = np.ascontiguousarray(Wr.T)
    wcol = np.zeros(d)
    for i in range(n):
        for j in range(d):
            wcol[j] += w[i, j]
    wrow = Wr[:, 0].copy()
    total = 0.0
    for j in range(d):
        total += wcol[j]
    wz = np.zeros(p)
    for i in range(n):
        for k in range(p):
            wz[k] += wrow[i] * Z[i, k]
    M = _moment_design(Z)

    # tied sets per column, for the Efron variant
    cnt = 0
    for i in range(n):
        for j in range(d):
            if w[i, j] > 0.0:
                cnt += 1
    ptr = np.zeros(d + 1, dtype=np.int64)
    rows = np.empty(cnt, dtype=np.int64)
    wts = np.empty(cnt)
    if efron:
        for j in range(d):
            c = 0
            for i in range(n):
                if w[i, j] > 0.0:
                    c += 1
            ptr[j + 1] = ptr[j] + c
        fill = ptr[:-1].copy()
        for i in range(n):
            for j in range(d):
                if w[i, j] > 0.0:
                    rows[fill[j]] = i
                    wts[fill[j]] = w[i, j]
                    fill[j] += 1

    beta = beta0.copy()
    if efron:
        ll, U, H, scale, S0 = _eval_efron(beta, Z, WrT, M, wcol, wrow, wz, ptr, rows, wts)
    else:
        ll, U, H, scale, S0 = _eval_breslow(beta, Z, WrT, M, wcol, wrow, wz)
    status = MAX_ITER
    it = 0
    while True:
        snorm = np.max(np.abs(U)) / total
        if snorm < tol:
            status = CONVERGED if _chol_solve(H, U, scale)[1] else SINGULAR
            break
        if it >= max_iter:
            break
        step, ok = _chol_solve(H, U, scale)
        if not ok:
            status = SINGULAR
            break
        t = 1.0
        accepted = False
        for h in range(max_halving + 1):
            nb = beta + t * step
            if efron:
                ll2, U2, H2, sc2, S02 = _eval_efron(nb, Z, WrT, M, wcol, wrow, wz, ptr, rows, wts)
            else:
                ll2, U2, H2, sc2, S02 = _eval_breslow(nb, Z, WrT, M, wcol, wrow, wz)
            if ll2 >= ll - 1e-12 * abs(ll):
                accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted:
            status = STALLED
            break
        beta = nb
        ll, U, H, scale, S0 = ll2, U2, H2, sc2, S02

    snorm = np.max(np.abs(U)) / total
    # Breslow jumps at the final beta; the Efron variant still uses this form
    eta = _linear_predictor(Z, beta)
    S0b = WrT @ np.exp(eta)
    lam = np.empty(d)
    for j in range(d):
        lam[j] = wcol[j] / S0b[j] if S0b[j] > 0.0 else 0.0
    return beta, lam, ll, snorm, it, status


@njit(cache=True)
def self_consistency(J, tol, max_iter):
    """Fixed point of the doubly truncated NPMLE equations.

    ``J[i, j] = 1`` when window ``j`` covers event ``i``. Returns
    ``(pi, f, k, iterations, converged)``.
    """
    n, m = J.shape
    k = np.full(m, 1.0 / m)
    pi = J @ k
    f = np.empty(n)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        s = 0.0
        for i in range(n):
            f[i] = 1.0 / pi[i]
            s += f[i]
        f /= s
        mj = f @ J
        s = 0.0
        for j in range(m):
            k[j] = 1.0 / mj[j]
            s += k[j]
        k /= s
        new = J @ k
        diff = np.max(np.abs(new - pi))
        pi = new
        if diff < tol:
            converged = True
            break
    s = 0.0
    for i in range(n):
        f[i] = 1.0 / pi[i]
        s += f[i]
    f /= s
    return pi, f, k, it, converged


@njit(cache=True)
def _sgn(a, b):
    # sign(a - b) with inf - inf treated as a tie
    if a > b:
        return 1.0
    if a < b:
        return -1.0
    return 0.0


@njit(cache=True)
def kendall_sums(T, L, R):
    """Concordance sums over comparable pairs.

    Returns ``(sum_L, sum_R, n_comparable)``.
    """
    n = T.shape[0]
    sL = 0.0
    sR = 0.0
    cnt = 0
    for i in range(n):
        for k in range(i + 1, n):
            lo_t = min(T[i], T[k])
            hi_t = max(T[i], T[k])
            if max(L[i], L[k]) <= lo_t and min(R[i], R[k]) >= hi_t:
                cnt += 1
                st = _sgn(T[i], T[k])
                sL += st * _sgn(L[i], L[k])
                sR += st * _sgn(R[i], R[k])
    return sL, sR, cnt


@njit(cache=True)
def swap_chain(T, L, R, perm, ii, kk):
    """Metropolis chain over observable window assignments.

    Subject ``s`` currently holds window ``perm[s]``. Step ``m`` proposes to
    swap the windows of subjects ``ii[m]`` and ``kk[m]`` and accepts when
    both stay observable. ``perm`` is updated in place; returns the number of
    accepted swaps.
    """
    acc = 0
    for m in range(ii.shape[0]):
        a = ii[m]
        b = kk[m]
        if a == b:
            continue
        wa = perm[a]
        wb = perm[b]
        if L[wb] <= T[a] and T[a] <= R[wb] and L[wa] <= T[b] and T[b] <= R[wa]:
            perm[a] = wb
            perm[b] = wa
            acc += 1
    return acc
