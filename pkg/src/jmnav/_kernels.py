"""Compiled inner loop of the filter bank.

Branch states are stored as stacked arrays so that one bank step is a
single call. The algebra mirrors :mod:`jmnav.eskf`; status codes are
returned instead of raising because exceptions inside compiled code cannot
carry the branch context.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_BLOWUP = 1
STATUS_SINGULAR = 2
STATUS_DEAD = 3

BLOWUP_LIMIT = 1e12
RCOND_LIMIT = 1e-14
DEAD_LOGW = -700.0
LOG_2PI = np.log(2.0 * np.pi)


@njit(cache=True)
def _dcm(q):
    n = np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    w, x, y, z = q[0] / n, q[1] / n, q[2] / n, q[3] / n
    C = np.empty((3, 3))
    C[0, 0] = 1 - 2 * (y * y + z * z)
    C[0, 1] = 2 * (x * y - w * z)
    C[0, 2] = 2 * (x * z + w * y)
    C[1, 0] = 2 * (x * y + w * z)
    C[1, 1] = 1 - 2 * (x * x + z * z)
    C[1, 2] = 2 * (y * z - w * x)
    C[2, 0] = 2 * (x * z - w * y)
    C[2, 1] = 2 * (y * z + w * x)
    C[2, 2] = 1 - 2 * (x * x + y * y)
    return C


@njit(cache=True)
def _qmul(p, q):
    out = np.empty(4)
    out[0] = p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3]
    out[1] = p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2]
    out[2] = p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1]
    out[3] = p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0]
    return out


@njit(cache=True)
def _expq(rv):
    angle = np.sqrt(rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2])
    out = np.empty(4)
    half = 0.5 * angle
    k = np.sin(half) / angle
    out[0] = np.cos(half)
    out[1] = k * rv[0]
    out[2] = k * rv[1]
    out[3] = k * rv[2]
    return out


@njit(cache=True)
def _normalize(q):
    n = np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return q / n


@njit(cache=True)
def _mm(A, B):
    n, k = A.shape
    m = B.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for p in range(k):
            a = A[i, p]
            if a != 0.0:
                for j in range(m):
                    out[i, j] += a * B[p, j]
    return out


@njit(cache=True)
def _mmt(A, B):
    # A @ B.T
    n, k = A.shape
    m = B.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += A[i, p] * B[j, p]
            out[i, j] = acc
    return out


@njit(cache=True)
def _mv(A, x):
    n, k = A.shape
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for p in range(k):
            acc += A[i, p] * x[p]
        out[i] = acc
    return out


@njit(cache=True)
def _predict(r, v, q, xi, P, s, w, dt, g, var_s, var_w, assign):
    """One mechanization step with covariance propagation, in place.

    ``F = I + E`` with ``E`` non-zero only in the position-velocity and
    velocity-attitude blocks (and the height-assignment row), so ``F P F^T``
    is formed from row and column operations instead of dense products.
    """
    d = P.shape[0]
    C = _dcm(q)
    f = _mv(C, s)
    rz = r[2]
    for k in range(3):
        r[k] = r[k] + dt * v[k]
        v[k] = v[k] + dt * (f[k] + g[k])
    rv = dt * w
    if np.sqrt(rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2]) >= 1e-12:
        q[:] = _normalize(_qmul(q, _expq(rv)))
    # M = -dt * skew(f)
    M = np.zeros((3, 3))
    M[0, 1] = dt * f[2]
    M[0, 2] = -dt * f[1]
    M[1, 0] = -dt * f[2]
    M[1, 2] = dt * f[0]
    M[2, 0] = dt * f[1]
    M[2, 1] = -dt * f[0]
    # FP = F @ P (row operations)
    FP = P.copy()
    for c in range(d):
        for k in range(3):
            FP[k, c] = P[k, c] + dt * P[3 + k, c]
            FP[3 + k, c] = P[3 + k, c] + M[k, 0] * P[6, c] + M[k, 1] * P[7, c] + M[k, 2] * P[8, c]
    assign_row = d == 10 and assign
    if assign_row:
        for c in range(d):
            FP[9, c] = P[2, c]
    # Pn = FP @ F^T (column operations)
    Pn = FP.copy()
    for a in range(d):
        for k in range(3):
            Pn[a, k] = FP[a, k] + dt * FP[a, 3 + k]
            Pn[a, 3 + k] = FP[a, 3 + k] + M[k, 0] * FP[a, 6] + M[k, 1] * FP[a, 7] + M[k, 2] * FP[a, 8]
        if assign_row:
            Pn[a, 9] = FP[a, 2]
    xi_new = rz if assign_row else xi
    qv = dt * dt * var_s
    qa = dt * dt * var_w
    for k in range(3):
        Pn[3 + k, 3 + k] += qv
        Pn[6 + k, 6 + k] += qa
    for a in range(d):
        for b in range(a + 1, d):
            m = 0.5 * (Pn[a, b] + Pn[b, a])
            Pn[a, b] = m
            Pn[b, a] = m
    P[:, :] = Pn
    return xi_new


@njit(cache=True)
def _cholesky(S):
    m = S.shape[0]
    Lc = np.zeros((m, m))
    for j in range(m):
        acc = S[j, j]
        for k in range(j):
            acc -= Lc[j, k] * Lc[j, k]
        if acc <= 0.0:
            return Lc, False
        Lc[j, j] = np.sqrt(acc)
        for i in range(j + 1, m):
            acc = S[i, j]
            for k in range(j):
                acc -= Lc[i, k] * Lc[j, k]
            Lc[i, j] = acc / Lc[j, j]
    return Lc, True


@njit(cache=True)
def _forward(Lc, b):
    m = Lc.shape[0]
    x = np.empty_like(b)
    for i in range(m):
        acc = b[i]
        for k in range(i):
            acc -= Lc[i, k] * x[k]
        x[i] = acc / Lc[i, i]
    return x


@njit(cache=True)
def _backward(Lc, b):
    # solves Lc^T x = b
    m = Lc.shape[0]
    x = np.empty_like(b)
    for i in range(m - 1, -1, -1):
        acc = b[i]
        for k in range(i + 1, m):
            acc -= Lc[k, i] * x[k]
        x[i] = acc / Lc[i, i]
    return x


@njit(cache=True)
def _constraint(kind, r, v, q, xi, s, g, d):
    """State-coupled rows of the stationarity constraint.

    The angular-rate rows have a zero Jacobian and a diagonal covariance,
    so they decouple exactly from the state update; they are scored
    separately by :func:`_rate_loglik`. The remaining rows are velocity,
    gravity-compensated specific force and, for kind 2, the height row.
    """
    m = 7 if kind == 2 else 6
    z = np.zeros(m)
    H = np.zeros((m, d))
    C = _dcm(q)
    f = _mv(C, s)
    for k in range(3):
        z[k] = -v[k]
        z[3 + k] = -(f[k] + g[k])
        H[k, 3 + k] = 1.0
    # -skew(f) on the attitude error
    H[3, 7] = f[2]
    H[3, 8] = -f[1]
    H[4, 6] = -f[2]
    H[4, 8] = f[0]
    H[5, 6] = f[1]
    H[5, 7] = -f[0]
    if kind == 2:
        z[6] = xi - r[2]
        H[6, 2] = 1.0
        H[6, 9] = -1.0
    return z, H


@njit(cache=True)
def _rate_loglik(w, var_w):
    acc = 0.0
    for k in range(3):
        acc += LOG_2PI + np.log(var_w) + w[k] * w[k] / var_w
    return -0.5 * acc


@njit(cache=True)
def _reduced_rdiag(kind, rd):
    # drop the angular-rate rows (3:6) from a full covariance diagonal
    m = 7 if kind == 2 else 6
    out = np.empty(m)
    for k in range(3):
        out[k] = rd[k]
        out[3 + k] = rd[6 + k]
    if kind == 2:
        out[6] = rd[9]
    return out


@njit(cache=True)
def _update(r, v, q, xi, P, z, H, PHt, HPHt, rd):
    """Kalman update in place given precomputed ``P H^T`` and ``H P H^T``.

    Returns ``(loglik, xi, ok)``.
    """
    m = z.size
    d = P.shape[0]
    S = HPHt.copy()
    for a in range(m):
        S[a, a] += rd[a]
    Lc, ok = _cholesky(S)
    if not ok:
        return 0.0, xi, False
    dmin = Lc[0, 0]
    dmax = Lc[0, 0]
    logdet = 0.0
    for a in range(m):
        dmin = min(dmin, Lc[a, a])
        dmax = max(dmax, Lc[a, a])
        logdet += 2.0 * np.log(Lc[a, a])
    if (dmin / dmax) ** 2 < RCOND_LIMIT:
        return 0.0, xi, False
    alpha = _forward(Lc, z)
    quad = 0.0
    for a in range(m):
        quad += alpha[a] * alpha[a]
    loglik = -0.5 * (m * LOG_2PI + logdet + quad)
    # K = P H^T S^-1 by substitution on every row of P H^T at once
    K = PHt.copy()
    for c in range(d):
        for i in range(m):
            acc = K[c, i]
            for k in range(i):
                acc -= Lc[i, k] * K[c, k]
            K[c, i] = acc / Lc[i, i]
        for i in range(m - 1, -1, -1):
            acc = K[c, i]
            for k in range(i + 1, m):
                acc -= Lc[k, i] * K[c, k]
            K[c, i] = acc / Lc[i, i]
    # P - K (P H^T)^T, symmetrized, and the error-state estimate K z
    dx0 = 0.0
    for a in range(d):
        acc = 0.0
        for i in range(m):
            acc += K[a, i] * z[i]
        if a < 3:
            r[a] += acc
        elif a < 6:
            v[a - 3] += acc
        elif a == 9:
            dx0 = acc
        for b in range(a, d):
            t = 0.0
            for i in range(m):
                t += K[a, i] * PHt[b, i] + K[b, i] * PHt[a, i]
            val = 0.5 * ((P[a, b] + P[b, a]) - t)
            P[a, b] = val
            P[b, a] = val
    th = np.empty(3)
    for k in range(3):
        acc = 0.0
        for i in range(m):
            acc += K[6 + k, i] * z[i]
        th[k] = acc
    if np.sqrt(th[0] * th[0] + th[1] * th[1] + th[2] * th[2]) >= 1e-12:
        q[:] = _normalize(_qmul(_expq(th), q))
    if d == 10:
        xi = xi + dx0
    return loglik, xi, True


@njit(cache=True)
def bank_step(r, v, q, xi, P, mode, logw, dlogw, s, w, dt, g, var_s, var_w, has_xi, kinds, rdiag, logpi, max_leaves):
    """Expand every branch over its admissible next modes, weight, normalize and prune.

    Returns ``(r, v, q, xi, P, mode, logw, dlogw, parent, lse, dlse, status, where)``
    where ``lse`` is the log predictive likelihood of the sample and
    ``where`` identifies the failing branch for a non-zero ``status``.

    ``dlogw`` holds the derivative of each log-weight with respect to the
    entries of ``logpi`` (flattened row-major, one column per entry); pass
    an array with zero columns to skip the tangent. ``dlse`` is the
    derivative of ``lse``.
    """
    n = r.shape[0]
    d = P.shape[1]
    L = kinds.size
    empty = np.zeros(0, np.int64)
    G = dlogw.shape[1]
    dlse = np.zeros(G)

    # predict every parent once; children of one parent share the prediction
    pr = r.copy()
    pv = v.copy()
    pq = q.copy()
    pxi = xi.copy()
    pP = P.copy()
    for i in range(n):
        assign = has_xi and mode[i] != 0
        pxi[i] = _predict(pr[i], pv[i], pq[i], xi[i], pP[i], s, w, dt, g, var_s, var_w, assign)
        for a in range(d):
            if not (pP[i, a, a] <= BLOWUP_LIMIT):
                return r, v, q, xi, P, mode, logw, dlogw, empty, 0.0, dlse, STATUS_BLOWUP, i

    nc = 0
    for i in range(n):
        for j in range(L):
            if logpi[j, mode[i]] > -np.inf:
                nc += 1

    cr = np.empty((nc, 3))
    cv = np.empty((nc, 3))
    cq = np.empty((nc, 4))
    cxi = np.empty(nc)
    cP = np.empty((nc, d, d))
    cmode = np.empty(nc, np.int64)
    clogw = np.empty(nc)
    cparent = np.empty(nc, np.int64)
    cd = np.zeros((nc, G))

    # likelihood terms that do not depend on the branch
    ll_rate = np.zeros(L)
    ll_flat = np.zeros(L)
    red = np.zeros((L, 10))
    for j in range(L):
        if kinds[j] == 0:
            for a in range(9):
                ll_flat[j] -= 0.5 * (LOG_2PI + np.log(rdiag[j, a]))
        else:
            ll_rate[j] = _rate_loglik(w, rdiag[j, 3])
            rr = _reduced_rdiag(kinds[j], rdiag[j])
            red[j, : rr.size] = rr

    c = 0
    for i in range(n):
        have1 = False
        have2 = False
        z1 = np.zeros(0)
        H1 = np.zeros((0, d))
        PHt1 = np.zeros((d, 0))
        HPHt1 = np.zeros((0, 0))
        z2 = z1
        H2 = H1
        PHt2 = PHt1
        HPHt2 = HPHt1
        for j in range(L):
            lp = logpi[j, mode[i]]
            if lp == -np.inf:
                continue
            cr[c] = pr[i]
            cv[c] = pv[i]
            cq[c] = pq[i]
            cxi[c] = pxi[i]
            cP[c] = pP[i]
            kind = kinds[j]
            if kind == 0:
                ll = ll_flat[j]
            else:
                if kind == 1:
                    if not have1:
                        z1, H1 = _constraint(1, pr[i], pv[i], pq[i], pxi[i], s, g, d)
                        PHt1 = _mmt(pP[i], H1)
                        HPHt1 = _mm(H1, PHt1)
                        have1 = True
                    z, H, PHt, HPHt = z1, H1, PHt1, HPHt1
                else:
                    if not have2:
                        z2, H2 = _constraint(2, pr[i], pv[i], pq[i], pxi[i], s, g, d)
                        PHt2 = _mmt(pP[i], H2)
                        HPHt2 = _mm(H2, PHt2)
                        have2 = True
                    z, H, PHt, HPHt = z2, H2, PHt2, HPHt2
                ll, xnew, ok = _update(cr[c], cv[c], cq[c], cxi[c], cP[c], z, H, PHt, HPHt, red[j, : z.size])
                if not ok:
                    return r, v, q, xi, P, mode, logw, dlogw, empty, 0.0, dlse, STATUS_SINGULAR, c
                ll += ll_rate[j]
                cxi[c] = xnew
            cmode[c] = j
            clogw[c] = logw[i] + lp + ll
            cparent[c] = i
            if G > 0:
                cd[c] = dlogw[i]
                cd[c, j * L + mode[i]] += 1.0
            c += 1

    mx = clogw.max()
    if not (mx >= DEAD_LOGW):
        return r, v, q, xi, P, mode, logw, dlogw, empty, mx, dlse, STATUS_DEAD, -1
    acc = 0.0
    for k in range(nc):
        acc += np.exp(clogw[k] - mx)
    lse = mx + np.log(acc)
    clogw -= lse
    if G > 0:
        for k in range(nc):
            dlse += np.exp(clogw[k]) * cd[k]
        for k in range(nc):
            cd[k] -= dlse

    if max_leaves > 0 and nc > max_leaves:
        # primary: weight descending; then lower mode; then insertion order
        by_mode = np.argsort(cmode, kind="mergesort")
        order = by_mode[np.argsort(-clogw[by_mode], kind="mergesort")]
        keep = np.sort(order[:max_leaves])
        cr = cr[keep]
        cv = cv[keep]
        cq = cq[keep]
        cxi = cxi[keep]
        cP = cP[keep]
        cmode = cmode[keep]
        cparent = cparent[keep]
        cd = cd[keep]
        kw = clogw[keep]
        mk = kw.max()
        acc = 0.0
        for k in range(kw.size):
            acc += np.exp(kw[k] - mk)
        clogw = kw - (mk + np.log(acc))
        if G > 0:
            dk = np.zeros(G)
            for k in range(kw.size):
                dk += np.exp(clogw[k]) * cd[k]
            for k in range(kw.size):
                cd[k] -= dk

    return cr, cv, cq, cxi, cP, cmode, clogw, cd, cparent, lse, dlse, STATUS_OK, -1


@njit(cache=True)
def run_sequence(r, v, q, xi, P, mode, logw, data, dt0, g, var_s, var_w, has_xi, kinds, rdiag, logpi, max_leaves, tangent):
    """Run the bank over ``data`` rows ``t, sx, sy, sz, wx, wy, wz``.

    The first row is taken to be the sample of the prior and is skipped.
    Returns per-sample ``lse`` values, per-sample mode posteriors, the
    derivative of the summed ``lse`` with respect to ``logpi`` (zeros unless
    ``tangent``), a status code and the failing sample.
    """
    N = data.shape[0]
    L = kinds.size
    G = L * L if tangent else 0
    dlogw = np.zeros((mode.size, G))
    grad = np.zeros(L * L)
    lse_out = np.zeros(N)
    post = np.zeros((N, L))
    for i in range(mode.size):
        post[0, mode[i]] += np.exp(logw[i])
    for k in range(1, N):
        dt = data[k, 0] - data[k - 1, 0]
        if not (dt > 0.0 and dt <= 0.1):
            dt = dt0
        s = data[k, 1:4].copy()
        w = data[k, 4:7].copy()
        r, v, q, xi, P, mode, logw, dlogw, parent, lse, dlse, status, where = bank_step(
            r, v, q, xi, P, mode, logw, dlogw, s, w, dt, g, var_s, var_w, has_xi, kinds, rdiag, logpi, max_leaves
        )
        if status != STATUS_OK:
            return lse_out, post, grad.reshape((L, L)), status, k, where
        lse_out[k] = lse
        if tangent:
            grad += dlse
        for i in range(mode.size):
            post[k, mode[i]] += np.exp(logw[i])
    return lse_out, post, grad.reshape((L, L)), STATUS_OK, np.int64(-1), np.int64(-1)
