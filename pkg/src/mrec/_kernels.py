"""Compiled inner loops for the entropic solvers.

Small subproblems dominate a recursive run, so per-iteration interpreter
overhead matters more than flop count; these loops are jitted with numba.
"""

import numba as nb
import numpy as np

_jit = nb.njit(cache=True, error_model="numpy")


@_jit
def fill_kernel(C, f, g, eps, K):
    n, m = C.shape
    for i in range(n):
        for j in range(m):
            K[i, j] = np.exp((f[i] + g[j] - C[i, j]) / eps)


@_jit
def update_f(C, g, log_mu, eps, f):
    """Exact log-domain row update: rows of the plan sum to ``mu``."""
    n, m = C.shape
    for i in range(n):
        mx = -np.inf
        for j in range(m):
            a = (g[j] - C[i, j]) / eps
            if a > mx:
                mx = a
        s = 0.0
        for j in range(m):
            s += np.exp((g[j] - C[i, j]) / eps - mx)
        f[i] = eps * (log_mu[i] - mx - np.log(s))


@_jit
def update_g(C, f, log_nu, eps, g):
    n, m = C.shape
    mx = np.full(m, -np.inf)
    for i in range(n):
        for j in range(m):
            a = (f[i] - C[i, j]) / eps
            if a > mx[j]:
                mx[j] = a
    s = np.zeros(m)
    for i in range(n):
        for j in range(m):
            s[j] += np.exp((f[i] - C[i, j]) / eps - mx[j])
    for j in range(m):
        g[j] = eps * (log_nu[j] - mx[j] - np.log(s[j]))


@_jit
def c_transform_init(C, f, g):
    n, m = C.shape
    for i in range(n):
        best = np.inf
        for j in range(m):
            if C[i, j] < best:
                best = C[i, j]
        f[i] = best
    for j in range(m):
        g[j] = np.inf
    for i in range(n):
        for j in range(m):
            d = C[i, j] - f[i]
            if d < g[j]:
                g[j] = d


@_jit
def sinkhorn_core(C, mu, nu, eps, max_iter, tol, f, g, check_every, absorb):
    """Stabilized Sinkhorn scaling on a normalized cost.

    ``f, g`` hold initial log-potentials and are updated in place. Returns
    the plan, the iteration count and the final column residual.
    """
    n, m = C.shape
    log_mu = np.log(mu)
    log_nu = np.log(nu)
    K = np.empty((n, m))
    fill_kernel(C, f, g, eps, K)
    u = np.ones(n)
    v = np.ones(m)
    un = np.empty(n)
    vn = np.empty(m)
    err = np.inf
    it = 0
    while it < max_iter:
        it += 1
        kt = np.dot(u, K)
        bad = False
        for j in range(m):
            vn[j] = nu[j] / kt[j]
            if not (vn[j] > 0.0 and vn[j] < np.inf):
                bad = True
        if not bad:
            kv = np.dot(K, vn)
            for i in range(n):
                un[i] = mu[i] / kv[i]
                if not (un[i] > 0.0 and un[i] < np.inf):
                    bad = True
        if bad:
            # scaling broke down (underflow); fall back to exact log-domain steps
            for i in range(n):
                f[i] += eps * np.log(u[i])
                u[i] = 1.0
            for j in range(m):
                g[j] += eps * np.log(v[j])
                v[j] = 1.0
            update_g(C, f, log_nu, eps, g)
            update_f(C, g, log_mu, eps, f)
            fill_kernel(C, f, g, eps, K)
        else:
            big = False
            for i in range(n):
                u[i] = un[i]
                if abs(np.log(u[i])) > absorb:
                    big = True
            for j in range(m):
                v[j] = vn[j]
                if abs(np.log(v[j])) > absorb:
                    big = True
            if big:
                for i in range(n):
                    f[i] += eps * np.log(u[i])
                    u[i] = 1.0
                for j in range(m):
                    g[j] += eps * np.log(v[j])
                    v[j] = 1.0
                fill_kernel(C, f, g, eps, K)
        if it % check_every == 0 or it == max_iter:
            # rows are exact after the u-update; measure the columns
            kt = np.dot(u, K)
            err = 0.0
            for j in range(m):
                e = abs(v[j] * kt[j] - nu[j])
                if e > err:
                    err = e
            if err < tol:
                break
    P = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            P[i, j] = u[i] * K[i, j] * v[j]
    for i in range(n):
        f[i] += eps * np.log(u[i])
    for j in range(m):
        g[j] += eps * np.log(v[j])
    return P, it, err


@_jit
def round_to_polytope(P, mu, nu):
    n, m = P.shape
    for i in range(n):
        r = 0.0
        for j in range(m):
            r += P[i, j]
        if r > mu[i]:
            x = mu[i] / r
            for j in range(m):
                P[i, j] *= x
    c = np.zeros(m)
    for i in range(n):
        for j in range(m):
            c[j] += P[i, j]
    for j in range(m):
        if c[j] > nu[j]:
            y = nu[j] / c[j]
            for i in range(n):
                P[i, j] *= y
    er = mu - P.sum(axis=1)
    ec = nu - P.sum(axis=0)
    s = 0.0
    for i in range(n):
        if er[i] < 0.0:
            er[i] = 0.0
        s += er[i]
    for j in range(m):
        if ec[j] < 0.0:
            ec[j] = 0.0
    if s > 0.0:
        for i in range(n):
            for j in range(m):
                P[i, j] += er[i] * ec[j] / s


@_jit
def solve_ot(C, mu, nu, eps, max_iter, tol, g0, warm, check_every, absorb):
    """Normalize, solve and round one transport problem.

    Returns ``(P, f, g, iterations, converged)`` with potentials in cost units.
    """
    n, m = C.shape
    scale = 0.0
    for i in range(n):
        for j in range(m):
            a = abs(C[i, j])
            if a > scale:
                scale = a
    if scale == 0.0:
        scale = 1.0
    Cn = C / scale
    f = np.empty(n)
    g = np.empty(m)
    if warm:
        for j in range(m):
            g[j] = g0[j] / scale
        update_f(Cn, g, np.log(mu), eps, f)
    else:
        c_transform_init(Cn, f, g)
    P, it, err = sinkhorn_core(Cn, mu, nu, eps, max_iter, tol, f, g, check_every, absorb)
    round_to_polytope(P, mu, nu)
    return P, f * scale, g * scale, it, err < tol


@_jit
def gw_linear_cost(DX, DX2, DY, DY2, DYt, P, p):
    """``L[i, j] = sum_{k, l} |DX[i, k] - DY[j, l]|**p * P[k, l]`` for p in {1, 2}."""
    n, m = P.shape
    if p == 2:
        r = P.sum(axis=1)
        c = P.sum(axis=0)
        a = DX2 @ r
        b = DY2 @ c
        cross = DX @ P @ DYt
        L = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                val = a[i] + b[j] - 2.0 * cross[i, j]
                L[i, j] = val if val > 0.0 else 0.0
        return L
    L = np.zeros((n, m))
    for k in range(n):
        for l in range(m):
            w = P[k, l]
            if w == 0.0:
                continue
            for i in range(n):
                dx = DX[i, k]
                for j in range(m):
                    L[i, j] += abs(dx - DY[j, l]) * w
    return L


@_jit
def gw_loop(DX, DY, M, alpha, mu, nu, p, eps, max_outer, max_inner, tol, check_every, absorb):
    """Fixed-point iteration for (fused) entropic Gromov-Wasserstein.

    Returns ``(P, outer_iterations, outer_converged, inner_converged)``.
    """
    n = DX.shape[0]
    m = DY.shape[0]
    DX = np.ascontiguousarray(DX)
    DY = np.ascontiguousarray(DY)
    DYt = np.ascontiguousarray(DY.T)
    DX2 = DX * DX
    DY2 = DY * DY
    P = np.outer(mu, nu)
    g = np.zeros(m)
    warm = False
    outer_ok = False
    inner_ok = False
    it = 0
    while it < max_outer:
        it += 1
        L = gw_linear_cost(DX, DX2, DY, DY2, DYt, P, p)
        if alpha > 0.0:
            L = (1.0 - alpha) * L + alpha * M
        Pn, f, g, _, inner_ok = solve_ot(
            L, mu, nu, eps, max_inner, tol, g, warm, check_every, absorb
        )
        warm = True
        change = np.sqrt(((Pn - P) ** 2).sum())
        P = Pn
        if change < tol:
            outer_ok = True
            break
    return P, it, outer_ok, inner_ok
