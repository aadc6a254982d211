"""Matching subroutines: entropic (Gromov-)Wasserstein solvers and rounding.

All solvers return a :class:`MatchResult` whose coupling satisfies the
prescribed marginals to floating point accuracy, even when the iteration
budget runs out before the tolerance is met (``converged`` is then False).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels
from .metric import MetricSpace

# Scalings beyond exp(_ABSORB) are folded into the log-potentials.
_ABSORB = 50.0
_CHECK_EVERY = 10
# Lexicographic tie refinement of assignments is exact but costs n extra solves.
_LEX_REFINE_MAX = 16


class TransportError(ValueError):
    pass


@dataclass
class Coupling:
    matrix: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def residual(self) -> float:
        """Largest absolute deviation of a row or column sum from its marginal."""
        r = np.abs(self.matrix.sum(axis=1) - self.mu).max()
        c = np.abs(self.matrix.sum(axis=0) - self.nu).max()
        return float(max(r, c))


@dataclass
class MatchResult:
    coupling: Coupling
    cost: float
    iterations: int
    converged: bool
    # (f, g) dual potentials in cost units, reused to warm start repeated solves
    dual: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)


@dataclass
class Matching:
    """A total map from X positions to Y positions."""

    forward: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.forward = np.asarray(self.forward, dtype=np.intp)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.forward)


def _check_marginal(w, n: int, name: str) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.shape[0] != n:
        raise TransportError(f"{name} has length {w.shape[0]}, expected {n}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise TransportError(f"{name} must be strictly positive")
    if abs(w.sum() - 1.0) > 1e-9:
        raise TransportError(f"{name} sums to {w.sum():.12g}, expected 1")
    return w


def _check_cost(cost) -> np.ndarray:
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise TransportError(f"cost must be a matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise TransportError("cost has non-finite entries")
    return c


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def sinkhorn(
    cost,
    mu,
    nu,
    epsilon: float,
    max_iter: int = 1000,
    tol: float = 1e-6,
    *,
    init: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> MatchResult:
    """Entropic optimal transport.

    The cost is divided by its largest absolute entry before the kernel is
    formed, so ``epsilon`` is relative to the cost scale. ``init`` takes dual
    potentials from an earlier call (in cost units) as a warm start.
    """
    C = _check_cost(cost)
    n, m = C.shape
    mu = _check_marginal(mu, n, "mu")
    nu = _check_marginal(nu, m, "nu")
    if not epsilon > 0:
        raise TransportError(f"epsilon must be positive, got {epsilon}")
    if n == 1 or m == 1:
        # the product measure is the only coupling
        P = np.outer(mu, nu)
        return MatchResult(Coupling(P, mu, nu), float((P * C).sum()), 0, True)
    warm = init is not None
    g0 = np.asarray(init[1], dtype=np.float64) if warm else np.zeros(m)
    P, f, g, it, ok = _kernels.solve_ot(
        C, mu, nu, float(epsilon), int(max_iter), float(tol), g0, warm, _CHECK_EVERY, _ABSORB
    )
    return MatchResult(Coupling(P, mu, nu), float((P * C).sum()), int(it), bool(ok), dual=(f, g))


def gw_linear_cost(DX: np.ndarray, DY: np.ndarray, P: np.ndarray, p: int = 2) -> np.ndarray:
    """``L[i, j] = sum_{i', j'} |DX[i, i'] - DY[j, j']|**p * P[i', j']``."""
    if p == 2:
        r = P.sum(axis=1)
        c = P.sum(axis=0)
        L = ((DX * DX) @ r)[:, None] + ((DY * DY) @ c)[None, :] - 2.0 * (DX @ P @ DY.T)
        return np.maximum(L, 0.0)
    if p == 1:
        n, m = P.shape
        L = np.zeros((n, m))
        for k in range(n):
            row = P[k]
            if not row.any():
                continue
            L += np.abs(DX[:, k][:, None, None] - DY[None, :, :]) @ row
        return L
    raise TransportError(f"exponent p must be 1 or 2, got {p}")


def gw_objective(DX, DY, P, p: int = 2) -> float:
    """``(sum Gamma^p dP dP)^(1/p)`` for a coupling ``P``."""
    val = float((gw_linear_cost(DX, DY, P, p) * P).sum())
    return max(val, 0.0) ** (1.0 / p)


def fused_match(
    DX,
    DY,
    linear_cost,
    alpha: float,
    mu,
    nu,
    p: int = 2,
    epsilon: float = 1e-2,
    max_outer: int = 50,
    max_inner: int = 1000,
    tol: float = 1e-6,
) -> MatchResult:
    """Fused Gromov-Wasserstein matching.

    Alternates between linearizing the quadratic objective at the current
    coupling and solving the resulting entropic transport problem. The
    linearized cost is ``(1 - alpha) * L(P) + alpha * linear_cost``; with
    ``alpha = 0`` this is plain entropic Gromov-Wasserstein and with
    ``alpha = 1`` a single Sinkhorn solve on ``linear_cost``.

    The reported cost is ``(1 - alpha) * gw_objective + alpha * <linear_cost, P>``
    and excludes the entropy term.
    """
    DX = _check_cost(DX)
    DY = _check_cost(DY)
    n, m = DX.shape[0], DY.shape[0]
    if DX.shape != (n, n) or DY.shape != (m, m):
        raise TransportError("distance matrices must be square")
    if p not in (1, 2):
        raise TransportError(f"exponent p must be 1 or 2, got {p}")
    if not 0.0 <= alpha <= 1.0:
        raise TransportError(f"alpha must lie in [0, 1], got {alpha}")
    mu = _check_marginal(mu, n, "mu")
    nu = _check_marginal(nu, m, "nu")
    M = None
    if alpha > 0:
        M = _check_cost(linear_cost)
        if M.shape != (n, m):
            raise TransportError(f"linear cost has shape {M.shape}, expected {(n, m)}")
    if alpha == 1.0:
        return sinkhorn(M, mu, nu, epsilon, max_inner, tol)
    if not epsilon > 0:
        raise TransportError(f"epsilon must be positive, got {epsilon}")

    if n == 1 or m == 1:
        P = np.outer(mu, nu)
        outer_ok, inner_ok, it = True, True, 0
    else:
        P, it, outer_ok, inner_ok = _kernels.gw_loop(
            DX, DY, M if M is not None else np.zeros((1, 1)), float(alpha), mu, nu, int(p),
            float(epsilon), int(max_outer), int(max_inner), float(tol), _CHECK_EVERY, _ABSORB,
        )
    cost = (1.0 - alpha) * gw_objective(DX, DY, P, p)
    if M is not None:
        cost += alpha * float((M * P).sum())
    return MatchResult(Coupling(P, mu, nu), cost, int(it), bool(outer_ok and inner_ok))


def entropic_gw(
    DX,
    DY,
    mu,
    nu,
    p: int = 2,
    epsilon: float = 1e-2,
    max_outer: int = 50,
    max_inner: int = 1000,
    tol: float = 1e-6,
) -> MatchResult:
    """Entropic Gromov-Wasserstein matching, started from the product coupling."""
    return fused_match(DX, DY, None, 0.0, mu, nu, p, epsilon, max_outer, max_inner, tol)


def _assignment(W: np.ndarray) -> np.ndarray:
    """Maximum-weight assignment of rows to columns (requires rows <= cols).

    On small problems ties resolve to the lexicographically smallest map.
    """
    n, m = W.shape
    rows, cols = linear_sum_assignment(W, maximize=True)
    perm = np.empty(n, dtype=np.intp)
    perm[rows] = cols
    if n > _LEX_REFINE_MAX:
        return perm
    best = W[rows, cols].sum()
    atol = 1e-12 * max(1.0, abs(best))
    fixed: List[int] = []
    free_cols = list(range(m))
    acc = 0.0
    for i in range(n):
        for j in free_cols:
            rest_cols = [c for c in free_cols if c != j]
            sub = W[i + 1 :][:, rest_cols]
            tail = 0.0
            if sub.shape[0]:
                r, c = linear_sum_assignment(sub, maximize=True)
                tail = sub[r, c].sum()
            if acc + W[i, j] + tail >= best - atol:
                fixed.append(j)
                acc += W[i, j]
                free_cols = rest_cols
                break
    return np.asarray(fixed, dtype=np.intp)


def round_to_matching(coupling, mode: str = "argmax") -> Matching:
    """Extract a hard matching from a coupling.

    ``argmax`` sends each row to its heaviest column (lowest column on ties).
    ``assignment`` solves a maximum-weight bipartite assignment, injective
    when there are at least as many columns as rows; rows left over when
    there are more rows than columns fall back to ``argmax``.
    """
    P = coupling.matrix if isinstance(coupling, Coupling) else np.asarray(coupling, dtype=float)
    n, m = P.shape
    if mode == "argmax":
        fwd = np.argmax(P, axis=1)
    elif mode == "assignment":
        if n <= m:
            fwd = _assignment(P)
        else:
            padded = np.zeros((n, n))
            padded[:, :m] = P
            fwd = _assignment(padded)
            spill = fwd >= m
            fwd[spill] = np.argmax(P[spill], axis=1)
    else:
        raise TransportError(f"unknown rounding mode {mode!r}")
    return Matching(fwd, P[np.arange(n), fwd])


GH_MAX_POINTS = 5


def _as_matrix(space) -> np.ndarray:
    if isinstance(space, MetricSpace):
        return space.matrix()
    return np.asarray(space, dtype=np.float64)


def brute_force_gh(X, Y) -> Tuple[float, List[Tuple[int, int]]]:
    """Exact Gromov-Hausdorff distance between spaces of at most five points.

    Returns half the minimal distortion over all correspondences together
    with one minimizing correspondence as sorted ``(x, y)`` pairs. The search
    bisects over the finite set of achievable distortions and tests each
    threshold by backtracking over pairwise compatible pairs.
    """
    DX, DY = _as_matrix(X), _as_matrix(Y)
    nx, ny = DX.shape[0], DY.shape[0]
    if nx > GH_MAX_POINTS or ny > GH_MAX_POINTS:
        raise TransportError(
            f"brute force GH is limited to {GH_MAX_POINTS} points per side, got {nx} and {ny}"
        )
    gap = np.abs(DX[:, None, :, None] - DY[None, :, None, :])
    candidates = np.unique(np.concatenate([[0.0], gap.ravel()]))

    def search(t: float) -> Optional[List[Tuple[int, int]]]:
        ok = gap <= t
        chosen: List[Tuple[int, int]] = []

        def compatible(x: int, y: int) -> bool:
            return all(ok[x, y, a, b] for a, b in chosen)

        def cover_y() -> bool:
            covered = {b for _, b in chosen}
            missing = [y for y in range(ny) if y not in covered]
            if not missing:
                return True
            y = missing[0]
            for x in range(nx):
                if compatible(x, y):
                    chosen.append((x, y))
                    if cover_y():
                        return True
                    chosen.pop()
            return False

        def cover_x(x: int) -> bool:
            if x == nx:
                return cover_y()
            for y in range(ny):
                if compatible(x, y):
                    chosen.append((x, y))
                    if cover_x(x + 1):
                        return True
                    chosen.pop()
            return False

        return sorted(chosen) if cover_x(0) else None

    lo, hi = 0, len(candidates) - 1
    best = search(candidates[hi])
    while lo < hi:
        mid = (lo + hi) // 2
        found = search(candidates[mid])
        if found is None:
            lo = mid + 1
        else:
            hi, best = mid, found
    return float(candidates[hi]) / 2.0, best

