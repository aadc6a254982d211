"""Recursive decomposition matching.

Both spaces are clustered, the cluster representatives are matched, the
clusters are paired through that matching and the procedure recurses on
each pair of preimages until one side is at most ``T`` points, where the
matcher runs directly and its coupling is rounded to a hard map.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from . import clustering
from .metric import MetricSpace, restrict
from .transport import (
    Coupling,
    Matching,
    MatchResult,
    _assignment,
    fused_match,
    round_to_matching,
    sinkhorn,
    uniform,
)

log = logging.getLogger(__name__)

MATCHERS = ("gw", "wasserstein", "fused")


class MrecError(RuntimeError):
    pass


def derive_seed(*keys: int) -> int:
    """Deterministic 32-bit seed from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]).generate_state(1)[0])


@dataclass
class MrecParams:
    C: int = 10
    T: int = 10
    max_depth: int = 32
    clusterer: str = "voronoi"
    seed: int = 0
    kmeans_max_iter: int = 100
    matcher: str = "gw"
    epsilon: float = 1e-2
    p: int = 2
    alpha: float = 0.5
    rounding: str = "argmax"
    # how the representative coupling becomes a cluster pairing
    pairing: str = "argmax"
    # weights of representatives at interior levels: "mass" or "uniform"
    marginals: str = "mass"
    max_outer: int = 50
    max_inner: int = 1000
    tol: float = 1e-6
    trace_radius: bool = True
    leaf_warn_size: int = 5000

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.C < 2:
            raise ValueError(f"C must be >= 2, got {self.C}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.clusterer not in ("voronoi", "kmeans"):
            raise ValueError(f"unknown clusterer {self.clusterer!r}")
        if self.matcher not in MATCHERS:
            raise ValueError(f"unknown matcher {self.matcher!r}")
        if self.rounding not in ("argmax", "assignment"):
            raise ValueError(f"unknown rounding {self.rounding!r}")
        if self.pairing not in ("argmax", "assignment"):
            raise ValueError(f"unknown pairing {self.pairing!r}")
        if self.marginals not in ("mass", "uniform"):
            raise ValueError(f"unknown marginals {self.marginals!r}")
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, cfg: dict) -> "MrecParams":
        """Build from a flat dict or from the nested ``clusterer``/``matcher`` layout."""
        cfg = dict(cfg)
        flat = {}
        cl = cfg.pop("clusterer", None)
        if isinstance(cl, dict):
            cl = dict(cl)
            if "clusterer" in cl:
                flat["clusterer"] = cl.pop("clusterer")
            flat.update(cl)
        elif cl is not None:
            flat["clusterer"] = cl
        mt = cfg.pop("matcher", None)
        if isinstance(mt, dict):
            mt = dict(mt)
            if "matcher" in mt:
                flat["matcher"] = mt.pop("matcher")
            flat.update(mt)
        elif mt is not None:
            flat["matcher"] = mt
        flat.update(cfg)
        known = {f.name for f in fields(cls)}
        unknown = set(flat) - known
        if unknown:
            raise ValueError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return cls(**flat)


@dataclass
class TraceNode:
    path: Tuple[int, ...]
    depth: int
    size_x: int
    size_y: int
    leaf: bool
    forced: bool = False
    clusters_x: Optional[int] = None
    clusters_y: Optional[int] = None
    radius: Optional[float] = None
    cost: Optional[float] = None
    converged: Optional[bool] = None
    iterations: Optional[int] = None
    wall_time: Optional[float] = None
    # interior nodes: representative point ids and the pairing x-cluster -> y-cluster
    reps_x: Optional[List[int]] = None
    reps_y: Optional[List[int]] = None
    pairing: Optional[List[int]] = None


@dataclass
class RecursionTrace:
    nodes: List[TraceNode] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    @property
    def converged(self) -> bool:
        return all(n.converged is not False for n in self.nodes)

    def leaves(self) -> List[TraceNode]:
        return [n for n in self.nodes if n.leaf]

    def root(self) -> TraceNode:
        return self.nodes[0]

    def to_dict(self, timing: bool = True) -> dict:
        out = []
        for n in self.nodes:
            d = asdict(n)
            d["path"] = list(n.path)
            if not timing:
                d["wall_time"] = None
            out.append(d)
        return {"depth": self.depth, "node_count": len(self.nodes), "nodes": out}


def pair_clusters(coupling, mode: str = "assignment") -> np.ndarray:
    """Pair X-clusters with Y-clusters from a coupling between their representatives.

    Returns an array with one entry per X-cluster holding the paired
    Y-cluster, or -1 for X-clusters left unpaired.

    ``assignment`` maximizes the total coupling mass of an injective pairing
    of the smaller side into the larger. ``argmax`` sends every X-cluster to
    the Y-cluster receiving most of its mass, so several X-clusters may
    share a partner and none is left unpaired.
    """
    P = coupling.matrix if isinstance(coupling, Coupling) else np.asarray(coupling, dtype=float)
    nx, ny = P.shape
    if mode == "argmax":
        return np.argmax(P, axis=1).astype(np.intp)
    if mode != "assignment":
        raise ValueError(f"unknown pairing mode {mode!r}")
    if nx <= ny:
        return _assignment(P)
    out = np.full(nx, -1, dtype=np.intp)
    cols = _assignment(P.T)
    out[cols] = np.arange(ny)
    return out


def estimate_work(n: int, params: MrecParams) -> Tuple[int, int]:
    """Predicted ``(leaf_count, depth)`` for balanced clusterings of ``n`` points."""
    if n < 1:
        raise ValueError("n must be >= 1")
    T, C = params.T, params.C
    depth = 0
    cap = T
    while cap < n:
        cap *= C
        depth += 1
    leaves = max(1, -(-n // T))
    return leaves, depth


def cross_distances(X: MetricSpace, Y: MetricSpace, p: int = 2) -> np.ndarray:
    """``d(x, y)**p`` for spaces sharing an ambient Euclidean space."""
    if X.coords is None or Y.coords is None:
        raise MrecError("the wasserstein matcher needs both spaces in a common Euclidean space")
    if X.coords.shape[1] != Y.coords.shape[1]:
        raise MrecError(
            f"ambient dimensions differ ({X.coords.shape[1]} vs {Y.coords.shape[1]}); "
            "use the gw matcher"
        )
    d = cdist(X.coords, Y.coords, "minkowski", p=X.exponent)
    return d**p


def run_matcher(
    Xs: MetricSpace,
    Ys: MetricSpace,
    mu: np.ndarray,
    nu: np.ndarray,
    params: MrecParams,
    linear_cost: Optional[np.ndarray] = None,
) -> MatchResult:
    """Apply the configured matcher to a pair of (sub)spaces."""
    kw = dict(max_outer=params.max_outer, max_inner=params.max_inner, tol=params.tol)
    if params.matcher == "wasserstein":
        M = linear_cost if linear_cost is not None else cross_distances(Xs, Ys, params.p)
        return sinkhorn(M, mu, nu, params.epsilon, params.max_inner, params.tol)
    DX, DY = Xs.matrix(), Ys.matrix()
    if params.matcher == "gw":
        return fused_match(DX, DY, None, 0.0, mu, nu, params.p, params.epsilon, **kw)
    M = linear_cost if linear_cost is not None else cross_distances(Xs, Ys, params.p)
    return fused_match(DX, DY, M, params.alpha, mu, nu, params.p, params.epsilon, **kw)


class _Recursion:
    def __init__(self, X, Y, params, linear_cost):
        self.X, self.Y, self.params = X, Y, params
        self.lin = linear_cost
        self.forward = np.full(X.size, -1, dtype=np.intp)
        self.weights = np.zeros(X.size)
        self.trace = RecursionTrace()

    def _lin(self, xi, yi):
        if self.lin is None:
            return None
        return self.lin[np.ix_(xi, yi)]

    def leaf(self, xi, yi, node: TraceNode, t0: float):
        prm = self.params
        if max(len(xi), len(yi)) > prm.leaf_warn_size:
            log.warning("leaf at %s has %d x %d points", node.path, len(xi), len(yi))
        Xs, Ys = restrict(self.X, xi), restrict(self.Y, yi)
        res = run_matcher(Xs, Ys, uniform(len(xi)), uniform(len(yi)), prm, self._lin(xi, yi))
        m = round_to_matching(res.coupling, prm.rounding)
        self.forward[xi] = yi[m.forward]
        self.weights[xi] = m.weights
        node.leaf = True
        node.cost = res.cost
        node.converged = res.converged
        node.iterations = res.iterations
        node.wall_time = time.perf_counter() - t0

    def solve(self, xi: np.ndarray, yi: np.ndarray, depth: int, seed: int, path: tuple):
        prm = self.params
        if depth > prm.max_depth:
            raise MrecError(
                f"recursion deeper than max_depth={prm.max_depth} at node {list(path)}; "
                "the clustering is not shrinking the problem"
            )
        t0 = time.perf_counter()
        node = TraceNode(path, depth, len(xi), len(yi), leaf=False)
        self.trace.nodes.append(node)
        try:
            if len(xi) <= prm.T or len(yi) <= prm.T:
                self.leaf(xi, yi, node, t0)
                return
            children = self.split(xi, yi, node, seed)
        except MrecError:
            raise
        except Exception as exc:
            raise MrecError(f"at node {list(path)}: {exc}") from exc
        if children is None:
            self.leaf(xi, yi, node, t0)
            return
        node.wall_time = time.perf_counter() - t0
        for k, (cx, cy) in enumerate(children):
            self.solve(cx, cy, depth + 1, derive_seed(seed, k + 2), path + (k,))

    def split(self, xi, yi, node: TraceNode, seed: int):
        prm = self.params
        Xs, Ys = restrict(self.X, xi), restrict(self.Y, yi)
        ax = clustering.partition(Xs, prm.clusterer, prm.C, derive_seed(seed, 0), prm.kmeans_max_iter)
        ay = clustering.partition(Ys, prm.clusterer, prm.C, derive_seed(seed, 1), prm.kmeans_max_iter)
        node.clusters_x, node.clusters_y = ax.cluster_count, ay.cluster_count
        if ax.cluster_count == 1 or ay.cluster_count == 1:
            log.warning(
                "node %s: clustering did not split (%d x %d points); matching directly",
                list(node.path), len(xi), len(yi),
            )
            node.forced = True
            return None
        if prm.trace_radius:
            node.radius = max(clustering.cluster_radius(Xs, ax), clustering.cluster_radius(Ys, ay))
        rx, mx = clustering.representative_space(Xs, ax, prm.marginals)
        ry, my = clustering.representative_space(Ys, ay, prm.marginals)
        lin = self._lin(xi[ax.representatives], yi[ay.representatives])
        res = run_matcher(rx, ry, mx, my, prm, lin)
        node.cost, node.converged, node.iterations = res.cost, res.converged, res.iterations
        pairing = pair_clusters(res.coupling, prm.pairing)
        node.reps_x = [int(v) for v in rx.point_ids]
        node.reps_y = [int(v) for v in ry.point_ids]
        node.pairing = [int(v) for v in pairing]
        groups_x = ax.members()
        groups_y = ay.members()
        return [
            (xi[np.sort(gx)], yi[np.sort(gy)])
            for gx, gy in _child_groups(pairing, groups_x, groups_y, rx, ry, prm.pairing)
        ]


def _child_groups(pairing, groups_x, groups_y, rx: MetricSpace, ry: MetricSpace, mode: str):
    """Paired preimages, with unpaired clusters merged into their nearest paired neighbour."""
    paired_x = np.flatnonzero(pairing >= 0)
    bx = {int(i): [groups_x[i]] for i in paired_x}
    by = {int(i): [groups_y[pairing[i]]] for i in paired_x}
    orphans_x = np.flatnonzero(pairing < 0)
    if len(orphans_x):
        near = paired_x[np.argmin(rx.block(orphans_x, paired_x), axis=1)]
        for o, k in zip(orphans_x, near):
            bx[int(k)].append(groups_x[o])
    if mode == "assignment":
        used = pairing[paired_x]
        orphans_y = np.setdiff1d(np.arange(len(groups_y)), used)
        if len(orphans_y):
            owner = {int(pairing[i]): int(i) for i in paired_x}
            near = used[np.argmin(ry.block(orphans_y, used), axis=1)]
            for o, j in zip(orphans_y, near):
                by[owner[int(j)]].append(groups_y[o])
    return [(np.concatenate(bx[int(i)]), np.concatenate(by[int(i)])) for i in paired_x]


def mrec_match(
    X: MetricSpace,
    Y: MetricSpace,
    params: Optional[MrecParams] = None,
    linear_cost: Optional[np.ndarray] = None,
) -> Tuple[Matching, RecursionTrace]:
    """Match ``X`` into ``Y`` by recursive decomposition.

    ``linear_cost`` is an optional ``|X| x |Y|`` matrix for the ``fused``
    and ``wasserstein`` matchers. The returned matching is expressed in
    positions of ``X`` and ``Y``; ``X.point_ids`` / ``Y.point_ids`` translate
    to external ids.
    """
    params = params or MrecParams()
    if X.size < 1 or Y.size < 1:
        raise MrecError("both spaces need at least one point")
    if linear_cost is not None:
        linear_cost = np.asarray(linear_cost, dtype=np.float64)
        if linear_cost.shape != (X.size, Y.size):
            raise MrecError(
                f"linear cost has shape {linear_cost.shape}, expected {(X.size, Y.size)}"
            )
    rec = _Recursion(X, Y, params, linear_cost)
    rec.solve(np.arange(X.size), np.arange(Y.size), 0, params.seed, ())
    assert (rec.forward >= 0).all()
    return Matching(rec.forward, rec.weights), rec.trace
