"""Finite metric spaces with interchangeable distance backends."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.spatial.distance import cdist

# Euclidean spaces at or below this size memoize their full distance matrix.
DEFAULT_CACHE_CAP = 4096

_BLOCK = 2048


class MetricError(ValueError):
    pass


class MetricSpace:
    """A finite metric space.

    Three backends are supported: ``"explicit"`` (a stored symmetric matrix),
    ``"euclidean"`` (coordinates with a Minkowski exponent, evaluated on
    demand) and ``"geodesic"`` (shortest paths in a kNN graph, stored as a
    matrix). Instances are treated as immutable; the optional distance cache
    of Euclidean spaces is filled under a lock.

    Use the module level constructors rather than calling this directly.
    """

    def __init__(
        self,
        kind: str,
        *,
        matrix: Optional[np.ndarray] = None,
        points: Optional[np.ndarray] = None,
        exponent: float = 2.0,
        point_ids: Optional[np.ndarray] = None,
        cache_cap: int = DEFAULT_CACHE_CAP,
    ):
        self.kind = kind
        self._matrix = matrix
        self._points = points
        self.exponent = float(exponent)
        self.cache_cap = cache_cap
        n = matrix.shape[0] if matrix is not None else points.shape[0]
        if point_ids is None:
            point_ids = np.arange(n)
        self.point_ids = np.asarray(point_ids, dtype=np.int64)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"MetricSpace(kind={self.kind!r}, size={self.size})"

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    @property
    def size(self) -> int:
        return len(self.point_ids)

    @property
    def coords(self) -> Optional[np.ndarray]:
        """Coordinates for the Euclidean backend, ``None`` otherwise."""
        return self._points if self.kind == "euclidean" else None

    def _pairwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        p = self.exponent
        if p == 2.0:
            return cdist(a, b, "euclidean")
        if p == 1.0:
            return cdist(a, b, "cityblock")
        return cdist(a, b, "minkowski", p=p)

    def _ensure_cache(self) -> Optional[np.ndarray]:
        if self._matrix is not None:
            return self._matrix
        if self.size > self.cache_cap:
            return None
        with self._lock:
            if self._matrix is None:
                m = self._pairwise(self._points, self._points)
                np.fill_diagonal(m, 0.0)
                self._matrix = m
        return self._matrix

    def distance(self, i: int, j: int) -> float:
        return float(self.block([i], [j])[0, 0])

    def block(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        """Distances between ``rows`` and ``cols`` as a ``len(rows) x len(cols)`` array."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        m = self._ensure_cache()
        if m is not None:
            return m[np.ix_(rows, cols)]
        return self._pairwise(self._points[rows], self._points[cols])

    def paired(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Elementwise distances ``d(i[k], j[k])``."""
        i = np.asarray(i, dtype=np.intp)
        j = np.asarray(j, dtype=np.intp)
        m = self._ensure_cache()
        if m is not None:
            return m[i, j]
        diff = np.abs(self._points[i] - self._points[j])
        p = self.exponent
        if p == 2.0:
            return np.sqrt(np.einsum("ij,ij->i", diff, diff))
        if p == 1.0:
            return diff.sum(axis=1)
        return (diff**p).sum(axis=1) ** (1.0 / p)

    def matrix(self) -> np.ndarray:
        """The full distance matrix. Materializes ``n x n`` for large Euclidean spaces."""
        m = self._ensure_cache()
        if m is not None:
            return m
        idx = np.arange(self.size)
        return self.block(idx, idx)

    def restrict(self, indices: Sequence[int]) -> "MetricSpace":
        return restrict(self, indices)


@dataclass
class LabeledDataset:
    space: MetricSpace
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != self.space.size:
                raise MetricError(
                    f"{len(self.labels)} labels for a space of {self.space.size} points"
                )


def _check_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
        raise MetricError(f"expected a non-empty n x d point matrix, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise MetricError("point coordinates must be finite")
    return pts


def build_euclidean_space(
    points, exponent: float = 2.0, *, point_ids=None, cache_cap: int = DEFAULT_CACHE_CAP
) -> MetricSpace:
    """Points in R^d with the Minkowski ``exponent`` norm (``exponent >= 1``)."""
    pts = _check_points(points)
    if not exponent >= 1.0:
        raise MetricError(f"Minkowski exponent must be >= 1, got {exponent}")
    return MetricSpace(
        "euclidean", points=pts, exponent=exponent, point_ids=point_ids, cache_cap=cache_cap
    )


def build_explicit_space(matrix, *, point_ids=None, tol: float = 1e-9) -> MetricSpace:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise MetricError(f"distance matrix must be square and non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise MetricError("distance matrix has non-finite entries")
    if np.any(m < 0):
        raise MetricError("distance matrix has negative entries")
    if np.max(np.abs(m - m.T)) > tol:
        raise MetricError("distance matrix is asymmetric")
    if np.max(np.abs(np.diag(m))) > tol:
        raise MetricError("distance matrix has a nonzero diagonal")
    m = (m + m.T) / 2.0
    np.fill_diagonal(m, 0.0)
    return MetricSpace("explicit", matrix=m, point_ids=point_ids)


def knn_graph(points, k: int, exponent: float = 2.0) -> csr_matrix:
    """Symmetric kNN graph (union of neighbor relations) with metric edge weights."""
    pts = _check_points(points)
    n = pts.shape[0]
    if not 1 <= k < n:
        raise MetricError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    space = build_euclidean_space(pts, exponent, cache_cap=0)
    rows, cols, vals = [], [], []
    for start in range(0, n, _BLOCK):
        idx = np.arange(start, min(n, start + _BLOCK))
        d = space.block(idx, np.arange(n))
        d[np.arange(len(idx)), idx] = np.inf
        # stable sort: equidistant neighbors resolve to the lowest index
        nbr = np.argsort(d, axis=1, kind="stable")[:, :k]
        rows.append(np.repeat(idx, k))
        cols.append(nbr.ravel())
        vals.append(np.take_along_axis(d, nbr, axis=1).ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    # Zero-length edges would vanish from a sparse matrix; keep them tiny instead.
    vals = np.where(vals > 0, vals, np.finfo(float).tiny)
    g = csr_matrix((vals, (rows, cols)), shape=(n, n))
    return g.maximum(g.T)


def build_geodesic_space(points, k: int, exponent: float = 2.0, *, point_ids=None) -> MetricSpace:
    """Shortest-path distances in the symmetric kNN graph of ``points``."""
    graph = knn_graph(points, k, exponent)
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp > 1:
        raise MetricError(f"kNN graph with k={k} is disconnected ({ncomp} components)")
    m = shortest_path(graph, method="D", directed=False)
    m = np.where(m <= np.finfo(float).tiny * m.shape[0], 0.0, m)
    m = (m + m.T) / 2.0
    np.fill_diagonal(m, 0.0)
    return MetricSpace("geodesic", matrix=m, point_ids=point_ids)


def restrict(space: MetricSpace, indices: Sequence[int]) -> MetricSpace:
    """Subspace on ``indices`` (positions in ``space``); point ids carry over."""
    idx = np.asarray(indices, dtype=np.intp).ravel()
    if idx.size == 0:
        raise MetricError("cannot restrict to an empty index set")
    if idx.min() < 0 or idx.max() >= space.size:
        raise MetricError(f"indices out of range for a space of {space.size} points")
    if len(np.unique(idx)) != len(idx):
        raise MetricError("duplicate indices in restriction")
    ids = space.point_ids[idx]
    sub = space._matrix[np.ix_(idx, idx)] if space._matrix is not None else None
    if space.kind != "euclidean":
        return MetricSpace(space.kind, matrix=sub, point_ids=ids)
    return MetricSpace(
        "euclidean",
        matrix=sub,
        points=space._points[idx],
        exponent=space.exponent,
        point_ids=ids,
        cache_cap=space.cache_cap,
    )


def diameter(space: MetricSpace) -> float:
    n = space.size
    if n == 1:
        return 0.0
    best = 0.0
    allidx = np.arange(n)
    for start in range(0, n, _BLOCK):
        rows = allidx[start : start + _BLOCK]
        best = max(best, float(space.block(rows, allidx).max()))
    return best
