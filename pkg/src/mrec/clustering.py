"""Clustering subroutines: partition a space and pick one representative per cluster."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .metric import MetricSpace, build_euclidean_space, restrict

_ROW_BLOCK = 4096


class ClusteringError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    """Surjection from points onto clusters.

    ``assignment[i]`` is the cluster of point ``i``; ``representatives[c]``
    is a point of cluster ``c``; ``masses[c]`` counts its points.
    """

    assignment: np.ndarray
    representatives: np.ndarray
    masses: np.ndarray
    iterations: int = 0

    @property
    def cluster_count(self) -> int:
        return len(self.representatives)

    @property
    def balance_ratio(self) -> float:
        """Largest over smallest cluster size; 1.0 means perfectly balanced."""
        return float(self.masses.max() / self.masses.min())

    def members(self) -> list:
        """Point indices of each cluster, in ascending order."""
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.cumsum(self.masses)[:-1]
        return np.split(order, bounds)


def _from_labels(labels: np.ndarray, reps: np.ndarray, iterations: int = 0) -> ClusterAssignment:
    masses = np.bincount(labels, minlength=len(reps))
    return ClusterAssignment(labels.astype(np.intp), reps.astype(np.intp), masses, iterations)


def nearest(space: MetricSpace, centers: np.ndarray) -> np.ndarray:
    """Index into ``centers`` of the nearest center for every point (lowest index on ties)."""
    n = space.size
    out = np.empty(n, dtype=np.intp)
    for start in range(0, n, _ROW_BLOCK):
        rows = np.arange(start, min(n, start + _ROW_BLOCK))
        out[rows] = np.argmin(space.block(rows, centers), axis=1)
    return out


def voronoi_partition(space: MetricSpace, C: int, seed: int) -> ClusterAssignment:
    """Voronoi cells of ``min(C, n)`` germs drawn uniformly without replacement."""
    if C < 1:
        raise ClusteringError(f"cluster count must be >= 1, got {C}")
    n = space.size
    k = min(C, n)
    rng = np.random.default_rng(seed)
    germs = np.sort(rng.choice(n, size=k, replace=False)) if k < n else np.arange(n)
    labels = nearest(space, germs)
    # germs own their cell even when a duplicate point precedes them
    labels[germs] = np.arange(k)
    return _from_labels(labels, germs)


def _kmeanspp(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    first = rng.integers(n)
    centers = [pts[first]]
    d2 = ((pts - pts[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = rng.choice(n, p=d2 / total)
        else:
            nxt = rng.integers(n)
        centers.append(pts[nxt])
        d2 = np.minimum(d2, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return np.array(centers)


def _sq_dists(pts: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (pts * pts).sum(1)[:, None] - 2.0 * pts @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_partition(space, C: int, seed: int, max_iter: int = 100) -> ClusterAssignment:
    """k-means++ seeding followed by Lloyd iterations.

    Accepts a Euclidean :class:`MetricSpace` or a raw point matrix. Each
    representative is the member closest to its cluster's centroid. A
    cluster that empties takes over the point farthest from its own
    centroid; if every point already sits on its centroid the empty cluster
    is dropped, so fewer than ``C`` clusters can come back.
    """
    if C < 1:
        raise ClusteringError(f"cluster count must be >= 1, got {C}")
    if isinstance(space, MetricSpace):
        pts = space.coords
        if pts is None:
            raise ClusteringError(f"k-means needs coordinates; {space.kind} space has none")
    else:
        pts = np.asarray(space, dtype=np.float64)
    n = pts.shape[0]
    k = min(C, n)
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(pts, k, rng)
    labels = None
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(pts, centers)
        new = np.argmin(d, axis=1)
        counts = np.bincount(new, minlength=len(centers))
        for c in np.flatnonzero(counts == 0):
            own = d[np.arange(n), new]
            # only points that are not the sole member of their cluster can move
            movable = counts[new] > 1
            own = np.where(movable, own, -1.0)
            far = int(np.argmax(own))
            if own[far] <= 0:
                continue
            counts[new[far]] -= 1
            new[far] = c
            counts[c] = 1
        keep = np.flatnonzero(counts > 0)
        if len(keep) < len(centers):
            remap = np.full(len(centers), -1)
            remap[keep] = np.arange(len(keep))
            new = remap[new]
        moved = np.array([pts[new == c].mean(axis=0) for c in range(len(keep))])
        done = labels is not None and np.array_equal(new, labels)
        done = done or np.array_equal(moved, centers[keep])
        labels, centers = new, moved
        if done:
            break
    d = _sq_dists(pts, centers)
    reps = np.empty(len(centers), dtype=np.intp)
    for c in range(len(centers)):
        idx = np.flatnonzero(labels == c)
        reps[c] = idx[np.argmin(d[idx, c])]
    return _from_labels(labels, reps, it)


def cluster_radius(space: MetricSpace, a: ClusterAssignment) -> float:
    """Largest intra-cluster pairwise distance."""
    r = 0.0
    for idx in a.members():
        if len(idx) > 1:
            r = max(r, float(space.block(idx, idx).max()))
    return r


def representative_space(
    space: MetricSpace, a: ClusterAssignment, weighting: str = "mass"
) -> Tuple[MetricSpace, np.ndarray]:
    """Subspace on the representatives and their weights.

    ``weighting="mass"`` weights each representative by its cluster's share
    of the points; ``"uniform"`` gives them equal weight.
    """
    sub = restrict(space, a.representatives)
    if weighting == "mass":
        w = a.masses / a.masses.sum()
    elif weighting == "uniform":
        w = np.full(a.cluster_count, 1.0 / a.cluster_count)
    else:
        raise ClusteringError(f"unknown weighting {weighting!r}")
    return sub, w


def partition(space: MetricSpace, clusterer: str, C: int, seed: int, max_iter: int = 100):
    if clusterer == "voronoi":
        return voronoi_partition(space, C, seed)
    if clusterer == "kmeans":
        return kmeans_partition(space, C, seed, max_iter)
    raise ClusteringError(f"unknown clusterer {clusterer!r}")
