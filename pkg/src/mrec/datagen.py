"""Synthetic datasets: Gaussian mixtures and well-separated cluster models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .metric import LabeledDataset, build_euclidean_space


class DatagenError(ValueError):
    pass


def _default_means() -> List[List[float]]:
    # pairwise gaps 20, 35 and ~40.3 standard deviations; all distinct
    return [[0.0, 0.0], [20.0, 0.0], [0.0, 35.0]]


@dataclass
class SynthSpec:
    n_total: int = 6000
    means: List[List[float]] = field(default_factory=_default_means)
    scales: List[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])
    weights: Optional[List[float]] = None
    seed: int = 0

    def __post_init__(self):
        k = len(self.means)
        if self.weights is None:
            self.weights = [1.0 / k] * k
        if len(self.scales) != k or len(self.weights) != k:
            raise DatagenError("means, scales and weights must have one entry per component")
        if any(s < 0 for s in self.scales):
            raise DatagenError("scales must be nonnegative")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise DatagenError("weights must be a probability vector")
        if self.n_total < 1:
            raise DatagenError("n_total must be positive")

    @classmethod
    def synth_plus(cls, seed: int = 0) -> "SynthSpec":
        return cls(n_total=60_000, seed=seed)


def gen_gaussian_mixture(spec: SynthSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian mixture samples and their component labels."""
    rng = np.random.default_rng(spec.seed)
    means = np.asarray(spec.means, dtype=np.float64)
    scales = np.asarray(spec.scales, dtype=np.float64)
    labels = rng.choice(len(means), size=spec.n_total, p=np.asarray(spec.weights))
    noise = rng.standard_normal((spec.n_total, means.shape[1]))
    points = means[labels] + scales[labels, None] * noise
    return points, labels


def split_halves(points, labels, seed: int) -> Tuple[LabeledDataset, LabeledDataset]:
    """Random disjoint halves; point ids are the original row indices."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(points)
    if n < 2:
        raise DatagenError("need at least two points to split")
    perm = np.random.default_rng(seed).permutation(n)
    a, b = np.sort(perm[: n // 2]), np.sort(perm[n // 2 :])
    return (
        LabeledDataset(build_euclidean_space(points[a], point_ids=a), labels[a]),
        LabeledDataset(build_euclidean_space(points[b], point_ids=b), labels[b]),
    )


def _uniform_ball(rng, n: int, d: int, radius: float) -> np.ndarray:
    v = rng.standard_normal((n, d))
    v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
    r = radius * rng.random(n) ** (1.0 / d)
    return v * r[:, None]


def separation(points, labels) -> Tuple[float, float]:
    """(min inter-cluster Hausdorff distance, max cluster diameter) of a labelled sample."""
    points = np.asarray(points, dtype=np.float64)
    groups = [points[labels == k] for k in np.unique(labels)]
    diam = max((pdist(g).max() if len(g) > 1 else 0.0) for g in groups)
    hd = np.inf
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            d = cdist(groups[i], groups[j])
            hd = min(hd, max(d.min(axis=1).max(), d.min(axis=0).max()))
    return float(hd), float(diam)


def gen_separated_clusters(
    K: int,
    delta: float,
    eta: float,
    points_per_cluster: int,
    d: int = 2,
    seed: int = 0,
    *,
    retries: int = 10,
) -> Tuple[np.ndarray, np.ndarray]:
    """``K`` clusters of diameter at most ``eta`` whose Hausdorff gaps exceed ``delta``.

    Centers are drawn in a box and kept at least ``delta + eta`` apart;
    points are uniform in balls of radius ``eta / 2``. The realized sample is
    checked against ``min Hausdorff gap > 2 * max diameter`` and redrawn if
    it fails.
    """
    if not (eta > 0 and delta > 2 * eta):
        raise DatagenError(f"need delta > 2 * eta > 0, got delta={delta}, eta={eta}")
    if K < 1 or points_per_cluster < 1 or d < 1:
        raise DatagenError("K, points_per_cluster and d must be positive")
    rng = np.random.default_rng(seed)
    gap = delta + eta
    side = gap * max(2.0, 2.0 * K ** (1.0 / d))
    for _ in range(retries):
        centers: List[np.ndarray] = []
        for _ in range(1000 * K):
            c = rng.uniform(0.0, side, size=d)
            if all(np.linalg.norm(c - o) >= gap for o in centers):
                centers.append(c)
                if len(centers) == K:
                    break
        if len(centers) < K:
            continue
        labels = np.repeat(np.arange(K), points_per_cluster)
        pts = np.concatenate(
            [c + _uniform_ball(rng, points_per_cluster, d, eta / 2.0) for c in centers]
        )
        if K == 1:
            return pts, labels
        hd, diam = separation(pts, labels)
        if hd > 2.0 * diam:
            return pts, labels
    raise DatagenError(f"could not place {K} separated clusters in {retries} attempts")
