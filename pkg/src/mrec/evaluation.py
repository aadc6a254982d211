"""Scoring of matchings: distortion, label transfer accuracy and correspondence AUC."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple

import numpy as np

from .metric import MetricSpace, diameter
from .transport import Matching

# Above this many source points distortion is estimated by sampling pairs.
DISTORTION_CAP = 4096
DISTORTION_SAMPLES = 1_000_000

_BLOCK = 512


class EvaluationError(ValueError):
    pass


def _forward(m) -> np.ndarray:
    return m.forward if isinstance(m, Matching) else np.asarray(m, dtype=np.intp)


def distortion_is_estimated(n: int, cap: int = DISTORTION_CAP) -> bool:
    return n > cap


def matching_distortion(
    m,
    X: MetricSpace,
    Y: MetricSpace,
    *,
    cap: int = DISTORTION_CAP,
    samples: int = DISTORTION_SAMPLES,
    seed: int = 0,
) -> float:
    """Distortion of the graph of a matching, ``max |dX(x, x') - dY(m(x), m(x'))|``.

    Exact when ``|X| <= cap``; otherwise the maximum over ``samples``
    uniformly drawn pairs (see :func:`distortion_is_estimated`).
    """
    f = _forward(m)
    n = X.size
    if len(f) != n:
        raise EvaluationError(f"matching covers {len(f)} of {n} points")
    if n == 1:
        return 0.0
    if not distortion_is_estimated(n, cap):
        allx = np.arange(n)
        worst = 0.0
        for start in range(0, n, _BLOCK):
            rows = allx[start : start + _BLOCK]
            gap = np.abs(X.block(rows, allx) - Y.block(f[rows], f))
            worst = max(worst, float(gap.max()))
        return worst
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < samples:
        k = min(_BLOCK * 512, samples - done)
        i = rng.integers(n, size=k)
        j = rng.integers(n, size=k)
        gap = np.abs(X.paired(i, j) - Y.paired(f[i], f[j]))
        worst = max(worst, float(gap.max()))
        done += k
    return worst


def correspondence_distortion(R: Iterable[Tuple[int, int]], DX, DY) -> float:
    """Distortion of an arbitrary relation given as ``(x, y)`` pairs."""
    R = np.asarray(list(R), dtype=np.intp)
    DX = DX.matrix() if isinstance(DX, MetricSpace) else np.asarray(DX)
    DY = DY.matrix() if isinstance(DY, MetricSpace) else np.asarray(DY)
    xs, ys = R[:, 0], R[:, 1]
    return float(np.abs(DX[np.ix_(xs, xs)] - DY[np.ix_(ys, ys)]).max())


def label_accuracy(m, labels_x, labels_y) -> float:
    if labels_x is None or labels_y is None:
        raise EvaluationError("label accuracy needs labels on both sides")
    f = _forward(m)
    lx = np.asarray(labels_x)
    ly = np.asarray(labels_y)
    if len(lx) != len(f):
        raise EvaluationError(f"{len(lx)} labels for {len(f)} matched points")
    return float(np.mean(lx == ly[f]))


def correspondence_auc(m, true_map, Y: MetricSpace) -> float:
    """Normalized area under ``alpha(r)``, the fraction of points whose match
    lies within ``r`` of the true partner, for ``r`` in ``[0, diam(Y)]``."""
    if true_map is None:
        raise EvaluationError("correspondence AUC needs a ground-truth map")
    f = _forward(m)
    t = np.asarray(true_map, dtype=np.intp)
    if len(t) != len(f):
        raise EvaluationError(f"ground truth covers {len(t)} of {len(f)} points")
    D = diameter(Y)
    if D == 0.0:
        return 1.0
    err = np.sort(np.minimum(Y.paired(f, t), D))
    # alpha is a right-continuous step function jumping at each sorted error
    frac = np.arange(1, len(err) + 1) / len(err)
    widths = np.diff(np.append(err, D))
    return float((frac * widths).sum() / D)


@dataclass
class EvalReport:
    distortion: float
    distortion_estimated: bool = False
    accuracy: Optional[float] = None
    auc: Optional[float] = None
    runtime_seconds: Optional[float] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.distortion < 0:
            raise EvaluationError("distortion must be nonnegative")
        for name in ("accuracy", "auc"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise EvaluationError(f"{name} must lie in [0, 1], got {v}")

    def to_dict(self) -> dict:
        out = {
            "distortion": self.distortion,
            "distortion_estimated": self.distortion_estimated,
            "runtime_seconds": self.runtime_seconds,
            "params": self.params,
        }
        if self.accuracy is not None:
            out["accuracy"] = self.accuracy
        if self.auc is not None:
            out["auc"] = self.auc
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(
    m,
    X: MetricSpace,
    Y: MetricSpace,
    *,
    labels_x=None,
    labels_y=None,
    true_map=None,
    runtime_seconds: Optional[float] = None,
    params: Optional[dict] = None,
    cap: int = DISTORTION_CAP,
    seed: int = 0,
) -> EvalReport:
    """Score a matching with every metric its inputs allow."""
    acc = None
    if labels_x is not None and labels_y is not None:
        acc = label_accuracy(m, labels_x, labels_y)
    auc = correspondence_auc(m, true_map, Y) if true_map is not None else None
    return EvalReport(
        distortion=matching_distortion(m, X, Y, cap=cap, seed=seed),
        distortion_estimated=distortion_is_estimated(X.size, cap),
        accuracy=acc,
        auc=auc,
        runtime_seconds=runtime_seconds,
        params=params or {},
    )
