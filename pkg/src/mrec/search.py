"""Parameter sweeps with distortion-based model selection."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .evaluation import EvalReport, evaluate
from .metric import MetricSpace
from .recursion import MATCHERS, MrecParams, derive_seed, mrec_match
from .transport import Matching

log = logging.getLogger(__name__)


def _default_eps() -> List[float]:
    return [10.0, 1.0, 0.1, 0.01, 0.001, 0.0001]


@dataclass
class SweepGrid:
    epsilon_values: List[float] = field(default_factory=_default_eps)
    C_values: List[int] = field(default_factory=lambda: [10, 100, 1000])
    matchers: List[str] = field(default_factory=lambda: ["gw"])
    runs_per_cell: int = 20
    base_seed: int = 0

    def __post_init__(self):
        if not self.epsilon_values or not self.C_values or not self.matchers:
            raise ValueError("sweep grid axes must be non-empty")
        if self.runs_per_cell < 1:
            raise ValueError("runs_per_cell must be >= 1")
        for m in self.matchers:
            if m not in MATCHERS:
                raise ValueError(f"unknown matcher {m!r}")

    def cells(self):
        """All ``(matcher, epsilon, C, run, seed)`` cells in a fixed order."""
        for a, matcher in enumerate(self.matchers):
            for b, eps in enumerate(self.epsilon_values):
                for c, C in enumerate(self.C_values):
                    for run in range(self.runs_per_cell):
                        yield matcher, float(eps), int(C), run, derive_seed(self.base_seed, a, b, c, run)


@dataclass
class CellResult:
    matcher: str
    epsilon: float
    C: int
    run: int
    seed: int
    status: str = "ok"
    error: Optional[str] = None
    distortion: Optional[float] = None
    distortion_estimated: Optional[bool] = None
    accuracy: Optional[float] = None
    auc: Optional[float] = None
    runtime_seconds: Optional[float] = None
    converged: Optional[bool] = None
    depth: Optional[int] = None
    nodes: Optional[int] = None
    matching: Optional[Matching] = field(default=None, repr=False)
    params: dict = field(default_factory=dict, repr=False)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("matching")
        d.pop("params")
        return d


TABLE_COLUMNS = [
    "matcher", "epsilon", "C", "run", "seed", "status", "error", "distortion",
    "distortion_estimated", "accuracy", "auc", "runtime_seconds", "converged", "depth", "nodes",
]


@dataclass
class SweepResult:
    best: Optional[CellResult]
    best_report: Optional[EvalReport]
    table: List[CellResult]


# Worker processes receive the (large) inputs once, through the initializer.
_CTX: dict = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)


def _run_cell(cell) -> CellResult:
    matcher, eps, C, run, seed = cell
    ctx = _CTX
    res = CellResult(matcher, eps, C, run, seed)
    try:
        params = replace(ctx["base"], matcher=matcher, epsilon=eps, C=C, seed=seed)
        res.params = params.to_dict()
        t0 = time.perf_counter()
        m, trace = mrec_match(ctx["X"], ctx["Y"], params, ctx["linear_cost"])
        res.runtime_seconds = time.perf_counter() - t0
        rep = evaluate(
            m, ctx["X"], ctx["Y"],
            labels_x=ctx["labels_x"], labels_y=ctx["labels_y"], true_map=ctx["true_map"],
        )
        res.distortion = rep.distortion
        res.distortion_estimated = rep.distortion_estimated
        res.accuracy = rep.accuracy
        res.auc = rep.auc
        res.converged = trace.converged
        res.depth = trace.depth
        res.nodes = len(trace.nodes)
        res.matching = m
    except Exception as exc:  # one bad cell must not abort the sweep
        res.status = "failed"
        res.error = f"{type(exc).__name__}: {exc}"
        log.warning("cell %s eps=%g C=%d run=%d failed: %s", matcher, eps, C, run, res.error)
    return res


def sweep(
    X: MetricSpace,
    Y: MetricSpace,
    grid: SweepGrid,
    *,
    labels_x=None,
    labels_y=None,
    true_map=None,
    base_params: Optional[MrecParams] = None,
    linear_cost=None,
    workers: int = 1,
) -> SweepResult:
    """Run every grid cell and select the matching of lowest distortion.

    Ties on distortion go to the earliest cell in grid order. Failed cells
    are kept in the table with ``status="failed"``.
    """
    ctx = dict(
        X=X, Y=Y, base=base_params or MrecParams(), linear_cost=linear_cost,
        labels_x=labels_x, labels_y=labels_y, true_map=true_map,
    )
    cells = list(grid.cells())
    if workers <= 1:
        _init_worker(ctx)
        table = [_run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(ctx,)) as ex:
            table = list(ex.map(_run_cell, cells))

    best = None
    for r in table:
        if r.status == "ok" and (best is None or r.distortion < best.distortion):
            best = r
    for r in table:
        if r is not best:
            r.matching = None
    report = None
    if best is not None:
        report = EvalReport(
            distortion=best.distortion,
            distortion_estimated=best.distortion_estimated,
            accuracy=best.accuracy,
            auc=best.auc,
            runtime_seconds=best.runtime_seconds,
            params=best.params,
        )
    return SweepResult(best, report, table)


CURVE_COLUMNS = [
    "C", "matcher", "epsilon", "runs", "mean_distortion", "var_distortion",
    "mean_accuracy", "var_accuracy", "mean_runtime",
]


def _mean_var(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return None, None
    a = np.asarray(vals, dtype=np.float64)
    return float(a.mean()), float(a.var())


def curve_export(table: Sequence[CellResult]) -> List[dict]:
    """Per-C summary of the runs of the best parameter setting.

    For each C, the (matcher, epsilon) setting whose runs contain the lowest
    distortion at that C is selected, and the mean and (population) variance
    of distortion and accuracy and the mean runtime over its runs are
    reported. Rows are sorted by C.
    """
    ok = [r for r in table if r.status == "ok"]
    if not table:
        raise ValueError("empty sweep table")
    rows = []
    for C in sorted({r.C for r in table}):
        at_c = [r for r in ok if r.C == C]
        row = dict.fromkeys(CURVE_COLUMNS)
        row["C"] = C
        row["runs"] = 0
        if at_c:
            top = min(at_c, key=lambda r: r.distortion)
            runs = [r for r in at_c if r.matcher == top.matcher and r.epsilon == top.epsilon]
            row.update(matcher=top.matcher, epsilon=top.epsilon, runs=len(runs))
            row["mean_distortion"], row["var_distortion"] = _mean_var([r.distortion for r in runs])
            row["mean_accuracy"], row["var_accuracy"] = _mean_var([r.accuracy for r in runs])
            row["mean_runtime"], _ = _mean_var([r.runtime_seconds for r in runs])
        rows.append(row)
    return rows
