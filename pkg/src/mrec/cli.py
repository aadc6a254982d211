"""Command-line entry point: ``mrec {match,sweep,eval,synth-gen}``.

Every subcommand reads a JSON config (``--config``) and writes its outputs
into ``--out``. Relative input paths in the config resolve against the
config file's directory. On failure a JSON error object is printed to
stderr, written to ``<out>/error.json`` when possible, and the exit code
is 1.

Config layout (all keys optional unless the subcommand needs them)::

    {
      "schema_version": 1,
      "x": {"points": "x.csv"} | {"matrix": "dx.csv"},
      "y": {...},                    # also "labels", "geodesic_k", "exponent"
      "true_map": "truth.txt",       # y_id of each x row, for the AUC
      "linear_cost": "m.csv",
      "params": {...},               # MrecParams, flat or nested
      "grid": {...},                 # SweepGrid
      "matching": "matching.csv",    # eval only
      "synth": {...}, "split": true, # synth-gen only
      "workers": 1, "seed": 0, "header": false, "record_timing": false
    }
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .datagen import SynthSpec, gen_gaussian_mixture, split_halves
from .evaluation import evaluate
from .metric import (
    MetricSpace,
    build_euclidean_space,
    build_explicit_space,
    build_geodesic_space,
)
from .recursion import MrecParams, mrec_match
from .search import CURVE_COLUMNS, TABLE_COLUMNS, SweepGrid, curve_export, sweep

log = logging.getLogger("mrec")

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class Side:
    space: MetricSpace
    ids: np.ndarray
    labels: Optional[np.ndarray] = None


@dataclasses.dataclass
class RunConfig:
    raw: dict
    base: Path
    out: Path
    seed: Optional[int]
    workers: int
    header: bool
    record_timing: bool

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def side(self, key: str) -> Side:
        spec = self.raw.get(key)
        if not isinstance(spec, dict):
            raise ConfigError(f"config needs an object {key!r} describing the {key.upper()} space")
        has_pts, has_mat = "points" in spec, "matrix" in spec
        if has_pts == has_mat:
            raise ConfigError(f"{key!r} needs exactly one of 'points' or 'matrix'")
        if has_pts:
            pts = io.read_numeric_csv(self.path(spec["points"]), self.header)
            exponent = float(spec.get("exponent", 2.0))
            if spec.get("geodesic_k") is not None:
                space = build_geodesic_space(pts, int(spec["geodesic_k"]), exponent)
            else:
                space = build_euclidean_space(pts, exponent)
        else:
            space = build_explicit_space(io.read_matrix_csv(self.path(spec["matrix"]), self.header))
        labels = None
        if spec.get("labels") is not None:
            labels = io.read_labels(self.path(spec["labels"]), space.size)
        return Side(space, np.arange(space.size), labels)

    def true_map(self, x: Side, y: Side):
        if self.raw.get("true_map") is None:
            return None
        toks = io.read_labels(self.path(self.raw["true_map"]), x.space.size)
        ypos = {str(v): j for j, v in enumerate(y.ids)}
        try:
            return np.array([ypos[t] for t in toks], dtype=np.intp)
        except KeyError as exc:
            raise ConfigError(f"true_map names unknown y_id {exc.args[0]!r}") from None

    def linear_cost(self, x: Side, y: Side):
        if self.raw.get("linear_cost") is None:
            return None
        M = io.read_numeric_csv(self.path(self.raw["linear_cost"]), self.header)
        if M.shape != (x.space.size, y.space.size):
            raise ConfigError(f"linear_cost is {M.shape}, expected {(x.space.size, y.space.size)}")
        return M

    def params(self) -> MrecParams:
        cfg = dict(self.raw.get("params", {}))
        if self.seed is not None:
            cfg["seed"] = self.seed
        return MrecParams.from_dict(cfg)


def load_config(args) -> RunConfig:
    if args.config is None:
        raw, base = {}, Path.cwd()
    else:
        p = Path(args.config)
        try:
            raw = json.loads(p.read_text())
        except OSError as exc:
            raise ConfigError(f"{p}: cannot open ({exc.strerror})") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: line {exc.lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be an object")
        base = p.resolve().parent
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    workers = args.workers
    if workers is None and os.environ.get("MREC_WORKERS"):
        try:
            workers = int(os.environ["MREC_WORKERS"])
        except ValueError:
            raise ConfigError(f"MREC_WORKERS={os.environ['MREC_WORKERS']!r} is not an integer") from None
    if workers is None:
        workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    seed = args.seed if args.seed is not None else raw.get("seed")
    return RunConfig(
        raw=raw,
        base=base,
        out=Path(args.out),
        seed=None if seed is None else int(seed),
        workers=workers,
        header=bool(args.header or raw.get("header", False)),
        record_timing=bool(raw.get("record_timing", False)),
    )


def _ids(side: Side, positions):
    return [int(side.ids[k]) for k in positions]


def run_match(cfg: RunConfig) -> None:
    x, y = cfg.side("x"), cfg.side("y")
    params = cfg.params()
    lin = cfg.linear_cost(x, y)
    truth = cfg.true_map(x, y)
    t0 = time.perf_counter()
    m, trace = mrec_match(x.space, y.space, params, lin)
    elapsed = time.perf_counter() - t0
    rep = evaluate(
        m, x.space, y.space,
        labels_x=x.labels, labels_y=y.labels, true_map=truth,
        runtime_seconds=elapsed if cfg.record_timing else None,
        params=params.to_dict(),
    )
    io.write_matching_csv(cfg.out / "matching.csv", m, x.ids, y.ids)
    io.write_json(cfg.out / "report.json", rep.to_dict())
    io.write_json(cfg.out / "trace.json", trace.to_dict(timing=cfg.record_timing))
    log.info("matched %d -> %d points, distortion %.6g", x.space.size, y.space.size, rep.distortion)


def run_sweep(cfg: RunConfig) -> None:
    x, y = cfg.side("x"), cfg.side("y")
    gcfg = dict(cfg.raw.get("grid", {}))
    if cfg.seed is not None:
        gcfg["base_seed"] = cfg.seed
    try:
        grid = SweepGrid(**gcfg)
    except TypeError as exc:
        raise ConfigError(f"bad grid: {exc}") from None
    base = MrecParams.from_dict(cfg.raw.get("params", {}))
    res = sweep(
        x.space, y.space, grid,
        labels_x=x.labels, labels_y=y.labels, true_map=cfg.true_map(x, y),
        base_params=base, linear_cost=cfg.linear_cost(x, y), workers=cfg.workers,
    )
    rows = [r.row() for r in res.table]
    curves = curve_export(res.table)
    if not cfg.record_timing:
        for r in rows:
            r["runtime_seconds"] = None
        for r in curves:
            r["mean_runtime"] = None
    io.write_rows(cfg.out / "sweep_table.csv", TABLE_COLUMNS, rows)
    io.write_rows(cfg.out / "curves.csv", CURVE_COLUMNS, curves)
    if res.best is None:
        raise RuntimeError("every sweep cell failed; see sweep_table.csv")
    report = res.best_report.to_dict()
    if not cfg.record_timing:
        report["runtime_seconds"] = None
    io.write_matching_csv(cfg.out / "best_matching.csv", res.best.matching, x.ids, y.ids)
    io.write_json(cfg.out / "best_report.json", report)
    failed = sum(r.status != "ok" for r in res.table)
    log.info("sweep: %d cells, %d failed, best distortion %.6g", len(rows), failed, res.best.distortion)


def run_eval(cfg: RunConfig) -> None:
    x, y = cfg.side("x"), cfg.side("y")
    if cfg.raw.get("matching") is None:
        raise ConfigError("eval needs 'matching' (a matching CSV)")
    m = io.read_matching_csv(cfg.path(cfg.raw["matching"]), x.ids, y.ids)
    rep = evaluate(
        m, x.space, y.space,
        labels_x=x.labels, labels_y=y.labels, true_map=cfg.true_map(x, y),
        params=cfg.raw.get("params", {}),
    )
    io.write_json(cfg.out / "report.json", rep.to_dict())


def run_synth_gen(cfg: RunConfig) -> None:
    scfg = dict(cfg.raw.get("synth", {}))
    if cfg.seed is not None:
        scfg["seed"] = cfg.seed
    try:
        spec = SynthSpec(**scfg)
    except TypeError as exc:
        raise ConfigError(f"bad synth spec: {exc}") from None
    pts, labels = gen_gaussian_mixture(spec)
    io.write_points_csv(cfg.out / "points.csv", pts)
    io.write_labels(cfg.out / "labels.txt", labels)
    if cfg.raw.get("split", False):
        a, b = split_halves(pts, labels, spec.seed)
        for tag, ds in (("x", a), ("y", b)):
            io.write_points_csv(cfg.out / f"{tag}_points.csv", ds.space.coords)
            io.write_labels(cfg.out / f"{tag}_labels.txt", ds.labels)


COMMANDS = {
    "match": run_match,
    "sweep": run_sweep,
    "eval": run_eval,
    "synth-gen": run_synth_gen,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mrec", description="Recursive metric-space matching.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__name__.replace("run_", "").replace("_", "-"))
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", default=".", help="output directory (default: .)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--workers", type=int, help="worker processes (env MREC_WORKERS)")
        sp.add_argument("--header", action="store_true", help="input CSVs have a header row")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg = load_config(args)
        COMMANDS[args.command](cfg)
    except Exception as exc:
        err = {"error": {"type": type(exc).__name__, "message": str(exc), "command": args.command}}
        text = json.dumps(err, indent=2, sort_keys=True)
        print(text, file=sys.stderr)
        try:
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
        return 1
    (out / "error.json").unlink(missing_ok=True)  # stale from an earlier failure
    return 0


if __name__ == "__main__":
    sys.exit(main())
