"""CSV ingestion and fixed-format output."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .transport import Matching


class InputError(ValueError):
    """Malformed input file; the message names the file and line."""


def fmt(v) -> str:
    """Render a cell value; floats use 17 significant digits so they round-trip."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(v)


def read_numeric_csv(path, header: bool = False) -> np.ndarray:
    """Read a rectangular matrix of decimal floats.

    Raises :class:`InputError` naming the offending line for ragged rows,
    non-numeric cells or an empty file.
    """
    path = Path(path)
    rows: List[List[float]] = []
    width = None
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                bad = next(c for c in rec if not _is_float(c))
                raise InputError(f"{path}: line {lineno}: non-numeric value {bad.strip()!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputError(f"{path}: line {lineno}: non-finite value")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise InputError(
                    f"{path}: line {lineno}: expected {width} columns, found {len(vals)}"
                )
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_matrix_csv(path, header: bool = False) -> np.ndarray:
    M = read_numeric_csv(path, header)
    if M.shape[0] != M.shape[1]:
        raise InputError(f"{path}: distance matrix is {M.shape[0]} x {M.shape[1]}, not square")
    return M


def read_labels(path, n: Optional[int] = None) -> np.ndarray:
    """One label token per line; blank lines are errors so rows stay aligned."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from exc
    while lines and not lines[-1].strip():
        lines.pop()
    out = []
    for lineno, line in enumerate(lines, start=1):
        tok = line.strip()
        if not tok:
            raise InputError(f"{path}: line {lineno}: empty label")
        out.append(tok)
    if n is not None and len(out) != n:
        raise InputError(f"{path}: {len(out)} labels for {n} points")
    return np.asarray(out)


def write_labels(path, labels: Iterable) -> None:
    Path(path).write_text("".join(f"{fmt(v)}\n" for v in labels))


def write_points_csv(path, points: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        for row in np.atleast_2d(points):
            fh.write(",".join(fmt(float(v)) for v in row) + "\n")


def write_rows(path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c)) for c in columns])


def write_matching_csv(path, m: Matching, x_ids: Sequence, y_ids: Sequence) -> None:
    """Rows ``x_id,y_id,weight`` in X order."""
    x_ids = np.asarray(x_ids)
    y_ids = np.asarray(y_ids)
    weights = m.weights if m.weights is not None else np.ones(len(m.forward))
    rows = (
        {"x_id": x_ids[i], "y_id": y_ids[j], "weight": float(w)}
        for i, (j, w) in enumerate(zip(m.forward, weights))
    )
    write_rows(path, ["x_id", "y_id", "weight"], rows)


def read_matching_csv(path, x_ids: Sequence, y_ids: Sequence) -> Matching:
    """Parse a matching file back into positions of X and Y.

    Every X id must appear exactly once and every Y id must be known.
    """
    path = Path(path)
    xpos = {str(v): i for i, v in enumerate(x_ids)}
    ypos = {str(v): j for j, v in enumerate(y_ids)}
    fwd = np.full(len(xpos), -1, dtype=np.intp)
    wts = np.ones(len(xpos))
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None or [h.strip() for h in head[:2]] != ["x_id", "y_id"]:
            raise InputError(f"{path}: line 1: expected header 'x_id,y_id,weight'")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) not in (2, 3):
                raise InputError(f"{path}: line {lineno}: expected 2 or 3 columns, found {len(rec)}")
            xs, ys = rec[0].strip(), rec[1].strip()
            if xs not in xpos:
                raise InputError(f"{path}: line {lineno}: unknown x_id {xs!r}")
            if ys not in ypos:
                raise InputError(f"{path}: line {lineno}: unknown y_id {ys!r}")
            i = xpos[xs]
            if fwd[i] >= 0:
                raise InputError(f"{path}: line {lineno}: x_id {xs!r} matched twice")
            fwd[i] = ypos[ys]
            if len(rec) == 3 and rec[2].strip():
                try:
                    wts[i] = float(rec[2])
                except ValueError:
                    raise InputError(f"{path}: line {lineno}: bad weight {rec[2]!r}") from None
    missing = np.flatnonzero(fwd < 0)
    if len(missing):
        ids = [str(x_ids[k]) for k in missing[:5]]
        more = f" and {len(missing) - 5} more" if len(missing) > 5 else ""
        raise InputError(f"{path}: matching is missing x_id {', '.join(ids)}{more}")
    return Matching(fwd, wts)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
