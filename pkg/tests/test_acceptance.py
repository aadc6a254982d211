"""End-to-end acceptance checks.

Each test records one ``PASS``/``FAIL`` line, printed in the terminal
summary. Criteria 1 and 4 share a full default sweep on the 6,000-point
mixture (20 runs per cell, a long run); deselect with ``-m "not slow"``.
"""

import itertools
import json
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from mrec.cli import main as cli_main
from mrec.clustering import cluster_radius, voronoi_partition
from mrec.datagen import SynthSpec, gen_gaussian_mixture, gen_separated_clusters, split_halves
from mrec.evaluation import correspondence_distortion, label_accuracy, matching_distortion
from mrec.metric import build_euclidean_space, build_explicit_space
from mrec.recursion import MrecParams, mrec_match
from mrec.search import SweepGrid, sweep
from mrec.transport import brute_force_gh, entropic_gw, round_to_matching, sinkhorn, uniform


def record(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok


def workers():
    return min(4, os.cpu_count() or 1)


@pytest.fixture(scope="module")
def synth():
    pts, lab = gen_gaussian_mixture(SynthSpec())
    return split_halves(pts, lab, seed=0)


@pytest.fixture(scope="module")
def synth_sweep(synth):
    A, B = synth
    # warm the compiled kernels so the timing covers the sweep only
    mrec_match(A.space, B.space, MrecParams(C=10, epsilon=1.0))
    t0 = time.perf_counter()
    res = sweep(A.space, B.space, SweepGrid(), labels_x=A.labels, labels_y=B.labels, workers=workers())
    return res, time.perf_counter() - t0


@pytest.mark.slow
def test_c1_synth_reproduction(synth_sweep):
    res, wall = synth_sweep
    failed = sum(r.status != "ok" for r in res.table)
    acc = res.best.accuracy
    ok = acc >= 0.99 and wall < 1800
    assert record(
        "1 Synth reproduction",
        ok,
        f"best accuracy {acc:.4f} (>= 0.99) at C={res.best.C} eps={res.best.epsilon:g} "
        f"distortion {res.best.distortion:.4f}; sweep of {len(res.table)} cells "
        f"({failed} failed) took {wall:.0f} s with {workers()} worker(s) on "
        f"{os.cpu_count()} core(s) (< 1800 s)",
    )


def test_c2_synth_plus_scaling():
    prm = MrecParams(C=1000, epsilon=1e-2, seed=0)
    times, accs = {}, {}
    for spec in (SynthSpec(), SynthSpec.synth_plus()):
        pts, lab = gen_gaussian_mixture(spec)
        A, B = split_halves(pts, lab, seed=0)
        mrec_match(A.space, B.space, MrecParams(C=10, epsilon=1.0))
        t0 = time.perf_counter()
        m, _ = mrec_match(A.space, B.space, prm)
        times[spec.n_total] = time.perf_counter() - t0
        accs[spec.n_total] = label_accuracy(m, A.labels, B.labels)
    ratio = times[60000] / times[6000]
    ok = accs[60000] >= 0.99 and ratio <= 20
    assert record(
        "2 Synth+ scaling",
        ok,
        f"accuracy {accs[60000]:.4f} (>= 0.99); {times[60000]:.1f} s vs {times[6000]:.1f} s "
        f"at 6,000 points, ratio {ratio:.1f} (<= 20)",
    )


def test_c3_recursion_parity():
    pts, lab = gen_gaussian_mixture(SynthSpec(n_total=1000, seed=1))
    A, B = split_halves(pts, lab, seed=1)
    eps_grid = SweepGrid().epsilon_values
    DX, DY = A.space.matrix(), B.space.matrix()
    n, m = A.space.size, B.space.size
    direct = []
    for eps in eps_grid:
        t0 = time.perf_counter()
        r = entropic_gw(DX, DY, uniform(n), uniform(m), epsilon=eps)
        dt = time.perf_counter() - t0
        f = round_to_matching(r.coupling)
        direct.append((matching_distortion(f, A.space, B.space), eps, dt,
                       label_accuracy(f, A.labels, B.labels)))
    d_dist, d_eps, d_time, d_acc = min(direct)
    res = sweep(A.space, B.space, SweepGrid(C_values=[10, 100], runs_per_cell=5),
                labels_x=A.labels, labels_y=B.labels)
    best = res.best
    t0 = time.perf_counter()
    mrec_match(A.space, B.space, MrecParams.from_dict(best.params))
    m_time = time.perf_counter() - t0
    # like-for-like timing: the direct solve at the epsilon of the selected MREC run
    same_eps_time = next(dt for _, e, dt, _ in direct if e == best.epsilon)
    ok = best.accuracy >= d_acc - 0.01 and m_time <= same_eps_time
    assert record(
        "3 Recursion parity",
        ok,
        f"MREC accuracy {best.accuracy:.4f} (C={best.C}, eps={best.epsilon:g}) vs direct "
        f"{d_acc:.4f} (eps={d_eps:g}); MREC run {m_time:.2f} s vs direct {same_eps_time:.2f} s "
        f"at the same eps ({d_time:.2f} s at the direct optimum)",
    )


@pytest.mark.slow
def test_c4_distortion_trend(synth_sweep):
    res, _ = synth_sweep
    best = {}
    for r in res.table:
        if r.status == "ok" and r.run < 10:
            key = (r.C, r.run)
            best[key] = min(best.get(key, np.inf), r.distortion)
    lo = np.median([best[(10, k)] for k in range(10)])
    hi = np.median([best[(1000, k)] for k in range(10)])
    assert record(
        "4 Distortion trend", hi <= lo,
        f"median best distortion {hi:.4f} at C=1000 vs {lo:.4f} at C=10 over 10 seeds",
    )


def test_c5_four_r_bound():
    violations, worst = 0, -np.inf
    for t in range(200):
        rng = np.random.default_rng(t)
        n = int(rng.integers(6, 21))
        d = int(rng.integers(1, 4))
        X = build_euclidean_space(rng.normal(size=(n, d)) * rng.uniform(0.5, 3))
        Y = build_euclidean_space(rng.normal(size=(n, d)) * rng.uniform(0.5, 3))
        C = int(rng.integers(2, 6))
        ax = voronoi_partition(X, C, seed=2 * t)
        ay = voronoi_partition(Y, C, seed=2 * t + 1)
        r = max(cluster_radius(X, ax), cluster_radius(Y, ay))
        RX = X.matrix()[np.ix_(ax.representatives, ax.representatives)]
        RY = Y.matrix()[np.ix_(ay.representatives, ay.representatives)]
        gh, Rp = brute_force_gh(RX, RY)
        dis_rep = correspondence_distortion(Rp, RX, RY)
        R = [
            (x, y)
            for cx, cy in Rp
            for x in np.flatnonzero(ax.assignment == cx)
            for y in np.flatnonzero(ay.assignment == cy)
        ]
        assert {x for x, _ in R} == set(range(n)) and {y for _, y in R} == set(range(n))
        dis = correspondence_distortion(R, X, Y)
        slack = dis - (dis_rep + 4 * r)
        worst = max(worst, slack)
        violations += slack > 1e-9
    assert record(
        "5 4r bound", violations == 0,
        f"{violations} violations in 200 instances (max dis(R) - dis(R') - 4r = {worst:.3g})",
    )


def test_c6_well_separated_recovery():
    hits = 0
    for t in range(100):
        pts, lab = gen_separated_clusters(K=4, delta=10.0, eta=1.0, points_per_cluster=25, seed=t)
        rng = np.random.default_rng(10_000 + t)
        q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        perm = rng.permutation(len(pts))
        # Y is a shuffled rigid motion of X; cluster k of X corresponds to cluster k of Y
        ypts, ylab = (pts @ q + rng.normal(size=2) * 50)[perm], lab[perm]
        X, Y = build_euclidean_space(pts), build_euclidean_space(ypts)
        _, trace = mrec_match(X, Y, MrecParams(C=4, clusterer="kmeans", seed=t))
        root = trace.root()
        if root.pairing is None:
            continue
        rx = lab[root.reps_x]
        ry = ylab[np.asarray(root.reps_y)[root.pairing]]
        hits += sorted(rx) == [0, 1, 2, 3] and np.array_equal(rx, ry)
    assert record(
        "6 Well-separated recovery", hits >= 95,
        f"top-level pairing equals ground truth in {hits}/100 trials (>= 95)",
    )


def perm_gw(DX, DY, p=2):
    n = len(DX)
    vals = [
        (np.abs(DX - DY[np.ix_(q, q)]) ** p).sum() / n**2
        for q in map(np.array, itertools.permutations(range(n)))
    ]
    return min(vals) ** (1.0 / p)


def test_c7a_sinkhorn_residual():
    worst, bad = 0.0, 0
    eps_grid = [10.0, 1.0, 1e-1, 1e-2, 1e-3, 1e-4]
    for t in range(1000):
        rng = np.random.default_rng(t)
        n, m = rng.integers(1, 31, size=2)
        mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
        C = rng.uniform(size=(n, m)) * 10.0 ** rng.integers(-3, 4)
        P = sinkhorn(C, mu, nu, eps_grid[t % 6]).coupling.matrix
        res = max(np.abs(P.sum(1) - mu).max(), np.abs(P.sum(0) - nu).max())
        worst = max(worst, res)
        bad += not (res < 1e-6 and np.all(P >= 0))
    assert record(
        "7a Sinkhorn marginals", bad == 0,
        f"{bad}/1000 instances with residual >= 1e-6 (max residual {worst:.2e})",
    )


def test_c7b_gw_vs_permutation_oracle():
    eps = 1e-3
    hits = 0
    for t in range(100):
        rng = np.random.default_rng(t)
        DX = build_euclidean_space(rng.normal(size=(4, 2))).matrix()
        DY = build_euclidean_space(rng.normal(size=(4, 2))).matrix()
        oracle = perm_gw(DX, DY)
        r = entropic_gw(DX, DY, uniform(4), uniform(4), epsilon=eps)
        hits += abs(r.cost - oracle) <= 0.05 * oracle
    assert record(
        "7b Entropic GW vs oracle", hits >= 90,
        f"within 5% of the permutation optimum on {hits}/100 random 4-point instances "
        f"at eps={eps:g} (>= 90)",
    )


def test_c7c_gh_metric_axioms():
    bad = 0
    for t in range(100):
        rng = np.random.default_rng(t)
        S = [build_euclidean_space(rng.normal(size=(int(rng.integers(1, 5)), 2))).matrix()
             for _ in range(3)]
        d = {(i, j): brute_force_gh(S[i], S[j])[0] for i in range(3) for j in range(3)}
        bad += any(abs(d[i, j] - d[j, i]) > 1e-9 for i in range(3) for j in range(3))
        bad += any(d[i, k] > d[i, j] + d[j, k] + 1e-9
                   for i, j, k in itertools.permutations(range(3)))
    assert record(
        "7c GH symmetry and triangle inequality", bad == 0,
        f"{bad} violations over 100 random triples",
    )


def test_c8_determinism(tmp_path):
    def twice(cmd, cfg):
        (tmp_path / f"{cmd}.json").write_text(json.dumps(cfg))
        outs = []
        for k in range(2):
            out = tmp_path / f"{cmd}{k}"
            rc = cli_main([cmd, "--config", str(tmp_path / f"{cmd}.json"), "--out", str(out), "--seed", "7"])
            assert rc == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        return outs[0] == outs[1] and len(outs[0]) > 0

    same = {}
    same["synth-gen"] = twice("synth-gen", {"schema_version": 1, "synth": {}, "split": True})
    data = tmp_path / "synth-gen0"
    sides = {
        "x": {"points": str(data / "x_points.csv"), "labels": str(data / "x_labels.txt")},
        "y": {"points": str(data / "y_points.csv"), "labels": str(data / "y_labels.txt")},
    }
    same["match"] = twice("match", dict(sides, params={"C": 100, "epsilon": 0.1}))
    same["sweep"] = twice("sweep", dict(sides, grid={"epsilon_values": [1.0, 0.1],
                                                     "C_values": [10, 100], "runs_per_cell": 2}))
    same["eval"] = twice("eval", dict(sides, matching=str(tmp_path / "match0" / "matching.csv")))
    ok = all(same.values())
    assert record(
        "8 Determinism", ok,
        "byte-identical outputs on the Synth fixture: "
        + ", ".join(f"{k}={'yes' if v else 'no'}" for k, v in same.items()),
    )
