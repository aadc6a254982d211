import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrec.evaluation import (
    EvalReport,
    EvaluationError,
    correspondence_auc,
    correspondence_distortion,
    distortion_is_estimated,
    evaluate,
    label_accuracy,
    matching_distortion,
)
from mrec.metric import build_euclidean_space, build_explicit_space
from mrec.transport import Matching


def brute_distortion(f, DX, DY):
    n = len(f)
    return max(
        [abs(DX[i, j] - DY[f[i], f[j]]) for i, j in itertools.combinations(range(n), 2)] + [0.0]
    )


class TestDistortion:
    def test_identity(self, rng):
        X = build_euclidean_space(rng.normal(size=(10, 2)))
        assert matching_distortion(np.arange(10), X, X) == 0.0

    def test_two_point(self):
        X = build_explicit_space([[0, 1], [1, 0]])
        Y = build_explicit_space([[0, 3], [3, 0]])
        assert matching_distortion(Matching([1, 0]), X, Y) == 2.0

    def test_random_five_point(self, rng):
        X = build_euclidean_space(rng.normal(size=(5, 2)))
        Y = build_euclidean_space(rng.normal(size=(5, 3)))
        f = rng.permutation(5)
        assert matching_distortion(f, X, Y) == pytest.approx(brute_distortion(f, X.matrix(), Y.matrix()))

    def test_relabeling_invariance(self, rng):
        pts = rng.normal(size=(12, 2))
        X = build_euclidean_space(pts)
        Y = build_euclidean_space(rng.normal(size=(9, 2)))
        f = rng.integers(9, size=12)
        perm = rng.permutation(12)
        Xp = build_euclidean_space(pts[perm])
        assert matching_distortion(f[perm], Xp, Y) == pytest.approx(matching_distortion(f, X, Y))

    def test_monte_carlo_near_cap(self, rng):
        n = 400
        X = build_euclidean_space(rng.normal(size=(n, 2)))
        Y = build_euclidean_space(rng.normal(size=(n, 2)))
        f = rng.permutation(n)
        for cap in (int(n * 0.9), int(n * 1.1)):
            est = matching_distortion(f, X, Y, cap=cap, samples=10**6)
            assert distortion_is_estimated(n, cap) == (n > cap)
            exact = matching_distortion(f, X, Y)
            assert abs(est - exact) <= 0.05 * exact

    def test_incomplete(self, rng):
        X = build_euclidean_space(rng.normal(size=(4, 2)))
        with pytest.raises(EvaluationError):
            matching_distortion(np.arange(3), X, X)

    def test_relation_distortion(self):
        DX = np.array([[0, 1], [1, 0.0]])
        DY = np.array([[0, 3], [3, 0.0]])
        assert correspondence_distortion([(0, 0), (1, 1)], DX, DY) == 2.0
        assert correspondence_distortion([(0, 0), (0, 1), (1, 0), (1, 1)], DX, DY) == 3.0


class TestAccuracy:
    def test_all_same(self):
        assert label_accuracy([0, 1, 1], ["a"] * 3, ["a"] * 2) == 1.0

    def test_swap(self):
        assert label_accuracy([1, 0], [0, 1], [0, 1]) == 0.0

    def test_within_cluster(self):
        assert label_accuracy([1, 0, 3, 2], [0, 0, 1, 1], [0, 0, 1, 1]) == 1.0

    def test_rename_invariance(self, rng):
        lx, ly = rng.integers(3, size=20), rng.integers(3, size=15)
        f = rng.integers(15, size=20)
        names = np.array(["u", "v", "w"])
        assert label_accuracy(f, lx, ly) == label_accuracy(f, names[lx], names[ly])

    def test_missing(self):
        with pytest.raises(EvaluationError):
            label_accuracy([0], None, [0])


class TestAUC:
    def test_perfect(self, rng):
        Y = build_euclidean_space(rng.normal(size=(6, 2)))
        assert correspondence_auc(np.arange(6), np.arange(6), Y) == 1.0

    def test_all_at_diameter(self):
        Y = build_euclidean_space([[0.0], [5.0]])
        assert correspondence_auc([1, 0], [0, 1], Y) == 0.0

    def test_two_point_half(self):
        Y = build_euclidean_space([[0.0], [1.0]])
        assert correspondence_auc([0, 0], [0, 1], Y) == pytest.approx(0.5)

    def test_against_numeric_integration(self, rng):
        Y = build_euclidean_space(rng.normal(size=(15, 2)))
        f, t = rng.integers(15, size=15), rng.integers(15, size=15)
        D = Y.matrix().max()
        err = np.array([Y.distance(a, b) for a, b in zip(f, t)])
        r = np.linspace(0, D, 200001)
        alpha = (err[None, :] <= r[:, None]).mean(axis=1)
        ref = np.trapezoid(alpha, r) / D if hasattr(np, "trapezoid") else np.trapz(alpha, r) / D
        assert correspondence_auc(f, t, Y) == pytest.approx(ref, abs=1e-4)

    def test_missing_truth(self, rng):
        with pytest.raises(EvaluationError):
            correspondence_auc([0], None, build_euclidean_space([[0.0]]))


class TestReport:
    def test_optional_metrics_absent(self, rng):
        X = build_euclidean_space(rng.normal(size=(5, 2)))
        rep = evaluate(np.arange(5), X, X, labels_x=np.zeros(5))
        d = json.loads(rep.to_json())
        assert "accuracy" not in d and "auc" not in d
        assert set(d) == {"distortion", "distortion_estimated", "runtime_seconds", "params"}

    def test_all_metrics(self, rng):
        X = build_euclidean_space(rng.normal(size=(5, 2)))
        rep = evaluate(np.arange(5), X, X, labels_x=np.zeros(5), labels_y=np.zeros(5),
                       true_map=np.arange(5), runtime_seconds=1.5, params={"C": 3})
        assert (rep.distortion, rep.accuracy, rep.auc) == (0.0, 1.0, 1.0)
        assert rep.to_dict()["params"] == {"C": 3}

    def test_invariants(self):
        with pytest.raises(EvaluationError):
            EvalReport(distortion=-1.0)
        with pytest.raises(EvaluationError):
            EvalReport(distortion=0.0, accuracy=1.5)


@given(n=st.integers(1, 8), m=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_distortion_brute_force_property(n, m, seed):
    rng = np.random.default_rng(seed)
    X = build_euclidean_space(rng.normal(size=(n, 2)))
    Y = build_euclidean_space(rng.normal(size=(m, 2)))
    f = rng.integers(m, size=n)
    assert matching_distortion(f, X, Y) == pytest.approx(brute_distortion(f, X.matrix(), Y.matrix()))
