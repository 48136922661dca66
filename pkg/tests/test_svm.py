import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from xmltk import dcd, svm
from xmltk.corpus import Article, LabelEntry, LabelVocabulary
from xmltk.features import SparseVector


def brute_force_primal(X, y, C):
    """Minimize the augmented primal with a quasi-Newton method from several starts."""
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])

    def f(w):
        m = np.maximum(0.0, 1.0 - y * (Xa @ w))
        return 0.5 * w @ w + C * np.sum(m * m), w - 2 * C * Xa.T @ (y * m)

    best = None
    for start in (np.zeros(Xa.shape[1]), np.ones(Xa.shape[1]), -np.ones(Xa.shape[1])):
        r = minimize(f, start, jac=True, method="L-BFGS-B", options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10000})
        if best is None or r.fun < best.fun:
            best = r
    return best.fun


def random_problem(rng):
    n = int(rng.integers(2, 11))
    d = int(rng.integers(1, 4))
    X = rng.normal(size=(n, d))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    y[0], y[-1] = 1.0, -1.0
    C = float(10 ** rng.uniform(-1, 1))
    return X, y, C


def dcd_objective(X, y, C):
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    w, _ = dcd.solve(Xa, y, C=C, tol=1e-10, max_iter=100000)
    return float(dcd.primal_objective(Xa, y[:, None], w[:, None], C)[0])


@pytest.mark.parametrize("seed", range(20))
def test_dcd_matches_brute_force_primal(seed):
    X, y, C = random_problem(np.random.default_rng(seed))
    assert abs(dcd_objective(X, y, C) - brute_force_primal(X, y, C)) <= 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_dual_objective_never_increases(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(15, 4))
    Y = np.where(rng.random((15, 3)) < 0.4, 1.0, -1.0)
    _, info = dcd.solve(X, Y, C=1.0, tol=1e-8, max_iter=50, seed=seed)
    hist = np.array(info.dual_history)
    assert np.all(np.diff(hist, axis=0) <= 1e-12)


def test_columns_are_independent_problems():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 5))
    Y = np.where(rng.random((20, 3)) < 0.5, 1.0, -1.0)
    W, _ = dcd.solve(X, Y, C=0.5, tol=1e-9, max_iter=5000)
    for j in range(3):
        w, _ = dcd.solve(X, Y[:, j], C=0.5, tol=1e-9, max_iter=5000)
        np.testing.assert_allclose(W[:, j], w, atol=1e-7)


def test_default_config():
    cfg = svm.SvmConfig()
    assert (cfg.C, cfg.min_label_frequency, cfg.plane_shift) == (1.0, 20, -0.3)
    with pytest.raises(ValueError):
        svm.SvmConfig(C=0)
    with pytest.raises(ValueError):
        svm.SvmConfig(min_label_frequency=0)


def _vocab(codes):
    return LabelVocabulary([LabelEntry(c, c, ()) for c in codes])


def test_two_point_max_margin():
    train = [(SparseVector([0], [1.0]), {"P"}), (SparseVector([0], [-1.0]), set())]
    m = svm.train_ovr(train, _vocab(["P"]), svm.SvmConfig(C=1e6, min_label_frequency=1, tolerance=1e-10,
                                                       max_iterations=100000))
    assert m.weights[0].to_dict()[0] == pytest.approx(1.0, abs=1e-4)
    assert m.biases[0] == pytest.approx(0.0, abs=1e-4)
    raw = m.decision_matrix(np.array([[1.0], [-1.0]]), "margin")[:, 0]
    assert raw[0] >= 1 - 1e-4 and -raw[1] >= 1 - 1e-4


def _toy_training(rng, n=60, d=8, labels=("A", "B", "C")):
    out = []
    for _ in range(n):
        x = rng.normal(size=d)
        g = {lab for j, lab in enumerate(labels) if x[j] > 0}
        nz = np.flatnonzero(x)
        out.append((SparseVector(nz, x[nz]), g))
    return out


def test_frequency_cutoff():
    rng = np.random.default_rng(0)
    train = _toy_training(rng)
    rare = [(x, g | {"R"}) if i < 5 else (x, g) for i, (x, g) in enumerate(train)]
    m = svm.train_ovr(rare, _vocab(["A", "B", "C", "R"]), svm.SvmConfig(min_label_frequency=20))
    assert "R" not in m.trained_labels
    assert {"A", "B", "C"} <= m.trained_labels
    assert all(np.isfinite(w.weights).all() for w in m.weights)


def _same_per_label(m1, m2):
    """Each label's (w, b) agrees up to floating-point summation order."""
    assert sorted(m1.labels) == sorted(m2.labels)
    W1, _ = m1._matrix()
    W2, _ = m2._matrix()
    for c in m1.labels:
        i, j = m1.labels.index(c), m2.labels.index(c)
        np.testing.assert_allclose(W1[:, i], W2[:, j], rtol=1e-10, atol=1e-12)
        assert m1.biases[i] == pytest.approx(m2.biases[j], rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_labels_are_independent_problems(seed):
    labels = list("ABCDEFGH")
    train = _toy_training(np.random.default_rng(seed), n=120, d=20, labels=tuple(labels))
    cfg = svm.SvmConfig(min_label_frequency=1)
    base = svm.train_ovr(train, _vocab(labels), cfg)
    shuffled = list(np.random.default_rng(seed + 100).permutation(labels))
    _same_per_label(base, svm.train_ovr(train, _vocab(shuffled), cfg))
    _same_per_label(base, svm.train_ovr(train, _vocab(labels), svm.SvmConfig(min_label_frequency=1, label_block=3)))


def _model(w, b, shift=-0.3, units="distance"):
    w = np.asarray(w, dtype=float)
    nz = np.flatnonzero(w)
    return svm.SvmOvrModel(len(w), ["L"], [SparseVector(nz, w[nz])], [b], shift, units)


def test_score_is_signed_distance():
    assert svm.score(_model([3, 4], 0.0), SparseVector([0], [1.0]))["L"] == pytest.approx(0.6)
    assert svm.score(_model([3, 4], -3.0), SparseVector([0], [1.0]))["L"] == pytest.approx(0.0)
    x = SparseVector([0, 1], [0.3, -0.7])
    a = svm.score(_model([3, 4], 0.5), x)["L"]
    b = svm.score(_model([6, 8], 1.0), x)["L"]
    assert a == pytest.approx(b, abs=1e-12)


@pytest.mark.parametrize("units", ["distance", "margin"])
def test_shift_rule(units):
    m = _model([1.0, 0.0], 0.0, units=units)  # unit normal: distance equals margin
    assert svm.predict(m, SparseVector([0], [0.1])) == {"L"}
    assert svm.predict(m, SparseVector([0], [-0.4])) == set()
    assert svm.predict(m, SparseVector([0], [-1e9]), shift=-math.inf) == {"L"}


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 1000))
def test_prediction_monotone_in_shift(s1, s2, seed):
    hi, lo = max(s1, s2), min(s1, s2)
    rng = np.random.default_rng(seed)
    train = _toy_training(rng, n=30)
    m = svm.train_ovr(train, _vocab(["A", "B", "C"]), svm.SvmConfig(min_label_frequency=1))
    xs = [x for x, _ in _toy_training(rng, n=10)]
    for a, b in zip(svm.predict_batch(m, xs, hi), svm.predict_batch(m, xs, lo)):
        assert a <= b


def test_untrained_labels_never_scored():
    train = _toy_training(np.random.default_rng(2))
    m = svm.train_ovr(train, _vocab(["A", "B", "C", "Z"]), svm.SvmConfig(min_label_frequency=1))
    assert "Z" not in svm.score(m, train[0][0])
    assert "Z" not in svm.predict(m, train[0][0], shift=-math.inf)


def test_save_load_round_trip(tmp_path):
    train = _toy_training(np.random.default_rng(4))
    m = svm.train_ovr(train, _vocab(["A", "B", "C"]), svm.SvmConfig(min_label_frequency=1))
    svm.save(m, tmp_path / "a.bin")
    back = svm.load(tmp_path / "a.bin")
    assert back == m
    svm.save(back, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOTMODEL" + bytes(32))
    with pytest.raises(ValueError, match="not an SVM"):
        svm.load(tmp_path / "x.bin")
