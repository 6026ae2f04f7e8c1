import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.linear_model import LogisticRegression

from modbalance.data import MultimodalBatch, Splits, SyntheticSpec, generate_synthetic
from modbalance.evaluation import (ContractError, ProbeConfig, RunRecord, accuracy, mean_average_precision,
                                   linear_probe, read_trace_csv, summarize_ratio_trace, write_trace_csv)
from modbalance.model import Encoder, init_encoder


def test_accuracy_cases():
    y = np.array([0, 2, 1])
    assert accuracy(np.eye(3)[y], y) == 1.0
    assert accuracy(np.zeros((3, 3)), np.array([1, 2, 1])) == 0.0
    rng = np.random.default_rng(0)
    z, lab = rng.standard_normal((50, 4)), rng.integers(0, 4, 50)
    count = sum(1 for row, t in zip(z, lab) if max(range(4), key=lambda c: (row[c], -c)) == t)
    assert accuracy(z, lab) == count / 50
    with pytest.raises(ContractError):
        accuracy(np.zeros((0, 2)), np.zeros(0, dtype=int))


def test_map_perfect_and_last():
    y = np.array([0, 1, 0, 1])
    assert mean_average_precision(np.eye(2)[y], y) == 1.0
    # class 1: its single positive is ranked last of 5
    scores = np.zeros((5, 2))
    scores[:, 1] = [5, 4, 3, 2, 1]
    labels = np.array([0, 0, 0, 0, 1])
    ap1 = 1 / 5
    # class 0: all-equal scores keep index order, so its positives hold ranks 1..4
    assert mean_average_precision(scores, labels) == pytest.approx((1.0 + ap1) / 2)


def test_map_hand_fixture():
    scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.6, 0.4], [0.2, 0.8], [0.5, 0.5]])
    labels = np.array([0, 1, 1, 0, 1, 0])
    # class 0 ranking: s0(+), s1(-), s3(+), s5(+), s2, s4 -> precisions 1, 2/3, 3/4
    ap0 = (1 + 2 / 3 + 3 / 4) / 3
    # class 1 ranking: s4(+), s2(+), s5(-), s3(-), s1(+), s0(-) -> precisions 1, 1, 3/5
    ap1 = (1 + 1 + 3 / 5) / 3
    assert mean_average_precision(scores, labels) == pytest.approx((ap0 + ap1) / 2, abs=1e-15)


def test_map_errors():
    with pytest.raises(ContractError):
        mean_average_precision(np.zeros((3, 1)), np.zeros(3, dtype=int))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_metrics_permutation_invariant_and_bounded(seed):
    rng = np.random.default_rng(seed)
    z, y = rng.standard_normal((20, 3)), rng.integers(0, 3, 20)
    perm = rng.permutation(20)
    assert accuracy(z, y) == accuracy(z[perm], y[perm])
    m = mean_average_precision(z, y)
    assert m == pytest.approx(mean_average_precision(z[perm], y[perm]), abs=1e-12)
    assert 0 <= m <= 1 and 0 <= accuracy(z, y) <= 1


def test_probe_identity_matches_logistic_oracle():
    sp = generate_synthetic(SyntheticSpec(n_classes=3, d_a=4, d_v=4, separation_a=2.5, n_train=1500, n_val=100,
                                          n_test=1500))
    ident = Encoder([np.eye(4)], [np.zeros(4)])
    acc = linear_probe(ident, sp, "a", np.random.default_rng(0))
    oracle = LogisticRegression(max_iter=2000).fit(sp.train.x_a, sp.train.labels).score(sp.test.x_a, sp.test.labels)
    assert abs(acc - oracle) <= 0.02


def test_probe_uninformative_is_chance_and_deterministic():
    sp = generate_synthetic(SyntheticSpec(separation_v=0.0, n_train=1200, n_val=100, n_test=2000))
    enc = init_encoder([24, 16, 8], np.random.default_rng(1))
    before = [w.copy() for w in enc.weights + enc.biases]
    acc = linear_probe(enc, sp, "v", np.random.default_rng(5), ProbeConfig(epochs=5))
    assert abs(acc - 1 / 6) < 0.04
    assert all(np.array_equal(a, b) for a, b in zip(before, enc.weights + enc.biases))
    assert acc == linear_probe(enc, sp, "v", np.random.default_rng(5), ProbeConfig(epochs=5))


def test_ratio_summary():
    assert summarize_ratio_trace([1.0] * 7) == (1.0, 1.0, 1.0)
    assert summarize_ratio_trace(list(range(1, 11))) == (5.5, 10.0, 10.0)
    rng = np.random.default_rng(2)
    t = rng.random(95) * 3
    mean, mx, last = summarize_ratio_trace(t)
    w = t[len(t) - 10:]
    assert mean == pytest.approx(sum(t) / len(t)) and mx == max(t) and last == pytest.approx(sum(w) / 10)
    with pytest.raises(ContractError):
        summarize_ratio_trace([])


def test_run_record_round_trip(tmp_path):
    rec = RunRecord({"strategy": "joint"}, 3)
    rec.trace = {"step": [0, 1], "loss": [1.25, 0.1 + 0.2], "rho_a": [1.0, 2.0], "k_a": [1.0, 0.3], "k_v": [1.0, 1.0]}
    rec.final = {"test_acc": 0.5}
    rec.save(tmp_path / "r.json")
    back = RunRecord.load(tmp_path / "r.json")
    assert back == rec
    write_trace_csv(tmp_path / "t.csv", rec)
    assert read_trace_csv(tmp_path / "t.csv") == rec.trace
