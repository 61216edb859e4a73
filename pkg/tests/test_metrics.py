import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lprlab import metrics
from lprlab.metrics import EvalRecord, RunLog
from lprlab.net import InputError
from lprlab.precond import PreconditionerState


def make_log(boundaries, points):
    log = RunLog(task_boundaries=list(boundaries))
    for tau, accs in points:
        log.append(EvalRecord(tau, list(accs)))
    return log


def test_hand_fixtures():
    assert metrics.final_acc(make_log([10], [(1, [0.5]), (2, [0.7])])) == pytest.approx(0.7)
    assert metrics.average_anytime_acc(make_log([10], [(1, [0.5]), (2, [0.7])])) == pytest.approx(0.6)
    log = make_log([1, 2], [(1, [0.5]), (2, [0.4, 0.8])])
    assert metrics.average_anytime_acc(log) == pytest.approx(0.55)
    log = make_log([1, 3], [(1, [0.9]), (2, [0.4, 0.7]), (3, [0.6, 0.8])])
    assert metrics.worst_case_acc(log) == pytest.approx(0.6)
    single = make_log([5], [(1, [0.3]), (5, [0.65])])
    assert metrics.worst_case_acc(single) == metrics.final_acc(single)
    assert metrics.total_variation([0.2, 0.5, 0.3]) == pytest.approx(0.5)
    assert metrics.total_variation([0.4] * 5) == 0.0
    assert metrics.representation_drift([[0.0, 0.0], [0.6, 0.8]]) == pytest.approx(1.0)
    assert metrics.representation_drift(np.ones((4, 3))) == 0.0


def test_final_acc_prefers_test_accuracies():
    log = make_log([1], [(1, [0.5])])
    log.final_test_acc = [0.25, 0.75]
    assert metrics.final_acc(log) == 0.5


def test_constant_log_metrics():
    pts = [(t, [0.42] * (1 + (t > 3) + (t > 6))) for t in range(1, 10)]
    log = make_log([3, 6, 9], pts)
    for fn in (metrics.final_acc, metrics.average_anytime_acc, metrics.worst_case_acc):
        assert fn(log) == pytest.approx(0.42, abs=1e-15)


def test_monotone_wc_uses_first_window_point():
    log = make_log([2, 4], [(1, [0.1]), (2, [0.2]), (3, [0.3, 0.5]), (4, [0.6, 0.9])])
    assert metrics.worst_case_acc(log) == pytest.approx((0.3 + 0.9) / 2)


def test_metric_errors():
    with pytest.raises(InputError):
        metrics.average_anytime_acc(RunLog([1]))
    with pytest.raises(InputError):
        metrics.average_anytime_acc(make_log([1, 2], [(1, [0.5]), (2, [0.5])]))
    with pytest.raises(InputError):
        metrics.worst_case_acc(make_log([4, 8], [(1, [0.5]), (3, [0.5, 0.5])]))
    with pytest.raises(InputError):
        metrics.total_variation([0.3])
    with pytest.raises(InputError):
        metrics.representation_drift([[1.0, 2.0]])
    with pytest.raises(InputError):
        make_log([1], [(2, [0.5]), (2, [0.5])])
    with pytest.raises(InputError):
        make_log([1], [(1, [1.5])])


def naive_aaa(boundaries, points):
    vals = []
    for _, accs in points:
        vals.append(sum(accs) / len(accs))
    return sum(vals) / len(vals)


def naive_wc(boundaries, points):
    last_tau, last = points[-1]
    k = len(last)
    total = last[-1]
    for i in range(k - 1):
        worst = 1.0
        for tau, accs in points:
            if boundaries[i] < tau <= last_tau:
                worst = min(worst, accs[i])
        total += worst
    return total / k


def random_log(rng):
    k = int(rng.integers(1, 5))
    per = int(rng.integers(2, 6))
    boundaries = [per * (i + 1) for i in range(k)]
    points = []
    for tau in range(1, per * k + 1):
        seen = 1 + sum(b < tau for b in boundaries[:-1])
        points.append((tau, list(rng.uniform(size=seen))))
    return boundaries, points


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_randomized_logs_against_naive(seed):
    rng = np.random.default_rng(seed)
    boundaries, points = random_log(rng)
    log = make_log(boundaries, points)
    aaa, wc, acc = metrics.average_anytime_acc(log), metrics.worst_case_acc(log), metrics.final_acc(log)
    assert aaa == pytest.approx(naive_aaa(boundaries, points), abs=1e-12)
    assert wc == pytest.approx(naive_wc(boundaries, points), abs=1e-12)
    assert acc == pytest.approx(sum(points[-1][1]) / len(points[-1][1]), abs=1e-12)
    assert 0 <= wc <= acc + 1e-12
    for task in range(len(boundaries)):
        taus, series = log.series(task)
        if len(series) > 1:
            tv = sum(abs(b - a) for a, b in zip(series, series[1:]))
            assert metrics.total_variation(series) == pytest.approx(tv, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_drift_tracker_and_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    reps = rng.normal(size=(6, 4, 3))
    per_point = metrics.representation_drift(reps)
    tracker = metrics.DriftTracker()
    for r in reps:
        tracker.update(r)
    np.testing.assert_allclose(tracker.total, per_point, rtol=1e-12)
    for i in range(4):
        single = metrics.representation_drift(reps[:, i])
        assert single >= np.linalg.norm(reps[-1, i] - reps[0, i]) - 1e-12
        loop = sum(math.dist(reps[j + 1, i], reps[j, i]) for j in range(5))
        assert single == pytest.approx(loop, rel=1e-12)


def test_grad_norm_ratio():
    state = PreconditionerState([np.array([[0.5, 0.0], [0.0, 1.0]])])
    per_layer, total = metrics.grad_norm_ratio([np.array([[2.0, 0.0], [0.0, 2.0]])], state)
    assert total == pytest.approx(math.sqrt(5) / math.sqrt(8), rel=1e-15)
    assert per_layer[0] == total
    ident = PreconditionerState([np.eye(3), np.eye(2)])
    per_layer, total = metrics.grad_norm_ratio([np.ones((3, 2)), np.zeros((2, 1))], ident)
    assert total == 1.0 and per_layer == [1.0, None]
    assert metrics.grad_norm_ratio([np.zeros((3, 2)), np.zeros((2, 1))], ident)[1] is None


def test_mean_stderr():
    mean, se = metrics.mean_stderr([1.0, 2.0, 6.0])
    assert mean == 3.0
    # sample variance ((-2)^2 + (-1)^2 + 3^2) / 2 = 7
    assert se == pytest.approx(math.sqrt(7 / 3), rel=1e-15)
    assert metrics.mean_stderr([4.0]) == (4.0, 0.0)
    with pytest.raises(InputError):
        metrics.mean_stderr([])


def test_sign_test():
    assert metrics.sign_test(10, 0) == pytest.approx(0.5 ** 10)
    assert metrics.sign_test(9, 1) == pytest.approx(11 / 1024)
    assert metrics.sign_test(9, 1) < 0.05 < metrics.sign_test(8, 2)
    assert metrics.sign_test(0, 0) == 1.0


def test_log_round_trip(tmp_path):
    log = make_log([2, 4], [(2, [0.5]), (4, [0.25, 0.75])])
    for r in log.records:
        r.loss = 0.1
    log.records[0].ratios = {"new": 0.9}
    log.records[1].drift = 1.5
    path = tmp_path / "log.jsonl"
    metrics.write_log(log, path)
    back = metrics.read_log(path, [2, 4])
    assert back.records == log.records
    metrics.write_summary([{"method": "er", "seed": 0, "acc": 0.5}], tmp_path / "s.csv")
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header.split(",") == metrics.SUMMARY_COLUMNS
