from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedbac.metrics import (
    byte_reduction,
    cluster_dynamics,
    comm_cost_round,
    convergence_ratio,
    distributed_accuracy,
    evaluate,
    fairness_stats,
    global_objective,
    server_objective,
)
from fedbac.model import AdditiveModel, LearnerConfig
from fedbac.rng import RngStream

from .helpers import class_partition


def test_distributed_accuracy_cases():
    assert distributed_accuracy([0.4] * 7) == pytest.approx(0.4, abs=1e-15)
    assert distributed_accuracy([0.83]) == 0.83
    vals = [0.6954, 0.7694, 0.7121, 0.6630, 0.8012, 0.7345, 0.6899, 0.7433, 0.7710, 0.7008]
    naive = 0.0
    for v in vals:
        naive += v
    assert abs(distributed_accuracy(vals) - naive / 10) < 1e-12
    assert abs(distributed_accuracy(vals[::-1]) - distributed_accuracy(vals)) < 1e-12


def test_fairness_stats_cases():
    assert fairness_stats(np.full((12, 3), 0.7)).sigma == 0.0
    s = fairness_stats(np.tile([40.0, 60.0], (10, 1)))
    assert (s.mean, s.sigma, s.min, s.max) == (50.0, 10.0, 40.0, 60.0)


def test_fairness_window_averages_time_first():
    # server 0 alternates 0/100, server 1 is steady at 50: time-first means both 50
    traces = np.array([[0.0, 50.0], [100.0, 50.0]] * 5)
    assert fairness_stats(traces, window=10).sigma == 0.0
    # only the final window counts
    traces = np.vstack([np.zeros((5, 2)), np.tile([30.0, 70.0], (10, 1))])
    assert fairness_stats(traces, window=10).mean == 50.0


def test_fairness_row_fixture_is_well_formed():
    mean, lo, hi, sigma = 57.53, 53.04, 59.71, 2.10
    assert lo <= mean <= hi and sigma >= 0


def _linear_model(seed):
    cfg = LearnerConfig(8, (), 4)
    rng = RngStream(seed)
    return AdditiveModel(rng.gen.standard_normal(cfg.num_params), None, cfg)


def test_global_objective_single_server_is_server_loss():
    part = class_partition([[0, 1, 2, 3]], clients_per_server=3)
    m = _linear_model(0)
    assert global_objective([m], part) == pytest.approx(server_objective(m, part, 0), abs=1e-12)


def test_global_objective_brute_force_double_sum():
    part = class_partition([[0, 1], [2, 3]], clients_per_server=2, per_client=10)
    models = [_linear_model(1), _linear_model(2)]
    clusters = {0: [0], 1: [1]}
    n = sum(len(d) for row in part.clients for d in row)
    brute = 0.0
    for k, members in clusters.items():
        for m in members:
            n_m = sum(len(d) for d in part.clients[m])
            f_m = sum(len(d) / n_m * evaluate(models[m], d)[1] for d in part.clients[m])
            brute += n_m / n * f_m
    value = global_objective(models, part)
    assert abs(value - brute) < 1e-12
    losses = [server_objective(models[m], part, m) for m in range(2)]
    assert min(losses) <= value <= max(losses)


def test_comm_cost_ratio_and_degenerate_cases():
    d = 1608
    fedbac = comm_cost_round(80, d, d)
    baseline = comm_cost_round(100, d, 0)
    assert Fraction(fedbac, baseline) == Fraction(8, 5)
    assert baseline == 2 * 100 * d * 4
    assert comm_cost_round(0, d, d) == 0


@given(st.integers(0, 1000), st.integers(0, 10**6), st.integers(0, 10**6), st.integers(1, 8))
def test_comm_cost_is_linear(s, dg, dk, b):
    assert comm_cost_round(2 * s, dg, dk, b) == 2 * comm_cost_round(s, dg, dk, b)
    assert comm_cost_round(s, dg, dk, b) == comm_cost_round(s, dg, 0, b) + comm_cost_round(s, 0, dk, b)


def test_round_equivalents_arithmetic():
    equiv, reduction = byte_reduction(72, 15, Fraction(8, 5))
    assert equiv == 24 and reduction == 3


def test_convergence_ratio_cases():
    trace = [0.1, 0.3, 0.5, 0.6]
    assert convergence_ratio(trace, trace, 0.5) == 1.0
    slow = [0.0] * 71 + [0.5]
    fast = [0.0] * 14 + [0.55]
    assert convergence_ratio(slow, fast, 0.5) == pytest.approx(4.8, abs=1e-12)
    assert convergence_ratio(trace, [0.2] * 10, 0.5) is None
    with pytest.raises(ValueError):
        convergence_ratio([], trace, 0.5)


def test_cluster_dynamics_cases():
    static = [[0, 1, 1]] * 4
    assert cluster_dynamics(static) == ([2] * 4, [0] * 4)
    before = list(range(10))
    after = [1, 0, 2, 2] + list(range(4, 10))
    active, cum = cluster_dynamics([before, before, after, after], initial=before)
    assert cum == [0, 0, 3, 3]
    assert active[0] == 10
    assert all(b >= a for a, b in zip(cum, cum[1:]))
