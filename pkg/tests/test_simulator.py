import math

import numpy as np
import pytest

import changediag as cd
from changediag.simulator import (
    Environment,
    PosteriorThreshold,
    SplineStrategy,
    StopAfter,
    TableStrategy,
)

import instances


def test_environment_reproducible():
    spec = instances.FIGURES["merged"]
    a = Environment(spec, seed=5, run_index=0)
    b = Environment(spec, seed=5, run_index=0)
    assert (a.theta, a.mu) == (b.theta, b.mu)
    assert [a.symbol(n) for n in range(1, 50)] == [b.symbol(n) for n in range(1, 50)]
    c = Environment(spec, seed=5, run_index=1)
    assert (c.theta, c.mu, [c.symbol(n) for n in range(1, 50)]) != (
        a.theta, a.mu, [a.symbol(n) for n in range(1, 50)])


def test_immediate_change_when_p0_is_one():
    spec = instances.hypothesis_testing_two_type()
    assert all(Environment(spec, 0, i).theta == 0 for i in range(300))


def test_change_time_frequency_binomial():
    spec = instances.FIGURES["merged"]
    draws = 20_000
    zeros = sum(Environment(spec, 77, i).theta == 0 for i in range(draws))
    sigma = math.sqrt(draws * 0.02 * 0.98)
    assert abs(zeros - draws * 0.02) <= 3 * sigma


def test_post_change_symbols_match_type_density():
    spec = instances.FIGURES["merged"]
    env = Environment(spec, 5, 0)  # theta=26, mu=2 under this substream
    start = max(env.theta, 1)
    n = 20_000
    counts = np.bincount([env.symbol(i) for i in range(start, start + n)], minlength=4)
    for x in range(4):
        want = spec.f[env.mu, x]
        sigma = math.sqrt(n * want * (1 - want))
        assert abs(counts[x] - n * want) <= 3 * sigma


def test_pre_change_symbols_match_baseline_density():
    spec = cd.ProblemSpec(
        alphabet_size=4, num_types=2, p0=0.0, p=1e-6,
        nu=np.array([0.5, 0.5]), f=instances.TWO_TYPE_F,
        c=1.0, a=instances.FIGURES["merged"].a,
    )
    env = Environment(spec, 11, 0)
    n = 20_000
    assert env.theta > n
    counts = np.bincount([env.symbol(i) for i in range(1, n + 1)], minlength=4)
    for x in range(4):
        want = spec.f[0, x]
        sigma = math.sqrt(n * want * (1 - want))
        assert abs(counts[x] - n * want) <= 3 * sigma


def test_stop_immediately_record():
    spec = instances.FIGURES["merged"]
    for i in range(200):
        rec = cd.run_strategy(spec, StopAfter(0), Environment(spec, 3, i))
        assert rec.tau == 0
        _, _, col = cd.h_costs(spec, cd.initial_posterior(spec))
        assert rec.d == col + 1
        want = spec.a[0, rec.d - 1] if rec.theta > 0 else spec.a[rec.mu, rec.d - 1]
        assert rec.realized_cost == want
        assert not rec.capped


def test_free_stopping_cost_stops_at_zero():
    spec = cd.ProblemSpec(
        alphabet_size=2, num_types=1, p0=0.02, p=0.05,
        nu=np.array([1.0]), f=np.array([[0.75, 0.25], [0.25, 0.75]]),
        c=1.0, a=np.array([[0.0], [0.0]]),
    )
    table = cd.value_iterate(spec, cd.build_grid(1, 50))
    rec = cd.run_strategy(spec, TableStrategy(table), Environment(spec, 1, 0))
    assert rec.tau == 0
    assert rec.realized_cost == 0.0


def test_solved_strategy_stops_in_reasonable_time(solve200):
    spec, table = solve200("merged")
    strategy = TableStrategy(table)
    taus = []
    for i in range(200):
        rec = cd.run_strategy(spec, strategy, Environment(spec, 21, i))
        assert not rec.capped
        taus.append(rec.tau)
    assert max(taus) < 500
    assert np.mean(taus) < 100


def test_single_runs_reproduce_batch_rows(solve200):
    spec, table = solve200("merged")
    strategy = TableStrategy(table)
    est = cd.estimate_risk(spec, strategy, runs=200, seed=42)
    for k in (0, 7, 123):
        rec = cd.run_strategy(spec, strategy, Environment(spec, 42, k))
        assert rec.theta == est.theta[k]
        assert rec.mu == est.mu[k]
        assert rec.tau == est.tau[k]
        assert rec.d == est.d[k]
        assert rec.realized_cost == est.realized[k]
        assert rec.posterior_cost == est.posterior_form[k]


def test_worker_count_does_not_change_results(solve200):
    spec, table = solve200("merged")
    strategy = TableStrategy(table)
    one = cd.estimate_risk(spec, strategy, runs=400, seed=9, threads=1)
    four = cd.estimate_risk(spec, strategy, runs=400, seed=9, threads=4)
    assert np.array_equal(one.realized, four.realized)
    assert np.array_equal(one.tau, four.tau)
    assert one.mean == four.mean


def test_uniform_false_alarm_cost_is_exact():
    base = instances.FIGURES["merged"]
    spec = cd.ProblemSpec(
        alphabet_size=4, num_types=2, p0=0.0, p=0.05,
        nu=base.nu, f=base.f, c=1.0,
        a=np.array([[7.0, 7.0], [0.0, 3.0], [3.0, 0.0]]),
    )
    est = cd.estimate_risk(spec, StopAfter(0), runs=500, seed=1)
    assert est.mean == 7.0
    assert est.std_error == 0.0


def test_cap_accounting():
    spec = instances.FIGURES["merged"]
    never = PosteriorThreshold(2.0)  # 1 - pi_0 cannot reach 2
    est = cd.estimate_risk(spec, never, runs=50, seed=13, n_max=40)
    assert est.cap_rate == 1.0
    assert (est.tau == 40).all()
    rec = cd.run_strategy(spec, never, Environment(spec, 13, 0), n_max=40)
    assert rec.capped and rec.tau == 40
    mu_row = 0 if rec.tau < rec.theta else rec.mu
    want = spec.c * max(rec.tau - rec.theta, 0) + spec.a[mu_row, rec.d - 1]
    assert rec.realized_cost == want


def test_detection_cost_decomposition_per_run():
    spec = instances.shiryaev_binary()
    table = cd.value_iterate(spec, cd.build_grid(1, 200))
    est = cd.estimate_risk(spec, TableStrategy(table), runs=500, seed=8)
    false_alarm = est.tau < est.theta
    want = false_alarm.astype(float) + spec.c * np.maximum(est.tau - est.theta, 0)
    assert np.array_equal(est.realized, want)


def test_hypothesis_testing_cost_reduces_to_delay_plus_error():
    spec = instances.hypothesis_testing_two_type()
    table = cd.value_iterate(spec, cd.build_grid(2, 100))
    strategy = TableStrategy(table)
    for i in range(100):
        rec = cd.run_strategy(spec, strategy, Environment(spec, 4, i), record_path=True)
        assert rec.theta == 0
        assert rec.realized_cost == spec.c * rec.tau + spec.a[rec.mu, rec.d - 1]
        assert all(pi[0] == 0.0 for pi in rec.posterior_path)


def test_posterior_cost_form_agrees_on_average(solve200):
    spec, table = solve200("merged")
    est = cd.estimate_risk(spec, TableStrategy(table), runs=5000, seed=31)
    diff = est.realized - est.posterior_form
    stderr = diff.std(ddof=1) / math.sqrt(diff.size)
    assert abs(diff.mean()) <= 4 * stderr + 1e-12


def test_record_path_contents(solve200):
    spec, table = solve200("merged")
    rec = cd.run_strategy(spec, TableStrategy(table), Environment(spec, 2, 5),
                          record_path=True)
    assert len(rec.posterior_path) == rec.tau + 1
    assert np.array_equal(rec.posterior_path[0], cd.initial_posterior(spec))
    assert len(rec.observations) == rec.tau
    # replaying the recorded observations reproduces the recorded posteriors
    pi = cd.initial_posterior(spec)
    for x, want in zip(rec.observations, rec.posterior_path[1:]):
        pi = cd.update(spec, pi, x)
        assert np.array_equal(pi, want)


def test_risk_json_shape(solve200):
    spec, table = solve200("merged")
    est = cd.estimate_risk(spec, TableStrategy(table), runs=300, seed=77)
    doc = est.to_json()
    assert sorted(doc) == ["breakdown", "cap_rate", "mean", "runs", "seed", "std_error"]
    assert sorted(doc["breakdown"]) == ["delay", "false_alarm", "false_isolation"]
    total = sum(doc["breakdown"].values())
    assert total == pytest.approx(doc["mean"], rel=1e-12)


def test_spline_strategy_matches_table_strategy_often(solve200):
    spec, table = solve200("split")
    region = cd.extract_region(spec, table)
    boundaries = {j: cd.fit_boundary(region, j, K=12) for j in (1, 2)}
    tab = TableStrategy(table)
    spl = SplineStrategy(boundaries)
    same = 0
    for i in range(300):
        r1 = cd.run_strategy(spec, tab, Environment(spec, 55, i))
        r2 = cd.run_strategy(spec, spl, Environment(spec, 55, i))
        same += (r1.tau, r1.d) == (r2.tau, r2.d)
    assert same / 300 >= 0.95
