import numpy as np
import pytest

from mwlearn.builtins import DOWNLINK_DEFAULTS, build
from mwlearn.controller import Schedule, run
from mwlearn.oracle import (OracleError, StationaryPolicy, certify_fstar, exact_e, max_slack,
                            policy_time_averages, solve_fstar)
from mwlearn.queues import QueueState
from mwlearn.scenario import ObjectiveSpec, OutcomeDistribution, ScenarioModel
from mwlearn.weights import best_stage2, y_functional

from support import play_fixed_policy


def two_option_model(probs=(0.5, 0.5)):
    dists = [OutcomeDistribution([(0.0,)], [1.0]),
             OutcomeDistribution([(0.0,), (1.0,)], list(probs))]
    # actions: idle, serve; penalty = power, one queue with constant arrival 0.3
    pen = [np.array([[[0.0], [1.0]]]), np.array([[[0.0], [1.0]], [[0.0], [1.0]]])]
    arr = [np.full((1, 2, 1), 0.3), np.full((2, 2, 1), 0.3)]
    srv = [np.array([[[0.0], [0.5]]]), np.array([[[0.0], [0.0]], [[0.0], [1.0]]])]
    model = ScenarioModel(dists, ["idle", "serve"], pen, arr, srv)
    obj = ObjectiveSpec(1, linear=[1.0])
    return model, obj


def test_exact_e_point_mass():
    model, obj = two_option_model()
    st_ = QueueState(np.array([4.0]), np.zeros(0), np.zeros(0))
    assert exact_e(0, st_, 2.0, model, obj) == best_stage2(0, (0.0,), st_, 2.0, model, obj)[1]


def test_exact_e_two_point_mean():
    model, obj = two_option_model()
    st_ = QueueState(np.array([4.0]), np.zeros(0), np.zeros(0))
    m0 = best_stage2(1, (0.0,), st_, 2.0, model, obj)[1]
    m1 = best_stage2(1, (1.0,), st_, 2.0, model, obj)[1]
    assert exact_e(1, st_, 2.0, model, obj) == pytest.approx(0.5 * (m0 + m1), abs=1e-15)


def test_exact_e_linear_in_queue_at_fixed_argmin():
    model, obj = build("downlink-probe")
    st_ = QueueState(np.array([13.3, 7.1]), np.zeros(obj.N), np.zeros(0))
    V, delta = 25.0, 1e-6
    bumped = QueueState(st_.Q + np.array([delta, 0.0]), st_.U, st_.Z)
    for k in range(model.K):
        d = model.distributions[k]
        expected = 0.0
        for omega, p in zip(d.support, d.probabilities):
            i, _ = best_stage2(k, omega, st_, V, model, obj)
            assert best_stage2(k, omega, bumped, V, model, obj)[0] == i
            a, mu = model.arrival[k][d.index_of(omega), i], model.service[k][d.index_of(omega), i]
            expected += p * (a[0] - mu[0]) * delta
        diff = exact_e(k, bumped, V, model, obj) - exact_e(k, st_, V, model, obj)
        assert diff == pytest.approx(expected, abs=1e-12)


def test_policy_averages_deterministic():
    model, obj = two_option_model((0.25, 0.75))
    pol = StationaryPolicy.deterministic(model, 1, 1)
    x, a, mu = policy_time_averages(pol, model, obj)
    assert x[0] == 1.0 and a[0] == pytest.approx(0.3) and mu[0] == pytest.approx(0.75)


def test_policy_averages_symmetric():
    dists = [OutcomeDistribution([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)], [0.25] * 4)]
    pen = [np.array([[[0, 0], [1, 0], [0, 1]]] * 4, dtype=float)]
    arr = [np.full((4, 3, 2), 0.2)]
    srv = [np.array([[[0, 0], [w[0], 0], [0, w[1]]] for w in dists[0].support], dtype=float)]
    model = ScenarioModel(dists, ["idle", "s1", "s2"], pen, arr, srv)
    obj = ObjectiveSpec(2, linear=[1, 1])
    pol = StationaryPolicy([1.0], [np.full((4, 3), 1 / 3)])
    x, a, mu = policy_time_averages(pol, model, obj)
    assert x[0] == pytest.approx(x[1]) and mu[0] == pytest.approx(mu[1])


def test_policy_averages_match_replay():
    model, obj = build("downlink-probe")
    rng = np.random.default_rng(0)
    pol = StationaryPolicy(rng.dirichlet(np.ones(model.K)),
                           [rng.dirichlet(np.ones(model.n_actions), size=len(d))
                            for d in model.distributions]).validate(model)
    xbar, abar, mubar = policy_time_averages(pol, model, obj)
    x, a, mu = play_fixed_policy(pol, model, obj, 1_000_000, seed=1)
    for sim, exact in ((x, xbar), (a, abar), (mu, mubar)):
        se = sim.std(axis=0) / np.sqrt(len(sim))
        assert (np.abs(sim.mean(axis=0) - exact) <= 3 * se + 1e-12).all()


def test_policy_validation_floor():
    model, _ = build("downlink-probe")
    pol = StationaryPolicy.deterministic(model, 0, 0)
    pol.validate(model, theta=0.0)
    with pytest.raises(OracleError, match="floor"):
        pol.validate(model, theta=0.1)


def test_idle_optimum_with_floor():
    model, obj = two_option_model()
    # no arrivals: idling is free and feasible, but theta forces some exploration
    model = ScenarioModel(model.distributions, model.actions, model.penalty,
                          [np.zeros_like(a) for a in model.arrival], model.service)
    for theta in (0.0, 0.2):
        res = solve_fstar(model, obj, theta)
        assert res.feasible and res.value == pytest.approx(0.0, abs=1e-12)
        assert res.policy.stage1_probs.min() >= theta / 2 - 1e-9


def test_floor_cost_of_forced_option():
    # option 0 always pays one unit; the floor forces it theta/K of the time
    dists = [OutcomeDistribution([(0.0,)], [1.0])] * 2
    pen = [np.ones((1, 1, 1)), np.zeros((1, 1, 1))]
    zero = [np.zeros((1, 1, 1))] * 2
    model = ScenarioModel(dists, ["go"], pen, zero, zero)
    obj = ObjectiveSpec(1, linear=[1.0])
    assert solve_fstar(model, obj, 0.3).value == pytest.approx(0.15)


@pytest.mark.parametrize("name", ["downlink-probe", "utility-fair"])
def test_fstar_monotone_in_theta(name):
    model, obj = build(name)
    vals = [solve_fstar(model, obj, th).value for th in (0.0, 0.05, 0.1, 0.3)]
    assert all(b >= a - 1e-6 for a, b in zip(vals, vals[1:]))


def test_infeasible_report():
    model, obj = build("downlink-probe", lam=(0.95, 0.95))
    res = solve_fstar(model, obj, 0.0)
    assert not res.feasible and "infeasible" in res.message
    assert res.to_dict()["feasible"] is False


def test_size_guard():
    d = OutcomeDistribution([(float(i),) for i in range(200)], [1 / 200] * 200)
    tab = [np.zeros((200, 60, 1))]
    model = ScenarioModel([d], [str(i) for i in range(60)], tab, tab, tab)
    with pytest.raises(OracleError, match="guard"):
        solve_fstar(model, ObjectiveSpec(1, linear=[1.0]))


def grid_fstar(p, lam, c_meas, c_tx, budget, theta, step=0.01):
    """Scan the stage-1 simplex of the two-link downlink scenario.

    Given stage-1 frequencies the best stage-2 rule is explicit: a blind slot
    always serves its link, and measured slots cover the remaining demand
    d_l at c_tx per packet, subject to the capacity of ON channels."""
    n = int(round(1 / step))
    a = np.arange(n + 1)
    q1, q2, q3 = (g.ravel() for g in np.meshgrid(a, a, a, indexing="ij"))
    keep = q1 + q2 + q3 <= n
    qm, qb1, qb2 = q1[keep] * step, q2[keep] * step, q3[keep] * step
    qi = 1 - qm - qb1 - qb2
    floor = theta / 4 - 1e-12
    d1 = np.maximum(lam[0] - qb1 * p[0], 0)
    d2 = np.maximum(lam[1] - qb2 * p[1], 0)
    ok = (qm >= floor) & (qb1 >= floor) & (qb2 >= floor) & (qi >= floor)
    ok &= (d1 <= qm * p[0] + 1e-12) & (d2 <= qm * p[1] + 1e-12)
    ok &= d1 + d2 <= qm * (1 - (1 - p[0]) * (1 - p[1])) + 1e-12
    ok &= qb1 * c_tx + c_tx * d1 <= budget[0] + 1e-12
    ok &= qb2 * c_tx + c_tx * d2 <= budget[1] + 1e-12
    return (c_meas * qm + c_tx * (qb1 + qb2 + d1 + d2))[ok].min()


@pytest.mark.parametrize("theta", [0.0, 0.05, 0.1])
def test_downlink_fstar_matches_grid(theta):
    model, obj = build("downlink-probe")
    D = DOWNLINK_DEFAULTS
    g = grid_fstar(D["p"], D["lam"], D["c_meas"], D["c_tx"], D["budget"], theta)
    assert solve_fstar(model, obj, theta).value == pytest.approx(g, abs=1e-3)


@pytest.mark.parametrize("name", ["downlink-probe", "utility-fair"])
def test_random_policy_certificate(name):
    model, obj = build(name)
    res = solve_fstar(model, obj, 0.05)
    cert = certify_fstar(model, obj, res, n=100_000)
    assert cert["holds"], cert
    assert cert["feasible_samples"] > 1000


def test_cutting_plane_certified_gap():
    model, obj = build("utility-fair")
    res = solve_fstar(model, obj, 0.1)
    assert res.method == "cutting-plane"
    assert res.lower_bound <= res.value <= res.lower_bound + 1e-7


def test_argmin_policy_reproduces_value():
    model, obj = build("downlink-probe")
    res = solve_fstar(model, obj, 0.1)
    res.policy.validate(model, theta=0.1, tol=1e-7)
    xbar, abar, mubar = policy_time_averages(res.policy, model, obj)
    assert obj.f(xbar) == pytest.approx(res.value, abs=1e-9)
    assert (mubar >= abar - 1e-9).all()
    assert (obj.residuals(xbar) <= 1e-9).all()


@pytest.mark.parametrize("name", ["downlink-probe", "utility-fair"])
def test_builtins_have_strict_slack(name):
    model, obj = build(name)
    eps, _ = max_slack(model, obj, 0.1)
    assert eps > 0.01


def test_argmin_policy_replay_reaches_fstar():
    model, obj = build("downlink-probe")
    res = solve_fstar(model, obj, 0.05)
    x, _, _ = play_fixed_policy(res.policy, model, obj, 1_000_000, seed=3)
    se = x.sum(axis=1).std() / np.sqrt(len(x))
    assert abs(obj.f(x.mean(axis=0)) - res.value) <= 4 * se


@pytest.mark.parametrize("approach", ["oracle", "approach1", "approach2", "uniform"])
def test_controllers_do_not_beat_fstar(approach):
    model, obj = build("downlink-probe")
    theta = 0.05
    fstar = solve_fstar(model, obj, theta).value
    res = run(model, obj, Schedule.constant(40, 16), approach, 100_000, 5, theta)
    f = res.final
    # a controller can only dip below f* by letting backlog pile up
    slack = sum(v for k, v in f.items() if k.startswith(("Q_over_t_", "U_over_t_")))
    assert f["f_avg"] >= fstar - 0.2 * slack - 2e-3


def test_fstar_json(tmp_path):
    model, obj = build("downlink-probe")
    res = solve_fstar(model, obj, 0.05)
    import json
    doc = json.loads(res.to_json())
    assert doc["feasible"] and doc["value"] == res.value
    assert len(doc["policy"]["stage1_probs"]) == model.K
