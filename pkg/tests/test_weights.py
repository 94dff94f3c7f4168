import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mwlearn.builtins import build
from mwlearn.queues import QueueState
from mwlearn.scenario import (ObjectiveSpec, OutcomeDistribution, ScenarioModel,
                              SeparableConvex, neg_log1p, quadratic)
from mwlearn.weights import (ControlParams, WeightTables, argmin_first, best_aux, best_stage2,
                             golden_section, y_functional)


def random_instance(seed, K=3, nI=4, M=3, L=2, n_aux=1):
    rng = np.random.default_rng(seed)
    dists = [OutcomeDistribution([(float(j),) for j in range(3)], rng.dirichlet(np.ones(3)))
             for _ in range(K)]
    pen = [rng.uniform(0, 2, (3, nI, M)) for _ in range(K)]
    arr = [rng.uniform(0, 1, (3, nI, L)) for _ in range(K)]
    srv = [rng.uniform(0, 1, (3, nI, L)) for _ in range(K)]
    model = ScenarioModel(dists, [f"a{i}" for i in range(nI)], pen, arr, srv)
    obj = ObjectiveSpec(M, linear=rng.normal(size=M), offset=0.3,
                        nonlinear_indices=tuple(range(M - n_aux, M)),
                        nonlinear_fn=quadratic([1.0] * n_aux),
                        constraint_rows=rng.normal(size=(2, M)), constraint_offsets=[0.1, 0],
                        thresholds=[0.5, 1.0])
    return model, obj


def random_state(rng, L=2, N=2, n_aux=1):
    return QueueState(rng.uniform(0, 10, L), rng.uniform(0, 10, N), rng.normal(0, 5, n_aux))


def test_zero_state_zero_V():
    model, obj = random_instance(0)
    st_ = QueueState.zeros(model.L, obj.N, obj.n_aux)
    for k in range(model.K):
        for omega in model.distributions[k].support:
            for i in range(model.n_actions):
                assert y_functional(k, omega, st_, i, 0.0, model, obj) == 0.0


def test_linear_cost_only():
    model, _ = random_instance(1)
    obj = ObjectiveSpec(model.M, linear=[1.0, 0, 0])
    st_ = QueueState.zeros(model.L, 0, 0)
    omega = model.distributions[0].support[1]
    for i in range(model.n_actions):
        assert y_functional(0, omega, st_, i, 1.0, model, obj) == model.penalty[0][1, i, 0]


@pytest.mark.parametrize("seed", range(5))
def test_y_matches_explicit_sum(seed):
    model, obj = random_instance(seed)
    rng = np.random.default_rng(seed + 100)
    tabs = WeightTables(model, obj)
    for _ in range(20):
        st_ = random_state(rng)
        V = float(rng.uniform(0, 20))
        k = int(rng.integers(model.K))
        w = int(rng.integers(3))
        i = int(rng.integers(model.n_actions))
        x = model.penalty[k][w, i]
        a = model.arrival[k][w, i]
        mu = model.service[k][w, i]
        ref = V * (sum(c * xm for c, xm in zip(obj.linear, x)) + obj.offset)
        for n in range(obj.N):
            hn = sum(r * xm for r, xm in zip(obj.constraint_rows[n], x)) + obj.constraint_offsets[n]
            ref += st_.U[n] * hn
        ref += st_.Z[0] * x[2]
        ref -= sum(q * (m - ar) for q, m, ar in zip(st_.Q, mu, a))
        omega = model.distributions[k].support[w]
        assert y_functional(k, omega, st_, i, V, model, obj) == pytest.approx(ref, rel=1e-12, abs=1e-12)
        s_vec = np.concatenate([[V], st_.vector()])
        assert tabs.values(k, w, s_vec)[i] == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_singleton_action_set():
    d = OutcomeDistribution([(0.0,)], [1.0])
    tab = [np.ones((1, 1, 1))]
    model = ScenarioModel([d], ["only"], tab, tab, tab)
    obj = ObjectiveSpec(1, linear=[1.0])
    assert best_stage2(0, (0.0,), QueueState.zeros(1, 0, 0), 3.0, model, obj)[0] == 0


def test_zero_state_picks_cheapest():
    model, _ = build("downlink-probe")
    obj = ObjectiveSpec(model.M, linear=np.ones(model.M))
    st_ = QueueState.zeros(model.L, 0, 0)
    omega = model.distributions[0].support[-1]
    i, _ = best_stage2(0, omega, st_, 5.0, model, obj)
    assert i == 0  # idling transmits nothing


def test_lowest_index_tie_break():
    d = OutcomeDistribution([(0.0,)], [1.0])
    tab = [np.zeros((1, 3, 1))]
    model = ScenarioModel([d], ["a", "b", "c"], tab, tab, tab)
    obj = ObjectiveSpec(1, linear=[1.0])
    assert best_stage2(0, (0.0,), QueueState.zeros(1, 0, 0), 1.0, model, obj) == (0, 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_best_stage2_exhaustive(seed):
    model, obj = random_instance(seed)
    rng = np.random.default_rng(seed)
    for _ in range(25):
        st_ = random_state(rng)
        V = float(rng.uniform(0, 10))
        k = int(rng.integers(model.K))
        omega = model.distributions[k].support[int(rng.integers(3))]
        i, val = best_stage2(k, omega, st_, V, model, obj)
        vals = [y_functional(k, omega, st_, j, V, model, obj) for j in range(model.n_actions)]
        assert val == min(vals)
        assert i == vals.index(min(vals))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 1000), st.floats(0.01, 100))
def test_stage2_scale_invariance(seed, c):
    model, obj = random_instance(seed % 7)
    rng = np.random.default_rng(seed)
    st_ = random_state(rng)
    V = float(rng.uniform(0.1, 10))
    k = int(rng.integers(model.K))
    omega = model.distributions[k].support[0]
    i, val = best_stage2(k, omega, st_, V, model, obj)
    i2, val2 = best_stage2(k, omega, st_.scaled(c), V * c, model, obj)
    vals = sorted(y_functional(k, omega, st_, j, V, model, obj) for j in range(model.n_actions))
    if vals[1] - vals[0] > 1e-9 * (1 + abs(vals[0])):
        assert i2 == i
    assert val2 == pytest.approx(c * val, rel=1e-9, abs=1e-9)


# -- auxiliary subproblem ----------------------------------------------------

LINEAR_ZERO = ObjectiveSpec(1, nonlinear_indices=(0,), nonlinear_fn=quadratic([0.0]))


@pytest.mark.parametrize("Z,expected", [(2.0, 2.0), (-2.0, -1.0), (0.0, 0.5)])
def test_aux_linear_box(Z, expected):
    g = best_aux(np.array([Z]), 3.0, 1.0, np.array([0.0]), np.array([1.0]), LINEAR_ZERO)
    assert g[0] == expected


@pytest.mark.parametrize("Z,expected", [(4.0, 2.0), (40.0, 10.0), (-40.0, -10.0)])
def test_aux_square(Z, expected):
    obj = ObjectiveSpec(1, nonlinear_indices=(0,), nonlinear_fn=quadratic([1.0]))
    g = best_aux(np.array([Z]), 1.0, 1.0, np.array([-9.0]), np.array([9.0]), obj)
    assert g[0] == pytest.approx(expected)


def test_aux_zero_V_zero_Z_midpoint():
    obj = ObjectiveSpec(1, nonlinear_indices=(0,), nonlinear_fn=neg_log1p([1.0]))
    g = best_aux(np.array([0.0]), 0.0, 0.5, np.array([0.0]), np.array([1.0]), obj)
    assert g[0] == 0.5


def _no_minimizer(fn):
    return SeparableConvex(fn.terms)


@pytest.mark.parametrize("seed", range(6))
def test_golden_section_vs_grid(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(0.1, 3), rng.normal(), rng.uniform(0.5, 2)
    fn = lambda g: a * (g - b) ** 2 + math.exp(c * g) * 0.1 + abs(g - 0.3 * b)
    lo, hi = -3.0, 3.0
    g = golden_section(fn, lo, hi)
    grid = np.linspace(lo, hi, 1_000_001)
    vals = a * (grid - b) ** 2 + np.exp(c * grid) * 0.1 + np.abs(grid - 0.3 * b)
    assert abs(g - grid[vals.argmin()]) <= 1e-5
    assert fn(g) <= vals.min() + 1e-9


def test_golden_section_non_finite():
    with pytest.raises(ValueError):
        golden_section(lambda g: math.nan, 0.0, 1.0)


@pytest.mark.parametrize("V,Z", [(1.0, -0.8), (5.0, -4.0), (20.0, -11.0), (3.0, 2.0), (0.0, -1.0)])
def test_neg_log1p_closed_form_vs_golden(V, Z):
    fn = neg_log1p([1.0])
    closed = ObjectiveSpec(1, nonlinear_indices=(0,), nonlinear_fn=fn)
    searched = ObjectiveSpec(1, nonlinear_indices=(0,), nonlinear_fn=_no_minimizer(fn))
    lo, hi = np.array([0.0]), np.array([1.0])
    g1 = best_aux(np.array([Z]), V, 0.5, lo, hi, closed)[0]
    g2 = best_aux(np.array([Z]), V, 0.5, lo, hi, searched)[0]
    obj_val = lambda g: V * fn.terms[0](g) - Z * g
    assert abs(obj_val(g1) - obj_val(g2)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 50), st.floats(-30, -0.5))
def test_aux_first_order_condition(V, Z):
    fn = neg_log1p([1.5])
    obj = ObjectiveSpec(1, nonlinear_indices=(0,), nonlinear_fn=_no_minimizer(fn))
    lo, hi = np.array([0.0]), np.array([1.0])
    g = best_aux(np.array([Z]), V, 0.5, lo, hi, obj)[0]
    if -0.5 + 1e-4 < g < 1.5 - 1e-4:
        h = 1e-5
        deriv = (fn.terms[0](g + h) - fn.terms[0](g - h)) / (2 * h)
        assert abs(V * deriv - Z) <= 1e-6


def test_control_params_validation():
    ControlParams(V=0.0, sigma=0.1, theta=0.0, W0=1)
    for kw in ({"V": -1}, {"sigma": 0}, {"theta": 1.0}, {"W0": 0}):
        with pytest.raises(ValueError):
            ControlParams(**kw)


@pytest.mark.parametrize("values,expected", [
    ([3.0, 1.0, 1.0], 1),
    ([2.0, 1.0 + 1e-15, 1.0], 1),
    ([-3.9879204458603454, -3.987920445860345], 0),
    ([1.0, 1.0 - 1e-9], 1),
    ([0.0, 1e-300, -1e-300], 0),
])
def test_argmin_first_breaks_rounding_ties_low(values, expected):
    assert argmin_first(values) == expected
