import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mwlearn.queues import (QueueError, QueueState, advance_actual, advance_equality,
                            advance_inequality, lyapunov, z_step_bound)


@pytest.mark.parametrize("Q,mu,A,expected", [(5, 3, 2, 4), (1, 3, 2, 2), (0, 0, 0, 0)])
def test_advance_actual(Q, mu, A, expected):
    assert advance_actual(Q, mu, A) == expected


@pytest.mark.parametrize("mu,A", [(-1, 0), (0, -0.5)])
def test_advance_actual_rejects_negative(mu, A):
    with pytest.raises(QueueError):
        advance_actual(1.0, mu, A)


@pytest.mark.parametrize("U,h,b,expected", [(2.0, 1.5, 1.0, 2.5), (0.5, -2.0, 1.0, 0.0),
                                            (0.0, 0.7, 0.7, 0.0)])
def test_advance_inequality(U, h, b, expected):
    assert advance_inequality(U, h, b) == expected


@pytest.mark.parametrize("Z,g,x,expected", [(0, 1.0, 1.0, 0.0), (3.0, 2.0, 0.5, 1.5)])
def test_advance_equality(Z, g, x, expected):
    assert advance_equality(Z, g, x) == expected


def test_advance_equality_box():
    with pytest.raises(QueueError):
        advance_equality(0.0, 3.5, 0.0, lo=-1.0, hi=3.0)
    with pytest.raises(QueueError):
        advance_equality(0.0, -1.5, 0.0, lo=-1.0, hi=3.0)


def test_telescoping_random_trace():
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 1, 5000)
    g = rng.uniform(-1, 2, 5000)
    Z = 0.7
    for xi, gi in zip(x, g):
        Z = advance_equality(Z, gi, xi)
    assert Z - 0.7 == pytest.approx(np.sum(x - g), abs=1e-9)


def test_lyapunov_values():
    assert lyapunov(QueueState.zeros(2, 1, 1)) == 0
    st_ = QueueState(np.array([3.0]), np.array([4.0]), np.array([0.0]))
    assert lyapunov(st_) == 12.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=3),
       st.lists(st.floats(-100, 100), min_size=0, max_size=3))
def test_lyapunov_even_in_Z(q, z):
    s = QueueState(np.array(q), np.zeros(1), np.array(z))
    assert lyapunov(s) == lyapunov(QueueState(s.Q, s.U, -s.Z))


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 50), st.floats(0, 1), st.floats(0, 1))
def test_actual_queue_envelope(Q, mu, A):
    nxt = advance_actual(Q, mu, A)
    assert nxt >= 0
    assert nxt <= Q + 1.0
    assert nxt >= max(Q - 1.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(0, 1), st.floats(0.1, 2))
def test_z_single_step_bound(Z, x, sigma):
    lo, hi = 0.0 - sigma, 1.0 + sigma
    for g in (lo, hi, 0.5):
        assert abs(advance_equality(Z, g, x, lo, hi) - Z) <= z_step_bound(0.0, 1.0, sigma) + 1e-12


def test_state_vector_layout():
    s = QueueState(np.array([1.0, 2.0]), np.array([3.0]), np.array([-4.0]))
    np.testing.assert_array_equal(s.vector(), [3.0, -4.0, 1.0, 2.0])
    assert s.total_backlog() == 10.0
