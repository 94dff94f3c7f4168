"""Reference controllers used only by the tests.

These are written against the direct (non-tabulated) evaluation path:
``y_functional``/``best_stage2`` for stage 2, ``oracle.exact_e`` for stage 1 and
the scalar queue laws, so agreement with :mod:`mwlearn.controller` checks two
independent code paths.
"""
import numpy as np

from mwlearn.controller import SlotDecision
from mwlearn.oracle import StationaryPolicy, exact_e, policy_time_averages
from mwlearn.queues import QueueState, advance_actual, advance_equality, advance_inequality
from mwlearn.weights import argmin_first, aux_box, best_aux, best_stage2


class ExactMaxWeight:
    """Stage 1 by exact e_k, stage 2 by enumeration (the theta = 0 oracle policy,
    with the same exploration-draw convention as the library controller)."""

    def __init__(self, model, obj, V, W0=1, theta=0.0, sigma=None, seed=0):
        self.model, self.obj, self.V, self.theta = model, obj, V, theta
        self.sigma = model.sigma if sigma is None else sigma
        self.W0 = W0
        self.rng = np.random.default_rng(seed)
        self.state = QueueState.zeros(model.L, obj.N, obj.n_aux, t=-model.K * W0)
        aux = list(obj.nonlinear_indices)
        self.lo, self.hi = model.x_min[aux], model.x_max[aux]
        self.box = aux_box(model, obj, self.sigma)

    def _finish(self, k, explore):
        model, obj, st = self.model, self.obj, self.state
        d = model.distributions[k]
        w = d.index_from_uniform(self.rng.random())
        omega = d.support[w]
        i, _ = best_stage2(k, omega, st, self.V, model, obj)
        gamma = best_aux(st.Z, self.V, self.sigma, self.lo, self.hi, obj)
        x = model.penalty[k][w, i]
        a = model.arrival[k][w, i]
        mu = model.service[k][w, i]
        aux = list(obj.nonlinear_indices)
        U = np.array([advance_inequality(u, hn, bn) for u, hn, bn in
                      zip(st.U, obj.h(x), obj.thresholds)])
        Z = np.array([advance_equality(z, g, xm, lo, hi) for z, g, xm, lo, hi in
                      zip(st.Z, gamma, x[aux], *self.box)])
        Q = np.array([advance_actual(q, m, ar) for q, m, ar in zip(st.Q, mu, a)])
        self.state = QueueState(Q, U, Z, st.t + 1)
        return SlotDecision(k, explore, i, gamma, None), w

    def initialize(self):
        K = self.model.K
        while self.state.t < 0:
            self._finish((self.state.t + K * self.W0) % K, False)

    def step(self):
        """One slot t >= 0; returns (SlotDecision, omega index)."""
        K = self.model.K
        explore = self.rng.random() < self.theta
        if explore:
            k = min(int(self.rng.random() * K), K - 1) if K > 1 else 0
        else:
            e = [exact_e(j, self.state, self.V, self.model, self.obj) for j in range(K)]
            k = argmin_first(e)
        dec, w = self._finish(k, explore)
        dec.estimates = None
        return dec, w


def exact_maxweight_step(ctl: ExactMaxWeight):
    return ctl.step()


class NoStage1DPP:
    """Plain drift-plus-penalty for a single-option scenario: there is no
    stage-1 decision, only the exploration coin (kept so the random stream is
    consumed the same way), the outcome draw and the stage-2 argmin."""

    def __init__(self, model, obj, V, W0=1, theta=0.0, seed=0):
        if model.K != 1:
            raise ValueError("NoStage1DPP needs K = 1")
        self.inner = ExactMaxWeight(model, obj, V, W0, theta, seed=seed)

    def run(self, horizon):
        self.inner.initialize()
        out = []
        for t in range(horizon):
            explore = self.inner.rng.random() < self.inner.theta
            dec, w = self.inner._finish(0, explore)
            out.append((t, 0, explore, dec.I, w, dec.gamma.tobytes()))
        return out


def fixed_policy_step(policy: StationaryPolicy, model, rng, gamma_star):
    """Sample (k, omega, I) from a stationary policy; gamma is held at gamma*."""
    k = int(rng.choice(model.K, p=policy.stage1_probs))
    d = model.distributions[k]
    w = d.index_from_uniform(rng.random())
    i = int(rng.choice(model.n_actions, p=policy.stage2_probs[k][w]))
    return SlotDecision(k, False, i, np.array(gamma_star, dtype=float), None), w


def play_fixed_policy(policy: StationaryPolicy, model, obj, horizon, seed=0):
    """Vectorised replay of a stationary policy; returns per-slot penalties,
    arrivals and services."""
    rng = np.random.default_rng(seed)
    ks = rng.choice(model.K, p=policy.stage1_probs, size=horizon)
    x = np.zeros((horizon, model.M))
    a = np.zeros((horizon, model.L))
    mu = np.zeros((horizon, model.L))
    for k in range(model.K):
        sel = np.nonzero(ks == k)[0]
        d = model.distributions[k]
        ws = np.searchsorted(d.cdf, rng.random(sel.size), side="right")
        ws = np.minimum(ws, len(d) - 1)
        cum = np.cumsum(policy.stage2_probs[k], axis=1)
        u = rng.random(sel.size)
        I = (u[:, None] > cum[ws]).sum(axis=1)
        I = np.minimum(I, model.n_actions - 1)
        x[sel] = model.penalty[k][ws, I]
        a[sel] = model.arrival[k][ws, I]
        mu[sel] = model.service[k][ws, I]
    return x, a, mu


def gamma_star(policy, model, obj):
    xbar, _, _ = policy_time_averages(policy, model, obj)
    return xbar[list(obj.nonlinear_indices)]
