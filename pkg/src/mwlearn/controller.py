"""Max-weight learning controller.

Each slot: draw the exploration event, pick the stage-1 option, sample the
outcome, take the stage-2 argmin and the auxiliary argmin, store the sample
on exploration slots, then advance Q, U and Z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .estimator import SampleBuffer
from .metrics import (RunningAverages, SlotRecord, checkpoint_row, checkpoint_slots,
                      column_names, rows_to_csv)
from .queues import QueueState
from .scenario import ObjectiveSpec, ScenarioModel
from .weights import ControlParams, WeightTables, argmin_first, best_aux

APPROACHES = ("approach1", "approach2", "oracle", "uniform")


@dataclass(frozen=True)
class Schedule:
    """Constant (V, W) or the growing V(t) = (t - t0 + 1)^beta2 V0 and
    W_hat(t) = floor((t + 1)^beta1) schedules."""

    mode: str = "constant"
    V0: float = 1.0
    fixed_W: int = 1
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    t0: int = 0

    def __post_init__(self):
        if self.mode == "constant":
            if not self.V0 >= 0:
                raise ValueError("constant mode needs V >= 0")
            if int(self.fixed_W) != self.fixed_W or self.fixed_W < 1:
                raise ValueError("constant mode needs an integer W >= 1")
        elif self.mode == "variable":
            if not self.V0 > 0:
                raise ValueError("variable mode needs V0 > 0")
            if self.beta1 is None or self.beta2 is None or not 0 < self.beta1 < self.beta2 < 1:
                raise ValueError("variable mode needs 0 < beta1 < beta2 < 1")
            if self.t0 < 0:
                raise ValueError("t0 must be non-negative")
        else:
            raise ValueError(f"unknown schedule mode {self.mode!r}")

    @classmethod
    def constant(cls, V, W=1):
        return cls("constant", float(V), int(W))

    @classmethod
    def variable(cls, V0, beta1, beta2, t0=0):
        return cls("variable", float(V0), 1, float(beta1), float(beta2), int(t0))

    @property
    def W0(self) -> int:
        return self.fixed_W if self.mode == "constant" else 1

    def V(self, t) -> float:
        if self.mode == "constant" or t <= self.t0:
            return self.V0
        return (t - self.t0 + 1) ** self.beta2 * self.V0

    def W_hat(self, t) -> int:
        if self.mode == "constant":
            return self.fixed_W
        return max(1, int(math.floor((t + 1) ** self.beta1)))

    def capacity(self, horizon) -> int:
        if self.mode == "constant":
            return self.fixed_W
        return max(1, int(math.ceil((horizon + 1) ** self.beta1)))


@dataclass
class SlotDecision:
    k: int
    exploration: bool
    I: int
    gamma: np.ndarray
    estimates: Optional[np.ndarray]


@dataclass
class SlotOutcome:
    w: int
    omega: tuple
    x: np.ndarray
    A: np.ndarray
    mu: np.ndarray
    cost: float


class Controller:
    """One replication of the max-weight learning algorithm.

    ``approach`` selects the stage-1 rule on non-exploration slots:
    ``approach1`` (stored outcomes re-evaluated at the current backlog),
    ``approach2`` (stored realised costs), ``oracle`` (exact e_k from the true
    distributions) or ``uniform`` (stage-1 uniform on every slot).
    """

    def __init__(self, model: ScenarioModel, obj: ObjectiveSpec, schedule: Schedule,
                 approach: str = "approach2", theta: float = 0.0, sigma: Optional[float] = None,
                 seed: int = 0, horizon: Optional[int] = None, trace: bool = False):
        if approach not in APPROACHES:
            raise ValueError(f"unknown approach {approach!r}; expected one of {APPROACHES}")
        self.model, self.obj, self.schedule, self.approach = model, obj, schedule, approach
        sigma = model.sigma if sigma is None else sigma
        self.params = ControlParams(schedule.V0, sigma, theta, schedule.W0)
        self.theta, self.sigma = float(theta), float(sigma)
        self.K = model.K
        self.tables = WeightTables(model, obj)
        self.rng = np.random.default_rng(seed)
        self.seed = seed

        N, na, L = obj.N, obj.n_aux, model.L
        self.s = np.zeros(1 + N + na + L)
        self._U = self.s[1:1 + N]
        self._Z = self.s[1 + N:1 + N + na]
        self._Q = self.s[1 + N + na:]
        aux = list(obj.nonlinear_indices)
        self.aux_lo, self.aux_hi = model.x_min[aux], model.x_max[aux]

        if horizon is None:
            capacity = schedule.capacity(0) if schedule.mode == "constant" else None
            if capacity is None:
                raise ValueError("variable schedules need the horizon to size the buffers")
        else:
            capacity = schedule.capacity(horizon)
        self.buffers = SampleBuffer(self.K, max(capacity, schedule.W0), N + na + L)

        self._cdf = [d.cdf for d in model.distributions]
        self._probs = [np.asarray(d.probabilities) for d in model.distributions]
        self._G = self.tables.G
        self._hb = self.tables.hb
        self._xa = self.tables.x_aux
        # all (k, w, I) rows stacked: one product gives min_I Y for every (k, w)
        self._nI = model.n_actions
        self._G_all = np.ascontiguousarray(
            np.concatenate([g.reshape(-1, g.shape[-1]) for g in self._G]))
        sizes = [len(d) for d in model.distributions]
        self._w_off = np.concatenate([[0], np.cumsum(sizes)])
        self._weights = np.zeros((self.K, int(self._w_off[-1])))
        if approach == "oracle":
            for k in range(self.K):
                self._weights[k, self._w_off[k]:self._w_off[k + 1]] = self._probs[k]
        self._est2 = np.zeros(self.K)
        self._est_key = [None] * self.K
        self._w_rand = 0
        self.t = -self.K * schedule.W0
        self.initialized = False
        self.explorations = 0
        self.averages: Optional[RunningAverages] = None
        self.trace = [] if trace else None
        self.last_W = 0
        self.Z0 = None

    # -- state ---------------------------------------------------------------

    @property
    def state(self) -> QueueState:
        return QueueState(self._Q.copy(), self._U.copy(), self._Z.copy(), self.t)

    def set_state(self, state: QueueState):
        self._Q[:] = state.Q
        self._U[:] = state.U
        self._Z[:] = state.Z

    # -- estimates -----------------------------------------------------------

    def estimates(self, W) -> np.ndarray:
        """Stage-1 scores for every option at the current state.

        Window contents only change on exploration slots or when W moves, so
        the per-option window weights (Approach 1) and stored-cost means
        (Approach 2) are cached against (count_k, window length).
        """
        if self.approach == "oracle":
            mins = (self._G_all @ self.s).reshape(-1, self._nI).min(axis=1)
            return self._weights @ mins
        buf = self.buffers
        cap = buf.capacity
        count = buf.count
        for k in range(self.K):
            c = int(count[k])
            n = min(W, c, cap)
            key = (c, n)
            if key == self._est_key[k]:
                continue
            self._est_key[k] = key
            head = (c - 1) % cap + cap
            sl = slice(head - n + 1, head + 1)
            if self.approach == "approach2":
                self._est2[k] = buf.cost[k, sl].mean() if n else 0.0
            else:
                lo, hi = self._w_off[k], self._w_off[k + 1]
                row = self._weights[k]
                row[lo:hi] = 0.0
                if n:
                    row[lo:hi] = np.bincount(buf.omega_index[k, sl], minlength=hi - lo) / n
        if self.approach == "approach2":
            return self._est2.copy()
        mins = (self._G_all @ self.s).reshape(-1, self._nI).min(axis=1)
        return self._weights @ mins

    def window(self, t) -> int:
        return min(self.schedule.W_hat(t), self._w_rand)

    # -- slots ---------------------------------------------------------------

    def _advance(self):
        """Run slot ``self.t``; returns (k, explore, w, I, gamma, cost, V, W, est)."""
        t = self.t
        s, K, rng = self.s, self.K, self.rng
        V = self.schedule.V(t)
        s[0] = V
        est = None
        W = 0
        if t < 0:
            k = (t + K * self.schedule.W0) % K
            explore = False
        else:
            W = self.window(t)
            explore = rng.random() < self.theta
            if explore:
                # a single option needs no type draw, so K = 1 runs consume the
                # same stream under every approach
                k = min(int(rng.random() * K), K - 1) if K > 1 else 0
                self.explorations += 1
            elif self.approach == "uniform":
                k = min(int(rng.random() * K), K - 1) if K > 1 else 0
            else:
                est = self.estimates(W)
                k = argmin_first(est)
        w = int(np.searchsorted(self._cdf[k], rng.random(), side="right"))
        y = self._G[k][w] @ s
        i = argmin_first(y)
        cost = float(y[i])
        gamma = best_aux(self._Z, V, self.sigma, self.aux_lo, self.aux_hi, self.obj)

        model = self.model
        x = model.penalty[k][w, i]
        a = model.arrival[k][w, i]
        mu = model.service[k][w, i]
        theta_now = s[1:]
        if explore or t < 0:
            self.buffers.record(k, w, theta_now, cost, V, t)
            self._w_rand = int(self.buffers.count.min())
        if self.trace is not None:
            self.trace.append(SlotRecord(t, k, explore, i, gamma.copy(), w, x, a, mu,
                                         theta_now.copy(), cost, V, W))
        if self.averages is not None and t >= 0:
            self.averages.push(x, gamma, theta_now)

        U, Z, Q = self._U, self._Z, self._Q
        if U.size:
            np.maximum(U + self._hb[k][w, i], 0.0, out=U)
        if Z.size:
            Z += self._xa[k][w, i] - gamma
        np.maximum(Q - mu, 0.0, out=Q)
        Q += a
        self.t = t + 1
        self.last_W = W
        return k, explore, w, i, gamma, cost, V, W, est

    def initialize(self):
        """Round-robin over the options for W0 passes starting from Theta = 0."""
        if self.initialized:
            raise RuntimeError("controller already initialized")
        self.s[1:] = 0.0
        while self.t < 0:
            self._advance()
        self.initialized = True
        self.Z0 = self._Z.copy()
        return self.state, self.buffers

    def step(self):
        """Run one slot t >= 0 and return (SlotDecision, SlotOutcome, Theta(t+1))."""
        if not self.initialized:
            raise RuntimeError("initialize() must run before step()")
        k, explore, w, i, gamma, cost, _, _, est = self._advance()
        model = self.model
        dec = SlotDecision(k, explore, i, gamma, est)
        out = SlotOutcome(w, model.distributions[k].support[w], model.penalty[k][w, i].copy(),
                          model.arrival[k][w, i].copy(), model.service[k][w, i].copy(), cost)
        return dec, out, self.state


@dataclass
class RunResult:
    rows: list
    columns: list
    initial_state: QueueState
    final_state: QueueState
    Z0: np.ndarray
    explorations: int
    horizon: int
    seed: int
    approach: str
    averages: RunningAverages
    buffers: SampleBuffer
    trace: Optional[list] = None
    extra: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        return rows_to_csv(self.rows, self.columns)

    @property
    def final(self) -> dict:
        return self.rows[-1] if self.rows else {}


def run(model: ScenarioModel, obj: ObjectiveSpec, schedule: Schedule, approach: str,
        horizon: int, seed: int, theta: float = 0.0, sigma: Optional[float] = None, *,
        checkpoints=None, trace: bool = False,
        observer: Optional[Callable[[Controller], None]] = None) -> RunResult:
    """Initialize, then run ``horizon`` slots, emitting checkpoint rows."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    ctl = Controller(model, obj, schedule, approach, theta, sigma, seed, horizon, trace)
    ctl.initialize()
    initial = ctl.state
    avgs = RunningAverages(model.M, obj.n_aux, model.L, obj.N)
    ctl.averages = avgs
    cps = checkpoint_slots(horizon) if checkpoints is None else \
        sorted({int(c) for c in checkpoints if 1 <= c <= horizon})
    rows, cp_Z = [], []
    ci, n_cp = 0, len(cps)
    advance = ctl._advance
    for t in range(horizon):
        advance()
        if observer is not None:
            observer(ctl)
        if ci < n_cp and t + 1 == cps[ci]:
            rows.append(checkpoint_row(avgs, obj, ctl._Q, ctl._U, ctl._Z,
                                       schedule.V(t), ctl.last_W, ctl.explorations))
            cp_Z.append(ctl._Z.copy())
            ci += 1
    return RunResult(rows, column_names(model.M, obj.N, obj.n_aux, model.L), initial,
                     ctl.state, ctl.Z0, ctl.explorations, horizon, seed, approach, avgs,
                     ctl.buffers, ctl.trace, {"checkpoint_Z": cp_Z})
