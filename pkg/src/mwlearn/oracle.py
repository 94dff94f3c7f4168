"""Computations that need the true outcome distributions: exact e_k and the
optimal stationary cost f*_theta over the occupancy polytope."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .queues import QueueState
from .scenario import ObjectiveSpec, ScenarioModel
from .weights import best_stage2

SIZE_GUARD = 10_000
TOL_FSTAR = 1e-4


class OracleError(RuntimeError):
    pass


@dataclass
class StationaryPolicy:
    """Stage-1 law plus, for each option, a row-stochastic (n_k, n_actions) matrix."""

    stage1_probs: np.ndarray
    stage2_probs: list

    def __post_init__(self):
        self.stage1_probs = np.asarray(self.stage1_probs, dtype=float)
        self.stage2_probs = [np.asarray(p, dtype=float) for p in self.stage2_probs]

    def validate(self, model: ScenarioModel, theta: float = 0.0, tol: float = 1e-9):
        q = self.stage1_probs
        if q.shape != (model.K,) or (q < -tol).any() or abs(q.sum() - 1) > tol:
            raise OracleError("stage-1 probabilities are not a distribution over the options")
        if (q < theta / model.K - tol).any():
            raise OracleError("stage-1 probabilities violate the exploration floor theta/K")
        for k, p in enumerate(self.stage2_probs):
            if p.shape != (len(model.distributions[k]), model.n_actions) or (p < -tol).any() \
                    or np.abs(p.sum(axis=1) - 1).max() > tol:
                raise OracleError(f"stage-2 rows of option {k} are not distributions")
        return self

    @classmethod
    def deterministic(cls, model: ScenarioModel, k, rule):
        """Always pick option ``k``; ``rule[w]`` is the action for outcome ``w`` of
        every option (a single int applies to all outcomes)."""
        q = np.zeros(model.K)
        q[k] = 1.0
        rows = []
        for j, d in enumerate(model.distributions):
            p = np.zeros((len(d), model.n_actions))
            acts = [rule] * len(d) if np.isscalar(rule) else rule
            for w in range(len(d)):
                p[w, acts[w] if j == k else 0] = 1.0
            rows.append(p)
        return cls(q, rows)

    def occupancy(self, model: ScenarioModel) -> np.ndarray:
        parts = []
        for k, d in enumerate(model.distributions):
            pw = np.asarray(d.probabilities)
            parts.append((self.stage1_probs[k] * pw[:, None] * self.stage2_probs[k]).ravel())
        return np.concatenate(parts)

    def to_dict(self):
        return {"stage1_probs": self.stage1_probs.tolist(),
                "stage2_probs": [p.tolist() for p in self.stage2_probs]}


def exact_e(k, state: QueueState, V, model: ScenarioModel, obj: ObjectiveSpec) -> float:
    """e_k = sum over omega of Pr[omega | k] * min_I Y_k(I, omega, Theta)."""
    k = model.check_option(k)
    d = model.distributions[k]
    terms = [p * best_stage2(k, omega, state, V, model, obj)[1]
             for omega, p in zip(d.support, d.probabilities)]
    return math.fsum(terms)


class OccupancyLP:
    """Linear maps from the occupancy vector rho(k, w, I) to time averages."""

    def __init__(self, model: ScenarioModel, obj: ObjectiveSpec):
        if model.size() > SIZE_GUARD:
            raise OracleError(f"scenario size {model.size()} exceeds the guard {SIZE_GUARD}")
        self.model, self.obj = model, obj
        nI = model.n_actions
        self.blocks = []
        start = 0
        for d in model.distributions:
            n = len(d) * nI
            self.blocks.append(slice(start, start + n))
            start += n
        self.n = start
        self.X = np.concatenate([p.reshape(-1, model.M) for p in model.penalty]).T
        self.A = np.concatenate([a.reshape(-1, model.L) for a in model.arrival]).T
        self.MU = np.concatenate([s.reshape(-1, model.L) for s in model.service]).T

        eq_rows, eq_rhs = [], []
        for k, d in enumerate(model.distributions):
            blk = self.blocks[k]
            pw = np.asarray(d.probabilities)
            for w in range(len(d)):
                row = np.zeros(self.n)
                row[blk] -= pw[w]
                row[blk.start + w * nI: blk.start + (w + 1) * nI] += 1.0
                eq_rows.append(row)
                eq_rhs.append(0.0)
        eq_rows.append(np.ones(self.n))
        eq_rhs.append(1.0)
        self.A_eq, self.b_eq = np.array(eq_rows), np.array(eq_rhs)
        self.stage1 = np.zeros((model.K, self.n))
        for k, blk in enumerate(self.blocks):
            self.stage1[k, blk] = 1.0
        # inequality block: h(xbar) - b <= 0 and Abar - mubar <= 0
        self.G_ub = np.vstack([obj.constraint_rows @ self.X, self.A - self.MU])
        self.h_ub = np.concatenate([obj.thresholds - obj.constraint_offsets, np.zeros(model.L)])

    def averages(self, rho):
        return self.X @ rho, self.A @ rho, self.MU @ rho

    def floor_rows(self, theta):
        return -self.stage1, -np.full(self.model.K, theta / self.model.K)

    def ub(self, theta):
        fa, fb = self.floor_rows(theta)
        return np.vstack([self.G_ub, fa]), np.concatenate([self.h_ub, fb])

    def value(self, rho) -> float:
        return self.obj.f(self.X @ rho)

    def policy(self, rho) -> StationaryPolicy:
        model, nI = self.model, self.model.n_actions
        rho = np.maximum(rho, 0.0)
        q = np.array([rho[b].sum() for b in self.blocks])
        q = q / q.sum()
        rows = []
        for k, d in enumerate(model.distributions):
            m = rho[self.blocks[k]].reshape(len(d), nI)
            tot = m.sum(axis=1, keepdims=True)
            rows.append(np.where(tot > 1e-15, m / np.where(tot > 1e-15, tot, 1.0), 1.0 / nI))
        return StationaryPolicy(q, rows)

    def violation(self, rho, theta) -> float:
        G, h = self.ub(theta)
        return float(max(np.max(G @ rho - h, initial=0.0),
                         np.max(np.abs(self.A_eq @ rho - self.b_eq)),
                         np.max(-rho, initial=0.0)))


def policy_time_averages(policy: StationaryPolicy, model: ScenarioModel, obj: ObjectiveSpec):
    """Exact (xbar, Abar, mubar) of a stationary randomized policy."""
    xbar, abar, mubar = np.zeros(model.M), np.zeros(model.L), np.zeros(model.L)
    for k, d in enumerate(model.distributions):
        for w, pw in enumerate(d.probabilities):
            for i in range(model.n_actions):
                pr = policy.stage1_probs[k] * pw * policy.stage2_probs[k][w, i]
                if pr:
                    xbar += pr * model.penalty[k][w, i]
                    abar += pr * model.arrival[k][w, i]
                    mubar += pr * model.service[k][w, i]
    return xbar, abar, mubar


@dataclass
class FStarResult:
    feasible: bool
    value: float
    theta: float
    policy: Optional[StationaryPolicy] = None
    occupancy: Optional[np.ndarray] = None
    xbar: Optional[np.ndarray] = None
    method: str = ""
    message: str = ""
    certificate: dict = field(default_factory=dict)
    lower_bound: Optional[float] = None

    def to_dict(self):
        return {"feasible": self.feasible, "value": self.value, "theta": self.theta,
                "method": self.method, "message": self.message,
                "lower_bound": self.value if self.lower_bound is None else self.lower_bound,
                "xbar": None if self.xbar is None else self.xbar.tolist(),
                "policy": None if self.policy is None else self.policy.to_dict(),
                "certificate": self.certificate}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _lp(lp: OccupancyLP, c, theta):
    G, h = lp.ub(theta)
    return linprog(c, A_ub=G, b_ub=h, A_eq=lp.A_eq, b_eq=lp.b_eq, bounds=(0, None),
                   method="highs")


def max_slack(model: ScenarioModel, obj: ObjectiveSpec, theta: float):
    """Largest eps with a floor-respecting policy meeting every inequality and
    stability constraint with margin eps (Assumption-2 style slackness)."""
    lp = OccupancyLP(model, obj)
    G, h = lp.ub(theta)
    m = lp.G_ub.shape[0]
    # add eps to the first m rows only (the exploration floor is not slackened)
    G_eps = np.hstack([G, np.concatenate([np.ones(m), np.zeros(G.shape[0] - m)])[:, None]])
    A_eq = np.hstack([lp.A_eq, np.zeros((lp.A_eq.shape[0], 1))])
    c = np.zeros(lp.n + 1)
    c[-1] = -1.0
    bounds = [(0, None)] * lp.n + [(None, 1e6)]
    res = linprog(c, A_ub=G_eps, b_ub=h, A_eq=A_eq, b_eq=lp.b_eq, bounds=bounds,
                  method="highs")
    if res.status != 0:
        return -math.inf, None
    return float(res.x[-1]), res.x[:-1]


def _term_slope(term, x, step=1e-7):
    return (term(x + step) - term(x - step)) / (2 * step)


def solve_fstar(model: ScenarioModel, obj: ObjectiveSpec, theta: float = 0.0,
                method: str = "auto", gap_tol: float = 1e-7, max_iter: int = 500) -> FStarResult:
    """Minimise f(xbar) over floor-respecting stationary policies subject to
    h(xbar) <= b and mubar >= Abar.

    A linear objective is an exact LP over the occupancy measure.  A convex
    separable f~ is handled by Kelley's cutting-plane method on the epigraph
    of each f~ term: every iteration solves an LP whose optimum is a lower
    bound, and the objective at its solution is an upper bound, so the loop
    stops with a certified gap below ``gap_tol``.
    """
    if not 0 <= theta < 1:
        raise OracleError("theta must lie in [0, 1)")
    lp = OccupancyLP(model, obj)
    c_lin = obj.linear @ lp.X
    base = _lp(lp, c_lin, theta)
    if base.status == 2:
        return FStarResult(False, math.inf, theta, method="lp",
                           message="infeasible: no floor-respecting stationary policy meets "
                                   "the inequality and stability constraints")
    if base.status != 0:
        raise OracleError(f"LP solver failed: {base.message}")
    if method == "auto":
        method = "lp" if not obj.nonlinear_indices else "cutting-plane"
    if method == "lp":
        if obj.nonlinear_indices:
            raise OracleError("the LP method needs a linear objective")
        return _result(lp, np.maximum(base.x, 0.0), theta, "lp")
    if method != "cutting-plane":
        raise OracleError(f"unknown method {method!r}")

    aux = list(obj.nonlinear_indices)
    terms = obj.nonlinear_fn.terms
    na, n = len(aux), lp.n
    G, h = lp.ub(theta)
    # variables: [rho (n), t_1..t_na]; minimise c_lin.rho + sum t_j
    c = np.concatenate([c_lin, np.ones(na)])
    A_ub0 = np.hstack([G, np.zeros((G.shape[0], na))])
    A_eq = np.hstack([lp.A_eq, np.zeros((lp.A_eq.shape[0], na))])
    cut_rows, cut_rhs = [], []

    def add_cuts(xbar):
        for j, m in enumerate(aux):
            x0 = float(xbar[m])
            f0, g0 = terms[j](x0), _term_slope(terms[j], x0)
            # t_j >= f0 + g0 (X[m] . rho - x0)
            row = np.zeros(n + na)
            row[:n] = g0 * lp.X[m]
            row[n + j] = -1.0
            cut_rows.append(row)
            cut_rhs.append(g0 * x0 - f0)

    for xb in (lp.X @ np.maximum(base.x, 0.0), 0.5 * (model.x_min + model.x_max),
               model.x_min, model.x_max):
        add_cuts(xb)
    best, lower = None, -math.inf
    bounds = [(0, None)] * n + [(None, None)] * na
    for it in range(max_iter):
        res = linprog(c, A_ub=np.vstack([A_ub0] + cut_rows),
                      b_ub=np.concatenate([h, cut_rhs]), A_eq=A_eq, b_eq=lp.b_eq,
                      bounds=bounds, method="highs")
        if res.status != 0:
            raise OracleError(f"cutting-plane LP failed: {res.message}")
        lower = max(lower, float(res.fun) + obj.offset)
        rho = np.maximum(res.x[:n], 0.0)
        val = lp.value(rho)
        if best is None or val < best[0]:
            best = (val, rho)
        if best[0] - lower <= gap_tol:
            break
        add_cuts(lp.X @ rho)
    else:
        raise OracleError(f"cutting-plane gap {best[0] - lower:.3g} above {gap_tol} "
                          f"after {max_iter} iterations")
    out = _result(lp, best[1], theta, "cutting-plane")
    out.message = f"certified gap {best[0] - lower:.3g} after {it + 1} LPs"
    out.lower_bound = lower
    return out


def _result(lp: OccupancyLP, rho, theta, method):
    xbar = lp.X @ rho
    return FStarResult(True, lp.obj.f(xbar), theta, lp.policy(rho), rho, xbar, method)


def certify_fstar(model: ScenarioModel, obj: ObjectiveSpec, result: FStarResult,
                  n: int = 100_000, tol: float = TOL_FSTAR, seed: int = 0) -> dict:
    """Random-policy certificate for ``result``.

    Draws ``n`` random floor-respecting policies, mixes them with a strictly
    slack policy so that a share of them is feasible, and also mixes them with
    the reported optimum at small weights (local rays).  The certificate holds
    when the best feasible sample is within ``tol`` of the reported value:
    nothing sampled beats it by more than ``tol`` and the rays come within
    ``tol`` of it from the feasible side.
    """
    theta = result.theta
    lp = OccupancyLP(model, obj)
    rng = np.random.default_rng(seed)
    eps, slack = max_slack(model, obj, theta)
    K, nI = model.K, model.n_actions
    best_random, worst_margin, n_feasible = math.inf, math.inf, 0
    batch = 2000
    weights = np.array([0.0, 0.5, 0.9, 1.0])
    ray_eps = np.array([1e-5, 1e-4, 1e-3, 1e-2, 1e-1])
    done = 0
    G, h = lp.ub(theta)
    aux = list(obj.nonlinear_indices)
    while done < n:
        b = min(batch, n - done)
        q = theta / K + (1 - theta) * rng.dirichlet(np.ones(K), size=b)
        rho = np.empty((b, lp.n))
        for k, d in enumerate(model.distributions):
            pw = np.asarray(d.probabilities)
            pi = rng.dirichlet(np.full(nI, 0.3), size=(b, len(d)))
            rho[:, lp.blocks[k]] = (q[:, k, None, None] * pw[None, :, None] * pi).reshape(b, -1)
        cands = [rho]
        if slack is not None:
            a = weights[rng.integers(len(weights), size=b)][:, None]
            cands.append(a * np.maximum(slack, 0.0)[None, :] + (1 - a) * rho)
        # local rays from the reported optimum towards (mostly feasible) samples
        e = ray_eps[rng.integers(len(ray_eps), size=b)][:, None]
        cands.append((1 - e) * result.occupancy[None, :] + e * cands[-1])
        for c in cands:
            feas = (c @ G.T - h[None, :] <= 1e-9).all(axis=1)
            if not feas.any():
                continue
            xs = c[feas] @ lp.X.T
            vals = xs @ obj.linear + obj.offset
            if aux:
                vals = vals + np.array([obj.f_tilde(x[aux]) for x in xs])
            n_feasible += int(feas.sum())
            best_random = min(best_random, float(vals.min()))
        done += b
    worst_margin = best_random - result.value
    cert = {"samples": n, "feasible_samples": n_feasible, "best_sampled": best_random,
            "margin": worst_margin, "tol": tol, "slack_eps": eps,
            "holds": bool(n_feasible > 0 and -tol <= worst_margin <= tol)}
    result.certificate = cert
    return cert
