"""Controlled environment: stage-1 options, hidden outcome distributions and
the deterministic penalty / arrival / service tables.

Options and actions are indexed from 0.  Everything is finite, so every
function of ``(k, omega, I)`` is stored as a dense table indexed by
``(k, omega-index, I-index)``.  The controller only ever sees sampled
outcomes; ``OutcomeDistribution.probabilities`` is read by the oracle.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import jsonschema
import numpy as np

PROB_TOL = 1e-12


class ScenarioError(ValueError):
    """Raised for malformed scenarios or out-of-range indices."""


@dataclass(frozen=True)
class OutcomeDistribution:
    """Finite discrete distribution F_k over outcome vectors."""

    support: tuple
    probabilities: tuple
    cdf: np.ndarray = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        support = tuple(tuple(float(v) for v in np.atleast_1d(w)) for w in self.support)
        probs = tuple(float(p) for p in self.probabilities)
        if not support:
            raise ScenarioError("empty support")
        if len(support) != len(probs):
            raise ScenarioError(
                f"support has {len(support)} entries but {len(probs)} probabilities")
        if len({len(w) for w in support}) != 1:
            raise ScenarioError("support entries have different dimensions")
        if len(set(support)) != len(support):
            raise ScenarioError("support entries are not distinct")
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise ScenarioError("negative or non-finite probability")
        total = math.fsum(probs)
        if abs(total - 1.0) > PROB_TOL:
            raise ScenarioError(f"probabilities sum to {total!r}, expected 1")
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "cdf", cdf)
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(support)})

    def __len__(self):
        return len(self.support)

    @property
    def dim(self) -> int:
        return len(self.support[0])

    def index_of(self, omega) -> int:
        key = tuple(float(v) for v in np.atleast_1d(omega))
        try:
            return self._index[key]
        except KeyError:
            raise ScenarioError(f"outcome {key} is not in the support") from None

    def index_from_uniform(self, u: float) -> int:
        return int(np.searchsorted(self.cdf, u, side="right"))

    def mean(self) -> np.ndarray:
        return np.asarray(self.probabilities) @ np.asarray(self.support)


class ScenarioModel:
    """Immutable environment model.

    ``penalty[k]`` has shape ``(n_k, n_actions, M)``; ``arrival[k]`` and
    ``service[k]`` have shape ``(n_k, n_actions, L)``.  Bounds default to the
    tight envelopes of the tables and are checked against them otherwise.
    """

    def __init__(self, distributions: Sequence[OutcomeDistribution], actions: Sequence[str],
                 penalty, arrival, service, *, option_names=None, bounds=None,
                 name="custom", sigma=1.0):
        self.name = name
        self.distributions = tuple(distributions)
        self.K = len(self.distributions)
        if self.K == 0:
            raise ScenarioError("scenario needs at least one stage-1 option")
        self.actions = tuple(actions)
        if not self.actions:
            raise ScenarioError("stage-2 action set is empty")
        self.option_names = tuple(option_names or (f"option-{k}" for k in range(self.K)))
        if len(self.option_names) != self.K:
            raise ScenarioError("option_names length differs from K")
        if not sigma > 0:
            raise ScenarioError("sigma must be positive")
        self.sigma = float(sigma)

        self.penalty = self._tables(penalty, "penalty")
        self.arrival = self._tables(arrival, "arrival")
        self.service = self._tables(service, "service")
        self.M = self.penalty[0].shape[2]
        self.L = self.arrival[0].shape[2]
        for k in range(self.K):
            if self.penalty[k].shape[2] != self.M or self.arrival[k].shape[2] != self.L \
                    or self.service[k].shape[2] != self.L:
                raise ScenarioError(f"option {k}: inconsistent table widths")

        all_x = np.concatenate([p.reshape(-1, self.M) for p in self.penalty])
        all_a = np.concatenate([a.reshape(-1, self.L) for a in self.arrival])
        all_mu = np.concatenate([s.reshape(-1, self.L) for s in self.service])
        if (all_a < 0).any() or (all_mu < 0).any():
            raise ScenarioError("arrivals and services must be non-negative")
        if not (np.isfinite(all_x).all() and np.isfinite(all_a).all() and np.isfinite(all_mu).all()):
            raise ScenarioError("tables contain non-finite values")
        bounds = dict(bounds or {})
        self.x_min = self._bound(bounds.get("x_min"), all_x.min(axis=0), self.M, "x_min")
        self.x_max = self._bound(bounds.get("x_max"), all_x.max(axis=0), self.M, "x_max")
        self.A_max = self._bound(bounds.get("A_max"), all_a.max(axis=0), self.L, "A_max")
        self.mu_max = self._bound(bounds.get("mu_max"), all_mu.max(axis=0), self.L, "mu_max")
        if (all_x < self.x_min).any() or (all_x > self.x_max).any():
            raise ScenarioError("penalty table violates [x_min, x_max]")
        if (all_a > self.A_max).any():
            raise ScenarioError("arrival table exceeds A_max")
        if (all_mu > self.mu_max).any():
            raise ScenarioError("service table exceeds mu_max")
        for arr in (*self.penalty, *self.arrival, *self.service,
                    self.x_min, self.x_max, self.A_max, self.mu_max):
            arr.setflags(write=False)

    def _tables(self, tables, what):
        if len(tables) != self.K:
            raise ScenarioError(f"{what}: expected {self.K} option tables, got {len(tables)}")
        out = []
        for k, tab in enumerate(tables):
            arr = np.array(tab, dtype=float)
            if arr.ndim != 3 or arr.shape[0] != len(self.distributions[k]) \
                    or arr.shape[1] != len(self.actions):
                raise ScenarioError(
                    f"{what}: option {k} table has shape {arr.shape}, expected "
                    f"({len(self.distributions[k])}, {len(self.actions)}, width)")
            out.append(arr)
        return tuple(out)

    @staticmethod
    def _bound(given, tight, width, what):
        if given is None:
            return np.array(tight, dtype=float)
        arr = np.array(given, dtype=float).reshape(-1)
        if arr.shape != (width,):
            raise ScenarioError(f"{what} must have {width} entries")
        return arr

    @classmethod
    def from_functions(cls, distributions, actions, penalty_fn: Callable, arrival_fn: Callable,
                       service_fn: Callable, **kwargs) -> "ScenarioModel":
        """Tabulate callables ``fn(k, omega, I) -> vector`` over every finite input."""
        tabs = {"penalty": [], "arrival": [], "service": []}
        for k, dist in enumerate(distributions):
            for key, fn in (("penalty", penalty_fn), ("arrival", arrival_fn),
                            ("service", service_fn)):
                tabs[key].append([[np.atleast_1d(np.asarray(fn(k, np.asarray(w), i), dtype=float))
                                   for i in range(len(actions))] for w in dist.support])
        return cls(distributions, actions, tabs["penalty"], tabs["arrival"], tabs["service"],
                   **kwargs)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def check_option(self, k) -> int:
        if not isinstance(k, (int, np.integer)) or not 0 <= k < self.K:
            raise ScenarioError(f"invalid option index {k!r}; expected 0..{self.K - 1}")
        return int(k)

    def check_action(self, i) -> int:
        if not isinstance(i, (int, np.integer)) or not 0 <= i < self.n_actions:
            raise ScenarioError(f"invalid action index {i!r}; expected 0..{self.n_actions - 1}")
        return int(i)

    def size(self) -> int:
        """K * |support| * |actions|, summed over options."""
        return sum(len(d) for d in self.distributions) * self.n_actions

    def triple(self, k: int, w: int, i: int):
        return self.penalty[k][w, i], self.arrival[k][w, i], self.service[k][w, i]


def sample_outcome(model: ScenarioModel, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw omega ~ F_k using one uniform variate from ``rng``."""
    k = model.check_option(k)
    dist = model.distributions[k]
    return np.array(dist.support[dist.index_from_uniform(rng.random())])


def evaluate_slot(model: ScenarioModel, k: int, omega, i: int):
    """Return ``(x, A, mu)`` for stage-1 option ``k``, outcome ``omega``, action ``i``."""
    k = model.check_option(k)
    i = model.check_action(i)
    w = model.distributions[k].index_of(omega)
    x, a, mu = model.triple(k, w, i)
    return x.copy(), a.copy(), mu.copy()


# --------------------------------------------------------------------------
# Objective


class SeparableConvex:
    """Separable convex function ``sum_j term_j(gamma_j)``.

    ``minimizer(j, V, Z, lo, hi)`` optionally returns the closed-form argmin of
    ``V*term_j(g) - Z*g`` on ``[lo, hi]``; without it the auxiliary solver
    falls back to golden-section search.
    """

    separable = True

    def __init__(self, terms, minimizer=None, family=None, params=None):
        self.terms = tuple(terms)
        self.minimizer = minimizer
        self.family = family
        self.params = params or {}

    def __call__(self, gamma) -> float:
        gamma = np.atleast_1d(gamma)
        return math.fsum(term(float(g)) for term, g in zip(self.terms, gamma))

    def __len__(self):
        return len(self.terms)


def neg_log1p(weights) -> SeparableConvex:
    """-sum_j w_j log(1 + g_j): a proportional-fair utility written as a cost."""
    weights = [float(w) for w in weights]
    if any(w <= 0 for w in weights):
        raise ScenarioError("neg_log1p weights must be positive")

    def make(w):
        def term(g):
            if g <= -1.0:
                return math.inf
            return -w * math.log1p(g)
        return term

    def minimizer(j, V, Z, lo, hi):
        # d/dg [-V w log(1+g) - Z g] = -V w/(1+g) - Z
        if V == 0:
            return hi if Z > 0 else lo if Z < 0 else 0.5 * (lo + hi)
        if Z >= 0:
            return hi
        return min(max(-1.0 - V * weights[j] / Z, lo), hi)

    return SeparableConvex([make(w) for w in weights], minimizer, "neg_log1p",
                           {"weights": weights})


def quadratic(a, b=None) -> SeparableConvex:
    """sum_j a_j g_j^2 + b_j g_j with a_j >= 0."""
    a = [float(v) for v in a]
    b = [0.0] * len(a) if b is None else [float(v) for v in b]
    if any(v < 0 for v in a):
        raise ScenarioError("quadratic coefficients must be non-negative")

    def make(aj, bj):
        return lambda g: aj * g * g + bj * g

    def minimizer(j, V, Z, lo, hi):
        aj, bj = a[j], b[j]
        slope = V * bj - Z
        if V * aj == 0:
            if slope == 0:
                return 0.5 * (lo + hi)
            return lo if slope > 0 else hi
        return min(max(-slope / (2 * V * aj), lo), hi)

    return SeparableConvex([make(aj, bj) for aj, bj in zip(a, b)], minimizer, "quadratic",
                           {"a": a, "b": b})


NONLINEAR_FAMILIES = {"neg_log1p": neg_log1p, "quadratic": quadratic}


class ObjectiveSpec:
    """f(x) = l(x) + f~(x restricted to the nonlinear indices), plus affine
    constraints h_n(x) = rows[n] . x + offsets[n] <= b_n."""

    def __init__(self, M, linear=None, offset=0.0, nonlinear_indices=(), nonlinear_fn=None,
                 constraint_rows=None, constraint_offsets=None, thresholds=None):
        self.M = int(M)
        self.linear = np.zeros(self.M) if linear is None else np.array(linear, dtype=float)
        self.offset = float(offset)
        self.nonlinear_indices = tuple(int(m) for m in nonlinear_indices)
        self.nonlinear_fn = nonlinear_fn
        rows = np.zeros((0, self.M)) if constraint_rows is None else \
            np.array(constraint_rows, dtype=float).reshape(-1, self.M)
        self.constraint_rows = rows
        self.N = rows.shape[0]
        self.constraint_offsets = np.zeros(self.N) if constraint_offsets is None else \
            np.array(constraint_offsets, dtype=float)
        self.thresholds = np.zeros(self.N) if thresholds is None else \
            np.array(thresholds, dtype=float)
        self._validate()

    def _validate(self):
        if self.linear.shape != (self.M,):
            raise ScenarioError(f"linear objective needs {self.M} coefficients")
        if self.constraint_offsets.shape != (self.N,) or self.thresholds.shape != (self.N,):
            raise ScenarioError("constraint offsets/thresholds length differs from rows")
        idx = self.nonlinear_indices
        if len(set(idx)) != len(idx) or any(not 0 <= m < self.M for m in idx):
            raise ScenarioError("nonlinear indices must be distinct and within 0..M-1")
        if idx and self.nonlinear_fn is None:
            raise ScenarioError("nonlinear indices given without a nonlinear function")
        if self.nonlinear_fn is not None:
            if not getattr(self.nonlinear_fn, "separable", False):
                raise ScenarioError("non-separable nonlinear objectives are not supported")
            if len(self.nonlinear_fn) != len(idx):
                raise ScenarioError("nonlinear function arity differs from nonlinear indices")

    @property
    def n_aux(self) -> int:
        return len(self.nonlinear_indices)

    def l(self, x) -> float:
        return float(self.linear @ np.asarray(x, dtype=float)) + self.offset

    def f_tilde(self, gamma) -> float:
        if not self.nonlinear_indices:
            return 0.0
        return self.nonlinear_fn(gamma)

    def f(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return self.l(x) + self.f_tilde(x[list(self.nonlinear_indices)])

    def h(self, x) -> np.ndarray:
        return self.constraint_rows @ np.asarray(x, dtype=float) + self.constraint_offsets

    def residuals(self, x) -> np.ndarray:
        return self.h(x) - self.thresholds

    def check_against(self, model: ScenarioModel):
        if model.M != self.M:
            raise ScenarioError(f"objective has M={self.M} but scenario has M={model.M}")


# --------------------------------------------------------------------------
# JSON format


def _schema():
    text = resources.files("mwlearn").joinpath("schemas/scenario.schema.json").read_text()
    return json.loads(text)


def scenario_from_dict(doc: dict):
    """Build ``(ScenarioModel, ObjectiveSpec)`` from a parsed scenario document."""
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"schema violation at {where}: {exc.message}") from None
    dists = []
    for k, opt in enumerate(doc["options"]):
        try:
            dists.append(OutcomeDistribution(opt["support"], opt["probabilities"]))
        except ScenarioError as exc:
            raise ScenarioError(f"option {k} ({opt.get('name', '?')}): {exc}") from None
    model = ScenarioModel(
        dists, doc["actions"], doc["penalty"], doc["arrival"], doc["service"],
        option_names=[o.get("name", f"option-{k}") for k, o in enumerate(doc["options"])],
        bounds=doc.get("bounds"), name=doc.get("name", "custom"), sigma=doc.get("sigma", 1.0))
    obj_doc = doc["objective"]
    nl = obj_doc.get("nonlinear")
    fn, idx = None, ()
    if nl:
        idx = nl["indices"]
        family = NONLINEAR_FAMILIES.get(nl["family"])
        if family is None:
            raise ScenarioError(f"unknown nonlinear family {nl['family']!r}")
        fn = family(**nl.get("params", {}))
    cons = doc.get("constraints", [])
    obj = ObjectiveSpec(
        model.M, obj_doc.get("linear"), obj_doc.get("offset", 0.0), idx, fn,
        [c["coefficients"] for c in cons] or None,
        [c.get("offset", 0.0) for c in cons] or None,
        [c["bound"] for c in cons] or None)
    obj.check_against(model)
    return model, obj


def scenario_to_dict(model: ScenarioModel, obj: ObjectiveSpec) -> dict:
    def fl(a):
        return np.asarray(a, dtype=float).tolist()

    doc = {
        "name": model.name,
        "sigma": model.sigma,
        "options": [{"name": n, "support": [list(w) for w in d.support],
                     "probabilities": list(d.probabilities)}
                    for n, d in zip(model.option_names, model.distributions)],
        "actions": list(model.actions),
        "penalty": [fl(p) for p in model.penalty],
        "arrival": [fl(a) for a in model.arrival],
        "service": [fl(s) for s in model.service],
        "bounds": {"x_min": fl(model.x_min), "x_max": fl(model.x_max),
                   "A_max": fl(model.A_max), "mu_max": fl(model.mu_max)},
        "objective": {"linear": fl(obj.linear), "offset": obj.offset},
        "constraints": [{"coefficients": fl(r), "offset": float(o), "bound": float(b)}
                        for r, o, b in zip(obj.constraint_rows, obj.constraint_offsets,
                                           obj.thresholds)],
    }
    if obj.nonlinear_indices:
        fn = obj.nonlinear_fn
        if fn.family is None:
            raise ScenarioError("only registered nonlinear families can be exported")
        doc["objective"]["nonlinear"] = {"indices": list(obj.nonlinear_indices),
                                         "family": fn.family, "params": fn.params}
    return doc


def load_scenario(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc)


def save_scenario(model, obj, path):
    Path(path).write_text(json.dumps(scenario_to_dict(model, obj), indent=1) + "\n")
