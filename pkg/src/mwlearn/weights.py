"""Per-slot max-weight functional, exact stage-2 argmin and the auxiliary
variable subproblem."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .queues import QueueState
from .scenario import ObjectiveSpec, ScenarioModel, evaluate_slot

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ControlParams:
    V: float = 1.0
    sigma: float = 1.0
    theta: float = 0.0
    W0: int = 1

    def __post_init__(self):
        if not self.V >= 0:
            raise ValueError("V must be non-negative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.theta < 1:
            raise ValueError("theta must lie in [0, 1)")
        if int(self.W0) != self.W0 or self.W0 < 1:
            raise ValueError("W0 must be a positive integer")


def y_functional(k, omega, state: QueueState, i, V, model: ScenarioModel,
                 obj: ObjectiveSpec) -> float:
    """Y_k(I, omega, Theta) for one stage-2 action."""
    x, a, mu = evaluate_slot(model, k, omega, i)
    aux = list(obj.nonlinear_indices)
    return (V * obj.l(x) + float(state.U @ obj.h(x)) + float(state.Z @ x[aux])
            - float(state.Q @ (mu - a)))


TIE_RTOL = 1e-12


def argmin_first(values, rtol=TIE_RTOL) -> int:
    """Lowest index whose value is within a relative ``rtol`` of the minimum.

    Values that differ only by rounding (the same Y evaluated by a dot
    product or term by term) count as ties, so the tie-break does not depend
    on the evaluation route.
    """
    v = np.asarray(values, dtype=float)
    m = v.min()
    return int(np.flatnonzero(v <= m + rtol * max(1.0, abs(m)))[0])


def best_stage2(k, omega, state: QueueState, V, model: ScenarioModel, obj: ObjectiveSpec):
    """Return ``(I*, min_I Y_k(I, omega, Theta))`` with lowest-index tie-breaking."""
    if model.n_actions == 0:
        raise ValueError("empty action set")
    values = [y_functional(k, omega, state, i, V, model, obj) for i in range(model.n_actions)]
    best = argmin_first(values)
    return best, values[best]


class WeightTables:
    """Y_k as a dot product.

    ``G[k][w, I]`` is the coefficient vector of Y against
    ``[V, U_1..U_N, Z_1..Z_n_aux, Q_1..Q_L]``, so one matrix-vector product
    evaluates Y for every action of an outcome.
    """

    def __init__(self, model: ScenarioModel, obj: ObjectiveSpec):
        obj.check_against(model)
        self.model, self.obj = model, obj
        aux = list(obj.nonlinear_indices)
        self.G, self.hb, self.x_aux = [], [], []
        for k in range(model.K):
            x, a, mu = model.penalty[k], model.arrival[k], model.service[k]
            lx = x @ obj.linear + obj.offset
            hx = x @ obj.constraint_rows.T + obj.constraint_offsets
            g = np.concatenate([lx[..., None], hx, x[..., aux], a - mu], axis=2)
            self.G.append(np.ascontiguousarray(g))
            self.hb.append(hx - obj.thresholds)
            self.x_aux.append(np.ascontiguousarray(x[..., aux]))
        self.width = 1 + obj.N + obj.n_aux + model.L

    def state_vector(self, V, state: QueueState) -> np.ndarray:
        return np.concatenate([[V], state.U, state.Z, state.Q])

    def values(self, k, w, s) -> np.ndarray:
        """Y for every action at outcome index ``w`` given a state vector ``s``."""
        return self.G[k][w] @ s

    def min_values(self, k, s) -> np.ndarray:
        """min_I Y for every outcome index of option ``k``."""
        return (self.G[k] @ s).min(axis=1)


def golden_section(fn, lo, hi, width=1e-10):
    """Minimise a convex scalar function on [lo, hi]; returns the best point seen."""
    a, b = float(lo), float(hi)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > width:
        if not (math.isfinite(fc) and math.isfinite(fd)):
            raise ValueError("non-finite objective in auxiliary subproblem")
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fn(d)
    best, fbest = (c, fc) if fc <= fd else (d, fd)
    for edge in (float(lo), float(hi)):
        fe = fn(edge)
        if not math.isfinite(fe):
            raise ValueError("non-finite objective in auxiliary subproblem")
        if fe < fbest:
            best, fbest = edge, fe
    return best


def aux_box(model: ScenarioModel, obj: ObjectiveSpec, sigma: float):
    aux = list(obj.nonlinear_indices)
    return model.x_min[aux] - sigma, model.x_max[aux] + sigma


def best_aux(Z, V, sigma, lo, hi, obj: ObjectiveSpec) -> np.ndarray:
    """argmin over the box of V*f~(gamma) - sum_m Z_m gamma_m.

    ``lo`` and ``hi`` are x_min and x_max restricted to the nonlinear indices;
    the box is widened by ``sigma`` on both sides.
    """
    n = obj.n_aux
    gamma = np.empty(n)
    if n == 0:
        return gamma
    fn = obj.nonlinear_fn
    for j in range(n):
        a, b, z = lo[j] - sigma, hi[j] + sigma, float(Z[j])
        if V == 0 and z == 0:
            gamma[j] = 0.5 * (a + b)
        elif fn.minimizer is not None:
            gamma[j] = fn.minimizer(j, V, z, a, b)
        else:
            term = fn.terms[j]
            gamma[j] = golden_section(lambda g: V * term(g) - z * g, a, b)
    return gamma
