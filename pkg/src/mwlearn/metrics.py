"""Running time averages, checkpoint rows, diagnostic constants and
constraint reports."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .scenario import ObjectiveSpec, ScenarioModel
from .weights import golden_section

BLOCK = 4096


class MetricsError(RuntimeError):
    pass


class _Neumaier:
    """Compensated vector accumulator."""

    def __init__(self, n):
        self.s = np.zeros(n)
        self.c = np.zeros(n)

    def add(self, v):
        t = self.s + v
        big = np.abs(self.s) >= np.abs(v)
        self.c += np.where(big, (self.s - t) + v, (v - t) + self.s)
        self.s = t

    def value(self):
        return self.s + self.c


@dataclass
class SlotRecord:
    """Everything that happened on one slot; ``theta`` is Theta(t) as [U, Z, Q]."""

    t: int
    k: int
    exploration: bool
    I: int
    gamma: np.ndarray
    w: int
    x: np.ndarray
    A: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    cost: float
    V: float
    W: int


class RunningAverages:
    """Time averages over slots 0..t-1 of x, gamma and the pre-update backlogs.

    Slots are buffered in blocks; each block is summed exactly with
    ``math.fsum`` and blocks are combined with compensated addition.
    """

    def __init__(self, M, n_aux, L, N):
        self.M, self.n_aux, self.L, self.N = M, n_aux, L, N
        self._x = np.zeros((BLOCK, M))
        self._g = np.zeros((BLOCK, n_aux))
        self._th = np.zeros((BLOCK, N + n_aux + L))
        self._fill = 0
        self._acc = _Neumaier(M + n_aux + N + n_aux + L)
        self.count = 0
        self.last_slot = None

    def update(self, t, x, gamma, theta):
        if self.last_slot is not None and t <= self.last_slot:
            raise MetricsError(f"slot {t} is not after slot {self.last_slot}")
        if self.last_slot is None and t != 0:
            raise MetricsError("the first averaged slot must be t = 0")
        self.push(x, gamma, theta)
        self.last_slot = t

    def push(self, x, gamma, theta):
        """Unchecked update used by the controller's hot loop."""
        i = self._fill
        self._x[i] = x
        self._g[i] = gamma
        self._th[i] = theta
        self._fill = i + 1
        self.count += 1
        if self._fill == BLOCK:
            self._flush()

    def _flush(self):
        n = self._fill
        if not n:
            return
        th = self._th[:n].copy()
        th[:, self.N:self.N + self.n_aux] = np.abs(th[:, self.N:self.N + self.n_aux])
        block = np.concatenate([self._x[:n], self._g[:n], th], axis=1)
        self._acc.add(np.array([math.fsum(col) for col in block.T]))
        self._fill = 0

    def sums(self) -> np.ndarray:
        self._flush()
        return self._acc.value()

    def means(self):
        """Return dict of xbar, gammabar, Ubar, absZbar, Qbar."""
        if self.count == 0:
            raise MetricsError("no slots averaged yet")
        m = self.sums() / self.count
        M, na, N = self.M, self.n_aux, self.N
        return {"xbar": m[:M], "gammabar": m[M:M + na], "Ubar": m[M + na:M + na + N],
                "absZbar": m[M + na + N:M + 2 * na + N], "Qbar": m[M + 2 * na + N:]}


def update(averages: RunningAverages, record: SlotRecord) -> RunningAverages:
    averages.update(record.t, record.x, record.gamma, record.theta)
    return averages


@dataclass(frozen=True)
class DiagnosticBounds:
    B_est: float
    l_diff: float
    f_tilde_diff: float
    B_inequality: float
    B_equality: float
    B_queues: float


def _affine_range(coef, offset, lo, hi):
    lo_v = offset + np.sum(np.where(coef > 0, coef * lo, coef * hi))
    hi_v = offset + np.sum(np.where(coef > 0, coef * hi, coef * lo))
    return float(lo_v), float(hi_v)


def compute_bounds(model: ScenarioModel, obj: ObjectiveSpec, sigma: float,
                   grid: int = 10001) -> DiagnosticBounds:
    """Drift constant B_est from the box bounds, plus l_diff and f~_diff."""
    b_ineq = 0.0
    for n in range(obj.N):
        h_lo, h_hi = _affine_range(obj.constraint_rows[n], obj.constraint_offsets[n],
                                   model.x_min, model.x_max)
        b = obj.thresholds[n]
        b_ineq += max((b - h_lo) ** 2, (b - h_hi) ** 2)
    aux = list(obj.nonlinear_indices)
    span = model.x_max[aux] - model.x_min[aux] + sigma
    b_eq = float(np.sum(span ** 2))
    b_q = float(np.sum(np.maximum(model.mu_max, model.A_max) ** 2))
    l_lo, l_hi = _affine_range(obj.linear, obj.offset, model.x_min, model.x_max)
    f_diff = 0.0
    for j, m in enumerate(aux):
        term = obj.nonlinear_fn.terms[j]
        a, b = model.x_min[m] - sigma, model.x_max[m] + sigma
        pts = np.linspace(a, b, grid)
        vals = np.array([term(p) for p in pts])
        lo = min(vals.min(), term(golden_section(term, a, b)))
        f_diff += float(vals.max() - lo)
    return DiagnosticBounds(b_ineq + b_eq + b_q, l_hi - l_lo, f_diff, b_ineq, b_eq, b_q)


def squared_drift_terms(obj: ObjectiveSpec, x, gamma, A, mu) -> float:
    """Per-slot sum (b - h(x))^2 + (gamma - x~)^2 + (mu - A)^2 bounded by B_est."""
    x = np.asarray(x)
    r = obj.thresholds - obj.h(x)
    d = np.asarray(gamma) - x[list(obj.nonlinear_indices)]
    q = np.asarray(mu) - np.asarray(A)
    return float(r @ r + d @ d + q @ q)


@dataclass
class ConstraintReport:
    residuals: np.ndarray
    U_over_t: np.ndarray
    inequality_ok: np.ndarray
    aux_gap: np.ndarray
    Z_drift_over_t: np.ndarray
    telescoping_error: np.ndarray

    @property
    def ok(self) -> bool:
        return bool(self.inequality_ok.all())


def check_constraints(averages: RunningAverages, obj: ObjectiveSpec, U_now, Z_now, Z0,
                      tolerance: float = 1e-6) -> ConstraintReport:
    t = averages.count
    if t <= 0:
        raise MetricsError("constraint check needs t > 0")
    m = averages.means()
    res = obj.residuals(m["xbar"])
    u_t = np.asarray(U_now) / t
    gap = np.abs(m["xbar"][list(obj.nonlinear_indices)] - m["gammabar"])
    zdt = np.abs(np.asarray(Z_now) - np.asarray(Z0)) / t
    return ConstraintReport(res, u_t, res <= u_t + tolerance, gap, zdt, np.abs(gap - zdt))


# --------------------------------------------------------------------------
# CSV rows


def column_names(M, N, n_aux, L):
    spec = json.loads(resources.files("mwlearn").joinpath("schemas/metrics_columns.json")
                      .read_text())
    sizes = {"M": M, "N": N, "n_aux": n_aux, "L": L}
    cols = []
    for entry in spec["columns"]:
        if "per" in entry:
            cols += [f"{entry['name']}_{i}" for i in range(sizes[entry["per"]])]
        else:
            cols.append(entry["name"])
    return cols


def checkpoint_slots(horizon: int, tail_points: int = 10, tail_fraction: float = 0.1):
    """Powers of two up to ``horizon`` plus evenly spaced points in the tail."""
    pts = set()
    p = 1
    while p <= horizon:
        pts.add(p)
        p *= 2
    if horizon >= 1:
        start = horizon - int(horizon * tail_fraction)
        for i in range(tail_points + 1):
            pts.add(max(1, start + (horizon - start) * i // tail_points))
        pts.add(horizon)
    return sorted(pts)


def checkpoint_row(averages: RunningAverages, obj: ObjectiveSpec, Q_now, U_now, Z_now,
                   V, W, explorations) -> dict:
    t = averages.count
    m = averages.means()
    row = {"t": t, "f_avg": obj.f(m["xbar"])}
    row.update({f"xbar_{i}": v for i, v in enumerate(m["xbar"])})
    row.update({f"gammabar_{i}": v for i, v in enumerate(m["gammabar"])})
    row.update({f"residual_{i}": v for i, v in enumerate(obj.residuals(m["xbar"]))})
    row.update({f"U_over_t_{i}": v / t for i, v in enumerate(U_now)})
    row.update({f"absZ_over_t_{i}": abs(v) / t for i, v in enumerate(Z_now)})
    row.update({f"Qbar_{i}": v for i, v in enumerate(m["Qbar"])})
    row.update({f"Ubar_{i}": v for i, v in enumerate(m["Ubar"])})
    row.update({f"absZbar_{i}": v for i, v in enumerate(m["absZbar"])})
    row.update({f"Q_over_t_{i}": v / t for i, v in enumerate(Q_now)})
    row.update({"V": V, "W": W, "exploration_count": explorations})
    return {key: (float(v) if not isinstance(v, (int, np.integer)) else int(v))
            for key, v in row.items()}


def _fmt(v):
    return str(v) if isinstance(v, int) else repr(float(v))


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def mean_and_se(values):
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))
