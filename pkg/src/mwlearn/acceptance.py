"""Acceptance suites shared by ``mwlearn accept`` and the test-suite.

Each suite returns a :class:`Verdict` with the measured values; nothing here
asserts, so the caller decides how to report a failure.
"""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .builtins import build
from .controller import APPROACHES, Controller, Schedule, run
from .metrics import check_constraints, mean_and_se
from .oracle import certify_fstar, exact_e, solve_fstar
from .queues import QueueState
from .scenario import ObjectiveSpec, OutcomeDistribution, ScenarioModel


@dataclass
class Verdict:
    number: int
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    summary: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number} ({self.name}): {self.summary} [{self.seconds:.1f}s]"

    def to_dict(self):
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "measured": self.measured, "summary": self.summary, "seconds": self.seconds}


_cache: dict = {}


def cached_run(scenario, schedule: Schedule, approach, horizon, seed, theta, **overrides):
    """Final checkpoint row of a run, memoised so suites sharing a
    configuration (criteria 3 and 6, 4 and 5) simulate it once."""
    key = (scenario, tuple(sorted(overrides.items())), schedule, approach, horizon, seed, theta)
    if key not in _cache:
        model, obj = build(scenario, **overrides)
        res = run(model, obj, schedule, approach, horizon, seed, theta)
        _cache[key] = res.final
    return _cache[key]


def clear_cache():
    _cache.clear()


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        v = fn(*args, **kwargs)
        v.seconds = time.perf_counter() - t0
        return v
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# 1. LLN bound


def lln_deviation(values, probs, W, batches, rng):
    """Per-batch |mean of W draws - true mean| for a finite-support variable."""
    values, probs = np.asarray(values, float), np.asarray(probs, float)
    draws = rng.choice(values, p=probs, size=(batches, W))
    return np.abs(draws.mean(axis=1) - values @ probs)


LLN_VARIABLES = {
    "bernoulli(0.5)": ([0.0, 1.0], [0.5, 0.5]),
    "bernoulli(0.1)": ([0.0, 1.0], [0.9, 0.1]),
    "three-point": ([-1.0, 0.5, 2.0], [0.3, 0.5, 0.2]),
}


@_timed
def suite_lln(quick=False, seed=2024):
    """E|Y^(W) - Ybar| <= y_diff / (2 sqrt W) with a bootstrap check."""
    rng = np.random.default_rng(seed)
    batches, boots = 10_000, 1000
    measured, ok = {}, True
    worst = 0.0
    for name, (vals, probs) in LLN_VARIABLES.items():
        y_diff = max(vals) - min(vals)
        for W in (1, 4, 16, 64, 256):
            dev = lln_deviation(vals, probs, W, batches, rng)
            bound = y_diff / (2 * math.sqrt(W))
            est = float(dev.mean())
            idx = rng.integers(batches, size=(boots, batches))
            frac = float((dev[idx].mean(axis=1) <= bound).mean())
            good = est <= bound and frac >= 0.99
            ok &= good
            worst = max(worst, est / bound)
            measured[f"{name}/W={W}"] = {"estimate": est, "bound": bound,
                                         "bootstrap_fraction": frac}
    return Verdict(1, "lln", ok, measured,
                   f"largest estimate/bound ratio {worst:.3f} (needs <= 1, bootstrap >= 99%)")


# ---------------------------------------------------------------------------
# 2. equality constraints on utility-fair


@_timed
def suite_equality(quick=False):
    """Telescoping identity to 1e-9 at every checkpoint; final |Z - Z0|/t < 0.01."""
    horizon = 100_000 if quick else 1_000_000
    seeds = (1,) if quick else (1, 2, 3)
    model, obj = build("utility-fair")
    sched = Schedule.variable(1.0, 0.3, 0.6)
    worst_identity, worst_final = 0.0, 0.0
    for seed in seeds:
        res = run(model, obj, sched, "approach2", horizon, seed, theta=0.1)
        for row, Z in zip(res.rows, res.extra["checkpoint_Z"]):
            t = row["t"]
            for m in range(obj.n_aux):
                lhs = abs(row[f"xbar_{obj.nonlinear_indices[m]}"] - row[f"gammabar_{m}"])
                rhs = abs(Z[m] - res.Z0[m]) / t
                worst_identity = max(worst_identity, abs(lhs - rhs))
        Z = res.extra["checkpoint_Z"][-1]
        worst_final = max(worst_final, float(np.max(np.abs(Z - res.Z0))) / horizon)
    ok = worst_identity <= 1e-9 and worst_final < 0.01
    return Verdict(2, "equality", ok,
                   {"max_identity_error": worst_identity, "max_final_gap": worst_final,
                    "horizon": horizon, "seeds": list(seeds)},
                   f"identity error {worst_identity:.2e} (<= 1e-9), "
                   f"final |Z-Z0|/t {worst_final:.4f} (< 0.01)")


# ---------------------------------------------------------------------------
# 3. inequality constraints on downlink-probe

CANON = dict(V=50.0, theta=0.05, W=32, horizon=200_000)


@_timed
def suite_inequality(quick=False):
    """Residual <= U/t + 1e-6 on every seed, across-seed mean residual <= 0.01."""
    seeds = range(1, 4) if quick else range(1, 21)
    horizon = 20_000 if quick else CANON["horizon"]
    model, obj = build("downlink-probe")
    sched = Schedule.constant(CANON["V"], CANON["W"])
    per_seed_ok, residuals = True, []
    for seed in seeds:
        f = cached_run("downlink-probe", sched, "approach2", horizon, seed, CANON["theta"])
        for n in range(obj.N):
            r, u = f[f"residual_{n}"], f[f"U_over_t_{n}"]
            per_seed_ok &= r <= u + 1e-6
        residuals.append([f[f"residual_{n}"] for n in range(obj.N)])
    mean_res = np.mean(residuals, axis=0)
    ok = per_seed_ok and bool((mean_res <= 0.01).all())
    return Verdict(3, "inequality", ok,
                   {"mean_residual": mean_res.tolist(), "per_seed_ok": per_seed_ok,
                    "seeds": len(seeds)},
                   f"per-seed residual <= U/t + 1e-6: {per_seed_ok}; "
                   f"mean residuals {np.round(mean_res, 5).tolist()} (<= 0.01)")


# ---------------------------------------------------------------------------
# 4/5. oracle sweep over V

SWEEP_V = (10.0, 20.0, 40.0, 80.0)


def _sweep(quick):
    seeds = range(1, 3) if quick else range(1, 11)
    horizon = 30_000 if quick else 300_000
    out = {}
    for V in SWEEP_V:
        rows = [cached_run("downlink-probe", Schedule.constant(V, 1), "oracle", horizon, s, 0.0)
                for s in seeds]
        out[V] = rows
    return out, len(seeds), horizon


def _backlog(row):
    return sum(v for k, v in row.items() if k.startswith(("Qbar_", "Ubar_", "absZbar_")))


@_timed
def suite_oracle_gap(quick=False):
    """Gap f(xbar) - f*_0 positive, decreasing in V, V*gap within a factor 3."""
    model, obj = build("downlink-probe")
    fstar = solve_fstar(model, obj, 0.0)
    cert = certify_fstar(model, obj, fstar, n=10_000 if quick else 100_000)
    sweep, n_seeds, horizon = _sweep(quick)
    gaps, ses = [], []
    for V in SWEEP_V:
        m, se = mean_and_se([r["f_avg"] - fstar.value for r in sweep[V]])
        gaps.append(m)
        ses.append(se)
    gaps = np.array(gaps)
    vg = np.array(SWEEP_V) * gaps
    positive = bool((gaps > 0).all())
    decreasing = bool((np.diff(gaps) < 0).all())
    spread = float(vg.max() / vg.min()) if positive else math.inf
    ok = positive and decreasing and spread < 3 and cert["holds"]
    return Verdict(4, "oracle-gap", ok,
                   {"fstar0": fstar.value, "certificate": cert, "gaps": gaps.tolist(),
                    "gap_se": ses, "V_times_gap": vg.tolist(), "seeds": n_seeds,
                    "horizon": horizon},
                   f"gaps {np.round(gaps, 5).tolist()}, V*gap spread {spread:.2f} (< 3), "
                   f"certificate margin {cert['margin']:.2e}")


@_timed
def suite_backlog(quick=False):
    """Backlog at V=80 <= 12x the V=10 value and a nonnegative fitted slope."""
    sweep, n_seeds, horizon = _sweep(quick)
    b = np.array([np.mean([_backlog(r) for r in sweep[V]]) for V in SWEEP_V])
    Vs = np.array(SWEEP_V)
    slope, icpt = np.polyfit(Vs, b, 1)
    fit = slope * Vs + icpt
    resid_ratio = float(np.linalg.norm(b - fit) / np.linalg.norm(fit))
    ratio = float(b[-1] / b[0])
    ok = ratio <= 12 and slope >= 0
    return Verdict(5, "backlog", ok,
                   {"backlog": b.tolist(), "ratio_80_10": ratio, "slope": float(slope),
                    "intercept": float(icpt), "residual_to_fit": resid_ratio},
                   f"backlog {np.round(b, 2).tolist()}, ratio {ratio:.2f} (<= 12), "
                   f"slope {slope:.3f} (>= 0), residual/fit {resid_ratio:.3f}")


# ---------------------------------------------------------------------------
# 6. Approach 2 over the window size


@_timed
def suite_window(quick=False):
    """Mean f(xbar) non-increasing in W within one SE; W=256 within 5% of oracle."""
    seeds = range(1, 3) if quick else range(1, 11)
    horizon = 20_000 if quick else CANON["horizon"]
    V, theta = CANON["V"], CANON["theta"]
    stats = {}
    for W in (4, 32, 256):
        vals = [cached_run("downlink-probe", Schedule.constant(V, W), "approach2", horizon, s,
                           theta)["f_avg"] for s in seeds]
        stats[W] = mean_and_se(vals)
    oracle = mean_and_se([cached_run("downlink-probe", Schedule.constant(V, 1), "oracle",
                                     horizon, s, theta)["f_avg"] for s in seeds])
    mono = True
    for a, b in ((4, 32), (32, 256)):
        tol = math.hypot(stats[a][1], stats[b][1])
        mono &= stats[b][0] <= stats[a][0] + tol
    rel = stats[256][0] / oracle[0] - 1
    ok = mono and abs(rel) <= 0.05
    return Verdict(6, "window", ok,
                   {"f_by_W": {str(W): v for W, v in stats.items()}, "oracle": oracle,
                    "relative_gap_256": rel, "seeds": len(seeds)},
                   f"f(W) {[round(stats[W][0], 5) for W in (4, 32, 256)]}, oracle "
                   f"{oracle[0]:.5f}, W=256 off by {100 * rel:.2f}% (<= 5%)")


# ---------------------------------------------------------------------------
# 7. variable schedules


@_timed
def suite_variable(quick=False):
    """Approach 2 with V(t), W(t): f within 2% of f*_theta, Q/t and |Z|/t < 0.01."""
    seeds = range(1, 3) if quick else range(1, 6)
    horizon = 100_000 if quick else 3_000_000
    theta = 0.1
    model, obj = build("downlink-probe")
    fstar = solve_fstar(model, obj, theta).value
    sched = Schedule.variable(5.0, 0.3, 0.6)
    worst_rel, worst_q, worst_z = 0.0, 0.0, 0.0
    rels = []
    for s in seeds:
        f = cached_run("downlink-probe", sched, "approach2", horizon, s, theta)
        rel = abs(f["f_avg"] / fstar - 1)
        rels.append(f["f_avg"] / fstar - 1)
        worst_rel = max(worst_rel, rel)
        worst_q = max([worst_q] + [v for k, v in f.items() if k.startswith("Q_over_t_")])
        worst_z = max([worst_z] + [v for k, v in f.items() if k.startswith("absZ_over_t_")])
    ok = worst_rel <= 0.02 and worst_q < 0.01 and worst_z < 0.01
    return Verdict(7, "variable", ok,
                   {"fstar_theta": fstar, "relative_errors": rels, "max_Q_over_t": worst_q,
                    "max_absZ_over_t": worst_z, "horizon": horizon},
                   f"worst |f/f*-1| {100 * worst_rel:.2f}% (<= 2%), max Q/t {worst_q:.4f}, "
                   f"max |Z|/t {worst_z:.4f} (< 0.01)")


# ---------------------------------------------------------------------------
# 8. reductions


def decision_trace(result):
    return [(r.t, r.k, r.exploration, r.I, r.w, r.gamma.tobytes()) for r in result.trace]


def point_mass_scenario(seed=0, K=3, n_actions=4, L=2, M=3):
    """Random tables with point-mass outcome laws and one linear constraint."""
    rng = np.random.default_rng(seed)
    dists = [OutcomeDistribution([tuple(rng.integers(0, 5, size=2).astype(float))], [1.0])
             for _ in range(K)]
    pen = [rng.uniform(0, 1, size=(1, n_actions, M)) for _ in range(K)]
    arr = [rng.uniform(0, 1, size=(1, n_actions, L)) for _ in range(K)]
    srv = [rng.uniform(0, 2, size=(1, n_actions, L)) for _ in range(K)]
    model = ScenarioModel(dists, [f"a{i}" for i in range(n_actions)], pen, arr, srv,
                          name="point-mass")
    obj = ObjectiveSpec(M, linear=rng.uniform(0.5, 1.5, M), constraint_rows=[[1.0, 0, 0]],
                        thresholds=[0.4])
    return model, obj


def frozen_estimates(model, obj, approach, state: QueueState, V, W, seed=0, slots=2000):
    """Run exploration-heavy slots while pinning the backlog to ``state``
    after every slot, then return the controller's estimate vector."""
    ctl = Controller(model, obj, Schedule.constant(V, W), approach, theta=0.95, seed=seed)
    ctl.initialize()
    ctl.set_state(state)
    freeze = ctl.t
    for _ in range(slots):
        ctl.step()
        ctl.set_state(state)
    for k in range(model.K):
        if ctl.buffers.wth_latest_slot(k, W) < freeze:
            raise RuntimeError("window still holds samples from before the freeze")
    return ctl.estimates(W)


@_timed
def suite_reduction(quick=False):
    """K = 1 traces identical across approaches; point masses make the
    estimates equal exact e_k."""
    horizon = 2000 if quick else 20_000
    model, obj = build("downlink-probe", options=["measure"])
    traces = {}
    for appr in APPROACHES:
        for sched in (Schedule.constant(20, 4), Schedule.variable(2.0, 0.3, 0.6)):
            res = run(model, obj, sched, appr, horizon, 7, theta=0.1, trace=True)
            traces[(appr, sched.mode)] = decision_trace(res)
    same = all(traces[(a, m)] == traces[(APPROACHES[0], m)]
               for a in APPROACHES for m in ("constant", "variable"))
    pm, pobj = point_mass_scenario()
    rng = np.random.default_rng(3)
    worst = 0.0
    for trial in range(3 if quick else 10):
        state = QueueState(rng.uniform(0, 20, pm.L), rng.uniform(0, 5, pobj.N), np.zeros(0))
        V = float(rng.uniform(1, 50))
        exact = np.array([exact_e(k, state, V, pm, pobj) for k in range(pm.K)])
        for appr in ("approach1", "approach2"):
            est = frozen_estimates(pm, pobj, appr, state, V, W=5, seed=trial)
            worst = max(worst, float(np.max(np.abs(est - exact))))
    ok = same and worst <= 1e-12
    return Verdict(8, "reduction", ok, {"k1_traces_identical": same, "max_estimate_error": worst},
                   f"K=1 traces identical: {same}; point-mass estimate error {worst:.1e} "
                   "(<= 1e-12)")


# ---------------------------------------------------------------------------
# 9. sampling discipline


def exploration_gaps(result, K, W):
    """Per-slot T_k(t) = t - (slot of the W-th latest type-k sample before t)."""
    trace = result.trace
    t = np.array([r.t for r in trace])
    k = np.array([r.k for r in trace])
    stored = np.array([r.exploration or r.t < 0 for r in trace])
    gaps = []
    slots = t[t >= 0]
    for kk in range(K):
        ev = t[stored & (k == kk)]
        # number of type-k samples strictly before each slot
        n_before = np.searchsorted(ev, slots, side="left")
        valid = n_before >= W
        gaps.append(slots[valid] - ev[n_before[valid] - W])
    return gaps


class _BufferAudit:
    """Observer that checks every newly stored sample sits on an exploration slot."""

    def __init__(self):
        self.counts = None
        self.bad = 0
        self.checked = 0

    def __call__(self, ctl):
        c = ctl.buffers.count
        if self.counts is None:
            self.counts = c.copy()
            return
        rec = ctl.trace[-1]
        for k in np.nonzero(c != self.counts)[0]:
            self.checked += 1
            newest = int(ctl.buffers.slot[k, ctl.buffers._head(k)])
            if not (rec.exploration and rec.k == k and newest == rec.t):
                self.bad += 1
        self.counts = c.copy()


@_timed
def suite_sampling(quick=False):
    """Buffers hold exploration slots only; mean T_k <= WK/theta + WK."""
    horizon = 20_000 if quick else 100_000
    model, obj = build("downlink-probe")
    K = model.K
    measured, ok = {}, True
    for theta, W in ((0.2, 4), (0.1, 16)):
        audit = _BufferAudit()
        res = run(model, obj, Schedule.constant(50, W), "approach2", horizon, 11, theta,
                  trace=True, observer=audit)
        stored_slots = {r.t for r in res.trace if r.exploration or r.t < 0}
        dump_ok = all(s in stored_slots for s, *_ in res.buffers.dump())
        bound = W * K / theta + W * K
        means = [float(g.mean()) for g in exploration_gaps(res, K, W)]
        good = audit.bad == 0 and dump_ok and max(means) <= bound
        ok &= good
        measured[f"theta={theta},W={W}"] = {"mean_T_k": means, "bound": bound,
                                            "greedy_entries": audit.bad,
                                            "entries_checked": audit.checked}
    worst = max(max(v["mean_T_k"]) / v["bound"] for v in measured.values())
    greedy = sum(v["greedy_entries"] for v in measured.values())
    return Verdict(9, "sampling", ok, measured,
                   f"greedy-slot entries {greedy} (== 0), max mean T_k / bound {worst:.3f} (<= 1)")


# ---------------------------------------------------------------------------
# 10. determinism


@_timed
def suite_determinism(quick=False):
    """Same config and seed twice gives byte-identical CSV files."""
    from .cli import ExperimentConfig, run_experiment
    configs = [
        ExperimentConfig(scenario="downlink-probe", approach="approach2", V=50.0, theta=0.05,
                         W=32, slots=20_000, seeds=[1, 2]),
        ExperimentConfig(scenario="utility-fair", approach="approach1", mode="variable",
                         V0=1.0, beta1=0.3, beta2=0.6, theta=0.1, slots=20_000, seeds=[1, 2]),
    ]
    same, files = True, 0
    with tempfile.TemporaryDirectory() as tmp:
        for i, cfg in enumerate(configs):
            outs = []
            for rep in range(2):
                cfg.output = str(Path(tmp) / f"cfg{i}-rep{rep}")
                run_experiment(cfg)
                outs.append({p.name: p.read_bytes()
                             for p in sorted(Path(cfg.output).glob("*.csv"))})
            files += len(outs[0])
            same &= outs[0] == outs[1] and len(outs[0]) == len(cfg.seeds)
    return Verdict(10, "determinism", same, {"csv_files_compared": files},
                   f"{files} CSV files byte-identical across repeats: {same}")


SUITES = {
    "lln": suite_lln,
    "equality": suite_equality,
    "inequality": suite_inequality,
    "oracle-gap": suite_oracle_gap,
    "backlog": suite_backlog,
    "window": suite_window,
    "variable": suite_variable,
    "reduction": suite_reduction,
    "sampling": suite_sampling,
    "determinism": suite_determinism,
}


def run_suites(name="all", quick=False, echo=print):
    if name == "all":
        names = list(SUITES)
    elif name in SUITES:
        names = [name]
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {['all'] + list(SUITES)}")
    results = []
    for n in names:
        v = SUITES[n](quick=quick)
        if echo:
            echo(v.line())
        results.append(v)
    return results
