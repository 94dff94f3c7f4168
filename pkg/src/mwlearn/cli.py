"""Command-line entry point.

    mwlearn run --scenario downlink-probe --approach approach2 --V 50 \\
        --theta 0.05 --W 32 --slots 200000 --seeds 1..20
    mwlearn validate --scenario my.json
    mwlearn fstar --scenario downlink-probe --theta 0.05
    mwlearn export-scenario downlink-probe --out downlink.json
    mwlearn accept all
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .builtins import BUILTINS, build
from .controller import APPROACHES, Schedule, run
from .metrics import check_constraints, mean_and_se
from .oracle import OracleError, certify_fstar, solve_fstar
from .scenario import ScenarioError, load_scenario, save_scenario

OUTPUT_ENV = "MWLEARN_OUTPUT"
DEFAULT_OUTPUT = "mwlearn-out"


class ConfigError(ValueError):
    pass


def parse_seeds(text) -> list:
    """``"1..20"`` (inclusive), ``"3"`` or ``"1,4,9"``."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = part.split("..")
                lo, hi = int(lo), int(hi)
                if hi < lo:
                    raise ConfigError(f"empty seed range {part!r}")
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigError(f"cannot parse seeds {text!r}") from None
    if not seeds:
        raise ConfigError("no seeds given")
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds must be non-negative")
    return seeds


def _json_default(obj):
    """Serialise numpy scalars and arrays found in measured values."""
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _parse_override(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value


@dataclass
class ExperimentConfig:
    scenario: str = "downlink-probe"
    approach: str = "approach2"
    mode: str = "constant"
    V: Optional[float] = None
    V0: Optional[float] = None
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    t0: int = 0
    theta: float = 0.0
    sigma: Optional[float] = None
    W: int = 1
    slots: int = 1000
    seeds: list = field(default_factory=lambda: [1])
    output: Optional[str] = None
    overrides: dict = field(default_factory=dict)
    trace: bool = False

    def validate(self):
        if self.approach not in APPROACHES:
            raise ConfigError(f"approach must be one of {APPROACHES}")
        if not 0 <= self.theta < 1:
            raise ConfigError("theta must lie in [0, 1)")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.slots < 0:
            raise ConfigError("slots must be non-negative")
        if self.mode == "constant":
            if self.V is None:
                raise ConfigError("constant mode needs --V")
            if self.W < 1:
                raise ConfigError("constant mode needs W >= 1")
        elif self.mode == "variable":
            if self.V0 is None or self.beta1 is None or self.beta2 is None:
                raise ConfigError("variable mode needs --V0, --beta1 and --beta2")
            if not 0 < self.beta1 < self.beta2 < 1:
                raise ConfigError("variable mode needs 0 < beta1 < beta2 < 1")
        else:
            raise ConfigError(f"unknown mode {self.mode!r}")
        try:
            self.schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def schedule(self) -> Schedule:
        if self.mode == "constant":
            return Schedule.constant(self.V, self.W)
        return Schedule.variable(self.V0, self.beta1, self.beta2, self.t0)

    def output_dir(self) -> Path:
        return Path(self.output or os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))


def load_scenario_arg(name, overrides=None):
    """A built-in name or a path to a scenario JSON file."""
    if name in BUILTINS:
        return build(name, **(overrides or {}))
    if overrides:
        raise ConfigError("overrides apply to built-in scenarios only")
    if not Path(name).exists():
        raise ConfigError(f"{name!r} is neither a built-in scenario {sorted(BUILTINS)} "
                          "nor an existing file")
    return load_scenario(name)


def load_config_file(path) -> dict:
    """Experiment config JSON; keys mirror the ``run`` flags."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}:1:1: config must be a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(doc) - known)
    if unknown:
        text = path.read_text().splitlines()
        line = next((i + 1 for i, s in enumerate(text) if f'"{unknown[0]}"' in s), 1)
        raise ConfigError(f"{path}:{line}: unknown config key {unknown[0]!r}")
    if "seeds" in doc and not isinstance(doc["seeds"], list):
        doc["seeds"] = parse_seeds(doc["seeds"])
    return doc


def _run_seed(cfg: ExperimentConfig, seed: int):
    model, obj = load_scenario_arg(cfg.scenario, cfg.overrides)
    res = run(model, obj, cfg.schedule(), cfg.approach, cfg.slots, seed, cfg.theta, cfg.sigma,
              trace=cfg.trace)
    out = cfg.output_dir()
    stem = f"{model.name}_{cfg.approach}_seed{seed}"
    (out / f"{stem}.csv").write_text(res.to_csv())
    if cfg.trace:
        with open(out / f"{stem}_trace.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "k", "exploration", "I", "w", "cost", "V", "W"])
            for r in res.trace:
                w.writerow([r.t, r.k, int(r.exploration), r.I, r.w, repr(r.cost), repr(r.V), r.W])
        with open(out / f"{stem}_buffers.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot", "k", "omega_index", "cost"])
            for s, k, wi, c in res.buffers.dump():
                w.writerow([s, k, wi, repr(c)])
    summary = {"seed": seed, "slots": cfg.slots, "explorations": res.explorations,
               "final": res.final, "initial_Q": res.initial_state.Q.tolist()}
    if cfg.slots > 0:
        rep = check_constraints(res.averages, obj, res.final_state.U, res.final_state.Z, res.Z0)
        summary["constraints_ok"] = rep.ok
        summary["telescoping_error"] = float(np.max(rep.telescoping_error, initial=0.0))
    return summary


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    cfg.validate()
    load_scenario_arg(cfg.scenario, cfg.overrides)  # fail before slot 0
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(_run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        per_seed = [_run_seed(cfg, s) for s in cfg.seeds]
    agg = {}
    if cfg.slots > 0:
        for key in ("f_avg",) + tuple(k for k in per_seed[0]["final"] if k.startswith(
                ("residual_", "Qbar_", "Q_over_t_", "absZ_over_t_"))):
            m, se = mean_and_se([p["final"][key] for p in per_seed])
            agg[key] = {"mean": m, "se": se}
    summary = {"config": asdict(cfg), "seeds": per_seed, "aggregate": agg,
               "all_constraints_ok": all(p.get("constraints_ok", True) for p in per_seed)}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


# --------------------------------------------------------------------------


def _add_run_flags(p):
    p.add_argument("--config", help="experiment config JSON (flags override its values)")
    p.add_argument("--scenario", help="built-in name or scenario JSON path")
    p.add_argument("--approach", choices=APPROACHES)
    p.add_argument("--V", type=float, help="constant V")
    p.add_argument("--V0", type=float, help="variable-mode V0")
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--t0", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--W", type=int, help="fixed window (constant mode)")
    p.add_argument("--slots", type=int)
    p.add_argument("--seeds", help="e.g. 1..20 or 1,2,3")
    p.add_argument("--out", dest="output", help=f"output directory (default ${OUTPUT_ENV} "
                                                f"or {DEFAULT_OUTPUT})")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="built-in scenario override, JSON value (repeatable)")
    p.add_argument("--trace", action="store_true", help="also dump slot trace and buffers")
    p.add_argument("--jobs", type=int, default=1)


def config_from_args(args) -> ExperimentConfig:
    doc = load_config_file(args.config) if args.config else {}
    for key in ("scenario", "approach", "V", "V0", "beta1", "beta2", "t0", "theta", "sigma",
                "W", "slots", "output"):
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
    if args.seeds is not None:
        doc["seeds"] = parse_seeds(args.seeds)
    if args.set:
        doc.setdefault("overrides", {}).update(dict(_parse_override(s) for s in args.set))
    if args.trace:
        doc["trace"] = True
    if "mode" not in doc:
        doc["mode"] = "variable" if doc.get("V0") is not None else "constant"
    return ExperimentConfig(**doc).validate()


def build_parser():
    parser = argparse.ArgumentParser(prog="mwlearn", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration over a list of seeds")
    _add_run_flags(p)

    p = sub.add_parser("validate", help="check a scenario file or built-in")
    p.add_argument("--scenario", required=True)

    p = sub.add_parser("fstar", help="optimal stationary cost f*_theta")
    p.add_argument("--scenario", required=True)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--certify", type=int, default=0, metavar="N",
                   help="also run the random-policy certificate with N samples")
    p.add_argument("--out", help="write the JSON result here instead of stdout")

    p = sub.add_parser("export-scenario", help="write a built-in scenario as JSON")
    p.add_argument("name", choices=sorted(BUILTINS))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True)

    p = sub.add_parser("accept", help="run acceptance suites")
    p.add_argument("suite", nargs="?", default="all")
    p.add_argument("--quick", action="store_true", help="reduced horizons and seed counts")
    p.add_argument("--json", dest="json_out", help="write the verdicts as JSON")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = config_from_args(args)
            summary = run_experiment(cfg, jobs=args.jobs)
            out = cfg.output_dir()
            agg = summary["aggregate"]
            if "f_avg" in agg:
                print(f"f_avg mean {agg['f_avg']['mean']:.6g} (se {agg['f_avg']['se']:.3g}) "
                      f"over {len(cfg.seeds)} seed(s)")
            print(f"wrote {len(cfg.seeds)} CSV file(s) and summary.json to {out}")
            return 0
        if args.command == "validate":
            model, obj = load_scenario_arg(args.scenario)
            print(f"ok: {model.name} K={model.K} |I|={model.n_actions} M={model.M} "
                  f"L={model.L} N={obj.N} aux={obj.n_aux}")
            return 0
        if args.command == "fstar":
            overrides = dict(_parse_override(s) for s in args.set)
            model, obj = load_scenario_arg(args.scenario, overrides)
            res = solve_fstar(model, obj, args.theta)
            if args.certify and res.feasible:
                certify_fstar(model, obj, res, n=args.certify)
            text = res.to_json()
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return 0 if res.feasible else 3
        if args.command == "export-scenario":
            overrides = dict(_parse_override(s) for s in args.set)
            model, obj = build(args.name, **overrides)
            save_scenario(model, obj, args.out)
            print(f"wrote {args.out}")
            return 0
        if args.command == "accept":
            from .acceptance import run_suites
            results = run_suites(args.suite, quick=args.quick)
            if args.json_out:
                Path(args.json_out).write_text(json.dumps([r.to_dict() for r in results],
                                                          indent=1, default=_json_default) + "\n")
            return 0 if all(r.passed for r in results) else 1
    except (ConfigError, ScenarioError, OracleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
