"""The two shipped scenarios.

``downlink-probe``: L Bernoulli (ON/OFF) channels feeding L queues.  Stage 1
chooses among measuring every channel, transmitting blindly on one channel,
or idling (K = L + 2).  The penalty vector holds the transmit power spent on
each link followed by the measurement power; the objective is total average
power and each link has an average transmit-power budget.

``utility-fair``: two queues with admission control.  Stage 1 picks one of
two frequency bands, which reveals that band's channel states together with
the slot's potential arrivals.  Stage 2 picks which queue to serve and which
arrivals to admit.  Penalties are admitted packets and the objective is
-sum log(1 + throughput), so both penalties are auxiliary coordinates.

Arrivals are Bernoulli and, since the tables are deterministic in
(k, omega, I), the arrival bits are part of every outcome vector.
"""
from __future__ import annotations

import itertools

import numpy as np

from .scenario import (ObjectiveSpec, OutcomeDistribution, ScenarioError, ScenarioModel,
                       neg_log1p)

DOWNLINK_DEFAULTS = dict(
    p=(0.8, 0.5),
    lam=(0.42, 0.35),
    c_meas=0.05,
    c_tx=0.2,
    budget=(0.16, 0.15),
    options=None,
    sigma=1.0,
)

UTILITY_DEFAULTS = dict(
    band_a=(0.9, 0.2),
    band_b=(0.3, 0.8),
    lam=(0.8, 0.8),
    weights=(1.0, 1.0),
    sigma=0.5,
)


def _bernoulli_product(probs):
    """Joint law of independent bits, support in lexicographic order."""
    support, weights = [], []
    for bits in itertools.product((0, 1), repeat=len(probs)):
        pr = 1.0
        for b, p in zip(bits, probs):
            pr *= p if b else 1.0 - p
        if pr > 0:
            support.append(tuple(float(b) for b in bits))
            weights.append(pr)
    total = sum(weights)
    return support, [w / total for w in weights]


def _check_prob(name, values):
    for v in values:
        if not 0 <= v <= 1:
            raise ScenarioError(f"{name} entries must lie in [0, 1], got {v}")


def downlink_probe(**overrides):
    unknown = set(overrides) - set(DOWNLINK_DEFAULTS)
    if unknown:
        raise ScenarioError(f"unknown downlink-probe overrides: {sorted(unknown)}")
    cfg = {**DOWNLINK_DEFAULTS, **overrides}
    p, lam = tuple(cfg["p"]), tuple(cfg["lam"])
    L = len(p)
    budget = tuple(cfg["budget"])
    if len(lam) != L or len(budget) != L:
        raise ScenarioError("p, lam and budget must have the same length")
    _check_prob("p", p)
    _check_prob("lam", lam)
    c_meas, c_tx = float(cfg["c_meas"]), float(cfg["c_tx"])
    if c_meas < 0 or c_tx < 0:
        raise ScenarioError("power costs must be non-negative")

    all_options = ["measure"] + [f"blind-{l + 1}" for l in range(L)] + ["idle"]
    options = list(cfg["options"] or all_options)
    if not options or any(o not in all_options for o in options) or \
            len(set(options)) != len(options):
        raise ScenarioError(f"options must be distinct names from {all_options}")
    actions = ["idle"] + [f"serve-{l + 1}" for l in range(L)]
    M = L + 1

    dists, pen, arr, srv = [], [], [], []
    for name in options:
        if name == "measure":
            support, probs = _bernoulli_product(p + lam)
        elif name == "idle":
            support, probs = _bernoulli_product(lam)
        else:
            l = int(name.split("-")[1]) - 1
            support, probs = _bernoulli_product((p[l],) + lam)
        dists.append(OutcomeDistribution(support, probs))
        xt, at, st = [], [], []
        for omega in support:
            arrivals = np.array(omega[-L:])
            xr, ar, sr = [], [], []
            for i in range(L + 1):
                x, mu = np.zeros(M), np.zeros(L)
                if name == "measure":
                    x[L] = c_meas
                    if i > 0:
                        x[i - 1] = c_tx
                        mu[i - 1] = omega[i - 1]
                elif name != "idle":
                    # blind transmission is committed at stage 1; only serving the
                    # probed link turns it into service
                    l = int(name.split("-")[1]) - 1
                    x[l] = c_tx
                    if i == l + 1:
                        mu[l] = omega[0]
                xr.append(x)
                ar.append(arrivals.copy())
                sr.append(mu)
            xt.append(xr)
            at.append(ar)
            st.append(sr)
        pen.append(xt)
        arr.append(at)
        srv.append(st)

    bounds = {"x_min": np.zeros(M),
              "x_max": np.array([c_tx] * L + [c_meas]),
              "A_max": np.ones(L), "mu_max": np.ones(L)}
    model = ScenarioModel(dists, actions, pen, arr, srv, option_names=options, bounds=bounds,
                          name="downlink-probe", sigma=cfg["sigma"])
    rows = np.zeros((L, M))
    rows[np.arange(L), np.arange(L)] = 1.0
    obj = ObjectiveSpec(M, linear=np.ones(M), constraint_rows=rows, thresholds=budget)
    return model, obj


def utility_fair(**overrides):
    unknown = set(overrides) - set(UTILITY_DEFAULTS)
    if unknown:
        raise ScenarioError(f"unknown utility-fair overrides: {sorted(unknown)}")
    cfg = {**UTILITY_DEFAULTS, **overrides}
    bands = [tuple(cfg["band_a"]), tuple(cfg["band_b"])]
    lam = tuple(cfg["lam"])
    for name, v in (("band_a", bands[0]), ("band_b", bands[1]), ("lam", lam)):
        if len(v) != 2:
            raise ScenarioError(f"{name} must have two entries")
        _check_prob(name, v)

    serve_opts = ["none", "1", "2"]
    admit_opts = [(0, 0), (1, 0), (0, 1), (1, 1)]
    actions = [f"serve-{s}/admit-{''.join(map(str, a))}"
               for s in serve_opts for a in admit_opts]
    dists, pen, arr, srv = [], [], [], []
    for band in bands:
        support, probs = _bernoulli_product(band + lam)
        dists.append(OutcomeDistribution(support, probs))
        xt, at, st = [], [], []
        for omega in support:
            s, a = np.array(omega[:2]), np.array(omega[2:])
            xr, ar, sr = [], [], []
            for si in range(3):
                for adm in admit_opts:
                    admitted = a * np.array(adm, dtype=float)
                    mu = np.zeros(2)
                    if si > 0:
                        mu[si - 1] = s[si - 1]
                    xr.append(admitted)
                    ar.append(admitted.copy())
                    sr.append(mu)
            xt.append(xr)
            at.append(ar)
            st.append(sr)
        pen.append(xt)
        arr.append(at)
        srv.append(st)
    bounds = {"x_min": np.zeros(2), "x_max": np.ones(2), "A_max": np.ones(2),
              "mu_max": np.ones(2)}
    model = ScenarioModel(dists, actions, pen, arr, srv, option_names=["band-a", "band-b"],
                          bounds=bounds, name="utility-fair", sigma=cfg["sigma"])
    obj = ObjectiveSpec(2, linear=np.zeros(2), nonlinear_indices=(0, 1),
                        nonlinear_fn=neg_log1p(cfg["weights"]))
    return model, obj


BUILTINS = {"downlink-probe": downlink_probe, "utility-fair": utility_fair}


def build(name, **overrides):
    """Return ``(ScenarioModel, ObjectiveSpec)`` for a built-in scenario."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}; built-ins: {sorted(BUILTINS)}") from None
    return factory(**overrides)
