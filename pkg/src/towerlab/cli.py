"""Batch experiment runner: config parsing, seed/shard management, command
dispatch, and report emission.

Configs are flat "key = value" text files with typed known keys; unknown
keys are errors.  Every metric value is deterministic given (config,
master_seed, shards): replica streams are derived from the replica index
alone, so shard layout never changes an aggregate.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time

import numpy as np

from . import asip, estimators, maps, symbolic, tower
from ._rng import derive_seed
from .report import (ExperimentReport, curve_to_csv, default_versions,
                     report_from_file, report_to_file)

ENV_OUT = "TOWERLAB_OUT"

COMMANDS = ("tails", "correlations", "variance", "tower", "meeting",
            "decompose", "pushforward", "asip", "optimality", "periodic",
            "all")

# key -> (type, default)
SCHEMA = {
    "command": (str, ""),
    "variant": (str, "lsv"),
    "gamma": (float, 0.4),
    "rho_eps": (float, 0.5),
    "beta": (float, 3.0),
    "eta": (int, 0),
    "kappa": (float, 1.0),
    "observable": (str, "hoelder_power"),
    "exponent": (float, 0.5),
    "max_n": (int, 4096),
    "lag_lo": (int, 8),
    "lag_hi": (int, 512),
    "n": (int, 100_000),
    "n_max": (int, 100_000),
    "replicas": (int, 1000),
    "runs": (int, 1_000_000),
    "shards": (int, 1),
    "burn_in": (int, 100_000),
    "depth": (int, 4),
    "height_cap": (int, 32),
    "n_grid": (int, 1024),
    "l_max": (int, 8),
    "n_events": (int, 10_000),
    "epsilon": (float, 0.5),
    "master_seed": (int, 20260823),
    "out_dir": (str, ""),
}

BUDGET_KEYS = ("max_n", "lag_lo", "lag_hi", "n", "n_max", "replicas", "runs",
               "shards", "burn_in", "depth", "height_cap", "n_grid", "l_max",
               "n_events")


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class MismatchError(RuntimeError):
    def __init__(self, names):
        super().__init__(f"replay diverged on: {', '.join(names)}")
        self.names = names


def parse_config(text: str) -> dict:
    cfg = {k: d for k, (_t, d) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value: {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        typ = SCHEMA[key][0]
        try:
            cfg[key] = typ(val)
        except ValueError:
            raise ConfigError(key, f"cannot parse {val!r} as {typ.__name__}")
    return cfg


def validate_config(cfg: dict) -> None:
    for key in BUDGET_KEYS:
        if key.startswith("lag"):
            continue
        if cfg[key] <= 0:
            raise ConfigError(key, "budget must be positive")
    if cfg["command"] not in COMMANDS:
        raise ConfigError("command", f"must be one of {COMMANDS}")
    if cfg["command"] == "asip" and cfg["eta"] == 1 \
            and cfg["kappa"] <= 1.0 / cfg["beta"]:
        raise ConfigError("kappa", "must exceed 1/beta for the block scheme")


def _model(cfg) -> maps.MapModel:
    return maps.MapModel(cfg["variant"], cfg["gamma"], cfg["rho_eps"])


def _seed(cfg, *labels) -> int:
    return derive_seed(cfg["master_seed"], cfg["command"], *labels)


def _record_seed(rep, name, seed):
    rep.seed_lineage[name] = int(seed)


def _passfail(ok: bool) -> str:
    return "Pass" if ok else "Fail"


# ---------------------------------------------------------------------------
# Command implementations

def cmd_tails(cfg, rep, out):
    model = _model(cfg)
    part = maps.partition(model, cfg["max_n"])
    ns = np.arange(1, cfg["max_n"] + 1)
    tails = np.array([part.tail(int(n)) for n in ns])
    with open(os.path.join(out, "tails.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "tail", "log_n", "log_tail"])
        for n, t in zip(ns, tails):
            w.writerow([int(n), repr(float(t)), repr(math.log(n)),
                        repr(math.log(t)) if t > 0 else ""])
    part.to_csv(os.path.join(out, "return_partition.csv"))
    fit = estimators.tail_exponent(ns, tails,
                                   fit_range=(32, min(4096, cfg["max_n"])))
    target = -model.beta if model.variant != "doubling" else float("nan")
    ok = model.variant == "doubling" or \
        abs(fit.slope - target) <= 0.1 * abs(target)
    rep.add("tail-slope", fit.slope, fit.standard_error, _passfail(ok),
            "return-tail-power-law")
    rep.add("tail-slope-r2", fit.r_squared, anchor="plumbing")


def cmd_correlations(cfg, rep, out):
    model = _model(cfg)
    seed = _seed(cfg, "series")
    _record_seed(rep, "series", seed)
    obs = maps.make_observable(cfg["observable"], model, seed=seed,
                               exponent=cfg["exponent"],
                               burn_in=cfg["burn_in"])
    n_reps = max(4, min(cfg["replicas"], 64))
    series = maps.observable_series(model, obs, seed, n_reps, cfg["n"],
                                    burn_in=cfg["burn_in"])
    lags = np.unique(np.round(np.geomspace(
        max(cfg["lag_lo"] // 2, 1), cfg["lag_hi"], 48)).astype(np.int64))
    cov, se = estimators.autocovariance(series, lags)
    curve_to_csv(os.path.join(out, "autocovariance.csv"), lags, cov, se)
    fit = estimators.tail_exponent(lags, np.where(cov > 0, cov, np.nan),
                                   fit_range=(cfg["lag_lo"], cfg["lag_hi"]))
    rep.add("correlation-decay-slope", fit.slope, fit.standard_error,
            _passfail(fit.slope <= -1.2), "polynomial-correlation-decay")


def cmd_variance(cfg, rep, out):
    model = _model(cfg)
    seed = _seed(cfg, "series")
    _record_seed(rep, "series", seed)
    obs = maps.make_observable(cfg["observable"], model, seed=seed,
                               exponent=cfg["exponent"],
                               burn_in=cfg["burn_in"])
    n_reps = max(8, min(cfg["replicas"], 64))
    series = maps.observable_series(model, obs, seed, n_reps, cfg["n"],
                                    burn_in=cfg["burn_in"])
    est = estimators.variance_c2(series)
    gap_ok = est.agreement_gap <= 3.0 * math.hypot(est.se_series,
                                                   est.se_growth)
    rep.add("c2-series", est.c2_series, est.se_series,
            anchor="limit-variance-series")
    rep.add("c2-growth", est.c2_growth, est.se_growth,
            anchor="limit-variance-growth")
    rep.add("c2-agreement-gap", est.agreement_gap, verdict=_passfail(gap_ok),
            anchor="limit-variance-consistency")


def cmd_tower(cfg, rep, out):
    spec = tower.synthetic_spec(cfg["beta"])
    tower.spec_to_file(spec, os.path.join(out, "tower_spec.json"),
                       seed=cfg["master_seed"])
    nu = tower.stationary_nu(spec)
    push = nu @ tower.transition_matrix(spec)
    defect = float(np.abs(push - nu).sum())
    rep.add("spec-residual", spec.truncation_residual,
            verdict=_passfail(spec.truncation_residual < 1e-5),
            anchor="height-tail-power-law")
    rep.add("mean-height", spec.mean_height, anchor="plumbing")
    rep.add("stationarity-tv-defect", defect,
            verdict=_passfail(defect < 1e-10), anchor="stationary-law")


def cmd_meeting(cfg, rep, out):
    # Deep truncation keeps the height tail an honest power law across the
    # whole fitting window (a shallow cutoff steepens the meeting tail).
    spec = tower.synthetic_spec(cfg["beta"], residual_target=1e-8)
    seed = _seed(cfg, "runs")
    _record_seed(rep, "runs", seed)
    t, ts = tower.meeting_times(spec, seed, cfg["runs"], cfg["n_max"])
    tower.meeting_times_to_csv(os.path.join(out, "meeting.csv"), t, ts)
    censored = float(np.mean(t < 0))
    rep.add("censoring-fraction", censored,
            verdict=_passfail(censored < 1e-3), anchor="meeting-time-tail")
    ns = np.unique(np.round(np.geomspace(8, 128, 24)).astype(np.int64))
    fit = estimators.tail_exponent(ns, samples=t[t >= 0].astype(float),
                                   censored=None)
    target = -(cfg["beta"] - 1.0)
    rep.add("meeting-tail-slope", fit.slope, fit.standard_error,
            _passfail(abs(fit.slope - target) <= 0.15 * abs(target)),
            "meeting-time-tail")
    kept = t[t >= 0].astype(float)
    low = estimators.moment_tracker(kept, lambda x: x ** (cfg["beta"] - 1.1))
    rep.add("moment-low-order", low["estimate"],
            verdict=low["verdict"], anchor="meeting-time-moments")


def cmd_decompose(cfg, rep, out):
    model = _model(cfg)
    dec = symbolic.decompose(model, cfg["depth"], cfg["height_cap"],
                             cfg["n_grid"])
    symbolic.decomposition_to_file(dec, os.path.join(out, "decomposition.json"))
    ok = dec.residual_mass < (1e-12 if model.variant == "doubling" else 0.05)
    rep.add("decomposition-residual", dec.residual_mass,
            verdict=_passfail(ok), anchor="regenerative-decomposition")
    rep.add("decomposition-entries", len(dec.entries), anchor="plumbing")
    rep.add("decomposition-defect", symbolic.pushforward_defect(model, dec),
            anchor="pushforward-constraint")


def cmd_pushforward(cfg, rep, out):
    model = _model(cfg)
    dec = symbolic.decompose(model, cfg["depth"], cfg["height_cap"],
                             cfg["n_grid"])
    seed = _seed(cfg, "paths")
    _record_seed(rep, "paths", seed)
    res = symbolic.pushforward_test(model, dec, seed, cfg["replicas"])
    ks_se = 0.87 / math.sqrt(cfg["replicas"])
    ok = res["ks_stat"] <= res["residual_mass"] + 4.0 * ks_se
    rep.add("pushforward-ks", res["ks_stat"], ks_se, _passfail(ok),
            "projected-law-matches-reference")
    rep.add("product-identity-max-err", res["product_identity_max_err"],
            verdict=_passfail(res["product_identity_max_err"] < 1e-12),
            anchor="word-prefix-probability-product")


def cmd_asip(cfg, rep, out):
    spec = tower.synthetic_spec(cfg["beta"])
    scheme = asip.BlockScheme(cfg["beta"], cfg["eta"], cfg["kappa"])
    obs = asip.level_indicator_observable(spec)
    seed = _seed(cfg, "probe")
    _record_seed(rep, "probe", seed)
    # quick long-run variance of the observable on the chain
    states, _ = tower.run_chain(spec, "nu", derive_seed(seed, "c2"), 200_000)
    series = obs.u[spec.offsets[states[:, 0]] + states[:, 1]]
    c2 = estimators.variance_c2(series[None, :]).c2_series
    n_reps = max(200, cfg["replicas"])
    coupled = asip.gaussian_couple(scheme, spec, obs, cfg["l_max"], n_reps,
                                   seed, c2)
    curve_to_csv(os.path.join(out, "asip_rate.csv"), coupled.checkpoints,
                 coupled.sup_error)
    fit = asip.rate_fit(coupled)
    if fit is None:
        rep.add("asip-rate-slope", 0.0, verdict="ZeroPath",
                anchor="strong-approximation-rate-indicative")
    else:
        ok = fit.slope <= 1.0 / cfg["beta"] + 0.1
        rep.add("asip-rate-slope", fit.slope, fit.standard_error,
                _passfail(ok), "strong-approximation-rate-indicative")


def cmd_optimality(cfg, rep, out):
    model = _model(cfg)
    seed = _seed(cfg, "orbit")
    _record_seed(rep, "orbit", seed)
    res = asip.optimality_counter(model, model.beta, cfg["n_events"], seed,
                                  burn_in=cfg["burn_in"])
    rep.add("excursion-event-count", res["count"],
            verdict=_passfail(res["count"] >= 1), anchor="rate-optimality")
    ok = 1.0 / 3.0 <= res["ratio"] <= 3.0
    rep.add("excursion-count-ratio", res["ratio"], verdict=_passfail(ok),
            anchor="rate-optimality")


def cmd_periodic(cfg, rep, out):
    spec = tower.validate_spec([{"id": "a", "h": 2, "weight": 0.5},
                                {"id": "b", "h": 4, "weight": 0.5}])
    obs = asip.level_indicator_observable(spec)
    seed = _seed(cfg, "transfer")
    _record_seed(rep, "transfer", seed)
    res = asip.periodic_transfer(spec, obs, seed,
                                 n_steps=min(cfg["n"], 50_000),
                                 n_reps=max(16, min(cfg["replicas"], 64)))
    rep.add("periodic-sum-defect", res["max_defect"],
            verdict=_passfail(res["pathwise_ok"]),
            anchor="periodic-sum-alignment")
    rep.add("periodic-variance-ratio",
            res["v2"] / res["c2"] if res["c2"] else float("nan"),
            verdict=_passfail(res["variance_ok"]),
            anchor="periodic-variance-relation")


def cmd_all(cfg, rep, out):
    """Cheap full-suite pass on exact fixtures and small specs."""
    sub = dict(cfg)
    plan = [
        ("tails", {"variant": "lsv", "gamma": 0.3, "max_n": 4096}),
        ("tower", {"beta": 3.0}),
        ("meeting", {"beta": 3.0, "replicas": 50_000, "n_max": 100_000}),
        ("decompose", {"variant": "doubling", "depth": 2, "n_grid": 1024}),
        ("pushforward", {"variant": "doubling", "depth": 2, "n_grid": 1024,
                         "replicas": 100_000}),
        ("periodic", {"n": 20_000, "replicas": 32}),
        ("optimality", {"variant": "lsv", "gamma": 0.5,
                        "n_events": 100_000}),
    ]
    for name, overrides in plan:
        c = dict(sub)
        c.update(overrides)
        c["command"] = name
        COMMAND_FNS[name](c, rep, out)


COMMAND_FNS = {
    "tails": cmd_tails,
    "correlations": cmd_correlations,
    "variance": cmd_variance,
    "tower": cmd_tower,
    "meeting": cmd_meeting,
    "decompose": cmd_decompose,
    "pushforward": cmd_pushforward,
    "asip": cmd_asip,
    "optimality": cmd_optimality,
    "periodic": cmd_periodic,
    "all": cmd_all,
}


def run(cfg: dict) -> ExperimentReport:
    """Execute one command and return its report (also written to out_dir)."""
    validate_config(cfg)
    out = cfg["out_dir"] or os.environ.get(ENV_OUT, ".")
    os.makedirs(out, exist_ok=True)
    rep = ExperimentReport(config=dict(cfg), versions=default_versions())
    rep.seed_lineage["master_seed"] = cfg["master_seed"]
    rep.seed_lineage["command_seed"] = derive_seed(cfg["master_seed"],
                                                   cfg["command"])
    t0 = time.monotonic()
    try:
        COMMAND_FNS[cfg["command"]](cfg, rep, out)
    except (ConfigError, OSError):
        raise
    except Exception as exc:
        raise RuntimeError(f"command {cfg['command']!r} failed: {exc}") from exc
    rep.wall_time_s = time.monotonic() - t0
    report_to_file(rep, os.path.join(out, "report.json"))
    return rep


def replay(report_path: str) -> ExperimentReport:
    """Re-run a report's config and require identical metric values."""
    old = report_from_file(report_path)
    cfg = {k: d for k, (_t, d) in SCHEMA.items()}
    cfg.update(old.config)
    new = run(cfg)
    bad = []
    olds = {m.name: m for m in old.metrics}
    news = {m.name: m for m in new.metrics}
    def same(a, b):
        da, db = a.to_doc(), b.to_doc()
        for key in da:
            va, vb = da[key], db[key]
            if isinstance(va, float) and isinstance(vb, float) \
                    and math.isnan(va) and math.isnan(vb):
                continue
            if va != vb:
                return False
        return True

    for name in sorted(set(olds) | set(news)):
        if name not in olds or name not in news \
                or not same(olds[name], news[name]):
            bad.append(name)
    if bad:
        raise MismatchError(bad)
    return new


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="towerlab",
        description="Simulation lab for slowly mixing interval maps and "
                    "their tower chains")
    ap.add_argument("--config", help="path to a key = value config file")
    ap.add_argument("--command", choices=COMMANDS)
    ap.add_argument("--seed", type=int, help="master seed override")
    ap.add_argument("--shards", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--replay", metavar="REPORT",
                    help="re-run a report and verify identical metrics")
    args = ap.parse_args(argv)
    try:
        if args.replay:
            rep = replay(args.replay)
            print("replay OK: all metric entries identical")
        else:
            text = ""
            if args.config:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            cfg = parse_config(text)
            if args.command:
                cfg["command"] = args.command
            if args.seed is not None:
                cfg["master_seed"] = args.seed
            if args.shards is not None:
                cfg["shards"] = args.shards
            if args.out:
                cfg["out_dir"] = args.out
            rep = run(cfg)
        for m in rep.metrics:
            verdict = f" [{m.verdict}]" if m.verdict else ""
            print(f"{m.name}: {m.value:.6g} (se {m.stderr:.3g}){verdict}")
        return 0 if all(m.verdict != "Fail" for m in rep.metrics) else 1
    except (ConfigError, MismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
