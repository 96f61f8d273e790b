"""Command-line front end: ``simulate``, ``discover``, ``sweep`` and ``probe``.

Settings are resolved in order preset, then ``--config`` file, then flags.
A ``null`` temporal half-width ``window.Ht`` becomes 0.85 times the
autocorrelation time of the input trajectory.
Every command writes a ``*.config.json`` sidecar (``<trajectory>.json`` for
``simulate``) holding the fully resolved settings; the sidecar is itself a
valid ``--config`` input.

Exit codes: 0 success, 2 usage, 3 I/O, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .experiments import (EnsembleSpec, fmt, probe_records, sweep_noise, sweep_order,
                          xi_analysis)
from .field import NoiseSpec, add_noise, read_series, write_series
from .kolmogorov import (BlowUpError, ModelParams, SimConfig, autocorrelation_time,
                         max_divergence, simulate)
from .library import TERM_NAMES, SamplePlan, build_library
from .localpoly import WindowSpec
from .regression import RegressionConfig, format_model, threshold_iterate

log = logging.getLogger("latentpde")

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 2, 3, 4

SECTIONS = {
    "params": ModelParams,
    "sim": SimConfig,
    "window": WindowSpec,
    "plan": SamplePlan,
    "noise": NoiseSpec,
    "regression": RegressionConfig,
}
ENSEMBLE_KEYS = {"n_realizations", "base_seed", "filter_terms"}
SWEEP_KEYS = {"kind", "values", "time_order"}
PROBE_KEYS = {"term"}
TOP_KEYS = set(SECTIONS) | {"ensemble", "sweep", "probe", "input", "output"}


class UsageError(Exception):
    pass


def preset(name: str) -> dict:
    kappa = {"paper": 2015.0, "paper-kappa1": 1.0}
    if name not in kappa:
        raise UsageError(f"unknown preset {name!r}; choose from {sorted(kappa)}")
    sim = SimConfig.paper()
    if name == "paper-kappa1":
        # acoustic time scales near 1: finer storage and a shorter spinup
        sim = SimConfig.paper(spinup_time=50.0, store_stride=5, n_snapshots=300)
    window = dataclasses.asdict(WindowSpec.paper())
    window["Ht"] = None  # 0.85 tau, measured on the input trajectory
    return {
        "params": dataclasses.asdict(ModelParams.paper(kappa=kappa[name])),
        "sim": dataclasses.asdict(sim),
        "window": window,
        "plan": dataclasses.asdict(SamplePlan()),
        "noise": {"sigma": 0.0, "seed": 0},
        "regression": dataclasses.asdict(RegressionConfig()),
        "ensemble": {"n_realizations": 40, "base_seed": 0, "filter_terms": [1, 2, 3]},
        "sweep": {"kind": "order", "values": list(range(3, 13)), "time_order": 10},
        "probe": {"term": 3},
    }


def _check_keys(where, given, allowed):
    unknown = set(given) - set(allowed)
    if unknown:
        raise UsageError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def validate(cfg: dict) -> dict:
    """Reject unknown keys and check every section against its type."""
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    _check_keys("config", cfg, TOP_KEYS)
    for name, cls in SECTIONS.items():
        if name in cfg:
            _check_keys(name, cfg[name], {f.name for f in dataclasses.fields(cls)})
    for name, keys in (("ensemble", ENSEMBLE_KEYS), ("sweep", SWEEP_KEYS), ("probe", PROBE_KEYS)):
        if name in cfg:
            _check_keys(name, cfg[name], keys)
    try:
        build(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    return cfg


def merge(base: dict, override: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(v)
        else:
            out[k] = v
    return out


def build(cfg: dict) -> dict:
    """Typed objects for the sections present in ``cfg``."""
    sections = dict(cfg)
    if "window" in cfg and cfg["window"].get("Ht") is None:
        sections["window"] = dict(cfg["window"], Ht=1.0)  # placeholder until resolved
    out = {name: cls(**sections[name]) for name, cls in SECTIONS.items() if name in sections}
    if "ensemble" in cfg and "window" in out:
        e = cfg["ensemble"]
        out["ensemble"] = EnsembleSpec(
            window=out["window"], plan=out.get("plan", SamplePlan()),
            reg=out.get("regression", RegressionConfig()),
            n_realizations=e.get("n_realizations", 40), base_seed=e.get("base_seed", 0),
            filter_terms=tuple(int(i) - 1 for i in e.get("filter_terms", [1, 2, 3])))
    return out


def parse_values(text: str, integer=False) -> list:
    """``"3..12"`` (inclusive integer range) or a comma-separated list."""
    text = text.strip()
    if not text:
        raise UsageError("empty value list")
    try:
        if ".." in text:
            lo, hi = (int(s) for s in text.split(".."))
            if hi < lo:
                raise UsageError(f"empty range {text!r}")
            return list(range(lo, hi + 1))
        vals = [s.strip() for s in text.split(",") if s.strip()]
        if not vals:
            raise UsageError("empty value list")
        return [int(v) for v in vals] if integer else [float(v) for v in vals]
    except ValueError as exc:
        raise UsageError(f"cannot parse values {text!r}: {exc}") from exc


def load_config(args) -> dict:
    cfg = preset(args.preset)
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        validate(user)
        cfg = merge(cfg, user)
    flags = {
        ("params", "kappa"): getattr(args, "kappa", None),
        ("sim", "seed"): getattr(args, "sim_seed", None),
        ("sim", "n_snapshots"): getattr(args, "snapshots", None),
        ("sim", "spinup_time"): getattr(args, "spinup", None),
        ("noise", "sigma"): getattr(args, "sigma", None),
        ("noise", "seed"): getattr(args, "noise_seed", None),
        ("window", "Ht"): getattr(args, "ht", None),
        ("plan", "K"): getattr(args, "samples", None),
        ("plan", "seed"): getattr(args, "seed", None),
        ("regression", "gamma"): getattr(args, "gamma", None),
        ("ensemble", "n_realizations"): getattr(args, "realizations", None),
        ("ensemble", "base_seed"): getattr(args, "base_seed", None),
        ("sweep", "kind"): getattr(args, "kind", None),
        ("sweep", "time_order"): getattr(args, "time_order", None),
        ("probe", "term"): getattr(args, "term", None),
    }
    for (section, key), value in flags.items():
        if value is not None:
            cfg[section][key] = value
    if getattr(args, "grid", None) is not None:
        n = args.grid
        cfg["sim"].update(nxc=n, nyc=n)
    if getattr(args, "order", None) is not None:
        cfg["window"].update(L=args.order, M=args.order, N=args.order)
    if getattr(args, "values", None) is not None:
        cfg["sweep"]["values"] = parse_values(args.values, integer=cfg["sweep"]["kind"] == "order")
    if getattr(args, "input", None):
        cfg["input"] = str(args.input)
    if getattr(args, "output", None):
        cfg["output"] = str(args.output)
    return validate(cfg)


def write_sidecar(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(cfg, key):
    if not cfg.get(key):
        raise UsageError(f"missing {key} path (use --{key} or the '{key}' config key)")
    return Path(cfg[key])


def _load_series(cfg):
    """Read the input and fix ``window.Ht`` from its autocorrelation time if unset."""
    series = read_series(_require(cfg, "input"))
    if cfg["window"].get("Ht") is None:
        tau = autocorrelation_time(series)
        cfg["window"]["Ht"] = 0.85 * tau
        log.info("autocorrelation time %.4g, Ht = %.4g", tau, cfg["window"]["Ht"])
    return series, build(cfg)


def _c_ref(cfg):
    return ModelParams(**cfg["params"]).coeffs


def cmd_simulate(cfg, args) -> int:
    out = _require(cfg, "output")
    objs = build(cfg)
    params, config = objs["params"], objs["sim"]
    log.info("simulating %dx%d grid, %d snapshots", config.nxc, config.nyc, config.n_snapshots)
    series = simulate(params, config)
    write_series(series, out)
    write_sidecar(cfg, str(out) + ".json")
    report = {"max_abs_u": float(np.abs(series.u).max()),
              "max_divergence": max_divergence(series)}
    try:
        report["autocorrelation_time"] = autocorrelation_time(series)
    except ValueError as exc:
        report["autocorrelation_time"] = str(exc)
    print(json.dumps({k: fmt(v) if isinstance(v, float) else v for k, v in report.items()}))
    return 0


def cmd_discover(cfg, args) -> int:
    series, objs = _load_series(cfg)
    if objs["noise"].sigma > 0:
        series = add_noise(series, objs["noise"])
    lib = build_library(series, objs["window"], objs["plan"])
    result = threshold_iterate(lib, objs["regression"])
    print(format_model(result))
    print(result.to_json())
    if cfg.get("output"):
        prefix = cfg["output"]
        with open(prefix + ".result.json", "w") as fh:
            fh.write(result.to_json() + "\n")
        lib.to_csv(prefix + ".library.csv")
        write_sidecar(cfg, prefix + ".config.json")
    return 0


def cmd_sweep(cfg, args) -> int:
    prefix = str(_require(cfg, "output"))
    series, objs = _load_series(cfg)
    spec, sw = objs["ensemble"], cfg["sweep"]
    kind, values = sw["kind"], sw["values"]
    if not values:
        raise UsageError("empty value list")
    sigma = objs["noise"].sigma
    if kind == "order":
        res = sweep_order(series, values, sw["time_order"], spec, _c_ref(cfg), sigma=sigma,
                          jobs=args.jobs)
    elif kind == "noise":
        res = sweep_noise(series, values, spec, _c_ref(cfg), jobs=args.jobs)
    elif kind == "xi":
        levels = [0.0] + [float(v) for v in values if v != 0]
        xi = xi_analysis(series, levels, spec, jobs=args.jobs)
        xi.to_csv(prefix + ".xi.csv")
        write_sidecar(cfg, prefix + ".config.json")
        for s, m in zip(xi.sigma, xi.mean()):
            print(fmt(s), " ".join(fmt(v) for v in m))
        return 0
    else:
        raise UsageError(f"unknown sweep kind {kind!r}")
    res.to_csv(prefix + ".raw.csv", prefix + ".summary.csv")
    write_sidecar(cfg, prefix + ".config.json")
    for v in res.axis:
        print(fmt(v), fmt(res.mean(v, "eta_over_eta0")), res.false_negative_count(v))
    return 0


def cmd_probe(cfg, args) -> int:
    series, objs = _load_series(cfg)
    spec = objs["ensemble"]
    term = int(cfg["probe"]["term"])
    if not 1 <= term <= len(TERM_NAMES):
        raise UsageError(f"term must be in 1..{len(TERM_NAMES)}")
    sigma = objs["noise"].sigma
    res = sweep_noise(series, [sigma], spec, _c_ref(cfg), jobs=args.jobs, keep_libraries=True)
    rows = probe_records(res, term - 1)
    print(f"q{term} dropped in {len(rows)} of {len(res.at(sigma))} realizations")
    for rec, change in rows:
        print(rec.realization, fmt(change))
    if cfg.get("output"):
        prefix = cfg["output"]
        with open(prefix + ".probe.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["realization", "term", "eta", "relative_eta_decrease"])
            for rec, change in rows:
                w.writerow([rec.realization, term, fmt(rec.result.eta), fmt(change)])
        write_sidecar(cfg, prefix + ".config.json")
    return 0


def _parser():
    p = argparse.ArgumentParser(prog="latentpde", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--preset", default="paper", help="paper or paper-kappa1")
        sp.add_argument("--config", help="JSON config; the sidecar of any run is accepted")
        sp.add_argument("--kappa", type=float)
        sp.add_argument("-o", "--output")

    def analysis(sp):
        sp.add_argument("input", nargs="?", help="KFLD trajectory")
        sp.add_argument("--sigma", type=float, help="noise standard deviation")
        sp.add_argument("--noise-seed", type=int)
        sp.add_argument("--order", type=int, help="polynomial order L = M = N")
        sp.add_argument("--ht", type=float, help="temporal half-width (default 0.85 tau)")
        sp.add_argument("--samples", type=int, help="sample points per library (K)")
        sp.add_argument("--gamma", type=float)

    def ensemble(sp):
        sp.add_argument("--realizations", type=int)
        sp.add_argument("--base-seed", type=int)
        sp.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("simulate", help="generate a trajectory")
    common(s)
    s.add_argument("--seed", dest="sim_seed", type=int, help="initial perturbation seed")
    s.add_argument("--snapshots", type=int)
    s.add_argument("--spinup", type=float)
    s.add_argument("--grid", type=int, help="computational points per side")

    d = sub.add_parser("discover", help="recover a model from one sampling realization")
    common(d)
    analysis(d)
    d.add_argument("--seed", type=int, help="sample-point seed")

    w = sub.add_parser("sweep", help="ensemble statistics across orders or noise levels")
    common(w)
    analysis(w)
    ensemble(w)
    w.add_argument("--kind", choices=["order", "noise", "xi"])
    w.add_argument("--values", help="'3..12' or a comma-separated list")
    w.add_argument("--time-order", type=int, help="temporal order N for order sweeps")

    pr = sub.add_parser("probe", help="false-negative probe for a dropped term")
    common(pr)
    analysis(pr)
    ensemble(pr)
    pr.add_argument("--term", type=int, help="library term index, 1-based")
    return p


COMMANDS = {"simulate": cmd_simulate, "discover": cmd_discover, "sweep": cmd_sweep,
            "probe": cmd_probe}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"latentpde {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"latentpde {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BlowUpError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"latentpde {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"latentpde {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
