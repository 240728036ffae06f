"""``overlay-phase`` command line.

Exit codes: 0 success (also for an empty input, which yields an empty
report), 2 input error, 3 model error, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (
    TransitionPairSet,
    equilibrium,
    intensity,
    region_transfer_matrix,
    stationary_probability,
    stream_field,
)
from .churn import (
    HOUR,
    ExponentialLifetime,
    churn_steps,
    connection_lifetime,
    degree_samples,
    departure_histogram,
    fit_poisson,
    sessions,
)
from .classifier import ClassifierRegions, class_histogram, classify, trace_attributes
from .core import PeerMode, PhaseState, QueueLimits, RegionId
from .errors import IngestError, InvariantViolation, ModelError, ReducibleChainError
from .ingest import TraceStore, ensure_dir, filter_store, parse_crawl_file, write_crawl_file
from .profiles import load_profile
from .queue import (
    INTERVAL_SECONDS,
    DegreeKeepingModel,
    QueueParams,
    admitted_rejected,
    bdtm_equilibrium_for,
    ctdm_equilibrium,
    leaf_params,
    ultra_params,
)
from .report import RunReport, file_digest, write_csv, write_json
from .validation import total_variation

log = logging.getLogger("overlay_phase")

EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_INVARIANT = 0, 2, 3, 4

# measured LimeWire departures per interval over mean degree
DEFAULT_RATES = {"lambda_l": 9.5, "mu_l": 5.8 / 27.8507, "lambda_u": 8.0, "mu_u": 4.8 / 29.9443}


class InputError(Exception):
    pass


def _input(fn, *args, **kwargs):
    """Run a constructor on user input; invalid values are input errors."""
    try:
        return fn(*args, **kwargs)
    except InvariantViolation as exc:
        raise InputError(str(exc)) from exc


def _pair(text) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b' integers, got {text!r}") from None
    return a, b


# --------------------------------------------------------------------------
# shared plumbing


def _out_dir(args) -> Path:
    return ensure_dir(args.out_dir)


def _profile(args):
    try:
        return load_profile(args.profile)
    except (InvariantViolation, OSError, ValueError) as exc:
        raise InputError(f"cannot load profile {args.profile!r}: {exc}") from exc


def _load_store(args, report: RunReport) -> TraceStore:
    path = Path(args.input)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    report.input_digest = file_digest(path)
    store, diags = parse_crawl_file(path, args.format)
    report.results["ingest"] = {
        "peers": len(store),
        "records": store.n_records,
        "diagnostics": len(diags),
    }
    if diags:
        out = _out_dir(args)
        write_csv(out / "diagnostics.csv", ["line", "reason"], [(d.line, d.reason) for d in diags])
        report.artifacts.append("diagnostics.csv")
        if not args.lenient:
            report.results["error"] = f"{len(diags)} invalid line(s), first at line {diags[0].line}: {diags[0].reason}"
            report.write(out / "report.json")
            raise InputError(report.results["error"])
    return store


def _finish(args, report: RunReport) -> int:
    path = report.write(_out_dir(args) / "report.json")
    log.info("wrote %s", path)
    print(path)
    return EXIT_OK


def _empty(args, report: RunReport) -> int:
    report.results["empty"] = True
    return _finish(args, report)


def _echo(args) -> dict:
    skip = {"func", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# --------------------------------------------------------------------------
# sections


def _analyze_section(store, profile, args, out: Path, artifacts: list) -> dict:
    grid = intensity(store)
    write_csv(out / "intensity.csv", ["d_l", "d_u", "count", "value"],
              ((l, u, int(grid.counts[l, u]), v) for l, u, v in grid.rows(args.transform)))
    pairs = TransitionPairSet.from_traces(store)
    field = stream_field(pairs, args.group, args.min_support)
    write_csv(out / "stream_field.csv", ["d_l", "d_u", "vx", "vy", "support"], field.rows())
    stay = stationary_probability(pairs)
    write_csv(out / "stationary.csv", ["d_l", "d_u", "probability"],
              ((s.d_l, s.d_u, p) for s, p in sorted(stay.items())))
    artifacts += ["intensity.csv", "stream_field.csv", "stationary.csv"]
    section = {
        "intensity": {"total": grid.total, "cells": int(np.count_nonzero(grid.counts)),
                      "transform": args.transform},
        "stream_field": {"group": args.group, "cells": len(field.cells)},
        "transition_pairs": len(pairs),
    }
    try:
        result = region_transfer_matrix(pairs, profile)
    except ModelError as exc:
        section["regions"] = {"error": str(exc)}
        return section
    G = result.G.values
    write_csv(out / "region_transfer.csv", ["to", "from", "probability", "count"],
              ((RegionId(i).name, RegionId(j).name, G[i, j], int(result.counts[i, j]))
               for j in range(4) for i in range(4)))
    artifacts.append("region_transfer.csv")
    try:
        h = equilibrium(G, atol=1e-9).as_dict()
    except ReducibleChainError as exc:
        h = None
        log.warning("region chain is reducible: %s", exc)
    p = result.p.as_dict()
    write_csv(out / "regions.csv", ["region", "p", "h"],
              ((r.name, p[r.name], None if h is None else h[r.name]) for r in RegionId))
    artifacts.append("regions.csv")
    section["regions"] = {
        "G": G.tolist(),
        "p": p,
        "h": h,
        "excluded_pairs": result.excluded_pairs,
        "empty_regions": [r.name for r in result.empty_regions],
    }
    return section


def _classify_section(store, profile, args, out: Path, artifacts: list) -> dict:
    regions = _input(ClassifierRegions, profile.ultra_stable_point, profile.leaf_stable_point,
                     args.radius_u, args.radius_l)
    kept = filter_store(store, min_records=args.min_records)
    rows, labels = [], []
    for tr in kept:
        a = trace_attributes(tr, regions)
        c = classify(a)
        labels.append(c)
        rows.append((tr.peer_id, *a.as_tuple(), c.value))
    write_csv(out / "classes.csv",
              ["peer_id", "eta_l", "eta_t", "eta_u", "xi_l", "xi_t", "xi_u", "class"], rows)
    hist = class_histogram(labels)
    write_csv(out / "class_summary.csv", ["class", "rule", "caption", "count", "share"],
              ((c.value, rule, cap, n, share) for c, rule, cap, n, share in hist))
    artifacts += ["classes.csv", "class_summary.csv"]
    return {
        "traces": len(kept),
        "min_records": args.min_records,
        "histogram": {c.value: n for c, _, _, n, _ in hist},
    }


def _fit_section(store, profile, args, out: Path, artifacts: list) -> dict:
    steps = [s for tr in store for s in churn_steps(tr)]
    section: dict = {"steps": len(steps)}
    fits = []
    for side in ("leaf", "ultra"):
        hist = departure_histogram(steps, side)
        write_csv(out / f"departures_{side}.csv", ["count", "frequency"], hist.rows())
        artifacts.append(f"departures_{side}.csv")
        entry = {"side": side, "method": args.method, "n": hist.n, "mode_filter": "d_l>=10,d_u>=10"}
        try:
            fit = fit_poisson(hist, args.method, args.k)
            entry.update(lambda_hat=fit.lambda_hat, raw_mean=fit.raw_mean, k=fit.k)
        except ModelError as exc:
            entry.update(lambda_hat=None, error=str(exc))
        fits.append(entry)
    section["poisson"] = fits

    all_sessions = [s for tr in store for s in sessions(tr, args.break_time)]
    life = {}
    for name, mode in (("ultra", PeerMode.ULTRA), ("leaf", PeerMode.LEAF)):
        only = [s for tr in store if all(r.mode is mode for r in tr.records)
                for s in sessions(tr, args.break_time)]
        try:
            est = ExponentialLifetime(censor_after=args.censor_after).fit(only)
            life[name] = {"mean_hours": est.mean_, "rate_per_hour": est.rate_, "n": est.n_samples_}
        except ModelError as exc:
            life[name] = {"error": str(exc)}
    section["sessions"] = {"count": len(all_sessions), "break_time": args.break_time, "lifetime": life}

    interval = args.interval
    queue = {}
    for side in ("leaf", "ultra"):
        X, y = degree_samples(steps, side, interval=interval)
        lim = profile.slot_limits
        model = DegreeKeepingModel(side, "ctdm", lim.B_l, lim.B_u, lim.L_u)
        try:
            model.fit(X, y)
        except (ModelError, InvariantViolation) as exc:
            queue[side] = {"error": str(exc), "n": int(X.size)}
            continue
        per_hour = float(y.mean()) * HOUR / interval
        entry = {
            "lambda_hat": model.lam_,
            "mu_hat": model.mu_,
            "stable_point_prob": model.stable_point_prob_,
            "mean_degree": float(X.mean()),
            "mean_departures": float(y.mean()),
            "n": int(X.size),
        }
        if per_hour > 0:
            entry["connection_lifetime_hours"] = connection_lifetime(float(X.mean()), per_hour)
        queue[side] = entry
    section["queue"] = queue
    write_json(out / "fits.json", section)
    artifacts.append("fits.json")
    return section


# --------------------------------------------------------------------------
# commands


def cmd_analyze(args) -> int:
    report = RunReport("analyze", _echo(args), args.seed)
    profile = _profile(args)
    store = _load_store(args, report)
    if len(store) == 0:
        return _empty(args, report)
    report.results["analyze"] = _analyze_section(store, profile, args, _out_dir(args), report.artifacts)
    return _finish(args, report)


def cmd_classify(args) -> int:
    report = RunReport("classify", _echo(args), args.seed)
    profile = _profile(args)
    store = _load_store(args, report)
    if len(store) == 0:
        return _empty(args, report)
    report.results["classify"] = _classify_section(store, profile, args, _out_dir(args), report.artifacts)
    return _finish(args, report)


def cmd_fit(args) -> int:
    report = RunReport("fit", _echo(args), args.seed)
    profile = _profile(args)
    store = _load_store(args, report)
    if len(store) == 0:
        return _empty(args, report)
    report.results["fit"] = _fit_section(store, profile, args, _out_dir(args), report.artifacts)
    return _finish(args, report)


def cmd_report(args) -> int:
    report = RunReport("report", _echo(args), args.seed)
    profile = _profile(args)
    store = _load_store(args, report)
    if len(store) == 0:
        return _empty(args, report)
    out = _out_dir(args)
    report.results["analyze"] = _analyze_section(store, profile, args, out, report.artifacts)
    report.results["classify"] = _classify_section(store, profile, args, out, report.artifacts)
    report.results["fit"] = _fit_section(store, profile, args, out, report.artifacts)
    return _finish(args, report)


def _model_values(args, profile) -> dict:
    values = dict(DEFAULT_RATES)
    lim = profile.slot_limits
    values.update(B_l=lim.B_l, B_u=lim.B_u, L_u=lim.L_u, kind="ctdm")
    if getattr(args, "config", None):
        from .simulator.config import tomllib

        try:
            data = tomllib.loads(Path(args.config).read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read model config {args.config}: {exc}") from exc
        unknown = set(data) - set(values)
        if unknown:
            raise InputError(f"unknown model parameters: {sorted(unknown)}")
        values.update(data)
    for key in ("lambda_l", "mu_l", "lambda_u", "mu_u", "B_l", "B_u", "L_u", "kind"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return values


def _queue_pair(values) -> tuple[QueueParams, QueueParams]:
    limits = _input(QueueLimits, values["B_l"], values["B_u"], values["L_u"])
    leaf = _input(leaf_params, values["lambda_l"], values["mu_l"], limits)
    ultra = _input(ultra_params, values["lambda_u"], values["mu_u"], limits)
    return leaf, ultra


def _empirical_degrees(path, fmt):
    store, _ = parse_crawl_file(path, fmt)
    steps = [s for tr in store for s in churn_steps(tr)]
    leaf, _ = degree_samples(steps, "leaf")
    ultra, _ = degree_samples(steps, "ultra")
    return leaf, ultra


def cmd_model(args) -> int:
    report = RunReport("model", _echo(args), args.seed)
    profile = _profile(args)
    values = _model_values(args, profile)
    kind = values["kind"]
    if kind not in ("ctdm", "bdtm"):
        raise InputError(f"kind must be ctdm or bdtm, got {kind!r}")
    leaf, ultra = _queue_pair(values)
    out = _out_dir(args)
    solve = ctdm_equilibrium if kind == "ctdm" else bdtm_equilibrium_for
    section = {"kind": kind, "parameters": values}
    eqs = {}
    for side, params in (("leaf", leaf), ("ultra", ultra)):
        eq = solve(params)
        eqs[side] = eq
        write_csv(out / f"equilibrium_{side}.csv", ["degree", "probability"], eq.rows())
        report.artifacts.append(f"equilibrium_{side}.csv")
        adm, rej = admitted_rejected(params.lam, eq.top_mass)
        section[side] = {
            "lambda": params.lam,
            "mu": params.mu,
            "lambda_per_hour": params.lam * HOUR / INTERVAL_SECONDS,
            "mu_per_hour": params.mu * HOUR / INTERVAL_SECONDS,
            "load": params.load,
            "floor": params.floor,
            "cap": params.cap,
            "blocking": eq.top_mass,
            "mean_degree": eq.mean_degree,
            "admitted": adm,
            "rejected": rej,
        }
    if args.empirical:
        report.input_digest = file_digest(args.empirical)
        emp_leaf, emp_ultra = _empirical_degrees(args.empirical, args.format)
        comparison = {}
        for side, degrees in (("leaf", emp_leaf), ("ultra", emp_ultra)):
            eq = eqs[side]
            if degrees.size == 0:
                comparison[side] = {"n": 0}
                continue
            clipped = np.clip(degrees, eq.floor, eq.floor + len(eq) - 1) - eq.floor
            emp = np.bincount(clipped, minlength=len(eq)) / degrees.size
            comparison[side] = {
                "n": int(degrees.size),
                "degree": eq.degrees.tolist(),
                "model": eq.probs.tolist(),
                "empirical": emp.tolist(),
                "total_variation": total_variation(emp, eq.probs),
            }
        write_json(out / "comparison.json", comparison)
        report.artifacts.append("comparison.json")
        section["comparison"] = {k: v.get("total_variation") for k, v in comparison.items()}
    report.results["model"] = section
    return _finish(args, report)


def cmd_generate(args) -> int:
    from .tracegen import GenConfig, generate_records

    seed = 0 if args.seed is None else args.seed
    report = RunReport("generate", _echo(args), seed)
    profile = _profile(args)
    values = _model_values(args, profile)
    leaf, ultra = _queue_pair(values)
    x0 = args.x0 if args.x0 is not None else (leaf.cap, ultra.cap)
    config = _input(GenConfig, args.model, leaf, ultra, PhaseState(*x0), args.n, seed)
    out = _out_dir(args)
    path = Path(args.out) if args.out else out / "trace.jsonl"
    n = write_crawl_file(generate_records(config, args.traces), path)
    report.artifacts.append(str(path))
    report.results["generate"] = {"model": args.model, "records": n, "traces": args.traces,
                                  "steps": args.n, "x0": list(x0), "output": str(path)}
    return _finish(args, report)


def cmd_simulate(args) -> int:
    from .simulator import Simulation, load_config

    overrides = {}
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise InputError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = _parse_value(raw.strip())
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        config = load_config(args.config, **overrides)
    except OSError as exc:
        raise InputError(f"cannot read simulation config: {exc}") from exc
    except (InvariantViolation, TypeError, ValueError) as exc:
        raise InputError(f"invalid simulation config: {exc}") from exc
    report = RunReport("simulate", {**_echo(args), "simulation": config.to_dict()}, config.seed)
    if args.config:
        report.input_digest = file_digest(args.config)
    out = _out_dir(args)
    path = Path(args.out) if args.out else out / "sim.jsonl.gz"
    sim = Simulation(config, check_invariants=not args.no_check)
    n = write_crawl_file(sim.iter_records(), path)
    report.artifacts.append(str(path))
    report.results["simulate"] = {
        "records": n,
        "output": str(path),
        "stats": dict(sim.stats),
        "rejects": dict(sim.rejects),
        "ever_ultra_share": sim.ever_ultra_share,
        "effective_rates": sim.effective_rates(),
    }
    return _finish(args, report)


def _parse_value(raw: str):
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    return raw.strip("\"'")


# --------------------------------------------------------------------------
# parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0, or the config's seed)")
    p.add_argument("--profile", default="limewire", help="built-in profile name or profile file")
    p.add_argument("--out-dir", default=".", help="directory for reports and CSV artifacts")
    p.add_argument("--format", choices=("jsonl", "csv"), default=None,
                   help="input format (default: from the file name)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _input_args(p):
    p.add_argument("input", help="crawl file (.jsonl/.csv, optionally .gz)")
    p.add_argument("--lenient", action="store_true", help="skip invalid lines instead of failing")


def _analyze_args(p):
    p.add_argument("--group", type=int, choices=(1, 2), default=1, help="cell size of the stream field")
    p.add_argument("--min-support", type=int, default=1)
    p.add_argument("--transform", choices=("linear", "fourth-root"), default="linear")


def _classify_args(p):
    p.add_argument("--min-records", type=int, default=10)
    p.add_argument("--radius-u", type=float, default=10.0)
    p.add_argument("--radius-l", type=float, default=10.0)


def _fit_args(p):
    p.add_argument("--method", choices=("head_k_mean", "mean_minus_one"), default="head_k_mean")
    p.add_argument("--k", type=int, default=11)
    p.add_argument("--break-time", type=float, default=2 * HOUR)
    p.add_argument("--censor-after", type=float, default=None)
    p.add_argument("--interval", type=int, default=INTERVAL_SECONDS)


def _model_args(p):
    p.add_argument("--config", default=None, help="TOML file with model parameters")
    p.add_argument("--lambda-l", dest="lambda_l", type=float)
    p.add_argument("--mu-l", dest="mu_l", type=float)
    p.add_argument("--lambda-u", dest="lambda_u", type=float)
    p.add_argument("--mu-u", dest="mu_u", type=float)
    p.add_argument("--B-l", dest="B_l", type=int)
    p.add_argument("--B-u", dest="B_u", type=int)
    p.add_argument("--L-u", dest="L_u", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="overlay-phase", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("analyze", parents=[common], help="phase-space statics and region chain")
    _input_args(p)
    _analyze_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("classify", parents=[common], help="classify peer traces")
    _input_args(p)
    _classify_args(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("fit", parents=[common], help="departure, session and queue fits")
    _input_args(p)
    _fit_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("model", parents=[common], help="double M/M/m/m equilibria")
    _model_args(p)
    p.add_argument("--kind", choices=("ctdm", "bdtm"), default=None)
    p.add_argument("--empirical", default=None, help="crawl file to compare against")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("generate", parents=[common], help="synthetic degree traces as crawl records")
    _model_args(p)
    p.add_argument("--model", choices=("ctdm", "bdtm"), default="ctdm")
    p.add_argument("--n", type=int, required=True, help="steps per trace")
    p.add_argument("--traces", type=int, default=1)
    p.add_argument("--x0", type=_pair, default=None, help="initial state 'd_l,d_u' (default: the caps)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("simulate", parents=[common], help="run the overlay simulator")
    p.add_argument("--config", default=None, help="simulation TOML (default: bundled sim.toml)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one parameter")
    p.add_argument("--out", default=None)
    p.add_argument("--no-check", action="store_true", help="skip per-tick invariant checks")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="analyze, classify and fit in one report")
    _input_args(p)
    _analyze_args(p)
    _classify_args(p)
    _fit_args(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, IngestError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
