"""Command-line interface: simulate, cumulants, estimate, analyze, pipeline.

Exit codes: 0 success, 1 data or runtime error, 2 usage error. Failures also
print a one-line JSON record ``{"error": ..., "message": ...}`` on stderr.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .analysis import (
    EventTaxonomy,
    ancestor_fraction_from,
    exogenous_fraction,
    slotwise_estimate,
    symmetry_report_for,
)
from .cumulants import BoundaryPolicy, CumulantConfig, estimate_cumulants_many, select_H
from .errors import NphcError
from .estimator import NphcConfig, StepRule, estimate
from .io import (
    ResultFile,
    StreamFormat,
    dumps,
    read_cumulants,
    read_model_config,
    read_streams_report,
    write_cumulants,
    write_matrix_tsv,
    write_model_config,
    write_streams,
)
from .model import g_from_model
from .simulate import SimConfig, block_design, simulate_batch

log = logging.getLogger("nphc")

DESIGNS = ("rect10", "plaw10", "exp10")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit_error(kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _write_json(path, doc):
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(doc))


def _parse_pairs(text: str):
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        a, b = item.split(":")
        pairs.append((int(a), int(b)))
    return pairs


def _parse_group(text: str):
    name, _, idx = text.partition("=")
    if not name or not idx:
        raise UsageError(f"group must look like name=0,1,2 (got {text!r})")
    return name, tuple(int(i) for i in idx.split(","))


# ---- building blocks shared by the subcommands and the pipeline ----


def _default_grid(streams) -> np.ndarray:
    s = streams[0]
    rate = float(np.mean(s.counts)) / s.duration
    top = min(0.1 * s.duration, 100.0 / max(rate, 1e-12))
    return np.linspace(0.0, top, 41)


def run_cumulants(args):
    report = read_streams_report(args.inputs, T_override=args.T, fmt=args.format)
    streams = report.streams
    meta = {"duplicate_repairs": report.total_repairs}
    if args.select_H:
        grid = _default_grid(streams) if args.select_H_max is None else np.linspace(0.0, args.select_H_max, 41)
        H = select_H(streams[0], grid)
        meta["H_selected"] = True
        log.info("selected H = %g", H)
    else:
        if args.H is None:
            raise UsageError("one of --H or --select-H is required")
        H = args.H
        meta["H_selected"] = False
    ccfg = CumulantConfig(H=H, boundary_policy=args.boundary)
    cs = estimate_cumulants_many(streams, ccfg)
    cs.meta.update(meta)
    return cs, streams[0].labels, ccfg


def _nphc_config(args) -> NphcConfig:
    return NphcConfig(
        restarts=args.restarts,
        random_starts=args.random_starts,
        seed=args.seed,
        step_rule=args.step_rule,
    )


def _config_echo(cfg: NphcConfig, cs) -> dict:
    return {
        "H_seconds": cs.H,
        "boundary_policy": cs.meta.get("boundary_policy"),
        "n_realizations": cs.meta.get("n_realizations"),
        "H_selected": cs.meta.get("H_selected", False),
        "max_iterations": cfg.max_iterations,
        "tolerance": cfg.tolerance,
        "restarts": cfg.restarts,
        "random_starts": cfg.random_starts,
        "perturbation_scale": cfg.perturbation_scale,
        "step_rule": cfg.step_rule.value,
        "seed": cfg.seed,
    }


def run_estimate(cs, labels, args) -> ResultFile:
    cfg = _nphc_config(args)
    result = estimate(cs, cfg)
    return ResultFile.from_result(result, labels=labels, config=_config_echo(cfg, cs))


def _taxonomy(rf: ResultFile, group_args) -> EventTaxonomy:
    labels = rf.labels or [str(i) for i in range(rf.dim)]
    if group_args:
        return EventTaxonomy(tuple(labels), dict(_parse_group(g) for g in group_args))
    ob = EventTaxonomy.order_book()
    if tuple(labels) == ob.labels:
        return ob
    return EventTaxonomy(tuple(labels), {"all": tuple(range(rf.dim))})


def run_analyze(rf: ResultFile, args, streams=None) -> dict:
    tax = _taxonomy(rf, args.group)
    report = {
        "tool_version": __version__,
        "taxonomy": tax.to_dict(),
        "spectral_radius": rf.spectral_radius,
        "largest_singular_value": rf.largest_singular_value,
        "exogenous_fraction": exogenous_fraction(rf.mu_per_second, rf.Lambda_per_second),
    }
    names = list(tax.groups)
    report["ancestor_fraction"] = {
        "rows_target_groups": names,
        "columns_source_groups": names,
        "values": [
            [ancestor_fraction_from(rf.Psi, rf.mu_per_second, rf.Lambda_per_second, tax.group(s), tax.group(t))
             for s in names]
            for t in names
        ],
    }
    pairs = _parse_pairs(args.pairs) if args.pairs else list(tax.mirror_pairs())
    if pairs:
        report["symmetry"] = symmetry_report_for(rf.G, pairs).to_dict()
    if args.truth:
        model, _ = read_model_config(args.truth)
        G_true = g_from_model(model)
        if G_true.shape != rf.G.shape:
            raise NphcError(f"truth has dimension {G_true.shape[0]}, result has {rf.dim}")
        err = np.abs(rf.G - G_true)
        report["truth"] = {
            "path": os.path.basename(args.truth),
            "G_mean_abs_error": float(err.mean()),
            "G_max_abs_error": float(err.max()),
            "mu_true_per_second": model.mu,
        }
        print(f"G mean-abs error vs truth: {err.mean():.6f} (max {err.max():.6f})")
    if args.slots and streams is not None:
        report["slots"] = _slot_report(streams, args, rf)
    return report


def _slot_report(streams, args, rf: ResultFile) -> dict:
    k = int(args.slots)
    per_slot = []
    for s in range(k):
        chunk = []
        for st in streams:
            lo, hi = st.duration * s / k, st.duration * (s + 1) / k
            chunk.append(st.window(lo, hi))
        per_slot.append(chunk)
    ccfg = CumulantConfig(H=rf.H_seconds, boundary_policy=rf.config.get("boundary_policy") or "restrict")
    out = slotwise_estimate(per_slot, _nphc_config(args), ccfg)
    return {
        "n_slots": k,
        "failed_slots": {str(i): f"{type(e).__name__}: {e}" for i, e in sorted(out.errors.items())},
        "mu_per_second": out.mu_curve(),
        "G_drift": out.G_drift() if out.ok() else None,
        "G_mean_abs_drift": float(out.G_drift().mean()) if out.ok() else None,
    }


def _print_table(rf: ResultFile, report: dict):
    labels = rf.labels or [str(i) for i in range(rf.dim)]
    width = max(6, max(len(x) for x in labels))
    print("G (row = target, column = source)")
    print(" " * width + "".join(f"{x:>9}" for x in labels))
    for lab, row in zip(labels, rf.G):
        print(f"{lab:>{width}}" + "".join(f"{v:9.4f}" for v in row))
    print(f"spectral radius {rf.spectral_radius:.4f}")
    print("exogenous fraction " + " ".join(f"{lab}={v:.3f}" for lab, v in zip(labels, report["exogenous_fraction"])))


def _write_result_outputs(rf: ResultFile, out: str, tsv_dir: Optional[str]):
    rf.write(out)
    if tsv_dir:
        os.makedirs(tsv_dir, exist_ok=True)
        for name in ("G", "R", "Psi", "C", "Kc"):
            write_matrix_tsv(getattr(rf, name), os.path.join(tsv_dir, f"{name}.tsv"), rf.labels)


# ---- subcommands ----


def cmd_simulate(args):
    if (args.config is None) == (args.design is None):
        raise UsageError("exactly one of --config or --design is required")
    extra = {}
    if args.config:
        model, doc = read_model_config(args.config)
        horizon = args.horizon if args.horizon is not None else doc.get("horizon_seconds")
        seed = args.seed if args.seed is not None else doc.get("seed", 0)
        labels = doc.get("labels")
    else:
        family = {"rect10": "rectangular", "plaw10": "power_law", "exp10": "exponential"}[args.design]
        model = block_design(family, rate_scale=args.rate_scale)
        horizon, seed, labels = args.horizon, args.seed if args.seed is not None else 0, None
        extra["design"] = args.design
    if horizon is None:
        raise UsageError("a horizon is required (--horizon or horizon_seconds in the config)")
    cfg = SimConfig(horizon=float(horizon), seed=int(seed), max_events=args.max_events, burn_in=args.burn_in)
    os.makedirs(args.out_dir, exist_ok=True)
    streams = simulate_batch(model, cfg, args.realizations)
    paths = []
    for r, s in enumerate(streams):
        if labels is not None:
            s = type(s)(s.duration, s.events, labels=labels)
        p = os.path.join(args.out_dir, f"realization_{r:03d}.csv")
        write_streams(s, p, fmt=args.format)
        paths.append(p)
    write_model_config(
        model, os.path.join(args.out_dir, "model.json"),
        horizon_seconds=cfg.horizon, seed=cfg.seed, labels=labels,
        extra=dict(extra, burn_in_seconds=cfg.burn_in, realizations=args.realizations),
    )
    print(f"wrote {len(paths)} realization(s), {sum(int(s.counts.sum()) for s in streams)} events, to {args.out_dir}")


def cmd_cumulants(args):
    cs, labels, _ = run_cumulants(args)
    write_cumulants(cs, args.out, labels)
    print(f"H = {cs.H:g} s over {cs.meta['n_realizations']} realization(s); wrote {args.out}")


def cmd_estimate(args):
    cs, labels = read_cumulants(args.input)
    rf = run_estimate(cs, labels, args)
    _write_result_outputs(rf, args.out, args.tsv_dir)
    print(f"loss {rf.final_loss:.6g}, spectral radius {rf.spectral_radius:.4f}; wrote {args.out}")


def cmd_analyze(args):
    rf = ResultFile.read(args.input)
    streams = None
    if args.slots:
        if not args.streams:
            raise UsageError("--slots needs --streams")
        streams = read_streams_report(args.streams, T_override=args.T, fmt=args.format).streams
    report = run_analyze(rf, args, streams)
    _write_json(args.out, report)
    _print_table(rf, report)


def cmd_pipeline(args):
    os.makedirs(args.out_dir, exist_ok=True)
    cum_path = os.path.join(args.out_dir, "cumulants.json")
    res_path = os.path.join(args.out_dir, "result.json")
    rep_path = os.path.join(args.out_dir, "report.json")
    cs, labels, _ = run_cumulants(args)
    write_cumulants(cs, cum_path, labels)
    # re-read so the fit sees exactly what a separate `estimate` run would
    cs, labels = read_cumulants(cum_path)
    rf = run_estimate(cs, labels, args)
    _write_result_outputs(rf, res_path, args.tsv_dir or os.path.join(args.out_dir, "tsv"))
    rf = ResultFile.read(res_path)
    streams = read_streams_report(args.inputs, T_override=args.T, fmt=args.format).streams if args.slots else None
    report = run_analyze(rf, args, streams)
    _write_json(rep_path, report)
    _print_table(rf, report)


# ---- argument parsing ----


def _add_stream_args(p):
    p.add_argument("--format", choices=[f.value for f in StreamFormat], default=StreamFormat.CSV_LONG.value,
                   help="stream file layout")
    p.add_argument("--T", type=float, default=None, help="observation horizon in seconds (default: from file)")


def _add_cumulant_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--H", type=float, help="window half-width in seconds")
    g.add_argument("--select-H", action="store_true", help="choose H from the covariance density decay")
    p.add_argument("--select-H-max", type=float, default=None, help="largest lag (s) scanned by --select-H")
    p.add_argument("--boundary", choices=[b.value for b in BoundaryPolicy], default=BoundaryPolicy.RESTRICT_ANCHORS.value)


def _add_estimate_args(p):
    p.add_argument("--restarts", type=int, default=0, help="jittered restarts around the initial point")
    p.add_argument("--random-starts", type=int, default=0, help="extra starts from random nonnegative G")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step-rule", choices=[s.value for s in StepRule], default=StepRule.LEVENBERG_MARQUARDT.value)
    p.add_argument("--tsv-dir", default=None, help="also write G, R, Psi, C, Kc as labelled TSV")


def _add_analyze_args(p):
    p.add_argument("--truth", default=None, help="model config to compare G against")
    p.add_argument("--pairs", default=None, help="symmetry swaps, e.g. 0:1,2:3 (default: bid/ask mirror labels)")
    p.add_argument("--group", action="append", default=[], help="named group, e.g. aggressive=0,1,6,7")
    p.add_argument("--slots", type=int, default=None, help="also fit each of K equal time slots")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nphc", description="Non-parametric Hawkes kernel-norm estimation from integrated cumulants.")
    parser.add_argument("--version", action="version", version=f"nphc {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate event streams from a model config or a built-in design")
    p.add_argument("--config", default=None, help="model config JSON")
    p.add_argument("--design", choices=DESIGNS, default=None, help="built-in 10-dimensional block design")
    p.add_argument("--horizon", type=float, default=None, help="seconds per realization")
    p.add_argument("--realizations", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--burn-in", type=float, default=0.0, help="seconds simulated and discarded before t=0")
    p.add_argument("--rate-scale", type=float, default=1.0, help="multiply the design's baselines")
    p.add_argument("--max-events", type=int, default=None)
    p.add_argument("--format", choices=[f.value for f in StreamFormat], default=StreamFormat.CSV_LONG.value)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cumulants", help="estimate integrated cumulants from stream files")
    p.add_argument("inputs", nargs="+")
    _add_stream_args(p)
    _add_cumulant_args(p)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_cumulants)

    p = sub.add_parser("estimate", help="fit G from a cumulants file")
    p.add_argument("input")
    _add_estimate_args(p)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("analyze", help="derived analytics from a result file")
    p.add_argument("input")
    _add_analyze_args(p)
    p.add_argument("--streams", nargs="*", default=None, help="stream files (needed by --slots)")
    _add_stream_args(p)
    _add_estimate_args(p)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("pipeline", help="cumulants, estimate and analyze in one go")
    p.add_argument("inputs", nargs="+")
    _add_stream_args(p)
    _add_cumulant_args(p)
    _add_estimate_args(p)
    _add_analyze_args(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _emit_error("UsageError", str(exc))
        return 2
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except UsageError as exc:
        _emit_error("UsageError", str(exc))
        return 2
    except NphcError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    except (OSError, ValueError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
