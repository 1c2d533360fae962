"""Batch command-line front end.

Verbs: run (execute a configured experiment and emit trace/summary/plot
files), verify (check hypotheses and step-size conditions without running
the engine), suite (acceptance or lemma batteries), export-graph (dump a
prefix of the weight-matrix sequence).  Exit codes: 0 success, 2 config or
usage error, 3 validation failure, 4 divergence.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import (EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_OK, EXIT_VALIDATION,
                     ConfigError, RunConfig, ValidationError, load_config_file,
                     resolve_config)
from .diagnostics import (InsufficientDataError, dibkm_rate_condition,
                          dikm_rate_condition, fit_rate, sqrt_k_boundedness,
                          write_plot_series, write_summary, write_trace)
from .engine import DivergenceError, run as engine_run
from .graph import (NonContractionError, compute_mixing, export_graph_sequence,
                    stationary_weights)
from .operators import DomainError, EstimationError, estimate_regularity
from .scenarios import validate_scenario


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fixnet",
                                description="distributed fixed-point iteration workbench")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="TOML configuration file")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="master seed override")
        sp.add_argument("--iters", type=int, default=None, help="iteration budget override")
        sp.add_argument("--tol", type=float, default=None, help="stop tolerance override")
        sp.add_argument("--repeats", type=int, default=None, help="repetition count override")
        sp.add_argument("--quiet", action="store_true")

    common(sub.add_parser("run", help="execute the configured experiment"))
    common(sub.add_parser("verify", help="check hypotheses without running"))

    sp = sub.add_parser("suite", help="run a named check battery")
    sp.add_argument("name", help="acceptance | lemmas")
    sp.add_argument("--out", default="out", help="directory for the summary table")
    sp.add_argument("--quiet", action="store_true")

    sp = sub.add_parser("export-graph", help="write the weight-matrix prefix")
    sp.add_argument("--config", required=True)
    sp.add_argument("--count", type=int, default=20, help="last index to export")
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--quiet", action="store_true")
    return p


def _resolve(args) -> RunConfig:
    raw = load_config_file(args.config)
    return resolve_config(
        raw,
        seed_override=args.seed,
        iters_override=getattr(args, "iters", None),
        tol_override=getattr(args, "tol", None),
        repeats_override=getattr(args, "repeats", None),
        out_override=args.out,
        quiet_override=args.quiet,
    )


def _say(cfg_quiet: bool, *parts):
    if not cfg_quiet:
        print(*parts)


def cmd_run(cfg: RunConfig) -> int:
    sc = cfg.scenario
    report = validate_scenario(sc)
    if not report.ok:
        for check, ok, detail in report.failures():
            print(f"validation failure: {check}: {detail}", file=sys.stderr)
        return EXIT_VALIDATION

    os.makedirs(cfg.out_dir, exist_ok=True)
    pi = None
    if sc.n_agents > 1:
        pi = stationary_weights(sc.graph, cfg.max_iters)

    per_rep = []
    diverged = False
    first_trace = None
    for rep in range(cfg.repeat_count):
        err = sc.make_error_model(cfg.master_seed, rep)
        blocks = sc.make_block_scheme(cfg.master_seed, rep)
        x0 = sc.initial_points(cfg.master_seed)
        try:
            trace = engine_run(sc.opset, sc.graph, sc.relaxation, err, x0, sc.layout,
                               engine=cfg.engine, blocks=blocks,
                               max_iters=cfg.max_iters, stop_tolerance=cfg.stop_tolerance,
                               pi=pi, fingerprint=cfg.fingerprint)
        except DivergenceError as exc:
            trace = exc.trace
            diverged = True
        name = "trace.tsv" if rep == 0 else f"trace_rep{rep:03d}.tsv"
        write_trace(trace, os.path.join(cfg.out_dir, name))
        if rep == 0:
            first_trace = trace
            ks = trace.ks
            write_plot_series(os.path.join(cfg.out_dir, "plot_residual.tsv"),
                              "max_residual", ks, trace.max_residuals)
            write_plot_series(os.path.join(cfg.out_dir, "plot_consensus.tsv"),
                              "max_consensus", ks, trace.max_consensus)
            if trace.d_sq is not None:
                write_plot_series(os.path.join(cfg.out_dir, "plot_dsq.tsv"),
                                  "d_sq", ks, trace.d_sq)
        stats = {
            "rep": rep,
            "iterations": trace.iterations,
            "stop_reason": trace.stop_reason,
            "final_max_residual": float(trace.max_residuals[-1]),
            "final_max_consensus": float(trace.max_consensus[-1]),
            "sup_coord": trace.sup_coord,
        }
        if trace.distances is not None:
            stats["final_max_distance"] = float(trace.distances[-1].max())
        per_rep.append(stats)
        _say(cfg.quiet, f"rep {rep}: {trace.stop_reason} after {trace.iterations} iterations"
             f" (residual {stats['final_max_residual']:.3e})")
        if diverged:
            break

    summary = {
        "engine": cfg.engine,
        "fingerprint": cfg.fingerprint,
        "master_seed": cfg.master_seed,
        "scenario": sc.name,
        "n_agents": sc.n_agents,
        "max_iters": cfg.max_iters,
        "stop_tolerance": cfg.stop_tolerance,
        "repeat_count": cfg.repeat_count,
        "repetitions": per_rep,
        "mean_final_max_residual": float(np.mean([s["final_max_residual"] for s in per_rep])),
        "mean_final_max_consensus": float(np.mean([s["final_max_consensus"] for s in per_rep])),
        "fitted_constants": _fitted_constants(sc),
        "certificates": _run_certificates(first_trace),
    }
    write_summary(summary, os.path.join(cfg.out_dir, "summary.json"))
    if diverged:
        print("divergence guard tripped; partial trace written", file=sys.stderr)
        return EXIT_DIVERGENCE
    _say(cfg.quiet, f"artifacts written to {cfg.out_dir}")
    return EXIT_OK


def _fitted_constants(sc) -> dict:
    """Mixing constants of the scenario's graph, for the run summary."""
    try:
        mixing = compute_mixing(sc.graph, k_max=max(6, sc.graph.window))
    except NonContractionError as exc:
        return {"error": str(exc)}
    return {"varpi": mixing.varpi, "xi": mixing.xi, "pi_floor": mixing.pi_floor,
            "fit_residual": mixing.fit_residual, "degenerate_fit": mixing.degenerate_fit}


def _run_certificates(trace) -> dict:
    """Rate and boundedness certificates measurable from one trace."""
    certs: dict = {}

    def rate_entry(series, label):
        try:
            cert = fit_rate(series)
        except InsufficientDataError as exc:
            certs[label] = {"status": "insufficient-data", "detail": str(exc)}
            return
        certs[label] = {"status": "fitted", "exponent": cert.exponent,
                        "constant": cert.constant, "fit_rms": cert.fit_rms,
                        "n_points": cert.n_points}

    rate_entry(trace.max_residuals, "residual_rate")
    if trace.d_sq is not None:
        rate_entry(trace.d_sq, "distance_sq_rate")
    try:
        scert = sqrt_k_boundedness(trace, 0)
        certs["sqrt_k_bounded"] = {"status": "checked", "passed": scert.passed,
                                   "sup": scert.sup_value}
    except ValueError as exc:
        certs["sqrt_k_bounded"] = {"status": "trace-too-short", "detail": str(exc)}
    return certs


def cmd_verify(cfg: RunConfig) -> int:
    sc = cfg.scenario
    lines = []

    report = validate_scenario(sc)
    for check, ok, detail in report.entries:
        lines.append(("PASS" if ok else "FAIL", check, detail))

    mixing = None
    try:
        mixing = compute_mixing(sc.graph, k_max=max(6, sc.graph.window))
        lines.append(("PASS", "mixing-analysis",
                      f"varpi={mixing.varpi:.4g} xi={mixing.xi:.4g} "
                      f"pi_floor={mixing.pi_floor:.4g} fit_rms={mixing.fit_residual:.3g}"
                      f"{' (degenerate fit)' if mixing.degenerate_fit else ''}"))
        lines.append(("PASS" if mixing.floor_ok else "FAIL", "absorption-floor",
                      f"pi_floor={mixing.pi_floor:.4g} >= declared"
                      f" {mixing.theory_floor:.4g}"))
    except NonContractionError as exc:
        lines.append(("FAIL", "mixing-analysis", str(exc)))

    estimate = None
    if sc.opset.has_common_projector and all(op.has_projector for op in sc.opset):
        try:
            estimate = estimate_regularity(sc.opset, sc.radius_hint(), 4000,
                                           sc.seed)
            lines.append(("PASS", "regularity-constants",
                          f"kappa_max={estimate.kappa_max:.4g} "
                          f"kappa_set={estimate.kappa_set:.4g} nu={estimate.nu:.4g}"))
        except EstimationError as exc:
            lines.append(("FAIL", "regularity-constants", str(exc)))
    else:
        lines.append(("SKIP", "regularity-constants", "no fixed-set oracles"))

    err_model = sc.make_error_model(cfg.master_seed, 0)
    lines.append(("INFO", "error-model",
                  f"kind={err_model.kind}, sum of norms <= {err_model.norm_sum():.4g}, "
                  f"sum of sqrt second moments <= {err_model.sqrt_sq_sum():.4g}"))

    if sc.flags.get("not_linearly_regular"):
        names = ", ".join(sc.flags["not_linearly_regular"])
        cap = sc.flags.get("power_constant_cap")
        lines.append(("INFO", "regularity-notes",
                      f"{names}: not linearly regular; family power regular"
                      f"{'' if cap is None else f' with constant <= {cap:g}'}"))
    if "interior_criterion" in sc.flags:
        ok = sc.flags["interior_criterion"]
        lines.append(("PASS" if ok else "FAIL", "interior-criterion",
                      sc.flags.get("interior_detail", "")))

    if mixing is not None and estimate is not None:
        rep17 = dikm_rate_condition(estimate, mixing, sc.relaxation, sc.n_agents)
        lines.append(("PASS" if rep17.satisfied else "FAIL", rep17.name,
                      f"cap {rep17.cap:.4g} vs bound {rep17.bound:.4g}"
                      f" (margin {rep17.margin:+.4g})"))
        if sc.block_probs is not None:
            rep07 = dibkm_rate_condition(estimate.nu, mixing, sc.relaxation,
                                         sc.n_agents, min(sc.block_probs))
            note = f"; {rep07.note}" if rep07.note else ""
            lines.append(("PASS" if rep07.satisfied else "FAIL", rep07.name,
                          f"cap {rep07.cap:.4g} vs bound {rep07.bound:.4g}"
                          f" (margin {rep07.margin:+.4g}){note}"))

    if not cfg.quiet:
        for status, check, detail in lines:
            print(f"{status:4s} {check}: {detail}")
    return EXIT_OK


def cmd_suite(name: str, out_dir, quiet: bool) -> int:
    from . import suite as suite_mod
    if name == "acceptance":
        results = suite_mod.run_acceptance()
    elif name == "lemmas":
        results = suite_mod.run_lemmas()
    else:
        print(f"unknown suite {name!r} (expected: acceptance | lemmas)", file=sys.stderr)
        return EXIT_CONFIG

    width = max(len(r.name) for r in results)
    table_lines = []
    for r in results:
        line = f"{r.status.upper():4s} {r.name.ljust(width)}  {r.detail}"
        table_lines.append(line)
        if not quiet:
            print(line)
    failed = [r for r in results if r.status == "fail"]
    verdict = f"{len(results) - len(failed)}/{len(results)} checks passed or skipped"
    table_lines.append(verdict)
    if not quiet:
        print(verdict)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"suite_{name}.txt")
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(table_lines) + "\n")
    return EXIT_OK if not failed else 1


def cmd_export_graph(cfg: RunConfig, count: int) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "graphs.tsv")
    export_graph_sequence(cfg.scenario.graph, count, path)
    _say(cfg.quiet, f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0

    try:
        if args.command == "suite":
            return cmd_suite(args.name, args.out, args.quiet)
        cfg = _resolve(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "export-graph":
            return cmd_export_graph(cfg, args.count)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except DomainError as exc:
        print(f"domain violation: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
