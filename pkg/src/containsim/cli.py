"""Command-line front end.

Commands:
  validate  check a config file and print the topology certificates
  run       integrate a scenario and write the requested outputs
  sweep     run the cascade gain and blackout sweeps from a config
  report    run a scenario and summarize the final errors

Exit codes: 0 success, 1 validation or check failure (bad configuration,
failed certificate, failed trend), 2 runtime divergence, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, config, sim
from .comm import export_schedule_csv
from .sim import DivergenceError, ScenarioError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="containsim",
        description="containment-control simulation toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name, desc in (("validate", "validate a config and its topology"),
                       ("run", "integrate a scenario"),
                       ("sweep", "cascade gain / blackout sweeps"),
                       ("report", "run and summarize a scenario")):
        sp = sub.add_parser(name, help=desc)
        sp.add_argument("--config", required=True, help="JSON scenario file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the communication seed")
        sp.add_argument("--out", default=".",
                        help="directory for generated files")
    return p


def _load(path: str) -> dict:
    try:
        return config.load_config(path)
    except (OSError, config.ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CHECK_FAILED)


def _scenario(doc: dict):
    try:
        scen = config.build_scenario(doc)
        scen.validate()
        return scen
    except (config.ConfigError, ScenarioError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CHECK_FAILED)


def cmd_validate(args) -> int:
    doc = _load(args.config)
    scen = _scenario(doc)
    report = analysis.containment_certificate(scen.topo)
    print(f"leader reachability: {report['leader_reachability']}")
    print(f"nonsingular M-matrix: {report['m_matrix']}")
    if report["weights_ok"]:
        print(f"weight row-sum error: {report['row_sum_error']:.3e}")
        print(f"minimum weight: {report['min_weight']:.3e}")
    sg = report["small_gain"]
    if sg is not None:
        print(f"small-gain spectral radius: {sg['spectral_radius']:.6f} "
              f"({'ok' if sg['pass'] else 'FAIL'})")
    print(f"certificate: {'PASS' if report['pass'] else 'FAIL'}")
    return EXIT_OK if report["pass"] else EXIT_CHECK_FAILED


def _run_trace(doc, args):
    scen = _scenario(doc)
    try:
        return scen, sim.run(scen, seed=args.seed)
    except DivergenceError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_RUNTIME)


def cmd_run(args) -> int:
    doc = _load(args.config)
    scen, trace = _run_trace(doc, args)
    outputs = doc.get("outputs", {})
    try:
        return _write_outputs(scen, trace, outputs, args)
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_IO


def _write_outputs(scen, trace, outputs, args) -> int:
    os.makedirs(args.out, exist_ok=True)

    def dest(name):
        return os.path.join(args.out, name)

    if "trace_csv" in outputs:
        sim.export_trace_csv(trace, dest(outputs["trace_csv"]))
    if "audit_csv" in outputs:
        sim.export_audit_csv(trace, dest(outputs["audit_csv"]))
    if "schedule_csv" in outputs:
        schedules = sim.build_schedules(scen, args.seed)
        export_schedule_csv(schedules, dest(outputs["schedule_csv"]))
    if "sidecar_json" in outputs:
        sim.export_trace_sidecar(trace, scen, dest(outputs["sidecar_json"]))
    if "svg" in outputs:
        from .svg import write_report_svg
        snaps = tuple(t for t in (0.0, scen.t_end / 4, scen.t_end / 2,
                                  scen.t_end))
        write_report_svg(trace, dest(outputs["svg"]), snapshot_times=snaps)
    print(f"final containment error: {trace.err_pos_norm[-1]:.6e}")
    print(f"final velocity error: {trace.err_vel_norm[-1]:.6e}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = _load(args.config)
    try:
        cas = config.build_cascade(doc)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    seed = args.seed
    gains = analysis.run_gain_sweep(cas, seed=seed)
    print("gain sweep (x1, x2, x4):",
          " ".join(f"{g:.6e}" for g in gains))
    t_stars = (0.5, 1.0, 1.5)
    valid = [ts for ts in t_stars
             if ts >= cas.comm.T and cas.comm.delay_max < ts]
    blackout = analysis.run_blackout_sweep(cas, t_stars=valid, seed=seed)
    print("blackout sweep (" + ", ".join(f"T*={ts:g}" for ts in valid) + "):",
          " ".join(f"{b:.6e}" for b in blackout))
    ok = all(a >= b - 1e-12 for a, b in zip(gains, gains[1:])) and \
        all(a <= b + 1e-12 for a, b in zip(blackout, blackout[1:]))
    print(f"monotone trends: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_report(args) -> int:
    doc = _load(args.config)
    scen, trace = _run_trace(doc, args)
    os.makedirs(args.out, exist_ok=True)
    cert = analysis.containment_certificate(scen.topo)
    summary = {
        "label": scen.label,
        "variant": scen.variant,
        "seed": trace.meta["seed"],
        "certificate_pass": bool(cert["pass"]),
        "small_gain_radius": cert["small_gain"]["spectral_radius"]
        if cert["small_gain"] else None,
        "final_err_pos_norm": float(trace.err_pos_norm[-1]),
        "final_err_vel_norm": float(trace.err_vel_norm[-1]),
        "max_hull_dist_final": float(np.max(trace.hull_dist[-1])),
        "messages_delivered": len(trace.audit),
    }
    path = os.path.join(args.out, f"{scen.label}_report.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for key, val in summary.items():
        print(f"{key}: {val}")
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"validate": cmd_validate, "run": cmd_run,
               "sweep": cmd_sweep, "report": cmd_report}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
