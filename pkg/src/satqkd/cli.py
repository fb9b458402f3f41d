"""Command-line front end.

    satqkd simulate <scenario-file> [--mode analytic|mc] [--seed N]
                    [--out DIR] [--symbols-per-slice N]
    satqkd budget <scenario-file>
    satqkd sync-test <scenario-file> [--frames N] [--loss-db X] [--seed N]
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .harness import run as run_pipeline
from .harness import write_outputs
from .link import pass_profile
from .postprocessing import classical_budget
from .protocol import randomness_budget
from .receiver import reference_bin_click_probabilities, simulate_detection
from .protocol import generate_train
from .scenario import ParseError, Scenario, ValidationError, load_scenario
from .sync import SyncFailed, recover_clock


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satqkd",
        description="Satellite-to-ground decoy-state QKD link simulator",
    )
    parser.add_argument("--version", action="version", version=f"satqkd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Run the full pass pipeline and write results.")
    sim.add_argument("scenario", type=Path)
    sim.add_argument("--mode", choices=("analytic", "mc"), default=None,
                     help="Override the scenario's run mode.")
    sim.add_argument("--seed", type=int, default=None, help="Override the scenario seed.")
    sim.add_argument("--out", type=Path, default=None, help="Output directory.")
    sim.add_argument("--symbols-per-slice", type=int, default=None,
                     help="Override the Monte Carlo symbols simulated per time slice.")

    bud = sub.add_parser("budget", help="Print classical and randomness budgets.")
    bud.add_argument("scenario", type=Path)

    syn = sub.add_parser("sync-test", help="Run only the clock-recovery experiment.")
    syn.add_argument("scenario", type=Path)
    syn.add_argument("--frames", type=int, default=10_000)
    syn.add_argument("--loss-db", type=float, default=None,
                     help="Channel loss to test at (default: worst loss of the pass).")
    syn.add_argument("--seed", type=int, default=None)
    return parser


def _apply_overrides(scenario: Scenario, args: argparse.Namespace) -> Scenario:
    run_opts = scenario.run
    changes = {}
    if args.mode is not None:
        changes["mode"] = args.mode
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    if args.symbols_per_slice is not None:
        if args.symbols_per_slice < scenario.protocol.frame_len:
            raise ValidationError("--symbols-per-slice must cover at least one frame")
        changes["symbols_limit"] = args.symbols_per_slice
    if changes:
        run_opts = dataclasses.replace(run_opts, **changes)
    if run_opts.mode == "mc" and run_opts.seed is None:
        raise ValidationError("run.seed is required in Monte Carlo mode")
    return dataclasses.replace(scenario, run=run_opts)


def _cmd_simulate(args: argparse.Namespace) -> int:
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    summary = run_pipeline(scenario)
    out_dir = scenario.run.output_dir or "satqkd_run"
    written = write_outputs(summary, out_dir)
    print(f"mode: {summary.mode}; {summary.totals['n_slices']} slices")
    print(
        "peak secret rate: %.6g bit/s; total secret bits: %.6g"
        % (summary.totals["peak_secret_rate_bps"], summary.totals["total_secret_bits"])
    )
    for path in written:
        print("wrote:", path)
    return 0


def _cmd_budget(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    summary = run_pipeline(
        dataclasses.replace(scenario, run=dataclasses.replace(scenario.run, mode="analytic"))
    )
    c = summary.classical
    r = summary.randomness
    print("classical budget (at peak detection rate %.6g /s):" % summary.totals["peak_detection_rate_hz"])
    print("  sift up-link:   %.6g Mbit/s" % c.sift_uplink_mbps)
    print("  sift down-link: %.6g Mbit/s" % c.sift_downlink_mbps)
    print("  total:          %.6g of %.6g Mbit/s -> %s"
          % (c.total_mbps, c.capacity_mbps, "feasible" if c.feasible else "INFEASIBLE"))
    print("randomness budget (%.6g s pass, %.3g bits/symbol):"
          % (r.pass_duration, r.bits_per_symbol))
    print("  pass bits:   %.6g (%.6g GB)" % (r.pass_bits, r.buffer_bytes / 1e9))
    print("  refill time: %.6g s (%.4g h)" % (r.fill_time_at_qrng, r.fill_time_at_qrng / 3600.0))
    return 0


def _cmd_sync_test(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    p = scenario.protocol
    if args.loss_db is not None:
        loss_db = args.loss_db
    else:
        profile = pass_profile(scenario.geometry, scenario.budget)
        if profile.n == 0:
            print("empty pass; nothing to test", file=sys.stderr)
            return 1
        loss_db = float(profile.loss_db.max())
    transmittance = 10.0 ** (-loss_db / 10.0)

    seed = args.seed if args.seed is not None else (scenario.run.seed or 0)
    rng = np.random.default_rng(seed)
    train = generate_train(p, rng, args.frames * p.frame_len)
    result = simulate_detection(
        train, transmittance, scenario.receiver, rng, scenario.clock,
        scenario.budget.background_rate,
    )
    print(f"loss {loss_db:.6g} dB, {args.frames} frames, {result.clicks.n} clicks")
    try:
        est = recover_clock(
            result.clicks, p, n_min_frames=min(1000, max(2, args.frames - 1))
        )
    except SyncFailed as exc:
        print("sync failed:", exc, file=sys.stderr)
        return 1
    print("true offset:  %.6g s (reduced modulo %.6g s frame)" % (scenario.clock.offset, p.frame_period))
    print("est. offset:  %.6g s  (error %.3g ps)"
          % (est.offset_hat, (est.offset_hat - scenario.clock.offset) * 1e12))
    print("true drift:   %.6g ppm" % (scenario.clock.drift / 1e-6))
    print("est. drift:   %.6g ppm (error %.3g ppm)"
          % (est.drift_hat / 1e-6, (est.drift_hat - scenario.clock.drift) / 1e-6))
    print("residual rms: %.6g ps; confidence %.4g" % (est.residual_rms * 1e12, est.confidence))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "budget":
            return _cmd_budget(args)
        if args.command == "sync-test":
            return _cmd_sync_test(args)
    except (ParseError, ValidationError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except (SyncFailed, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
