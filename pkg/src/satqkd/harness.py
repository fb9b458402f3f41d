"""Pipeline wiring: scenario -> loss profile -> per-slice statistics ->
secret-key rate, in closed-form (analytic) or Monte Carlo mode, plus the
run outputs (CSV tables and a human-readable summary).

The pass is treated as quasi-static: channel loss is constant within each
time slice.  Monte Carlo slices simulate up to ``symbols_limit`` slots and
report per-second estimators, so slice statistics represent the full slice
regardless of the simulated sample size.  Slices are seeded independently
from (seed, slice index) and can be reproduced in isolation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .link import LossProfile, pass_profile
from .postprocessing import (
    BoundInvalid,
    ClassicalBudget,
    GainStats,
    UnmatchedSlot,
    classical_budget,
    decoy_bounds,
    estimate_gains,
    expected_gains,
    matched_sent_counts,
    secret_key_rate,
    sift,
)
from .protocol import (
    Intensity,
    RandomnessBudget,
    effective_symbol_rate,
    generate_train,
    randomness_budget,
)
from .receiver import (
    ClickSet,
    TimeBin,
    analytic_rates,
    classify_clicks,
    dead_time_availability,
    simulate_detection,
)
from .scenario import Scenario
from .sync import ClockModel, SyncFailed, recover_clock

log = logging.getLogger("satqkd")


@dataclass(frozen=True)
class SliceResult:
    t: float
    loss_db: float
    det_rate_hz: float
    qber: float
    sifted_rate_hz: float
    secret_rate_bps: float
    note: str = ""


@dataclass(frozen=True)
class RunSummary:
    mode: str
    slices: list[SliceResult]
    profile: LossProfile
    totals: dict
    sync_info: dict
    classical: ClassicalBudget
    randomness: RandomnessBudget
    config_echo: dict
    defaulted_keys: tuple[str, ...]
    version: str
    clicks: Optional[ClickSet] = None


def _wrap_offset(offset: float, frame_period: float) -> float:
    """Map an accumulated clock offset into one frame period around zero.

    Slot ambiguity beyond one frame is resolved by frame counters in the
    classical protocol, so only the intra-frame part is simulated.
    """
    return (offset + frame_period / 2.0) % frame_period - frame_period / 2.0


def _analytic_slice(scenario: Scenario, t: float, loss_db: float, transmittance: float) -> SliceResult:
    p = scenario.protocol
    rcv = scenario.receiver
    bg = scenario.budget.background_rate
    det = rcv.detector

    rates = analytic_rates(p, transmittance, rcv, bg, include_reference=True)
    avail = dead_time_availability(rates.detector_totals, det)
    gains = expected_gains(p, transmittance, rcv, bg, availability=float(avail.mean()))

    # Announced detections: gated clicks that map to quantum-data slots.
    noise_rate = det.dark_rate + det.efficiency * bg
    noise_gated = 3.0 * (det.time_bin_width / p.symbol_period) * noise_rate
    per_det_data = rates.rates.sum(axis=1) - noise_gated + (1.0 - p.duty_cycle) * noise_gated
    det_rate = float((avail * per_det_data).sum())

    q = scenario.run.q_sift
    sifted_rate = (
        effective_symbol_rate(p)
        * q
        * (
            p.p_intensity[0] * gains.signal.gain
            + p.p_intensity[1] * gains.decoy.gain
            + p.p_intensity[2] * gains.vacuum.gain
        )
    )

    note = ""
    try:
        bounds = decoy_bounds(gains, p.mu_signal, p.nu_decoy)
        rate = secret_key_rate(gains, bounds, p, scenario.run.f_ec, q).r_per_second
    except BoundInvalid:
        rate = 0.0
        note = "bound-invalid"

    return SliceResult(
        t=t,
        loss_db=loss_db,
        det_rate_hz=det_rate,
        qber=gains.signal.error_rate,
        sifted_rate_hz=sifted_rate,
        secret_rate_bps=rate,
        note=note,
    )


def _mc_slice(
    scenario: Scenario,
    slice_index: int,
    t: float,
    loss_db: float,
    transmittance: float,
    rng: np.random.Generator,
) -> tuple[SliceResult, Optional[ClickSet], Optional[dict]]:
    p = scenario.protocol
    run = scenario.run
    bg = scenario.budget.background_rate

    n_true = int(round(scenario.geometry.time_step / p.symbol_period))
    n_sim = max(p.frame_len, min(run.symbols_limit, n_true))
    duration = n_sim * p.symbol_period

    # Clock state at this point of the pass, reduced modulo the frame.
    acc = scenario.clock.offset + scenario.clock.drift * t
    clock_i = ClockModel(
        offset=_wrap_offset(acc, p.frame_period),
        drift=scenario.clock.drift,
        drift_cap=scenario.clock.drift_cap,
    )

    train = generate_train(p, rng, n_sim)
    result = simulate_detection(train, transmittance, scenario.receiver, rng, clock_i, bg)
    clicks = result.clicks

    try:
        est = recover_clock(
            clicks,
            p,
            n_min_frames=min(1000, max(2, n_sim // p.frame_len)),
        )
        block = sift(train, clicks, est, rng)
    except (SyncFailed, UnmatchedSlot) as exc:
        log.warning("slice %d (t=%.0f s): %s", slice_index, t, exc)
        raw = float((clicks.bin != int(TimeBin.OUTSIDE)).sum()) / duration
        return (
            SliceResult(t, loss_db, raw, 0.0, 0.0, 0.0, note="sync-failed"),
            clicks,
            None,
        )
    gains = estimate_gains(block, matched_sent_counts(train, result.route_basis))

    bins_c, slots_c = classify_clicks(est.correct(clicks.t), p, p.pulse_width)
    in_range = (slots_c >= 0) & (slots_c < n_sim)
    gated = bins_c != int(TimeBin.OUTSIDE)
    is_data = np.zeros(clicks.n, dtype=bool)
    sel = in_range & gated
    is_data[sel] = train.iclass[slots_c[sel]] != int(Intensity.REFERENCE)
    det_rate = float(is_data.sum()) / duration

    note = ""
    try:
        bounds = decoy_bounds(gains, p.mu_signal, p.nu_decoy)
        rate = secret_key_rate(gains, bounds, p, run.f_ec, run.q_sift).r_per_second
    except BoundInvalid:
        rate = 0.0
        note = "bound-invalid"

    sync_info = {
        "offset_hat": est.offset_hat,
        "drift_hat": est.drift_hat,
        "residual_rms": est.residual_rms,
        "confidence": est.confidence,
        "offset_true": clock_i.offset,
        "drift_true": clock_i.drift,
    }
    return (
        SliceResult(
            t=t,
            loss_db=loss_db,
            det_rate_hz=det_rate,
            qber=block.qber_pairwise(Intensity.SIGNAL),
            sifted_rate_hz=block.n_sifted / duration,
            secret_rate_bps=rate,
            note=note,
        ),
        clicks,
        sync_info,
    )


def run(scenario: Scenario) -> RunSummary:
    """Execute the full pipeline for one pass."""
    from . import __version__

    p = scenario.protocol
    run_opts = scenario.run
    profile = pass_profile(scenario.geometry, scenario.budget)

    slices: list[SliceResult] = []
    sync_info: dict = {}
    kept_clicks: list[ClickSet] = []
    kept = 0

    if run_opts.mode == "analytic":
        for i in range(profile.n):
            slices.append(
                _analytic_slice(
                    scenario,
                    float(profile.t[i]),
                    float(profile.loss_db[i]),
                    float(profile.transmittance[i]),
                )
            )
        sync_info = {
            "method": "configured",
            "offset_true": scenario.clock.offset,
            "drift_true": scenario.clock.drift,
        }
    else:
        root = np.random.SeedSequence(run_opts.seed)
        children = root.spawn(profile.n)
        for i in range(profile.n):
            rng = np.random.default_rng(children[i])
            result, clicks, info = _mc_slice(
                scenario,
                i,
                float(profile.t[i]),
                float(profile.loss_db[i]),
                float(profile.transmittance[i]),
                rng,
            )
            slices.append(result)
            if info is not None and not sync_info:
                sync_info = {"method": "recovered", **info}
            if clicks is not None and kept < run_opts.clicks_cap:
                take = min(clicks.n, run_opts.clicks_cap - kept)
                kept_clicks.append(
                    ClickSet(clicks.t[:take], clicks.detector[:take], clicks.bin[:take])
                )
                kept += take
        if not sync_info:
            sync_info = {"method": "failed"}

    step = scenario.geometry.time_step
    total_secret = sum(s.secret_rate_bps for s in slices) * step
    sifted_weight = sum(s.sifted_rate_hz for s in slices)
    mean_qber = (
        sum(s.qber * s.sifted_rate_hz for s in slices) / sifted_weight
        if sifted_weight > 0
        else 0.0
    )
    peak_rate = max((s.secret_rate_bps for s in slices), default=0.0)
    peak_det = max((s.det_rate_hz for s in slices), default=0.0)
    pass_duration = profile.n * step

    totals = {
        "pass_duration_s": pass_duration,
        "n_slices": profile.n,
        "total_secret_bits": total_secret,
        "peak_secret_rate_bps": peak_rate,
        "mean_qber": mean_qber,
        "peak_detection_rate_hz": peak_det,
    }

    classical = classical_budget(
        peak_det,
        announce_bits=run_opts.announce_bits,
        reveal_bits=run_opts.reveal_bits,
        control_overhead_mbps=run_opts.control_overhead_mbps,
    )
    randomness = randomness_budget(
        p,
        pass_duration,
        run_opts.qrng_rate,
        bits_per_symbol=run_opts.bits_per_symbol,
    )

    clicks_out: Optional[ClickSet] = None
    if kept_clicks:
        clicks_out = ClickSet(
            t=np.concatenate([c.t for c in kept_clicks]),
            detector=np.concatenate([c.detector for c in kept_clicks]),
            bin=np.concatenate([c.bin for c in kept_clicks]),
        )

    return RunSummary(
        mode=run_opts.mode,
        slices=slices,
        profile=profile,
        totals=totals,
        sync_info=sync_info,
        classical=classical,
        randomness=randomness,
        config_echo=scenario.echo(),
        defaulted_keys=scenario.defaulted_keys,
        version=__version__,
        clicks=clicks_out,
    )


def write_outputs(summary: RunSummary, out_dir) -> list[Path]:
    """Write profile.csv, slices.csv, summary.txt and, in Monte Carlo mode,
    a size-capped clicks.csv.  All numeric fields use 6 significant digits
    and Unix line endings."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "profile.csv"
    with open(path, "w", newline="\n") as fh:
        summary.profile.write_csv(fh)
    written.append(path)

    path = out / "slices.csv"
    with open(path, "w", newline="\n") as fh:
        fh.write("t_s,loss_db,det_rate_hz,qber,sifted_rate_hz,secret_rate_bps\n")
        for s in summary.slices:
            fh.write(
                "%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n"
                % (s.t, s.loss_db, s.det_rate_hz, s.qber, s.sifted_rate_hz, s.secret_rate_bps)
            )
    written.append(path)

    if summary.clicks is not None:
        path = out / "clicks.csv"
        with open(path, "w", newline="\n") as fh:
            summary.clicks.write_csv(fh)
        written.append(path)

    path = out / "summary.txt"
    with open(path, "w", newline="\n") as fh:
        fh.write(_format_summary(summary))
    written.append(path)
    return written


def _fmt(value) -> str:
    if isinstance(value, float):
        return "%.6g" % value
    if isinstance(value, list):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return str(value)


def _format_summary(summary: RunSummary) -> str:
    lines = [
        f"satqkd run summary (version {summary.version})",
        f"mode: {summary.mode}",
        "",
        "totals:",
    ]
    for key, value in summary.totals.items():
        lines.append(f"  {key} = {_fmt(value)}")

    lines.append("")
    lines.append("clock sync:")
    for key, value in summary.sync_info.items():
        lines.append(f"  {key} = {_fmt(value)}")

    c = summary.classical
    lines += [
        "",
        "classical budget:",
        f"  sift_uplink_mbps = {_fmt(c.sift_uplink_mbps)}",
        f"  sift_downlink_mbps = {_fmt(c.sift_downlink_mbps)}",
        f"  total_mbps = {_fmt(c.total_mbps)}",
        f"  capacity_mbps = {_fmt(c.capacity_mbps)}",
        f"  feasible = {c.feasible}",
    ]

    r = summary.randomness
    lines += [
        "",
        "randomness budget:",
        f"  bits_per_symbol = {_fmt(r.bits_per_symbol)}",
        f"  pass_bits = {_fmt(r.pass_bits)}",
        f"  buffer_bytes = {_fmt(r.buffer_bytes)}",
        f"  fill_time_at_qrng_s = {_fmt(r.fill_time_at_qrng)}",
    ]

    lines += ["", "configuration (resolved; * = default applied):"]
    defaulted = set(summary.defaulted_keys)
    for section, content in summary.config_echo.items():
        lines.append(f"  [{section}]")
        for key, value in content.items():
            mark = " *" if f"{section}.{key}" in defaulted else ""
            lines.append(f"    {key} = {_fmt(value)}{mark}")
    lines.append("")
    return "\n".join(lines)
