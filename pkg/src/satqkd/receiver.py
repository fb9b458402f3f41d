"""Delayed self-homodyne receiver model.

Each incoming double pulse is routed 50/50 to one of two delay-line
interferometers (measurement bases), where the delayed first pulse overlaps
the second and interference steers the light between two output ports.
Detection happens in three time bins per slot (early / central / late); only
the central bin carries phase information.  Both a closed-form expectation
model and a Monte Carlo click simulator are provided, with dark counts,
background light and detector dead time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import IO, NamedTuple, Optional, Union

import numpy as np

from .link import LossProfile
from .protocol import PHASE_MAP, Basis, Intensity, ProtocolParams, PulseTrain
from .sync import ClockModel

SPEED_OF_LIGHT = 299792458.0

_SIM_CHUNK = 1 << 20  # slots per internal simulation chunk (memory bound)


class Detector(IntEnum):
    Z_PLUS = 0
    Z_MINUS = 1
    X_PLUS = 2
    X_MINUS = 3


class TimeBin(IntEnum):
    EARLY = 0
    CENTRAL = 1
    LATE = 2
    OUTSIDE = 3


class BinMeans(NamedTuple):
    """Mean photon numbers in the six output bins (two ports x three bins)."""

    e_plus: np.ndarray
    e_minus: np.ndarray
    c_plus: np.ndarray
    c_minus: np.ndarray
    l_plus: np.ndarray
    l_minus: np.ndarray

    def total(self):
        return sum(self)


@dataclass(frozen=True)
class DliConfig:
    """One delay-line interferometer.

    The relative arm delay equals the intra-pair pulse spacing plus a small
    extra path that sets the receiver phase ``phase_shift`` (0 measures the
    Z basis, pi/2 the X basis).  ``phase_shift`` is stored exactly rather
    than being re-derived from the femtosecond-scale delay difference.
    """

    delay: float
    phase_shift: float
    angular_freq: float
    visibility: float = 0.98
    insertion_loss_db: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must lie in [0, 1]")
        if self.insertion_loss_db < 0:
            raise ValueError("insertion_loss_db must be >= 0")
        if self.angular_freq <= 0:
            raise ValueError("angular_freq must be > 0")

    @property
    def throughput(self) -> float:
        return 10.0 ** (-self.insertion_loss_db / 10.0)

    def check_delay(self, pulse_spacing: float) -> None:
        """Verify delay - pulse_spacing == phase_shift / angular_freq."""
        expected = pulse_spacing + self.phase_shift / self.angular_freq
        if abs(self.delay - expected) > 1e-15:
            raise ValueError(
                "interferometer delay inconsistent with pulse spacing and phase shift"
            )

    @classmethod
    def for_basis(
        cls,
        params: ProtocolParams,
        basis: Basis,
        visibility: float = 0.98,
        insertion_loss_db: float = 2.0,
    ) -> "DliConfig":
        omega = 2.0 * math.pi * SPEED_OF_LIGHT / params.wavelength_q
        phi = 0.0 if basis == Basis.BZ else math.pi / 2.0
        return cls(
            delay=params.pulse_spacing + phi / omega,
            phase_shift=phi,
            angular_freq=omega,
            visibility=visibility,
            insertion_loss_db=insertion_loss_db,
        )


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 0.8
    dark_rate: float = 100.0
    time_bin_width: float = 80e-12
    dead_time: float = 50e-9

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in (0, 1]")
        if self.dark_rate < 0:
            raise ValueError("dark_rate must be >= 0")
        if self.time_bin_width <= 0:
            raise ValueError("time_bin_width must be > 0")
        if self.dead_time < 0:
            raise ValueError("dead_time must be >= 0")


@dataclass(frozen=True)
class ReceiverConfig:
    dli_z: DliConfig
    dli_x: DliConfig
    detector: DetectorConfig

    @classmethod
    def default(
        cls,
        params: ProtocolParams,
        visibility: float = 0.98,
        insertion_loss_db: float = 2.0,
        detector: Optional[DetectorConfig] = None,
    ) -> "ReceiverConfig":
        return cls(
            dli_z=DliConfig.for_basis(params, Basis.BZ, visibility, insertion_loss_db),
            dli_x=DliConfig.for_basis(params, Basis.BX, visibility, insertion_loss_db),
            detector=detector or DetectorConfig(),
        )

    def validate(self, params: ProtocolParams) -> None:
        self.dli_z.check_delay(params.pulse_spacing)
        self.dli_x.check_delay(params.pulse_spacing)

    def dli_for(self, basis: int) -> DliConfig:
        return self.dli_z if basis == int(Basis.BZ) else self.dli_x


@dataclass(frozen=True)
class ClickRecord:
    t: float
    detector: Detector
    bin: TimeBin


@dataclass(frozen=True)
class ClickSet:
    """Columnar set of detection events, sorted by timestamp."""

    t: np.ndarray         # float64 seconds, receiver clock
    detector: np.ndarray  # int8 Detector
    bin: np.ndarray       # int8 TimeBin

    @property
    def n(self) -> int:
        return len(self.t)

    def records(self) -> list[ClickRecord]:
        return [
            ClickRecord(float(self.t[i]), Detector(int(self.detector[i])), TimeBin(int(self.bin[i])))
            for i in range(self.n)
        ]

    def write_csv(self, fh: IO[str], cap: Optional[int] = None) -> int:
        fh.write("t_ps,detector,bin\n")
        n = self.n if cap is None else min(self.n, cap)
        for i in range(n):
            fh.write(
                "%d,%s,%s\n"
                % (
                    int(round(self.t[i] * 1e12)),
                    Detector(int(self.detector[i])).name,
                    TimeBin(int(self.bin[i])).name,
                )
            )
        return n


@dataclass(frozen=True)
class DetectionResult:
    clicks: ClickSet
    route_basis: np.ndarray   # int8 per input slot: interferometer each pulse entered
    duration: float           # emission-side span covered by the input train


def bin_means(delta_phi, phi_r, n_in, visibility) -> BinMeans:
    """Mean photon number in each output bin for one double pulse.

    A pulse pair of total mean photon number ``n_in`` entering the
    interferometer splits into non-interfering early/late bins (n_in/8
    each per port) and a central bin where the two halves overlap:
    C+- = n_in/4 * (1 +- V*cos(delta_phi - phi_r)).  The six means sum to
    n_in for any inputs.
    """
    delta_phi = np.asarray(delta_phi, dtype=float)
    n_in = np.asarray(n_in, dtype=float)
    fringe = visibility * np.cos(delta_phi - phi_r)
    eighth = n_in / 8.0
    return BinMeans(
        e_plus=eighth,
        e_minus=eighth,
        c_plus=n_in / 4.0 * (1.0 + fringe),
        c_minus=n_in / 4.0 * (1.0 - fringe),
        l_plus=eighth,
        l_minus=eighth,
    )


def click_probability(mean_photons, detector: DetectorConfig):
    """Probability of at least one count in a gated bin (Poisson statistics)."""
    mean_photons = np.asarray(mean_photons, dtype=float)
    if np.any(mean_photons < 0):
        raise ValueError("mean_photons must be >= 0")
    exponent = detector.efficiency * mean_photons + detector.dark_rate * detector.time_bin_width
    return -np.expm1(-exponent)


def classify_clicks(
    times, params: ProtocolParams, time_bin_width: Optional[float] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Assign each timestamp to (time bin, slot index).

    A click belongs to the nearest expected bin center when it falls within
    half the gate width, otherwise it is OUTSIDE.  Expected centers per slot
    s*T are at offsets 0 (early), T_dp (central) and 2*T_dp (late).
    """
    times = np.asarray(times, dtype=float)
    width = time_bin_width if time_bin_width is not None else params.pulse_width
    ts = params.symbol_period
    tdp = params.pulse_spacing

    slot0 = np.floor(times / ts)
    rem = times - slot0 * ts
    # Candidate centers around the local slot, covering spill into neighbors.
    centers = np.array([2.0 * tdp - ts, 0.0, tdp, 2.0 * tdp, ts])
    center_bin = np.array(
        [TimeBin.LATE, TimeBin.EARLY, TimeBin.CENTRAL, TimeBin.LATE, TimeBin.EARLY],
        dtype=np.int8,
    )
    center_slot_adj = np.array([-1, 0, 0, 0, 1], dtype=np.int64)

    dist = np.abs(rem[:, None] - centers[None, :])
    j = np.argmin(dist, axis=1)
    nearest = dist[np.arange(len(times)), j]
    bins = np.where(nearest < width / 2.0, center_bin[j], np.int8(TimeBin.OUTSIDE))
    slots = slot0.astype(np.int64) + center_slot_adj[j]
    return bins.astype(np.int8), slots


def _suppress_dead_time(times_sorted: np.ndarray, dead_time: float) -> np.ndarray:
    """Keep mask for a non-paralyzable detector: drop clicks within the
    dead window following the last accepted click."""
    keep = np.ones(len(times_sorted), dtype=bool)
    if dead_time <= 0 or len(times_sorted) < 2:
        return keep
    last = -np.inf
    for i, t in enumerate(times_sorted):
        if t - last < dead_time:
            keep[i] = False
        else:
            last = t
    return keep


def simulate_detection(
    train: PulseTrain,
    loss: Union[float, np.ndarray, LossProfile],
    receiver: ReceiverConfig,
    rng: np.random.Generator,
    clock: Optional[ClockModel] = None,
    background_rate: float = 0.0,
) -> DetectionResult:
    """Monte Carlo detection of a pulse train.

    Each pulse is routed 50/50 to the Z or X interferometer; per output bin
    a click fires with Poisson probability from the bin mean scaled by
    channel transmittance, interferometer throughput and detector
    efficiency.  Dark counts and background light form a homogeneous
    Poisson process on every detector.  Clicks within the dead time of an
    accepted click on the same detector are suppressed.  Timestamps and the
    reported bin classification are in the receiver clock frame.
    """
    params = train.params
    det = receiver.detector
    clock = clock or ClockModel()
    n = train.n

    t0 = train.t0()
    if isinstance(loss, LossProfile):
        transmittance = loss.transmittance_at(t0)
        if background_rate == 0.0:
            background_rate = loss.background_rate
    else:
        transmittance = np.broadcast_to(np.asarray(loss, dtype=float), (n,))

    route = (rng.random(n) < 0.5).astype(np.int8)  # 0 -> Z, 1 -> X
    phi_r = np.where(route == 0, receiver.dli_z.phase_shift, receiver.dli_x.phase_shift)
    vis = np.where(route == 0, receiver.dli_z.visibility, receiver.dli_x.visibility)
    kappa = np.where(route == 0, receiver.dli_z.throughput, receiver.dli_x.throughput)

    # (bin, port) cells: weights 1/8 for early/late, interference in central.
    bin_offsets = {
        TimeBin.EARLY: 0.0,
        TimeBin.CENTRAL: params.pulse_spacing,
        TimeBin.LATE: 2.0 * params.pulse_spacing,
    }
    t_parts: list[np.ndarray] = []
    d_parts: list[np.ndarray] = []

    for lo in range(0, n, _SIM_CHUNK):
        hi = min(lo + _SIM_CHUNK, n)
        sl = slice(lo, hi)
        n_in = train.mean_total[sl] * transmittance[sl] * kappa[sl]
        fringe = vis[sl] * np.cos(train.delta_phi[sl] - phi_r[sl])
        base_det = route[sl].astype(np.int8) * 2
        for tbin, offset in bin_offsets.items():
            for port in (0, 1):  # 0 -> plus, 1 -> minus
                if tbin == TimeBin.CENTRAL:
                    mean = n_in / 4.0 * (1.0 + (1.0 if port == 0 else -1.0) * fringe)
                else:
                    mean = n_in / 8.0
                p = -np.expm1(-det.efficiency * mean)
                hit = np.nonzero(rng.random(hi - lo) < p)[0]
                if hit.size:
                    t_parts.append(t0[sl][hit] + offset)
                    d_parts.append((base_det[hit] + port).astype(np.int8))

    sig_t = np.concatenate(t_parts) if t_parts else np.array([])
    sig_d = np.concatenate(d_parts) if d_parts else np.array([], dtype=np.int8)
    # into the receiver clock frame
    sig_t = clock.apply(sig_t)

    # Dark counts and background as homogeneous noise per detector, drawn
    # directly in the receiver frame over the train's span.
    noise_rate = det.dark_rate + det.efficiency * background_rate
    span_lo = clock.apply(float(t0[0]) if n else 0.0)
    span_hi = clock.apply((float(t0[-1]) + params.symbol_period) if n else 0.0)
    noise_t: list[np.ndarray] = []
    noise_d: list[np.ndarray] = []
    if noise_rate > 0 and span_hi > span_lo:
        for d in range(4):
            count = rng.poisson(noise_rate * (span_hi - span_lo))
            if count:
                noise_t.append(rng.uniform(span_lo, span_hi, count))
                noise_d.append(np.full(count, d, dtype=np.int8))

    all_t = np.concatenate([sig_t] + noise_t) if noise_t else sig_t
    all_d = np.concatenate([sig_d] + noise_d) if noise_d else sig_d

    keep_t: list[np.ndarray] = []
    keep_d: list[np.ndarray] = []
    for d in range(4):
        mask = all_d == d
        tt = np.sort(all_t[mask])
        kept = _suppress_dead_time(tt, det.dead_time)
        keep_t.append(tt[kept])
        keep_d.append(np.full(int(kept.sum()), d, dtype=np.int8))

    t_all = np.concatenate(keep_t) if keep_t else np.array([])
    d_all = np.concatenate(keep_d) if keep_d else np.array([], dtype=np.int8)
    order = np.argsort(t_all, kind="stable")
    t_all = t_all[order]
    d_all = d_all[order]
    bins, _ = classify_clicks(t_all, params, det.time_bin_width)

    return DetectionResult(
        clicks=ClickSet(t=t_all, detector=d_all, bin=bins),
        route_basis=route,
        duration=train.duration,
    )


@dataclass(frozen=True)
class AnalyticRates:
    """Expected click rates of the Monte Carlo model at fixed transmittance.

    ``rates`` holds quantum-data plus noise clicks per detector (rows,
    Detector order) and time bin (columns: early, central, late);
    ``reference_rates`` the bright-reference contribution; ``outside`` the
    noise clicks falling outside every gate.  ``qber`` is the expected
    matched-basis central-bin error ratio of signal states, computed from
    mean photocounts so an ideal noiseless system shows (1 - V) / 2
    exactly.  Dead time is not included.
    """

    rates: np.ndarray            # (4, 3)
    reference_rates: np.ndarray  # (4, 3)
    outside: np.ndarray          # (4,)
    qber: float

    @property
    def detector_totals(self) -> np.ndarray:
        return self.rates.sum(axis=1) + self.reference_rates.sum(axis=1) + self.outside


def analytic_rates(
    params: ProtocolParams,
    transmittance: float,
    receiver: ReceiverConfig,
    background_rate: float = 0.0,
    include_reference: bool = True,
) -> AnalyticRates:
    """Closed-form expectation of :func:`simulate_detection`.

    Per-cell click rates use the exact per-slot Bernoulli probabilities of
    the Monte Carlo model, averaged over the configured basis, bit and
    intensity mix.
    """
    det = receiver.detector
    data_slot_rate = (1.0 - params.duty_cycle) / params.symbol_period
    ref_slot_rate = params.duty_cycle / params.symbol_period
    noise_rate = det.dark_rate + det.efficiency * background_rate

    rates = np.zeros((4, 3))
    ref_rates = np.zeros((4, 3))

    class_probs = list(zip((Intensity.SIGNAL, Intensity.DECOY, Intensity.VACUUM), params.p_intensity))
    for basis_rx, dli in ((Basis.BZ, receiver.dli_z), (Basis.BX, receiver.dli_x)):
        base = int(basis_rx) * 2
        for port in (0, 1):
            sign = 1.0 if port == 0 else -1.0
            d = base + port
            for tbin in (TimeBin.EARLY, TimeBin.CENTRAL, TimeBin.LATE):
                p_click = 0.0
                for k, pk in class_probs:
                    n_in = params.intensity_value(k) * transmittance * dli.throughput
                    if tbin == TimeBin.CENTRAL:
                        # average over the four prepared states
                        states = []
                        for basis_tx, p_tx in ((Basis.BZ, params.p_basis_z), (Basis.BX, 1 - params.p_basis_z)):
                            for bit in (0, 1):
                                dphi = PHASE_MAP[(basis_tx, bit)]
                                fringe = dli.visibility * math.cos(dphi - dli.phase_shift)
                                m = n_in / 4.0 * (1.0 + sign * fringe)
                                states.append((p_tx * 0.5, m))
                        p_click += pk * sum(w * -math.expm1(-det.efficiency * m) for w, m in states)
                    else:
                        p_click += pk * -math.expm1(-det.efficiency * n_in / 8.0)
                rates[d, int(tbin)] = 0.5 * data_slot_rate * p_click

                if include_reference and ref_slot_rate > 0:
                    n_ref = params.reference_intensity * transmittance * dli.throughput
                    if tbin == TimeBin.CENTRAL:
                        fringe = dli.visibility * math.cos(0.0 - dli.phase_shift)
                        m = n_ref / 4.0 * (1.0 + sign * fringe)
                    else:
                        m = n_ref / 8.0
                    ref_rates[d, int(tbin)] = (
                        0.5 * ref_slot_rate * -math.expm1(-det.efficiency * m)
                    )

    # Noise clicks classified into the three gates / outside.
    gate_frac = det.time_bin_width / params.symbol_period
    rates += noise_rate * gate_frac
    outside = np.full(4, noise_rate * max(0.0, 1.0 - 3.0 * gate_frac))

    # Matched-basis signal QBER from mean photocounts (linear in the means).
    vbar = 0.5 * (receiver.dli_z.visibility + receiver.dli_x.visibility)
    kbar = 0.5 * (receiver.dli_z.throughput + receiver.dli_x.throughput)
    sig = det.efficiency * params.mu_signal * transmittance * kbar / 2.0
    q_win = noise_rate * det.time_bin_width
    total = sig + 2.0 * q_win
    qber = ((1.0 - vbar) / 2.0 * sig + q_win) / total if total > 0 else 0.0

    return AnalyticRates(rates=rates, reference_rates=ref_rates, outside=outside, qber=qber)


def dead_time_availability(detector_totals: np.ndarray, detector: DetectorConfig) -> np.ndarray:
    """Fraction of live time per detector for a non-paralyzable dead time,
    assuming Poisson-like arrivals at the given total click rates."""
    return 1.0 / (1.0 + np.asarray(detector_totals, dtype=float) * detector.dead_time)


def reference_bin_click_probabilities(
    params: ProtocolParams, transmittance: float, receiver: ReceiverConfig
) -> np.ndarray:
    """Per reference slot and frame, probability of a click in each time bin
    (early, central, late), summed over all four detectors.

    Feeds the lightweight reference-click sampler used by long clock
    experiments; dead time is ignored.
    """
    det = receiver.detector
    probs = np.zeros(3)
    for dli in (receiver.dli_z, receiver.dli_x):
        n_ref = params.reference_intensity * transmittance * dli.throughput
        fringe = dli.visibility * math.cos(-dli.phase_shift)
        for port_sign in (1.0, -1.0):
            probs[int(TimeBin.EARLY)] += 0.5 * -math.expm1(-det.efficiency * n_ref / 8.0)
            probs[int(TimeBin.LATE)] += 0.5 * -math.expm1(-det.efficiency * n_ref / 8.0)
            m_c = n_ref / 4.0 * (1.0 + port_sign * fringe)
            probs[int(TimeBin.CENTRAL)] += 0.5 * -math.expm1(-det.efficiency * m_c)
    return probs
