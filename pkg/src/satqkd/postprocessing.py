"""Post-processing chain: sifting, gain/error statistics per intensity
class, three-intensity decoy bounds, the asymptotic secret-key rate and
the classical-channel budget.

Gain statistics are conditioned on basis-matched pulses; the factor-of-two
loss from photons leaving through the non-interfering early/late bins is
carried inside the gain model (the mu/2 exponent), and the basis-matching
probability appears as the sifting factor q_sift = 1/2 in the key rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .protocol import Basis, Intensity, ProtocolParams, PulseTrain, effective_symbol_rate
from .receiver import ClickSet, ReceiverConfig, TimeBin, classify_clicks
from .sync import SyncEstimate


class UnmatchedSlot(RuntimeError):
    """A click maps to no transmitted slot; usually a sync failure."""


class MissingIntensityClass(RuntimeError):
    """No pulses of a required intensity class were sent."""


class BoundInvalid(RuntimeError):
    """Decoy statistics too noisy to give a positive single-photon bound."""


def binary_entropy(p: float) -> float:
    """Binary Shannon entropy with H2(0) = H2(1) = 0."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


@dataclass(frozen=True)
class SiftedBlock:
    """Accepted key-candidate pairs after basis reconciliation."""

    slot: np.ndarray     # int64
    tx_bit: np.ndarray   # int8
    rx_bit: np.ndarray   # int8
    iclass: np.ndarray   # int8 Intensity

    @property
    def n_sifted(self) -> int:
        return len(self.slot)

    def qber_pairwise(self, intensity: Intensity = Intensity.SIGNAL) -> float:
        sel = self.iclass == int(intensity)
        n = int(sel.sum())
        if n == 0:
            return 0.0
        return float((self.tx_bit[sel] != self.rx_bit[sel]).sum()) / n


@dataclass(frozen=True)
class ClassStats:
    n_sent: float
    n_det: float
    n_err: float

    @property
    def gain(self) -> float:
        return self.n_det / self.n_sent

    @property
    def error_rate(self) -> float:
        return self.n_err / self.n_det if self.n_det > 0 else 0.0


@dataclass(frozen=True)
class GainStats:
    signal: ClassStats
    decoy: ClassStats
    vacuum: ClassStats

    @property
    def y0(self) -> float:
        return self.vacuum.gain

    def stats_for(self, intensity: Intensity) -> ClassStats:
        return {
            Intensity.SIGNAL: self.signal,
            Intensity.DECOY: self.decoy,
            Intensity.VACUUM: self.vacuum,
        }[intensity]


@dataclass(frozen=True)
class DecoyBounds:
    y1_lower: float
    e1_upper: float

    def __post_init__(self):
        if not 0.0 <= self.y1_lower:
            raise ValueError("y1_lower must be >= 0")
        if not 0.0 <= self.e1_upper <= 0.5:
            raise ValueError("e1_upper must lie in [0, 0.5]")


@dataclass(frozen=True)
class KeyRateResult:
    r_per_pulse: float
    r_per_second: float
    q_sift: float
    f_ec: float


@dataclass(frozen=True)
class ClassicalBudget:
    sift_uplink_mbps: float
    sift_downlink_mbps: float
    total_mbps: float
    capacity_mbps: float
    feasible: bool


#: Supported payload data rate of the classical optical channel.
CLASSICAL_CAPACITY_MBPS = 191.29


def sift(
    train: PulseTrain,
    clicks: ClickSet,
    sync: SyncEstimate,
    rng: np.random.Generator,
    slot_margin: int = 1,
) -> SiftedBlock:
    """Pair clock-corrected clicks with transmitter records.

    Keeps central-bin clicks whose detector basis matches the prepared
    basis; the received bit is 0 on a plus port and 1 on a minus port
    (phase difference 0 relative to the receiver phase interferes into the
    plus port).  Early, late, outside-bin and mismatched-basis clicks are
    discarded, as are clicks on reference slots.  When both ports of one
    slot click, a random bit is assigned.

    Clicks mapping more than ``slot_margin`` slots outside the transmitted
    range raise UnmatchedSlot; boundary spill within the margin is dropped.
    """
    params = train.params
    t_corr = sync.correct(clicks.t)
    bins, slots = classify_clicks(t_corr, params, params.pulse_width)

    start = int(train.slot[0]) if train.n else 0
    stop = start + train.n
    if clicks.n:
        out_of_range = (slots < start - slot_margin) | (slots >= stop + slot_margin)
        # Outside-bin noise clicks carry no slot meaning; only binned clicks count.
        bad = out_of_range & (bins != int(TimeBin.OUTSIDE))
        if bad.any():
            raise UnmatchedSlot(
                f"{int(bad.sum())} clicks map outside the transmitted slot range; "
                "clock recovery likely failed"
            )

    keep = (
        (bins == int(TimeBin.CENTRAL))
        & (slots >= start)
        & (slots < stop)
    )
    slots = slots[keep]
    detectors = clicks.detector[keep]

    idx = slots - start
    tx_basis = train.basis[idx]
    tx_bit = train.bit[idx]
    tx_class = train.iclass[idx]
    det_basis = (detectors // 2).astype(np.int8)

    matched = (tx_class != int(Intensity.REFERENCE)) & (det_basis == tx_basis)
    slots = slots[matched]
    detectors = detectors[matched]
    tx_bit = tx_bit[matched]
    tx_class = tx_class[matched]
    rx_bit = (detectors % 2).astype(np.int8)

    # Double clicks (both ports of one slot): keep one pair, random bit.
    order = np.argsort(slots, kind="stable")
    slots, tx_bit, rx_bit, tx_class = (
        slots[order],
        tx_bit[order],
        rx_bit[order],
        tx_class[order],
    )
    uniq, first, counts = np.unique(slots, return_index=True, return_counts=True)
    rx_out = rx_bit[first].copy()
    doubles = counts > 1
    if doubles.any():
        rx_out[doubles] = rng.integers(0, 2, int(doubles.sum()), dtype=np.int8)

    return SiftedBlock(
        slot=uniq,
        tx_bit=tx_bit[first],
        rx_bit=rx_out,
        iclass=tx_class[first],
    )


def matched_sent_counts(train: PulseTrain, route_basis: np.ndarray) -> dict[Intensity, int]:
    """Count sent pulses per intensity class whose prepared basis matched
    the interferometer they were routed to."""
    matched = train.basis == route_basis
    out = {}
    for k in (Intensity.SIGNAL, Intensity.DECOY, Intensity.VACUUM):
        out[k] = int(((train.iclass == int(k)) & matched).sum())
    return out


def estimate_gains(block: SiftedBlock, sent_counts: Mapping[Intensity, float]) -> GainStats:
    """Exact detection and error ratios per intensity class.

    ``sent_counts`` are the basis-matched sent pulse counts per class; the
    returned gains are therefore conditioned on basis match.
    """
    stats = {}
    for k in (Intensity.SIGNAL, Intensity.DECOY, Intensity.VACUUM):
        n_sent = float(sent_counts.get(k, 0))
        if n_sent <= 0:
            raise MissingIntensityClass(f"no {k.name.lower()} pulses were sent")
        sel = block.iclass == int(k)
        n_det = float(sel.sum())
        n_err = float((block.tx_bit[sel] != block.rx_bit[sel]).sum())
        stats[k] = ClassStats(n_sent=n_sent, n_det=n_det, n_err=n_err)
    return GainStats(
        signal=stats[Intensity.SIGNAL],
        decoy=stats[Intensity.DECOY],
        vacuum=stats[Intensity.VACUUM],
    )


def expected_gains(
    params: ProtocolParams,
    transmittance: float,
    receiver: ReceiverConfig,
    background_rate: float = 0.0,
    availability: float = 1.0,
) -> GainStats:
    """Closed-form expected gains of the matched central-bin model.

    Q_k = availability * (Y0 + 1 - exp(-eta_tot * k / 2)) with eta_tot the
    product of channel transmittance, interferometer throughput and
    detector efficiency; the factor 1/2 is the central-bin share of the
    output light.  Error rates use mean photocounts, so a noiseless system
    shows exactly (1 - V) / 2.  Counts are expected values per matched
    sent pulse.
    """
    det = receiver.detector
    kbar = 0.5 * (receiver.dli_z.throughput + receiver.dli_x.throughput)
    vbar = 0.5 * (receiver.dli_z.visibility + receiver.dli_x.visibility)
    eta_tot = transmittance * kbar * det.efficiency
    noise = det.dark_rate + det.efficiency * background_rate
    q_win = noise * det.time_bin_width
    y0 = 2.0 * q_win

    def stats(k_mean: float) -> ClassStats:
        q = availability * (y0 + -math.expm1(-eta_tot * k_mean / 2.0))
        sig = eta_tot * k_mean / 2.0
        total = sig + 2.0 * q_win
        e = ((1.0 - vbar) / 2.0 * sig + q_win) / total if total > 0 else 0.5
        return ClassStats(n_sent=1.0, n_det=q, n_err=e * q)

    return GainStats(
        signal=stats(params.mu_signal),
        decoy=stats(params.nu_decoy),
        vacuum=stats(0.0),
    )


def decoy_bounds(gains: GainStats, mu: float, nu: float) -> DecoyBounds:
    """Three-intensity (signal / weak decoy / vacuum) single-photon bounds.

    With Poissonian sources, expanding the gains over photon number n and
    truncating the unknown multiphoton yields gives the standard lower
    bound on the single-photon yield,

        Y1 >= mu / (mu nu - nu^2) * (Q_nu e^nu - Q_mu e^mu nu^2/mu^2
                                      - (mu^2 - nu^2)/mu^2 * Y0),

    using that yields enter Q_k e^k with weights k^n/n! and that the n >= 2
    terms of the decoy state are dominated by (nu/mu)^2 times those of the
    signal state.  The single-photon error bound charges all decoy errors
    beyond the vacuum share to the single-photon fraction,

        e1 <= (E_nu Q_nu e^nu - Y0 / 2) / (nu * Y1_lower).
    """
    if not 0.0 < nu < mu:
        raise ValueError("intensities must satisfy 0 < nu < mu")
    q_mu = gains.signal.gain
    q_nu = gains.decoy.gain
    y0 = gains.y0
    e_nu = gains.decoy.error_rate

    y1 = (mu / (mu * nu - nu**2)) * (
        q_nu * math.exp(nu)
        - q_mu * math.exp(mu) * (nu**2 / mu**2)
        - ((mu**2 - nu**2) / mu**2) * y0
    )
    if y1 <= 0.0:
        raise BoundInvalid("single-photon yield bound is not positive")
    y1 = min(y1, 1.0)

    e1 = (e_nu * q_nu * math.exp(nu) - 0.5 * y0) / (nu * y1)
    e1 = min(max(e1, 0.0), 0.5)
    return DecoyBounds(y1_lower=y1, e1_upper=e1)


def secret_key_rate(
    gains: GainStats,
    bounds: DecoyBounds,
    params: ProtocolParams,
    f_ec: float = 1.16,
    q_sift: float = 0.5,
) -> KeyRateResult:
    """Asymptotic decoy-state key rate.

    r = q_sift * (-Q_mu f_ec H2(E_mu) + Q1_lower (1 - H2(e1_upper))) per
    sent signal pulse, floored at zero; per-second rate scales by the
    effective symbol rate and the signal-state fraction.
    """
    mu = params.mu_signal
    q1_lower = bounds.y1_lower * mu * math.exp(-mu)
    r = q_sift * (
        -gains.signal.gain * f_ec * binary_entropy(gains.signal.error_rate)
        + q1_lower * (1.0 - binary_entropy(bounds.e1_upper))
    )
    r = max(r, 0.0)
    return KeyRateResult(
        r_per_pulse=r,
        r_per_second=r * effective_symbol_rate(params) * params.p_intensity[0],
        q_sift=q_sift,
        f_ec=f_ec,
    )


def classical_budget(
    detection_rate: float,
    announce_bits: int = 64,
    reveal_bits: int = 8,
    control_overhead_mbps: float = 0.0,
    capacity_mbps: float = CLASSICAL_CAPACITY_MBPS,
) -> ClassicalBudget:
    """Sifting traffic versus the classical channel capacity.

    The receiver announces each detection up-link (slot index, default 64
    bits); the transmitter reveals basis and intensity class down-link
    (default 8 bits) plus a fixed control overhead.
    """
    if detection_rate < 0:
        raise ValueError("detection_rate must be >= 0")
    up = detection_rate * announce_bits / 1e6
    down = detection_rate * reveal_bits / 1e6 + control_overhead_mbps
    total = up + down
    return ClassicalBudget(
        sift_uplink_mbps=up,
        sift_downlink_mbps=down,
        total_mbps=total,
        capacity_mbps=capacity_mbps,
        feasible=total <= capacity_mbps,
    )
