"""Transmitter-side protocol model.

Symbol alphabet and four-state phase encoding, frame layout with bright
timing-reference slots, bulk pulse-train generation for the Monte Carlo
channel, and randomness-consumption accounting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class Basis(IntEnum):
    BZ = 0
    BX = 1


class Intensity(IntEnum):
    SIGNAL = 0
    DECOY = 1
    VACUUM = 2
    REFERENCE = 3


#: (basis, bit) -> encoded phase difference between the two pulses of a pair.
PHASE_MAP = {
    (Basis.BZ, 0): 0.0,
    (Basis.BZ, 1): math.pi,
    (Basis.BX, 0): math.pi / 2.0,
    (Basis.BX, 1): 3.0 * math.pi / 2.0,
}

# Same map as a flat table indexed by basis * 2 + bit, for vectorized use.
_DPHI_TABLE = np.array([0.0, math.pi, math.pi / 2.0, 3.0 * math.pi / 2.0])


@dataclass(frozen=True)
class ProtocolParams:
    """All transmitter protocol constants.

    Durations are seconds, wavelengths meters, intensities mean photon
    numbers per double pulse.  ``ref_slots`` lists the in-frame slot indices
    that carry bright timing references instead of quantum data.
    """

    symbol_period: float = 400e-12      # double-pulse repetition period
    pulse_width: float = 80e-12         # single pulse width
    pulse_spacing: float = 160e-12      # spacing between the two pulses of a pair
    wavelength_q: float = 1565.5e-9     # quantum channel
    wavelength_down: float = 1553.3e-9  # classical down-link
    wavelength_up: float = 1536.6e-9    # classical up-link
    mu_signal: float = 0.5
    nu_decoy: float = 0.1
    p_intensity: tuple[float, float, float] = (0.7, 0.2, 0.1)  # signal/decoy/vacuum
    p_basis_z: float = 0.5
    frame_len: int = 100
    ref_slots: tuple[int, ...] = tuple(range(10))
    ref_gain_db: float = 40.0

    def __post_init__(self):
        if not (self.pulse_width < self.pulse_spacing < self.symbol_period):
            raise ValueError(
                "pulse timing must satisfy pulse_width < pulse_spacing < symbol_period"
            )
        ratio = self.pulse_spacing / self.pulse_width
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("pulse_spacing must be an integer multiple of pulse_width")
        if not self.mu_signal < 1.0:
            raise ValueError("mean photon number must be < 1")
        if not 0.0 <= self.nu_decoy < self.mu_signal:
            raise ValueError("decoy intensity must satisfy 0 <= nu_decoy < mu_signal")
        if len(self.p_intensity) != 3 or any(p < 0 for p in self.p_intensity):
            raise ValueError("p_intensity must be three non-negative probabilities")
        if abs(sum(self.p_intensity) - 1.0) > 1e-9:
            raise ValueError("p_intensity must sum to 1")
        if not 0.0 < self.p_basis_z < 1.0:
            raise ValueError("p_basis_z must lie in (0, 1)")
        if self.frame_len < 1:
            raise ValueError("frame_len must be >= 1")
        slots = tuple(self.ref_slots)
        if len(set(slots)) != len(slots):
            raise ValueError("ref_slots must be unique")
        if any(not 0 <= s < self.frame_len for s in slots):
            raise ValueError("ref_slots must lie inside the frame (0 <= slot < frame_len)")
        if len(slots) >= self.frame_len:
            raise ValueError("ref_slots must leave at least one data slot per frame")
        if self.ref_gain_db < 0:
            raise ValueError("ref_gain_db must be >= 0")

    @property
    def duty_cycle(self) -> float:
        """Fraction of slots occupied by timing references."""
        return len(self.ref_slots) / self.frame_len

    @property
    def frame_period(self) -> float:
        return self.frame_len * self.symbol_period

    @property
    def reference_intensity(self) -> float:
        """Mean photon number of one bright reference double pulse."""
        return self.mu_signal * 10.0 ** (self.ref_gain_db / 10.0)

    def intensity_value(self, intensity: Intensity) -> float:
        return self.intensity_values()[int(intensity)]

    def intensity_values(self) -> np.ndarray:
        return np.array(
            [self.mu_signal, self.nu_decoy, 0.0, self.reference_intensity]
        )


@dataclass(frozen=True)
class SymbolRecord:
    """One prepared symbol: what the transmitter committed to for a slot."""

    slot_index: int
    basis: Optional[Basis]
    bit: Optional[int]
    intensity: Intensity
    alpha: float          # global phase of the first pulse, [0, 2*pi)
    delta_phi: float      # encoded phase difference, second minus first pulse


@dataclass(frozen=True)
class DoublePulse:
    """Physical description of one emitted pulse pair."""

    t0: float             # emission time of the first pulse
    amp2_first: float     # mean photon number of the first pulse
    amp2_second: float
    phase_first: float
    phase_second: float


@dataclass(frozen=True)
class RandomnessBudget:
    bits_per_symbol: float
    pass_duration: float
    pass_bits: float
    buffer_bytes: float
    fill_time_at_qrng: float


def effective_symbol_rate(params: ProtocolParams) -> float:
    """Time-averaged quantum symbol rate after the reference duty cycle."""
    return (1.0 / params.symbol_period) * (1.0 - params.duty_cycle)


def encode_symbol(
    basis: Basis,
    bit: int,
    intensity: Intensity,
    alpha: float,
    params: ProtocolParams,
    slot_index: int = 0,
) -> SymbolRecord:
    """Encode one (basis, bit) choice into a phase-difference symbol.

    The four states map to phase differences {0, pi, pi/2, 3*pi/2}; the
    global phase ``alpha`` is carried through unchanged.
    """
    if not 0.0 <= alpha < TWO_PI:
        raise ValueError("alpha must lie in [0, 2*pi)")
    if bit not in (0, 1):
        raise ValueError("bit must be 0 or 1")
    if intensity == Intensity.REFERENCE:
        raise ValueError("reference slots carry no (basis, bit) encoding")
    return SymbolRecord(
        slot_index=slot_index,
        basis=Basis(basis),
        bit=bit,
        intensity=Intensity(intensity),
        alpha=alpha,
        delta_phi=PHASE_MAP[(Basis(basis), bit)],
    )


def reference_symbol(slot_index: int, alpha: float, params: ProtocolParams) -> SymbolRecord:
    """A bright timing-reference slot; no key material is encoded."""
    return SymbolRecord(
        slot_index=slot_index,
        basis=None,
        bit=None,
        intensity=Intensity.REFERENCE,
        alpha=alpha,
        delta_phi=0.0,
    )


def double_pulse(symbol: SymbolRecord, params: ProtocolParams) -> DoublePulse:
    """Turn a symbol into its emitted pulse pair.

    The total intensity is split equally between the two pulses and the
    second pulse carries the encoded phase offset on top of ``alpha``.
    """
    total = params.intensity_value(symbol.intensity)
    return DoublePulse(
        t0=symbol.slot_index * params.symbol_period,
        amp2_first=total / 2.0,
        amp2_second=total / 2.0,
        phase_first=symbol.alpha,
        phase_second=(symbol.alpha + symbol.delta_phi) % TWO_PI,
    )


@dataclass(frozen=True)
class PulseTrain:
    """Columnar batch of prepared slots (transmitter truth plus pulse data).

    ``basis`` and ``bit`` are -1 on reference slots.  Generation order of the
    random draws (basis, bit, intensity, alpha) is fixed so that seeded runs
    are reproducible bit for bit.
    """

    params: ProtocolParams
    slot: np.ndarray        # int64, global slot index
    basis: np.ndarray       # int8, Basis value or -1
    bit: np.ndarray         # int8, 0/1 or -1
    iclass: np.ndarray      # int8, Intensity value
    mean_total: np.ndarray  # float64, mean photon number of the pair
    alpha: np.ndarray       # float64
    delta_phi: np.ndarray   # float64

    @property
    def n(self) -> int:
        return len(self.slot)

    @property
    def duration(self) -> float:
        return self.n * self.params.symbol_period

    def t0(self) -> np.ndarray:
        """Emission time of each pair's first pulse."""
        return self.slot * self.params.symbol_period

    @property
    def is_reference(self) -> np.ndarray:
        return self.iclass == int(Intensity.REFERENCE)

    def symbols(self) -> list[SymbolRecord]:
        out = []
        for i in range(self.n):
            ref = self.iclass[i] == int(Intensity.REFERENCE)
            out.append(
                SymbolRecord(
                    slot_index=int(self.slot[i]),
                    basis=None if ref else Basis(int(self.basis[i])),
                    bit=None if ref else int(self.bit[i]),
                    intensity=Intensity(int(self.iclass[i])),
                    alpha=float(self.alpha[i]),
                    delta_phi=float(self.delta_phi[i]),
                )
            )
        return out

    def pulses(self) -> list[DoublePulse]:
        return [double_pulse(s, self.params) for s in self.symbols()]


def generate_train(
    params: ProtocolParams,
    rng: np.random.Generator,
    n_slots: int,
    start_slot: int = 0,
    symbol_stream: Optional[Iterator[tuple[Basis, int, Intensity]]] = None,
) -> PulseTrain:
    """Generate ``n_slots`` consecutive slots following the frame layout.

    Slots whose in-frame position is listed in ``ref_slots`` become bright
    references; all other slots draw basis, bit and intensity from the
    configured probabilities (or consume ``symbol_stream`` when given).
    Every slot, reference or not, consumes one uniform draw for alpha.
    """
    slots = np.arange(start_slot, start_slot + n_slots, dtype=np.int64)
    in_frame = (slots % params.frame_len).astype(np.int64)
    ref_lookup = np.zeros(params.frame_len, dtype=bool)
    ref_lookup[list(params.ref_slots)] = True
    is_ref = ref_lookup[in_frame]

    basis = (rng.random(n_slots) >= params.p_basis_z).astype(np.int8)  # 0 -> BZ
    bit = rng.integers(0, 2, n_slots, dtype=np.int8)
    edges = np.cumsum(params.p_intensity)
    iclass = np.searchsorted(edges, rng.random(n_slots), side="right").astype(np.int8)
    iclass = np.minimum(iclass, 2)  # guard against roundoff at the top edge
    alpha = rng.random(n_slots) * TWO_PI

    if symbol_stream is not None:
        for i in np.nonzero(~is_ref)[0]:
            b, v, k = next(symbol_stream)
            basis[i] = int(b)
            bit[i] = int(v)
            iclass[i] = int(k)

    basis[is_ref] = -1
    bit[is_ref] = -1
    iclass[is_ref] = int(Intensity.REFERENCE)

    delta_phi = np.zeros(n_slots)
    data = ~is_ref
    delta_phi[data] = _DPHI_TABLE[(basis[data].astype(np.intp) << 1) | bit[data].astype(np.intp)]
    mean_total = params.intensity_values()[iclass.astype(np.intp)]

    return PulseTrain(
        params=params,
        slot=slots,
        basis=basis,
        bit=bit,
        iclass=iclass,
        mean_total=mean_total,
        alpha=alpha,
        delta_phi=delta_phi,
    )


def build_frame(
    symbol_stream: Optional[Iterator[tuple[Basis, int, Intensity]]],
    params: ProtocolParams,
    rng: np.random.Generator,
    frame_index: int = 0,
) -> list[DoublePulse]:
    """Emit one frame of double pulses (references interleaved per layout)."""
    train = generate_train(
        params,
        rng,
        params.frame_len,
        start_slot=frame_index * params.frame_len,
        symbol_stream=symbol_stream,
    )
    return train.pulses()


def randomness_budget(
    params: ProtocolParams,
    pass_duration: float,
    qrng_rate: float,
    bits_per_symbol: float = 4.0,
    phase_bits: float = 0.0,
) -> RandomnessBudget:
    """Random bits consumed over a pass and the time to refill the buffer.

    The default 4 bits per symbol count 1 key bit, 1 basis bit and 2 bits
    for the three-way intensity choice; bits for phase randomization are
    extra and excluded unless ``phase_bits`` is set.
    """
    if pass_duration < 0:
        raise ValueError("pass_duration must be >= 0")
    if qrng_rate <= 0:
        raise ValueError("qrng_rate must be > 0")
    total_per_symbol = bits_per_symbol + phase_bits
    pass_bits = effective_symbol_rate(params) * pass_duration * total_per_symbol
    return RandomnessBudget(
        bits_per_symbol=total_per_symbol,
        pass_duration=pass_duration,
        pass_bits=pass_bits,
        buffer_bytes=pass_bits / 8.0,
        fill_time_at_qrng=pass_bits / qrng_rate,
    )
