import math

import numpy as np
import pytest

from satqkd.protocol import (
    PHASE_MAP,
    Basis,
    Intensity,
    ProtocolParams,
    build_frame,
    double_pulse,
    effective_symbol_rate,
    encode_symbol,
    generate_train,
    randomness_budget,
)

TWO_PI = 2.0 * math.pi


class TestPhaseEncoding:
    def test_four_state_map_is_a_bijection(self):
        assert set(PHASE_MAP.values()) == {0.0, math.pi, math.pi / 2.0, 3.0 * math.pi / 2.0}
        assert len(PHASE_MAP) == 4

    @pytest.mark.parametrize(
        "basis,bit,alpha,expected",
        [
            (Basis.BZ, 0, 0.0, 0.0),
            (Basis.BX, 1, 1.3, 3.0 * math.pi / 2.0),
            (Basis.BZ, 1, math.pi, math.pi),
        ],
    )
    def test_encode_examples(self, params, basis, bit, alpha, expected):
        sym = encode_symbol(basis, bit, Intensity.SIGNAL, alpha, params)
        assert sym.delta_phi == expected
        assert sym.alpha == alpha
        assert sym.intensity == Intensity.SIGNAL

    def test_pulse_phases_wrap_modulo_two_pi(self, params):
        sym = encode_symbol(Basis.BZ, 1, Intensity.SIGNAL, math.pi, params)
        pulse = double_pulse(sym, params)
        assert pulse.phase_first == math.pi
        assert pulse.phase_second == pytest.approx(0.0, abs=1e-12)
        diff = (pulse.phase_second - pulse.phase_first) % TWO_PI
        assert diff == pytest.approx(sym.delta_phi % TWO_PI, abs=1e-12)

    def test_encode_rejects_alpha_outside_range(self, params):
        with pytest.raises(ValueError):
            encode_symbol(Basis.BZ, 0, Intensity.SIGNAL, TWO_PI, params)
        with pytest.raises(ValueError):
            encode_symbol(Basis.BZ, 0, Intensity.SIGNAL, -0.1, params)

    def test_encode_rejects_reference_class(self, params):
        with pytest.raises(ValueError):
            encode_symbol(Basis.BZ, 0, Intensity.REFERENCE, 0.0, params)

    def test_intensity_split_between_pulses(self, params):
        sym = encode_symbol(Basis.BX, 0, Intensity.DECOY, 0.5, params)
        pulse = double_pulse(sym, params)
        assert pulse.amp2_first == pulse.amp2_second
        assert pulse.amp2_first + pulse.amp2_second == params.nu_decoy


class TestParams:
    def test_defaults_are_consistent(self, params):
        assert params.duty_cycle == 0.1
        assert params.reference_intensity == params.mu_signal * 1e4
        assert params.frame_period == pytest.approx(40e-9)

    def test_mean_photon_number_cap(self):
        with pytest.raises(ValueError, match="mean photon number must be < 1"):
            ProtocolParams(mu_signal=1.5)

    def test_decoy_below_signal(self):
        with pytest.raises(ValueError):
            ProtocolParams(nu_decoy=0.6)

    def test_ref_slots_must_fit_frame(self):
        with pytest.raises(ValueError):
            ProtocolParams(frame_len=5, ref_slots=(0, 5))
        with pytest.raises(ValueError):
            ProtocolParams(frame_len=10, ref_slots=tuple(range(10)))

    def test_timing_order_enforced(self):
        with pytest.raises(ValueError):
            ProtocolParams(pulse_spacing=500e-12)

    def test_intensity_probabilities_sum(self):
        with pytest.raises(ValueError):
            ProtocolParams(p_intensity=(0.5, 0.2, 0.2))


class TestEffectiveRate:
    def test_defaults_give_exact_rate(self, params):
        assert effective_symbol_rate(params) == 2.25e9

    def test_no_references_gives_raw_rate(self):
        p = ProtocolParams(frame_len=1, ref_slots=())
        assert effective_symbol_rate(p) == 2.5e9

    def test_linear_scaling_with_duty_cycle(self):
        p = ProtocolParams(frame_len=2, ref_slots=(0,))
        assert effective_symbol_rate(p) == 1.25e9


class TestFrames:
    def test_one_frame_layout(self, params, rng):
        pulses = build_frame(None, params, rng)
        assert len(pulses) == params.frame_len
        totals = np.array([p.amp2_first + p.amp2_second for p in pulses])
        n_ref = int((totals == params.reference_intensity).sum())
        assert n_ref == len(params.ref_slots)
        assert n_ref / params.frame_len == params.duty_cycle

    def test_timestamps_pitch_and_pair_spacing(self, params, rng):
        pulses = build_frame(None, params, rng, frame_index=3)
        t0 = np.array([p.t0 for p in pulses])
        assert np.all(np.diff(t0) > 0)
        assert np.allclose(np.diff(t0), params.symbol_period, rtol=1e-12)
        assert t0[0] == pytest.approx(3 * params.frame_len * params.symbol_period)

    def test_explicit_symbol_stream_is_consumed(self, params, rng):
        stream = iter([(Basis.BZ, 0, Intensity.SIGNAL)] * 90)
        train = generate_train(params, rng, params.frame_len, symbol_stream=stream)
        data = ~train.is_reference
        assert int(data.sum()) == 90
        assert np.all(train.basis[data] == int(Basis.BZ))
        assert np.all(train.bit[data] == 0)
        assert np.all(train.delta_phi[data] == 0.0)

    def test_seeded_generation_is_reproducible(self, params):
        a = generate_train(params, np.random.default_rng(99), 5000)
        b = generate_train(params, np.random.default_rng(99), 5000)
        for field in ("slot", "basis", "bit", "iclass", "alpha", "delta_phi"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_reference_slots_carry_no_key_semantics(self, params, rng):
        train = generate_train(params, rng, 1000)
        refs = train.is_reference
        assert np.all(train.basis[refs] == -1)
        assert np.all(train.bit[refs] == -1)
        assert np.all(train.mean_total[refs] == params.reference_intensity)

    def test_duty_cycle_exact_per_frame(self, params, rng):
        train = generate_train(params, rng, 50 * params.frame_len)
        assert int(train.is_reference.sum()) == 50 * len(params.ref_slots)

    def test_empirical_intensity_frequencies(self, params):
        # 10^6 frames in chunks; counts within 3-sigma binomial bands.
        rng = np.random.default_rng(2024)
        n_frames = 1_000_000
        chunk = 100_000 * params.frame_len
        counts = np.zeros(3, dtype=np.int64)
        n_data = 0
        for start in range(0, n_frames * params.frame_len, chunk):
            train = generate_train(params, rng, chunk, start_slot=start)
            data = ~train.is_reference
            n_data += int(data.sum())
            counts += np.bincount(train.iclass[data], minlength=3)[:3]
        for k, p in enumerate(params.p_intensity):
            sigma = math.sqrt(n_data * p * (1 - p))
            assert abs(counts[k] - n_data * p) < 3 * sigma

    def test_basis_and_bit_frequencies(self, params):
        rng = np.random.default_rng(7)
        train = generate_train(params, rng, 200_000)
        data = ~train.is_reference
        n = int(data.sum())
        for arr, p in ((train.basis[data] == 0, params.p_basis_z), (train.bit[data] == 1, 0.5)):
            sigma = math.sqrt(n * p * (1 - p))
            assert abs(int(arr.sum()) - n * p) < 3 * sigma


class TestRandomnessBudget:
    def test_pass_accounting_is_exact(self, params):
        budget = randomness_budget(params, 300.0, 40e6)
        assert budget.pass_bits == 2.25e9 * 300.0 * 4.0 == 2.7e12
        assert budget.buffer_bytes == 3.375e11  # 337.5 GB, below a 1 TB buffer
        assert budget.buffer_bytes < 1e12
        assert budget.fill_time_at_qrng == 67_500.0
        assert budget.fill_time_at_qrng / 3600.0 == 18.75

    def test_zero_duration(self, params):
        budget = randomness_budget(params, 0.0, 40e6)
        assert budget.pass_bits == 0.0
        assert budget.fill_time_at_qrng == 0.0

    def test_phase_bits_are_extra(self, params):
        base = randomness_budget(params, 10.0, 1e6)
        extra = randomness_budget(params, 10.0, 1e6, phase_bits=8.0)
        assert extra.bits_per_symbol == 12.0
        assert extra.pass_bits == 3.0 * base.pass_bits

    def test_invalid_inputs(self, params):
        with pytest.raises(ValueError):
            randomness_budget(params, -1.0, 1e6)
        with pytest.raises(ValueError):
            randomness_budget(params, 1.0, 0.0)
