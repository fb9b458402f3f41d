import io
import math

import numpy as np
import pytest

from satqkd.link import (
    LinkBudget,
    PassGeometry,
    atmospheric_loss_db,
    channel_loss_db,
    db_to_transmittance,
    diffraction_loss_db,
    pass_duration,
    pass_profile,
    slant_range,
    transmittance_to_db,
)


class TestSlantRange:
    def test_zenith_equals_altitude(self):
        geo = PassGeometry(altitude=500e3)
        assert slant_range(math.pi / 2.0, geo) == pytest.approx(500e3, rel=1e-12)

    def test_thirty_degrees(self):
        # closed form evaluated independently: 909.425 km
        geo = PassGeometry(altitude=500e3)
        assert slant_range(math.radians(30.0), geo) == pytest.approx(909424.938, abs=1.0)

    def test_horizon(self):
        geo = PassGeometry(altitude=500e3)
        assert slant_range(0.0, geo) == pytest.approx(2573130.39, abs=1.0)

    def test_rejects_bad_elevation(self):
        geo = PassGeometry()
        with pytest.raises(ValueError):
            slant_range(-0.1, geo)
        with pytest.raises(ValueError):
            slant_range(math.pi, geo)


class TestDiffraction:
    def test_doubling_range_adds_six_db(self):
        # deep far field: beam much wider than the receive aperture
        budget = LinkBudget()
        theta = 2.0 * budget.wavelength / (math.pi * budget.d_tx)
        for r in (700e3, 909e3, 2000e3):
            assert theta * r / budget.d_rx > 10
            delta = diffraction_loss_db(2 * r, budget) - diffraction_loss_db(r, budget)
            assert abs(delta - 6.02) < 0.05

    def test_reference_geometry_loss(self):
        budget = LinkBudget()
        assert diffraction_loss_db(909e3, budget) == pytest.approx(26.0, abs=0.1)

    def test_all_power_collected_in_near_limit(self):
        # huge receive aperture swallows the whole beam
        budget = LinkBudget(d_rx=500.0)
        assert diffraction_loss_db(10e3, budget) == pytest.approx(0.0, abs=1e-6)

    def test_near_field_rejected(self):
        budget = LinkBudget()
        with pytest.raises(ValueError):
            diffraction_loss_db(1e3, budget)

    def test_far_field_matches_quadratic_approximation(self):
        # for w/d_rx > 10 the finite-aperture fraction is within 1% of
        # the quadratic 2*(d_rx/2)^2/w^2
        budget = LinkBudget()
        theta = 2.0 * budget.wavelength / (math.pi * budget.d_tx)
        for r in (700e3, 1000e3, 3000e3):
            w = theta * r
            assert w / budget.d_rx > 10
            exact = db_to_transmittance(diffraction_loss_db(r, budget))
            approx = 2.0 * (budget.d_rx / 2.0) ** 2 / w**2
            assert abs(exact - approx) / approx < 0.01


class TestDbHelpers:
    def test_round_trip(self):
        for loss in (0.0, 3.0, 40.0, 60.0):
            assert transmittance_to_db(db_to_transmittance(loss)) == pytest.approx(
                loss, rel=1e-9, abs=1e-12
            )


class TestPassProfile:
    def test_default_envelope_spans_forty_to_sixty_db(self):
        profile = pass_profile(PassGeometry(), LinkBudget())
        assert profile.n > 0
        assert profile.loss_db.min() >= 40.0 - 1e-9
        assert profile.loss_db.max() <= 60.0
        assert profile.loss_db.min() == pytest.approx(40.0, abs=0.05)
        assert profile.loss_db.max() == pytest.approx(59.9, abs=0.2)

    def test_additive_system_loss_offset(self):
        base = pass_profile(PassGeometry(), LinkBudget())
        bumped = pass_profile(PassGeometry(), LinkBudget(sys_loss_db=27.20))
        assert np.allclose(bumped.loss_db - base.loss_db, 10.0, atol=1e-9)

    def test_symmetry_about_culmination(self):
        geo = PassGeometry(time_step=0.5)
        profile = pass_profile(geo, LinkBudget())
        # evaluate the underlying loss at mirrored times via the grid
        loss = profile.loss_db
        assert np.allclose(loss, loss[::-1], atol=1e-6)

    def test_loss_monotone_in_elevation(self):
        profile = pass_profile(PassGeometry(), LinkBudget())
        order = np.argsort(profile.elevation)
        sorted_loss = profile.loss_db[order]
        assert np.all(np.diff(sorted_loss) <= 1e-9)

    def test_transmittance_consistent_with_loss(self):
        profile = pass_profile(PassGeometry(), LinkBudget())
        assert np.allclose(
            transmittance_to_db(profile.transmittance), profile.loss_db, rtol=1e-9
        )

    def test_empty_when_culmination_below_cutoff(self):
        geo = PassGeometry(max_elevation=math.radians(5.0))
        profile = pass_profile(geo, LinkBudget())
        assert profile.n == 0

    def test_duration_matches_grid(self):
        geo = PassGeometry()
        profile = pass_profile(geo, LinkBudget())
        assert profile.t[-1] <= pass_duration(geo) <= profile.t[-1] + geo.time_step

    def test_lower_culmination_pass_is_lossier(self):
        high = pass_profile(PassGeometry(), LinkBudget())
        low = pass_profile(PassGeometry(max_elevation=math.radians(30.0)), LinkBudget())
        assert low.loss_db.min() > high.loss_db.min()

    def test_transmittance_lookup_and_span_rejection(self):
        profile = pass_profile(PassGeometry(), LinkBudget())
        mid = float(profile.t[profile.n // 2])
        assert profile.transmittance_at([mid])[0] == profile.transmittance[profile.n // 2]
        with pytest.raises(ValueError):
            profile.transmittance_at([profile.t[-1] + 10.0])

    def test_csv_format(self):
        profile = pass_profile(PassGeometry(time_step=100.0), LinkBudget())
        buf = io.StringIO()
        profile.write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "t_s,elevation_deg,range_km,loss_db,transmittance"
        assert len(lines) == profile.n + 1
        first = lines[1].split(",")
        assert len(first) == 5
        assert float(first[0]) == 0.0


class TestAtmosphere:
    def test_airmass_scaling(self):
        budget = LinkBudget(atm_loss_zenith_db=2.0)
        assert atmospheric_loss_db(math.pi / 2.0, budget) == pytest.approx(2.0)
        assert atmospheric_loss_db(math.radians(30.0), budget) == pytest.approx(4.0)

    def test_channel_loss_composition(self):
        geo = PassGeometry()
        budget = LinkBudget()
        el = math.radians(45.0)
        total = channel_loss_db(el, geo, budget)
        parts = (
            diffraction_loss_db(slant_range(el, geo), budget)
            + atmospheric_loss_db(el, budget)
            + budget.sys_loss_db
        )
        assert total == pytest.approx(parts, rel=1e-12)
