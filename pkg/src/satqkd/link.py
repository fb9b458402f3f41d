"""Free-space channel model for one satellite pass.

Spherical-Earth slant-range geometry, far-field diffraction loss of a
Gaussian beam between two apertures, an airmass-scaled atmospheric term and
a lumped system loss.  The output is a time series of end-to-end channel
transmittance plus a background photon rate at the receiver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

EARTH_RADIUS = 6.371e6            # m, mean spherical Earth
GM_EARTH = 3.986004418e14         # m^3/s^2


@dataclass(frozen=True)
class PassGeometry:
    """Circular-orbit overhead-pass geometry, parameterized by culmination."""

    altitude: float = 500e3
    max_elevation: float = math.pi / 2.0
    earth_radius: float = EARTH_RADIUS
    time_step: float = 1.0
    min_elevation: float = math.radians(10.0)

    def __post_init__(self):
        if self.altitude <= 0:
            raise ValueError("altitude must be > 0")
        if not 0.0 < self.min_elevation <= math.pi / 2.0:
            raise ValueError("min_elevation must lie in (0, pi/2]")
        if not self.max_elevation <= math.pi / 2.0:
            raise ValueError("max_elevation must be <= pi/2")
        if self.time_step <= 0:
            raise ValueError("time_step must be > 0")


@dataclass(frozen=True)
class LinkBudget:
    """Apertures and loss terms of the optical down-link.

    ``sys_loss_db`` lumps transmitter/receiver optics and pointing losses;
    detector efficiency is *not* included here (it belongs to the detector
    model).  Defaults are tuned so a zenith pass at 500 km spans roughly a
    40 dB (culmination) to 60 dB (10 deg cutoff) channel-loss envelope.
    ``background_rate`` is the night-sky background photon rate reaching
    each detector.
    """

    d_tx: float = 0.080
    d_rx: float = 0.80
    wavelength: float = 1565.5e-9
    sys_loss_db: float = 17.20
    atm_loss_zenith_db: float = 1.95
    background_rate: float = 1000.0

    def __post_init__(self):
        if self.d_tx <= 0 or self.d_rx <= 0:
            raise ValueError("apertures must be > 0")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be > 0")
        if self.sys_loss_db < 0 or self.atm_loss_zenith_db < 0:
            raise ValueError("dB losses must be >= 0")
        if self.background_rate < 0:
            raise ValueError("background_rate must be >= 0")


@dataclass(frozen=True)
class LossProfile:
    """Channel transmittance samples over one pass, time-ordered."""

    t: np.ndarray              # s, from acquisition of signal
    elevation: np.ndarray      # rad
    range_m: np.ndarray        # m
    loss_db: np.ndarray
    transmittance: np.ndarray
    background_rate: float = 0.0

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if self.n else 0.0

    def transmittance_at(self, times) -> np.ndarray:
        """Stair-step lookup of the nearest-in-time sample.

        Raises ValueError for times outside the sampled span (half a step
        of slack is allowed at both ends).
        """
        times = np.asarray(times, dtype=float)
        if self.n == 0:
            raise ValueError("empty loss profile")
        step = self.t[1] - self.t[0] if self.n > 1 else np.inf
        lo, hi = self.t[0] - 0.5 * step, self.t[-1] + 0.5 * step
        if times.size and (times.min() < lo or times.max() > hi):
            raise ValueError("requested time outside the loss profile span")
        idx = np.clip(np.searchsorted(self.t, times), 0, self.n - 1)
        idx_prev = np.clip(idx - 1, 0, self.n - 1)
        use_prev = np.abs(times - self.t[idx_prev]) <= np.abs(self.t[idx] - times)
        idx = np.where(use_prev, idx_prev, idx)
        return self.transmittance[idx]

    def write_csv(self, fh: IO[str]) -> None:
        fh.write("t_s,elevation_deg,range_km,loss_db,transmittance\n")
        for i in range(self.n):
            fh.write(
                "%.6g,%.6g,%.6g,%.6g,%.6g\n"
                % (
                    self.t[i],
                    math.degrees(self.elevation[i]),
                    self.range_m[i] / 1e3,
                    self.loss_db[i],
                    self.transmittance[i],
                )
            )


def db_to_transmittance(loss_db):
    return 10.0 ** (-np.asarray(loss_db, dtype=float) / 10.0)


def transmittance_to_db(transmittance):
    return -10.0 * np.log10(np.asarray(transmittance, dtype=float))


def slant_range(elevation: float, geometry: PassGeometry) -> float:
    """Ground-station to satellite distance at a given elevation angle."""
    if not 0.0 <= elevation <= math.pi / 2.0:
        raise ValueError("elevation must lie in [0, pi/2]")
    re = geometry.earth_radius
    h = geometry.altitude
    return math.sqrt((re + h) ** 2 - (re * math.cos(elevation)) ** 2) - re * math.sin(elevation)


def diffraction_loss_db(range_m: float, budget: LinkBudget) -> float:
    """Geometric coupling loss between the two apertures in the far field.

    Gaussian beam with 1/e^2 half-angle divergence 2*lambda/(pi*d_tx); the
    received fraction is the beam power inside the receive aperture.
    """
    near_field = budget.d_tx**2 / budget.wavelength
    if range_m <= near_field:
        raise ValueError(
            f"range {range_m:.3g} m is inside the near field (< {near_field:.3g} m)"
        )
    theta = 2.0 * budget.wavelength / (math.pi * budget.d_tx)
    w = theta * range_m
    collected = -math.expm1(-2.0 * (budget.d_rx / 2.0) ** 2 / w**2)
    return -10.0 * math.log10(collected)


def atmospheric_loss_db(elevation: float, budget: LinkBudget) -> float:
    """Zenith absorption scaled by the flat-Earth airmass 1/sin(elevation)."""
    return budget.atm_loss_zenith_db / math.sin(elevation)


def channel_loss_db(elevation: float, geometry: PassGeometry, budget: LinkBudget) -> float:
    r = slant_range(elevation, geometry)
    return diffraction_loss_db(r, budget) + atmospheric_loss_db(elevation, budget) + budget.sys_loss_db


def central_angle(elevation: float, geometry: PassGeometry) -> float:
    """Earth central angle between ground station and sub-satellite point."""
    re = geometry.earth_radius
    h = geometry.altitude
    return math.acos(re * math.cos(elevation) / (re + h)) - elevation


def elevation_from_angle(gamma: float, geometry: PassGeometry) -> tuple[float, float]:
    """Elevation and slant range for a given Earth central angle."""
    re = geometry.earth_radius
    h = geometry.altitude
    r = math.sqrt(re**2 + (re + h) ** 2 - 2.0 * re * (re + h) * math.cos(gamma))
    el = math.asin(((re + h) * math.cos(gamma) - re) / r)
    return el, r


def orbital_rate(geometry: PassGeometry) -> float:
    """Angular rate of a circular orbit at the configured altitude."""
    return math.sqrt(GM_EARTH / (geometry.earth_radius + geometry.altitude) ** 3)


def pass_duration(geometry: PassGeometry) -> float:
    """Time above min_elevation for the configured pass."""
    if geometry.max_elevation < geometry.min_elevation:
        return 0.0
    beta = central_angle(geometry.max_elevation, geometry)   # cross-track offset
    g_max = central_angle(geometry.min_elevation, geometry)
    # cos(gamma) = cos(beta) * cos(s) along track
    cos_s = math.cos(g_max) / math.cos(beta)
    cos_s = min(1.0, max(-1.0, cos_s))
    s_max = math.acos(cos_s)
    return 2.0 * s_max / orbital_rate(geometry)


def pass_profile(geometry: PassGeometry, budget: LinkBudget) -> LossProfile:
    """Sample the channel loss over the pass at the configured time step.

    The satellite moves on a circular great-circle track whose cross-track
    offset is set by the culmination elevation; the profile is clipped to
    elevations at or above ``min_elevation`` and starts at t = 0.
    """
    duration = pass_duration(geometry)
    if duration == 0.0:
        empty = np.array([])
        return LossProfile(empty, empty, empty, empty, empty, budget.background_rate)

    beta = central_angle(geometry.max_elevation, geometry)
    omega = orbital_rate(geometry)
    t_culm = duration / 2.0
    times = np.arange(0.0, duration + 1e-9, geometry.time_step)

    elev = np.empty_like(times)
    rng_m = np.empty_like(times)
    loss = np.empty_like(times)
    for i, t in enumerate(times):
        s = omega * (t - t_culm)
        gamma = math.acos(math.cos(beta) * math.cos(s))
        el, r = elevation_from_angle(gamma, geometry)
        elev[i] = el
        rng_m[i] = r
        loss[i] = (
            diffraction_loss_db(r, budget)
            + atmospheric_loss_db(el, budget)
            + budget.sys_loss_db
        )

    keep = elev >= geometry.min_elevation - 1e-12
    return LossProfile(
        t=times[keep] - times[keep][0] if keep.any() else np.array([]),
        elevation=elev[keep],
        range_m=rng_m[keep],
        loss_db=loss[keep],
        transmittance=db_to_transmittance(loss[keep]),
        background_rate=budget.background_rate,
    )
