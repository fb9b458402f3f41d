"""Scenario files: a YAML document with one section per subsystem.

Every key is optional and falls back to the documented default; unknown
sections or keys are rejected.  The resolved configuration, including which
values were defaulted, is echoed into the run summary.  Exponent-style
numbers should be written with a decimal point (``400.0e-12``); bare
``400e-12`` is parsed as a string by YAML 1.1 and coerced here with a
warning-free fallback.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .link import LinkBudget, PassGeometry
from .protocol import ProtocolParams
from .receiver import DetectorConfig, ReceiverConfig
from .sync import ClockModel

DEFAULT_SCENARIO_NAME = "leo_pass_defaults.yaml"


class ParseError(ValueError):
    """Scenario file could not be parsed as structured YAML."""


class ValidationError(ValueError):
    """Scenario contents violate a documented invariant."""


def _as_float(name: str, value: Any) -> float:
    if isinstance(value, bool):
        raise ValidationError(f"{name}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
    raise ValidationError(f"{name}: expected a number, got {value!r}")


def _as_int(name: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{name}: expected an integer, got {value!r}")
    return value


def _as_float_list(name: str, value: Any) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)):
        raise ValidationError(f"{name}: expected a list of numbers")
    return tuple(_as_float(f"{name}[{i}]", v) for i, v in enumerate(value))


def _as_int_list(name: str, value: Any) -> tuple[int, ...]:
    if not isinstance(value, (list, tuple)):
        raise ValidationError(f"{name}: expected a list of integers")
    return tuple(_as_int(f"{name}[{i}]", v) for i, v in enumerate(value))


def _as_str(name: str, value: Any) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"{name}: expected a string, got {value!r}")
    return value


_SCHEMA: dict[str, dict[str, Any]] = {
    "protocol": {
        "symbol_period": _as_float,
        "pulse_width": _as_float,
        "pulse_spacing": _as_float,
        "wavelength_q": _as_float,
        "wavelength_down": _as_float,
        "wavelength_up": _as_float,
        "mu_signal": _as_float,
        "nu_decoy": _as_float,
        "p_intensity": _as_float_list,
        "p_basis_z": _as_float,
        "frame_len": _as_int,
        "ref_slots": _as_int_list,
        "ref_gain_db": _as_float,
    },
    "geometry": {
        "altitude": _as_float,
        "max_elevation_deg": _as_float,
        "min_elevation_deg": _as_float,
        "time_step": _as_float,
    },
    "link": {
        "tx_aperture": _as_float,
        "rx_aperture": _as_float,
        "wavelength": _as_float,
        "sys_loss_db": _as_float,
        "atm_loss_zenith_db": _as_float,
        "background_rate": _as_float,
    },
    "receiver": {
        "visibility": _as_float,
        "insertion_loss_db": _as_float,
        "efficiency": _as_float,
        "dark_rate": _as_float,
        "time_bin_width": _as_float,
        "dead_time": _as_float,
    },
    "clock": {
        "offset": _as_float,
        "drift_ppm": _as_float,
    },
    "run": {
        "mode": _as_str,
        "seed": _as_int,
        "symbols_limit": _as_int,
        "output_dir": _as_str,
        "f_ec": _as_float,
        "q_sift": _as_float,
        "announce_bits": _as_int,
        "reveal_bits": _as_int,
        "control_overhead_mbps": _as_float,
        "qrng_rate": _as_float,
        "bits_per_symbol": _as_float,
        "clicks_cap": _as_int,
    },
}


@dataclass(frozen=True)
class RunOptions:
    mode: str = "analytic"
    seed: Optional[int] = None
    symbols_limit: int = 10_000_000
    output_dir: Optional[str] = None
    f_ec: float = 1.16
    q_sift: float = 0.5
    announce_bits: int = 64
    reveal_bits: int = 8
    control_overhead_mbps: float = 0.0
    qrng_rate: float = 40e6
    bits_per_symbol: float = 4.0
    clicks_cap: int = 200_000


@dataclass(frozen=True)
class Scenario:
    protocol: ProtocolParams
    geometry: PassGeometry
    budget: LinkBudget
    receiver: ReceiverConfig
    clock: ClockModel
    run: RunOptions
    provided_keys: tuple[str, ...] = ()
    defaulted_keys: tuple[str, ...] = ()
    source: Optional[str] = None

    def echo(self) -> dict[str, dict[str, Any]]:
        """Resolved configuration values, section by section."""
        p, g, b = self.protocol, self.geometry, self.budget
        det = self.receiver.detector
        return {
            "protocol": {
                "symbol_period": p.symbol_period,
                "pulse_width": p.pulse_width,
                "pulse_spacing": p.pulse_spacing,
                "wavelength_q": p.wavelength_q,
                "wavelength_down": p.wavelength_down,
                "wavelength_up": p.wavelength_up,
                "mu_signal": p.mu_signal,
                "nu_decoy": p.nu_decoy,
                "p_intensity": list(p.p_intensity),
                "p_basis_z": p.p_basis_z,
                "frame_len": p.frame_len,
                "ref_slots": list(p.ref_slots),
                "ref_gain_db": p.ref_gain_db,
                "duty_cycle": p.duty_cycle,
            },
            "geometry": {
                "altitude": g.altitude,
                "max_elevation_deg": math.degrees(g.max_elevation),
                "min_elevation_deg": math.degrees(g.min_elevation),
                "time_step": g.time_step,
            },
            "link": {
                "tx_aperture": b.d_tx,
                "rx_aperture": b.d_rx,
                "wavelength": b.wavelength,
                "sys_loss_db": b.sys_loss_db,
                "atm_loss_zenith_db": b.atm_loss_zenith_db,
                "background_rate": b.background_rate,
            },
            "receiver": {
                "visibility": self.receiver.dli_z.visibility,
                "insertion_loss_db": self.receiver.dli_z.insertion_loss_db,
                "efficiency": det.efficiency,
                "dark_rate": det.dark_rate,
                "time_bin_width": det.time_bin_width,
                "dead_time": det.dead_time,
            },
            "clock": {
                "offset": self.clock.offset,
                "drift_ppm": self.clock.drift / 1e-6,
            },
            "run": {
                "mode": self.run.mode,
                "seed": self.run.seed,
                "symbols_limit": self.run.symbols_limit,
                "f_ec": self.run.f_ec,
                "q_sift": self.run.q_sift,
                "announce_bits": self.run.announce_bits,
                "reveal_bits": self.run.reveal_bits,
                "control_overhead_mbps": self.run.control_overhead_mbps,
                "qrng_rate": self.run.qrng_rate,
                "bits_per_symbol": self.run.bits_per_symbol,
                "clicks_cap": self.run.clicks_cap,
            },
        }


def default_scenario_path() -> Path:
    """Path of the bundled baseline pass scenario."""
    return Path(resources.files("satqkd") / "scenarios" / DEFAULT_SCENARIO_NAME)


def _parse_sections(path: Union[str, Path]) -> dict[str, dict[str, Any]]:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}" if mark is not None else "unknown location"
        raise ParseError(f"{path}: {where}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if raw is None:
        raise ParseError(f"{path}: scenario file is empty")
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: scenario must be a mapping of sections")

    out: dict[str, dict[str, Any]] = {}
    for section, content in raw.items():
        if section not in _SCHEMA:
            raise ValidationError(f"unknown section {section!r}")
        if content is None:
            content = {}
        if not isinstance(content, dict):
            raise ValidationError(f"section {section!r} must be a mapping")
        known = _SCHEMA[section]
        parsed = {}
        for key, value in content.items():
            if key not in known:
                raise ValidationError(f"unknown key {section}.{key}")
            parsed[key] = known[key](f"{section}.{key}", value)
        out[section] = parsed
    return out


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Load and fully validate a scenario file, applying defaults."""
    sections = _parse_sections(path)
    provided = tuple(
        f"{s}.{k}" for s in sections for k in sections[s]
    )
    defaulted = tuple(
        f"{s}.{k}"
        for s in _SCHEMA
        for k in _SCHEMA[s]
        if f"{s}.{k}" not in provided
    )

    def section(name: str) -> dict[str, Any]:
        return sections.get(name, {})

    try:
        protocol_kw = dict(section("protocol"))
        protocol = ProtocolParams(**protocol_kw)

        geo = section("geometry")
        geometry = PassGeometry(
            altitude=geo.get("altitude", 500e3),
            max_elevation=math.radians(geo.get("max_elevation_deg", 90.0)),
            min_elevation=math.radians(geo.get("min_elevation_deg", 10.0)),
            time_step=geo.get("time_step", 1.0),
        )

        lnk = section("link")
        budget = LinkBudget(
            d_tx=lnk.get("tx_aperture", 0.080),
            d_rx=lnk.get("rx_aperture", 0.80),
            wavelength=lnk.get("wavelength", protocol.wavelength_q),
            sys_loss_db=lnk.get("sys_loss_db", 17.20),
            atm_loss_zenith_db=lnk.get("atm_loss_zenith_db", 1.95),
            background_rate=lnk.get("background_rate", 1000.0),
        )

        rcv = section("receiver")
        receiver = ReceiverConfig.default(
            protocol,
            visibility=rcv.get("visibility", 0.98),
            insertion_loss_db=rcv.get("insertion_loss_db", 2.0),
            detector=DetectorConfig(
                efficiency=rcv.get("efficiency", 0.8),
                dark_rate=rcv.get("dark_rate", 100.0),
                time_bin_width=rcv.get("time_bin_width", protocol.pulse_width),
                dead_time=rcv.get("dead_time", 50e-9),
            ),
        )
        receiver.validate(protocol)

        clk = section("clock")
        clock = ClockModel(
            offset=clk.get("offset", 0.0),
            drift=clk.get("drift_ppm", 0.0) * 1e-6,
        )

        run_kw = dict(section("run"))
        run = RunOptions(**run_kw)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(str(exc)) from exc

    if run.mode not in ("analytic", "mc"):
        raise ValidationError("run.mode must be 'analytic' or 'mc'")
    if run.mode == "mc" and run.seed is None:
        raise ValidationError("run.seed is required in Monte Carlo mode")
    if run.symbols_limit < protocol.frame_len:
        raise ValidationError("run.symbols_limit must cover at least one frame")
    if abs(clock.offset) > protocol.frame_period / 2.0:
        raise ValidationError(
            "clock.offset must lie within half a frame period; larger offsets "
            "are indistinguishable modulo the frame"
        )

    return Scenario(
        protocol=protocol,
        geometry=geometry,
        budget=budget,
        receiver=receiver,
        clock=clock,
        run=run,
        provided_keys=provided,
        defaulted_keys=defaulted,
        source=str(path),
    )
