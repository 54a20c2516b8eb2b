"""Scenario configuration: JSON schema, strict validation, fingerprinting.

The on-disk schema is versioned JSON with wavelength inputs in nm (converted
once at the boundary).  Unknown keys are errors, not warnings; a typo in a
physics parameter must not silently revert to a default.  Validation
collects every violation instead of failing on the first.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .channel import (ChannelSpec, DispersionModel, GratingSpec, Target,
                      diffraction_angle, validate_scene)
from .detect import DetectorSpec
from .source import EmissionRates, PhaseMatchModel, PumpSpec, SpectralBand

SCHEMA_VERSION = 1

CONFIG_LABELS = (
    "probe:on|noise:on",
    "probe:off|noise:on",
    "probe:on|noise:off",
    "probe:off|noise:off",
)


class ScenarioError(ValueError):
    """Scenario failed validation; .violations lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one simulated experiment."""

    pump: PumpSpec
    rates: EmissionRates
    phase_match: PhaseMatchModel
    herald_band: SpectralBand
    probe_band: SpectralBand
    dispersion: DispersionModel
    grating: GratingSpec
    scene: tuple
    channels: ChannelSpec
    detectors: dict
    duration_s: float
    seed: int
    configurations: tuple = ("probe:on|noise:on",)
    ref_divider: int = 1
    description: str = ""

    @property
    def n_pulses(self) -> int:
        return int(round(self.duration_s * self.pump.repetition_rate_mhz * 1e6))

    @property
    def duration_ps(self) -> float:
        return self.duration_s * 1e12

    def validate(self) -> list:
        """Every cross-field invariant; returns the list of violations."""
        problems = []
        if self.duration_s < 0:
            problems.append("duration must be non-negative")
        if not 0 <= self.seed < 2 ** 64:
            problems.append("seed must fit in 64 bits")
        if self.ref_divider < 1:
            problems.append("ref_divider must be >= 1")
        if self.herald_band.overlaps(self.probe_band):
            problems.append("herald and probe bands overlap")
        for label in self.configurations:
            if label not in CONFIG_LABELS:
                problems.append(f"unknown configuration label {label!r}")
        for key in ("ref", "herald", "probe"):
            if key not in self.detectors:
                problems.append(f"missing detector spec for channel {key!r}")
        if not self.channels.loopback:
            problems.extend(validate_scene(self.scene, self.grating))
            for band_edge in (self.probe_band.lo_nm, self.probe_band.hi_nm):
                try:
                    diffraction_angle(band_edge, self.grating)
                except ValueError as exc:
                    problems.append(str(exc))
        try:
            self.dispersion.arrival_shift_ps(self.herald_band.lo_nm)
            self.dispersion.arrival_shift_ps(self.probe_band.hi_nm)
        except ValueError as exc:
            problems.append(str(exc))
        return problems

    def to_dict(self) -> dict:
        det = {name: {
            "quantum_efficiency": d.quantum_efficiency,
            "jitter_fwhm_ps": d.jitter_fwhm_ps,
            "dark_rate_per_s": d.dark_rate_per_s,
            "dead_time_ps": d.dead_time_ps,
        } for name, d in sorted(self.detectors.items())}
        return {
            "version": SCHEMA_VERSION,
            "description": self.description,
            "pump": {
                "repetition_rate_mhz": self.pump.repetition_rate_mhz,
                "center_wavelength_nm": self.pump.center_wavelength_nm,
                "spectral_fwhm_ghz": self.pump.spectral_fwhm_ghz,
                "pulse_duration_ps": self.pump.pulse_duration_ps,
            },
            "rates": {
                "pair_rate_per_pulse": self.rates.pair_rate,
                "single_probe_rate_per_pulse": self.rates.single_probe_rate,
                "single_herald_rate_per_pulse": self.rates.single_herald_rate,
            },
            "phase_match": {
                "kappa_coefficients": list(self.phase_match.kappa_coefficients),
                "length_m": self.phase_match.length_m,
            },
            "herald_band": {"center_nm": self.herald_band.center_nm,
                            "width_nm": self.herald_band.width_nm},
            "probe_band": {"center_nm": self.probe_band.center_nm,
                           "width_nm": self.probe_band.width_nm},
            "dispersion": {
                "mode": self.dispersion.mode,
                "slope_ns_per_nm": self.dispersion.slope_ns_per_nm,
                "anchor_wavelength_nm": self.dispersion.anchor_wavelength_nm,
                "polynomial_coefficients": list(
                    self.dispersion.polynomial_coefficients),
                "fiber_length_km": self.dispersion.fiber_length_km,
            },
            "grating": {
                "groove_density_per_mm": self.grating.groove_density_per_mm,
                "incidence_angle_deg": self.grating.incidence_angle_deg,
                "order": self.grating.order,
                "beam_waist_mm": self.grating.beam_waist_mm,
            },
            "scene": [{
                "id": t.id,
                "center_wavelength_nm": t.center_wavelength_nm,
                "angular_halfwidth_deg": t.angular_halfwidth_deg,
                "distance_m": t.distance_m,
                "roundtrip_efficiency": t.roundtrip_efficiency,
            } for t in self.scene],
            "channels": {
                "probe_efficiency": self.channels.probe_efficiency,
                "herald_efficiency": self.channels.herald_efficiency,
                "noise_rate_per_s": self.channels.noise_rate_per_s,
                "loopback": self.channels.loopback,
            },
            "detectors": det,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "configurations": list(self.configurations),
            "ref_divider": self.ref_divider,
        }

    def fingerprint(self) -> bytes:
        canonical = json.dumps(self.to_dict(), sort_keys=True,
                               separators=(",", ":")).encode()
        return hashlib.sha256(canonical).digest()

    def with_seed(self, seed: int) -> "ScenarioConfig":
        from dataclasses import replace
        return replace(self, seed=seed)


def _take(mapping: dict, context: str, problems: list, **fields):
    """Pop expected keys with defaults; record unknown leftovers as errors."""
    out = {}
    work = dict(mapping)
    for key, default in fields.items():
        if key in work:
            out[key] = work.pop(key)
        elif default is ...:
            problems.append(f"{context}: missing required key {key!r}")
            out[key] = None
        else:
            out[key] = default
    for key in work:
        problems.append(f"{context}: unknown key {key!r}")
    return out


def _build(cls, problems, context, *args, **kwargs):
    try:
        return cls(*args, **kwargs)
    except (TypeError, ValueError) as exc:
        problems.append(f"{context}: {exc}")
        return None


def scenario_from_dict(data: dict) -> ScenarioConfig:
    """Build and fully validate a scenario; raises ScenarioError listing
    every violation when anything is wrong."""
    problems: list = []
    top = _take(dict(data), "scenario", problems,
                version=..., pump=..., rates=..., phase_match={},
                herald_band=..., probe_band=..., dispersion={}, grating={},
                scene=[], channels=..., detectors=..., duration_s=...,
                seed=..., configurations=["probe:on|noise:on"], ref_divider=1,
                description="")
    if top["version"] not in (None, SCHEMA_VERSION):
        problems.append(f"unsupported schema version {top['version']}")

    pump = rates = pm = herald_band = probe_band = None
    dispersion = grating = channels = None
    scene: tuple = ()
    detectors: dict = {}

    if isinstance(top["pump"], dict):
        f = _take(top["pump"], "pump", problems, repetition_rate_mhz=...,
                  center_wavelength_nm=..., spectral_fwhm_ghz=...,
                  pulse_duration_ps=12.0)
        if None not in f.values():
            pump = _build(PumpSpec.from_wavelength, problems, "pump", **f)
    elif top["pump"] is not None:
        problems.append("pump: expected an object")

    if isinstance(top["rates"], dict):
        f = _take(top["rates"], "rates", problems, pair_rate_per_pulse=...,
                  single_probe_rate_per_pulse=0.0,
                  single_herald_rate_per_pulse=0.0)
        if None not in f.values():
            rates = _build(EmissionRates, problems, "rates",
                           f["pair_rate_per_pulse"],
                           f["single_probe_rate_per_pulse"],
                           f["single_herald_rate_per_pulse"])
    elif top["rates"] is not None:
        problems.append("rates: expected an object")

    f = _take(top["phase_match"] or {}, "phase_match", problems,
              kappa_coefficients=[0.0], length_m=0.01)
    pm = _build(PhaseMatchModel, problems, "phase_match",
                tuple(f["kappa_coefficients"]), f["length_m"])

    for name in ("herald_band", "probe_band"):
        if isinstance(top[name], dict):
            f = _take(top[name], name, problems, center_nm=..., width_nm=...)
            if None not in f.values():
                band = _build(SpectralBand, problems, name,
                              f["center_nm"], f["width_nm"])
                if name == "herald_band":
                    herald_band = band
                else:
                    probe_band = band
        elif top[name] is not None:
            problems.append(f"{name}: expected an object")

    f = _take(top["dispersion"] or {}, "dispersion", problems, mode="linear",
              slope_ns_per_nm=0.4, anchor_wavelength_nm=1540.56,
              polynomial_coefficients=[], fiber_length_km=25.248)
    dispersion = _build(DispersionModel, problems, "dispersion", f["mode"],
                        f["slope_ns_per_nm"], f["anchor_wavelength_nm"],
                        tuple(f["polynomial_coefficients"]),
                        f["fiber_length_km"])

    f = _take(top["grating"] or {}, "grating", problems,
              groove_density_per_mm=600.0, incidence_angle_deg=3.05,
              order=-1, beam_waist_mm=3.6)
    grating = _build(GratingSpec, problems, "grating", f["groove_density_per_mm"],
                     f["incidence_angle_deg"], f["order"], f["beam_waist_mm"])

    targets = []
    for i, entry in enumerate(top["scene"] or []):
        f = _take(entry, f"scene[{i}]", problems, id=f"target{i}",
                  center_wavelength_nm=..., angular_halfwidth_deg=...,
                  distance_m=..., roundtrip_efficiency=1.0)
        if None not in f.values():
            t = _build(Target, problems, f"scene[{i}]", f["id"],
                       f["center_wavelength_nm"], f["angular_halfwidth_deg"],
                       f["distance_m"], f["roundtrip_efficiency"])
            if t is not None:
                targets.append(t)
    scene = tuple(targets)

    if isinstance(top["channels"], dict):
        f = _take(top["channels"], "channels", problems, probe_efficiency=...,
                  herald_efficiency=..., noise_rate_per_s=0.0, loopback=False)
        if None not in f.values():
            channels = _build(ChannelSpec, problems, "channels",
                              f["probe_efficiency"], f["herald_efficiency"],
                              f["noise_rate_per_s"], f["loopback"])
    elif top["channels"] is not None:
        problems.append("channels: expected an object")

    if isinstance(top["detectors"], dict):
        extra = set(top["detectors"]) - {"ref", "herald", "probe"}
        for key in sorted(extra):
            problems.append(f"detectors: unknown channel {key!r}")
        for name in ("ref", "herald", "probe"):
            entry = top["detectors"].get(name)
            if entry is None:
                problems.append(f"detectors: missing channel {name!r}")
                continue
            f = _take(entry, f"detectors.{name}", problems,
                      quantum_efficiency=1.0, jitter_fwhm_ps=0.0,
                      dark_rate_per_s=0.0, dead_time_ps=0.0)
            spec = _build(DetectorSpec, problems, f"detectors.{name}", **f)
            if spec is not None:
                detectors[name] = spec
    elif top["detectors"] is not None:
        problems.append("detectors: expected an object")

    if problems:
        raise ScenarioError(problems)

    config = ScenarioConfig(pump, rates, pm, herald_band, probe_band,
                            dispersion, grating, scene, channels, detectors,
                            float(top["duration_s"]), int(top["seed"]),
                            tuple(top["configurations"]),
                            int(top["ref_divider"]), str(top["description"]))
    problems = config.validate()
    if problems:
        raise ScenarioError(problems)
    return config


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario JSON file."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(
                [f"{path}: parse error at line {exc.lineno}, column {exc.colno}: "
                 f"{exc.msg}"]) from exc
    if not isinstance(data, dict):
        raise ScenarioError([f"{path}: top level must be an object"])
    return scenario_from_dict(data)


def save_scenario(config: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class SweepSpec:
    """One swept scenario parameter and the values to visit."""

    parameter: str                 # dotted path into the scenario dict
    values: tuple
    base: ScenarioConfig

    def __post_init__(self):
        # fail early if the path does not exist in the schema
        node = self.base.to_dict()
        for part in self.parameter.split("."):
            if not isinstance(node, dict) or part not in node:
                raise ValueError(f"swept path {self.parameter!r} not in scenario")
            node = node[part]

    def scenarios(self):
        for value in self.values:
            data = self.base.to_dict()
            node = data
            parts = self.parameter.split(".")
            for part in parts[:-1]:
                node = node[part]
            node[parts[-1]] = value
            yield value, scenario_from_dict(data)
