import numpy as np
import pytest

from qeplidar.channel import ChannelSpec, DispersionModel, GratingSpec, Target
from qeplidar.detect import DetectorSpec
from qeplidar.scenario import ScenarioConfig, scenario_from_dict
from qeplidar.source import EmissionRates, PhaseMatchModel, PumpSpec, SpectralBand


@pytest.fixture(scope="session")
def pump():
    return PumpSpec.from_wavelength(19.27, 1540.56, 31.6)


@pytest.fixture(scope="session")
def flat_pm():
    return PhaseMatchModel()


@pytest.fixture(scope="session")
def herald_band():
    return SpectralBand(1530.0, 13.0)


@pytest.fixture(scope="session")
def probe_band():
    return SpectralBand(1551.0, 13.0)


@pytest.fixture(scope="session")
def grating():
    return GratingSpec()


@pytest.fixture(scope="session")
def dispersion():
    return DispersionModel()


def loopback_scenario(duration_s=0.05, seed=42, pair_rate=0.01, eta_p=0.8,
                      eta_h=0.8, noise_rate=0.0, jitters=(18.8, 89.9, 66.43),
                      dark_p=0.0, dark_h=0.0, ref_divider=1,
                      configurations=("probe:on|noise:on", "probe:off|noise:on"),
                      **extra):
    data = {
        "version": 1,
        "pump": {"repetition_rate_mhz": 19.27, "center_wavelength_nm": 1540.56,
                 "spectral_fwhm_ghz": 31.6},
        "rates": {"pair_rate_per_pulse": pair_rate},
        "herald_band": {"center_nm": 1530.0, "width_nm": 13.0},
        "probe_band": {"center_nm": 1551.0, "width_nm": 13.0},
        "channels": {"probe_efficiency": eta_p, "herald_efficiency": eta_h,
                     "noise_rate_per_s": noise_rate, "loopback": True},
        "detectors": {
            "ref": {"jitter_fwhm_ps": jitters[0]},
            "herald": {"jitter_fwhm_ps": jitters[1], "dark_rate_per_s": dark_h},
            "probe": {"jitter_fwhm_ps": jitters[2], "dark_rate_per_s": dark_p},
        },
        "duration_s": duration_s,
        "seed": seed,
        "configurations": list(configurations),
        "ref_divider": ref_divider,
    }
    data.update(extra)
    return scenario_from_dict(data)


def scene_scenario(targets, duration_s=0.2, seed=7, pair_rate=0.01, eta_p=0.5,
                   eta_h=0.5, noise_rate=0.0, band_width=13.0,
                   ref_divider=16,
                   configurations=("probe:on|noise:on", "probe:off|noise:on")):
    data = {
        "version": 1,
        "pump": {"repetition_rate_mhz": 19.27, "center_wavelength_nm": 1540.56,
                 "spectral_fwhm_ghz": 31.6},
        "rates": {"pair_rate_per_pulse": pair_rate},
        "herald_band": {"center_nm": 1530.0, "width_nm": band_width},
        "probe_band": {"center_nm": 1551.0, "width_nm": band_width},
        "channels": {"probe_efficiency": eta_p, "herald_efficiency": eta_h,
                     "noise_rate_per_s": noise_rate, "loopback": False},
        "detectors": {
            "ref": {"jitter_fwhm_ps": 18.8},
            "herald": {"jitter_fwhm_ps": 89.9},
            "probe": {"jitter_fwhm_ps": 66.43},
        },
        "scene": targets,
        "duration_s": duration_s,
        "seed": seed,
        "configurations": list(configurations),
        "ref_divider": ref_divider,
    }
    return scenario_from_dict(data)


def five_target_scene(band_center=1551.0, span=12.0, distances=(0.6, 0.85, 1.1,
                                                                1.3, 1.45),
                      efficiency=0.85, halfwidth_scale=1.0):
    """Five adjacent wavelength slices of the probe band, distinct ranges."""
    from qeplidar.channel import angular_dispersion
    grating = GratingSpec()
    width = span / 5.0
    targets = []
    for k in range(5):
        center = band_center - span / 2 + width * (k + 0.5)
        halfwidth = float(angular_dispersion(center, grating)) \
            * (width * 0.45) * halfwidth_scale
        targets.append({
            "id": f"t{k + 1}",
            "center_wavelength_nm": center,
            "angular_halfwidth_deg": halfwidth,
            "distance_m": distances[k],
            "roundtrip_efficiency": efficiency,
        })
    return targets
