import numpy as np
import pytest
from hypothesis import settings

from tripletsim.pairstats import SourceParams
from tripletsim.simulate import Arm, ChannelModel, DetectorModel, SimConfig

# property tests draw the same examples on every run
settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")

# Arm transmission back-solved so the three-arm efficiency product is 2.17e-3
# with detector efficiencies 0.6 / 0.25 / 0.7.
ARM_TRANSMISSION = (2.17e-3 / (0.6 * 0.25 * 0.7)) ** (1.0 / 3.0)
DETECTOR_EFFICIENCIES = (0.6, 0.25, 0.7)


def make_arms(
    transmission=ARM_TRANSMISSION,
    efficiencies=DETECTOR_EFFICIENCIES,
    dark_rates=(0.0, 0.0, 0.0),
    jitter=(0.0, 0.0, 0.0),
    dead_times=(0.0, 0.0, 0.0),
    leakage=(0.0, 0.0, 0.0),
):
    return tuple(
        Arm(
            ChannelModel(transmission, leakage[k]),
            DetectorModel(efficiencies[k], dark_rates[k], jitter[k], dead_times[k]),
        )
        for k in range(3)
    )


def baseline_source(pdc2=2.7e-7, pump_w=10e-6):
    return SourceParams(
        pump_power_w=pump_w,
        pump_wavelength_m=532e-9,
        rep_rate_hz=10e6,
        injection_efficiency=0.5,
        pdc1_efficiency=8.1e-8,
        pdc2_efficiency=pdc2,
    )


def boosted_config(n_pulses, seed, jitter_s=30e-12, dark_hz=0.0, pdc2=2.7e-1):
    """Second stage boosted so desk-scale runs accumulate thousands of triples."""
    return SimConfig(
        source=baseline_source(pdc2=pdc2),
        arms=make_arms(
            dark_rates=(dark_hz,) * 3,
            jitter=(jitter_s,) * 3,
        ),
        n_pulses=n_pulses,
        rng_seed=seed,
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
