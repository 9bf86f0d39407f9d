import numpy as np
import pytest

from seedopt.kinetics import CultureState, ModelParameters
from seedopt.seedtrain import ScaleConfig, SeedTrainConfig, UncertaintySpec

# Table-3-style working ranges for the five flask scales.
FLASK_RANGES_5 = [(0.014, 0.015), (0.05, 0.15), (0.15, 1.5), (1.5, 4.0), (4.0, 8.0)]
BIOREACTOR_VOLUMES = (40.0, 320.0, 2100.0)
PRODUCTION_VOLUME = 9600.0
REFERENCE_VOLUMES = (0.015, 0.08, 0.30, 2.0, 4.0)


def build_scales(flask_volumes, flask_ranges=None, first_bioreactor_mu=0.028):
    flask_ranges = flask_ranges or FLASK_RANGES_5[: len(flask_volumes)]
    scales = [
        ScaleConfig(
            name=f"flask-{i + 1}",
            filling_volume=v,
            working_volume_range=flask_ranges[i],
            vessel="flask",
        )
        for i, v in enumerate(flask_volumes)
    ]
    for i, v in enumerate(BIOREACTOR_VOLUMES):
        scales.append(
            ScaleConfig(
                name=f"bioreactor-{i + 1}",
                filling_volume=v,
                working_volume_range=(0.9 * v, 1.1 * v),
                vessel="bioreactor",
                mu_max_override=first_bioreactor_mu if i == 0 else None,
            )
        )
    scales.append(
        ScaleConfig(
            name="production",
            filling_volume=PRODUCTION_VOLUME,
            working_volume_range=(0.9 * PRODUCTION_VOLUME, 1.1 * PRODUCTION_VOLUME),
            vessel="production",
        )
    )
    return scales


def thaw_state(volume=0.015):
    return CultureState(
        t=0.0,
        xv=3.15e8,
        xt=3.15e8 / 0.95,
        c_glc=35.0,
        c_gln=5.0,
        c_lac=0.1,
        c_amm=0.1,
        c_titer=0.0,
        v=volume,
    )


def train_config(flask_volumes, n_mc=64, seed=7, **kwargs):
    return SeedTrainConfig(
        scales=build_scales(flask_volumes),
        initial_state=thaw_state(flask_volumes[0]),
        uncertainty=UncertaintySpec(rng_seed=seed),
        n_mc=n_mc,
        **kwargs,
    )


@pytest.fixture
def default_params():
    return ModelParameters()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
