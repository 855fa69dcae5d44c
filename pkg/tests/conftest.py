import numpy as np
import pytest

from faradaysim import (
    CouplingModel,
    EnsembleState,
    LockInConfig,
    LossModel,
    ProbeDetectorConfig,
    RunConfig,
    TopFieldConfig,
)


def make_run(
    atom_number=1.0e6,
    duration=0.2,
    sample_rate=250000.0,
    seed=0,
    dark=0.02,
    rotation_frequency=5000.0,
    coupling_strength=1.0e-7,
    photon_flux=2.5e9,
    alpha=0.0,
    gamma_bg=0.0,
    stochastic=False,
    shot_noise=False,
    spin_sign=1,
    **kwargs,
):
    """Run config factory; defaults to a fully deterministic, noise-free run."""
    return RunConfig(
        duration=duration,
        sample_rate=sample_rate,
        seed=seed,
        ensemble=EnsembleState(atom_number=atom_number, spin_sign=spin_sign),
        top=TopFieldConfig(rotation_frequency=rotation_frequency),
        coupling=CouplingModel(coupling_strength=coupling_strength),
        probe=ProbeDetectorConfig(photon_flux=photon_flux, **kwargs.pop("probe_kwargs", {})),
        loss=LossModel(
            absorption_loss_coefficient=alpha,
            background_loss_rate=gamma_bg,
            stochastic=stochastic,
        ),
        pre_probe_dark_time=dark,
        shot_noise=shot_noise,
        **kwargs,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def default_lockin():
    return LockInConfig(reference_frequency=5000.0, time_constant=1.0e-3, stages=2)
