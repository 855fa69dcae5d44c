"""Simulation and analysis of a minimally-destructive Faraday atom-number
measurement: rotating-trap signal synthesis, balanced polarimetry with shot
noise, digital lock-in demodulation, power-normalized atom-number estimation
with decay fitting, and closed-loop preparation at a target atom number."""

from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateFitError,
    EstimationError,
    FaradaySimError,
    FitConvergenceError,
    InfeasibleTargetError,
    PreparationError,
)
from .estimation import (
    MeasurementRecord,
    NormalizationConfig,
    atoms_from_angle,
    estimate_atom_number_stream,
    estimate_run,
    fit_decay,
    noise_diagnostics,
    normalize_power,
    remove_offset,
)
from .lockin import (
    LockInConfig,
    demodulate,
    magnitude_phase,
    step_response_settling_time,
)
from .model import (
    CouplingModel,
    EnsembleState,
    ProbeDetectorConfig,
    TopFieldConfig,
    faraday_angle,
    spin_projection,
    stokes_s2,
)
from .preparation import (
    PreparationPolicy,
    PreparationResult,
    apply_cut,
    measure_once,
    prepare,
)
from .streams import SampleStream
from .synthesis import (
    LossModel,
    PowerDrift,
    RunConfig,
    evolve_atom_number,
    mean_decay_envelope,
    synthesize_run,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ContractError",
    "CouplingModel",
    "DegenerateFitError",
    "EnsembleState",
    "EstimationError",
    "FaradaySimError",
    "FitConvergenceError",
    "InfeasibleTargetError",
    "LockInConfig",
    "LossModel",
    "MeasurementRecord",
    "NormalizationConfig",
    "PowerDrift",
    "PreparationError",
    "PreparationPolicy",
    "PreparationResult",
    "ProbeDetectorConfig",
    "RunConfig",
    "SampleStream",
    "TopFieldConfig",
    "apply_cut",
    "atoms_from_angle",
    "demodulate",
    "estimate_atom_number_stream",
    "estimate_run",
    "evolve_atom_number",
    "faraday_angle",
    "fit_decay",
    "magnitude_phase",
    "mean_decay_envelope",
    "measure_once",
    "noise_diagnostics",
    "normalize_power",
    "prepare",
    "remove_offset",
    "spin_projection",
    "step_response_settling_time",
    "stokes_s2",
    "synthesize_run",
]
