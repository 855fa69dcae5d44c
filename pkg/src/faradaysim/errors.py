"""Exception hierarchy shared by all modules.

Each error class carries the CLI exit code used when it escapes to the
command-line entry point (config=2, estimation=3, preparation=4; I/O errors
are plain OSError and map to 5).
"""


class FaradaySimError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(FaradaySimError):
    """A configuration value violates a documented bound."""

    exit_code = 2


class ContractError(FaradaySimError):
    """An operation was called with arguments that violate its contract."""

    exit_code = 2


class EstimationError(FaradaySimError):
    """The estimation pipeline cannot produce a valid result."""

    exit_code = 3


class FitConvergenceError(EstimationError):
    """The decay fit did not converge; carries the last iterate."""

    def __init__(self, message, last_params=None, last_residual_rms=None):
        super().__init__(message)
        self.last_params = last_params
        self.last_residual_rms = last_residual_rms


class DegenerateFitError(EstimationError):
    """The input data cannot constrain the decay model (e.g. all-equal)."""


class PreparationError(FaradaySimError):
    """The preparation controller cannot run."""

    exit_code = 4


class InfeasibleTargetError(PreparationError):
    """Requested target atom number exceeds what the initial ensemble allows."""
