"""Deterministic physics of the Faraday observable.

The trapped ensemble is spin-polarized along a bias field rotating at the
trap frequency, so the collective spin projection on the probe axis
oscillates at that frequency.  Off-resonant linearly polarized light picks
up a polarization rotation proportional to that projection, and a balanced
polarimeter measures the corresponding power-difference observable

    S2 = (flux / 2) * sin(2 * theta_F),   theta_F = g * F_x,

which is linear in the atom number for small rotation angles.  Everything
here is a pure function of its arguments; all config objects are frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class EnsembleState:
    """Trapped ensemble: atom number and spin orientation.

    ``atom_number`` is real-valued so expectation trajectories can be carried;
    stochastic sampling uses integer values.  ``initial_atom_number`` is run
    metadata (defaults to the construction value).
    """

    atom_number: float
    spin_sign: int = 1
    initial_atom_number: float | None = None

    def __post_init__(self):
        if self.atom_number < 0:
            raise ConfigurationError(
                f"atom_number must be >= 0, got {self.atom_number}"
            )
        if self.spin_sign not in (1, -1):
            raise ConfigurationError(f"spin_sign must be +1 or -1, got {self.spin_sign}")
        if self.initial_atom_number is None:
            object.__setattr__(self, "initial_atom_number", float(self.atom_number))


@dataclass(frozen=True)
class TopFieldConfig:
    """Rotating bias field of the trap: frequency (Hz) and initial phase (rad)."""

    rotation_frequency: float
    initial_phase: float = 0.0

    def __post_init__(self):
        if self.rotation_frequency <= 0:
            raise ConfigurationError(
                f"rotation_frequency must be > 0, got {self.rotation_frequency}"
            )


@dataclass(frozen=True)
class CouplingModel:
    """Light-atom coupling: rotation angle per atom.

    The per-atom spin projection magnitude is folded in, so
    ``theta_F = coupling_strength * N`` at ``reference_detuning``.  The only
    detuning dependence modeled is the dispersive 1/detuning scaling.
    """

    coupling_strength: float
    reference_detuning: float = 5.0e9

    def __post_init__(self):
        if self.coupling_strength <= 0:
            raise ConfigurationError(
                f"coupling_strength must be > 0, got {self.coupling_strength}"
            )
        if self.reference_detuning <= 0:
            raise ConfigurationError(
                f"reference_detuning must be > 0, got {self.reference_detuning}"
            )

    def at_detuning(self, detuning: float) -> "CouplingModel":
        """Coupling rescaled to a different probe detuning (1/detuning law)."""
        if detuning <= 0:
            raise ConfigurationError(f"detuning must be > 0, got {detuning}")
        return replace(
            self,
            coupling_strength=self.coupling_strength * self.reference_detuning / detuning,
            reference_detuning=detuning,
        )


@dataclass(frozen=True)
class ProbeDetectorConfig:
    """Probe beam and detection chain parameters.

    ``photon_flux`` is the full beam flux (photons/s) before the monitor tap;
    the monitor arm carries ``monitor_tap * photon_flux`` and the ensemble /
    polarimeter arm the remaining ``(1 - monitor_tap) * photon_flux``.
    Offsets are DC photons/s-equivalents per channel; electronic noise is
    white with the given one-sided amplitude density.
    """

    photon_flux: float
    detection_efficiency: float = 0.87
    monitor_tap: float = 0.20
    detuning: float = 5.0e9
    polarimeter_offset: float = 0.0
    monitor_offset: float = 0.0
    electronic_noise_density: float = 0.0

    def __post_init__(self):
        if self.photon_flux <= 0:
            raise ConfigurationError(f"photon_flux must be > 0, got {self.photon_flux}")
        if not 0 < self.detection_efficiency <= 1:
            raise ConfigurationError(
                f"detection_efficiency must be in (0, 1], got {self.detection_efficiency}"
            )
        if not 0 < self.monitor_tap < 1:
            raise ConfigurationError(
                f"monitor_tap must be in (0, 1), got {self.monitor_tap}"
            )
        if self.detuning <= 0:
            raise ConfigurationError(f"detuning must be > 0, got {self.detuning}")
        if self.electronic_noise_density < 0:
            raise ConfigurationError(
                f"electronic_noise_density must be >= 0, got {self.electronic_noise_density}"
            )

    @property
    def polarimeter_flux(self) -> float:
        """Flux through the ensemble into the polarimeter arm."""
        return (1.0 - self.monitor_tap) * self.photon_flux

    @property
    def monitor_flux(self) -> float:
        """Flux onto the power-monitor photodiode."""
        return self.monitor_tap * self.photon_flux


def spin_projection(ensemble: EnsembleState, top: TopFieldConfig, t):
    """Collective spin projection on the probe axis at time(s) ``t`` (atoms, signed).

    F_x(t) = spin_sign * N * cos(2*pi*f_rot*t + phase); |F_x| <= N.
    """
    t = np.asarray(t, dtype=float)
    phase = 2.0 * np.pi * top.rotation_frequency * t + top.initial_phase
    out = ensemble.spin_sign * ensemble.atom_number * np.cos(phase)
    return out if out.ndim else float(out)


def faraday_angle(coupling: CouplingModel, f_x):
    """Polarization rotation angle (rad) for a spin projection ``f_x`` (atoms)."""
    out = coupling.coupling_strength * np.asarray(f_x, dtype=float)
    return out if out.ndim else float(out)


def stokes_s2(flux: float, theta_f, exact: bool = True):
    """Balanced-polarimetry observable (photons/s) for rotation ``theta_f``.

    Exact form is (flux/2)*sin(2*theta_f); the approximate form flux*theta_f
    agrees to first order and is linear in both arguments.
    """
    if flux <= 0:
        raise ConfigurationError(f"flux must be > 0, got {flux}")
    theta = np.asarray(theta_f, dtype=float)
    if exact:
        out = 0.5 * flux * np.sin(2.0 * theta)
    else:
        out = flux * theta
    return out if out.ndim else float(out)
