"""Uniformly sampled time series, the data currency between pipeline stages.

A stream stores a sample rate, an absolute start time and a channel label;
sample k sits at ``start_time + k / sample_rate``.  No per-sample timestamps
are stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError

CHANNELS = (
    "polarimeter_diff",
    "power_monitor",
    "demod_i",
    "demod_q",
    "rotation_angle",
    "atom_number_estimate",
    "atom_number_truth",
    "demod_magnitude",
    "demod_phase",
)

# Default physical units per channel (photons/s-equivalent for detector
# channels, radians for angles, atoms for counts).
CHANNEL_UNITS = {
    "polarimeter_diff": "photons_per_s",
    "power_monitor": "photons_per_s",
    "demod_i": "rad",
    "demod_q": "rad",
    "rotation_angle": "rad",
    "atom_number_estimate": "atoms",
    "atom_number_truth": "atoms",
    "demod_magnitude": "rad",
    "demod_phase": "rad",
}


@dataclass
class SampleStream:
    """A uniformly sampled, single-channel record.

    Attributes
    ----------
    sample_rate : float
        Samples per second, > 0.
    start_time : float
        Absolute time of sample 0 in seconds.
    channel : str
        One of `CHANNELS`.
    values : np.ndarray
        1-D float64 array, non-empty.
    units : str
        Physical units of the values (defaults per channel).
    meta : dict
        Free-form provenance (subtracted offsets, window sizes, ...).
    """

    sample_rate: float
    start_time: float
    channel: str
    values: np.ndarray
    units: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ContractError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.channel not in CHANNELS:
            raise ContractError(
                f"unknown channel {self.channel!r}; expected one of {CHANNELS}"
            )
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ContractError("values must be a non-empty 1-D sequence")
        if not self.units:
            self.units = CHANNEL_UNITS.get(self.channel, "")

    def __len__(self):
        return self.values.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def duration(self) -> float:
        return self.values.size / self.sample_rate

    def times(self) -> np.ndarray:
        """Absolute sample times."""
        return self.start_time + np.arange(self.values.size) / self.sample_rate

    def slice_time(self, t0: float | None = None, t1: float | None = None) -> "SampleStream":
        """Samples with absolute time in the half-open window [t0, t1)."""
        n = self.values.size
        k0 = 0
        if t0 is not None:
            k0 = int(np.ceil((t0 - self.start_time) * self.sample_rate - 1e-9))
            k0 = max(k0, 0)
        k1 = n
        if t1 is not None:
            k1 = int(np.ceil((t1 - self.start_time) * self.sample_rate - 1e-9))
            k1 = min(max(k1, 0), n)
        if k1 <= k0:
            raise ContractError(
                f"time slice [{t0}, {t1}) selects no samples from "
                f"stream starting at {self.start_time} with {n} samples"
            )
        return replace(
            self,
            start_time=self.start_time + k0 / self.sample_rate,
            values=self.values[k0:k1].copy(),
            meta=dict(self.meta),
        )
