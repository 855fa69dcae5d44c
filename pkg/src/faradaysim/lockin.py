"""Digital dual-phase lock-in amplifier.

Mixes the input against quadrature references at a known frequency and
low-pass filters with a cascade of identical first-order exponential
sections, the discrete equivalent of an RC lock-in output stage:

    y[n] = y[n-1] + (1 - exp(-dt/tau)) * (x[n] - y[n-1])

Gain convention: a unit-amplitude in-phase carrier demodulates to I = 1
(factor-2 mixers).  Filter state starts at zero, so the settling transient
is real and kept in the outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.special import gammaincinv, gammaln

from .errors import ConfigurationError, ContractError
from .streams import SampleStream


@dataclass(frozen=True)
class LockInConfig:
    reference_frequency: float
    reference_phase: float = 0.0
    time_constant: float = 1.0e-3
    stages: int = 2
    decimation: int = 1

    def __post_init__(self):
        if self.reference_frequency <= 0:
            raise ConfigurationError(
                f"reference_frequency must be > 0, got {self.reference_frequency}"
            )
        if self.time_constant <= 0:
            raise ConfigurationError(
                f"time_constant must be > 0, got {self.time_constant}"
            )
        if int(self.stages) != self.stages or self.stages < 1:
            raise ConfigurationError(f"stages must be an integer >= 1, got {self.stages}")
        if int(self.decimation) != self.decimation or self.decimation < 1:
            raise ConfigurationError(
                f"decimation must be an integer >= 1, got {self.decimation}"
            )


def _check_rates(config: LockInConfig, sample_rate: float):
    if sample_rate < 10.0 * config.reference_frequency:
        raise ConfigurationError(
            f"sample_rate {sample_rate} Hz is below 10 x reference_frequency "
            f"({config.reference_frequency} Hz requires >= "
            f"{10.0 * config.reference_frequency} Hz)"
        )
    if config.time_constant * sample_rate < 5.0:
        raise ConfigurationError(
            f"time_constant {config.time_constant} s gives only "
            f"{config.time_constant * sample_rate:.2f} samples per time constant "
            f"at {sample_rate} Hz (need >= 5)"
        )


def _cascade_filter(x: np.ndarray, config: LockInConfig, sample_rate: float) -> np.ndarray:
    a = -np.expm1(-1.0 / (config.time_constant * sample_rate))
    y = x
    for _ in range(config.stages):
        y = lfilter([a], [1.0, a - 1.0], y)
    return y


def demodulate(
    stream: SampleStream, config: LockInConfig
) -> tuple[SampleStream, SampleStream]:
    """Dual-phase demodulation of a stream at the reference frequency.

    I = LP[2 x(t) cos(2 pi f_ref t + phase)], Q = LP[-2 x(t) sin(...)],
    both decimated by ``config.decimation`` (sample 0 kept).
    """
    _check_rates(config, stream.sample_rate)
    t = stream.times()
    ref_phase = 2.0 * np.pi * config.reference_frequency * t + config.reference_phase
    mixed_i = 2.0 * stream.values * np.cos(ref_phase)
    mixed_q = -2.0 * stream.values * np.sin(ref_phase)
    i_vals = _cascade_filter(mixed_i, config, stream.sample_rate)
    q_vals = _cascade_filter(mixed_q, config, stream.sample_rate)
    k = config.decimation
    out_rate = stream.sample_rate / k
    i_stream = SampleStream(
        out_rate, stream.start_time, "demod_i", i_vals[::k], units=stream.units
    )
    q_stream = SampleStream(
        out_rate, stream.start_time, "demod_q", q_vals[::k], units=stream.units
    )
    return i_stream, q_stream


def magnitude_phase(
    i: SampleStream, q: SampleStream
) -> tuple[SampleStream, SampleStream]:
    """Per-sample R = sqrt(I^2 + Q^2) and phase = atan2(Q, I) (0 at origin)."""
    if len(i) != len(q):
        raise ContractError(f"I/Q length mismatch: {len(i)} vs {len(q)}")
    if i.sample_rate != q.sample_rate:
        raise ContractError(
            f"I/Q sample-rate mismatch: {i.sample_rate} vs {q.sample_rate}"
        )
    mag = np.hypot(i.values, q.values)
    ph = np.arctan2(q.values, i.values)
    mag_stream = SampleStream(
        i.sample_rate, i.start_time, "demod_magnitude", mag, units=i.units
    )
    ph_stream = SampleStream(i.sample_rate, i.start_time, "demod_phase", ph, units="rad")
    return mag_stream, ph_stream


def step_response_settling_time(config: LockInConfig, fraction: float) -> float:
    """Time for the cascade step response to reach ``fraction`` of its final value.

    The continuous m-stage cascade step response is the regularized lower
    incomplete gamma function P(m, t/tau), inverted here to well below
    microsecond accuracy.
    """
    if not 0.0 < fraction < 1.0:
        raise ContractError(f"fraction must be in (0, 1), got {fraction}")
    return float(gammaincinv(config.stages, fraction)) * config.time_constant


def cascade_gain(config: LockInConfig, frequency: float, sample_rate: float) -> float:
    """|H(f)| of the discrete filter cascade at the given frequency."""
    a = -np.expm1(-1.0 / (config.time_constant * sample_rate))
    z = np.exp(-2j * np.pi * frequency / sample_rate)
    h1 = a / (1.0 - (1.0 - a) * z)
    return float(np.abs(h1) ** config.stages)


def cascade_noise_gain(config: LockInConfig, sample_rate: float) -> float:
    """Sum of squared impulse-response samples of the discrete cascade.

    White input noise of per-sample variance s^2 leaves the cascade with
    per-sample variance s^2 * cascade_noise_gain(...).
    """
    # Impulse response long enough to capture the full tail.
    n = max(int(60.0 * config.stages * config.time_constant * sample_rate), 64)
    imp = np.zeros(n)
    imp[0] = 1.0
    h = _cascade_filter(imp, config, sample_rate)
    return float(np.sum(h**2))


def cascade_enbw(config: LockInConfig) -> float:
    """Equivalent noise bandwidth (Hz) of the continuous m-stage cascade.

    ENBW = Gamma(m - 1/2) sqrt(pi) / (4 pi tau Gamma(m)); 1/(4 tau) for one
    stage, 1/(8 tau) for two.
    """
    m = config.stages
    if m == 1:
        integral = np.pi / 2.0
    else:
        integral = 0.5 * np.sqrt(np.pi) * np.exp(gammaln(m - 0.5) - gammaln(m))
    return float(integral / (2.0 * np.pi * config.time_constant))


def cascade_autocorr_time(config: LockInConfig, sample_rate: float) -> float:
    """Lag (s) where the cascade's impulse-response autocorrelation falls to 1/e.

    White noise through the cascade decorrelates on this scale; for two
    stages it is about 2.15 time constants.
    """
    n = max(int(60.0 * config.stages * config.time_constant * sample_rate), 64)
    imp = np.zeros(n)
    imp[0] = 1.0
    h = _cascade_filter(imp, config, sample_rate)
    # One-sided autocorrelation via FFT.
    m = int(2 ** np.ceil(np.log2(2 * n)))
    spec = np.abs(np.fft.rfft(h, m)) ** 2
    acf = np.fft.irfft(spec)[:n]
    acf /= acf[0]
    target = np.exp(-1.0)
    below = np.nonzero(acf < target)[0]
    if below.size == 0:
        raise ContractError("autocorrelation never crosses 1/e; impulse window too short")
    k = below[0]
    # Linear interpolation between lags k-1 and k.
    frac = (acf[k - 1] - target) / (acf[k - 1] - acf[k]) if k > 0 else 0.0
    return float((k - 1 + frac) / sample_rate)
