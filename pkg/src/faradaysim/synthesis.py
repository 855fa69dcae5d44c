"""Raw detector-stream synthesis for a full experimental run.

Produces the balanced-polarimeter difference channel and the power-monitor
channel on a uniform sample grid, driven by stochastic atom loss, photon
shot noise (Gaussian approximation by default, Poisson counts optionally)
and white electronic noise.  The first ``pre_probe_dark_time`` seconds have
the probe off: detector channels carry only offsets and electronic noise,
and the ensemble decays at the background rate only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError
from .model import (
    CouplingModel,
    EnsembleState,
    ProbeDetectorConfig,
    TopFieldConfig,
)
from .streams import SampleStream


@dataclass(frozen=True)
class LossModel:
    """Exponential atom loss: probe-induced rate alpha*flux plus background.

    With ``stochastic`` set, survival over each sample interval is a binomial
    draw; otherwise the trajectory follows the expectation
    N(t) = N0 * exp(-rate * t) exactly at sample points.
    """

    absorption_loss_coefficient: float = 0.0
    background_loss_rate: float = 0.0
    stochastic: bool = True

    def __post_init__(self):
        if self.absorption_loss_coefficient < 0:
            raise ConfigurationError(
                "absorption_loss_coefficient must be >= 0, got "
                f"{self.absorption_loss_coefficient}"
            )
        if self.background_loss_rate < 0:
            raise ConfigurationError(
                f"background_loss_rate must be >= 0, got {self.background_loss_rate}"
            )

    def total_rate(self, photon_flux: float) -> float:
        """Probe-on loss rate (1/s) at the given full-beam flux."""
        return self.absorption_loss_coefficient * photon_flux + self.background_loss_rate


@dataclass(frozen=True)
class PowerDrift:
    """Optional deterministic slow modulation of the probe flux.

    kind "sine": flux * (1 + amplitude*sin(2*pi*f*t + phase));
    kind "ramp": flux * (1 + amplitude * t / duration).
    """

    kind: str = "sine"
    relative_amplitude: float = 0.0
    frequency: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sine", "ramp"):
            raise ConfigurationError(f"drift kind must be 'sine' or 'ramp', got {self.kind!r}")
        if self.relative_amplitude < 0:
            raise ConfigurationError(
                f"relative_amplitude must be >= 0, got {self.relative_amplitude}"
            )
        if self.kind == "sine" and self.frequency <= 0:
            raise ConfigurationError(f"drift frequency must be > 0, got {self.frequency}")

    def factor(self, t: np.ndarray, duration: float) -> np.ndarray:
        if self.relative_amplitude == 0.0:
            return np.ones_like(t)
        if self.kind == "sine":
            return 1.0 + self.relative_amplitude * np.sin(
                2.0 * np.pi * self.frequency * t + self.phase
            )
        return 1.0 + self.relative_amplitude * t / duration


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to synthesize one experimental run."""

    duration: float
    sample_rate: float
    seed: int
    ensemble: EnsembleState
    top: TopFieldConfig
    coupling: CouplingModel
    probe: ProbeDetectorConfig
    loss: LossModel = field(default_factory=LossModel)
    pre_probe_dark_time: float = 0.0
    shot_noise: bool = True
    poisson_shot_noise: bool = False
    power_drift: PowerDrift | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigurationError(f"duration must be > 0, got {self.duration}")
        if self.sample_rate <= 0:
            raise ConfigurationError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.sample_rate < 20.0 * self.top.rotation_frequency:
            raise ConfigurationError(
                f"sample_rate {self.sample_rate} Hz is below 20 x TOP rotation "
                f"frequency ({self.top.rotation_frequency} Hz requires >= "
                f"{20.0 * self.top.rotation_frequency} Hz)"
            )
        if self.pre_probe_dark_time < 0:
            raise ConfigurationError(
                f"pre_probe_dark_time must be >= 0, got {self.pre_probe_dark_time}"
            )
        if self.duration <= self.pre_probe_dark_time:
            raise ConfigurationError(
                f"duration ({self.duration} s) must exceed pre_probe_dark_time "
                f"({self.pre_probe_dark_time} s)"
            )
        if self.seed < 0:
            raise ConfigurationError(f"seed must be a non-negative integer, got {self.seed}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def n_dark(self) -> int:
        return int(round(self.pre_probe_dark_time * self.sample_rate))

    @property
    def probe_on_rate(self) -> float:
        """Total loss rate while the probe illuminates the ensemble."""
        return self.loss.total_rate(self.probe.photon_flux)


def evolve_atom_number(n_current: int, gamma: float, dt: float, rng) -> int:
    """One binomial survival step: Binomial(n, exp(-gamma*dt)) draw.

    Works for any gamma*dt (survival probability is the exact exponential).
    """
    if n_current < 0:
        raise ContractError(f"n_current must be >= 0, got {n_current}")
    if gamma < 0:
        raise ContractError(f"gamma must be >= 0, got {gamma}")
    if dt <= 0:
        raise ContractError(f"dt must be > 0, got {dt}")
    n_current = int(n_current)
    if n_current == 0 or gamma == 0.0:
        return n_current
    p = np.exp(-gamma * dt)
    return int(rng.binomial(n_current, p))


def _sample_decay_segment(n0: int, gamma: float, dt: float, n_steps: int, rng) -> np.ndarray:
    """Atom count after each of ``n_steps`` binomial survival steps.

    Distribution-identical to iterating `evolve_atom_number` but O(deaths)
    instead of O(steps): the chain is exchangeable over atoms, so segment
    survivors are drawn first (one binomial), and each dying atom gets an
    i.i.d. truncated-geometric death step via inverse CDF.
    """
    if n_steps == 0:
        return np.zeros(0, dtype=np.int64)
    if n0 == 0 or gamma == 0.0:
        return np.full(n_steps, n0, dtype=np.int64)
    a = gamma * dt
    p_survive_all = np.exp(-a * n_steps)
    survivors = int(rng.binomial(n0, p_survive_all))
    deaths = n0 - survivors
    if deaths == 0:
        return np.full(n_steps, n0, dtype=np.int64)
    total_death_prob = -np.expm1(-a * n_steps)  # 1 - p^n, accurately
    u = rng.random(deaths)
    steps = np.ceil(np.log1p(-u * total_death_prob) / (-a)).astype(np.int64)
    np.clip(steps, 1, n_steps, out=steps)
    deaths_per_step = np.bincount(steps, minlength=n_steps + 1)[1:]
    return n0 - np.cumsum(deaths_per_step)


def _atom_trajectory(config: RunConfig, rng) -> tuple[np.ndarray, float]:
    """Ground-truth atom number at each sample time, plus the end-of-run count.

    Entry k is the count after k survival steps (sample times k/fs); the dark
    segment decays at the background rate only, the probe-on segment at the
    full rate.
    """
    n = config.n_samples
    n_dark = config.n_dark
    dt = 1.0 / config.sample_rate
    rate_dark = config.loss.background_loss_rate
    rate_on = config.probe_on_rate

    if config.loss.stochastic:
        n0 = int(round(config.ensemble.atom_number))
        traj = np.empty(n + 1, dtype=float)
        traj[0] = n0
        dark_part = _sample_decay_segment(n0, rate_dark, dt, n_dark, rng)
        traj[1 : n_dark + 1] = dark_part
        n_after_dark = int(dark_part[-1]) if n_dark else n0
        traj[n_dark + 1 :] = _sample_decay_segment(
            n_after_dark, rate_on, dt, n - n_dark, rng
        )
    else:
        t = np.arange(n + 1) * dt
        t_dark = n_dark * dt
        exponent = -rate_dark * np.minimum(t, t_dark) - rate_on * np.maximum(
            t - t_dark, 0.0
        )
        traj = config.ensemble.atom_number * np.exp(exponent)
    return traj[:n], float(traj[n])


def synthesize_run(
    config: RunConfig,
) -> tuple[SampleStream, SampleStream, SampleStream]:
    """Generate (polarimeter_diff, power_monitor, atom_number_truth) streams.

    Identical configs (including seed) give bit-identical streams.  The
    truth stream's ``meta["final_atom_number"]`` records the count after the
    full duration (one step past the last sample).
    """
    n = config.n_samples
    if n < 1:
        raise ConfigurationError("duration * sample_rate must round to >= 1 sample")
    fs = config.sample_rate
    dt = 1.0 / fs
    n_dark = config.n_dark
    rng = np.random.default_rng(config.seed)

    truth, final_n = _atom_trajectory(config, rng)

    t = np.arange(n) * dt
    probe = config.probe
    eta = probe.detection_efficiency
    drift = config.power_drift
    flux = probe.photon_flux * (
        drift.factor(t, config.duration) if drift is not None else 1.0
    )
    if np.isscalar(flux) or np.ndim(flux) == 0:
        flux = np.full(n, float(flux))
    flux_pol = (1.0 - probe.monitor_tap) * flux
    flux_mon = probe.monitor_tap * flux

    on = np.zeros(n, dtype=bool)
    on[n_dark:] = True

    coupling_eff = config.coupling.at_detuning(probe.detuning)
    phase = 2.0 * np.pi * config.top.rotation_frequency * t + config.top.initial_phase
    f_x = config.ensemble.spin_sign * truth * np.cos(phase)
    theta = coupling_eff.coupling_strength * f_x
    ideal_diff = 0.5 * flux_pol * np.sin(2.0 * theta)

    diff = np.where(on, eta * ideal_diff, 0.0)
    monitor = np.where(on, eta * flux_mon, 0.0)

    if config.shot_noise:
        if config.poisson_shot_noise:
            # Two physical detector arms: rates (flux_pol +- ideal_diff)/2.
            mean_plus = np.where(on, eta * 0.5 * (flux_pol + ideal_diff) * dt, 0.0)
            mean_minus = np.where(on, eta * 0.5 * (flux_pol - ideal_diff) * dt, 0.0)
            c_plus = rng.poisson(mean_plus)
            c_minus = rng.poisson(mean_minus)
            diff = np.where(on, (c_plus - c_minus) / dt, 0.0)
            c_mon = rng.poisson(np.where(on, eta * flux_mon * dt, 0.0))
            monitor = np.where(on, c_mon / dt, 0.0)
        else:
            # Gaussian approximation: count variance = detected photons per
            # sample, expressed as a rate (divide counts by dt).
            sigma_diff = np.sqrt(eta * flux_pol / dt)
            sigma_mon = np.sqrt(eta * flux_mon / dt)
            diff = diff + np.where(on, sigma_diff * rng.standard_normal(n), 0.0)
            monitor = monitor + np.where(on, sigma_mon * rng.standard_normal(n), 0.0)

    diff = diff + probe.polarimeter_offset
    monitor = monitor + probe.monitor_offset

    if probe.electronic_noise_density > 0:
        # White noise of one-sided density D over the Nyquist band fs/2.
        sigma_e = probe.electronic_noise_density * np.sqrt(fs / 2.0)
        diff = diff + sigma_e * rng.standard_normal(n)
        monitor = monitor + sigma_e * rng.standard_normal(n)

    diff_stream = SampleStream(fs, 0.0, "polarimeter_diff", diff)
    mon_stream = SampleStream(fs, 0.0, "power_monitor", monitor)
    truth_stream = SampleStream(
        fs, 0.0, "atom_number_truth", truth, meta={"final_atom_number": final_n}
    )
    return diff_stream, mon_stream, truth_stream


def mean_decay_envelope(config: RunConfig) -> SampleStream:
    """Expected atom number at every sample time (fitting oracle).

    N(t) = N0 * exp(-rate_bg * min(t, t_dark) - rate_on * max(t - t_dark, 0)).
    """
    n = config.n_samples
    dt = 1.0 / config.sample_rate
    t = np.arange(n) * dt
    t_dark = config.n_dark * dt
    exponent = -config.loss.background_loss_rate * np.minimum(t, t_dark)
    exponent -= config.probe_on_rate * np.maximum(t - t_dark, 0.0)
    values = config.ensemble.atom_number * np.exp(exponent)
    return SampleStream(config.sample_rate, 0.0, "atom_number_truth", values)
