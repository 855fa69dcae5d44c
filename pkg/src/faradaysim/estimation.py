"""From raw detector streams to physics: offsets, normalization, atom number,
decay fit and noise budget.

Pipeline order mirrors the hardware chain: estimate DC offsets on the dark
segment, divide the difference channel by the power-monitor moving average
(rescaled to the polarimeter-arm flux), invert the sine observable to a
rotation angle, lock-in demodulate at the trap rotation frequency, convert
the carrier amplitude to atoms, then fit a single exponential decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateFitError,
    EstimationError,
    FitConvergenceError,
)
from .lockin import (
    LockInConfig,
    cascade_autocorr_time,
    cascade_enbw,
    cascade_noise_gain,
    demodulate,
    magnitude_phase,
    step_response_settling_time,
)
from .model import CouplingModel, ProbeDetectorConfig
from .streams import SampleStream
from .synthesis import RunConfig


@dataclass(frozen=True)
class NormalizationConfig:
    """Moving-average window (s) for the power monitor and the dark interval
    (absolute start/end times, s) used for offset estimation."""

    dark_segment: tuple[float, float]
    moving_average_window: float = 1.0e-2

    def __post_init__(self):
        if self.moving_average_window <= 0:
            raise ConfigurationError(
                f"moving_average_window must be > 0, got {self.moving_average_window}"
            )
        t0, t1 = self.dark_segment
        if not t1 > t0:
            raise ConfigurationError(
                f"dark_segment must be a non-empty interval, got ({t0}, {t1})"
            )


@dataclass
class MeasurementRecord:
    """Per-run estimate of N(t) with fitted decay parameters and noise budget."""

    atom_number_estimate: SampleStream
    fitted_n0: float
    fitted_n0_err: float
    fitted_gamma: float
    fitted_gamma_err: float
    residual_rms: float
    noise_report: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def remove_offset(stream: SampleStream, cfg: NormalizationConfig) -> SampleStream:
    """Subtract the dark-segment mean; the value is recorded in stream meta."""
    t0, t1 = cfg.dark_segment
    t = stream.times()
    mask = (t >= t0) & (t < t1)
    if not mask.any():
        raise ContractError(
            f"dark segment [{t0}, {t1}) contains no samples of stream "
            f"starting at {stream.start_time}"
        )
    offset = float(stream.values[mask].mean())
    out = replace(stream, values=stream.values - offset, meta=dict(stream.meta))
    out.meta["offset_removed"] = offset
    return out


def _centered_moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving mean with truncated edges (odd window)."""
    n = values.size
    half = window // 2
    csum = np.concatenate(([0.0], np.cumsum(values)))
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def normalize_power(
    diff: SampleStream,
    monitor: SampleStream,
    cfg: NormalizationConfig,
    probe: ProbeDetectorConfig,
) -> SampleStream:
    """Power-normalized rotation angle vs time.

    The monitor moving average, rescaled from the tap fraction to the
    polarimeter-arm flux via (1-tap)/tap, estimates eta*flux_pol(t); the
    sine observable is then inverted exactly,
    theta = arcsin(2*diff/(eta*flux_pol))/2, which reduces to the first-order
    division diff/(eta*flux_pol) for small angles.
    """
    if len(diff) != len(monitor):
        raise ContractError(f"stream length mismatch: {len(diff)} vs {len(monitor)}")
    if diff.sample_rate != monitor.sample_rate:
        raise ContractError(
            f"sample-rate mismatch: {diff.sample_rate} vs {monitor.sample_rate}"
        )
    for s, name in ((diff, "difference"), (monitor, "monitor")):
        if "offset_removed" not in s.meta:
            raise ContractError(f"{name} stream has not been offset-removed")

    window = int(round(cfg.moving_average_window * monitor.sample_rate))
    if window < 10:
        raise ConfigurationError(
            f"moving_average_window {cfg.moving_average_window} s spans only "
            f"{window} samples at {monitor.sample_rate} Hz (need >= 10)"
        )
    window |= 1  # centered window

    eta = probe.detection_efficiency
    tap = probe.monitor_tap
    monitor_ma = _centered_moving_average(monitor.values, window)
    flux_pol_hat = monitor_ma * (1.0 - tap) / (tap * eta)
    if np.any(flux_pol_hat <= 0):
        raise EstimationError(
            "monitor moving average implies non-positive polarimeter flux; "
            "check offsets and dark segment"
        )
    sine = np.clip(diff.values / (eta * flux_pol_hat) * 2.0, -1.0, 1.0)
    theta = 0.5 * np.arcsin(sine)
    out = SampleStream(
        diff.sample_rate,
        diff.start_time,
        "rotation_angle",
        theta,
        meta={"moving_average_window_samples": window},
    )
    return out


def atoms_from_angle(angle: SampleStream, coupling: CouplingModel) -> SampleStream:
    """Convert a demodulated carrier amplitude (rad) to atom number.

    ``coupling`` must be the effective coupling at the probe detuning used.
    """
    values = angle.values / coupling.coupling_strength
    return SampleStream(
        angle.sample_rate,
        angle.start_time,
        "atom_number_estimate",
        values,
        meta=dict(angle.meta),
    )


def normalized_autocorrelation(values: np.ndarray, max_lag: int) -> np.ndarray:
    """Autocorrelation of the demeaned series for lags 0..max_lag (FFT-based)."""
    x = np.asarray(values, dtype=float)
    x = x - x.mean()
    n = x.size
    m = int(2 ** np.ceil(np.log2(2 * n)))
    spec = np.abs(np.fft.rfft(x, m)) ** 2
    acf = np.fft.irfft(spec)[: max_lag + 1]
    if acf[0] <= 0:
        return np.zeros(max_lag + 1)
    return acf / acf[0]


def autocorrelation_time(values: np.ndarray, sample_rate: float) -> float:
    """Lag (s) where the normalized autocorrelation first falls to 1/e."""
    max_lag = max(2, values.size // 2)
    acf = normalized_autocorrelation(values, max_lag)
    target = np.exp(-1.0)
    below = np.nonzero(acf < target)[0]
    if below.size == 0:
        return max_lag / sample_rate
    k = int(below[0])
    if k == 0:
        return 0.0
    frac = (acf[k - 1] - target) / (acf[k - 1] - acf[k])
    return float((k - 1 + frac) / sample_rate)


def integrated_autocorrelation_time(values: np.ndarray, sample_rate: float) -> float:
    """Integrated autocorrelation time (s): dt*(1/2 + sum of acf until it
    drops below 0.05).  Used to scale fit covariances for correlated residuals."""
    n = values.size
    max_lag = max(2, min(n // 4, 4096))
    acf = normalized_autocorrelation(values, max_lag)
    total = 0.5
    for k in range(1, max_lag + 1):
        if acf[k] < 0.05:
            break
        total += acf[k]
    return float(total / sample_rate)


def fit_decay(
    estimate: SampleStream,
    settle_skip: float,
    weighting: str = "uniform",
    max_iterations: int = 100,
    step_tolerance: float = 1.0e-9,
) -> MeasurementRecord:
    """Weighted nonlinear least squares of N(t) = N0 * exp(-gamma * t).

    Initialization is a log-linear regression on positive samples, followed
    by damped Gauss-Newton steps (normal equations with multiplicative
    damping adaptation).  Time is measured from the first sample after
    ``settle_skip``, so ``fitted_n0`` refers to the start of the fitted
    segment.  Parameter uncertainties come from the residual-scaled inverse
    normal matrix, inflated by the residual integrated-autocorrelation factor
    so they stay honest for lock-in-correlated noise.
    """
    if weighting not in ("uniform", "amplitude"):
        raise ContractError(f"weighting must be 'uniform' or 'amplitude', got {weighting!r}")
    if settle_skip < 0:
        raise ContractError(f"settle_skip must be >= 0, got {settle_skip}")
    fs = estimate.sample_rate
    k0 = int(np.ceil(settle_skip * fs - 1e-9))
    y = estimate.values[k0:]
    if y.size < 50:
        raise ContractError(
            f"fit needs >= 50 samples after the settle skip, got {y.size}"
        )
    if np.all(y == y[0]):
        raise DegenerateFitError("all samples equal; decay model is unconstrained")
    t = np.arange(y.size) / fs

    pos = y > 0
    if np.count_nonzero(pos) < 2:
        raise DegenerateFitError("fewer than two positive samples; cannot initialize fit")
    slope, intercept = np.polyfit(t[pos], np.log(y[pos]), 1)
    n0 = float(np.exp(intercept))
    gamma = float(max(-slope, 0.0))

    def model_and_jacobian(p):
        n0_, g_ = p
        decay = np.exp(-g_ * t)
        m = n0_ * decay
        jac = np.column_stack([decay, -n0_ * t * decay])
        return m, jac

    if weighting == "amplitude":
        # Variance proportional to amplitude: weight residuals by 1/sqrt(|y|).
        scale = np.sqrt(np.clip(np.abs(y), np.abs(y).max() * 1e-9, None))
        w = 1.0 / scale
    else:
        w = np.ones_like(y)

    params = np.array([n0, gamma])
    # Convergence scales: an amplitude below the data scale or a rate below
    # 1/span is indistinguishable from zero on this window.
    scales = np.array([max(float(np.max(np.abs(y))), 1e-300), 1.0 / t[-1]])
    m, jac = model_and_jacobian(params)
    resid = w * (y - m)
    sse = float(resid @ resid)
    lam = 1.0e-3
    converged = False
    for _ in range(max_iterations):
        jw = jac * w[:, None]
        jtj = jw.T @ jw
        rhs = jw.T @ resid
        accepted = False
        rel_step = np.inf
        for _ in range(40):
            damped = jtj + lam * np.diag(np.diag(jtj))
            try:
                step = np.linalg.solve(damped, rhs)
            except np.linalg.LinAlgError:
                lam *= 4.0
                continue
            rel_step = np.max(np.abs(step) / np.maximum(np.abs(params), scales))
            trial = params + step
            m_t, jac_t = model_and_jacobian(trial)
            resid_t = w * (y - m_t)
            sse_t = float(resid_t @ resid_t)
            if np.isfinite(sse_t) and sse_t <= sse:
                params, m, jac, resid, sse = trial, m_t, jac_t, resid_t, sse_t
                lam = max(lam / 4.0, 1.0e-12)
                accepted = True
                break
            lam *= 4.0
        if rel_step < step_tolerance:
            # At the optimum: proposed moves are below tolerance whether or
            # not the last one still reduced the SSE.
            converged = True
            break
        if not accepted:
            break
    if not converged:
        raise FitConvergenceError(
            "decay fit did not converge",
            last_params=tuple(params),
            last_residual_rms=float(np.sqrt(sse / y.size)),
        )

    n0_fit, gamma_fit = params
    if n0_fit <= 0:
        raise DegenerateFitError(f"fit collapsed to non-positive amplitude {n0_fit}")
    gamma_fit = max(float(gamma_fit), 0.0)

    dof = max(y.size - 2, 1)
    resid_unw = y - m
    s2 = sse / dof
    jw = jac * w[:, None]
    cov = s2 * np.linalg.inv(jw.T @ jw)
    # Correlated residuals carry fewer effective samples.
    tau_int = integrated_autocorrelation_time(resid_unw, fs)
    inflation = max(1.0, 2.0 * tau_int * fs)
    cov = cov * inflation
    n0_err, gamma_err = np.sqrt(np.diag(cov))

    record = MeasurementRecord(
        atom_number_estimate=estimate,
        fitted_n0=float(n0_fit),
        fitted_n0_err=float(n0_err),
        fitted_gamma=gamma_fit,
        fitted_gamma_err=float(gamma_err),
        residual_rms=float(np.sqrt(np.mean(resid_unw**2))),
        meta={
            "settle_skip": settle_skip,
            "fit_start_time": estimate.start_time + k0 / fs,
            "n_fit_samples": int(y.size),
            "weighting": weighting,
            "covariance_inflation": float(inflation),
        },
    )
    return record


def _fit_residuals(record: MeasurementRecord) -> tuple[np.ndarray, float]:
    """Residuals about the fitted decay over the fitted segment, and fs."""
    stream = record.atom_number_estimate
    fs = stream.sample_rate
    k0 = int(round((record.meta["fit_start_time"] - stream.start_time) * fs))
    y = stream.values[k0:]
    t = np.arange(y.size) / fs
    model = record.fitted_n0 * np.exp(-record.fitted_gamma * t)
    return y - model, fs


def predicted_shot_noise_variance(run: RunConfig, lockin: LockInConfig) -> float:
    """Photon-shot-noise variance of the atom-number estimate (atoms^2).

    Per-sample angle noise fs/(eta*flux_pol) through the factor-2 mixer and
    the filter cascade gives 2 * sigma^2 * sum(h^2), referred to atoms by the
    effective coupling.
    """
    probe = run.probe
    g_eff = run.coupling.at_detuning(probe.detuning).coupling_strength
    sigma_theta2 = run.sample_rate / (
        probe.detection_efficiency * probe.polarimeter_flux
    )
    gain = cascade_noise_gain(lockin, run.sample_rate)
    return 2.0 * sigma_theta2 * gain / g_eff**2


def predicted_electronic_noise_variance(run: RunConfig, lockin: LockInConfig) -> float:
    """Electronic-noise variance of the atom-number estimate (atoms^2)."""
    probe = run.probe
    if probe.electronic_noise_density == 0:
        return 0.0
    g_eff = run.coupling.at_detuning(probe.detuning).coupling_strength
    sigma_rate2 = probe.electronic_noise_density**2 * run.sample_rate / 2.0
    sigma_theta2 = sigma_rate2 / (probe.detection_efficiency * probe.polarimeter_flux) ** 2
    gain = cascade_noise_gain(lockin, run.sample_rate)
    return 2.0 * sigma_theta2 * gain / g_eff**2


def predicted_loss_noise_variance(run: RunConfig, span: float, mean_n: float) -> float:
    """Stochastic atom-loss contribution to residual variance (atoms^2).

    The death process is an integrated white noise (increment variance
    gamma*N per unit time); after removing a fitted two-parameter trend over
    a span T the expected mean-square residual is about gamma*N*T/15
    (detrended-random-walk result, numerically verified).
    """
    if not run.loss.stochastic:
        return 0.0
    gamma = run.probe_on_rate
    return gamma * mean_n * span / 15.0


def noise_diagnostics(
    estimate: SampleStream,
    record: MeasurementRecord,
    run: RunConfig,
    lockin: LockInConfig,
) -> dict:
    """Attribute residual variance to photon shot noise, atom loss and
    electronics, and compare the residual correlation time with the filter
    cascade.  Fills and returns ``record.noise_report``."""
    resid, fs = _fit_residuals(record)
    span = resid.size / fs
    measured = float(np.var(resid))
    shot = predicted_shot_noise_variance(run, lockin) if run.shot_noise else 0.0
    electronic = predicted_electronic_noise_variance(run, lockin)
    mean_n = float(record.fitted_n0 * (1 - np.exp(-record.fitted_gamma * span)) /
                   (record.fitted_gamma * span)) if record.fitted_gamma > 0 else record.fitted_n0
    loss = predicted_loss_noise_variance(run, span, mean_n)
    report = {
        "measured_residual_variance_atoms2": measured,
        "photon_shot_variance_atoms2": shot,
        "atom_loss_variance_atoms2": loss,
        "electronic_variance_atoms2": electronic,
        "other_variance_atoms2": measured - shot - loss - electronic,
        "equivalent_noise_bandwidth_hz": cascade_enbw(lockin),
        "residual_autocorr_time_s": autocorrelation_time(resid, fs),
        "filter_autocorr_time_s": cascade_autocorr_time(lockin, run.sample_rate),
        "lockin_settling_time_s": step_response_settling_time(lockin, 1 - np.exp(-1)),
    }
    record.noise_report = report
    return report


def default_settle_skip(lockin: LockInConfig) -> float:
    """Default pre-fit skip: the cascade's 99.9% step-settling time."""
    return step_response_settling_time(lockin, 0.999)


def estimate_atom_number_stream(
    diff: SampleStream,
    monitor: SampleStream,
    run: RunConfig,
    lockin: LockInConfig,
    norm: NormalizationConfig,
) -> SampleStream:
    """Stream-level pipeline: offsets -> normalization -> lock-in -> atoms.

    Returns the atom-number estimate sampled at the (decimated) lock-in
    output rate, starting at the end of the dark segment.
    """
    t0, t1 = norm.dark_segment
    if run.pre_probe_dark_time <= 0:
        raise ConfigurationError(
            "estimation needs a pre-probe dark segment for offset removal"
        )
    if t0 < 0 or t1 > run.pre_probe_dark_time + 1e-12:
        raise ConfigurationError(
            f"dark_segment ({t0}, {t1}) must lie within the pre-probe dark "
            f"time [0, {run.pre_probe_dark_time}]"
        )
    diff0 = remove_offset(diff, norm)
    mon0 = remove_offset(monitor, norm)
    t_on = run.n_dark / run.sample_rate
    diff_on = diff0.slice_time(t0=t_on)
    mon_on = mon0.slice_time(t0=t_on)
    theta = normalize_power(diff_on, mon_on, norm, run.probe)
    i_s, q_s = demodulate(theta, lockin)
    mag, _ = magnitude_phase(i_s, q_s)
    coupling_eff = run.coupling.at_detuning(run.probe.detuning)
    return atoms_from_angle(mag, coupling_eff)


def estimate_run(
    diff: SampleStream,
    monitor: SampleStream,
    run: RunConfig,
    lockin: LockInConfig,
    norm: NormalizationConfig,
    settle_skip: float | None = None,
    weighting: str = "uniform",
) -> MeasurementRecord:
    """Full estimation pipeline ending in a decay fit and noise budget."""
    estimate = estimate_atom_number_stream(diff, monitor, run, lockin, norm)
    if settle_skip is None:
        settle_skip = default_settle_skip(lockin)
    record = fit_decay(estimate, settle_skip, weighting=weighting)
    noise_diagnostics(estimate, record, run, lockin)
    return record
