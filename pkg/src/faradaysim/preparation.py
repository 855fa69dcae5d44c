"""Closed-loop atom-number preparation.

Repeatedly measure the ensemble with the minimally-destructive probe, then
remove a controlled fraction of the excess with an RF cut until the estimate
sits within tolerance of the target.  The system has no gain: overshooting
below the target is unrecoverable, so each cut removes only
``cut_undershoot_factor`` of the computed excess, and an estimate below the
target (outside tolerance) terminates the run as a failure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, InfeasibleTargetError
from .estimation import (
    NormalizationConfig,
    estimate_atom_number_stream,
    integrated_autocorrelation_time,
    step_response_settling_time,
)
from .lockin import LockInConfig
from .model import EnsembleState
from .synthesis import RunConfig, synthesize_run


@dataclass(frozen=True)
class PreparationPolicy:
    target_atom_number: float
    tolerance: float = 0.01
    max_iterations: int = 10
    probe_window: float = 8.0e-3
    cut_undershoot_factor: float = 0.8
    actuation_relative_error: float = 0.02
    initial_relative_spread: float = 0.1
    measurement_dark_time: float = 1.0e-2

    def __post_init__(self):
        if self.target_atom_number <= 0:
            raise ContractError(
                f"target_atom_number must be > 0, got {self.target_atom_number}"
            )
        if self.tolerance <= 0:
            raise ContractError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ContractError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.probe_window <= 0:
            raise ContractError(f"probe_window must be > 0, got {self.probe_window}")
        if not 0.0 < self.cut_undershoot_factor <= 1.0:
            raise ContractError(
                f"cut_undershoot_factor must be in (0, 1], got {self.cut_undershoot_factor}"
            )
        if self.actuation_relative_error < 0:
            raise ContractError(
                f"actuation_relative_error must be >= 0, got {self.actuation_relative_error}"
            )
        if self.initial_relative_spread < 0:
            raise ContractError(
                f"initial_relative_spread must be >= 0, got {self.initial_relative_spread}"
            )
        if self.measurement_dark_time <= 0:
            raise ContractError(
                f"measurement_dark_time must be > 0, got {self.measurement_dark_time}"
            )


@dataclass
class TrajectoryEntry:
    estimate: float
    estimate_err: float
    cut_fraction: float
    post_measure_truth: float
    post_cut_truth: float


@dataclass
class PreparationResult:
    final_atom_number: float
    final_estimate: float
    final_estimate_err: float
    iterations_used: int
    trajectory: list[TrajectoryEntry]
    success: bool
    diagnosis: str = ""


def measure_once(
    state: EnsembleState,
    run_template: RunConfig,
    lockin: LockInConfig,
    window: float,
    rng,
    dark_time: float = 1.0e-2,
) -> tuple[float, float, EnsembleState]:
    """One probe window: synthesize, demodulate, estimate.

    Returns the mean atom-number estimate over the settled portion of the
    window, its standard error (batch means over the correlated samples),
    and the post-window ensemble (the probe is minimally but not zero
    destructive).
    """
    if window < 10.0 * lockin.time_constant:
        raise ContractError(
            f"probe window {window} s is below 10 x lock-in time constant "
            f"({lockin.time_constant} s requires >= {10.0 * lockin.time_constant} s)"
        )
    seed = int(rng.integers(0, 2**63 - 1))
    run = replace(
        run_template,
        duration=dark_time + window,
        pre_probe_dark_time=dark_time,
        ensemble=state,
        seed=seed,
    )
    norm = NormalizationConfig(dark_segment=(0.0, dark_time))
    diff, monitor, truth = synthesize_run(run)
    estimate = estimate_atom_number_stream(diff, monitor, run, lockin, norm)
    settle = step_response_settling_time(lockin, 0.999)
    settled = estimate.slice_time(t0=estimate.start_time + settle)
    mean = float(settled.values.mean())

    # Standard error of the mean from the noise alone: remove the known decay
    # trend (linear over a short window), then batch means when at least 4
    # blocks of 10 time constants fit, otherwise the integrated
    # autocorrelation correction.
    fs_out = settled.sample_rate
    n = len(settled)
    tt = np.arange(n) / fs_out
    trend = np.polyval(np.polyfit(tt, settled.values, 1), tt)
    noise = settled.values - trend
    block = int(round(10.0 * lockin.time_constant * fs_out))
    if block >= 1 and n // block >= 4:
        n_blocks = n // block
        blocks = noise[: n_blocks * block].reshape(n_blocks, block).mean(axis=1)
        se = float(blocks.std(ddof=1) / np.sqrt(n_blocks))
    else:
        tau_int = integrated_autocorrelation_time(noise, fs_out)
        n_eff = max(n / max(2.0 * tau_int * fs_out, 1.0), 2.0)
        se = float(noise.std(ddof=1) / np.sqrt(n_eff))

    new_state = replace(state, atom_number=float(truth.meta["final_atom_number"]))
    return mean, se, new_state


def apply_cut(
    state: EnsembleState,
    fraction: float,
    policy: PreparationPolicy,
    rng,
    stochastic: bool = True,
) -> EnsembleState:
    """Remove a fraction of the ensemble with multiplicative actuation error.

    The realized fraction is fraction*(1 + eps), eps ~ N(0, actuation error),
    clamped to [0, 1); survival is a binomial draw on the integer atom number
    (or the rounded expectation when ``stochastic`` is off).
    """
    if not 0.0 <= fraction < 1.0:
        raise ContractError(f"cut fraction must be in [0, 1), got {fraction}")
    if fraction == 0.0:
        return state
    eps = rng.normal(0.0, policy.actuation_relative_error)
    realized = float(np.clip(fraction * (1.0 + eps), 0.0, 1.0 - 1e-12))
    n = int(round(state.atom_number))
    if stochastic:
        survivors = int(rng.binomial(n, 1.0 - realized))
    else:
        survivors = int(round(n * (1.0 - realized)))
    return replace(state, atom_number=float(survivors))


def feasible_target(initial: EnsembleState, policy: PreparationPolicy) -> bool:
    """No gain exists: the target must not exceed the plausible initial size."""
    bound = initial.atom_number * (1.0 + 3.0 * policy.initial_relative_spread)
    return policy.target_atom_number <= bound


def prepare(
    initial: EnsembleState,
    policy: PreparationPolicy,
    run_template: RunConfig,
    lockin: LockInConfig,
    seed: int,
) -> PreparationResult:
    """Measure-and-cut loop until the estimate is within tolerance of target.

    Within-shot feedback: the same ensemble is probed and cut repeatedly.
    Across-shot stabilization is expressible as max_iterations=1 plus
    external looping.
    """
    if not feasible_target(initial, policy):
        raise InfeasibleTargetError(
            f"target {policy.target_atom_number:.6g} exceeds the plausible initial "
            f"atom number {initial.atom_number:.6g} x (1 + 3 x "
            f"{policy.initial_relative_spread}) and no gain mechanism exists"
        )
    rng = np.random.default_rng(seed)
    target = policy.target_atom_number
    state = initial
    trajectory: list[TrajectoryEntry] = []
    success = False
    diagnosis = ""
    estimate = float("nan")
    err = float("nan")

    for _ in range(policy.max_iterations):
        estimate, err, state = measure_once(
            state,
            run_template,
            lockin,
            policy.probe_window,
            rng,
            dark_time=policy.measurement_dark_time,
        )
        post_measure = state.atom_number
        if abs(estimate - target) / target <= policy.tolerance:
            trajectory.append(
                TrajectoryEntry(estimate, err, 0.0, post_measure, state.atom_number)
            )
            success = True
            break
        if estimate < target:
            trajectory.append(
                TrajectoryEntry(estimate, err, 0.0, post_measure, state.atom_number)
            )
            diagnosis = (
                f"terminal undershoot: estimate {estimate:.6g} fell below target "
                f"{target:.6g} by more than the tolerance and atoms cannot be added"
            )
            break
        excess = (estimate - target) / estimate
        fraction = excess * policy.cut_undershoot_factor
        state = apply_cut(
            state, fraction, policy, rng, stochastic=run_template.loss.stochastic
        )
        trajectory.append(
            TrajectoryEntry(estimate, err, fraction, post_measure, state.atom_number)
        )
    else:
        diagnosis = f"no convergence within max_iterations={policy.max_iterations}"

    result = PreparationResult(
        final_atom_number=state.atom_number,
        final_estimate=estimate,
        final_estimate_err=err,
        iterations_used=len(trajectory),
        trajectory=trajectory,
        success=success,
        diagnosis=diagnosis,
    )
    # Success must agree with the tolerance predicate by construction.
    assert result.success == (
        abs(result.final_estimate - target) / target <= policy.tolerance
    ) or not trajectory
    return result
