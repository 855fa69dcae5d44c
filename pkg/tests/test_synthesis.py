import numpy as np
import pytest

from faradaysim import (
    ConfigurationError,
    EnsembleState,
    PowerDrift,
    evolve_atom_number,
    mean_decay_envelope,
    synthesize_run,
)
from faradaysim.synthesis import _sample_decay_segment

from conftest import make_run


class TestEvolveAtomNumber:
    def test_lossless_is_identity(self, rng):
        for dt in (1e-6, 1.0, 100.0):
            assert evolve_atom_number(1234, 0.0, dt, rng) == 1234

    def test_empty_stays_empty(self, rng):
        assert evolve_atom_number(0, 5.0, 1.0, rng) == 0

    def test_result_never_exceeds_input(self, rng):
        for _ in range(100):
            assert evolve_atom_number(1000, 2.0, 0.1, rng) <= 1000

    def test_monte_carlo_mean_against_binomial(self, rng):
        # gamma*dt = ln 2 -> survival p = 1/2; mean of 1e4 draws should sit
        # within 5 sigma_mean = 5*sqrt(n p (1-p))/sqrt(draws) = 25 of n/2.
        n, draws = 1_000_000, 10_000
        samples = np.array(
            [evolve_atom_number(n, np.log(2.0), 1.0, rng) for _ in range(draws)]
        )
        sigma_mean = np.sqrt(n * 0.25 / draws)
        assert abs(samples.mean() - n / 2) < 5 * sigma_mean
        # variance sanity: chi^2 spread is ~1.4% at 1e4 draws, allow 10%
        assert samples.var(ddof=1) == pytest.approx(n * 0.25, rel=0.1)


class TestDecaySegmentSampler:
    def test_matches_binomial_chain_moments(self):
        # At step k the survivor count is Binomial(n0, exp(-gamma dt k)).
        n0, gamma, dt, steps, trials = 2000, 1.0, 0.01, 100, 3000
        checkpoints = [9, 49, 99]
        counts = np.empty((trials, len(checkpoints)))
        for s in range(trials):
            traj = _sample_decay_segment(n0, gamma, dt, steps, np.random.default_rng(s))
            counts[s] = traj[checkpoints]
        for j, k in enumerate(checkpoints):
            p = np.exp(-gamma * dt * (k + 1))
            mean, var = n0 * p, n0 * p * (1 - p)
            se_mean = np.sqrt(var / trials)
            assert abs(counts[:, j].mean() - mean) < 5 * se_mean
            assert counts[:, j].var(ddof=1) == pytest.approx(var, rel=0.2)

    def test_monotone_non_increasing(self, rng):
        traj = _sample_decay_segment(5000, 3.0, 0.01, 200, rng)
        assert np.all(np.diff(traj) <= 0)

    def test_lossless_constant(self, rng):
        assert np.all(_sample_decay_segment(42, 0.0, 0.01, 10, rng) == 42)


class TestSynthesizeRun:
    def test_noiseless_limit_reproduces_observable(self):
        # With all noise off, the difference channel is exactly
        # eta*(flux_pol/2)*sin(2 g N cos(w t)) + offset at every sample.
        run = make_run(
            duration=0.05,
            dark=0.01,
            probe_kwargs={"polarimeter_offset": 3.0e5, "monitor_offset": 1.0e5},
        )
        diff, monitor, truth = synthesize_run(run)
        t = diff.times()
        probe = run.probe
        n_dark = run.n_dark
        theta = (
            run.coupling.coupling_strength
            * run.ensemble.atom_number
            * np.cos(2 * np.pi * run.top.rotation_frequency * t)
        )
        expected = (
            probe.detection_efficiency
            * 0.5
            * probe.polarimeter_flux
            * np.sin(2 * theta)
        )
        expected[:n_dark] = 0.0
        expected += probe.polarimeter_offset
        scale = probe.detection_efficiency * 0.5 * probe.polarimeter_flux
        assert np.max(np.abs(diff.values - expected)) <= 1e-9 * scale
        # monitor: eta*tap*flux + offset when the probe is on
        mon_expected = np.full_like(t, probe.monitor_offset)
        mon_expected[n_dark:] += probe.detection_efficiency * probe.monitor_flux
        assert np.allclose(monitor.values, mon_expected, rtol=1e-12)
        assert np.all(truth.values == run.ensemble.atom_number)

    def test_empty_ensemble_diff_has_zero_mean(self):
        run = make_run(
            atom_number=0.0, duration=0.8, dark=0.0, shot_noise=True,
            probe_kwargs={"polarimeter_offset": 2.0e5},
        )
        diff, _, _ = synthesize_run(run)
        n = len(diff)
        assert n >= 1e5
        sigma = np.sqrt(
            run.probe.detection_efficiency * run.probe.polarimeter_flux * run.sample_rate
        )
        se = sigma / np.sqrt(n)
        assert abs(diff.values.mean() - run.probe.polarimeter_offset) < 5 * se

    def test_dark_atom_shot_noise_variance(self):
        # Count-domain variance of the difference channel is the number of
        # detected photons per sample: var_rate * dt = eta * flux_pol.
        run = make_run(atom_number=0.0, duration=4.0, dark=0.0, shot_noise=True)
        diff, _, _ = synthesize_run(run)
        assert len(diff) == 1_000_000
        var_rate = np.var(diff.values - diff.values.mean())
        expected = run.probe.detection_efficiency * run.probe.polarimeter_flux
        assert var_rate / run.sample_rate == pytest.approx(expected, rel=0.03)

    def test_shot_noise_scaling_with_flux(self):
        # Log-log slope of dark-atom variance vs flux over a decade: 1 +- 0.05.
        fluxes = 2.5e9 * np.array([1.0, 2.0, 4.0, 8.0, 10.0])
        variances = []
        for k, flux in enumerate(fluxes):
            run = make_run(
                atom_number=0.0, duration=0.8, dark=0.0, shot_noise=True,
                photon_flux=flux, seed=k,
            )
            diff, _, _ = synthesize_run(run)
            variances.append(np.var(diff.values))
        slope = np.polyfit(np.log(fluxes), np.log(variances), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.05)

    def test_monitor_power_split(self):
        run = make_run(
            atom_number=0.0, duration=4.0, dark=0.0, shot_noise=True,
            probe_kwargs={"monitor_offset": 5.0e5},
        )
        _, monitor, _ = synthesize_run(run)
        mean = (monitor.values.mean() - run.probe.monitor_offset)
        expected = run.probe.detection_efficiency * run.probe.monitor_tap * run.probe.photon_flux
        assert mean == pytest.approx(expected, rel=1e-3)

    def test_deterministic_given_seed(self):
        run = make_run(stochastic=True, shot_noise=True, alpha=4e-10, seed=77,
                       duration=0.1)
        a = synthesize_run(run)
        b = synthesize_run(run)
        for s1, s2 in zip(a, b):
            assert np.array_equal(s1.values, s2.values)
        c = synthesize_run(make_run(stochastic=True, shot_noise=True, alpha=4e-10,
                                    seed=78, duration=0.1))
        assert not np.array_equal(a[0].values, c[0].values)

    def test_poisson_mode_moments(self):
        # ~44 photons per sample per arm: Poisson counts should reproduce the
        # configured mean and variance.
        run = make_run(
            atom_number=0.0, duration=2.0, dark=0.0, sample_rate=100000.0,
            rotation_frequency=2000.0, photon_flux=6.25e6,
            shot_noise=True, poisson_shot_noise=True,
        )
        diff, monitor, _ = synthesize_run(run)
        eta = run.probe.detection_efficiency
        dt = 1.0 / run.sample_rate
        expected_var = eta * run.probe.polarimeter_flux / dt
        assert np.var(diff.values) == pytest.approx(expected_var, rel=0.05)
        mon_mean = eta * run.probe.monitor_flux
        se = np.sqrt(mon_mean / dt / len(monitor))
        assert monitor.values.mean() == pytest.approx(mon_mean, abs=5 * se)

    def test_power_drift_modulates_both_channels(self):
        drift = PowerDrift(kind="sine", relative_amplitude=0.01, frequency=3.0)
        run = make_run(duration=0.5, dark=0.0, power_drift=drift)
        _, monitor, _ = synthesize_run(run)
        t = monitor.times()
        expected = (
            run.probe.detection_efficiency
            * run.probe.monitor_flux
            * (1.0 + 0.01 * np.sin(2 * np.pi * 3.0 * t))
        )
        assert np.allclose(monitor.values, expected, rtol=1e-12)

    def test_sample_rate_invariant_names_both_values(self):
        with pytest.raises(ConfigurationError) as err:
            make_run(sample_rate=50000.0, rotation_frequency=5000.0)
        assert "50000" in str(err.value) and "5000" in str(err.value)

    def test_duration_must_exceed_dark_time(self):
        with pytest.raises(ConfigurationError):
            make_run(duration=0.01, dark=0.02)


class TestMeanDecayEnvelope:
    def test_lossless_is_constant(self):
        run = make_run(duration=0.1, dark=0.0)
        env = mean_decay_envelope(run)
        assert np.all(env.values == run.ensemble.atom_number)

    def test_e_folding_time(self):
        gamma = 2.0
        run = make_run(
            duration=1.0, dark=0.0, alpha=0.0, gamma_bg=gamma,
            sample_rate=200000.0,
        )
        env = mean_decay_envelope(run)
        k = int(round(run.sample_rate / gamma))
        assert env.values[k] == pytest.approx(
            run.ensemble.atom_number / np.e, rel=1e-12
        )

    def test_piecewise_dark_rate(self):
        run = make_run(duration=0.2, dark=0.1, alpha=2.0e-10, gamma_bg=0.5)
        env = mean_decay_envelope(run)
        t_dark = run.n_dark / run.sample_rate
        rate_on = run.probe_on_rate
        t = env.times()
        expected = run.ensemble.atom_number * np.exp(
            -0.5 * np.minimum(t, t_dark) - rate_on * np.maximum(t - t_dark, 0.0)
        )
        assert np.allclose(env.values, expected, rtol=1e-12)

    def test_envelope_tracks_stochastic_mean(self):
        # 1000 stochastic trajectories: envelope within 5 standard errors
        # of the sample mean at a few checkpoints.
        base = make_run(
            atom_number=1000.0, duration=1.0, dark=0.0, sample_rate=2000.0,
            rotation_frequency=100.0, gamma_bg=2.0, stochastic=True,
        )
        env = mean_decay_envelope(base)
        checkpoints = [100, 500, 1000, 1999]
        trials = 1000
        counts = np.empty((trials, len(checkpoints)))
        for s in range(trials):
            run = make_run(
                atom_number=1000.0, duration=1.0, dark=0.0, sample_rate=2000.0,
                rotation_frequency=100.0, gamma_bg=2.0, stochastic=True, seed=s,
            )
            _, _, truth = synthesize_run(run)
            counts[s] = truth.values[checkpoints]
        for j, k in enumerate(checkpoints):
            se = counts[:, j].std(ddof=1) / np.sqrt(trials)
            assert abs(counts[:, j].mean() - env.values[k]) < 5 * se + 1e-9

    def test_loss_rate_composition(self):
        # Fitted decay rate of the noiseless ground truth equals
        # alpha*flux + gamma_bg to within 1e-6 relative.
        alpha, gamma_bg = 3.0e-10, 0.25
        run = make_run(duration=1.0, dark=0.0, alpha=alpha, gamma_bg=gamma_bg)
        _, _, truth = synthesize_run(run)
        t = truth.times()
        slope = np.polyfit(t, np.log(truth.values), 1)[0]
        expected = alpha * run.probe.photon_flux + gamma_bg
        assert -slope == pytest.approx(expected, rel=1e-6)
