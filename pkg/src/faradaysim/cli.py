"""Command-line entry point and experiment orchestration.

Subcommands: simulate, demodulate, estimate, prepare, sweep.  Outputs are
deterministic given the resolved spec (including seed); every emitted file
embeds the resolved spec and its hash.  Exit codes: configuration/contract
errors 2, estimation errors 3, preparation errors 4, I/O failures 5.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import io as iomod
from .errors import ConfigurationError, FaradaySimError
from .estimation import default_settle_skip, estimate_run, noise_diagnostics
from .lockin import demodulate, magnitude_phase
from .preparation import prepare
from .synthesis import synthesize_run

OUTPUT_DIR_ENV = "FARADAYSIM_OUTPUT_DIR"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faradaysim",
        description=(
            "Simulate and analyse a minimally-destructive Faraday atom-number "
            "measurement chain"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("simulate", "synthesize raw detector streams for one run"),
        ("demodulate", "lock-in demodulate a recorded stream file"),
        ("estimate", "run the full estimation pipeline and decay fit"),
        ("prepare", "closed-loop preparation at a target atom number"),
        ("sweep", "repeat simulate+estimate over a parameter axis"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="YAML configuration file (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--input", help="input stream file (demodulate) or directory (estimate)")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry by dotted path (repeatable)",
        )
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def load_spec(args) -> cfgmod.ExperimentSpec:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        cfg = cfgmod.parse_config(text)
        cfg_dict = cfgmod.spec_to_dict(cfg)
        if cfg_dict.get("command") != args.command:
            raise ConfigurationError(
                f"config declares command {cfg_dict.get('command')!r} but the "
                f"{args.command!r} subcommand was invoked"
            )
    else:
        cfg_dict = cfgmod.default_config_dict(args.command)
    cfg_dict["command"] = args.command
    if args.override:
        cfg_dict = cfgmod.apply_overrides(cfg_dict, args.override)
    if args.seed is not None:
        cfg_dict.setdefault("run", {})["seed"] = args.seed
    if args.input is not None:
        cfg_dict["input_path"] = args.input
    out = args.out or os.environ.get(OUTPUT_DIR_ENV)
    if out:
        cfg_dict["output_dir"] = out
    return cfgmod.build_spec(cfg_dict)


def _fit_sections(record, spec_text=None) -> dict:
    sections = {
        "fit": {
            "fitted_n0_atoms": record.fitted_n0,
            "fitted_n0_err_atoms": record.fitted_n0_err,
            "fitted_gamma_per_s": record.fitted_gamma,
            "fitted_gamma_err_per_s": record.fitted_gamma_err,
            "residual_rms_atoms": record.residual_rms,
            "fit_start_time_s": record.meta["fit_start_time"],
            "n_fit_samples": record.meta["n_fit_samples"],
            "covariance_inflation": record.meta["covariance_inflation"],
        }
    }
    if record.noise_report:
        sections["noise"] = dict(record.noise_report)
    return sections


def _cmd_simulate(spec, out_dir: Path, quiet: bool) -> dict:
    spec_text = cfgmod.emit_config(spec)
    diff, monitor, truth = synthesize_run(spec.run)
    paths = {}
    for stream in (diff, monitor, truth):
        path = out_dir / f"{stream.channel}.csv"
        iomod.write_stream(path, stream, spec_text=spec_text, seed=spec.run.seed)
        paths[stream.channel] = path
    if not quiet:
        print(f"simulate: wrote {len(paths)} streams to {out_dir}")
    return paths


def _cmd_demodulate(spec, out_dir: Path, quiet: bool) -> dict:
    spec_text = cfgmod.emit_config(spec)
    stream = iomod.read_stream(spec.input_path)
    i_s, q_s = demodulate(stream, spec.lockin)
    mag, ph = magnitude_phase(i_s, q_s)
    paths = {}
    for s in (i_s, q_s, mag, ph):
        path = out_dir / f"{s.channel}.csv"
        iomod.write_stream(path, s, spec_text=spec_text)
        paths[s.channel] = path
    if not quiet:
        print(f"demodulate: wrote I/Q/magnitude/phase to {out_dir}")
    return paths


def _load_or_synthesize(spec):
    if spec.input_path:
        base = Path(spec.input_path)
        diff = iomod.read_stream(base / "polarimeter_diff.csv")
        monitor = iomod.read_stream(base / "power_monitor.csv")
    else:
        diff, monitor, _ = synthesize_run(spec.run)
    return diff, monitor


def _cmd_estimate(spec, out_dir: Path, quiet: bool) -> dict:
    spec_text = cfgmod.emit_config(spec)
    diff, monitor = _load_or_synthesize(spec)
    record = estimate_run(
        diff,
        monitor,
        spec.run,
        spec.lockin,
        spec.normalization,
        settle_skip=spec.estimation.settle_skip,
        weighting=spec.estimation.weighting,
    )
    est_path = out_dir / "atom_number_estimate.csv"
    iomod.write_stream(
        est_path, record.atom_number_estimate, spec_text=spec_text, seed=spec.run.seed
    )
    report_path = out_dir / "report.txt"
    iomod.write_report(report_path, _fit_sections(record), spec_text=spec_text)
    if not quiet:
        print(
            f"estimate: N0 = {record.fitted_n0:.6g} +- {record.fitted_n0_err:.3g}, "
            f"gamma = {record.fitted_gamma:.6g} +- {record.fitted_gamma_err:.3g} /s"
        )
    return {"estimate": est_path, "report": report_path, "record": record}


def _cmd_prepare(spec, out_dir: Path, quiet: bool) -> dict:
    spec_text = cfgmod.emit_config(spec)
    result = prepare(
        spec.run.ensemble, spec.policy, spec.run, spec.lockin, seed=spec.run.seed
    )
    report_path = out_dir / "report.txt"
    iomod.write_report(
        report_path,
        {
            "preparation": {
                "success": result.success,
                "iterations_used": result.iterations_used,
                "final_atom_number_atoms": result.final_atom_number,
                "final_estimate_atoms": result.final_estimate,
                "final_estimate_err_atoms": result.final_estimate_err,
                "target_atom_number_atoms": spec.policy.target_atom_number,
                "tolerance": spec.policy.tolerance,
                "diagnosis": result.diagnosis or "ok",
            }
        },
        spec_text=spec_text,
    )
    traj_path = out_dir / "trajectory.csv"
    iomod.write_table(
        traj_path,
        [
            "iteration",
            "estimate_atoms",
            "estimate_err_atoms",
            "cut_fraction",
            "post_measure_truth_atoms",
            "post_cut_truth_atoms",
        ],
        [
            (k + 1, e.estimate, e.estimate_err, e.cut_fraction, e.post_measure_truth, e.post_cut_truth)
            for k, e in enumerate(result.trajectory)
        ],
        spec_text=spec_text,
    )
    if not quiet:
        state = "succeeded" if result.success else f"failed ({result.diagnosis})"
        print(f"prepare: {state} after {result.iterations_used} iterations")
    return {"report": report_path, "trajectory": traj_path, "result": result}


def _cmd_sweep(spec, out_dir: Path, quiet: bool) -> dict:
    spec_text = cfgmod.emit_config(spec)
    base_seed = spec.run.seed
    rows = []
    g_eff = None
    for i_value, value in enumerate(spec.sweep.values):
        run_value = cfgmod.replace_run_parameter(spec.run, spec.sweep.parameter, value)
        gammas, n0s, variances = [], [], []
        g_eff = run_value.coupling.at_detuning(run_value.probe.detuning).coupling_strength
        for i_seed in range(spec.sweep.seeds_per_value):
            seed = int(
                np.random.SeedSequence([base_seed, i_value, i_seed]).generate_state(
                    1, np.uint64
                )[0]
            )
            run_k = replace(run_value, seed=seed)
            diff, monitor, _ = synthesize_run(run_k)
            record = estimate_run(
                diff,
                monitor,
                run_k,
                spec.lockin,
                spec.normalization,
                settle_skip=spec.estimation.settle_skip,
                weighting=spec.estimation.weighting,
            )
            gammas.append(record.fitted_gamma)
            n0s.append(record.fitted_n0)
            variances.append(record.residual_rms**2)
        mean_var = float(np.mean(variances))
        rows.append(
            (
                spec.sweep.parameter,
                value,
                spec.sweep.seeds_per_value,
                float(np.mean(n0s)),
                float(np.mean(gammas)),
                float(np.std(gammas, ddof=1)) if len(gammas) > 1 else 0.0,
                mean_var,
                mean_var * g_eff**2,
            )
        )
        if not quiet:
            print(f"sweep: {spec.sweep.parameter} = {value:.6g} done")
    summary_path = out_dir / "summary.csv"
    iomod.write_table(
        summary_path,
        [
            "parameter",
            "value",
            "seeds",
            "mean_fitted_n0_atoms",
            "mean_fitted_gamma_per_s",
            "sd_fitted_gamma_per_s",
            "mean_residual_variance_atoms2",
            "mean_angle_referred_variance_rad2",
        ],
        rows,
        spec_text=spec_text,
    )
    return {"summary": summary_path, "rows": rows}


def run_experiment(spec: cfgmod.ExperimentSpec, quiet: bool = False) -> dict:
    """Execute a validated spec; returns the artifact paths."""
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dispatch = {
        "simulate": _cmd_simulate,
        "demodulate": _cmd_demodulate,
        "estimate": _cmd_estimate,
        "prepare": _cmd_prepare,
        "sweep": _cmd_sweep,
    }
    return dispatch[spec.command](spec, out_dir, quiet)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = load_spec(args)
        run_experiment(spec, quiet=args.quiet)
    except FaradaySimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
