import subprocess
import sys

import numpy as np
import pytest
import yaml

from faradaysim import ConfigurationError, SampleStream
from faradaysim.cli import main, run_experiment
from faradaysim.config import (
    apply_overrides,
    build_spec,
    default_config_dict,
    default_spec,
    emit_config,
    parse_config,
    replace_run_parameter,
)
from faradaysim.io import read_report, read_stream, write_stream


def fast_run_overrides():
    """Shrink the default run so CLI tests stay quick."""
    return {
        "run.duration": 0.15,
        "run.pre_probe_dark_time": 0.02,
        "normalization.dark_segment": [0.0, 0.02],
    }


def fast_config(command, **extra):
    cfg = default_config_dict(command)
    over = {**fast_run_overrides(), **extra}
    return apply_overrides(cfg, [f"{k}={yaml.safe_dump(v, default_flow_style=True).strip()}" for k, v in over.items()])


class TestParseConfig:
    def test_empty_document_lists_required_sections(self):
        with pytest.raises(ConfigurationError) as err:
            parse_config("")
        assert "required sections" in str(err.value)

    def test_unknown_key_rejected(self):
        cfg = default_config_dict("simulate")
        cfg["run"]["probe"]["flux_typo"] = 1.0
        with pytest.raises(ConfigurationError) as err:
            build_spec(cfg)
        assert "run.probe.flux_typo" in str(err.value)

    def test_sample_rate_invariant_names_both_values(self):
        cfg = default_config_dict("simulate")
        cfg["run"]["sample_rate"] = 40000.0
        with pytest.raises(ConfigurationError) as err:
            build_spec(cfg)
        msg = str(err.value)
        assert "40000" in msg and "5000" in msg

    def test_round_trip_identity(self):
        for command in ("simulate", "estimate", "prepare", "sweep"):
            spec = default_spec(command)
            again = parse_config(emit_config(spec))
            assert again == spec

    def test_bad_yaml_reports_parse_error(self):
        with pytest.raises(ConfigurationError) as err:
            parse_config("run: [unclosed")
        assert "parse error" in str(err.value)

    def test_command_required(self):
        with pytest.raises(ConfigurationError):
            build_spec({"output_dir": "x"})

    def test_sweep_parameter_path_must_exist(self):
        cfg = default_config_dict("sweep")
        cfg["sweep"]["parameter"] = "probe.nonexistent"
        with pytest.raises(ConfigurationError):
            build_spec(cfg)

    def test_overrides_apply_by_dotted_path(self):
        cfg = apply_overrides(default_config_dict("simulate"), ["run.seed=99"])
        assert build_spec(cfg).run.seed == 99

    def test_replace_run_parameter(self):
        run = default_spec("simulate").run
        run2 = replace_run_parameter(run, "probe.photon_flux", 5.0e9)
        assert run2.probe.photon_flux == 5.0e9
        assert run.probe.photon_flux == 2.5e9


class TestRunExperiment:
    def test_simulate_writes_streams_with_provenance(self, tmp_path):
        cfg = fast_config("simulate")
        cfg["output_dir"] = str(tmp_path / "sim")
        spec = build_spec(cfg)
        paths = run_experiment(spec, quiet=True)
        for channel in ("polarimeter_diff", "power_monitor", "atom_number_truth"):
            stream = read_stream(paths[channel])
            assert stream.channel == channel
            assert np.all(np.isfinite(stream.values))
            assert stream.meta["seed"] == spec.run.seed
        text = paths["polarimeter_diff"].read_text()
        assert "# spec_sha256:" in text and "# spec-begin" in text

    def test_stream_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        stream = SampleStream(5000.0, 0.25, "demod_i", rng.normal(0, 1, 500))
        path = tmp_path / "s.csv"
        write_stream(path, stream, seed=3)
        back = read_stream(path)
        assert np.array_equal(back.values, stream.values)
        assert back.sample_rate == stream.sample_rate
        assert back.start_time == stream.start_time

    def test_demodulate_zeros_gives_zero_iq(self, tmp_path):
        zeros = SampleStream(100000.0, 0.0, "polarimeter_diff", np.zeros(4000))
        src = tmp_path / "zeros.csv"
        write_stream(src, zeros)
        cfg = default_config_dict("demodulate")
        cfg["input_path"] = str(src)
        cfg["output_dir"] = str(tmp_path / "demod")
        paths = run_experiment(build_spec(cfg), quiet=True)
        for channel in ("demod_i", "demod_q"):
            assert np.all(read_stream(paths[channel]).values == 0.0)

    def test_estimate_from_simulated_files(self, tmp_path):
        sim_cfg = fast_config("simulate")
        sim_cfg["output_dir"] = str(tmp_path / "sim")
        run_experiment(build_spec(sim_cfg), quiet=True)
        est_cfg = fast_config("estimate")
        est_cfg["input_path"] = str(tmp_path / "sim")
        est_cfg["output_dir"] = str(tmp_path / "est")
        out = run_experiment(build_spec(est_cfg), quiet=True)
        report = read_report(out["report"])
        assert float(report["fit"]["fitted_n0_atoms"]) == pytest.approx(1.0e6, rel=0.05)
        assert "noise" in report
        est_stream = read_stream(out["estimate"])
        assert est_stream.channel == "atom_number_estimate"

    def test_prepare_writes_report_and_trajectory(self, tmp_path):
        cfg = default_config_dict("prepare")
        cfg["output_dir"] = str(tmp_path / "prep")
        out = run_experiment(build_spec(cfg), quiet=True)
        report = read_report(out["report"])
        assert report["preparation"]["success"] == "true"
        lines = out["trajectory"].read_text().splitlines()
        header = [l for l in lines if l and not l.startswith("#")][0]
        assert header.startswith("iteration,")

    def test_sweep_emits_summary(self, tmp_path):
        cfg = fast_config("sweep")
        cfg["sweep"] = {
            "parameter": "probe.photon_flux",
            "values": [2.5e9, 5.0e9],
            "seeds_per_value": 2,
        }
        cfg["output_dir"] = str(tmp_path / "sweep")
        out = run_experiment(build_spec(cfg), quiet=True)
        lines = [
            l for l in out["summary"].read_text().splitlines()
            if l and not l.startswith("#")
        ]
        assert lines[0].startswith("parameter,value,seeds,")
        assert len(lines) == 3


class TestMainExitCodes:
    def test_ok_run(self, tmp_path, capsys):
        code = main([
            "simulate", "--out", str(tmp_path / "o"), "--quiet",
            "--override", "run.duration=0.05",
            "--override", "run.pre_probe_dark_time=0.0",
        ])
        assert code == 0

    def test_config_error_is_exit_2(self, tmp_path, capsys):
        code = main([
            "simulate", "--out", str(tmp_path / "o"),
            "--override", "run.sample_rate=1000.0",
        ])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_estimation_error_is_exit_3(self, tmp_path, capsys):
        # A monitor stream that is pure offset makes the normalization flux
        # non-positive after offset removal.
        fs, n = 250000.0, 37500
        diff = SampleStream(fs, 0.0, "polarimeter_diff", np.ones(n))
        monitor = SampleStream(fs, 0.0, "power_monitor", np.full(n, 7.0))
        src = tmp_path / "sim"
        src.mkdir()
        write_stream(src / "polarimeter_diff.csv", diff)
        write_stream(src / "power_monitor.csv", monitor)
        code = main([
            "estimate", "--input", str(src), "--out", str(tmp_path / "e"),
            "--override", "run.duration=0.15",
            "--override", "run.pre_probe_dark_time=0.02",
            "--override", "normalization.dark_segment=[0.0, 0.02]",
        ])
        assert code == 3

    def test_preparation_error_is_exit_4(self, tmp_path, capsys):
        code = main([
            "prepare", "--out", str(tmp_path / "p"),
            "--override", "policy.target_atom_number=2.0e6",
        ])
        assert code == 4

    def test_io_error_is_exit_5(self, tmp_path, capsys):
        code = main([
            "demodulate", "--input", str(tmp_path / "missing.csv"),
            "--out", str(tmp_path / "d"),
        ])
        assert code == 5

    def test_config_file_and_command_mismatch(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(emit_config(default_spec("simulate")))
        code = main(["estimate", "--config", str(path), "--out", str(tmp_path / "x")])
        assert code == 2

    def test_output_dir_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FARADAYSIM_OUTPUT_DIR", str(tmp_path / "envout"))
        code = main([
            "simulate", "--quiet",
            "--override", "run.duration=0.05",
            "--override", "run.pre_probe_dark_time=0.0",
        ])
        assert code == 0
        assert (tmp_path / "envout" / "polarimeter_diff.csv").exists()


def test_module_invocation_smoke():
    proc = subprocess.run(
        [sys.executable, "-m", "faradaysim", "--help"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "simulate" in proc.stdout
