"""Experiment configuration: defaults, YAML parsing, validation, overrides.

Configs are YAML documents with nested sections mirroring the module config
types; all physical quantities are SI (seconds, hertz, photons/s, radians,
atoms).  Unknown keys are rejected, and every module invariant is checked at
parse time.
"""

from __future__ import annotations

import copy
import dataclasses
import typing
from dataclasses import dataclass, field

import yaml

from .errors import ConfigurationError
from .estimation import NormalizationConfig
from .lockin import LockInConfig
from .model import CouplingModel, EnsembleState, ProbeDetectorConfig, TopFieldConfig
from .preparation import PreparationPolicy
from .synthesis import LossModel, PowerDrift, RunConfig

COMMANDS = ("simulate", "demodulate", "estimate", "prepare", "sweep")

REQUIRED_SECTIONS = {
    "simulate": ("run",),
    "demodulate": ("lockin", "input_path"),
    "estimate": ("run", "lockin", "normalization"),
    "prepare": ("run", "lockin", "policy"),
    "sweep": ("run", "lockin", "normalization", "sweep"),
}


@dataclass(frozen=True)
class EstimationOptions:
    """Decay-fit options: pre-fit settle skip (None = 99.9% cascade settling)
    and residual weighting."""

    settle_skip: float | None = None
    weighting: str = "uniform"

    def __post_init__(self):
        if self.settle_skip is not None and self.settle_skip < 0:
            raise ConfigurationError(
                f"settle_skip must be >= 0, got {self.settle_skip}"
            )
        if self.weighting not in ("uniform", "amplitude"):
            raise ConfigurationError(
                f"weighting must be 'uniform' or 'amplitude', got {self.weighting!r}"
            )


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    seeds_per_value: int = 1

    def __post_init__(self):
        if not self.values:
            raise ConfigurationError("sweep.values must be a non-empty list")
        if self.seeds_per_value < 1:
            raise ConfigurationError(
                f"sweep.seeds_per_value must be >= 1, got {self.seeds_per_value}"
            )


@dataclass(frozen=True)
class ExperimentSpec:
    command: str
    output_dir: str = "out"
    run: RunConfig | None = None
    lockin: LockInConfig | None = None
    normalization: NormalizationConfig | None = None
    estimation: EstimationOptions = field(default_factory=EstimationOptions)
    policy: PreparationPolicy | None = None
    sweep: SweepSpec | None = None
    input_path: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(
                f"command must be one of {COMMANDS}, got {self.command!r}"
            )
        missing = [
            name
            for name in REQUIRED_SECTIONS[self.command]
            if getattr(self, name if name != "input_path" else "input_path") is None
        ]
        if missing:
            raise ConfigurationError(
                f"command {self.command!r} requires sections: {', '.join(missing)}"
            )
        if self.sweep is not None and self.run is not None:
            # The swept parameter path must resolve inside the run config.
            resolve_run_parameter(self.run, self.sweep.parameter)


# ---------------------------------------------------------------------------
# Defaults

def default_config_dict(command: str) -> dict:
    """The built-in default configuration for a command, as a plain dict.

    The preparation command probes at reduced detuning with a faster lock-in:
    single-window resolution must beat the cut tolerance while keeping the
    per-window probe loss small (see README).
    """
    if command not in COMMANDS:
        raise ConfigurationError(f"command must be one of {COMMANDS}, got {command!r}")
    cfg: dict = {
        "command": command,
        "output_dir": "out",
        "run": {
            "duration": 1.0,
            "sample_rate": 250000.0,
            "seed": 1,
            "pre_probe_dark_time": 0.05,
            "shot_noise": True,
            "poisson_shot_noise": False,
            "ensemble": {"atom_number": 1.0e6, "spin_sign": -1},
            "top": {"rotation_frequency": 5000.0, "initial_phase": 0.0},
            "coupling": {"coupling_strength": 1.0e-7, "reference_detuning": 5.0e9},
            "probe": {
                "photon_flux": 2.5e9,
                "detection_efficiency": 0.87,
                "monitor_tap": 0.2,
                "detuning": 5.0e9,
                "polarimeter_offset": 1.0e6,
                "monitor_offset": 1.0e6,
                "electronic_noise_density": 0.0,
            },
            "loss": {
                "absorption_loss_coefficient": 3.8e-10,
                "background_loss_rate": 0.05,
                "stochastic": True,
            },
        },
        "lockin": {
            "reference_frequency": 5000.0,
            "reference_phase": 0.0,
            "time_constant": 1.0e-3,
            "stages": 2,
            "decimation": 10,
        },
        "normalization": {
            "moving_average_window": 1.0e-2,
            "dark_segment": [0.0, 0.05],
        },
        "estimation": {"settle_skip": None, "weighting": "uniform"},
    }
    if command == "prepare":
        cfg["run"]["probe"]["detuning"] = 1.0e9
        cfg["lockin"]["time_constant"] = 5.0e-4
        cfg["policy"] = {
            "target_atom_number": 5.0e5,
            "tolerance": 0.01,
            "max_iterations": 10,
            "probe_window": 8.0e-3,
            "cut_undershoot_factor": 0.8,
            "actuation_relative_error": 0.02,
            "initial_relative_spread": 0.1,
            "measurement_dark_time": 0.01,
        }
    if command == "sweep":
        cfg["sweep"] = {
            "parameter": "probe.photon_flux",
            "values": [2.5e9, 5.0e9, 1.0e10, 2.0e10],
            "seeds_per_value": 1,
        }
    if command == "demodulate":
        cfg["input_path"] = None
    return cfg


def default_spec(command: str) -> ExperimentSpec:
    return build_spec(default_config_dict(command))


# ---------------------------------------------------------------------------
# Generic dataclass building with unknown-key rejection and type coercion

def _coerce(value, target_type, path):
    origin = typing.get_origin(target_type)
    if origin is typing.Union or str(origin) == "types.UnionType":
        args = [a for a in typing.get_args(target_type) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
        return value
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected a boolean, got {value!r}")
        return value
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build_dataclass(cls, mapping, path, nested=None):
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigurationError(f"{path}: expected a mapping, got {mapping!r}")
    nested = nested or {}
    hints = typing.get_type_hints(cls)
    allowed = {f.name for f in dataclasses.fields(cls)}
    for key in mapping:
        if key not in allowed:
            raise ConfigurationError(f"unknown key {path}.{key}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in mapping:
            continue
        raw = mapping[f.name]
        if f.name in nested:
            kwargs[f.name] = nested[f.name](raw, f"{path}.{f.name}")
        else:
            kwargs[f.name] = _coerce(raw, hints[f.name], f"{path}.{f.name}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def _build_run(mapping, path="run") -> RunConfig:
    nested = {
        "ensemble": lambda m, p: _build_dataclass(EnsembleState, m, p),
        "top": lambda m, p: _build_dataclass(TopFieldConfig, m, p),
        "coupling": lambda m, p: _build_dataclass(CouplingModel, m, p),
        "probe": lambda m, p: _build_dataclass(ProbeDetectorConfig, m, p),
        "loss": lambda m, p: _build_dataclass(LossModel, m, p),
        "power_drift": lambda m, p: (
            None if m is None else _build_dataclass(PowerDrift, m, p)
        ),
    }
    return _build_dataclass(RunConfig, mapping, path, nested=nested)


def _build_normalization(mapping, path="normalization") -> NormalizationConfig:
    if not isinstance(mapping, dict):
        raise ConfigurationError(f"{path}: expected a mapping, got {mapping!r}")
    mapping = dict(mapping)
    if "dark_segment" in mapping:
        seg = mapping["dark_segment"]
        if not (isinstance(seg, (list, tuple)) and len(seg) == 2):
            raise ConfigurationError(
                f"{path}.dark_segment: expected [start, end], got {seg!r}"
            )
        mapping["dark_segment"] = (float(seg[0]), float(seg[1]))
    return _build_dataclass(NormalizationConfig, mapping, path)


def _build_sweep(mapping, path="sweep") -> SweepSpec:
    if not isinstance(mapping, dict):
        raise ConfigurationError(f"{path}: expected a mapping, got {mapping!r}")
    mapping = dict(mapping)
    if "values" in mapping:
        vals = mapping["values"]
        if not isinstance(vals, (list, tuple)):
            raise ConfigurationError(f"{path}.values: expected a list, got {vals!r}")
        mapping["values"] = tuple(float(v) for v in vals)
    return _build_dataclass(SweepSpec, mapping, path)


def build_spec(cfg: dict) -> ExperimentSpec:
    """Validate a configuration dict and build the experiment spec."""
    if not isinstance(cfg, dict) or not cfg:
        required = ", ".join(
            f"{cmd}: {', '.join(secs)}" for cmd, secs in REQUIRED_SECTIONS.items()
        )
        raise ConfigurationError(
            "empty configuration; required sections per command are - " + required
        )
    known = {
        "command",
        "output_dir",
        "run",
        "lockin",
        "normalization",
        "estimation",
        "policy",
        "sweep",
        "input_path",
    }
    for key in cfg:
        if key not in known:
            raise ConfigurationError(f"unknown key {key}")
    if "command" not in cfg:
        raise ConfigurationError(
            f"missing 'command'; expected one of {COMMANDS}"
        )
    kwargs: dict = {"command": _coerce(cfg["command"], str, "command")}
    if "output_dir" in cfg:
        kwargs["output_dir"] = _coerce(cfg["output_dir"], str, "output_dir")
    if cfg.get("run") is not None:
        kwargs["run"] = _build_run(cfg["run"])
    if cfg.get("lockin") is not None:
        kwargs["lockin"] = _build_dataclass(LockInConfig, cfg["lockin"], "lockin")
    if cfg.get("normalization") is not None:
        kwargs["normalization"] = _build_normalization(cfg["normalization"])
    if cfg.get("estimation") is not None:
        kwargs["estimation"] = _build_dataclass(
            EstimationOptions, cfg["estimation"], "estimation"
        )
    if cfg.get("policy") is not None:
        kwargs["policy"] = _build_dataclass(PreparationPolicy, cfg["policy"], "policy")
    if cfg.get("sweep") is not None:
        kwargs["sweep"] = _build_sweep(cfg["sweep"])
    if cfg.get("input_path") is not None:
        kwargs["input_path"] = _coerce(cfg["input_path"], str, "input_path")
    return ExperimentSpec(**kwargs)


def parse_config(text: str) -> ExperimentSpec:
    """Parse and fully validate a YAML configuration document."""
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"configuration parse error: {exc}") from exc
    if cfg is None:
        cfg = {}
    return build_spec(cfg)


# ---------------------------------------------------------------------------
# Emission (round-trips through parse_config)

def spec_to_dict(spec: ExperimentSpec) -> dict:
    def as_dict(obj):
        if obj is None:
            return None
        if dataclasses.is_dataclass(obj):
            out = {}
            for f in dataclasses.fields(obj):
                out[f.name] = as_dict(getattr(obj, f.name))
            return out
        if isinstance(obj, tuple):
            return [as_dict(v) for v in obj]
        return obj

    cfg = {
        "command": spec.command,
        "output_dir": spec.output_dir,
        "run": as_dict(spec.run),
        "lockin": as_dict(spec.lockin),
        "normalization": as_dict(spec.normalization),
        "estimation": as_dict(spec.estimation),
        "policy": as_dict(spec.policy),
        "sweep": as_dict(spec.sweep),
        "input_path": spec.input_path,
    }
    return {k: v for k, v in cfg.items() if v is not None}


def emit_config(spec: ExperimentSpec) -> str:
    """Canonical YAML for a spec; parse_config(emit_config(s)) == s."""
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=False)


# ---------------------------------------------------------------------------
# Parameter paths (sweeps and --override share the dotted-path convention)

def resolve_run_parameter(run: RunConfig, path: str):
    """Value at a dotted path inside a run config; error if absent."""
    obj = run
    for part in path.split("."):
        if not dataclasses.is_dataclass(obj) or part not in {
            f.name for f in dataclasses.fields(obj)
        }:
            raise ConfigurationError(
                f"sweep parameter path {path!r} does not exist in the run config"
            )
        obj = getattr(obj, part)
    return obj


def replace_run_parameter(run: RunConfig, path: str, value) -> RunConfig:
    """A run config with the value at a dotted path replaced."""
    parts = path.split(".")
    resolve_run_parameter(run, path)

    def rebuild(obj, parts):
        if len(parts) == 1:
            return dataclasses.replace(obj, **{parts[0]: value})
        child = getattr(obj, parts[0])
        return dataclasses.replace(obj, **{parts[0]: rebuild(child, parts[1:])})

    return rebuild(run, parts)


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply repeatable ``--override section.key=value`` pairs to a config dict."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(
                f"override {item!r} must look like section.key=value"
            )
        path, _, raw = item.partition("=")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"override {item!r}: bad value: {exc}") from exc
        node = cfg
        keys = path.split(".")
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                node[key] = {}
            node = node[key]
        node[keys[-1]] = value
    return cfg
