"""Experiment configuration: an INI-style file with fixed sections and keys.

Every key is optional; unknown sections or keys are rejected so typos fail
loudly. See ``README.md`` for the full schema.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace

from .control import ControllerConfig, get_preset
from .errors import ConfigurationError
from .kinematics import NOMINAL_FREQUENCY_HZ, PropulsionParams, Schedule, ScheduleKind, SweepGrid
from .plant import MapKind, PlantConfig
from .sysid import DEFAULT_COND_THRESHOLD, NESTED_LADDER, FULL_LADDER, Basket


@dataclass(frozen=True)
class SweepSettings:
    grid: SweepGrid = field(default_factory=SweepGrid)
    cycles: int = 5
    settle_s: float = 2.0


@dataclass(frozen=True)
class ScheduleSettings:
    kind: str = "coupled"
    duration_s: float = 1000.0
    amplitude_deg: float = 40.0
    offset_deg: float = 0.0
    frequency_hz: float = NOMINAL_FREQUENCY_HZ

    def build(self) -> Schedule:
        if self.kind == ScheduleKind.COUPLED.value:
            return Schedule.coupled()
        if self.kind == ScheduleKind.HALF_WAVE_AMPLITUDE.value:
            return Schedule.half_wave()
        if self.kind == ScheduleKind.CONSTANT.value:
            return Schedule.constant(PropulsionParams(self.amplitude_deg, self.offset_deg, self.frequency_hz))
        raise ConfigurationError(f"unknown schedule kind {self.kind!r} (coupled, half-wave, constant)")


@dataclass(frozen=True)
class FitSettings:
    input: str | None = None
    ladder: tuple = FULL_LADDER
    targets: tuple = ("magnitude", "angle")
    cond_threshold: float = DEFAULT_COND_THRESHOLD
    mae_margin: float = 1.0
    sample_interval_s: float = 1.0
    skip_s: float = 5.0
    controllable_only: bool = True


@dataclass(frozen=True)
class StepIdSettings:
    duration_s: float = 12.0
    step_time_s: float = 2.0
    amplitude_deg: float = 40.0
    offset_step_deg: float = -20.0
    settle_s: float = 5.0
    repeats: int = 5
    signal: str = "cycle"  # "cycle" averages, or "raw" samples


@dataclass(frozen=True)
class TrackSettings:
    preset: str = "FF-PI"
    reference_peak_N: float = 0.5
    reference_frequency_hz: float = 0.005
    duration_s: float = 200.0
    ff_model: str | None = None

    def controller(self) -> ControllerConfig:
        return get_preset(self.preset)


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    fit: FitSettings = field(default_factory=FitSettings)
    step_id: StepIdSettings = field(default_factory=StepIdSettings)
    track: TrackSettings = field(default_factory=TrackSettings)
    output_dir: str = "out"
    plots: bool = True

    @property
    def seed(self):
        return self.plant.sensor.rng_seed

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, plant=replace(self.plant, sensor=replace(self.plant.sensor, rng_seed=seed)))


# section -> key -> (target object path, attribute, parser)
def _ladder(text: str) -> tuple:
    if text.strip() == "full":
        return FULL_LADDER
    if text.strip() == "nested":
        return NESTED_LADDER
    return tuple(Basket(part) for part in text.split(";") if part.strip())


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_str(text: str):
    return text.strip() or None


def _seed(text: str):
    return None if text.strip().lower() == "none" else int(text)


SCHEMA = {
    "plant": {
        "map": ("map", "kind", MapKind),
        "forward_gain": ("map", "forward_gain_N_per_deg", float),
        "angle_gain": ("map", "angle_gain_deg_per_deg", float),
        "controllable_min_amplitude": ("map", "controllable_min_amplitude_deg", float),
        "nominal_frequency": ("map", "nominal_frequency_hz", float),
        "frequency_tolerance": ("map", "frequency_tolerance_hz", float),
        "degraded_forward_force": ("map", "degraded_forward_force_N", float),
        "forward_time_constant": ("plant", "forward_time_constant_s", float),
        "forward_dead_time": ("plant", "forward_dead_time_s", float),
        "angle_time_constant": ("plant", "angle_time_constant_s", float),
        "angle_dead_time": ("plant", "angle_dead_time_s", float),
    },
    "sensor": {
        "bar_length": ("sensor", "bar_length_m", float),
        "noise_std": ("sensor", "noise_std_N", float),
        "ripple_fraction": ("sensor", "ripple_fraction", float),
        "sample_rate": ("sensor", "sample_rate_hz", float),
        "seed": ("sensor", "rng_seed", _seed),
    },
    "sweep": {
        "b_step": ("grid", "b_step", float),
        "a_step": ("grid", "a_step", float),
        "f_min": ("grid", "f_min", float),
        "f_ratio": ("grid", "f_ratio", float),
        "f_anchor": ("grid", "f_anchor", float),
        "cycles": ("sweep", "cycles", int),
        "settle": ("sweep", "settle_s", float),
    },
    "schedule": {
        "kind": ("schedule", "kind", str),
        "duration": ("schedule", "duration_s", float),
        "amplitude": ("schedule", "amplitude_deg", float),
        "offset": ("schedule", "offset_deg", float),
        "frequency": ("schedule", "frequency_hz", float),
    },
    "fit": {
        "input": ("fit", "input", _opt_str),
        "ladder": ("fit", "ladder", _ladder),
        "targets": ("fit", "targets", lambda s: tuple(s.split())),
        "cond_threshold": ("fit", "cond_threshold", float),
        "mae_margin": ("fit", "mae_margin", float),
        "sample_interval": ("fit", "sample_interval_s", float),
        "skip": ("fit", "skip_s", float),
        "controllable_only": ("fit", "controllable_only", _bool),
    },
    "step_id": {
        "duration": ("step_id", "duration_s", float),
        "step_time": ("step_id", "step_time_s", float),
        "amplitude": ("step_id", "amplitude_deg", float),
        "offset_step": ("step_id", "offset_step_deg", float),
        "settle": ("step_id", "settle_s", float),
        "repeats": ("step_id", "repeats", int),
        "signal": ("step_id", "signal", str),
    },
    "track": {
        "preset": ("track", "preset", str),
        "reference_peak": ("track", "reference_peak_N", float),
        "reference_frequency": ("track", "reference_frequency_hz", float),
        "duration": ("track", "duration_s", float),
        "ff_model": ("track", "ff_model", _opt_str),
    },
    "output": {
        "dir": ("root", "output_dir", str),
        "plots": ("root", "plots", _bool),
    },
}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None

    updates: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigurationError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigurationError(f"{source}: unknown key {key!r} in [{section}]")
            group, attr, conv = SCHEMA[section][key]
            try:
                value = conv(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigurationError(f"{source}: [{section}] {key} = {raw!r}: {exc}") from None
            updates.setdefault(group, {})[attr] = value

    d = ExperimentConfig()
    try:
        fmap = replace(d.plant.force_map, **updates.get("map", {}))
        sensor = replace(d.plant.sensor, **updates.get("sensor", {}))
        plant = replace(d.plant, force_map=fmap, sensor=sensor, **updates.get("plant", {}))
        grid = replace(d.sweep.grid, **updates.get("grid", {}))
        sweep = replace(d.sweep, grid=grid, **updates.get("sweep", {}))
        cfg = ExperimentConfig(
            plant=plant,
            sweep=sweep,
            schedule=replace(d.schedule, **updates.get("schedule", {})),
            fit=replace(d.fit, **updates.get("fit", {})),
            step_id=replace(d.step_id, **updates.get("step_id", {})),
            track=replace(d.track, **updates.get("track", {})),
            **updates.get("root", {}),
        )
    except ConfigurationError:
        raise
    except ValueError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    validate(cfg, source)
    return cfg


def validate(cfg: ExperimentConfig, source: str = "<config>") -> None:
    cfg.track.controller()
    cfg.schedule.build()
    if cfg.sweep.cycles < 1:
        raise ConfigurationError(f"{source}: sweep cycles must be >= 1")
    if cfg.step_id.repeats < 1:
        raise ConfigurationError(f"{source}: step_id repeats must be >= 1")
    if cfg.step_id.signal not in ("cycle", "raw"):
        raise ConfigurationError(f"{source}: step_id signal must be 'cycle' or 'raw'")
    for t in cfg.fit.targets:
        if t not in ("forward", "side", "magnitude", "angle"):
            raise ConfigurationError(f"{source}: unknown fit target {t!r}")
    if len(set(cfg.fit.ladder)) != len(cfg.fit.ladder):
        raise ConfigurationError(f"{source}: basket ladder contains duplicate baskets")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, os.fspath(path))


def dump_config(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` back to the file format (every key, explicit values)."""
    objs = {
        "map": cfg.plant.force_map, "plant": cfg.plant, "sensor": cfg.plant.sensor,
        "grid": cfg.sweep.grid, "sweep": cfg.sweep, "schedule": cfg.schedule, "fit": cfg.fit,
        "step_id": cfg.step_id, "track": cfg.track, "root": cfg,
    }
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (group, attr, _) in keys.items():
            v = getattr(objs[group], attr)
            if isinstance(v, MapKind):
                v = v.value
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif attr == "ladder":
                v = "; ".join(str(b) for b in v)
            elif attr == "targets":
                v = " ".join(v)
            elif v is None:
                v = "none" if attr == "rng_seed" else ""
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)
