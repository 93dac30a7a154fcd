"""Batch experiment harness.

Usage::

    finthrust sweep    [--config PATH] [--seed N] [--out DIR] [--cycles N]
    finthrust plant-sim ...
    finthrust fit      [--input CSV] ...
    finthrust step-id  ...
    finthrust track    [--preset NAME] ...

Every run writes CSV logs (and SVG plots unless disabled) into the output
directory. Identical configuration and seed give byte-identical files.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import svg
from .config import ExperimentConfig, load_config
from .control import TrackingTrace, get_preset, half_sine_reference, run_tracking, summarize
from .cyclestats import CycleMeanTransformer
from .errors import FinThrustError, InputError, SchemaError
from .io import detect_header, read_csv, write_csv
from .kinematics import SWEEP_HEADER, PropulsionParams, sweep_array, write_sweep_csv
from .plant import TRACE_HEADER, PlantTrace, ThrustPlant
from .sysid import (
    Basket,
    StaticModel,
    StaticModelRegressor,
    Target,
    basket_ladder,
    finite_difference_derivatives,
    fit_fopdt_from_step,
    select_basket,
    write_reports_csv,
)

log = logging.getLogger("finthrust")

SWEEP_RESULT_HEADER = SWEEP_HEADER + ("mean_forward_N", "mean_side_N")
MODEL_HEADER = ("target", "basket", "term", "coefficient")
STEP_MODEL_HEADER = ("channel", "gain", "time_constant_s", "dead_time_s", "step_size", "signal")
STEP_TRACE_HEADER = ("t_s", "y")


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _point_seed(seed, index: int):
    if seed is None:
        return None
    return int(np.random.SeedSequence([int(seed), index]).generate_state(1)[0])


# --- sweep ------------------------------------------------------------------

def measure_point(cfg: ExperimentConfig, p: PropulsionParams, seed) -> tuple[float, float]:
    """Run a fresh plant at ``p``: settle, then average over ``cycles`` strokes."""
    plant_cfg = replace(cfg.plant, sensor=replace(cfg.plant.sensor, rng_seed=seed))
    plant = ThrustPlant(plant_cfg)
    n_settle = int(round(cfg.sweep.settle_s / plant.dt))
    n_meas = max(1, int(round(cfg.sweep.cycles / (p.frequency_hz * plant.dt))))
    tr = plant.run(p, n_settle + n_meas)
    return float(np.mean(tr.forward[n_settle:])), float(np.mean(tr.side[n_settle:]))


def cmd_sweep(cfg: ExperimentConfig) -> dict:
    out = _out(cfg)
    pts = sweep_array(cfg.sweep.grid)
    params = [PropulsionParams(float(a), float(b), float(f)) for a, b, f in pts]
    write_sweep_csv(out / "sweep_points.csv", params)
    rows = []
    for i, p in enumerate(params):
        fw, sd = measure_point(cfg, p, _point_seed(cfg.seed, i))
        rows.append((i, p.amplitude_deg, p.offset_deg, p.frequency_hz, fw, sd))
    write_csv(out / "sweep_results.csv", SWEEP_RESULT_HEADER, rows)
    if cfg.plots and rows:
        ids = [r[0] for r in rows]
        svg.line_chart(out / "sweep_forward.svg", ids, {"mean forward": [r[4] for r in rows]},
                       "Cycle-averaged forward force per test", "test", "force (N)")
        svg.line_chart(out / "sweep_side.svg", ids, {"mean side": [r[5] for r in rows]},
                       "Cycle-averaged side force per test", "test", "force (N)")
    log.info("sweep: %d points -> %s", len(rows), out / "sweep_results.csv")
    return {"points": len(rows), "results": out / "sweep_results.csv"}


def read_sweep_results(path) -> list[dict]:
    return read_csv(path, SWEEP_RESULT_HEADER)


# --- plant-sim --------------------------------------------------------------

def simulate_schedule(cfg: ExperimentConfig) -> PlantTrace:
    plant = ThrustPlant(cfg.plant)
    return plant.run_schedule(cfg.schedule.build(), cfg.schedule.duration_s)


def cmd_plant_sim(cfg: ExperimentConfig) -> dict:
    out = _out(cfg)
    trace = simulate_schedule(cfg)
    trace.to_csv(out / "plant_trace.csv")
    if cfg.plots and len(trace):
        step = max(1, len(trace) // 4000)
        svg.line_chart(out / "plant_trace.svg", trace.t[::step],
                       {"forward": trace.forward[::step], "side": trace.side[::step]},
                       f"Plant response, {cfg.schedule.kind} schedule", "t (s)", "force (N)")
    return {"samples": len(trace), "trace": out / "plant_trace.csv"}


# --- fit --------------------------------------------------------------------

def _trace_dataset(trace: PlantTrace, cfg: ExperimentConfig):
    """Cycle-average a plant trace and resample it for regression."""
    sensor = cfg.plant.sensor
    f_nom = cfg.plant.force_map.nominal_frequency_hz
    avg = CycleMeanTransformer(sensor.sample_rate_hz, f_nom).fit_transform(np.column_stack([trace.forward, trace.side]))
    step = max(1, int(round(cfg.fit.sample_interval_s * sensor.sample_rate_hz)))
    start = int(round(cfg.fit.skip_s * sensor.sample_rate_hz))
    idx = np.arange(start, len(trace), step)
    if len(idx) < 3:
        raise InputError("trace too short to fit after skipping the start-up transient")
    records = finite_difference_derivatives(trace.t[idx], trace.params[idx, 0], trace.params[idx, 1])
    targets = {"forward": avg[idx, 0], "side": avg[idx, 1], "magnitude": avg[idx, 2], "angle": avg[idx, 3]}
    return records, targets


def _sweep_dataset(rows: list[dict], cfg: ExperimentConfig):
    a = np.array([r["a_deg"] for r in rows], dtype=float)
    b = np.array([r["b_deg"] for r in rows], dtype=float)
    f = np.array([r["f_hz"] for r in rows], dtype=float)
    fw = np.array([r["mean_forward_N"] for r in rows], dtype=float)
    sd = np.array([r["mean_side_N"] for r in rows], dtype=float)
    if cfg.fit.controllable_only:
        keep = cfg.plant.force_map.controllable(a, f)
        a, b, fw, sd = a[keep], b[keep], fw[keep], sd[keep]
    if len(a) < 2:
        raise InputError("too few sweep rows to fit")
    targets = {"forward": fw, "side": sd, "magnitude": np.hypot(fw, sd), "angle": np.degrees(np.arctan2(sd, fw))}
    return {"a": a, "b": b}, targets


def load_fit_dataset(path, cfg: ExperimentConfig):
    header = detect_header(path)
    if header == TRACE_HEADER:
        return _trace_dataset(PlantTrace.from_csv(path), cfg)
    if header == SWEEP_RESULT_HEADER:
        return _sweep_dataset(read_sweep_results(path), cfg)
    raise SchemaError(f"unrecognised header {','.join(header)!r}; expected a plant trace or sweep results", path, 1)


def write_models_csv(path, models: list[StaticModel]) -> None:
    rows = [(m.target.value, str(m.basket), term, float(c)) for m in models for term, c in zip(m.basket, m.coefficients)]
    write_csv(path, MODEL_HEADER, rows)


def read_models_csv(path) -> dict[str, StaticModel]:
    rows = read_csv(path, MODEL_HEADER)
    grouped: dict[tuple, list] = {}
    for r in rows:
        grouped.setdefault((str(r["target"]), str(r["basket"])), []).append((str(r["term"]), float(r["coefficient"])))
    models = {}
    for (target, basket), terms in grouped.items():
        b = Basket(basket)
        coef = dict(terms)
        models[target] = StaticModel(b, tuple(coef[t] for t in b), Target(target))
    return models


def cmd_fit(cfg: ExperimentConfig, input_path=None) -> dict:
    out = _out(cfg)
    path = input_path or cfg.fit.input
    if path is None:
        path = out / "plant_trace.csv"
        cmd_plant_sim(cfg)
    records, targets = load_fit_dataset(path, cfg)
    ladder = list(cfg.fit.ladder)
    if len(set(ladder)) != len(ladder):
        raise InputError("basket ladder contains duplicate baskets")
    if "a_dot" not in records:
        skipped = [b for b in ladder if b.needs_derivatives]
        if skipped:
            log.warning("input has no time axis; skipping %d derivative baskets", len(skipped))
        ladder = [b for b in ladder if not b.needs_derivatives]

    reports, models, selected = [], [], {}
    for name in cfg.fit.targets:
        reps = basket_ladder(records, targets[name], ladder, cfg.fit.cond_threshold, name)
        reports.extend(reps)
        best = select_basket(reps, cfg.fit.mae_margin)
        selected[name] = str(best.basket)
        models.append(StaticModelRegressor(best.basket, name, cfg.fit.cond_threshold).fit(records, targets[name]).model_)
    write_reports_csv(out / "fit_report.csv", reports)
    write_models_csv(out / "selected_model.csv", models)
    log.info("fit: selected %s", selected)
    return {"reports": reports, "selected": selected, "models": {m.target.value: m for m in models}}


# --- step-id ----------------------------------------------------------------

def _step_run(cfg: ExperimentConfig, before: PropulsionParams, after: PropulsionParams, channel: str, seed):
    s = cfg.step_id
    plant = ThrustPlant(replace(cfg.plant, sensor=replace(cfg.plant.sensor, rng_seed=seed)))
    n_settle = int(round(s.settle_s / plant.dt))
    n_pre = int(round(s.step_time_s / plant.dt))
    n_post = int(round((s.duration_s - s.step_time_s) / plant.dt))
    tr = PlantTrace.concat([plant.run(before, n_settle + n_pre), plant.run(after, n_post)])
    if s.signal == "raw":
        fw, sd = tr.forward, tr.side
        y = np.hypot(fw, sd) if channel == "magnitude" else np.degrees(np.arctan2(sd, fw))
    else:
        f = cfg.plant.force_map.nominal_frequency_hz
        avg = CycleMeanTransformer(cfg.plant.sensor.sample_rate_hz, f).fit_transform(np.column_stack([tr.forward, tr.side]))
        y = avg[:, 2] if channel == "magnitude" else avg[:, 3]
    # time origin at the end of the unrecorded settling segment
    return tr.t[n_settle:] - n_settle * plant.dt, y[n_settle:]


def _step_trace(cfg: ExperimentConfig, before: PropulsionParams, after: PropulsionParams, channel: str):
    """Ensemble mean of ``repeats`` independently seeded step experiments, as ``(t, y)`` rows."""
    seed = cfg.seed
    runs = [
        _step_run(cfg, before, after, channel, _point_seed(seed, 1000 * (channel == "angle") + k) if seed is not None else None)
        for k in range(cfg.step_id.repeats)
    ]
    t = runs[0][0]
    return np.column_stack([t, np.mean([y for _, y in runs], axis=0)])


def cmd_step_id(cfg: ExperimentConfig) -> dict:
    out = _out(cfg)
    s = cfg.step_id
    f = cfg.plant.force_map.nominal_frequency_hz
    mag = _step_trace(cfg, PropulsionParams(0.0, 0.0, f), PropulsionParams(s.amplitude_deg, 0.0, f), "magnitude")
    ang = _step_trace(cfg, PropulsionParams(s.amplitude_deg, 0.0, f),
                      PropulsionParams(s.amplitude_deg, s.offset_step_deg, f), "angle")
    m_mag = fit_fopdt_from_step(mag, s.amplitude_deg, s.step_time_s)
    m_ang = fit_fopdt_from_step(ang, s.offset_step_deg, s.step_time_s)
    write_csv(out / "step_magnitude.csv", STEP_TRACE_HEADER, mag.tolist())
    write_csv(out / "step_angle.csv", STEP_TRACE_HEADER, ang.tolist())
    write_csv(out / "step_models.csv", STEP_MODEL_HEADER, [
        ("magnitude", m_mag.gain, m_mag.time_constant_s, m_mag.dead_time_s, s.amplitude_deg, s.signal),
        ("angle", m_ang.gain, m_ang.time_constant_s, m_ang.dead_time_s, s.offset_step_deg, s.signal),
    ])
    if cfg.plots:
        svg.line_chart(out / "step_magnitude.svg", mag[:, 0], {"magnitude": mag[:, 1]},
                       f"Thrust magnitude, amplitude step 0 to {s.amplitude_deg:g} deg", "t (s)", "force (N)")
        svg.line_chart(out / "step_angle.svg", ang[:, 0], {"angle": ang[:, 1]},
                       f"Force angle, offset step 0 to {s.offset_step_deg:g} deg", "t (s)", "angle (deg)")
    log.info("step-id: magnitude %s, angle %s", m_mag, m_ang)
    return {"magnitude": m_mag, "angle": m_ang}


# --- track ------------------------------------------------------------------

def cmd_track(cfg: ExperimentConfig) -> dict:
    out = _out(cfg)
    t = cfg.track
    controller = t.controller()
    ff_model = None
    if t.ff_model:
        models = read_models_csv(t.ff_model)
        ff_model = models.get("magnitude") or models.get("forward")
        if ff_model is None:
            raise InputError(f"{t.ff_model}: no magnitude or forward model to invert")
    ref = half_sine_reference(t.reference_peak_N, t.reference_frequency_hz)
    trace = run_tracking(ThrustPlant(cfg.plant), controller, ref, t.duration_s, ff_model=ff_model,
                         frequency_hz=cfg.plant.force_map.nominal_frequency_hz)
    trace.to_csv(out / "tracking_trace.csv")
    summary = summarize(trace, controller, ref.hump_s)
    with open(out / "tracking_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if cfg.plots:
        svg.line_chart(out / "tracking.svg", trace.t, {"reference": trace.reference, "measured": trace.measured},
                       f"Force tracking, {controller.name} controller", "t (s)", "force (N)")
    log.info("track: %s mean |error| %.4f N", controller.name, summary["mean_abs_error_N"])
    return {"trace": trace, "summary": summary}


def read_tracking_trace(path) -> TrackingTrace:
    return TrackingTrace.from_csv(path)


# --- entry point --------------------------------------------------------------

COMMANDS = {
    "sweep": cmd_sweep,
    "plant-sim": cmd_plant_sim,
    "fit": cmd_fit,
    "step-id": cmd_step_id,
    "track": cmd_track,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finthrust", description=__doc__.split("\n\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (INI format)")
    common.add_argument("--seed", type=int, help="override the plant noise seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--cycles", type=int, help="strokes averaged per sweep point")
    common.add_argument("--no-plots", action="store_true", help="skip SVG output")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="run the constrained parameter sweep")
    sub.add_parser("plant-sim", parents=[common], help="drive the plant with a schedule and log the trace")
    p_fit = sub.add_parser("fit", parents=[common], help="least-squares basket ladder on a trace or sweep CSV")
    p_fit.add_argument("--input", help="plant trace or sweep results CSV")
    sub.add_parser("step-id", parents=[common], help="identify FOPDT models from step experiments")
    p_track = sub.add_parser("track", parents=[common], help="closed-loop force tracking")
    p_track.add_argument("--preset", help="controller preset name")
    return parser


def configure(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.cycles is not None:
        if args.cycles < 1:
            raise InputError("--cycles must be >= 1")
        cfg = replace(cfg, sweep=replace(cfg.sweep, cycles=args.cycles))
    if args.no_plots:
        cfg = replace(cfg, plots=False)
    if getattr(args, "preset", None):
        get_preset(args.preset)
        cfg = replace(cfg, track=replace(cfg.track, preset=args.preset))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = configure(args)
        if args.command == "fit":
            cmd_fit(cfg, args.input)
        else:
            COMMANDS[args.command](cfg)
    except FinThrustError as exc:
        print(f"finthrust: {exc.category} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        where = exc.filename or ""
        print(f"finthrust: io error: {where}: {exc.strerror or exc}", file=sys.stderr)
        return 8
    return 0


if __name__ == "__main__":
    sys.exit(main())
