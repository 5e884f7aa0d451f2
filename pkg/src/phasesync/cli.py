"""Batch commands: simulate, identify, fringe, plan, analyze.

Exit codes: 0 success, 1 invalid input or configuration, 2 a loop unlocked
beyond the allowed threshold.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import cumulative_csd, estimate_tf, welch_psd
from .config import ConfigError, load_config
from .io import FORMATS, read_table, write_json, write_table
from .noise import TimeSeries
from .planner import PAPER_PLAN, PlanInfeasible, budget, extend_star, solve_plan
from .signal_core import fidelity_from_phase_error

log = logging.getLogger("phasesync")

EXIT_OK, EXIT_INVALID, EXIT_UNLOCK = 0, 1, 2
LOOP_CHANNELS = {"local_A": "eta_local_A", "local_B": "eta_local_B", "fast_A": "eta_fast_A",
                 "fast_B": "eta_fast_B", "global": "eta_global"}
ETA_CHANNELS = tuple(LOOP_CHANNELS.values()) + ("eta_total",)


class UsageError(Exception):
    pass


def _deg(x):
    return float(np.degrees(x))


def _scenario(args):
    path = args.config
    if path is not None and not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    sc = load_config(path)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        overrides["duration"] = args.duration
    if getattr(args, "drift_time_scale", None) is not None:
        overrides["drift_time_scale"] = args.drift_time_scale
    return sc.with_overrides(**overrides) if overrides else sc


def _meta(sc, **extra):
    meta = {"tool": f"phasesync {__version__}", "seed": sc.sim.master_seed}
    meta.update(extra)
    return meta


def _out(args, sc):
    return Path(args.out if args.out is not None else sc.outputs.get("directory", "out"))


def _fmt(args, sc):
    return args.format if args.format is not None else sc.outputs.get("format", "text")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    from .plant import build_system, simulate

    sc = _scenario(args)
    system = build_system(sc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = simulate(system)
    dest, fmt = _out(args, sc), _fmt(args, sc)
    cols = {k: v for k, v in out.channels.items()}
    cols["slip_count_A"] = out.slip_count_A
    cols["slip_count_B"] = out.slip_count_B
    units = {k: ("Hz" if k.startswith(("cmd_", "pump_corr")) else "s" if k == "t"
                 else "count" if k.startswith("slip") else "rad") for k in cols}
    write_table(dest / "timeseries", cols, _meta(sc, dt=out.dt, units=units), fmt)
    counts = {"t": np.arange(len(out.counts["snspd_1"])) * out.dt_counts, **out.counts}
    write_table(dest / "counts", counts, _meta(sc, dt=out.dt_counts, units="counts per bin; global_psi rad"), fmt)

    skip = int(0.1 * out.channels["t"].size)
    psd_cols = {}
    rms = {}
    for name in ETA_CHANNELS:
        x = out.channels[name][skip:]
        x = x - x.mean()
        p = welch_psd(TimeSeries(out.dt, x))
        psd_cols.setdefault("f", p.frequencies)
        psd_cols[name] = p.density
        psd_cols[name + "_cumulative_from_high"] = cumulative_csd(p, "from_high").values
        rms[name] = _deg(np.std(x))
    write_table(dest / "psd", psd_cols, _meta(sc, units="rad^2/Hz; cumulative rad RMS", dt=out.dt), fmt)

    loops = {lid: rms[ch] for lid, ch in LOOP_CHANNELS.items()}
    b = budget({lid: (v, 1) for lid, v in loops.items()})
    eta_total = out.channels["eta_total"][skip:]
    fid = fidelity_from_phase_error(eta_total - np.angle(np.mean(np.exp(1j * eta_total))))
    hist, edges = np.histogram(fid, bins=20, range=(0.0, 1.0))
    pfd_steps = sum(ev.steps for ev in out.events)
    report = {
        "tool": f"phasesync {__version__}",
        "seed": sc.sim.master_seed,
        "duration_s": out.duration,
        "loop_rms_deg": loops,
        "eta_total_rms_deg": rms["eta_total"],
        "budget_deg": b.sigma_total,
        "dominant_loop": b.dominant,
        "slip_count": {"A": int(out.slip_count_A[-1]), "B": int(out.slip_count_B[-1]),
                       "max_abs_A": int(np.abs(out.slip_count_A).max()),
                       "max_abs_B": int(np.abs(out.slip_count_B).max())},
        "fidelity": {"mean": float(np.mean(fid)), "bin_edges": edges.tolist(), "histogram": hist.tolist()},
        "unlock_events": [{"t": ev.time, "loop": ev.loop_id, "kind": ev.kind, "steps": ev.steps}
                          for ev in out.events],
        "actuator_saturation_steps": out.saturation,
    }
    write_json(dest / "report.json", report)
    for lid, v in loops.items():
        print(f"{lid:8s} {v:7.2f} deg")
    print(f"{'total':8s} {rms['eta_total']:7.2f} deg (budget {b.sigma_total:.2f} deg)")
    if pfd_steps > args.max_unlock_steps:
        log.error("phase detector saturated for %d fine steps", pfd_steps)
        return EXIT_UNLOCK
    return EXIT_OK


def cmd_identify(args):
    from .plant import build_system
    from .plant import loops as loopmath
    from .plant.identification import GLOBAL_NOTE, global_residual_comparison, run_identification
    from .plant.model import LOOP_IDS

    if args.loop_id not in LOOP_IDS:
        raise UsageError(f"unknown loop id {args.loop_id!r}; expected one of {LOOP_IDS}")
    sc = _scenario(args)
    system = build_system(sc)
    dest, fmt = _out(args, sc), _fmt(args, sc)
    if args.loop_id == "global":
        on, off = global_residual_comparison(system, args.duration)
        write_table(dest / "global_residual_psd", {"f": on.frequencies, "psd_on": on.density, "psd_off": off.density},
                    _meta(sc, units="rad^2/Hz", note=GLOBAL_NOTE), fmt)
        summary = {"loop_id": "global", "identified": False, "note": GLOBAL_NOTE,
                   "residual_rms_on_deg": _deg(on.rms()), "residual_rms_off_deg": _deg(off.rms())}
        write_json(dest / "identify_global.json", summary)
        print(GLOBAL_NOTE)
        print(f"residual RMS: loop on {summary['residual_rms_on_deg']:.2f} deg, "
              f"off {summary['residual_rms_off_deg']:.2f} deg")
        return EXIT_OK
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        injected, on, off = run_identification(system, args.loop_id, duration=args.duration)
    est = estimate_tf(injected, on, off)
    write_table(dest / f"identify_{args.loop_id}_series",
                {"t": injected.times, "injected": injected.samples, "on": on.samples, "off": off.samples},
                _meta(sc, dt=injected.dt, units={"injected": "Hz", "on": "rad", "off": "rad"}), fmt)
    write_table(dest / f"identify_{args.loop_id}_tf",
                {"f": est.frequencies, "plant_mag": np.abs(est.plant), "plant_phase": np.angle(est.plant),
                 "sensitivity_mag": np.abs(est.sensitivity), "open_loop_mag": np.abs(est.open_loop),
                 "open_loop_phase": np.angle(est.open_loop), "coherence": est.coherence},
                _meta(sc, units="f Hz, plant rad/Hz, phases rad"), fmt)
    lc = system.loop(args.loop_id)
    predicted = loopmath.closed_loop_bandwidth(lc.controller, lc.dt)
    summary = {"loop_id": args.loop_id, "identified": True, "bandwidth_hz": est.bandwidth,
               "model_bandwidth_hz": predicted, "coherent_bins": int(np.sum(est.coherent))}
    write_json(dest / f"identify_{args.loop_id}.json", summary)
    print(f"{args.loop_id}: -3 dB bandwidth {est.bandwidth:.6g} Hz (loop model {predicted:.6g} Hz)")
    return EXIT_OK


def cmd_fringe(args):
    from .plant import build_system
    from .plant.fringe import run_fringe

    sc = _scenario(args)
    system = build_system(sc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        run = run_fringe(system, args.setpoints, args.repeats, args.settle, args.dwell,
                         feedforward=args.feedforward, record_stride=5000)
    dest, fmt = _out(args, sc), _fmt(args, sc)
    sched = run.schedule
    reps = np.repeat(np.arange(args.repeats), args.setpoints)
    write_table(dest / "fringe_rates",
                {"sweep": reps, "setpoint": np.tile(sched.setpoints, args.repeats),
                 "counts_1": run.rates[:, :, 0].ravel(), "counts_2": run.rates[:, :, 1].ravel()},
                _meta(sc, units="setpoint rad, counts per dwell", dwell=sched.dwell, settle=sched.settle), fmt)
    write_table(dest / "fringe_sweeps",
                {"t": run.sweep_times, "contrast": run.contrast, "phase_offset": run.phase_offsets,
                 "predicted_offset": run.predicted_offset},
                _meta(sc, units="t s (simulated), phases rad", drift_time_scale=sc.sim.drift_time_scale), fmt)
    unlocked = run.output.unlocked
    report = {
        "tool": f"phasesync {__version__}", "seed": sc.sim.master_seed,
        "sweeps": args.repeats, "setpoints": args.setpoints,
        "contrast": run.mean_contrast, "phase_offset_deg": _deg(np.mean(run.phase_offsets)),
        "sigma_deg": _deg(run.sigma), "setpoint_spread_deg": _deg(run.setpoint_spread),
        "drift_correlation": run.drift_correlation, "feedforward": run.output.meta["feedforward"],
        "unlocked": unlocked,
    }
    write_json(dest / "fringe_report.json", report)
    print(f"C = {report['contrast']:.4f}  phi0 = {report['phase_offset_deg']:.2f} deg  "
          f"sigma = {report['sigma_deg']:.2f} deg  spread = {report['setpoint_spread_deg']:.2f} deg")
    return EXIT_UNLOCK if unlocked else EXIT_OK


def cmd_plan(args):
    if args.target is not None:
        plan = solve_plan(args.target, args.max, args.fast_center, args.loc_center)
    elif args.config is not None:
        plan = _scenario(args).frequency_plan
    else:
        plan = PAPER_PLAN
    result = {"plan": plan.as_dict()}
    if args.extend:
        result["star"] = [p.as_dict() for p in extend_star(plan, args.extend, args.max)]
    if args.budget:
        b = budget({f"loop{i}": tuple(v) for i, v in enumerate(args.budget)})
        result["budget"] = {"sigma_total": b.sigma_total, "sensitivities": b.sensitivities,
                            "contributions": b.contributions, "ranking": list(b.ranking)}
    dest = Path(args.out if args.out is not None else ".")
    write_json(dest / "plan.json", result)
    d = plan.as_dict()
    print(" ".join(f"{k}={v}" for k, v in d.items()))
    return EXIT_OK


def cmd_analyze(args):
    meta, cols = read_table(args.file)
    dt = meta.get("dt")
    if dt is None:
        if "t" not in cols or cols["t"].size < 2:
            raise UsageError("input has neither a dt header nor a time column")
        dt = float(cols["t"][1] - cols["t"][0])
    dt = float(dt)
    names = args.columns or [k for k in cols if k not in ("t", "f")]
    missing = [k for k in names if k not in cols]
    if missing:
        raise UsageError(f"columns not in {args.file}: {missing}")
    dest, fmt = Path(args.out if args.out is not None else "."), args.format or "text"
    out_cols = {}
    summary = {"source": str(args.file), "dt": dt, "rms": {}}
    for name in names:
        x = cols[name] - np.mean(cols[name])
        p = welch_psd(TimeSeries(dt, x), segment_length=args.segment_length)
        out_cols.setdefault("f", p.frequencies)
        out_cols[name] = p.density
        out_cols[name + "_cumulative_from_high"] = cumulative_csd(p, "from_high").values
        summary["rms"][name] = float(np.std(x))
    stem = Path(args.file).stem
    write_table(dest / f"{stem}_psd", out_cols, {"tool": f"phasesync {__version__}", "source": str(args.file)}, fmt)
    if {"injected", "on", "off"} <= set(cols):
        ts = [TimeSeries(dt, cols[k]) for k in ("injected", "on", "off")]
        est = estimate_tf(*ts, segment_length=args.segment_length)
        summary["bandwidth_hz"] = est.bandwidth
        print(f"-3 dB bandwidth {est.bandwidth:.6g} Hz")
    write_json(dest / f"{stem}_analysis.json", summary)
    for k, v in summary["rms"].items():
        print(f"{k:24s} rms {v:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p, seed=True, duration=True):
    p.add_argument("--config", help="scenario TOML (default: bundled paper scenario)")
    if seed:
        p.add_argument("--seed", type=int, help="override the master seed")
    if duration:
        p.add_argument("--duration", type=float, help="simulated seconds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=FORMATS, help="data file format")


def build_parser():
    parser = argparse.ArgumentParser(prog="phasesync", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the full system and write series, PSDs and a report")
    _common(p)
    p.add_argument("--max-unlock-steps", type=int, default=0,
                   help="fine steps on the phase-detector rail tolerated before exit code 2")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", help="identify one loop by noise injection")
    p.add_argument("loop_id", help="local_A, local_B, fast_A, fast_B or global")
    _common(p)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("fringe", help="sweep the global clock phase and fit fringes")
    _common(p, duration=False)
    p.add_argument("--setpoints", type=int, default=8)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--settle", type=float, default=0.01, help="s before counting at each setpoint")
    p.add_argument("--dwell", type=float, default=0.015, help="s of counting at each setpoint")
    p.add_argument("--drift-time-scale", type=float, help="compression factor for slow fiber drift")
    ff = p.add_mutually_exclusive_group()
    ff.add_argument("--feedforward", dest="feedforward", action="store_true", default=None)
    ff.add_argument("--no-feedforward", dest="feedforward", action="store_false")
    p.set_defaults(func=cmd_fringe)

    p = sub.add_parser("plan", help="check or solve a clock-frequency plan")
    p.add_argument("--config", help="take the plan from this scenario")
    p.add_argument("--target", type=int, help="solve for this global beat (Hz)")
    p.add_argument("--max", type=int, default=10_000, help="global beat ceiling (Hz)")
    p.add_argument("--fast-center", type=int, default=215_000_000)
    p.add_argument("--loc-center", type=int, default=400_000_000)
    p.add_argument("--extend", type=int, help="star plans for this many nodes")
    p.add_argument("--budget", type=float, nargs=2, action="append", metavar=("SIGMA", "MULT"),
                   help="budget component; repeat per loop")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("analyze", help="PSDs and transfer functions of an existing data file")
    p.add_argument("file")
    p.add_argument("--columns", nargs="+")
    p.add_argument("--segment-length", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=FORMATS)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, PlanInfeasible, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
