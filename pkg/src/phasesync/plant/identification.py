"""Closed-loop identification by broadband injection on the actuator.

Each run is done twice with identical ambient noise, once with the loop
under test closed and once open.  The global loop is held during both so
that its slow setpoint changes do not leak into the measured arm.
"""

from __future__ import annotations

import copy
import warnings

import numpy as np

from ..analysis import estimate_tf, welch_psd
from ..config import parse_config
from ..noise import NoiseProcess, TimeSeries
from .model import LOOP_IDS, SystemModel, build_system
from .simulate import UnlockWarning, simulate


class IdentificationDeclined(ValueError):
    """The global loop cannot be identified by injection."""


GLOBAL_NOTE = (
    "The global loop is not identified by injection: its error signal comes from "
    "shot-noise-limited photon counts at a 1500 Hz beat, so an injected tone strong "
    "enough to be coherent above the shot-noise floor would itself pull the loop out "
    "of its linear range. The residual phase PSD with the loop on and off is "
    "reported instead."
)


def _prepared_system(system: SystemModel, loop_id, actuator_range=None):
    # identification runs without dark periods (the stabilization light is on)
    tree = copy.deepcopy(system.scenario.tree)
    tree.setdefault("sim", {})["dark_periods"] = False
    if actuator_range is not None:
        if loop_id.startswith("local"):
            arm = loop_id[-1]
            tree["nodes"][arm]["local_loop"].setdefault("actuator", {})["range"] = float(actuator_range)
        else:
            tree["midpoint"]["fast_loop"].setdefault("actuator", {})["range"] = float(actuator_range)
    return build_system(parse_config(tree), system.master_seed)


def _settings(system, loop_id):
    return system.scenario.identification.get(loop_id.split("_")[0])


def default_injection(system: SystemModel, loop_id) -> NoiseProcess:
    """Band-limited white command noise from the scenario's identification section."""
    cfg = _settings(system, loop_id)
    if cfg is None or cfg.amplitude <= 0:
        raise ValueError(f"no identification settings for loop {loop_id!r}")
    params = {"sigma": cfg.amplitude, "bandwidth": cfg.bandwidth, "unit": "Hz"}
    return NoiseProcess("white", params, system.seed_for(f"identification.{loop_id}"))


def run_identification(system: SystemModel, loop_id, injection: NoiseProcess | None = None,
                       duration=None, record_stride=None):
    """Inject on ``loop_id``'s command and record its detector with feedback on and off.

    Returns ``(injected, measured_on, measured_off)`` sampled at the loop's
    own rate.  Unlock events during the open run are expected and only
    reported.
    """
    if loop_id not in LOOP_IDS:
        raise KeyError(f"unknown loop id {loop_id!r}; expected one of {LOOP_IDS}")
    if loop_id == "global":
        raise IdentificationDeclined(GLOBAL_NOTE)
    cfg = _settings(system, loop_id)
    if injection is None:
        injection = default_injection(system, loop_id)
    loop = system.loop(loop_id)
    dt_loop = loop.dt
    bw = injection.params.get("bandwidth")
    if bw is not None and float(bw) > 0.5 / dt_loop * (1 + 1e-12):
        raise ValueError(f"injection bandwidth {bw} Hz exceeds the loop's Nyquist {0.5 / dt_loop} Hz")
    duration = (cfg.duration if cfg is not None else 1.0) if duration is None else float(duration)
    sys_id = _prepared_system(system, loop_id, cfg.actuator_range if cfg is not None else None)
    dt_fast = sys_id.scenario.sim.dt_fast
    stride = int(round(dt_loop / dt_fast)) if record_stride is None else int(record_stride)
    if abs(stride * dt_fast - dt_loop) > 1e-9 * dt_loop:
        raise ValueError("record stride must sample the loop at its own rate")
    channel = "meas_" + loop_id
    runs = {}
    for closed in (True, False):
        loops = {"global": False, loop_id: closed}
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", UnlockWarning)
            out = simulate(sys_id, duration, loops=loops, injections={loop_id: injection},
                           record_stride=stride)
        for w in caught:
            if not closed or not issubclass(w.category, UnlockWarning):
                warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
        runs[closed] = out.channels[channel]
    n = runs[True].size
    injected = injection.generate(dt_loop, n)
    # the command sample k is applied after measurement k, so the records line up
    on = TimeSeries(dt_loop, runs[True], unit="rad")
    off = TimeSeries(dt_loop, runs[False], unit="rad")
    return injected, on, off


def identify(system: SystemModel, loop_id, injection=None, duration=None, segment_length=None):
    """Run the on/off pair and estimate plant, sensitivity and bandwidth."""
    injected, on, off = run_identification(system, loop_id, injection, duration)
    return estimate_tf(injected, on, off, segment_length=segment_length), (injected, on, off)


def global_residual_comparison(system: SystemModel, duration=None, segment_length=None):
    """Residual global-phase PSDs with the global loop closed and open."""
    cfg = _settings(system, "global")
    duration = (cfg.duration if cfg is not None else 5.0) if duration is None else float(duration)
    psds = {}
    for closed in (True, False):
        out = simulate(system, duration, loops={"global": closed})
        x = out.channels["eta_global"]
        x = x - np.mean(x)
        psds["on" if closed else "off"] = welch_psd(TimeSeries(out.dt, x, unit="rad"),
                                                   segment_length=segment_length)
    return psds["on"], psds["off"]
