"""Scenario configuration: TOML tree -> validated, typed settings.

Angles are degrees in the file and radians once loaded.  Validation stops
at the first problem and raises :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .control import ActuatorSpec, ControllerSpec, DelaySpec
from .noise import KINDS, NoiseProcess
from .planner import FrequencyPlan
from .signal_core import FIBER_INDEX, PATH_IDS, PathSegment

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ARMS = ("A", "B")
DEFAULT_SCENARIO = "paper.toml"


class ConfigError(ValueError):
    """Invalid scenario; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


# ---------------------------------------------------------------------------
# typed sections


@dataclass(frozen=True)
class FeedforwardSpec:
    enabled: bool = True
    roundtrip_measurement_noise: float = 1e-12  # s RMS per measurement
    update_period: float = 1.0  # s, in drift (physical) time

    def __post_init__(self):
        if not (np.isfinite(self.roundtrip_measurement_noise) and self.roundtrip_measurement_noise >= 0):
            raise ValueError("roundtrip_measurement_noise must be >= 0")
        if not (np.isfinite(self.update_period) and self.update_period > 0):
            raise ValueError("update_period must be > 0")


@dataclass(frozen=True)
class SimSettings:
    duration: float = 1.0
    master_seed: int = 0
    dt_fast: float = 2e-7
    local_decimation: int = 50
    global_decimation: int = 500
    drift_dt: float = 1e-2
    record_stride: int = 500
    drift_time_scale: float = 1.0
    dark_periods: bool = False
    dark_period: float = 1e-5
    dark_fraction: float = 0.25
    block_steps: int = 250_000

    @property
    def dt_local(self):
        return self.dt_fast * self.local_decimation

    @property
    def dt_global(self):
        return self.dt_fast * self.global_decimation


@dataclass(frozen=True)
class NoiseProfile:
    name: str
    kind: str
    params: dict

    def process(self, seed) -> NoiseProcess:
        return NoiseProcess(self.kind, self.params, seed)


@dataclass(frozen=True)
class LoopSettings:
    controller: ControllerSpec
    actuator: ActuatorSpec
    enabled: bool = True


@dataclass(frozen=True)
class NodeSettings:
    name: str
    excitation_frequency: float
    pump_frequency: float
    local_loop: LoopSettings
    fiber_length: float
    paths: dict  # id -> PathSegment
    excitation_laser: str | None = None
    pump_laser: str | None = None
    node_noise: tuple = ()
    local_detector: str | None = None
    fiber_vibration: str | None = None
    fiber_temperature: str | None = None
    midpoint_drift: str | None = None
    fast_detector: str | None = None


@dataclass(frozen=True)
class OffloadSettings:
    enabled: bool = True
    link: DelaySpec = DelaySpec(0.0, 500.0)
    time_constant: float = 0.05


@dataclass(frozen=True)
class GlobalSettings:
    gain: float = 50.0  # Hz per rad
    lowpass_corner: float = 300.0  # Hz
    enabled: bool = True


@dataclass(frozen=True)
class DetectorSettings:
    count_rate: float = 5e5  # counts/s summed over both detectors
    visibility: float = 0.9
    shot_noise: bool = True


@dataclass(frozen=True)
class MidpointSettings:
    reference_frequency: float
    fast_loop: LoopSettings
    offload: OffloadSettings
    global_loop: GlobalSettings
    snspd: DetectorSettings
    fringe_detector: DetectorSettings
    feedforward: FeedforwardSpec
    reference_laser: str | None = None


@dataclass(frozen=True)
class IdentificationSettings:
    amplitude: float  # Hz RMS of the injected command
    bandwidth: float  # Hz
    duration: float  # s per run
    record_stride: int = 1
    actuator_range: float | None = None  # Hz; widened range for the runs


@dataclass(frozen=True)
class ScenarioConfig:
    sim: SimSettings
    frequency_plan: FrequencyPlan
    stabilization_frequency: float
    refractive_index: float
    theta_offset: float  # rad
    expansion_coeff: float
    noise_profiles: dict
    nodes: dict
    midpoint: MidpointSettings
    identification: dict
    outputs: dict
    tree: dict = field(repr=False, default_factory=dict)

    def with_overrides(self, **sim_changes) -> "ScenarioConfig":
        tree = copy.deepcopy(self.tree)
        tree.setdefault("sim", {}).update({k: v for k, v in sim_changes.items() if v is not None})
        return parse_config(tree)


# ---------------------------------------------------------------------------
# parsing helpers


_MISSING = object()


def _get(tree, path, key, kind=float, default=_MISSING):
    full = f"{path}.{key}" if path else key
    if key not in tree:
        if default is _MISSING:
            raise ConfigError(full, "missing required key")
        return default
    value = tree[key]
    if value is None:
        return None
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            out = float(value)
            if not np.isfinite(out):
                raise ValueError
            return out
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind is dict:
            if not isinstance(value, dict):
                raise TypeError
            return value
        if kind is list:
            if not isinstance(value, list):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(full, f"expected {kind.__name__}, got {value!r}") from None
    raise AssertionError(kind)


def _wrap_errors(path, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _parse_sim(tree):
    t = _get(tree, "", "sim", dict, {})
    d = SimSettings()
    sim = SimSettings(
        duration=_get(t, "sim", "duration", float, d.duration),
        master_seed=_get(t, "sim", "master_seed", int, d.master_seed),
        dt_fast=_get(t, "sim", "dt_fast", float, d.dt_fast),
        local_decimation=_get(t, "sim", "local_decimation", int, d.local_decimation),
        global_decimation=_get(t, "sim", "global_decimation", int, d.global_decimation),
        drift_dt=_get(t, "sim", "drift_dt", float, d.drift_dt),
        record_stride=_get(t, "sim", "record_stride", int, d.record_stride),
        drift_time_scale=_get(t, "sim", "drift_time_scale", float, d.drift_time_scale),
        dark_periods=_get(t, "sim", "dark_periods", bool, d.dark_periods),
        dark_period=_get(t, "sim", "dark_period", float, d.dark_period),
        dark_fraction=_get(t, "sim", "dark_fraction", float, d.dark_fraction),
        block_steps=_get(t, "sim", "block_steps", int, d.block_steps),
    )
    if sim.duration <= 0:
        raise ConfigError("sim.duration", "must be > 0")
    if sim.dt_fast <= 0:
        raise ConfigError("sim.dt_fast", "must be > 0")
    for key in ("local_decimation", "global_decimation", "record_stride", "block_steps"):
        if getattr(sim, key) < 1:
            raise ConfigError(f"sim.{key}", "must be >= 1")
    if sim.global_decimation % sim.local_decimation:
        raise ConfigError("sim.global_decimation", "must be a multiple of sim.local_decimation")
    if sim.block_steps % sim.global_decimation or sim.block_steps % sim.record_stride:
        raise ConfigError("sim.block_steps", "must be a multiple of global_decimation and record_stride")
    if sim.drift_dt < sim.dt_global:
        raise ConfigError("sim.drift_dt", "must be >= the global step")
    if sim.drift_time_scale <= 0:
        raise ConfigError("sim.drift_time_scale", "must be > 0")
    if not 0 <= sim.dark_fraction < 1:
        raise ConfigError("sim.dark_fraction", "must lie in [0, 1)")
    return sim


def _parse_plan(tree):
    t = _get(tree, "", "frequency_plan", dict)
    vals = {}
    for key in ("omega_loc_A", "omega_loc_B", "omega_fast_A", "omega_fast_B"):
        v = _get(t, "frequency_plan", key, float)
        if not float(v).is_integer():
            raise ConfigError(f"frequency_plan.{key}", "must be an integer number of Hz")
        vals[key] = int(v)
    return _wrap_errors("frequency_plan", FrequencyPlan, **vals)


def _parse_profiles(tree):
    t = _get(tree, "", "noise_profiles", dict, {})
    out = {}
    for name, spec in t.items():
        path = f"noise_profiles.{name}"
        if not isinstance(spec, dict):
            raise ConfigError(path, "must be a table")
        kind = _get(spec, path, "kind", str)
        if kind not in KINDS:
            raise ConfigError(f"{path}.kind", f"unknown kind {kind!r}; expected one of {KINDS}")
        params = {k: v for k, v in spec.items() if k != "kind"}
        if kind == "mechanical_resonance":
            res = params.get("resonances", [])
            if not all(isinstance(r, list) and len(r) == 3 for r in res):
                raise ConfigError(f"{path}.resonances", "expected a list of [f0, Q, rms] triples")
            params["resonances"] = [tuple(float(v) for v in r) for r in res]
        # validate by building a stream at a nominal step
        _wrap_errors(path, lambda: NoiseProcess(kind, params, 0))
        out[name] = NoiseProfile(name, kind, params)
    return out


def _profile_ref(t, path, key, profiles):
    name = _get(t, path, key, str, None)
    if name is not None and name not in profiles:
        raise ConfigError(f"{path}.{key}", f"unknown noise profile {name!r}")
    return name


def _parse_controller(t, path):
    limits = _get(t, path, "output_limits", list, None)
    kw = dict(kind=_get(t, path, "kind", str),
              gain=_get(t, path, "gain", float),
              integral_corner=_get(t, path, "integral_corner", float, None),
              rolloff_corner=_get(t, path, "rolloff_corner", float, None))
    if limits is not None:
        if len(limits) != 2:
            raise ConfigError(f"{path}.output_limits", "expected [min, max]")
        kw["output_limits"] = (float(limits[0]), float(limits[1]))
    return _wrap_errors(path, ControllerSpec, **kw)


def _parse_loop(t, path):
    ctrl = _parse_controller(_get(t, path, "controller", dict), f"{path}.controller")
    act_t = _get(t, path, "actuator", dict, {})
    act = _wrap_errors(f"{path}.actuator", ActuatorSpec,
                       kind=_get(act_t, f"{path}.actuator", "kind", str, "aom_frequency"),
                       range=_get(act_t, f"{path}.actuator", "range", float, 1e6),
                       response_delay=_get(act_t, f"{path}.actuator", "response_delay", float, 0.0))
    return LoopSettings(ctrl, act, _get(t, path, "enabled", bool, True))


def _parse_paths(t, path, fiber_length, index):
    lengths = _get(t, path, "paths", dict, {})
    segs = {}
    for pid in PATH_IDS:
        key = f"{path}.paths.{pid}"
        if pid in lengths:
            entry = lengths[pid]
            if isinstance(entry, dict):
                length = _get(entry, key, "length", float)
                n = _get(entry, key, "refractive_index", float, index)
            else:
                length = _get(lengths, f"{path}.paths", pid, float)
                n = index
        else:
            length, n = (fiber_length, index) if pid == "D5" else (0.0, index)
        segs[pid] = _wrap_errors(key, PathSegment, pid, length, n)
    unknown = set(lengths) - set(PATH_IDS)
    if unknown:
        raise ConfigError(f"{path}.paths", f"unknown path ids {sorted(unknown)}")
    return segs


def _parse_node(tree, arm, profiles, index):
    path = f"nodes.{arm}"
    t = _get(_get(tree, "", "nodes", dict), "nodes", arm, dict)
    fiber_length = _get(t, path, "fiber_length", float, 0.0)
    if fiber_length < 0:
        raise ConfigError(f"{path}.fiber_length", "must be >= 0")
    node_noise = _get(t, path, "node_noise", list, [])
    for k, name in enumerate(node_noise):
        if name not in profiles:
            raise ConfigError(f"{path}.node_noise[{k}]", f"unknown noise profile {name!r}")
    return NodeSettings(
        name=arm,
        excitation_frequency=_get(t, path, "excitation_frequency", float, 470.45e12),
        pump_frequency=_get(t, path, "pump_frequency", float, 281.759e12),
        local_loop=_parse_loop(_get(t, path, "local_loop", dict), f"{path}.local_loop"),
        fiber_length=fiber_length,
        paths=_parse_paths(t, path, fiber_length, index),
        excitation_laser=_profile_ref(t, path, "excitation_laser", profiles),
        pump_laser=_profile_ref(t, path, "pump_laser", profiles),
        node_noise=tuple(node_noise),
        local_detector=_profile_ref(t, path, "local_detector", profiles),
        fiber_vibration=_profile_ref(t, path, "fiber_vibration", profiles),
        fiber_temperature=_profile_ref(t, path, "fiber_temperature", profiles),
        midpoint_drift=_profile_ref(t, path, "midpoint_drift", profiles),
        fast_detector=_profile_ref(t, path, "fast_detector", profiles),
    )


def _parse_detector(t, path, default_rate, default_vis):
    d = DetectorSettings(
        count_rate=_get(t, path, "count_rate", float, default_rate),
        visibility=_get(t, path, "visibility", float, default_vis),
        shot_noise=_get(t, path, "shot_noise", bool, True),
    )
    if d.count_rate < 0:
        raise ConfigError(f"{path}.count_rate", "must be >= 0")
    if not 0 <= d.visibility <= 1:
        raise ConfigError(f"{path}.visibility", "must lie in [0, 1]")
    return d


def _parse_midpoint(tree, profiles):
    path = "midpoint"
    t = _get(tree, "", "midpoint", dict)
    off_t = _get(t, path, "offload", dict, {})
    opath = f"{path}.offload"
    offload = OffloadSettings(
        enabled=_get(off_t, opath, "enabled", bool, True),
        link=_wrap_errors(opath, DelaySpec, _get(off_t, opath, "transport_delay", float, 0.0),
                          _get(off_t, opath, "update_rate", float, 500.0)),
        time_constant=_get(off_t, opath, "time_constant", float, 0.05),
    )
    if offload.time_constant <= 0:
        raise ConfigError(f"{opath}.time_constant", "must be > 0")
    g_t = _get(t, path, "global_loop", dict, {})
    gpath = f"{path}.global_loop"
    glob = GlobalSettings(
        gain=_get(g_t, gpath, "gain", float, 50.0),
        lowpass_corner=_get(g_t, gpath, "lowpass_corner", float, 500.0),
        enabled=_get(g_t, gpath, "enabled", bool, True),
    )
    if glob.lowpass_corner <= 0:
        raise ConfigError(f"{gpath}.lowpass_corner", "must be > 0")
    ff_t = _get(t, path, "feedforward", dict, {})
    fpath = f"{path}.feedforward"
    ff = _wrap_errors(fpath, FeedforwardSpec,
                      enabled=_get(ff_t, fpath, "enabled", bool, True),
                      roundtrip_measurement_noise=_get(ff_t, fpath, "roundtrip_measurement_noise", float, 1e-12),
                      update_period=_get(ff_t, fpath, "update_period", float, 1.0))
    return MidpointSettings(
        reference_frequency=_get(t, path, "reference_frequency", float, 188.6914e12),
        fast_loop=_parse_loop(_get(t, path, "fast_loop", dict), f"{path}.fast_loop"),
        offload=offload,
        global_loop=glob,
        snspd=_parse_detector(_get(t, path, "snspd", dict, {}), f"{path}.snspd", 5e5, 0.9),
        fringe_detector=_parse_detector(_get(t, path, "fringe_detector", dict, {}), f"{path}.fringe_detector",
                                        2e5, 1.0),
        feedforward=ff,
        reference_laser=_profile_ref(t, path, "reference_laser", profiles),
    )


def _parse_identification(tree):
    t = _get(tree, "", "identification", dict, {})
    out = {}
    for loop_id, spec in t.items():
        path = f"identification.{loop_id}"
        if not isinstance(spec, dict):
            raise ConfigError(path, "must be a table")
        out[loop_id] = IdentificationSettings(
            amplitude=_get(spec, path, "amplitude", float),
            bandwidth=_get(spec, path, "bandwidth", float),
            duration=_get(spec, path, "duration", float),
            record_stride=_get(spec, path, "record_stride", int, 1),
            actuator_range=_get(spec, path, "actuator_range", float, None),
        )
    return out


def parse_config(tree: dict) -> ScenarioConfig:
    """Validate a raw configuration tree."""
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "configuration must be a table")
    sim = _parse_sim(tree)
    plan = _parse_plan(tree)
    optics = _get(tree, "", "optics", dict, {})
    index = _get(optics, "optics", "refractive_index", float, FIBER_INDEX)
    if index < 1:
        raise ConfigError("optics.refractive_index", "must be >= 1")
    profiles = _parse_profiles(tree)
    nodes = {arm: _parse_node(tree, arm, profiles, index) for arm in ARMS}
    extra = set(_get(tree, "", "nodes", dict)) - set(ARMS)
    if extra:
        raise ConfigError("nodes", f"exactly two nodes A and B are supported, got extra {sorted(extra)}")
    midpoint = _parse_midpoint(tree, profiles)
    outputs = _get(tree, "", "outputs", dict, {})
    fmt = outputs.get("format", "text")
    if fmt not in ("text", "binary"):
        raise ConfigError("outputs.format", f"must be 'text' or 'binary', got {fmt!r}")
    return ScenarioConfig(
        sim=sim,
        frequency_plan=plan,
        stabilization_frequency=_get(optics, "optics", "stabilization_frequency", float, 188.6914e12),
        refractive_index=index,
        theta_offset=np.radians(_get(optics, "optics", "theta_offset_deg", float, 0.0)),
        expansion_coeff=_get(optics, "optics", "expansion_coeff", float, 5.5e-7),
        noise_profiles=profiles,
        nodes=nodes,
        midpoint=midpoint,
        identification=_parse_identification(tree),
        outputs={"directory": outputs.get("directory", "out"), "format": fmt},
        tree=copy.deepcopy(tree),
    )


def load_config(path=None) -> ScenarioConfig:
    """Load a TOML scenario; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("phasesync").joinpath("data").joinpath(DEFAULT_SCENARIO).read_text()
    else:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        text = p.read_text()
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}") from None
    return parse_config(tree)


def default_tree() -> dict:
    return copy.deepcopy(load_config().tree)
