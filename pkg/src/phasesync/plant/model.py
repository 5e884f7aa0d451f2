"""Wired two-node system built from a validated scenario."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..config import ARMS, ScenarioConfig
from ..control import ActuatorSpec, ControllerSpec, DelaySpec, link_delay_for_fiber
from ..noise import NoiseProcess, derive_seed
from ..signal_core import ClockSpec, OpticalFieldSpec
from .feedforward import FeedforwardSpec

LOOP_IDS = ("local_A", "local_B", "fast_A", "fast_B", "global")


@dataclass(frozen=True)
class LoopConfig:
    loop_id: str
    controller: ControllerSpec | None  # None for the global loop's P-on-SNSPD law
    actuator: ActuatorSpec | None
    demodulator: str  # "mixer", "pfd" or "snspd"
    clock: ClockSpec
    dt: float
    delay: DelaySpec = DelaySpec()
    enabled: bool = True
    gain: float | None = None  # global loop, Hz per rad


@dataclass(frozen=True)
class NodeModel:
    name: str
    excitation_laser: OpticalFieldSpec
    stabilization_offset_clock: ClockSpec
    pump_laser: OpticalFieldSpec
    local_loop: LoopConfig
    paths: dict  # D1..D4
    node_noise: tuple  # NoiseProcess

    @property
    def stabilization_frequency(self):
        # the stabilization light is derived from the excitation laser, so the
        # offset holds by construction
        return self.excitation_laser.frequency - self.stabilization_offset_clock.frequency


@dataclass(frozen=True)
class MidpointModel:
    reference_laser: OpticalFieldSpec
    fast_loops: dict  # arm -> LoopConfig
    global_loop: LoopConfig
    snspd: object
    fringe_detector: object
    beat_clock: ClockSpec
    paths: dict  # arm -> {D5..D8}
    feedforward: FeedforwardSpec
    offload: object


@dataclass(frozen=True)
class SystemModel:
    scenario: ScenarioConfig
    nodes: dict
    midpoint: MidpointModel
    sources: dict = field(repr=False)  # name -> NoiseProcess (seeded)
    master_seed: int = 0

    @property
    def loops(self) -> dict:
        out = {n.local_loop.loop_id: n.local_loop for n in self.nodes.values()}
        out.update({lc.loop_id: lc for lc in self.midpoint.fast_loops.values()})
        out["global"] = self.midpoint.global_loop
        return out

    def loop(self, loop_id) -> LoopConfig:
        loops = self.loops
        if loop_id not in loops:
            raise KeyError(f"unknown loop id {loop_id!r}; expected one of {tuple(loops)}")
        return loops[loop_id]

    def seed_for(self, name):
        return derive_seed(self.master_seed, name)


def _source(scenario, profile_name, site, master_seed):
    if profile_name is None:
        return None
    profile = scenario.noise_profiles.get(profile_name)
    if profile is None:
        raise ValueError(f"{site}: unknown noise profile {profile_name!r}")
    return profile.process(derive_seed(master_seed, site))


def build_system(scenario: ScenarioConfig, master_seed=None) -> SystemModel:
    """Wire nodes, midpoint and the five loops; each noise source gets a seed
    derived from the master seed and the site where it is used."""
    seed = scenario.sim.master_seed if master_seed is None else int(master_seed)
    sim = scenario.sim
    plan = scenario.frequency_plan
    sources = {}
    nodes = {}
    fast_loops = {}
    paths = {}
    loc_freqs = {"A": plan.omega_loc_A, "B": plan.omega_loc_B}
    fast_freqs = {"A": plan.omega_fast_A, "B": plan.omega_fast_B}
    ref_src = _source(scenario, scenario.midpoint.reference_laser, "reference_laser", seed)
    sources["reference_laser"] = ref_src
    for arm in ARMS:
        ns = scenario.nodes[arm]
        for role in ("excitation_laser", "pump_laser", "local_detector", "fiber_vibration",
                     "fiber_temperature", "midpoint_drift", "fast_detector"):
            sources[f"{arm}.{role}"] = _source(scenario, getattr(ns, role), f"{arm}.{role}", seed)
        node_noise = tuple(_source(scenario, name, f"{arm}.node_noise.{name}", seed) for name in ns.node_noise)
        for name, proc in zip(ns.node_noise, node_noise):
            sources[f"{arm}.node_noise.{name}"] = proc
        ex = OpticalFieldSpec(f"excitation_{arm}", ns.excitation_frequency,
                              phase_noise_source=sources[f"{arm}.excitation_laser"])
        pump = OpticalFieldSpec(f"pump_{arm}", ns.pump_frequency, phase_noise_source=sources[f"{arm}.pump_laser"])
        loc_clock = ClockSpec(loc_freqs[arm], label=f"loc_{arm}")
        local = LoopConfig(f"local_{arm}", ns.local_loop.controller, ns.local_loop.actuator, "mixer", loc_clock,
                           sim.dt_local, DelaySpec(ns.local_loop.actuator.response_delay), ns.local_loop.enabled)
        nodes[arm] = NodeModel(arm, ex, loc_clock, pump, local,
                               {k: ns.paths[k] for k in ("D1", "D2", "D3", "D4")}, node_noise)
        mp = scenario.midpoint
        link = mp.offload.link
        if link.transport_delay == 0 and ns.fiber_length > 0:
            link = DelaySpec(link_delay_for_fiber(ns.fiber_length, scenario.refractive_index), link.update_rate)
        fast_loops[arm] = LoopConfig(f"fast_{arm}", mp.fast_loop.controller, mp.fast_loop.actuator, "pfd",
                                     ClockSpec(fast_freqs[arm], label=f"fast_{arm}"), sim.dt_fast, link,
                                     mp.fast_loop.enabled)
        paths[arm] = {k: ns.paths[k] for k in ("D5", "D6", "D7", "D8")}
    mp = scenario.midpoint
    beat = ClockSpec(float(plan.omega_glob), label="glob")
    glob = LoopConfig("global", None, None, "snspd", beat, sim.dt_global, DelaySpec(), mp.global_loop.enabled,
                      gain=mp.global_loop.gain)
    ref = OpticalFieldSpec("reference", mp.reference_frequency, phase_noise_source=ref_src)
    midpoint = MidpointModel(ref, fast_loops, glob, mp.snspd, mp.fringe_detector, beat, paths, mp.feedforward,
                             mp.offload)
    for site, proc in sources.items():
        if proc is not None and not isinstance(proc, NoiseProcess):
            raise ValueError(f"{site}: noise source is not a NoiseProcess")
    return SystemModel(scenario, nodes, midpoint, sources, seed)
