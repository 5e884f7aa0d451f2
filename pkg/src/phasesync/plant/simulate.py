"""End-to-end multirate simulation of the two-node system."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..noise import NoiseProcess, TimeSeries
from ..signal_core import SPEED_OF_LIGHT, length_variation_error
from . import kernel as K
from .feedforward import fiber_length_change, measured_roundtrip
from .model import LOOP_IDS, SystemModel
from .snspd import comb_length

TWO_PI = 2 * np.pi


class UnlockWarning(RuntimeWarning):
    """A fast loop's phase detector hit its +/- 2 pi rail."""


@dataclass(frozen=True)
class UnlockEvent:
    time: float
    loop_id: str
    kind: str
    steps: int  # fine steps spent on the rail within the block


@dataclass
class SimOutput:
    """Recorded channels of one run; treat as read-only."""

    dt: float  # record interval
    channels: dict  # name -> array (RECORD_CHANNELS)
    dt_counts: float
    counts: dict  # name -> array (COUNT_CHANNELS)
    drift: dict  # drift-rate arrays: t, delta_L_*, theta_err_*, feedforward_*, roundtrip_*
    events: list
    saturation: dict  # loop_id -> fine steps clamped
    seed: int
    duration: float
    meta: dict = field(default_factory=dict)

    def series(self, name) -> TimeSeries:
        unit = "Hz" if name.startswith(("cmd_", "pump_corr")) else "rad"
        return TimeSeries(self.dt, self.channels[name], unit=unit)

    def __getattr__(self, name):
        channels = self.__dict__.get("channels", {})
        if name in channels and name != "t":
            return self.series(name)
        raise AttributeError(name)

    @property
    def slip_count_A(self):
        return slip_count(self.channels["fiber_phase_A"])

    @property
    def slip_count_B(self):
        return slip_count(self.channels["fiber_phase_B"])

    def count_series(self, name) -> TimeSeries:
        return TimeSeries(self.dt_counts, self.counts[name], unit="counts" if name != "global_psi" else "rad")

    @property
    def unlocked(self):
        return len(self.events) > 0


def slip_count(fiber_phase):
    """Whole 2 pi slips accumulated over the deployed fiber (toward zero)."""
    return np.trunc(np.asarray(fiber_phase) / TWO_PI).astype(np.int64)


def _constant_schedule(value=0.0):
    return lambda t: np.full(np.shape(t), float(value))


def step_schedule(times, values):
    """Piecewise-constant setpoint: ``values[k]`` from ``times[k]`` on."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape or times.ndim != 1 or times.size == 0:
        raise ValueError("times and values must be equal-length 1-D arrays")

    def mu(t):
        k = np.searchsorted(times, np.asarray(t, dtype=float), side="right") - 1
        return np.where(k >= 0, values[np.clip(k, 0, None)], 0.0)

    return mu


class _Sources:
    """Per-block noise streams for one run."""

    def __init__(self, system: SystemModel, dt_f, dt_l, dt_g, injections):
        src = system.sources

        def stream(name, dt):
            proc = src.get(name)
            return proc.stream(dt) if proc is not None else None

        self.ex = [stream(f"{a}.excitation_laser", dt_f) for a in "AB"]
        self.pump = [stream(f"{a}.pump_laser", dt_f) for a in "AB"]
        self.ref = stream("reference_laser", dt_f)
        self.detf = [stream(f"{a}.fast_detector", dt_f) for a in "AB"]
        self.detl = [stream(f"{a}.local_detector", dt_l) for a in "AB"]
        self.vib = [stream(f"{a}.fiber_vibration", dt_l) for a in "AB"]
        self.mid = [stream(f"{a}.midpoint_drift", dt_g) for a in "AB"]
        self.node = []
        for a in "AB":
            names = [k for k in src if k.startswith(f"{a}.node_noise.")]
            self.node.append([src[k].stream(dt_l) for k in names if src[k] is not None])
        inj = injections or {}
        self.injf = [inj[f"fast_{a}"].stream(dt_f) if f"fast_{a}" in inj else None for a in "AB"]
        self.injl = [inj[f"local_{a}"].stream(dt_l) if f"local_{a}" in inj else None for a in "AB"]
        self.mid_last = np.zeros(2)

    @staticmethod
    def _take(s, n):
        return s.take(n) if s is not None else np.zeros(n)

    def block(self, nf, nl, ng):
        t = self._take
        las = np.empty((2, nf))
        for x in range(2):
            las[x] = t(self.ex[x], nf)
            if self.pump[x] is not None:
                las[x] -= self.pump[x].take(nf)
        ref = t(self.ref, nf)
        detf = np.stack([t(self.detf[x], nf) for x in range(2)])
        injf = np.stack([t(self.injf[x], nf) for x in range(2)])
        node = np.zeros((2, nl))
        for x in range(2):
            for s in self.node[x]:
                node[x] += s.take(nl)
        detl = np.stack([t(self.detl[x], nl) for x in range(2)])
        injl = np.stack([t(self.injl[x], nl) for x in range(2)])
        vib = np.stack([t(self.vib[x], nl) for x in range(2)])
        mid = np.empty((2, ng + 1))
        for x in range(2):
            mid[x, 0] = self.mid_last[x]
            mid[x, 1:] = t(self.mid[x], ng)
            self.mid_last[x] = mid[x, -1]
        return las, ref, detf, injf, node, detl, injl, vib, mid


def _drift_tracks(system: SystemModel, n_drift, dt_drift, feedforward_on):
    """Fiber length excursions, their phase effects and the feed-forward estimate."""
    sc = system.scenario
    scale = sc.sim.drift_time_scale
    n = sc.refractive_index
    plan = sc.frequency_plan
    f_loc = {"A": plan.omega_loc_A, "B": plan.omega_loc_B}
    t = np.arange(n_drift) * dt_drift
    out = {"t": t}
    ff = system.midpoint.feedforward
    rng = np.random.Generator(np.random.PCG64(system.seed_for("roundtrip_measurement")))
    upd = max(1, int(round(ff.update_period / scale / dt_drift)))
    for arm in "AB":
        proc = system.sources.get(f"{arm}.fiber_temperature")
        if proc is not None:
            temp = proc.generate(dt_drift * scale, n_drift).samples
            temp = np.concatenate(([0.0], temp[:-1]))
        else:
            temp = np.zeros(n_drift)
        dl = fiber_length_change(temp, sc.nodes[arm].fiber_length, sc.expansion_coeff)
        out[f"delta_T_{arm}"] = temp
        out[f"delta_L_{arm}"] = dl
        # stabilization light phase over the fiber, and the photon's extra lag
        out[f"fiber_{arm}"] = -n * TWO_PI * sc.stabilization_frequency * dl / SPEED_OF_LIGHT
        out[f"theta_err_{arm}"] = np.asarray(length_variation_error(dl, TWO_PI * f_loc[arm], n), dtype=float)
        # round-trip timing sampled every update period, held in between
        updates = np.arange(0, n_drift, upd)
        rt_upd = measured_roundtrip(dl[updates], n, ff.roundtrip_measurement_noise, rng)
        rt = np.repeat(rt_upd - rt_upd[0], upd)[:n_drift]
        out[f"roundtrip_{arm}"] = rt
        est = rt * TWO_PI * f_loc[arm] / 2
        out[f"feedforward_{arm}"] = est if feedforward_on else np.zeros(n_drift)
    return out


def simulate(system: SystemModel, duration=None, *, setpoint=None, loops=None, injections=None,
             record_stride=None, feedforward=None, shot_noise=None) -> SimOutput:
    """Run the scenario for ``duration`` seconds.

    ``setpoint``: callable ``mu(t)`` (rad) for the global clock phase.
    ``loops``: mapping loop id -> bool to switch individual loops on/off.
    ``injections``: mapping loop id -> NoiseProcess added to that loop's
    actuator command (Hz).  ``feedforward`` and ``shot_noise`` override the
    scenario switches.
    """
    sc = system.scenario
    sim = sc.sim
    duration = sim.duration if duration is None else float(duration)
    if not duration > 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    dt = sim.dt_fast
    dec_loc = sim.local_decimation
    dec_glob = sim.global_decimation
    stride = sim.record_stride if record_stride is None else int(record_stride)
    if stride < 1:
        raise ValueError("record_stride must be >= 1")
    unit = math.lcm(dec_glob, stride)
    n_total = max(1, int(round(duration / (unit * dt)))) * unit
    block = max(unit, (sim.block_steps // unit) * unit)

    state = {lid: system.loop(lid).enabled for lid in LOOP_IDS}
    for lid, on in (loops or {}).items():
        if lid not in state:
            raise KeyError(f"unknown loop id {lid!r}; expected one of {LOOP_IDS}")
        state[lid] = bool(on)
    for lid in (injections or {}):
        if lid not in LOOP_IDS or lid == "global":
            raise KeyError(f"cannot inject into loop {lid!r}")
        if not isinstance(injections[lid], NoiseProcess):
            raise TypeError("injections must be NoiseProcess instances")

    mp = system.midpoint
    ff_on = mp.feedforward.enabled if feedforward is None else bool(feedforward)
    shot = mp.snspd.shot_noise if shot_noise is None else bool(shot_noise)
    plan = sc.frequency_plan
    fast = mp.fast_loops
    off = mp.offload

    p = np.zeros(K.N_PARAMS)
    p[K.P_DT] = dt
    p[K.P_F_GLOB] = mp.beat_clock.frequency
    p[K.P_OMEGA_TOT] = plan.omega_tot_residual
    p[K.P_THETA_OFFSET] = sc.theta_offset
    p[K.P_GLOB_GAIN] = mp.global_loop.gain
    p[K.P_GLOB_ALPHA] = 1 - np.exp(-TWO_PI * sc.midpoint.global_loop.lowpass_corner * sim.dt_global)
    p[K.P_SNSPD_RATE] = mp.snspd.count_rate
    p[K.P_SNSPD_VIS] = mp.snspd.visibility
    p[K.P_FRINGE_RATE] = mp.fringe_detector.count_rate
    p[K.P_FRINGE_VIS] = mp.fringe_detector.visibility
    p[K.P_RANGE_LOC] = system.nodes["A"].local_loop.actuator.range
    p[K.P_RANGE_FAST] = fast["A"].actuator.range
    p[K.P_OFF_RATE] = 1.0 / off.time_constant
    p[K.P_DARK_FRACTION] = sim.dark_fraction
    ip = np.zeros(K.N_IPARAMS, dtype=np.int64)
    ip[K.I_DEC_LOC] = dec_loc
    ip[K.I_DEC_GLOB] = dec_glob
    ip[K.I_REC_STRIDE] = stride
    ip[K.I_OFF_LINK] = max(1, int(round(1.0 / (off.link.update_rate * dt))))
    delays = [int(round(fast[a].delay.transport_delay / dt)) for a in "AB"]
    ip[K.I_OFF_DELAY] = max(delays)
    ip[K.I_DARK_PERIOD] = max(1, int(round(sim.dark_period / dt)))
    ip[K.I_COMB] = comb_length(mp.beat_clock.frequency, sim.dt_global, K.COMB_MAX)
    if ip[K.I_OFF_DELAY] >= 16 * ip[K.I_OFF_LINK]:
        raise ValueError("offload transport delay too long for the link queue")
    flags = np.zeros(9, dtype=np.int64)
    flags[K.F_LOC_A] = state["local_A"]
    flags[K.F_LOC_B] = state["local_B"]
    flags[K.F_FAST_A] = state["fast_A"]
    flags[K.F_FAST_B] = state["fast_B"]
    flags[K.F_GLOB] = state["global"]
    flags[K.F_OFF_A] = off.enabled and state["fast_A"]
    flags[K.F_OFF_B] = off.enabled and state["fast_B"]
    flags[K.F_SHOT] = shot
    flags[K.F_DARK] = sim.dark_periods
    ploc = np.stack([system.nodes[a].local_loop.controller.params(sim.dt_local) for a in "AB"])
    pfast = np.stack([fast[a].controller.params(dt) for a in "AB"])
    arm = K.new_arm_state()
    gs = K.new_global_state()

    sources = _Sources(system, dt, sim.dt_local, sim.dt_global, injections)
    K.seed_rng(system.seed_for("snspd_counts") % (2**32))

    # slow tracks on the drift grid, covering the whole run plus one bin
    dt_drift = sim.drift_dt
    n_drift = int(np.ceil((n_total * dt) / dt_drift)) + 2
    drift = _drift_tracks(system, n_drift, dt_drift, ff_on)
    mu = setpoint if setpoint is not None else _constant_schedule(0.0)

    rec = np.zeros((n_total // stride, K.N_REC))
    counts = np.zeros((n_total // dec_glob, len(K.COUNT_CHANNELS)))
    events = []
    done = 0
    k_rec = 0
    while done < n_total:
        nf = min(block, n_total - done)
        nl = nf // dec_loc
        ng = nf // dec_glob
        g0 = done // dec_glob
        tg = (g0 + np.arange(ng + 1)) * sim.dt_global
        fib = np.stack([np.interp(tg, drift["t"], drift[f"fiber_{a}"]) for a in "AB"])
        therr = np.stack([np.interp(tg, drift["t"], drift[f"theta_err_{a}"]) for a in "AB"])
        ffa = np.interp(tg, drift["t"], drift["feedforward_A"])
        ffb = np.interp(tg, drift["t"], drift["feedforward_B"])
        thglob = np.asarray(mu(tg), dtype=float) + ffa - ffb
        las, ref, detf, injf, node, detl, injl, vib, mid = sources.block(nf, nl, ng)
        sat_before = arm[:, K.PFD_SAT].copy()
        arm[:, K.FIRST_UNLOCK] = -1.0
        n_rec = K.run_block(done, nf, p, ip, flags, ploc, pfast, arm, gs,
                            las, ref, detf, injf, node, detl, injl, vib,
                            fib, therr, thglob, mid, rec[k_rec:], counts[g0:g0 + ng])
        k_rec += n_rec
        for x, a in enumerate("AB"):
            new = int(arm[x, K.PFD_SAT] - sat_before[x])
            if new > 0:
                events.append(UnlockEvent(arm[x, K.FIRST_UNLOCK] * dt, f"fast_{a}", "pfd_saturation", new))
        done += nf
    for ev in events[:3]:
        warnings.warn(f"{ev.loop_id}: phase detector saturated at t = {ev.time:.6g} s", UnlockWarning, stacklevel=2)

    channels = {name: rec[:, k].copy() for k, name in enumerate(K.RECORD_CHANNELS)}
    count_ch = {name: counts[:, k].copy() for k, name in enumerate(K.COUNT_CHANNELS)}
    saturation = {"local_A": int(arm[0, K.LOC_SAT]), "local_B": int(arm[1, K.LOC_SAT]),
                  "fast_A": int(arm[0, K.AOM_SAT]), "fast_B": int(arm[1, K.AOM_SAT])}
    drift_t = drift["t"]
    keep = drift_t <= n_total * dt
    drift_out = {k: v[keep] for k, v in drift.items()}
    drift_out["setpoint"] = np.asarray(mu(drift_out["t"]), dtype=float)
    meta = {"loops": state, "feedforward": ff_on, "shot_noise": shot, "n_fine": n_total}
    return SimOutput(dt * stride, channels, sim.dt_global, count_ch, drift_out, events, saturation,
                     system.master_seed, n_total * dt, meta)
