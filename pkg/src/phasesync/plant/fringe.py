"""Fringe sweeps: step the global clock phase and fit the detector fringes.

A sweep visits ``n`` equally spaced clock phases.  At each one the loops
settle for ``settle`` seconds and the reflected excitation light is then
counted for ``dwell`` seconds.  A cosine fit over the sweep gives the fringe
contrast and the phase offset ``phi0``; repeating sweeps tracks ``phi0``
over time, which is where uncorrected fiber drift shows up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..analysis import FringeFit, fit_fringe, sigma_from_contrast
from .model import SystemModel
from .simulate import SimOutput, simulate, step_schedule


@dataclass(frozen=True)
class FringeSchedule:
    setpoints: np.ndarray  # rad, one sweep
    settle: float
    dwell: float
    repeats: int

    @property
    def step(self):
        return self.settle + self.dwell

    @property
    def sweep_duration(self):
        return self.step * self.setpoints.size

    @property
    def duration(self):
        return self.sweep_duration * self.repeats

    def times_values(self):
        n = self.setpoints.size * self.repeats
        return np.arange(n) * self.step, np.tile(self.setpoints, self.repeats)


def fringe_schedule(n_setpoints=8, repeats=1, settle=0.01, dwell=0.015, bin_width=None):
    """Equally spaced setpoints over one period, optionally snapped to count bins."""
    if n_setpoints < 5:
        raise ValueError(f"a fringe sweep needs >= 5 setpoints, got {n_setpoints}")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    if settle < 0 or dwell <= 0:
        raise ValueError("settle must be >= 0 and dwell > 0")
    if bin_width is not None:
        settle = round(settle / bin_width) * bin_width
        dwell = max(1, round(dwell / bin_width)) * bin_width
    setpoints = 2 * np.pi * np.arange(n_setpoints) / n_setpoints
    return FringeSchedule(setpoints, float(settle), float(dwell), int(repeats))


@dataclass
class FringeRun:
    schedule: FringeSchedule
    fits: list  # FringeFit per sweep
    sweep_times: np.ndarray  # centre of each sweep, simulated seconds
    rates: np.ndarray  # (repeats, n_setpoints, 2) counts per dwell
    predicted_offset: np.ndarray  # -(theta_err_A - theta_err_B) averaged per sweep
    visibility: float
    output: SimOutput = field(repr=False)

    @property
    def contrast(self):
        return np.array([f.contrast for f in self.fits])

    @property
    def phase_offsets(self):
        """Fitted ``phi0`` per sweep, unwrapped along the run."""
        return np.unwrap([f.phase_offset for f in self.fits])

    @property
    def mean_contrast(self):
        return float(np.mean(self.contrast))

    @property
    def sigma(self):
        """Phase jitter (rad) implied by the mean contrast."""
        return sigma_from_contrast(min(1.0, self.mean_contrast / self.visibility))

    @property
    def setpoint_spread(self):
        return float(np.std(self.phase_offsets))

    @property
    def drift_correlation(self):
        a = self.phase_offsets
        b = self.predicted_offset
        if a.size < 3 or np.std(a) == 0 or np.std(b) == 0:
            return float("nan")
        return float(np.corrcoef(a, b)[0, 1])


def run_fringe(system: SystemModel, n_setpoints=8, repeats=1, settle=0.01, dwell=0.015,
               feedforward=None, shot_noise=None, record_stride=None) -> FringeRun:
    """Simulate ``repeats`` sweeps and fit each one."""
    sim = system.scenario.sim
    bin_width = sim.dt_global
    sched = fringe_schedule(n_setpoints, repeats, settle, dwell, bin_width)
    times, values = sched.times_values()
    out = simulate(system, sched.duration, setpoint=step_schedule(times, values),
                   feedforward=feedforward, shot_noise=shot_noise, record_stride=record_stride)
    c1 = out.counts["fringe_1"]
    c2 = out.counts["fringe_2"]
    n_settle = int(round(sched.settle / bin_width))
    n_dwell = int(round(sched.dwell / bin_width))
    n_step = n_settle + n_dwell
    rates = np.zeros((repeats, n_setpoints, 2))
    for r in range(repeats):
        for k in range(n_setpoints):
            start = (r * n_setpoints + k) * n_step + n_settle
            rates[r, k, 0] = c1[start:start + n_dwell].sum()
            rates[r, k, 1] = c2[start:start + n_dwell].sum()
    fits: list[FringeFit] = [fit_fringe(sched.setpoints, rates[r, :, 0], rates[r, :, 1]) for r in range(repeats)]
    sweep_t = (np.arange(repeats) + 0.5) * sched.sweep_duration
    d = out.drift
    pred_track = -(d["theta_err_A"] - d["theta_err_B"])
    edges = np.arange(repeats + 1) * sched.sweep_duration
    idx = np.searchsorted(d["t"], edges)
    predicted = np.array([pred_track[idx[r]:max(idx[r + 1], idx[r] + 1)].mean() for r in range(repeats)])
    return FringeRun(sched, fits, sweep_t, rates, predicted, system.midpoint.fringe_detector.visibility, out)
