"""Discrete-time loop elements: controllers, demodulators, actuators, delays.

The step arithmetic lives in small ``numba`` functions operating on flat
state arrays.  The classes below wrap them for interactive use and the plant
kernel calls the same functions, so a loop simulated element by element and
the compiled multirate simulation share one implementation.

Sign conventions
----------------
A controller receives ``error = setpoint - measurement`` (rad) and returns a
frequency command (Hz).  An AOM integrates the command into a phase,
``phase += 2 pi * command * dt``, so a positive gain closes a negative
feedback loop around any disturbance that adds to the measured phase.

Mixer noise
-----------
For a beat ``A cos(w t + phi) + n`` with white ``n`` of variance ``s2`` per
sample, I/Q demodulation followed by a lowpass of equivalent noise bandwidth
``B`` gives, for small angles, ``var(phi_hat) = 4 s2 B / (fs A^2)``.
``B = (fs / 2) sum(h^2) / (sum h)^2`` for the lowpass impulse response ``h``
(see :func:`lowpass_enbw`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numba
import numpy as np
from scipy import signal

from ._validation import check_nonnegative, check_positive
from .noise import TimeSeries
from .signal_core import ClockSpec, fiber_delay, wrap_phase

TWO_PI = 2 * np.pi

CONTROLLER_KINDS = ("P", "P_with_rolloff", "PI")
_KIND_CODE = {k: i for i, k in enumerate(CONTROLLER_KINDS)}

DEFAULT_AOM_RANGE = 1e6  # Hz
DEFAULT_LINK_RATE = 500.0  # Hz, midpoint -> node correction messages


class LossOfBeatWarning(RuntimeWarning):
    """Beat amplitude stayed below threshold for more than one clock period."""


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class ControllerSpec:
    kind: str = "P"
    gain: float = 1.0  # Hz per rad
    integral_corner: float | None = None  # Hz, PI only
    rolloff_corner: float | None = None  # Hz
    output_limits: tuple = (-DEFAULT_AOM_RANGE, DEFAULT_AOM_RANGE)

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValueError(f"controller kind must be one of {CONTROLLER_KINDS}, got {self.kind!r}")
        if self.kind == "PI" and not (self.integral_corner and self.integral_corner > 0):
            raise ValueError("PI controller needs integral_corner > 0")
        if self.kind == "P_with_rolloff" and not (self.rolloff_corner and self.rolloff_corner > 0):
            raise ValueError("P_with_rolloff controller needs rolloff_corner > 0")
        if self.rolloff_corner is not None and self.rolloff_corner <= 0:
            raise ValueError("rolloff_corner must be > 0")
        lo, hi = self.output_limits
        if not lo < hi:
            raise ValueError(f"output_limits must satisfy min < max, got {self.output_limits}")

    def params(self, dt):
        lo, hi = self.output_limits
        return np.array([_KIND_CODE[self.kind], self.gain, self.integral_corner or 0.0,
                         self.rolloff_corner or 0.0, lo, hi, dt], dtype=np.float64)


@dataclass(frozen=True)
class ActuatorSpec:
    kind: str = "aom_frequency"
    range: float = DEFAULT_AOM_RANGE  # +/- Hz
    response_delay: float = 0.0  # s

    def __post_init__(self):
        if self.kind not in ("aom_frequency", "pump_laser_offset"):
            raise ValueError(f"unknown actuator kind {self.kind!r}")
        check_positive(self.range, "actuator range")
        check_nonnegative(self.response_delay, "response_delay")


@dataclass(frozen=True)
class DelaySpec:
    transport_delay: float = 0.0  # s
    update_rate: float | None = None  # Hz; None for a continuous link

    def __post_init__(self):
        check_nonnegative(self.transport_delay, "transport_delay")
        if self.update_rate is not None:
            check_positive(self.update_rate, "update_rate")


def delay_steps(delay, dt):
    return int(round(delay / dt))


# ---------------------------------------------------------------------------
# compiled step functions

# controller state: integral, rolloff output, last command, saturated flag
CTRL_STATE = 4


@numba.njit(cache=True)
def controller_update(params, state, error):
    kind = int(params[0])
    gain = params[1]
    f_int = params[2]
    f_roll = params[3]
    lo = params[4]
    hi = params[5]
    dt = params[6]
    if kind == 2:
        trial = state[0] + error * dt
        raw = gain * (error + TWO_PI * f_int * trial)
        # conditional integration: freeze while pushing further into a limit
        if (raw > hi and error > 0) or (raw < lo and error < 0):
            trial = state[0]
            raw = gain * (error + TWO_PI * f_int * trial)
        k_i = gain * TWO_PI * f_int
        if k_i > 0:
            i_max = hi / k_i
            i_min = lo / k_i
            if trial > i_max:
                trial = i_max
            elif trial < i_min:
                trial = i_min
        state[0] = trial
    else:
        raw = gain * error
    if f_roll > 0:
        alpha = 1.0 - np.exp(-TWO_PI * f_roll * dt)
        state[1] += alpha * (raw - state[1])
        out = state[1]
    else:
        out = raw
    sat = 0.0
    if out > hi:
        out = hi
        sat = 1.0
    elif out < lo:
        out = lo
        sat = -1.0
    state[2] = out
    state[3] = sat
    return out


@numba.njit(cache=True)
def clamp(x, limit):
    if x > limit:
        return limit, 1.0
    if x < -limit:
        return -limit, -1.0
    return x, 0.0


@numba.njit(cache=True)
def pfd_accumulate(acc, delta):
    """Phase-domain PFD: accumulate phase difference, saturate at +/- 2 pi."""
    acc += delta
    if acc > TWO_PI:
        return TWO_PI, True
    if acc < -TWO_PI:
        return -TWO_PI, True
    return acc, False


# offload state: [sum, count, internal, applied, head, tail, (due, value) * capacity]
OFFLOAD_CAPACITY = 16
OFFLOAD_STATE = 6 + 2 * OFFLOAD_CAPACITY


@numba.njit(cache=True)
def offload_update(state, aom_cmd, step, link_steps, delay_steps_, rate, dt):
    """Advance the desaturation offload by one step; returns the applied correction.

    ``rate`` (1/s) is the integral rate of the offload controller.  Messages
    are sent every ``link_steps`` steps and applied ``delay_steps_`` later.
    """
    state[0] += aom_cmd
    state[1] += 1.0
    if (step + 1) % link_steps == 0:
        mean = state[0] / state[1]
        state[2] -= rate * mean * link_steps * dt
        state[0] = 0.0
        state[1] = 0.0
        tail = int(state[5])
        state[6 + 2 * tail] = step + 1 + delay_steps_
        state[7 + 2 * tail] = state[2]
        state[5] = (tail + 1) % OFFLOAD_CAPACITY
    head = int(state[4])
    while head != int(state[5]) and state[6 + 2 * head] <= step + 1:
        state[3] = state[7 + 2 * head]
        head = (head + 1) % OFFLOAD_CAPACITY
    state[4] = head
    return state[3]


# ---------------------------------------------------------------------------
# interactive wrappers


class Controller:
    """Stateful discrete controller running at a fixed step ``dt``."""

    def __init__(self, spec: ControllerSpec, dt):
        self.spec = spec
        self.dt = check_positive(dt, "dt")
        self._params = spec.params(self.dt)
        self.state = np.zeros(CTRL_STATE)

    def step(self, error):
        return controller_update(self._params, self.state, float(error))

    def reset(self):
        self.state[:] = 0.0

    @property
    def integral(self):
        return self.state[0]

    @property
    def saturated(self):
        return self.state[3] != 0


class DelayLine:
    """Pure transport delay of ``round(delay / dt)`` samples."""

    def __init__(self, transport_delay, dt, initial=0.0):
        check_nonnegative(transport_delay, "transport_delay")
        self.n = delay_steps(transport_delay, check_positive(dt, "dt"))
        self._buf = np.full(self.n, float(initial))
        self._i = 0

    def step(self, sample):
        if self.n == 0:
            return sample
        out = self._buf[self._i]
        self._buf[self._i] = sample
        self._i = (self._i + 1) % self.n
        return out


class AOMActuator:
    """Frequency-modulated AOM: integrates a clamped command into phase."""

    def __init__(self, spec: ActuatorSpec, dt):
        self.spec = spec
        self.dt = check_positive(dt, "dt")
        self._delay = DelayLine(spec.response_delay, dt)
        self.saturated = False
        self.phase = 0.0

    def step(self, freq_command):
        cmd, sat = clamp(float(self._delay.step(freq_command)), self.spec.range)
        self.saturated = sat != 0
        increment = TWO_PI * cmd * self.dt
        self.phase += increment
        return increment


class DesaturationOffload:
    """Slow integral loop that moves the mean AOM command onto the pump laser.

    Call :meth:`step` once per fast-loop step with the current AOM frequency
    command.  The returned pump frequency correction changes only when a link
    message arrives, i.e. at ``1/update_rate`` boundaries plus the transport
    delay.  In steady state the correction equals minus the mean AOM command,
    so a pump shift absorbs the offset and the AOM returns to band centre.
    """

    def __init__(self, link: DelaySpec, dt, time_constant=0.05):
        if link.update_rate is None:
            raise ValueError("desaturation link needs an update_rate")
        self.dt = check_positive(dt, "dt")
        self.link_steps = max(1, int(round(1.0 / (link.update_rate * dt))))
        self.delay_steps = delay_steps(link.transport_delay, dt)
        if self.delay_steps >= OFFLOAD_CAPACITY * self.link_steps:
            raise ValueError("transport delay too long for the message queue")
        self.rate = 1.0 / check_positive(time_constant, "time_constant")
        self.state = np.zeros(OFFLOAD_STATE)
        self._step = 0

    def step(self, aom_command):
        out = offload_update(self.state, float(aom_command), self._step, self.link_steps,
                             self.delay_steps, self.rate, self.dt)
        self._step += 1
        return out

    @property
    def correction(self):
        return self.state[3]


def link_delay_for_fiber(length, n=1.468, processing=0.0):
    """Transport delay of a message sent over ``length`` metres of fiber."""
    return fiber_delay(length, n) + processing


# ---------------------------------------------------------------------------
# waveform-level demodulators


def _lost_intervals(beat, clock, min_amplitude):
    """Time intervals (s) where the beat amplitude is below threshold."""
    x = beat.samples - np.mean(beat.samples)
    period = max(1, int(round(1.0 / (clock.frequency * beat.dt)))) if clock.frequency > 0 else x.size
    n_win = x.size // period
    if n_win == 0:
        return []
    win = x[: n_win * period].reshape(n_win, period)
    amp = 0.5 * (win.max(axis=1) - win.min(axis=1))
    low = amp < min_amplitude
    intervals = []
    start = None
    for i, flag in enumerate(np.append(low, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            # a single low window might be a partial period; need more than one clock period
            if i - start > 1:
                intervals.append((beat.t0 + start * period * beat.dt, beat.t0 + i * period * beat.dt))
            start = None
    return intervals


class PhaseFrequencyDetector:
    """Behavioral phase-frequency detector.

    Compares rising zero crossings of the beat against the clock.  The output
    follows the unwrapped phase difference through +/- pi and saturates at
    +/- 2 pi, so a frequency error produces a ramp of ``2 pi df`` rad/s until
    the rail.
    """

    def __init__(self, clock: ClockSpec, min_amplitude=0.0, hysteresis=0.1):
        self.clock = clock
        self.min_amplitude = min_amplitude
        self.hysteresis = hysteresis
        self.lost_beat = []

    def demodulate(self, beat: TimeSeries) -> TimeSeries:
        clock = self.clock
        if clock.frequency <= 0:
            raise ValueError("PFD needs a clock frequency > 0")
        if 1.0 / beat.dt < 4 * clock.frequency:
            raise ValueError("beat must be sampled at >= 4x the clock frequency")
        x = beat.samples - np.mean(beat.samples)
        t = beat.times
        self.lost_beat = _lost_intervals(beat, clock, self.min_amplitude)
        for start, stop in self.lost_beat:
            warnings.warn(f"loss of beat between {start:.6g} s and {stop:.6g} s", LossOfBeatWarning, stacklevel=2)

        h = self.hysteresis * 0.5 * (np.max(x) - np.min(x))
        crossings = _rising_crossings(x, t, h)
        if crossings.size < 2:
            raise ValueError("fewer than two beat zero crossings; cannot demodulate")
        # a rising crossing of cos(psi) happens at psi = -pi/2 (mod 2 pi)
        psi_c = clock.phase_at(crossings)
        k0 = np.round((psi_c[0] + np.pi / 2) / TWO_PI)
        psi_b = -np.pi / 2 + TWO_PI * (k0 + np.arange(crossings.size))
        diff_at = psi_b - psi_c
        diff = np.interp(t, crossings, diff_at)
        # extrapolate at the record end with the last measured frequency error
        tail = t > crossings[-1]
        slope = (diff_at[-1] - diff_at[-2]) / (crossings[-1] - crossings[-2])
        diff[tail] = diff_at[-1] + slope * (t[tail] - crossings[-1])
        out = np.empty_like(diff)
        acc = float(wrap_phase(diff[0]))
        out[0] = acc
        for i in range(1, diff.size):
            acc, _ = pfd_accumulate(acc, diff[i] - diff[i - 1])
            out[i] = acc
        return TimeSeries(beat.dt, out, unit="rad", t0=beat.t0)


@numba.njit(cache=True)
def _crossing_scan(x, t, h):
    out = np.empty(x.size)
    n = 0
    armed = False
    for i in range(1, x.size):
        if x[i - 1] < -h:
            armed = True
        if armed and x[i - 1] < 0.0 <= x[i]:
            frac = -x[i - 1] / (x[i] - x[i - 1])
            out[n] = t[i - 1] + frac * (t[i] - t[i - 1])
            n += 1
            armed = False
    return out[:n]


def _rising_crossings(x, t, h):
    return _crossing_scan(np.ascontiguousarray(x, dtype=np.float64), np.ascontiguousarray(t, dtype=np.float64), h)


def pfd_demodulate(beat: TimeSeries, clock: ClockSpec, min_amplitude=0.0) -> TimeSeries:
    """Phase error of ``beat`` relative to ``clock`` through a behavioral PFD."""
    return PhaseFrequencyDetector(clock, min_amplitude).demodulate(beat)


def _lowpass_sos(corner, fs):
    return signal.butter(2, corner, fs=fs, output="sos")


def lowpass_enbw(corner, fs, n=None):
    """Equivalent noise bandwidth (Hz) of the mixer's lowpass."""
    sos = _lowpass_sos(corner, fs)
    n = n or int(max(4096, 100 * fs / corner))
    x = np.zeros(n)
    x[0] = 1.0
    h = signal.sosfilt(sos, x)
    return 0.5 * fs * np.sum(h**2) / np.sum(h) ** 2


def mixer_demodulate(beat: TimeSeries, clock: ClockSpec, lowpass_corner, min_amplitude=0.0) -> TimeSeries:
    """I/Q mixer: multiply by the clock quadratures, lowpass, atan2.

    Output is wrapped to (-pi, pi] and includes the causal lowpass transient
    at the start of the record.
    """
    if not 0 < lowpass_corner < clock.frequency:
        raise ValueError("lowpass corner must lie between 0 and the clock frequency")
    x = beat.samples - np.mean(beat.samples)
    psi = clock.phase_at(beat.times)
    sos = _lowpass_sos(lowpass_corner, 1.0 / beat.dt)
    i_ch = signal.sosfilt(sos, x * np.cos(psi))
    q_ch = signal.sosfilt(sos, -x * np.sin(psi))
    lost = _lost_intervals(beat, clock, min_amplitude)
    for start, stop in lost:
        warnings.warn(f"loss of beat between {start:.6g} s and {stop:.6g} s", LossOfBeatWarning, stacklevel=2)
    return TimeSeries(beat.dt, np.arctan2(q_ch, i_ch), unit="rad", t0=beat.t0)
