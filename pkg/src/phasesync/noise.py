"""Seeded disturbance generators.

Every generator is a pure function of ``(kind, params, seed, dt, n)``.  The
random bits come from numpy's ``PCG64`` bit generator seeded through
``SeedSequence``; processes that draw several independent streams (one per
resonance, for instance) spawn child sequences so the draws never interleave.

Each :class:`NoiseProcess` can also be consumed incrementally via
:meth:`NoiseProcess.stream`.  Concatenated chunks are bit-identical to a
single :meth:`NoiseProcess.generate` call of the same total length, which is
what lets the plant simulator walk through hours of noise block by block.
"""

from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass, field
from typing import Any, Mapping

import numba
import numpy as np
from scipy import linalg, signal

from ._validation import check_count, check_nonnegative, check_positive

KINDS = ("laser_linewidth", "mechanical_resonance", "thermal_drift", "white", "prbs", "shot_counts")

SNSPD_MAX_RATE = 1e6  # counts/s, detector ceiling

# LFSR feedback taps (1-indexed) for maximal-length sequences
_PRBS_TAPS = {7: (7, 6), 9: (9, 5), 11: (11, 9), 15: (15, 14), 20: (20, 17), 23: (23, 18), 31: (31, 28)}


@dataclass
class TimeSeries:
    """Uniformly sampled record."""

    dt: float
    samples: np.ndarray
    unit: str = "rad"
    t0: float = 0.0

    def __post_init__(self):
        check_positive(self.dt, "dt")
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError(f"TimeSeries needs a non-empty 1-D sample array, got shape {self.samples.shape}")

    def __len__(self):
        return self.samples.size

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def fs(self):
        return 1.0 / self.dt

    @property
    def duration(self):
        return self.samples.size * self.dt


# ---------------------------------------------------------------------------
# streams


class _Stream:
    unit = "rad"

    def take(self, n):
        raise NotImplementedError


class _ZeroStream(_Stream):
    def __init__(self, unit):
        self.unit = unit

    def take(self, n):
        return np.zeros(n)


class _WalkStream(_Stream):
    """Gaussian random walk; sample k holds the sum of increments 0..k."""

    def __init__(self, rng, step_std, unit):
        self.rng = rng
        self.step_std = step_std
        self.unit = unit
        self.level = 0.0

    def take(self, n):
        steps = self.rng.standard_normal(n) * self.step_std
        # sequential accumulation from the carried level keeps chunking exact
        out = np.cumsum(np.concatenate(([self.level], steps)))[1:]
        if n:
            self.level = out[-1]
        return out


class _ResonanceStream(_Stream):
    """Sum of white noise shaped by second-order resonant sections."""

    def __init__(self, seed_seq, resonances, dt):
        fs = 1.0 / dt
        self.sections = []
        children = seed_seq.spawn(len(resonances))
        for (f0, q, rms), child in zip(resonances, children):
            b, a = signal.iirpeak(f0, q, fs=fs)
            gain, cov = _stationary_gain(b, a)
            scale = rms / np.sqrt(gain) if gain > 0 else 0.0
            init_rng, drive_rng = (np.random.Generator(np.random.PCG64(s)) for s in child.spawn(2))
            # start in the stationary distribution of the filter state
            w, v = np.linalg.eigh(cov)
            zi = (v * np.sqrt(np.clip(w, 0, None))) @ init_rng.standard_normal(2) * scale
            self.sections.append([b, a, scale, drive_rng, zi])

    def take(self, n):
        out = np.zeros(n)
        for sec in self.sections:
            b, a, scale, rng, zi = sec
            y, sec[4] = signal.lfilter(b, a, rng.standard_normal(n) * scale, zi=zi)
            out += y
        return out


class _BandLimitedStream(_Stream):
    def __init__(self, rng, sigma, bandwidth, dt, unit):
        self.rng = rng
        self.unit = unit
        nyquist = 0.5 / dt
        self.sos = None
        if bandwidth < 0.99 * nyquist:
            self.sos = signal.butter(8, bandwidth, fs=1.0 / dt, output="sos")
            h = signal.sosfilt(self.sos, _impulse(int(max(4096, 200 / (bandwidth * dt)))))
            self.scale = sigma / np.sqrt(np.sum(h**2))
            # warm the filter up on throwaway samples so the record starts stationary
            warm = int(min(max(4096, 50 / (bandwidth * dt)), 2_000_000))
            _, self.zi = signal.sosfilt(self.sos, rng.standard_normal(warm) * self.scale,
                                        zi=np.zeros((self.sos.shape[0], 2)))
        else:
            self.scale = sigma

    def take(self, n):
        x = self.rng.standard_normal(n) * self.scale
        if self.sos is None:
            return x
        y, self.zi = signal.sosfilt(self.sos, x, zi=self.zi)
        return y


class _PRBSStream(_Stream):
    def __init__(self, seed, amplitude, order, hold, unit):
        if order not in _PRBS_TAPS:
            raise ValueError(f"prbs order must be one of {sorted(_PRBS_TAPS)}, got {order}")
        self.amplitude = amplitude
        self.order = order
        self.taps = _PRBS_TAPS[order]
        self.hold = hold
        self.unit = unit
        mask = (1 << order) - 1
        self.register = (seed & mask) or 1  # the all-zero state is a fixed point
        self.phase = 0  # position inside the current held bit
        self.bit = 0

    def take(self, n):
        out = np.empty(n)
        self.register, self.phase, self.bit = _lfsr_fill(
            out, self.register, self.order, self.taps[0], self.taps[1], self.hold, self.phase, self.bit)
        return out * self.amplitude


class _PoissonStream(_Stream):
    unit = "counts"

    def __init__(self, rng, mean_per_bin):
        self.rng = rng
        self.lam = mean_per_bin

    def take(self, n):
        return self.rng.poisson(self.lam, n).astype(float)


@numba.njit(cache=True)
def _lfsr_fill(out, register, order, tap_a, tap_b, hold, phase, bit):
    for i in range(out.size):
        if phase == 0:
            new = ((register >> (tap_a - 1)) ^ (register >> (tap_b - 1))) & 1
            register = ((register << 1) | new) & ((1 << order) - 1)
            bit = new
        out[i] = 1.0 if bit else -1.0
        phase = (phase + 1) % hold
    return register, phase, bit


def _impulse(n):
    x = np.zeros(n)
    x[0] = 1.0
    return x


def _stationary_gain(b, a):
    """Output variance and state covariance of ``lfilter(b, a)`` for unit white input.

    Uses the transposed direct-form II state ``z`` that ``lfilter`` carries in
    ``zi``:  ``y = z1 + b0 x``, ``z' = A z + B x``.
    """
    b = np.asarray(b, float) / a[0]
    a = np.asarray(a, float) / a[0]
    A = np.array([[-a[1], 1.0], [-a[2], 0.0]])
    B = np.array([b[1] - a[1] * b[0], b[2] - a[2] * b[0]])
    cov = linalg.solve_discrete_lyapunov(A, np.outer(B, B))
    return cov[0, 0] + b[0] ** 2, cov


# ---------------------------------------------------------------------------
# process description


def _rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def derive_seed(master_seed, name):
    """Stable 64-bit seed for a named source under a master seed."""
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class NoiseProcess:
    """A named disturbance model.

    ``params`` by kind:

    ``laser_linewidth``       ``linewidth`` (Hz)
    ``mechanical_resonance``  ``resonances``: list of ``(f0 Hz, Q, rms)``
    ``thermal_drift``         ``rate_rms`` (unit/sqrt(s)), optional ``unit``
    ``white``                 ``sigma`` (rms), optional ``bandwidth`` (Hz)
    ``prbs``                  ``amplitude``, optional ``order`` (default 15), ``hold``
    ``shot_counts``           ``mean_rate`` (counts/s)
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        self.params = dict(self.params)

    def stream(self, dt) -> _Stream:
        dt = check_positive(dt, "dt")
        p = self.params
        unit = p.get("unit", "rad")
        if self.kind == "laser_linewidth":
            lw = check_nonnegative(float(p["linewidth"]), "linewidth")
            if lw == 0:
                return _ZeroStream(unit)
            return _WalkStream(_rng(self.seed), np.sqrt(2 * np.pi * lw * dt), unit)
        if self.kind == "thermal_drift":
            rate = check_nonnegative(float(p["rate_rms"]), "rate_rms")
            if rate == 0:
                return _ZeroStream(unit)
            return _WalkStream(_rng(self.seed), rate * np.sqrt(dt), unit)
        if self.kind == "mechanical_resonance":
            res = [tuple(float(v) for v in r) for r in p.get("resonances", [])]
            nyquist = 0.5 / dt
            for f0, q, rms in res:
                if not 0 < f0 < nyquist:
                    raise ValueError(f"resonance at {f0} Hz is outside (0, Nyquist={nyquist} Hz)")
                check_positive(q, "Q")
                check_nonnegative(rms, "rms")
            if not res:
                return _ZeroStream(unit)
            return _ResonanceStream(np.random.SeedSequence(self.seed), res, dt)
        if self.kind == "white":
            sigma = check_nonnegative(float(p.get("sigma", 0.0)), "sigma")
            bandwidth = p.get("bandwidth")
            nyquist = 0.5 / dt
            if bandwidth is None:
                bandwidth = nyquist
            bandwidth = check_positive(float(bandwidth), "bandwidth")
            if bandwidth > nyquist * (1 + 1e-12):
                raise ValueError(f"bandwidth {bandwidth} Hz exceeds Nyquist {nyquist} Hz")
            if sigma == 0:
                return _ZeroStream(unit)
            return _BandLimitedStream(_rng(self.seed), sigma, bandwidth, dt, unit)
        if self.kind == "prbs":
            amp = check_nonnegative(float(p.get("amplitude", 1.0)), "amplitude")
            order = int(p.get("order", 15))
            hold = check_count(int(p.get("hold", 1)), "hold")
            return _PRBSStream(int(self.seed), amp, order, hold, unit)
        rate = float(p["mean_rate"])
        if rate < 0:
            raise ValueError(f"mean_rate must be >= 0, got {rate}")
        if rate > SNSPD_MAX_RATE:
            warnings.warn(f"count rate {rate:g}/s exceeds the detector ceiling of {SNSPD_MAX_RATE:g}/s",
                          stacklevel=3)
        return _PoissonStream(_rng(self.seed), rate * dt)

    def generate(self, dt, n) -> TimeSeries:
        n = check_count(n, "n")
        s = self.stream(dt)
        return TimeSeries(dt, s.take(n), unit=s.unit)


# ---------------------------------------------------------------------------
# functional API


def gen_laser_phase_noise(linewidth, dt, n, seed=0) -> TimeSeries:
    """Wiener phase walk of a laser with Lorentzian FWHM ``linewidth`` (Hz)."""
    return NoiseProcess("laser_linewidth", {"linewidth": linewidth}, seed).generate(dt, n)


def gen_mechanical_noise(resonances, dt, n, seed=0) -> TimeSeries:
    """Sum of independent resonant processes, each with the requested rms."""
    return NoiseProcess("mechanical_resonance", {"resonances": list(resonances)}, seed).generate(dt, n)


def gen_thermal_drift(rate_rms, dt, n, seed=0, unit="rad") -> TimeSeries:
    """Random walk whose increments have std ``rate_rms * sqrt(dt)``."""
    return NoiseProcess("thermal_drift", {"rate_rms": rate_rms, "unit": unit}, seed).generate(dt, n)


def gen_shot_noise_counts(mean_rate, dt, n, seed=0) -> TimeSeries:
    """Independent Poisson counts with mean ``mean_rate * dt`` per bin."""
    return NoiseProcess("shot_counts", {"mean_rate": mean_rate}, seed).generate(dt, n)


def gen_identification_noise(bandwidth, amplitude, dt, n, seed=0, unit="Hz") -> TimeSeries:
    """Gaussian noise with rms ``amplitude``, flat up to ``bandwidth``."""
    return NoiseProcess("white", {"sigma": amplitude, "bandwidth": bandwidth, "unit": unit}, seed).generate(dt, n)


def gen_fiber_length_drift(expansion_coeff, fiber_length, temp_profile: TimeSeries) -> TimeSeries:
    """Length change (m) of a fiber following a temperature record (K).

    The change is referenced to the first temperature sample.
    """
    check_positive(fiber_length, "fiber_length")
    temps = np.asarray(temp_profile.samples, dtype=float)
    return TimeSeries(temp_profile.dt, expansion_coeff * fiber_length * (temps - temps[0]),
                      unit="m", t0=temp_profile.t0)


SILICA_EXPANSION = 5.5e-7  # 1/K
