"""Analytic frequency responses of the discrete loops.

These mirror the recursions in :mod:`phasesync.plant.kernel` sample for
sample, so ``1 / (1 + L)`` here is the exact suppression the simulation
applies to a disturbance entering at the measurement point.

Discrete loop at step ``T``::

    e_k = -m_k                     (setpoint 0)
    c_k = C(z) e_k                 controller, Hz
    a_{k+1} = a_k + 2 pi T c_{k-d} AOM integrates the delayed command
    L(z) = C(z) * 2 pi T z^-(1+d) / (1 - z^-1)

with ``d = 1`` the one-sample computation delay of the kernel.
"""

from __future__ import annotations

import numpy as np
from scipy import optimize

from ..control import ControllerSpec

TWO_PI = 2 * np.pi


def _z(f, dt):
    return np.exp(1j * TWO_PI * np.asarray(f, dtype=float) * dt)


def controller_response(spec: ControllerSpec, dt, f):
    """C(z) of the discrete controller at frequencies ``f`` (Hz/rad)."""
    zi = 1 / _z(f, dt)
    c = np.full(np.shape(f), spec.gain, dtype=complex)
    if spec.kind == "PI":
        c = c * (1 + TWO_PI * spec.integral_corner * dt / (1 - zi))
    if spec.rolloff_corner:
        alpha = 1 - np.exp(-TWO_PI * spec.rolloff_corner * dt)
        c = c * alpha / (1 - (1 - alpha) * zi)
    return c


def actuator_response(dt, f, delay_steps=1):
    """Phase out per Hz of command: integrating AOM with a pure delay."""
    zi = 1 / _z(f, dt)
    return TWO_PI * dt * zi ** (1 + delay_steps) / (1 - zi)


def open_loop(spec: ControllerSpec, dt, f, delay_steps=1):
    return controller_response(spec, dt, f) * actuator_response(dt, f, delay_steps)


def sensitivity(spec: ControllerSpec, dt, f, delay_steps=1):
    return 1 / (1 + open_loop(spec, dt, f, delay_steps))


def closed_loop_bandwidth(spec: ControllerSpec, dt, delay_steps=1, f_max=None):
    """First frequency where ``|S|`` rises to ``1/sqrt(2)`` (the -3 dB point)."""
    nyq = 0.5 / dt
    f_max = f_max or 0.999 * nyq
    f = np.geomspace(min(1e-3, f_max / 1e6), f_max, 20000)
    s = np.abs(sensitivity(spec, dt, f, delay_steps))
    above = s >= 1 / np.sqrt(2)
    if not above.any():
        return float("nan")
    k = int(np.argmax(above))
    if k == 0:
        return float(f[0])
    g = lambda x: abs(sensitivity(spec, dt, x, delay_steps)) - 1 / np.sqrt(2)
    return float(optimize.brentq(g, f[k - 1], f[k], xtol=1e-9 * f[k]))


def stability_margin(spec: ControllerSpec, dt, delay_steps=1):
    """Minimum of ``|1 + L|`` over the band; below ~0.4 means strong peaking."""
    f = np.geomspace(1e-3 / dt * 1e-6, 0.499 / dt, 20000)
    return float(np.min(np.abs(1 + open_loop(spec, dt, f, delay_steps))))


def is_stable(spec: ControllerSpec, dt, delay_steps=1):
    """Closed-loop poles inside the unit circle."""
    num, den = _polynomials(spec, dt, delay_steps)
    # characteristic polynomial den + num in powers of z^-1
    n = max(len(num), len(den))
    char = np.zeros(n)
    char[: len(den)] += den
    char[: len(num)] += num
    roots = np.roots(char)
    return bool(np.all(np.abs(roots) < 1 - 1e-12))


def _polymul(a, b):
    return np.convolve(a, b)


def _polynomials(spec, dt, delay_steps):
    """L(z) = num / den as polynomials in z^-1."""
    num = np.array([spec.gain])
    den = np.array([1.0])
    if spec.kind == "PI":
        k_i = TWO_PI * spec.integral_corner * dt
        num = _polymul(num, [1 + k_i, -1.0])
        den = _polymul(den, [1.0, -1.0])
    if spec.rolloff_corner:
        alpha = 1 - np.exp(-TWO_PI * spec.rolloff_corner * dt)
        num = _polymul(num, [alpha])
        den = _polymul(den, [1.0, -(1 - alpha)])
    num = _polymul(num, np.concatenate([np.zeros(1 + delay_steps), [TWO_PI * dt]]))
    den = _polymul(den, [1.0, -1.0])
    return num, den


def sensitivity_filter(spec: ControllerSpec, dt, delay_steps=1):
    """(b, a) of ``S(z) = den / (den + num)`` for use with ``lfilter``."""
    num, den = _polynomials(spec, dt, delay_steps)
    n = max(len(num), len(den))
    b = np.zeros(n)
    a = np.zeros(n)
    b[: len(den)] = den
    a[: len(den)] += den
    a[: len(num)] += num
    return b, a


def tune_gain(spec: ControllerSpec, dt, target_bandwidth, delay_steps=1, bracket=(1e-3, 1e9)):
    """Return ``spec`` with the gain that puts the -3 dB point at the target."""
    from dataclasses import replace

    def err(log_gain):
        bw = closed_loop_bandwidth(replace(spec, gain=float(np.exp(log_gain))), dt, delay_steps)
        return np.log(bw) - np.log(target_bandwidth)

    lo, hi = np.log(bracket[0]), np.log(bracket[1])
    grid = np.linspace(lo, hi, 60)
    vals = []
    for g in grid:
        try:
            vals.append(err(g))
        except ValueError:
            vals.append(np.nan)
    vals = np.array(vals)
    for k in range(len(grid) - 1):
        if np.isfinite(vals[k]) and np.isfinite(vals[k + 1]) and vals[k] < 0 <= vals[k + 1]:
            g = optimize.brentq(err, grid[k], grid[k + 1], xtol=1e-10)
            return replace(spec, gain=float(np.exp(g)))
    raise ValueError(f"no gain reaches a {target_bandwidth} Hz bandwidth")


def residual_variance(spec: ControllerSpec, dt, disturbance_psd, sensor_psd=None, delay_steps=1, n=200000):
    """Closed-loop phase variance for one-sided disturbance and sensor PSDs.

    ``disturbance_psd(f)`` enters at the plant output and is shaped by
    ``|S|^2``; ``sensor_psd(f)`` is measurement noise shaped by ``|T|^2``.
    """
    nyq = 0.5 / dt
    f = np.linspace(nyq / n, nyq, n)
    s = sensitivity(spec, dt, f, delay_steps)
    total = np.abs(s) ** 2 * disturbance_psd(f)
    if sensor_psd is not None:
        total = total + np.abs(1 - s) ** 2 * sensor_psd(f)
    return float(np.sum(total) * (f[1] - f[0]))


def wiener_psd(linewidth):
    """One-sided phase PSD (rad^2/Hz) of a Lorentzian-linewidth laser."""
    return lambda f: linewidth / (np.pi * np.asarray(f) ** 2)


def walk_psd(rate_rms):
    """One-sided PSD of a random walk with ``rate_rms`` units per sqrt(s)."""
    return lambda f: rate_rms**2 / (2 * np.pi**2 * np.asarray(f) ** 2)


def white_psd(sigma, dt):
    return lambda f: np.full(np.shape(f), 2 * sigma**2 * dt)


def resonance_psd(resonances, dt):
    """One-sided PSD of the resonance generator's peaking sections."""
    from scipy import signal

    def psd(f):
        f = np.asarray(f, dtype=float)
        total = np.zeros_like(f)
        for f0, q, rms in resonances:
            b, a = signal.iirpeak(f0, q, fs=1 / dt)
            _, h = signal.freqz(b, a, worN=f, fs=1 / dt)
            gain = 2 * dt * np.abs(h) ** 2
            # scale so the section integrates to rms^2 over (0, fs/2)
            ff = np.linspace(0, 0.5 / dt, 200001)
            _, hh = signal.freqz(b, a, worN=ff, fs=1 / dt)
            norm = np.sum(2 * dt * np.abs(hh) ** 2) * (ff[1] - ff[0])
            total += rms**2 * gain / norm
        return total

    return psd
