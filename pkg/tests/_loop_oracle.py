"""Synthetic feedback loop built from exact transfer-function polynomials.

The outputs are produced by ``lfilter`` with the analytic plant and
sensitivity, so the true open-loop response is known in closed form and
independent of the time-stepping simulator.
"""

import numpy as np
from scipy import signal

from phasesync.noise import TimeSeries, gen_identification_noise
from phasesync.plant import loops as loopmath


def synthetic_loop(spec, dt, n, amplitude, bandwidth, seed=0, walk=0.0):
    w = gen_identification_noise(bandwidth, amplitude, dt, n, seed=seed).samples
    d = np.cumsum(np.random.default_rng(seed + 1).standard_normal(n)) * walk
    # plant: integrating actuator with a two-sample delay, as in the kernel
    y_off = signal.lfilter([0.0, 0.0, 2 * np.pi * dt], [1.0, -1.0], w) + d
    b, a = loopmath.sensitivity_filter(spec, dt)
    y_on = signal.lfilter(b, a, y_off)
    return TimeSeries(dt, w, unit="Hz"), TimeSeries(dt, y_on), TimeSeries(dt, y_off)


def analytic_bandwidth(spec, dt):
    return loopmath.closed_loop_bandwidth(spec, dt)
