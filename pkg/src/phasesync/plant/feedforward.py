"""Fiber-length feed-forward from round-trip-time measurements.

A fiber that grows by ``dL`` delays the round trip by ``dt_rt = 2 n dL / c``
and shifts the photons against the co-propagating stabilization light by
``theta_err = n dL w_loc / c``.  Eliminating ``dL`` gives
``theta_err = dt_rt w_loc / 2``, independent of the refractive index, which
is why a timing measurement alone is enough to correct the phase.
"""

from __future__ import annotations

import numpy as np

from .._validation import check_positive
from ..config import FeedforwardSpec
from ..noise import SILICA_EXPANSION, TimeSeries
from ..signal_core import FIBER_INDEX, SPEED_OF_LIGHT, length_variation_error


def roundtrip_delay_change(delta_length, n=FIBER_INDEX):
    """Round-trip time change (s) for a one-way length change (m)."""
    return 2 * n * np.asarray(delta_length, dtype=float) / SPEED_OF_LIGHT


def length_from_roundtrip(delta_roundtrip, n=FIBER_INDEX):
    return SPEED_OF_LIGHT * np.asarray(delta_roundtrip, dtype=float) / (2 * n)


def apply_feedforward(roundtrip_series: TimeSeries, f_loc, n=FIBER_INDEX, spec: FeedforwardSpec | None = None):
    """Phase corrections (rad) for one arm from its round-trip-time record.

    The first sample is the reference.  The returned series is the estimated
    ``theta_err`` of that arm, which the caller adds to the global clock
    phase with the arm's sign.
    """
    if spec is not None and not spec.enabled:
        raise ValueError("feed-forward is disabled in this scenario")
    check_positive(f_loc, "f_loc")
    rt = np.asarray(roundtrip_series.samples, dtype=float)
    dl = length_from_roundtrip(rt - rt[0], n)
    corr = length_variation_error(dl, 2 * np.pi * f_loc, n)
    return TimeSeries(roundtrip_series.dt, np.atleast_1d(corr), unit="rad", t0=roundtrip_series.t0)


def fiber_length_change(temperature_change, fiber_length, coeff=SILICA_EXPANSION):
    return coeff * fiber_length * np.asarray(temperature_change, dtype=float)


def measured_roundtrip(delta_length, n, noise_rms, rng):
    """Noisy round-trip-time samples, one independent timing error each."""
    rt = roundtrip_delay_change(delta_length, n)
    if noise_rms > 0:
        rt = rt + rng.standard_normal(rt.shape) * noise_rms
    return rt
