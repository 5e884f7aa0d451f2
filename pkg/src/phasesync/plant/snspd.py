"""Global-loop phase readout from a pair of single-photon detectors.

The two SNSPDs see complementary outputs of the central beamsplitter, so
their rates oscillate in antiphase at the beat frequency ``w_glob``::

    lambda_1,2 = R/2 (1 +/- V cos(w_glob t + phi))

Subtracting the counts removes the common-mode part, mixing the difference
with the clock quadratures and lowpassing gives ``phi``.  A boxcar spanning
a whole number of beat periods ahead of the lowpass removes the
double-frequency mixing product, which would otherwise leave a ripple and,
through the arctangent, a small bias.  For a window with
``N`` counts in total the phase noise is ``sqrt(2) / (V sqrt(N))``.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import signal

from .._validation import check_count, check_positive, check_same_sampling
from ..noise import TimeSeries
from ..signal_core import ClockSpec

SNR_THRESHOLD = 3.0


class InsufficientCountsWarning(RuntimeWarning):
    """Beat amplitude too small against shot noise for a usable phase."""


def comb_length(f_beat, dt, max_bins=64):
    """Fewest bins (>= 1 beat period) spanning a whole number of beat periods.

    Returns 1 (no boxcar) when no such length fits in ``max_bins``.
    """
    cycles = f_beat * dt
    if cycles <= 0:
        return 1
    for n in range(1, max_bins + 1):
        x = n * cycles
        if x >= 1 and abs(x - round(x)) < 1e-9:
            return n
    return 1


def _two_pole(corner, dt):
    # two cascaded one-pole sections, as used inside the simulation kernel
    a = 1 - np.exp(-2 * np.pi * corner * dt)
    b1, a1 = np.array([a]), np.array([1.0, -(1 - a)])
    return np.convolve(b1, b1), np.convolve(a1, a1)


def _noise_gain(b, a, corner, dt):
    n = int(max(4096, 20 / (corner * dt)))
    x = np.zeros(n)
    x[0] = 1.0
    h = signal.lfilter(b, a, x)
    return float(np.sum(h**2))


def snspd_global_demod(counts1: TimeSeries, counts2: TimeSeries, beat_clock: ClockSpec,
                       lowpass_corner=500.0, window=None, snr_threshold=SNR_THRESHOLD) -> TimeSeries:
    """Phase (rad) of the count-difference oscillation at the beat clock.

    With ``window`` (bins) the quadratures are averaged over consecutive
    non-overlapping windows and one phase per window is returned; otherwise
    the quadratures pass a boxcar over whole beat periods and a causal
    two-pole lowpass at ``lowpass_corner``, bin by bin.
    Each bin is demodulated at the clock phase of its centre.
    """
    check_same_sampling(counts1, counts2)
    dt = counts1.dt
    if beat_clock.frequency <= 0 or beat_clock.frequency * dt >= 0.5:
        raise ValueError(f"beat clock {beat_clock.frequency} Hz not resolvable with {dt} s bins")
    c1 = np.asarray(counts1.samples, dtype=float)
    c2 = np.asarray(counts2.samples, dtype=float)
    if np.any(c1 < 0) or np.any(c2 < 0):
        raise ValueError("counts must be non-negative")
    d = c1 - c2
    t_mid = counts1.t0 + (np.arange(d.size) + 0.5) * dt
    phi = beat_clock.phase_at(t_mid)
    # finite bins attenuate the beat by sinc(f dt); the phase is unaffected
    i_raw = d * np.cos(phi)
    q_raw = -d * np.sin(phi)
    mean_counts = 0.5 * float(np.mean(c1 + c2))  # per-bin variance of each quadrature
    if window is not None:
        w = check_count(window, "window")
        m = d.size // w
        if m < 1:
            raise ValueError(f"window of {w} bins exceeds the record of {d.size} bins")
        i_ch = i_raw[: m * w].reshape(m, w).mean(axis=1)
        q_ch = q_raw[: m * w].reshape(m, w).mean(axis=1)
        noise = np.sqrt(mean_counts / w)
        out_dt = w * dt
        t0 = counts1.t0
    else:
        check_positive(lowpass_corner, "lowpass_corner")
        if lowpass_corner >= beat_clock.frequency:
            raise ValueError("lowpass corner must lie below the beat frequency")
        b, a = _two_pole(lowpass_corner, dt)
        nc = comb_length(beat_clock.frequency, dt)
        box = np.full(nc, 1.0 / nc)
        if d.size < nc:
            raise ValueError(f"record of {d.size} bins shorter than the {nc}-bin comb")
        # as in the kernel, the lowpass starts once the comb holds whole periods
        lead = np.zeros(nc - 1)
        i_ch = np.concatenate((lead, signal.lfilter(b, a, np.convolve(i_raw, box, "valid"))))
        q_ch = np.concatenate((lead, signal.lfilter(b, a, np.convolve(q_raw, box, "valid"))))
        noise = np.sqrt(mean_counts * _noise_gain(np.convolve(b, box), a, lowpass_corner, dt))
        out_dt = dt
        t0 = counts1.t0
    amp = np.hypot(i_ch, q_ch)
    if noise > 0:
        snr = float(np.median(amp)) / noise
        if snr < snr_threshold:
            warnings.warn(f"beat SNR {snr:.2g} below {snr_threshold:g}; phase estimate unreliable",
                          InsufficientCountsWarning, stacklevel=2)
    elif not np.any(amp > 0):
        warnings.warn("no beat in the count difference", InsufficientCountsWarning, stacklevel=2)
    return TimeSeries(out_dt, np.arctan2(q_ch, i_ch), unit="rad", t0=t0)


def shot_noise_phase_std(total_counts, visibility):
    """Phase std (rad) of one estimate built from ``total_counts`` photons."""
    total_counts = np.asarray(total_counts, dtype=float)
    return np.sqrt(2.0) / (visibility * np.sqrt(total_counts))
