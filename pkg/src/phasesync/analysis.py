"""Measurement analysis: phase extraction, spectra, identification, fringes.

Functions take and return :class:`~phasesync.noise.TimeSeries` records.  The
estimator classes at the bottom wrap the same functions in the
fit/predict shape used by scikit-learn so that analysis settings can be
stored, cloned and inspected with ``get_params``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator

from ._validation import check_1d, check_same_sampling
from .noise import TimeSeries

EDGE_FRACTION = 0.05
COHERENCE_THRESHOLD = 0.9


@dataclass(frozen=True)
class PSDEstimate:
    frequencies: np.ndarray
    density: np.ndarray  # unit^2 / Hz, one-sided
    window: str
    segment_length: int
    overlap: float
    unit: str = "rad"

    @property
    def df(self):
        return self.frequencies[1] - self.frequencies[0]

    def integral(self):
        return float(np.sum(self.density) * self.df)

    def rms(self):
        return float(np.sqrt(self.integral()))


@dataclass(frozen=True)
class SpectralCurve:
    """A quantity tabulated over frequency, e.g. a cumulative RMS curve."""

    frequencies: np.ndarray
    values: np.ndarray
    label: str = ""


@dataclass(frozen=True)
class TransferFunctionEstimate:
    frequencies: np.ndarray
    plant: np.ndarray  # injection -> output with feedback off
    sensitivity: np.ndarray  # output on / output off, = 1 / (1 + L)
    open_loop: np.ndarray  # L
    coherence: np.ndarray
    bandwidth: float  # Hz, first crossing of |S| = 1/sqrt(2); nan if none

    @property
    def response(self):
        return self.open_loop

    @property
    def coherent(self):
        return self.coherence > COHERENCE_THRESHOLD


@dataclass(frozen=True)
class FringeFit:
    contrast: float
    phase_offset: float  # rad
    imbalance: tuple  # fitted mean rate per detector
    residual_rms: float

    @property
    def correction_factors(self):
        m1, m2 = self.imbalance
        mean = 0.5 * (m1 + m2)
        return (mean / m1, mean / m2)


def _as_series(ts):
    if not isinstance(ts, TimeSeries):
        raise TypeError(f"expected a TimeSeries, got {type(ts).__name__}")
    return ts


def interior(x, fraction=EDGE_FRACTION):
    """Drop ``fraction`` of the samples at each end (analytic-signal edges)."""
    x = np.asarray(x)
    k = int(fraction * x.size)
    return x[k: x.size - k]


# ---------------------------------------------------------------------------
# phase


def hilbert_phase(ts: TimeSeries) -> TimeSeries:
    """Unwrapped instantaneous phase of a real band-pass record."""
    ts = _as_series(ts)
    x = check_1d(ts.samples, "samples", min_length=16)
    x = x - np.mean(x)
    if np.ptp(x) == 0:
        raise ValueError("constant input has no instantaneous phase")
    phase = np.unwrap(np.angle(signal.hilbert(x)))
    return TimeSeries(ts.dt, phase, unit="rad", t0=ts.t0)


def instantaneous_frequency(phase: TimeSeries) -> TimeSeries:
    """Central-difference frequency (Hz) of an unwrapped phase record."""
    f = np.gradient(phase.samples, phase.dt) / (2 * np.pi)
    return TimeSeries(phase.dt, f, unit="Hz", t0=phase.t0)


# ---------------------------------------------------------------------------
# spectra


def welch_psd(ts: TimeSeries, segment_length=None, overlap=0.5, window="hann", detrend="constant") -> PSDEstimate:
    """One-sided Welch PSD normalized so that its integral is the variance."""
    ts = _as_series(ts)
    x = check_1d(ts.samples, "samples", min_length=2)
    n = x.size
    nperseg = max(2, n // 8) if segment_length is None else int(segment_length)
    if nperseg > n:
        raise ValueError(f"segment_length {nperseg} exceeds record length {n}")
    if nperseg < 2:
        raise ValueError("segment_length must be >= 2")
    if not 0 <= overlap <= 0.9:
        raise ValueError(f"overlap must lie in [0, 0.9], got {overlap}")
    noverlap = int(round(overlap * nperseg))
    f, p = signal.welch(x, fs=1.0 / ts.dt, window=window, nperseg=nperseg, noverlap=noverlap,
                        detrend=detrend, scaling="density", return_onesided=True)
    return PSDEstimate(f, p, str(window), nperseg, overlap, ts.unit)


def cumulative_csd(psd: PSDEstimate, direction="from_low") -> SpectralCurve:
    """Running RMS obtained by integrating the PSD from one end of the band."""
    power = psd.density * psd.df
    if direction == "from_low":
        values = np.sqrt(np.cumsum(power))
    elif direction == "from_high":
        values = np.sqrt(np.cumsum(power[::-1])[::-1])
    else:
        raise ValueError(f"direction must be 'from_low' or 'from_high', got {direction!r}")
    return SpectralCurve(psd.frequencies, values, f"cumulative RMS ({direction})")


def band_rms(psd: PSDEstimate, f_low=0.0, f_high=np.inf):
    """RMS contained in ``f_low <= f <= f_high``."""
    sel = (psd.frequencies >= f_low) & (psd.frequencies <= f_high)
    return float(np.sqrt(np.sum(psd.density[sel]) * psd.df))


# ---------------------------------------------------------------------------
# identification


def _crossing_frequency(f, mag, level):
    """First frequency where ``mag`` rises through ``level`` (log-f interpolation)."""
    above = mag >= level
    if not above.any():
        return float("nan")
    k = int(np.argmax(above))
    if k == 0:
        return float(f[0])
    f0, f1 = f[k - 1], f[k]
    m0, m1 = mag[k - 1], mag[k]
    if f0 <= 0:
        return float(f1)
    w = (level - m0) / (m1 - m0)
    return float(np.exp(np.log(f0) + w * (np.log(f1) - np.log(f0))))


def estimate_tf(injected: TimeSeries, output_on: TimeSeries, output_off: TimeSeries,
                segment_length=None, overlap=0.5, window="hann",
                detrend="constant", difference=True) -> TransferFunctionEstimate:
    """Plant and open-loop response from a feedback on/off injection pair.

    With ``w`` the injected signal, ``y_off`` the output without feedback and
    ``y_on`` with feedback::

        P = S_w,yoff / S_ww      S = S_w,yon / S_w,yoff      L = 1/S - 1

    Only the part of each output coherent with ``w`` enters, so ambient
    disturbances average out.  Bins where either coherence falls below 0.9
    are excluded from the bandwidth search.

    With ``difference`` both outputs are first-differenced before the
    spectra are taken.  The open-loop output of an integrating plant is a
    random walk whose leakage biases the lowest bins by several percent;
    its increments are stationary.  S, L and both coherences are unchanged
    by a common output filter, and P is corrected for it.
    """
    for ts in (injected, output_on, output_off):
        _as_series(ts)
    check_same_sampling(injected, output_on, output_off)
    w = np.asarray(injected.samples, dtype=float)
    y_on = np.asarray(output_on.samples, dtype=float)
    y_off = np.asarray(output_off.samples, dtype=float)
    if difference:
        y_on = np.diff(y_on, prepend=y_on[0])
        y_off = np.diff(y_off, prepend=y_off[0])
    n = w.size
    nperseg = max(16, n // 16) if segment_length is None else int(segment_length)
    if nperseg > n:
        raise ValueError(f"segment_length {nperseg} exceeds record length {n}")
    kw = dict(fs=1.0 / injected.dt, window=window, nperseg=nperseg, noverlap=int(round(overlap * nperseg)),
              detrend=detrend)
    f, s_ww = signal.welch(w, **kw)
    _, s_wy_off = signal.csd(w, y_off, **kw)
    _, s_wy_on = signal.csd(w, y_on, **kw)
    _, s_off = signal.welch(y_off, **kw)
    _, s_on = signal.welch(y_on, **kw)
    with np.errstate(divide="ignore", invalid="ignore"):
        plant = s_wy_off / s_ww
        if difference:
            plant = plant / (1.0 - np.exp(-2j * np.pi * f * injected.dt))
        sens = s_wy_on / s_wy_off
        open_loop = 1.0 / sens - 1.0
        coh_off = np.abs(s_wy_off) ** 2 / (s_ww * s_off)
        coh_on = np.abs(s_wy_on) ** 2 / (s_ww * s_on)
    coherence = np.nan_to_num(np.minimum(coh_off, coh_on), nan=0.0, posinf=0.0)
    coherence = np.clip(coherence, 0.0, 1.0)
    good = (coherence > COHERENCE_THRESHOLD) & (f > 0)
    bandwidth = _crossing_frequency(f[good], np.abs(sens[good]), 1 / np.sqrt(2)) if good.any() else float("nan")
    return TransferFunctionEstimate(f, plant, sens, open_loop, coherence, bandwidth)


# ---------------------------------------------------------------------------
# fringes and budgets


def _setpoint_span(setpoints):
    u = np.unique(np.round(np.mod(setpoints, 2 * np.pi), 9))
    if u.size < 2:
        return u.size, 0.0
    gaps = np.diff(np.append(u, u[0] + 2 * np.pi))
    # span of the smallest arc containing all distinct setpoints
    return u.size, 2 * np.pi - gaps.max()


def fit_fringe(setpoints, rates1, rates2) -> FringeFit:
    """Joint cosine fit ``r_i / m_i = 1 +/- C cos(phi + phi0)``.

    Each detector's mean ``m_i`` is fitted first and divided out, which
    removes detection-efficiency imbalance.  The corrected rates are then
    divided by their per-setpoint average, and the two fringes are fitted
    together with opposite signs.
    """
    phi = check_1d(setpoints, "setpoints")
    r1 = check_1d(rates1, "rates1")
    r2 = check_1d(rates2, "rates2")
    if not phi.size == r1.size == r2.size:
        raise ValueError("setpoints and rates must have equal lengths")
    n_distinct, span = _setpoint_span(phi)
    if n_distinct < 5 or span <= np.pi:
        raise ValueError(f"fringe fit needs >= 5 distinct setpoints spanning > pi "
                         f"(got {n_distinct} spanning {span:.3f} rad)")
    basis = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)])
    means = []
    normalized = []
    for r in (r1, r2):
        coef, *_ = np.linalg.lstsq(basis, r, rcond=None)
        if coef[0] <= 0:
            raise ValueError("fitted mean count rate must be positive")
        means.append(float(coef[0]))
        normalized.append(r / coef[0])
    # per-setpoint total normalization removes intensity changes between setpoints
    total = 0.5 * (normalized[0] + normalized[1])
    if np.any(total <= 0):
        raise ValueError("every setpoint needs a positive total count")
    normalized = [x / total - 1.0 for x in normalized]
    y = np.concatenate([normalized[0], -normalized[1]])
    a = np.concatenate([basis[:, 1:], basis[:, 1:]])
    (alpha, beta), *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ np.array([alpha, beta])
    return FringeFit(float(np.hypot(alpha, beta)), float(np.arctan2(-beta, alpha)), tuple(means),
                     float(np.sqrt(np.mean(resid**2))))


def sigma_from_contrast(contrast):
    """Gaussian phase spread (rad) that reduces fringe contrast to ``contrast``."""
    c = np.asarray(contrast, dtype=float)
    if np.any(c <= 0) or np.any(c > 1):
        raise ValueError(f"contrast must lie in (0, 1], got {contrast}")
    out = np.sqrt(-2.0 * np.log(c))
    return out if out.ndim else float(out)


def combine_sigmas(components):
    """Quadrature sum ``sqrt(sum m sigma^2)`` of ``(sigma, multiplicity)`` pairs.

    Bare numbers count once.
    """
    total = 0.0
    for comp in components:
        sigma, mult = (comp, 1) if np.isscalar(comp) else comp
        if sigma < 0 or mult < 0:
            raise ValueError(f"sigma and multiplicity must be >= 0, got {comp}")
        total += mult * float(sigma) ** 2
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# estimator wrappers


class WelchPSD(BaseEstimator):
    """Welch PSD with stored settings; ``fit`` sets ``psd_``."""

    def __init__(self, segment_length=None, overlap=0.5, window="hann"):
        self.segment_length = segment_length
        self.overlap = overlap
        self.window = window

    def fit(self, ts, y=None):
        self.psd_ = welch_psd(ts, self.segment_length, self.overlap, self.window)
        return self

    def transform(self, ts):
        return welch_psd(ts, self.segment_length, self.overlap, self.window).density


class TransferFunctionEstimator(BaseEstimator):
    """On/off identification; ``fit`` sets ``tf_`` and ``bandwidth_``."""

    def __init__(self, segment_length=None, overlap=0.5, window="hann", detrend="constant", difference=True):
        self.segment_length = segment_length
        self.overlap = overlap
        self.window = window
        self.detrend = detrend
        self.difference = difference

    def fit(self, injected, output_on, output_off):
        self.tf_ = estimate_tf(injected, output_on, output_off, self.segment_length, self.overlap, self.window,
                               self.detrend, self.difference)
        self.bandwidth_ = self.tf_.bandwidth
        return self

    def predict(self, frequencies):
        """Open-loop response interpolated at ``frequencies`` (Hz)."""
        f = self.tf_.frequencies
        L = self.tf_.open_loop
        return np.interp(frequencies, f, L.real) + 1j * np.interp(frequencies, f, L.imag)


class FringeFitter(BaseEstimator):
    """Cosine fringe fit; ``fit`` sets ``fit_``, ``contrast_``, ``phase_offset_``."""

    def fit(self, setpoints, rates1, rates2):
        self.fit_ = fit_fringe(setpoints, rates1, rates2)
        self.contrast_ = self.fit_.contrast
        self.phase_offset_ = self.fit_.phase_offset
        self.sigma_ = sigma_from_contrast(min(max(self.contrast_, 1e-300), 1.0))
        return self

    def predict(self, setpoints):
        """Normalized fringe ``(1 + C cos(phi + phi0)) / 2`` for detector 1."""
        return 0.5 * (1 + self.contrast_ * np.cos(np.asarray(setpoints) + self.phase_offset_))


class HilbertPhase(BaseEstimator):
    """Stateless transformer from band-pass record to unwrapped phase."""

    def fit(self, ts, y=None):
        return self

    def transform(self, ts):
        return hilbert_phase(ts)
