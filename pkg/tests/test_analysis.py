import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal
from sklearn.base import clone

from _loop_oracle import analytic_bandwidth, synthetic_loop
from phasesync.analysis import (
    FringeFitter, HilbertPhase, TransferFunctionEstimator, WelchPSD, band_rms, combine_sigmas,
    cumulative_csd, estimate_tf, fit_fringe, hilbert_phase, instantaneous_frequency, interior,
    sigma_from_contrast, welch_psd,
)
from phasesync.control import ControllerSpec
from phasesync.noise import TimeSeries
from phasesync.plant import loops as loopmath

DEG = np.pi / 180


# ---------------------------------------------------------------- Hilbert

def test_hilbert_cosine_slope_and_offset():
    fs, f = 1e4, 123.0
    t = np.arange(20000) / fs
    for offset in (0.0, 0.7):
        ph = interior(hilbert_phase(TimeSeries(1 / fs, np.cos(2 * np.pi * f * t + offset))).samples)
        ti = interior(t)
        slope, icpt = np.polyfit(ti, ph, 1)
        assert slope == pytest.approx(2 * np.pi * f, rel=1e-3)
        assert abs((icpt - offset + np.pi) % (2 * np.pi) - np.pi) < 0.01


def test_hilbert_chirp():
    fs, f1, f2, T = 1e4, 200.0, 800.0, 2.0
    t = np.arange(int(T * fs)) / fs
    x = signal.chirp(t, f1, T, f2, method="linear")
    fi = instantaneous_frequency(hilbert_phase(TimeSeries(1 / fs, x))).samples
    true = f1 + (f2 - f1) * t / T
    mid = slice(int(0.25 * t.size), int(0.75 * t.size))
    assert np.max(np.abs(fi[mid] / true[mid] - 1)) < 0.01


def test_hilbert_rejects_constant():
    with pytest.raises(ValueError):
        hilbert_phase(TimeSeries(1.0, np.ones(100)))


def test_hilbert_phase_offset_is_recovered_against_sine_reference():
    fs, f = 1e4, 50.0
    t = np.arange(10000) / fs
    a = interior(hilbert_phase(TimeSeries(1 / fs, np.cos(2 * np.pi * f * t + 0.7))).samples)
    b = interior(hilbert_phase(TimeSeries(1 / fs, np.cos(2 * np.pi * f * t))).samples)
    assert np.mean(a - b) == pytest.approx(0.7, abs=0.01)


# ---------------------------------------------------------------- Welch

def test_welch_white_parseval(rng):
    p = welch_psd(TimeSeries(1e-3, rng.standard_normal(2**16)), segment_length=512)
    assert p.integral() == pytest.approx(1.0, rel=0.05)
    inner = p.density[5:-5]
    assert inner.std() / inner.mean() < 0.2


def test_welch_sinusoid_power():
    fs, f, a = 1e4, 1000.0, 0.3
    t = np.arange(2**16) / fs
    p = welch_psd(TimeSeries(1 / fs, a * np.sin(2 * np.pi * f * t)))
    assert band_rms(p, 990, 1010) ** 2 == pytest.approx(a**2 / 2, rel=0.03)


def test_welch_two_tones():
    fs = 1e4
    t = np.arange(2**15) / fs
    p = welch_psd(TimeSeries(1 / fs, np.sin(2 * np.pi * 500 * t) + 0.5 * np.sin(2 * np.pi * 2000 * t)))
    peaks, _ = signal.find_peaks(p.density, height=p.density.max() * 0.05)
    assert sorted(np.round(p.frequencies[peaks])) == [500.0, 2000.0]


def test_welch_rejects_long_segment_and_bad_overlap(rng):
    ts = TimeSeries(1.0, rng.standard_normal(100))
    with pytest.raises(ValueError):
        welch_psd(ts, segment_length=200)
    with pytest.raises(ValueError):
        welch_psd(ts, overlap=0.95)


@given(st.integers(0, 2**31), st.integers(8, 12))
def test_psd_invariants(seed, log_n):
    x = np.random.default_rng(seed).standard_normal(2**log_n)
    p = welch_psd(TimeSeries(1.0, x))
    assert np.all(p.density >= 0)
    assert np.all(np.diff(p.frequencies) > 0)
    lo = cumulative_csd(p, "from_low").values
    hi = cumulative_csd(p, "from_high").values
    assert np.all(np.diff(lo) >= 0) and np.all(np.diff(hi) <= 0)
    assert lo[-1] == pytest.approx(hi[0], rel=1e-12)
    assert lo[-1] == pytest.approx(p.rms(), rel=1e-12)


def test_cumulative_flat_grows_as_sqrt_f(rng):
    p = welch_psd(TimeSeries(1e-3, rng.standard_normal(2**18)), segment_length=1024)
    c = cumulative_csd(p).values
    f = p.frequencies
    ratio = c[400] / c[100]
    assert ratio == pytest.approx(np.sqrt(f[400] / f[100]), rel=0.05)


def test_cumulative_rejects_direction(rng):
    p = welch_psd(TimeSeries(1.0, rng.standard_normal(64)))
    with pytest.raises(ValueError):
        cumulative_csd(p, "sideways")


# ---------------------------------------------------------------- identification

def test_estimate_tf_recovers_synthetic_loop():
    dt = 1e-5
    spec = loopmath.tune_gain(ControllerSpec("P", gain=1.0), dt, 1e3)
    inj, on, off = synthetic_loop(spec, dt, 2**18, 500.0, 2e4, seed=4, walk=0.002)
    est = estimate_tf(inj, on, off)
    good = est.coherence > 0.9
    assert good.sum() > 100
    true = loopmath.open_loop(spec, dt, est.frequencies[good])
    assert np.max(np.abs(np.abs(est.open_loop[good]) / np.abs(true) - 1)) < 0.05
    assert est.bandwidth == pytest.approx(analytic_bandwidth(spec, dt), rel=0.05)
    plant = loopmath.actuator_response(dt, est.frequencies[good])
    assert np.median(np.abs(est.plant[good] / plant - 1)) < 0.02


def test_estimate_tf_zero_injection_flags_all_bins(rng):
    dt = 1e-5
    n = 2**14
    inj = TimeSeries(dt, np.zeros(n))
    est = estimate_tf(inj, TimeSeries(dt, rng.standard_normal(n)), TimeSeries(dt, rng.standard_normal(n)))
    assert not est.coherent.any()
    assert np.isnan(est.bandwidth)


def test_estimate_tf_rejects_mismatch(rng):
    a = TimeSeries(1.0, rng.standard_normal(100))
    b = TimeSeries(1.0, rng.standard_normal(99))
    with pytest.raises(ValueError):
        estimate_tf(a, a, b)


def test_suppression_identity_on_synthetic_loop():
    # closed/open residual PSD ratio against 1/|1+L|^2 with only ambient noise
    dt = 1e-5
    spec = loopmath.tune_gain(ControllerSpec("P", gain=1.0), dt, 1e3)
    _, on, off = synthetic_loop(spec, dt, 2**18, 0.0 + 1e-12, 2e4, seed=2, walk=0.01)
    p_on = welch_psd(on, segment_length=4096)
    p_off = welch_psd(off, segment_length=4096)
    sel = (p_on.frequencies > 50) & (p_on.frequencies < 2e4)
    ratio = p_on.density[sel] / p_off.density[sel]
    model = np.abs(loopmath.sensitivity(spec, dt, p_on.frequencies[sel])) ** 2
    assert np.median(np.abs(10 * np.log10(ratio / model))) < 1.0


# ---------------------------------------------------------------- fringes

def test_fringe_noiseless():
    phi = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    fit = fit_fringe(phi, 1000 * (1 + np.cos(phi)) / 2, 1000 * (1 - np.cos(phi)) / 2)
    assert fit.contrast == pytest.approx(1.0, abs=1e-12)
    assert fit.phase_offset == pytest.approx(0.0, abs=1e-12)


@given(st.floats(0.05, 1.0), st.floats(-3.0, 3.0), st.floats(0.2, 5.0), st.floats(1.0, 1e4))
def test_fringe_imbalance_and_scale_invariance(c, phi0, imbalance, scale):
    phi = np.linspace(0, 2 * np.pi, 9, endpoint=False)
    r1 = (1 + c * np.cos(phi + phi0)) / 2
    r2 = (1 - c * np.cos(phi + phi0)) / 2
    ref = fit_fringe(phi, r1, r2)
    fit = fit_fringe(phi, scale * imbalance * r1, scale * r2)
    assert ref.contrast == pytest.approx(c, rel=1e-9)
    assert fit.contrast == pytest.approx(ref.contrast, rel=1e-9)
    assert np.cos(fit.phase_offset - phi0) == pytest.approx(1.0, abs=1e-9)
    assert fit.contrast <= 1.0 + 1e-9


def test_fringe_gaussian_jitter_matches_monte_carlo(rng):
    sigma = 35.5 * DEG
    phi = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    jitter = rng.normal(0, sigma, (phi.size, 200_000))
    mc = np.cos(phi[:, None] + jitter).mean(axis=1)
    fit = fit_fringe(phi, (1 + mc) / 2, (1 - mc) / 2)
    oracle = np.mean(np.cos(rng.normal(0, sigma, 10**6)))
    assert fit.contrast == pytest.approx(oracle, abs=0.01)
    assert fit.contrast == pytest.approx(0.825, abs=0.02)
    assert np.degrees(sigma_from_contrast(fit.contrast)) == pytest.approx(35.5, abs=1.5)


def test_fringe_rejects_degenerate():
    with pytest.raises(ValueError):
        fit_fringe([0, 0.1, 0.2, 0.3], [1, 2, 3, 4], [4, 3, 2, 1])
    phi = np.linspace(0, 0.8 * np.pi, 6)
    with pytest.raises(ValueError):
        fit_fringe(phi, 1 + np.cos(phi), 1 - np.cos(phi))


def test_sigma_from_contrast():
    assert sigma_from_contrast(1.0) == 0.0
    assert np.degrees(sigma_from_contrast(0.825)) == pytest.approx(35.5, abs=0.1)
    with pytest.raises(ValueError):
        sigma_from_contrast(0.0)
    with pytest.raises(ValueError):
        sigma_from_contrast(1.2)


@given(st.floats(1e-3, 60.0))
def test_sigma_contrast_round_trip(sigma_deg):
    s = sigma_deg * DEG
    assert sigma_from_contrast(np.exp(-s**2 / 2)) == pytest.approx(s, rel=1e-12)


def test_combine_sigmas():
    total = combine_sigmas([(12 * DEG, 2), (21 * DEG, 2), (8 * DEG, 1)])
    assert np.degrees(total) == pytest.approx(35.1, abs=0.05)
    assert abs(np.degrees(total) - 34.9) < 1.0
    assert combine_sigmas([0.3]) == pytest.approx(0.3)
    assert combine_sigmas([(0.3, 1)]) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        combine_sigmas([(-1.0, 1)])


def test_combine_sigmas_monte_carlo(rng):
    comps = [(12 * DEG, 2), (21 * DEG, 2), (8 * DEG, 1)]
    draws = sum(rng.normal(0, s, (m, 10**5)).sum(axis=0) for s, m in comps)
    assert np.std(draws) == pytest.approx(combine_sigmas(comps), rel=0.02)


# ---------------------------------------------------------------- estimator API

def test_estimators_follow_sklearn_conventions(rng):
    ts = TimeSeries(1e-3, rng.standard_normal(4096))
    w = WelchPSD(segment_length=512)
    assert clone(w).get_params() == {"segment_length": 512, "overlap": 0.5, "window": "hann"}
    assert w.fit(ts).psd_.segment_length == 512
    assert np.allclose(w.transform(ts), w.psd_.density)
    assert np.allclose(HilbertPhase().fit(ts).transform(ts).samples, hilbert_phase(ts).samples)

    phi = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    ff = FringeFitter().fit(phi, 1 + 0.5 * np.cos(phi), 1 - 0.5 * np.cos(phi))
    assert ff.contrast_ == pytest.approx(0.5)
    assert ff.predict([0.0])[0] == pytest.approx(0.75)

    dt = 1e-5
    spec = loopmath.tune_gain(ControllerSpec("P", gain=1.0), dt, 1e3)
    inj, on, off = synthetic_loop(spec, dt, 2**16, 500.0, 2e4, seed=1)
    tfe = TransferFunctionEstimator().fit(inj, on, off)
    f = np.array([300.0, 600.0])
    assert np.allclose(np.abs(tfe.predict(f)), np.abs(loopmath.open_loop(spec, dt, f)), rtol=0.05)
