import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phasesync.signal_core import (
    FIBER_INDEX, SPEED_OF_LIGHT, ClockSpec, OpticalFieldSpec, PathSegment, accumulated_phase,
    fidelity_from_phase_error, heterodyne_intensity, length_variation_error, phase_slip_error,
    wrap_phase,
)

F_STAB = 188691.4e9


def field(f=F_STAB, theta=0.0, intensity=1.0):
    return OpticalFieldSpec("u", f, theta, intensity)


def test_accumulated_phase_trivial_cases():
    assert accumulated_phase(OpticalFieldSpec("u", 1.0), [], 0.0) == 0.0
    assert accumulated_phase(field(theta=0.7), [], 0.0) == pytest.approx(0.7)


def test_one_wavelength_of_fiber_costs_two_pi():
    length = SPEED_OF_LIGHT / (FIBER_INDEX * F_STAB)
    seg = PathSegment("D5", length)
    delta = accumulated_phase(field(), [seg]) - accumulated_phase(field(), [])
    assert delta == pytest.approx(-2 * np.pi, rel=1e-12)


def test_wrapping_only_on_request():
    u = field(f=1.0)
    raw = accumulated_phase(u, [], 10.0)
    assert raw == pytest.approx(20 * np.pi)
    assert abs(accumulated_phase(u, [], 10.25, wrap=True) - np.pi / 2) < 1e-9


@given(st.lists(st.floats(0, 50), min_size=1, max_size=4), st.lists(st.floats(0, 50), min_size=1, max_size=4))
def test_accumulated_phase_additive_over_paths(l1, l2):
    u = field()
    p1 = [PathSegment("D5", x) for x in l1]
    p2 = [PathSegment("D6", x, 1.0) for x in l2]
    whole = accumulated_phase(u, p1 + p2)
    assert whole == pytest.approx(accumulated_phase(u, p1) + accumulated_phase(u, p2), rel=1e-12, abs=1e-6)


def test_heterodyne_constructive_and_destructive():
    u = field(intensity=0.5)
    assert heterodyne_intensity(u, u, 1.0, 1.0, FIBER_INDEX, 0.3) == pytest.approx(2.0)
    v = field(theta=np.pi, intensity=0.5)
    assert heterodyne_intensity(u, v, 1.0, 1.0, FIBER_INDEX, 0.3) == pytest.approx(0.0, abs=1e-12)


def test_heterodyne_rejects_negative_intensity():
    with pytest.raises(ValueError):
        OpticalFieldSpec("bad", 1e14, intensity=-1.0)


def test_beat_frequency_from_fft_peak():
    u1, u2 = field(f=1e6), field(f=1e6 + 1500.0)
    fs, n = 48000.0, 48000
    t = np.arange(n) / fs
    x = heterodyne_intensity(u1, u2, 0.0, 0.0, 1.0, t)
    spec = np.abs(np.fft.rfft(x - x.mean()))
    f_peak = np.fft.rfftfreq(n, 1 / fs)[np.argmax(spec)]
    assert abs(f_peak - 1500.0) <= fs / n


@given(st.floats(1.0, 1e4), st.floats(0, 1), st.floats(-np.pi, np.pi))
def test_heterodyne_periodic_and_bounded(df, t, theta):
    u1, u2 = field(f=1e6), field(f=1e6 + df, theta=theta)
    a = heterodyne_intensity(u1, u2, 2.0, 3.0, 1.0, t)
    b = heterodyne_intensity(u1, u2, 2.0, 3.0, 1.0, t + 1.0 / df)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)
    assert -1e-12 <= a <= 4.0 + 1e-12


def test_fidelity_values():
    assert fidelity_from_phase_error(0.0) == 1.0
    assert fidelity_from_phase_error(np.pi) == pytest.approx(0.0, abs=1e-15)
    assert fidelity_from_phase_error(np.pi / 2) == pytest.approx(0.5)


def test_fidelity_even(rng):
    d = rng.uniform(-10, 10, 1000)
    assert np.array_equal(fidelity_from_phase_error(d), fidelity_from_phase_error(-d))


def test_phase_slip_error_values():
    assert phase_slip_error(0, 5e14, F_STAB) == 0
    one = phase_slip_error(1, F_STAB + 400e6, F_STAB)
    assert one == pytest.approx(7.63e-4, rel=1e-3)
    assert phase_slip_error(10**6, F_STAB + 400e6, F_STAB) == pytest.approx(1e6 * one, rel=1e-12)
    with pytest.raises(ValueError):
        phase_slip_error(1, 1.0, 0.0)


def test_length_variation_error_values():
    dw = 2 * np.pi * 400e6
    assert length_variation_error(0.0, dw) == 0.0
    assert np.degrees(length_variation_error(0.02, dw, 1.0417)) == pytest.approx(10.0, abs=0.05)
    # the standard fiber index gives a larger error for the same excursion
    assert np.degrees(length_variation_error(0.02, dw, FIBER_INDEX)) == pytest.approx(14.1, abs=0.05)


@given(st.floats(-1, 1), st.floats(1, 1e9), st.integers(-1000, 1000))
def test_error_formulas_linear(dl, dw, m):
    assert length_variation_error(2 * dl, dw) == pytest.approx(2 * length_variation_error(dl, dw), abs=1e-15)
    assert length_variation_error(dl, 2 * dw) == pytest.approx(2 * length_variation_error(dl, dw), abs=1e-15)
    assert phase_slip_error(2 * m, F_STAB + 400e6, F_STAB) == pytest.approx(2 * phase_slip_error(m, F_STAB + 400e6, F_STAB))


def test_type_invariants():
    with pytest.raises(ValueError):
        OpticalFieldSpec("u", 0.0)
    with pytest.raises(ValueError):
        PathSegment("D9", 1.0)
    with pytest.raises(ValueError):
        PathSegment("D1", -1.0)
    with pytest.raises(ValueError):
        PathSegment("D1", 1.0, 0.9)
    with pytest.raises(ValueError):
        ClockSpec(-1.0)
    assert ClockSpec(0.0).frequency == 0.0


@given(st.floats(-1e6, 1e6))
def test_wrap_phase_range(x):
    w = wrap_phase(x)
    assert -np.pi < w <= np.pi + 1e-12
    assert np.cos(w) == pytest.approx(np.cos(x), abs=1e-6)
