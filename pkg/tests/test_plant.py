import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _scenarios import ALL_LOOPS_OFF, quiet_tree
from phasesync.analysis import combine_sigmas
from phasesync.config import FeedforwardSpec, parse_config
from phasesync.noise import TimeSeries
from phasesync.plant import LOOP_IDS, apply_feedforward, build_system, simulate, step_schedule
from phasesync.plant.feedforward import roundtrip_delay_change
from phasesync.plant.snspd import (InsufficientCountsWarning, comb_length, shot_noise_phase_std,
                                   snspd_global_demod)
from phasesync.signal_core import SPEED_OF_LIGHT, ClockSpec

DEG = np.pi / 180


def quiet_system(seed=None, **keep):
    return build_system(parse_config(quiet_tree(**keep)), seed)


# ---------------------------------------------------------------- wiring

def test_default_system_has_five_loops(system):
    assert set(system.loops) == set(LOOP_IDS)
    assert len(system.loops) == 5
    assert system.midpoint.beat_clock.frequency == 1500
    with pytest.raises(KeyError, match="nope"):
        system.loop("nope")


def test_stabilization_offset_by_construction(system):
    for node in system.nodes.values():
        # the clock is the excitation-minus-stabilization offset
        ex = node.excitation_laser.frequency
        assert ex - node.stabilization_frequency == node.stabilization_offset_clock.frequency


def test_simulate_rejects_bad_arguments(system):
    with pytest.raises(ValueError):
        simulate(system, 0.0)
    with pytest.raises(KeyError):
        simulate(system, 0.01, loops={"bogus": True})
    with pytest.raises(KeyError):
        simulate(system, 0.01, injections={"global": None})


# ---------------------------------------------------------------- fixed points

def test_noiseless_loops_hold_the_setpoint():
    out = simulate(quiet_system(), 0.3)
    assert np.max(np.abs(out.channels["eta_total"])) < 1e-9
    assert np.max(np.abs(out.channels["eta_global"])) < 1e-9


def test_noiseless_offset_is_a_constant():
    tree = quiet_tree()
    tree["optics"]["theta_offset_deg"] = 40.0
    out = simulate(build_system(parse_config(tree)), 0.1)
    assert np.max(np.abs(out.channels["eta_total"] - 40 * DEG)) < 1e-9


def test_loops_off_pass_through_single_wiener_source():
    system = quiet_system(**{"A.excitation_laser": "excitation_laser"})
    out = simulate(system, 0.01, loops=ALL_LOOPS_OFF, record_stride=1)
    eta = out.channels["eta_total"]
    walk = system.sources["A.excitation_laser"].generate(system.scenario.sim.dt_fast, eta.size).samples
    assert np.std(walk) > 0.1
    np.testing.assert_allclose(eta, walk, rtol=0, atol=1e-12)


def test_setpoint_step_moves_eta_total_exactly():
    mu = 0.8
    out = simulate(quiet_system(), 0.6, setpoint=step_schedule([0.0, 0.1], [0.0, mu]))
    t = out.channels["t"]
    eta = out.channels["eta_total"]
    before = eta[(t > 0.05) & (t < 0.1)]
    after = eta[t > 0.5]
    assert np.max(np.abs(after - before.mean() - mu)) < 1e-9


def test_setpoint_tracking_under_paper_noise(system):
    mu = 1.0
    out = simulate(system, 2.0, setpoint=step_schedule([0.0, 1.0], [0.0, mu]))
    t = out.channels["t"]
    eta = out.channels["eta_total"]
    d = np.angle(np.mean(np.exp(1j * eta[t > 1.2])) / np.mean(np.exp(1j * eta[(t > 0.2) & (t < 1.0)])))
    # mean shift over ~0.8 s of 35 deg jitter decorrelating within a few ms
    assert d == pytest.approx(mu, abs=0.05)


# ---------------------------------------------------------------- bookkeeping

def test_slip_count_matches_integrated_fiber_phase():
    tree = quiet_tree(**{"A.fiber_temperature": "fiber_temperature", "B.fiber_temperature": "fiber_temperature"})
    tree["sim"]["drift_time_scale"] = 3600.0
    system = build_system(parse_config(tree))
    out = simulate(system, 1.0)
    sc = system.scenario
    t = out.channels["t"]
    for arm in "AB":
        dl = np.interp(t, out.drift["t"], out.drift[f"delta_L_{arm}"])
        turns = -sc.refractive_index * sc.stabilization_frequency * dl / SPEED_OF_LIGHT
        slips = getattr(out, f"slip_count_{arm}")
        assert np.ptp(turns) > 3
        assert np.max(np.abs(turns - slips)) <= 1


def test_zero_residual_plan_has_no_mean_frequency(system):
    out = simulate(system, 2.0)
    t = out.channels["t"]
    slope = np.polyfit(t, out.channels["eta_total"], 1)[0]
    assert abs(slope / (2 * np.pi)) < 1 / t[-1]


def test_one_hz_residual_plan_beats_at_one_hz():
    tree = quiet_tree()
    tree["frequency_plan"]["omega_loc_A"] += 1
    out = simulate(build_system(parse_config(tree)), 0.5)
    t = out.channels["t"]
    slope = np.polyfit(t, out.channels["eta_total"], 1)[0]
    assert slope == pytest.approx(2 * np.pi, rel=1e-9)


def test_determinism(scenario):
    a = simulate(build_system(scenario, 11), 0.2)
    b = simulate(build_system(scenario, 11), 0.2)
    c = simulate(build_system(scenario, 12), 0.2)
    for k in a.channels:
        assert np.array_equal(a.channels[k], b.channels[k])
    for k in a.counts:
        assert np.array_equal(a.counts[k], b.counts[k])
    assert not np.array_equal(a.channels["eta_total"], c.channels["eta_total"])


def test_total_matches_quadrature_of_loop_residuals(system):
    # the full-length 60 s check is shortened; the budget is stationary after ~0.1 s
    out = simulate(system, 4.0)
    c = out.channels
    n0 = c["t"].size // 10
    parts = [np.std(c[k][n0:]) for k in ("eta_local_A", "eta_local_B", "eta_fast_A", "eta_fast_B", "eta_global")]
    total = np.std(c["eta_total"][n0:])
    assert total == pytest.approx(combine_sigmas(parts), rel=0.15)


def test_calibrated_residuals_near_targets(system):
    out = simulate(system, 2.0)
    c = out.channels
    n0 = c["t"].size // 10
    rms = {k: np.degrees(np.std(c[k][n0:])) for k in ("eta_local_A", "eta_fast_A", "eta_global")}
    assert rms["eta_local_A"] == pytest.approx(12.0, rel=0.25)
    assert rms["eta_fast_A"] == pytest.approx(21.0, rel=0.25)
    assert rms["eta_global"] == pytest.approx(8.0, rel=0.25)


# ---------------------------------------------------------------- feed-forward

def test_feedforward_ten_degree_example():
    n = 1.0417
    rt = TimeSeries(1.0, roundtrip_delay_change(np.array([0.0, 0.02]), n))
    corr = apply_feedforward(rt, 400e6, n)
    assert np.degrees(corr.samples[-1]) == pytest.approx(10.0, abs=0.1)
    neg = apply_feedforward(TimeSeries(1.0, roundtrip_delay_change(np.array([0.0, -0.02]), n)), 400e6, n)
    assert neg.samples[-1] == pytest.approx(-corr.samples[-1])


def test_feedforward_constant_roundtrip_is_zero():
    corr = apply_feedforward(TimeSeries(1.0, np.full(10, 3.7e-4)), 400e6)
    assert np.all(corr.samples == 0)
    with pytest.raises(ValueError):
        apply_feedforward(TimeSeries(1.0, np.zeros(3)), 400e6, spec=FeedforwardSpec(enabled=False))


@given(st.floats(-0.1, 0.1), st.floats(1.0, 2.0), st.floats(1e6, 1e9))
def test_feedforward_needs_no_refractive_index(dl, n, f_loc):
    # theta_err = w_loc dt_rt / 2 whatever the index that produced dt_rt
    rt = TimeSeries(1.0, roundtrip_delay_change(np.array([0.0, dl]), n))
    got = apply_feedforward(rt, f_loc, n).samples[-1]
    assert got == pytest.approx(np.pi * f_loc * rt.samples[-1], rel=1e-12, abs=1e-15)


def test_simulated_feedforward_tracks_theta_err():
    tree = quiet_tree(**{"A.fiber_temperature": "fiber_temperature", "B.fiber_temperature": "fiber_temperature"})
    tree["sim"]["drift_time_scale"] = 3600.0
    tree["midpoint"]["feedforward"]["roundtrip_measurement_noise"] = 0.0
    tree["midpoint"]["feedforward"]["update_period"] = 1e-9
    out = simulate(build_system(parse_config(tree)), 0.5)
    d = out.drift
    for arm in "AB":
        assert np.ptp(d[f"theta_err_{arm}"]) > 0.1
        np.testing.assert_allclose(d[f"feedforward_{arm}"], d[f"theta_err_{arm}"] - d[f"theta_err_{arm}"][0],
                                   rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------- SNSPD readout

def _beat_counts(phase, scale=1.0, n=4000, dt=1e-4, f=1500.0, rate=5e5, vis=0.9, rng=None):
    t = (np.arange(n) + 0.5) * dt
    beat = np.cos(2 * np.pi * f * t + phase) * np.sinc(f * dt)
    lam1 = scale * 0.5 * rate * dt * (1 + vis * beat)
    lam2 = scale * 0.5 * rate * dt * (1 - vis * beat)
    if rng is not None:
        lam1, lam2 = rng.poisson(lam1).astype(float), rng.poisson(lam2).astype(float)
    return TimeSeries(dt, lam1, unit="counts"), TimeSeries(dt, lam2, unit="counts")


def test_snspd_noiseless_zero_phase():
    c1, c2 = _beat_counts(0.0)
    psi = snspd_global_demod(c1, c2, ClockSpec(1500.0)).samples
    assert np.max(np.abs(psi[comb_length(1500.0, 1e-4):])) < 1e-12


@pytest.mark.parametrize("phase", [-2.5, 0.4, 1.3])
def test_snspd_common_mode_rejection(phase):
    clock = ClockSpec(1500.0)
    a = snspd_global_demod(*_beat_counts(phase), clock).samples
    b = snspd_global_demod(*_beat_counts(phase, scale=2.0), clock).samples
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert a[-1] == pytest.approx(phase, abs=1e-9)


def test_snspd_shot_noise_scaling():
    clock = ClockSpec(1500.0)
    for window in (10, 40, 160):
        est = []
        for seed in range(40):
            rng = np.random.default_rng(seed)
            est.append(snspd_global_demod(*_beat_counts(0.3, rng=rng, n=6400), clock, window=window).samples)
        est = np.concatenate(est)
        n_counts = 5e5 * 1e-4 * window
        oracle = shot_noise_phase_std(n_counts, 0.9 * np.sinc(1500 * 1e-4))
        assert np.std(est) == pytest.approx(oracle, rel=0.2)


def test_snspd_flags_insufficient_counts():
    with pytest.warns(InsufficientCountsWarning):
        snspd_global_demod(*_beat_counts(0.0, rng=np.random.default_rng(0), vis=0.001), ClockSpec(1500.0))


def test_comb_spans_whole_beat_periods():
    assert comb_length(1500.0, 1e-4) == 20
    assert comb_length(1000.0, 1e-4) == 10
    assert comb_length(1501.0, 1e-4) == 1


def test_unlock_is_reported_not_raised():
    tree = quiet_tree(**{"A.excitation_laser": "excitation_laser"})
    tree["noise_profiles"]["excitation_laser"]["linewidth"] = 5e7
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = simulate(build_system(parse_config(tree)), 0.02)
    assert out.unlocked
    assert out.events[0].loop_id == "fast_A"
    assert 0 <= out.events[0].time <= out.duration
