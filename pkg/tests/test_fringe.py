import numpy as np
import pytest

from _scenarios import quiet_tree
from phasesync.config import parse_config
from phasesync.plant import build_system
from phasesync.plant.fringe import fringe_schedule, run_fringe


def test_schedule_shape_and_validation():
    s = fringe_schedule(8, repeats=3, settle=0.01, dwell=0.015)
    assert s.setpoints.size == 8
    assert s.duration == pytest.approx(3 * 8 * 0.025)
    t, v = s.times_values()
    assert t.size == v.size == 24
    assert np.allclose(v[:8], v[8:16])
    with pytest.raises(ValueError):
        fringe_schedule(4)
    with pytest.raises(ValueError):
        fringe_schedule(8, repeats=0)
    snapped = fringe_schedule(8, settle=0.01004, dwell=0.01502, bin_width=1e-4)
    assert snapped.settle == pytest.approx(0.01) and snapped.dwell == pytest.approx(0.015)


def test_noiseless_fringe_has_full_contrast():
    run = run_fringe(build_system(parse_config(quiet_tree())), repeats=2)
    assert run.contrast == pytest.approx([1.0, 1.0], abs=0.01)
    assert np.degrees(run.sigma) < 5


def test_fringe_offset_follows_theta_offset():
    tree = quiet_tree()
    tree["optics"]["theta_offset_deg"] = 50.0
    run = run_fringe(build_system(parse_config(tree)))
    assert np.degrees(run.phase_offsets[0]) == pytest.approx(50.0, abs=0.5)


@pytest.mark.slow
def test_paper_profile_fringe_sigma(system):
    run = run_fringe(system, repeats=6)
    assert 30 <= np.degrees(run.sigma) <= 40
    assert not run.output.unlocked
