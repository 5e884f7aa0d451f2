"""Scenario trees used by several test modules."""

from phasesync.config import default_tree

NODE_SOURCES = ("excitation_laser", "pump_laser", "local_detector", "fiber_vibration", "fiber_temperature",
                "midpoint_drift", "fast_detector")
ALL_LOOPS_OFF = {k: False for k in ("local_A", "local_B", "fast_A", "fast_B", "global")}


def quiet_tree(**keep):
    """Default scenario with every noise source and all shot noise removed.

    ``keep`` maps ``"A.excitation_laser"``-style sites to profile names that
    stay connected.
    """
    t = default_tree()
    for arm in "AB":
        for role in NODE_SOURCES:
            t["nodes"][arm].pop(role, None)
        t["nodes"][arm]["node_noise"] = []
    t["midpoint"].pop("reference_laser", None)
    t["midpoint"]["snspd"]["shot_noise"] = False
    t["midpoint"]["fringe_detector"]["shot_noise"] = False
    for site, profile in keep.items():
        arm, role = site.split(".")
        t["nodes"][arm][role] = profile
    return t
