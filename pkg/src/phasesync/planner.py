"""Heterodyne clock-frequency allocation and phase budgets.

All frequencies are integer Hz so that the residual beat between the two
nodes cancels exactly rather than to floating-point precision.

Frequency bookkeeping for a node pair A, B::

    Omega_tot = (fast_A + loc_A) - (fast_B + loc_B)     must be 0
    omega_glob = fast_A - fast_B                        SNSPD count beat

A plan with ``Omega_tot = 0`` leaves the entangled-state phase stationary,
while a non-zero ``omega_glob`` keeps a count-rate beat visible to the
global loop.
"""

from __future__ import annotations

import numbers
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .analysis import combine_sigmas

DEFAULT_GLOB_MAX = 10_000  # Hz, SNSPD-limited beat ceiling
DEFAULT_LOC_CENTER = 400_000_000
DEFAULT_FAST_CENTER = 215_000_000

# optimal Golomb rulers: all pairwise differences distinct
_GOLOMB = {
    1: (0,),
    2: (0, 1),
    3: (0, 1, 3),
    4: (0, 1, 4, 6),
    5: (0, 1, 4, 9, 11),
    6: (0, 1, 4, 10, 12, 17),
    7: (0, 1, 4, 10, 18, 23, 25),
    8: (0, 1, 4, 9, 15, 22, 32, 34),
    9: (0, 1, 5, 12, 25, 27, 35, 41, 44),
    10: (0, 1, 6, 10, 23, 26, 34, 41, 53, 55),
}


class PlanInfeasible(ValueError):
    """Constraints cannot be met; the message names the violated bound."""


class DegeneratePlanWarning(UserWarning):
    """Plan has no global beat (homodyne); the fringe is unobservable."""


def _as_hz(value, name):
    if isinstance(value, bool) or not isinstance(value, (numbers.Integral, float, np.floating)):
        raise TypeError(f"{name} must be a number of Hz, got {value!r}")
    if isinstance(value, (float, np.floating)):
        if not float(value).is_integer():
            raise ValueError(f"{name} must be an integer number of Hz, got {value}")
    return int(value)


@dataclass(frozen=True)
class FrequencyPlan:
    omega_loc_A: int
    omega_loc_B: int
    omega_fast_A: int
    omega_fast_B: int

    def __post_init__(self):
        for name in ("omega_loc_A", "omega_loc_B", "omega_fast_A", "omega_fast_B"):
            value = _as_hz(getattr(self, name), name)
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)

    @property
    def omega_glob(self) -> int:
        return self.omega_fast_A - self.omega_fast_B

    @property
    def omega_tot_residual(self) -> int:
        return check_plan(self)

    def as_dict(self):
        return {"omega_loc_A": self.omega_loc_A, "omega_loc_B": self.omega_loc_B,
                "omega_fast_A": self.omega_fast_A, "omega_fast_B": self.omega_fast_B,
                "omega_glob": self.omega_glob, "omega_tot_residual": self.omega_tot_residual}


PAPER_PLAN = FrequencyPlan(399_999_250, 400_000_750, 215_001_500, 215_000_000)


def check_plan(plan: FrequencyPlan) -> int:
    """Residual beat ``Omega_tot`` (Hz) between the two nodes."""
    return (plan.omega_fast_A + plan.omega_loc_A) - (plan.omega_fast_B + plan.omega_loc_B)


def solve_plan(omega_glob_target, omega_glob_max=DEFAULT_GLOB_MAX, fast_center=DEFAULT_FAST_CENTER,
               loc_center=DEFAULT_LOC_CENTER) -> FrequencyPlan:
    """Plan with ``Omega_tot = 0`` and the requested global beat.

    The local offsets are split around ``loc_center`` (A below, B above by
    the full target) and node A's fast clock sits ``target`` above
    ``fast_center``.
    """
    target = _as_hz(omega_glob_target, "omega_glob_target")
    limit = _as_hz(omega_glob_max, "omega_glob_max")
    fast_center = _as_hz(fast_center, "fast_center")
    loc_center = _as_hz(loc_center, "loc_center")
    if target < 0:
        raise PlanInfeasible(f"omega_glob_target must be >= 0, got {target}")
    if target > limit:
        raise PlanInfeasible(f"omega_glob_target {target} Hz exceeds omega_glob_max {limit} Hz")
    if target == 0:
        warnings.warn("omega_glob = 0: homodyne plan, the global beat is unobservable", DegeneratePlanWarning,
                      stacklevel=2)
    loc_a = loc_center - target // 2
    plan = FrequencyPlan(loc_a, loc_a + target, fast_center + target, fast_center)
    if loc_a <= 0 or fast_center <= 0:
        raise PlanInfeasible("centre frequencies too small for the requested offsets")
    return plan


@dataclass(frozen=True)
class BudgetResult:
    sigma_total: float
    sensitivities: dict  # name -> d sigma_total / d sigma_i
    contributions: dict  # name -> m sigma^2 share of the total variance
    ranking: tuple  # names by decreasing contribution

    @property
    def dominant(self):
        return self.ranking[0] if self.ranking else None


def budget(components) -> BudgetResult:
    """Quadrature budget over ``{name: (sigma, multiplicity)}``.

    The sensitivity of the total to a per-loop sigma is
    ``m sigma_i / sigma_tot``; loops are ranked by their variance share.
    """
    items = {name: ((v, 1) if np.isscalar(v) else tuple(v)) for name, v in dict(components).items()}
    total = combine_sigmas(items.values())
    sens = {}
    share = {}
    for name, (sigma, mult) in items.items():
        sens[name] = mult * sigma / total if total > 0 else 0.0
        share[name] = mult * sigma**2 / total**2 if total > 0 else 0.0
    ranking = tuple(sorted(items, key=lambda k: share[k], reverse=True))
    return BudgetResult(total, sens, share, ranking)


def extend_star(plan: FrequencyPlan, n_nodes, omega_glob_max=DEFAULT_GLOB_MAX) -> list:
    """Per-pair frequency plans for ``n_nodes`` nodes around one midpoint.

    Node ``i`` gets fast clock ``fast_B + u g_i`` and local clock
    ``loc_A + u - u g_i`` with ``g`` an optimal Golomb ruler and ``u`` the
    base plan's global beat, so every node's ``fast + loc`` sum is the same
    (each pair has ``Omega_tot = 0``) and all pairwise beats ``u (g_i - g_j)``
    are distinct.  Returns one plan per pair ``(i, j), i < j``, with node
    ``j`` in the A role so beats are positive.
    """
    if isinstance(n_nodes, bool) or not isinstance(n_nodes, numbers.Integral) or n_nodes < 2:
        raise ValueError(f"n_nodes must be an integer >= 2, got {n_nodes!r}")
    unit = plan.omega_glob
    if unit <= 0:
        raise PlanInfeasible("base plan must have a positive global beat")
    if check_plan(plan) != 0:
        raise PlanInfeasible(f"base plan has residual Omega_tot = {check_plan(plan)} Hz")
    if n_nodes not in _GOLOMB:
        raise PlanInfeasible(f"no distinct-beat assignment tabulated for {n_nodes} nodes")
    marks = _GOLOMB[n_nodes]
    widest = marks[-1] * unit
    if widest > omega_glob_max:
        raise PlanInfeasible(f"{n_nodes} nodes need beats up to {widest} Hz, above omega_glob_max "
                             f"{omega_glob_max} Hz")
    fast = [plan.omega_fast_B + unit * g for g in marks]
    loc = [plan.omega_loc_A + unit - unit * g for g in marks]
    plans = []
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            plans.append(FrequencyPlan(loc[j], loc[i], fast[j], fast[i]))
    return plans


def with_offset(plan: FrequencyPlan, **changes) -> FrequencyPlan:
    return replace(plan, **changes)
