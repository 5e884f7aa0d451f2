"""Plane-wave phase bookkeeping.

Fields are monochromatic plane waves ``A exp(j(w t - k z))`` with
``k = n w / c``.  Optical carriers are never sampled: everything downstream
works on envelope phases relative to a nominal carrier, and only the
formulas here see absolute optical frequencies.

Phases are radians internally.  Degrees appear only where a function says so
(``phase_slip_error`` reports degrees, like the lab notebooks it replaces).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s
FIBER_INDEX = 1.468
FREE_SPACE_INDEX = 1.0

PATH_IDS = ("D1", "D2", "D3", "D4", "D5", "D6", "D7", "D8")

# one-line descriptions of the optical path sections of a node-midpoint link
PATH_DESCRIPTIONS = {
    "D1": "excitation path: laser, AOM, objective, diamond, local beamsplitter",
    "D2": "local stabilization path: laser, AOM, free space, local beamsplitter",
    "D3": "local beamsplitter to local phase projection",
    "D4": "local beamsplitter to conversion crystal",
    "D5": "conversion crystal, deployed fiber, AOM, to narrow filter",
    "D6": "filter reflection to fast detector beamsplitter",
    "D7": "filter transmission to central beamsplitter",
    "D8": "reference laser to fast detector beamsplitter",
}


def wrap_phase(phase):
    """Wrap phase(s) into the half-open interval (-pi, pi]."""
    phase = np.asarray(phase, dtype=float)
    wrapped = -((-phase + np.pi) % (2 * np.pi) - np.pi)
    return wrapped if wrapped.ndim else float(wrapped)


@dataclass(frozen=True)
class OpticalFieldSpec:
    """A monochromatic optical field.

    ``frequency`` is the optical frequency in Hz, ``initial_phase`` the
    constant phase offset in rad.  ``phase_noise_source`` optionally points
    at a :class:`phasesync.noise.NoiseProcess` describing the linewidth.
    """

    label: str
    frequency: float
    initial_phase: float = 0.0
    intensity: float = 1.0
    phase_noise_source: Any = None

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError(f"field {self.label!r}: frequency must be > 0, got {self.frequency}")
        if self.intensity < 0:
            raise ValueError(f"field {self.label!r}: intensity must be >= 0, got {self.intensity}")

    @property
    def omega(self) -> float:
        return 2 * np.pi * self.frequency


@dataclass(frozen=True)
class PathSegment:
    id: str
    length: float
    refractive_index: float = FIBER_INDEX
    drift_process: Any = None

    def __post_init__(self):
        if self.id not in PATH_IDS:
            raise ValueError(f"unknown path segment id {self.id!r}; expected one of {PATH_IDS}")
        if not np.isfinite(self.length) or self.length < 0:
            raise ValueError(f"segment {self.id}: length must be finite and >= 0, got {self.length}")
        if self.refractive_index < 1:
            raise ValueError(f"segment {self.id}: refractive index must be >= 1, got {self.refractive_index}")

    @property
    def optical_length(self) -> float:
        return self.refractive_index * self.length


@dataclass(frozen=True)
class ClockSpec:
    """An RF reference clock (frequency in Hz, phase in rad)."""

    frequency: float
    phase: float = 0.0
    label: str = "clock"

    def __post_init__(self):
        if self.frequency < 0:
            raise ValueError(f"clock {self.label!r}: frequency must be >= 0, got {self.frequency}")

    @property
    def omega(self) -> float:
        return 2 * np.pi * self.frequency

    def phase_at(self, t):
        return self.omega * np.asarray(t, dtype=float) + self.phase


def accumulated_phase(field: OpticalFieldSpec, path: Sequence[PathSegment], t=0.0, wrap=False):
    """Phase of ``field`` at the end of ``path`` at time(s) ``t``.

    Returns ``w t - sum_j (n_j w / c) L_j + theta0``, unwrapped unless
    ``wrap`` is set.
    """
    k_total = sum(seg.refractive_index * seg.length for seg in path) * field.omega / SPEED_OF_LIGHT
    phase = field.omega * np.asarray(t, dtype=float) - k_total + field.initial_phase
    if wrap:
        return wrap_phase(phase)
    return phase if np.ndim(phase) else float(phase)


def beat_phase(u1: OpticalFieldSpec, u2: OpticalFieldSpec, d1, d2, n, t):
    """Argument of the cosine in the two-field beat (rad)."""
    t = np.asarray(t, dtype=float)
    return ((u2.omega - u1.omega) * t
            + n / SPEED_OF_LIGHT * (u1.omega * d1 - u2.omega * d2)
            + (u2.initial_phase - u1.initial_phase))


def heterodyne_intensity(u1: OpticalFieldSpec, u2: OpticalFieldSpec, d1, d2, n, t):
    """Detected intensity of two interfering fields with optical terms dropped.

    For equal intensities ``I0`` this is ``2 I0 + 2 I0 cos(beat_phase)``;
    unequal intensities use the general ``I1 + I2 + 2 sqrt(I1 I2) cos``.
    """
    if u1.intensity < 0 or u2.intensity < 0:
        raise ValueError("intensities must be non-negative")
    i1, i2 = u1.intensity, u2.intensity
    out = i1 + i2 + 2 * np.sqrt(i1 * i2) * np.cos(beat_phase(u1, u2, d1, d2, n, t))
    return out if np.ndim(out) else float(out)


def fidelity_from_phase_error(delta_phi):
    """Upper bound on entangled-state fidelity for a phase error (rad)."""
    out = 0.5 * (1 + np.cos(delta_phi))
    return out if np.ndim(out) else float(out)


def phase_slip_error(m_slips, f_signal, f_stab):
    """Residual phase error in degrees after ``m_slips`` 2 pi slips.

    The stabilization light at ``f_stab`` is locked, the signal at
    ``f_signal`` rides along and picks up ``360 (f_signal - f_stab) / f_stab``
    degrees per slip.
    """
    if not f_stab > 0:
        raise ValueError(f"f_stab must be > 0, got {f_stab}")
    return m_slips * 360.0 * (f_signal - f_stab) / f_stab


def length_variation_error(delta_length, delta_omega, n=FIBER_INDEX):
    """Phase error (rad) between co-propagating fields after a length change.

    ``delta_omega`` is the angular frequency difference (rad/s).
    """
    out = n * np.asarray(delta_length, dtype=float) * delta_omega / SPEED_OF_LIGHT
    return out if out.ndim else float(out)


def fiber_delay(length, n=FIBER_INDEX):
    """One-way propagation delay (s) through ``length`` metres of fiber."""
    return n * length / SPEED_OF_LIGHT
