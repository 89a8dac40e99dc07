"""Ioffe-Pritchard magnetic trap: field expansion, trap frequencies, cloud sizes.

Units: fields in G, gradients in G/cm, curvatures in G/cm^2, positions in
mm, frequencies in Hz (not angular) unless stated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import constants as C
from .errors import DomainError

# coil constants per ampere of the cloverleaf trap
BPP_PER_AMP = 0.56  # G/cm^2 per A
BP_PER_AMP = 0.61  # G/cm per A


@dataclass(frozen=True)
class TrappedState:
    mu: float = 1.0  # magnetic moment g_F m_F in Bohr magnetons
    mass: float = C.M_RB87

    def __post_init__(self):
        if self.mass <= 0:
            raise DomainError("mass must be positive")


RB87_F2_MF2 = TrappedState(1.0, C.M_RB87)


@dataclass(frozen=True)
class IoffePritchardTrap:
    B0: float  # G
    Bp: float  # G/cm
    Bpp: float  # G/cm^2

    def __post_init__(self):
        if self.B0 <= 0:
            raise DomainError("offset field B0 must be positive")
        if self.Bp < 0 or self.Bpp < 0:
            raise DomainError("gradient and curvature must be non-negative")

    @classmethod
    def from_current(cls, current_A: float, B0: float, bp_per_amp=BP_PER_AMP, bpp_per_amp=BPP_PER_AMP):
        return cls(B0, bp_per_amp * current_A, bpp_per_amp * current_A)

    @classmethod
    def from_frequencies(cls, B0: float, radial_Hz: float, axial_Hz: float, state: TrappedState = RB87_F2_MF2):
        """Trap with the given offset that produces the given frequencies."""
        k = state.mu * C.mu_B / state.mass  # SI, per T/m^2
        wz = 2 * math.pi * axial_Hz
        wr = 2 * math.pi * radial_Hz
        bpp_si = wz**2 / k  # T/m^2
        bp2_over_b0 = wr**2 / k + bpp_si / 2  # T/m^2
        b0_si = B0 / C.get("G_per_T")
        bp_si = math.sqrt(bp2_over_b0 * b0_si)
        # 1 T/m^2 equals 1 G/cm^2
        return cls(B0, bp_si * C.get("gauss_per_cm_per_T_per_m"), bpp_si)

    @classmethod
    def from_dict(cls, d: Mapping) -> "IoffePritchardTrap":
        try:
            b0 = float(d["B0_G"])
            if "current_A" in d and "Bp_G_per_cm" not in d:
                cur = float(d["current_A"])
                return cls.from_current(
                    cur, b0, float(d.get("Bp_per_A", BP_PER_AMP)), float(d.get("Bpp_per_A", BPP_PER_AMP))
                )
            if "radial_Hz" in d and "Bp_G_per_cm" not in d:
                return cls.from_frequencies(b0, float(d["radial_Hz"]), float(d["axial_Hz"]))
            return cls(b0, float(d["Bp_G_per_cm"]), float(d["Bpp_G_per_cm2"]))
        except KeyError as exc:
            raise DomainError(f"trap config missing {exc}") from None

    def to_dict(self) -> dict:
        return {"B0_G": self.B0, "Bp_G_per_cm": self.Bp, "Bpp_G_per_cm2": self.Bpp}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def field_vector(trap: IoffePritchardTrap, points) -> np.ndarray:
    """B in G at point(s) in mm (second-order Ioffe-Pritchard expansion).

    B = B0 z + B'(x, -y, 0) + B''/2 [(z^2 - rho^2/2) z - z (x, y, 0)],
    which is divergence- and curl-free.
    """
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p) / C.get("mm_per_cm")
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    half = 0.5 * trap.Bpp
    bx = trap.Bp * x - half * x * z
    by = -trap.Bp * y - half * y * z
    bz = trap.B0 + half * (z**2 - 0.5 * (x**2 + y**2))
    b = np.stack([bx, by, bz], axis=-1)
    return b[0] if single else b


def field_magnitude(trap: IoffePritchardTrap, points) -> np.ndarray:
    return np.linalg.norm(field_vector(trap, points), axis=-1)


def stability_margin(trap: IoffePritchardTrap) -> float:
    """Bp^2/B0 - Bpp/2 in G/cm^2; positive for a radially confining trap."""
    return trap.Bp**2 / trap.B0 - 0.5 * trap.Bpp


def trap_frequencies(trap: IoffePritchardTrap, state: TrappedState = RB87_F2_MF2):
    """(radial, axial) trap frequencies in Hz."""
    if state.mu <= 0:
        raise DomainError("state is not low-field seeking (mu <= 0)")
    margin = stability_margin(trap)
    if margin <= 0:
        raise DomainError(f"radially unstable: Bp^2/B0 = {trap.Bp**2 / trap.B0:.4g} <= Bpp/2 = {0.5 * trap.Bpp:.4g} G/cm^2")
    k = state.mu * C.mu_B / state.mass
    # G/cm^2 and T/m^2 coincide numerically
    wz = math.sqrt(k * trap.Bpp)
    wr = math.sqrt(k * margin)
    return wr / (2 * math.pi), wz / (2 * math.pi)


def field_angle_to_z(trap: IoffePritchardTrap, points) -> np.ndarray:
    """Angle (rad) between B and +z."""
    b = field_vector(trap, points)
    mag = np.linalg.norm(b, axis=-1)
    if np.any(mag == 0):
        raise DomainError("field vanishes at the requested point")
    return np.arccos(np.clip(b[..., 2] / mag, -1.0, 1.0))


def thermal_cloud_sigma(trap: IoffePritchardTrap, state: TrappedState, temperature: float):
    """(sigma_rho, sigma_z) in um of a thermal cloud at ``temperature`` K."""
    if temperature < 0:
        raise DomainError("temperature must be non-negative")
    fr, fz = trap_frequencies(trap, state)
    v = math.sqrt(C.k_B * temperature / state.mass)
    sr = v / (2 * math.pi * fr) * 1e6
    sz = v / (2 * math.pi * fz) * 1e6 if fz > 0 else math.inf
    return sr, sz


def divergence(trap: IoffePritchardTrap, point, h_mm: float = 1e-3) -> float:
    """Central-difference div B in G/cm."""
    p = np.asarray(point, dtype=float)
    total = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h_mm
        total += (field_vector(trap, p + e)[i] - field_vector(trap, p - e)[i]) / (2 * h_mm / C.get("mm_per_cm"))
    return total
