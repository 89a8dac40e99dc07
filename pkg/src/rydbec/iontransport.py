"""Ion trajectories after field ionization and MCP acceptance.

Positions are in mm, velocities in m/s, times in s internally (exported in
us), electric fields in V/cm and magnetic fields in G.  The integrator is
classical fourth-order Runge-Kutta with a fixed step that is validated
against the cyclotron period and the electric-field time scale before the
run starts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import constants as C
from . import efield as EF
from . import magtrap as MT
from .errors import DomainError

DOMAIN_RADIUS_MM = 60.0
DETECTOR_ATOMS_PER_VS = 3.65e10  # calibration: 1 V s per 3.65e10 ions
SENSITIVITY_FLOOR = 100  # ions
FIELD_LENGTH_MM = 1.0  # length on which the field is resolved when checking dt

_V_PER_CM = 100.0  # V/m per V/cm
_T_PER_G = 1e-4
_M_PER_MM = 1e-3


@dataclass(frozen=True)
class ChargedParticle:
    position: tuple  # mm
    velocity: tuple  # m/s
    charge: float = 1.0  # units of e
    mass: float = C.M_RB87 - C.m_e  # kg; singly ionized 87Rb by default

    def __post_init__(self):
        if self.mass <= 0:
            raise DomainError("mass must be positive")
        if len(self.position) != 3 or len(self.velocity) != 3:
            raise DomainError("position and velocity need three components")


@dataclass(frozen=True)
class McpAperture:
    plane_x: float = EF.MCP_J_X_MM  # mm
    grid_diameter: float = 12.0  # mm
    active_diameter: float = 8.5  # mm
    transmittance: float = 0.85

    def __post_init__(self):
        if not 0 < self.active_diameter <= self.grid_diameter:
            raise DomainError("active area must lie inside the grid")
        if not 0 <= self.transmittance <= 1:
            raise DomainError("transmittance must lie in [0, 1]")


MCP_J = McpAperture(EF.MCP_J_X_MM)
MCP_I = McpAperture(EF.MCP_I_X_MM)


@dataclass
class FieldSources:
    """Callables returning E (V/cm) and B (G) for an (N, 3) array of mm positions."""

    electric: Callable
    magnetic: Callable
    b_bound: float = 0.0  # upper bound of |B| in the domain, G
    label: str = ""
    potential: Optional[Callable] = None  # V at (N, 3) mm positions, if known

    @classmethod
    def uniform(cls, E=(0.0, 0.0, 0.0), B=(0.0, 0.0, 0.0)) -> "FieldSources":
        e = np.asarray(E, dtype=float)
        b = np.asarray(B, dtype=float)
        return cls(
            lambda p: np.broadcast_to(e, np.shape(p)).copy(),
            lambda p: np.broadcast_to(b, np.shape(p)).copy(),
            float(np.linalg.norm(b)),
            "uniform",
            lambda p: -(np.asarray(p, dtype=float) / 10.0) @ e,
        )

    @classmethod
    def from_models(
        cls,
        charges: Optional[EF.ChargeSet] = None,
        trap: Optional[MT.IoffePritchardTrap] = None,
        geometry: EF.PlateGeometry = EF.DEFAULT_GEOMETRY,
        domain_radius: float = DOMAIN_RADIUS_MM,
    ) -> "FieldSources":
        if charges is None:
            electric = lambda p: np.zeros(np.shape(p))
            potential = lambda p: np.zeros(len(p))
        else:
            electric = lambda p: EF.field_at(geometry, charges, p)
            potential = lambda p: EF.potential_at(geometry, charges, p)
        if trap is None:
            magnetic = lambda p: np.zeros(np.shape(p))
            bound = 0.0
        else:
            magnetic = lambda p: MT.field_vector(trap, p)
            r = domain_radius / 10.0  # cm
            bound = trap.B0 + trap.Bp * r + trap.Bpp * r * r
        return cls(electric, magnetic, bound, "plates+trap", potential)


def lorentz_acceleration(particle: ChargedParticle, E, B, velocity=None) -> np.ndarray:
    """(q/m)(E + v x B) in m/s^2 with E in V/cm and B in G."""
    v = np.asarray(particle.velocity if velocity is None else velocity, dtype=float)
    e_si = np.asarray(E, dtype=float) * _V_PER_CM
    b_si = np.asarray(B, dtype=float) * _T_PER_G
    qm = particle.charge * C.e / particle.mass
    return qm * (e_si + np.cross(v, b_si))


@dataclass
class Trajectory:
    times: np.ndarray  # s
    positions: np.ndarray  # mm
    velocities: np.ndarray  # m/s
    reason: str  # "mcp" | "domain" | "time"
    particle: ChargedParticle
    metadata: dict = field(default_factory=dict)

    @property
    def final_position(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def flight_time(self) -> float:
        return float(self.times[-1] - self.times[0])

    def kinetic_energy(self) -> np.ndarray:
        return 0.5 * self.particle.mass * np.sum(self.velocities**2, axis=1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_us", "x_mm", "y_mm", "z_mm", "vx_m_per_s", "vy_m_per_s", "vz_m_per_s"])
            for t, p, v in zip(self.times, self.positions, self.velocities):
                w.writerow([f"{t * 1e6:.10g}"] + [f"{c:.10g}" for c in p] + [f"{c:.10g}" for c in v])


def check_step(particle: ChargedParticle, sources: FieldSources, dt: float, length_mm: float = FIELD_LENGTH_MM):
    """Raise DomainError if ``dt`` under-resolves gyration or field variation."""
    if dt <= 0:
        raise DomainError("time step must be positive")
    qm = abs(particle.charge) * C.e / particle.mass
    if sources.b_bound > 0 and qm > 0:
        period = 2 * math.pi / (qm * sources.b_bound * _T_PER_G)
        if dt > period / 20:
            raise DomainError(f"dt={dt:.3g} s exceeds T_c/20={period / 20:.3g} s")
    p = np.atleast_2d(np.asarray(particle.position, dtype=float))
    e = np.linalg.norm(sources.electric(p)[0]) * _V_PER_CM
    a = qm * e
    v = np.linalg.norm(particle.velocity)
    scales = []
    if a > 0:
        scales.append(math.sqrt(2 * length_mm * _M_PER_MM / a))
    if v > 0:
        scales.append(length_mm * _M_PER_MM / v)
    if scales and dt > min(scales) / 20:
        raise DomainError(f"dt={dt:.3g} s exceeds the field time scale/20={min(scales) / 20:.3g} s")


def integrate(
    particle: ChargedParticle,
    sources: FieldSources,
    dt: float = 1e-9,
    t_max: float = 20e-6,
    aperture: Optional[McpAperture] = MCP_J,
    domain_radius: float = DOMAIN_RADIUS_MM,
    record_every: int = 1,
) -> Trajectory:
    """Fixed-step RK4 trajectory until the MCP plane, domain exit or t_max."""
    check_step(particle, sources, dt)
    if t_max <= 0:
        raise DomainError("t_max must be positive")
    qm = particle.charge * C.e / particle.mass

    def deriv(state):
        pos_mm = state[:3] / _M_PER_MM
        e = sources.electric(pos_mm[None, :])[0] * _V_PER_CM
        b = sources.magnetic(pos_mm[None, :])[0] * _T_PER_G
        v = state[3:]
        acc = qm * (e + np.cross(v, b))
        return np.concatenate([v, acc])

    y = np.concatenate([np.asarray(particle.position, float) * _M_PER_MM, np.asarray(particle.velocity, float)])
    ts, ys = [0.0], [y.copy()]
    t = 0.0
    reason = "time"
    n_steps = int(math.ceil(t_max / dt))
    side0 = None
    if aperture is not None:
        side0 = math.copysign(1.0, aperture.plane_x - particle.position[0]) if particle.position[0] != aperture.plane_x else 1.0
    for i in range(n_steps):
        k1 = deriv(y)
        k2 = deriv(y + 0.5 * dt * k1)
        k3 = deriv(y + 0.5 * dt * k2)
        k4 = deriv(y + dt * k3)
        y_new = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t_new = t + dt
        if aperture is not None:
            xp = aperture.plane_x * _M_PER_MM
            if (xp - y_new[0]) * side0 <= 0:
                # cubic Hermite interpolation of the crossing inside the step
                f0, f1 = k1, deriv(y_new)
                s = _hermite_root(y[0] - xp, y_new[0] - xp, f0[0] * dt, f1[0] * dt)
                y_cross = _hermite(y, y_new, f0 * dt, f1 * dt, s)
                ts.append(t + s * dt)
                ys.append(y_cross)
                reason = "mcp"
                break
        t, y = t_new, y_new
        if (i + 1) % record_every == 0:
            ts.append(t)
            ys.append(y.copy())
        if np.linalg.norm(y[:3]) / _M_PER_MM > domain_radius:
            reason = "domain"
            break
    if reason == "time" and ts[-1] != t:
        ts.append(t)
        ys.append(y.copy())
    arr = np.array(ys)
    meta = {"dt": dt, "t_max": t_max, "sources": sources.label}
    return Trajectory(np.array(ts), arr[:, :3] / _M_PER_MM, arr[:, 3:], reason, particle, meta)


def _hermite(y0, y1, m0, m1, s):
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1


def _hermite_root(a0, a1, m0, m1) -> float:
    lo, hi = 0.0, 1.0
    f = lambda s: _hermite(a0, a1, m0, m1, s)
    flo = f(lo)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm <= 0) == (flo <= 0) and fm != 0:
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class DriftReport:
    offset_mm: float
    offset_vector: tuple  # (dy, dz) in mm, relative to the aperture centre
    hit: bool
    reason: str


def transverse_drift(trajectory: Trajectory, aperture: McpAperture = MCP_J) -> DriftReport:
    """Offset of the plane crossing from the aperture axis and hit/miss."""
    if trajectory.reason != "mcp":
        return DriftReport(math.nan, (math.nan, math.nan), False, f"did not reach the MCP plane ({trajectory.reason})")
    p = trajectory.final_position
    off = float(math.hypot(p[1], p[2]))
    hit = off < 0.5 * aperture.active_diameter
    return DriftReport(off, (float(p[1]), float(p[2])), hit, "hit" if hit else "outside active area")


def energy_audit(trajectory: Trajectory, sources: FieldSources) -> float:
    """Largest relative mismatch between kinetic-energy change and electric work.

    The work q E . dx per step is taken from the potential drop when the
    sources provide one (exact for electrostatic fields), otherwise from
    the trapezoidal rule.  The magnetic force does no work.  The mismatch
    is normalized by the total absolute work (or the initial energy if no
    work is done).
    """
    p = trajectory.positions
    q = trajectory.particle.charge * C.e
    if sources.potential is not None:
        work = -q * np.diff(sources.potential(p))
    else:
        e = sources.electric(p) * _V_PER_CM
        dx = np.diff(p, axis=0) * _M_PER_MM
        work = q * np.einsum("ij,ij->i", 0.5 * (e[1:] + e[:-1]), dx)
    dke = np.diff(trajectory.kinetic_energy())
    scale = np.sum(np.abs(work))
    if scale == 0:
        scale = max(trajectory.kinetic_energy()[0], 1e-300)
    return float(np.max(np.abs(np.cumsum(dke - work))) / scale)


def detector_signal(ion_count: float):
    """Anode signal in V s and a flag for counts below the sensitivity floor."""
    if ion_count < 0:
        raise DomainError("ion count must be non-negative")
    return ion_count / DETECTOR_ATOMS_PER_VS, bool(ion_count < SENSITIVITY_FLOOR)


# ---------------------------------------------------------------------------
# scenarios and ensembles


def ionization_sources(
    plate_volts: float = 1000.0,
    cage_volts: float = EF.CAGE_REFERENCE_VOLTAGE,
    calibration: Optional[EF.VoltageCalibration] = None,
    trap: Optional[MT.IoffePritchardTrap] = None,
    geometry: EF.PlateGeometry = EF.DEFAULT_GEOMETRY,
) -> FieldSources:
    """Plates B and H at ``plate_volts``, cage J at ``cage_volts``, trap left on."""
    cal = calibration or EF.theory_calibration(geometry)
    charges = cal.charges("constant_BH", plate_volts)
    if cage_volts:
        charges = charges + EF.cage_field_model(cage_volts, geometry)
    return FieldSources.from_models(charges, trap, geometry)


def sample_ions(n: int, temperature: float, sigma_um=(0.0, 0.0, 0.0), seed: int = 0, mass: float = C.M_RB87 - C.m_e):
    """Maxwell-Boltzmann ions from a Gaussian cloud; one RNG stream per ion."""
    if n < 0 or temperature < 0:
        raise DomainError("need n >= 0 and T >= 0")
    vs = math.sqrt(C.k_B * temperature / mass)
    out = []
    for child in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(child)
        pos = rng.normal(0.0, 1.0, 3) * np.asarray(sigma_um, dtype=float) * 1e-3
        vel = rng.normal(0.0, vs, 3)
        out.append(ChargedParticle(tuple(pos), tuple(vel), 1.0, mass))
    return out


@dataclass(frozen=True)
class EnsembleReport:
    launched: int
    hits: int
    expected_counts: float  # hits x grid transmittance
    offsets_mm: np.ndarray
    flight_times: np.ndarray


def run_ensemble(particles, sources: FieldSources, aperture: McpAperture = MCP_J, dt: float = 1e-9, t_max: float = 20e-6):
    offs, times, hits = [], [], 0
    for p in particles:
        tr = integrate(p, sources, dt, t_max, aperture)
        rep = transverse_drift(tr, aperture)
        offs.append(rep.offset_mm)
        times.append(tr.flight_time)
        hits += rep.hit
    return EnsembleReport(len(offs), hits, hits * aperture.transmittance, np.array(offs), np.array(times))
