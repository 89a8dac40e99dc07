"""Quantum-defect description of 87Rb Rydberg states.

Energies follow the Rydberg-Ritz formula.  Radial wavefunctions are
obtained in the Coulomb approximation: the pure Coulomb radial equation is
integrated inwards at the quantum-defect energy with the Numerov method,
on a grid uniform in ``x = sqrt(r)``.  Every wavefunction lives on the same
global lattice ``x_k = k * step`` so overlap integrals reduce to dot
products over the shared index range.

Units: radii in Bohr radii, energies in Hz (relative to the ionization
limit), fields in V/cm, dipoles in atomic units (e a0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable

import numpy as np
from sympy import Rational
from sympy.physics.wigner import clebsch_gordan, wigner_3j

from . import constants as C
from .errors import DomainError, NumericalError

DEFAULT_STEP = 0.01  # Numerov step in sqrt(Bohr radius)

_L_LETTERS = "SPDFGHIKLMNOQRTUV"


def _is_half_odd(x: float) -> bool:
    return abs(2 * x - round(2 * x)) < 1e-9 and round(2 * x) % 2 != 0


@dataclass(frozen=True)
class QuantumDefectTable:
    """Rydberg-Ritz coefficients per (l, j) channel plus atomic constants."""

    channels: dict  # (l, j) -> (delta0, delta2)
    rydberg_Hz: float
    core_polarizability: float  # atomic units
    mass: float  # kg
    lowest_n: dict = field(default_factory=dict)  # l -> lowest principal quantum number

    @classmethod
    def rb87(cls) -> "QuantumDefectTable":
        g = C.get
        channels = {}
        for l, letter in enumerate("SPDF"):
            for j in (l - 0.5, l + 0.5):
                if j < 0:
                    continue
                key = f"qd_{letter}{int(2 * j)}_2"
                channels[(l, j)] = (g(key + "_d0"), g(key + "_d2"))
        lowest = {l: int(g(f"lowest_n_{letter}")) for l, letter in enumerate("SPDF")}
        return cls(channels, C.RY_RB87_HZ, C.ALPHA_CORE_AU, C.M_RB87, lowest)

    def lowest_principal(self, l: int) -> int:
        return self.lowest_n.get(l, l + 1)

    def inner_cutoff(self) -> float:
        """Inner integration radius max(0.05, alpha_core**(1/3)) in Bohr radii."""
        return max(0.05, self.core_polarizability ** (1.0 / 3.0))


RB87 = QuantumDefectTable.rb87()


def quantum_defect(n: int, l: int, j: float, table: QuantumDefectTable = RB87) -> float:
    """Rydberg-Ritz defect ``d0 + d2 / (n - d0)**2``; zero for l >= 4."""
    if n < 1 or l < 0 or l >= n:
        raise DomainError(f"invalid quantum numbers n={n}, l={l}")
    if not (_is_half_odd(j) and abs(j - l) == 0.5):
        raise DomainError(f"j={j} incompatible with l={l}")
    if l >= 4:
        return 0.0
    try:
        d0, d2 = table.channels[(l, j)]
    except KeyError:
        raise DomainError(f"no quantum-defect channel for l={l}, j={j}") from None
    if n <= d0:
        raise DomainError(f"n={n} must exceed delta0={d0} for l={l}, j={j}")
    return d0 + d2 / (n - d0) ** 2


@dataclass(frozen=True)
class RydbergLevel:
    n: int
    l: int
    j: float
    mj: float = 0.5

    def __post_init__(self):
        if int(self.n) != self.n or int(self.l) != self.l:
            raise DomainError("n and l must be integers")
        if not (0 <= self.l < self.n):
            raise DomainError(f"need 0 <= l < n, got n={self.n}, l={self.l}")
        if not _is_half_odd(self.j) or abs(self.j - self.l) != 0.5:
            raise DomainError(f"j={self.j} not allowed for l={self.l}")
        if not _is_half_odd(self.mj) or abs(self.mj) > self.j:
            raise DomainError(f"mj={self.mj} not allowed for j={self.j}")
        if self.n < RB87.lowest_principal(self.l):
            raise DomainError(f"{self.n}{_L_LETTERS[self.l]} lies below the lowest {_L_LETTERS[self.l]} level")
        if self.n_star <= 0:
            raise DomainError("effective quantum number must be positive")

    @property
    def n_star(self) -> float:
        return self.n - quantum_defect(self.n, self.l, self.j)

    @property
    def label(self) -> str:
        letter = _L_LETTERS[self.l] if self.l < len(_L_LETTERS) else f"[l={self.l}]"
        return f"{self.n}{letter}{Fraction(self.j)}(mj={Fraction(self.mj)})"

    def with_mj(self, mj: float) -> "RydbergLevel":
        return RydbergLevel(self.n, self.l, self.j, mj)


def level_energy(level: RydbergLevel, table: QuantumDefectTable = RB87) -> float:
    """Binding energy ``-Ry / n*^2`` in Hz (negative)."""
    return -table.rydberg_Hz / level.n_star**2


def transition_frequency(a: RydbergLevel, b: RydbergLevel) -> float:
    """E(b) - E(a) in Hz."""
    return level_energy(b) - level_energy(a)


# ---------------------------------------------------------------------------
# radial wavefunctions


@dataclass(frozen=True)
class RadialGrid:
    """Reduced radial wavefunction u(r) = r R(r) on the sqrt(r) lattice.

    ``radii[i] = (start + i) ** 2 * step ** 2``; ``amplitudes`` are normalized
    so that the integral of u^2 dr is one.
    """

    radii: np.ndarray
    amplitudes: np.ndarray
    start: int
    step: float
    nodes: int = 0

    @property
    def x(self) -> np.ndarray:
        return np.sqrt(self.radii)

    def norm(self) -> float:
        return float(np.sum(self.amplitudes**2 * 2 * self.x) * self.step)


def outer_radius(n_star: float) -> float:
    """Outer integration radius, comfortably beyond the turning point 2 n*^2."""
    return max(2.5 * n_star**2, 2.0 * n_star * (n_star + 15.0))


def _numerov_inward(n_star: float, l: int, step: float, r_inner: float):
    k_in = max(int(math.ceil(math.sqrt(r_inner) / step)), 2)
    k_out = int(math.ceil(math.sqrt(outer_radius(n_star)) / step))
    x = np.arange(k_in, k_out + 1) * step
    # d^2y/dx^2 = g(x) y with y = u / sqrt(x) and r = x^2 (Coulomb, atomic units)
    g = -8.0 + 4.0 * x**2 / n_star**2 + (2 * l + 0.5) * (2 * l + 1.5) / x**2
    f = 1.0 - step**2 * g / 12.0
    c = 2.0 + 10.0 * (1.0 - f)  # 2 (1 + 5 h^2 g / 12)
    size = len(x)
    y = [0.0] * size
    y[-1] = 0.0
    y[-2] = 1e-12
    fl = f.tolist()
    cl = c.tolist()
    # index of the inner classical turning point; inside it the physical
    # solution decays inwards, so any inward growth is the irregular solution
    allowed = np.nonzero(g < 0)[0]
    k_tp = int(allowed[0]) if allowed.size else 0
    sx = np.sqrt(x).tolist()
    cut = -1
    for k in range(size - 2, 0, -1):
        yk = (cl[k] * y[k] - fl[k + 1] * y[k + 1]) / fl[k - 1]
        if k - 1 < k_tp and abs(yk) * sx[k - 1] > abs(y[k]) * sx[k]:
            cut = k - 1
            break
        if abs(yk) > 1e150:
            for m in range(k, size):
                y[m] *= 1e-150
            yk *= 1e-150
        y[k - 1] = yk
    y = np.asarray(y)
    if cut >= 0:
        y[: cut + 1] = 0.0
    u = y * np.sqrt(x)
    return k_in, x, u


@lru_cache(maxsize=4096)
def _wavefunction(n_star: float, l: int, step: float, r_inner: float) -> RadialGrid:
    k_in, x, u = _numerov_inward(n_star, l, step, r_inner)
    norm = float(np.sum(u**2 * 2 * x) * step)
    if not np.isfinite(norm) or norm <= 0:
        raise NumericalError(
            "radial wavefunction could not be normalized", n_star=n_star, l=l, step=step, norm=norm
        )
    u = u / math.sqrt(norm)
    nz = u[np.abs(u) > 1e-12 * np.abs(u).max()]
    nodes = int(np.count_nonzero(np.diff(np.sign(nz)) != 0))
    u.setflags(write=False)
    r = x**2
    r.setflags(write=False)
    return RadialGrid(r, u, k_in, step, nodes)


def radial_wavefunction(
    level: RydbergLevel, step: float = DEFAULT_STEP, table: QuantumDefectTable = RB87
) -> RadialGrid:
    """Normalized Coulomb-approximation wavefunction u(r) for ``level``."""
    if step <= 0 or step > 0.2:
        raise DomainError("Numerov step must lie in (0, 0.2] sqrt(a0)")
    return _wavefunction(round(level.n_star, 12), level.l, step, table.inner_cutoff())


def _overlap(a: RadialGrid, b: RadialGrid, power: int) -> float:
    lo = max(a.start, b.start)
    hi = min(a.start + len(a.amplitudes), b.start + len(b.amplitudes))
    if hi <= lo:
        return 0.0
    ua = a.amplitudes[lo - a.start : hi - a.start]
    ub = b.amplitudes[lo - b.start : hi - b.start]
    x = np.arange(lo, hi) * a.step
    return float(np.dot(ua * ub, 2.0 * x ** (2 * power + 1)) * a.step)


def radial_matrix_element(
    a: RydbergLevel, b: RydbergLevel, power: int = 1, step: float = DEFAULT_STEP
) -> float:
    """<a| r^power |b> in Bohr radii (radial part only)."""
    return _overlap(radial_wavefunction(a, step), radial_wavefunction(b, step), power)


def grid_matrix_element(a: RadialGrid, b: RadialGrid, power: int = 1) -> float:
    """Radial integral between two precomputed grids on the same lattice.

    Level-based callers never see a mismatch: ``radial_matrix_element``
    builds both wavefunctions on one lattice.
    """
    if a.step != b.step:
        raise DomainError("grids on different lattices; recompute with a common step")
    return _overlap(a, b, power)


def radial_matrix(grids, power: int = 1) -> np.ndarray:
    """All pairwise radial integrals between grids on one lattice, as a matrix."""
    grids = list(grids)
    if not grids:
        return np.zeros((0, 0))
    step = grids[0].step
    if any(g.step != step for g in grids):
        raise DomainError("grids on different lattices; recompute with a common step")
    lo = min(g.start for g in grids)
    hi = max(g.start + len(g.amplitudes) for g in grids)
    u = np.zeros((len(grids), hi - lo))
    for i, g in enumerate(grids):
        u[i, g.start - lo : g.start - lo + len(g.amplitudes)] = g.amplitudes
    x = np.arange(lo, hi) * step
    w = 2.0 * x ** (2 * power + 1) * step
    return (u * w) @ u.T


# ---------------------------------------------------------------------------
# angular algebra


def _half(x: float) -> Rational:
    return Rational(int(round(2 * x)), 2)


@lru_cache(maxsize=65536)
def _angular_cached(la: int, ja2: int, ma2: int, lb: int, jb2: int, mb2: int, q: int) -> float:
    ja, ma, jb, mb = (Rational(v, 2) for v in (ja2, ma2, jb2, mb2))
    s = Rational(1, 2)
    total = 0
    reduced_l = (-1) ** 0 * math.sqrt((2 * la + 1) * (2 * lb + 1)) * float(wigner_3j(lb, 1, la, 0, 0, 0))
    if reduced_l == 0.0:
        return 0.0
    for ms in (s, -s):
        mla, mlb = ma - ms, mb - ms
        if abs(mla) > la or abs(mlb) > lb:
            continue
        cg_a = clebsch_gordan(la, s, ja, mla, ms, ma)
        cg_b = clebsch_gordan(lb, s, jb, mlb, ms, mb)
        if cg_a == 0 or cg_b == 0:
            continue
        w = wigner_3j(lb, 1, la, -mlb, q, mla)
        total += float(cg_a * cg_b * w) * (-1) ** int(mlb)
    return total * reduced_l


def angular_factor(a: RydbergLevel, b: RydbergLevel, q: int) -> float:
    """Angular part of <b| r_q |a> (unit-normalized spherical tensor C^1_q)."""
    if q not in (-1, 0, 1):
        raise DomainError("polarization q must be -1, 0 or +1")
    if abs(a.l - b.l) != 1 or b.mj != a.mj + q or abs(a.j - b.j) > 1:
        return 0.0
    return _angular_cached(a.l, round(2 * a.j), round(2 * a.mj), b.l, round(2 * b.j), round(2 * b.mj), q)


def dipole_matrix_element(a: RydbergLevel, b: RydbergLevel, q: int, step: float = DEFAULT_STEP) -> float:
    """Transition dipole <b| r_q |a> in e a0 for a photon of polarization q.

    Non-zero only for |l_a - l_b| = 1 and mj_b = mj_a + q; forbidden pairs
    return an exact 0.0 without touching the radial integral.
    """
    ang = angular_factor(a, b, q)
    if ang == 0.0:
        return 0.0
    return ang * radial_matrix_element(a, b, 1, step)


# ---------------------------------------------------------------------------
# lifetimes


@dataclass(frozen=True)
class LifetimeResult:
    lifetime: float  # s
    spontaneous_rate: float  # 1/s
    blackbody_rate: float  # 1/s
    temperature: float
    n_max: int
    converged: bool
    tail_fraction: float  # estimated fraction of the rate missed by truncation

    @property
    def total_rate(self) -> float:
        return self.spontaneous_rate + self.blackbody_rate


def _decay_partners(level: RydbergLevel, n_values: Iterable[int]):
    for lp in (level.l - 1, level.l + 1):
        if lp < 0:
            continue
        for jp in (lp - 0.5, lp + 0.5):
            if jp < 0 or abs(jp - level.j) > 1:
                continue
            for n in n_values:
                if n <= lp or n < RB87.lowest_principal(lp):
                    continue
                yield RydbergLevel(n, lp, jp, jp)


def _line_strength(level: RydbergLevel, partner: RydbergLevel, step: float) -> float:
    """sum over q and final mj of |<f| r_q |i>|^2 in a0^2."""
    radial = radial_matrix_element(level, partner, 1, step)
    total = 0.0
    for q in (-1, 0, 1):
        mf = level.mj + q
        if abs(mf) > partner.j:
            continue
        ang = angular_factor(level, partner.with_mj(mf), q)
        total += ang * ang
    return total * radial * radial


def transition_rates(level: RydbergLevel, partner: RydbergLevel, temperature: float, step: float = DEFAULT_STEP):
    """(spontaneous, blackbody) rates in 1/s from ``level`` to ``partner``."""
    nu = transition_frequency(level, partner)  # Hz, negative for decay
    omega = 2 * math.pi * abs(nu)
    strength = _line_strength(level, partner, step) * (C.e * C.a0) ** 2
    einstein = omega**3 * strength / (3 * math.pi * C.epsilon_0 * C.hbar * C.c**3)
    spont = einstein if nu < 0 else 0.0
    bbr = 0.0
    if temperature > 0:
        arg = C.h * abs(nu) / (C.k_B * temperature)
        if arg < 700:
            bbr = einstein / math.expm1(arg)
    return spont, bbr


def radiative_lifetime(
    level: RydbergLevel,
    environment_temperature: float = 0.0,
    step: float = DEFAULT_STEP,
    tolerance: float = 0.01,
    max_extra_shells: int = 60,
) -> LifetimeResult:
    """Radiative lifetime including blackbody-induced transitions.

    At zero temperature the sum runs over every dipole-allowed lower level.
    At finite temperature shells n > level.n are added until the estimated
    remaining tail (last shell times n/2, for a ~n^-3 falloff) drops below
    ``tolerance`` of the total rate; the estimate is reported in
    ``tail_fraction``.
    """
    if environment_temperature < 0:
        raise DomainError("temperature must be non-negative")
    spont = 0.0
    bbr = 0.0
    for partner in _decay_partners(level, range(1, level.n + 2)):
        s, b = transition_rates(level, partner, environment_temperature, step)
        spont += s
        bbr += b
    n_max = level.n + 1
    tail = 0.0
    converged = True
    if environment_temperature > 0:
        converged = False
        for extra in range(2, max_extra_shells + 1):
            n = level.n + extra
            shell = sum(transition_rates(level, p, environment_temperature, step)[1] for p in _decay_partners(level, [n]))
            bbr += shell
            n_max = n
            # shell contributions fall off ~ n^-3 beyond the thermal peak
            tail = shell * n / 2.0 / (spont + bbr)
            if extra >= 5 and tail < tolerance:
                converged = True
                break
    total = spont + bbr
    if total <= 0:
        raise NumericalError("no decay channels found", level=level.label)
    return LifetimeResult(1.0 / total, spont, bbr, environment_temperature, n_max, converged, tail)


def classical_ionization_field(level: RydbergLevel) -> float:
    """Saddle-point ionization field 1/(16 n*^4) in V/cm."""
    return C.ATOMIC_FIELD_V_PER_CM / (16.0 * level.n_star**4)
