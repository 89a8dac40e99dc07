"""Stark maps of 87Rb Rydberg states and quadratic polarizabilities.

The Hamiltonian is built in a fine-structure basis with a single mj,
diagonal quantum-defect energies and field couplings F * <b|z|a>.
Energies are in MHz relative to a reference level (default 43S1/2).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import constants as C
from .errors import DomainError, NumericalError
from .rydstruct import (
    DEFAULT_STEP,
    RB87,
    RydbergLevel,
    angular_factor,
    level_energy,
    radial_matrix,
    radial_wavefunction,
)

REFERENCE = RydbergLevel(43, 0, 0.5, 0.5)
DEFAULT_SPREAD = 4
DEFAULT_FIT_RANGE = (0.0, 0.5)  # V/cm
TRACK_THRESHOLD = 0.5


@dataclass(frozen=True)
class StarkBasis:
    levels: tuple
    n_min: int
    n_max: int
    mj: float

    def __len__(self):
        return len(self.levels)

    def index(self, level: RydbergLevel) -> int:
        key = (level.n, level.l, level.j)
        for i, lv in enumerate(self.levels):
            if (lv.n, lv.l, lv.j) == key:
                return i
        raise DomainError(f"{level.label} is not in the basis")

    def energies_MHz(self, reference: RydbergLevel = REFERENCE) -> np.ndarray:
        e0 = level_energy(reference)
        return np.array([(level_energy(lv) - e0) / C.get("Hz_per_MHz") for lv in self.levels])


def build_basis(center_n: int, spread: int = DEFAULT_SPREAD, mj: float = 0.5) -> StarkBasis:
    """All (n, l, j) with |n - center_n| <= spread and the given mj."""
    if spread < 3:
        raise DomainError("basis spread must be at least 3")
    n_min = max(center_n - spread, 1)
    n_max = center_n + spread
    levels = []
    for n in range(n_min, n_max + 1):
        for l in range(n):
            if n < RB87.lowest_principal(l):
                continue
            for j in (l - 0.5, l + 0.5):
                if j < abs(mj):
                    continue
                levels.append(RydbergLevel(n, l, j, mj))
    if not levels:
        raise DomainError(f"empty basis for n={center_n}, spread={spread}, mj={mj}")
    levels.sort(key=lambda lv: (level_energy(lv), lv.l, lv.j))
    return StarkBasis(tuple(levels), n_min, n_max, mj)


def _dipole_z(basis: StarkBasis, step: float) -> np.ndarray:
    """Matrix of <b| z |a> in Bohr radii for the basis (q = 0)."""
    grids = [radial_wavefunction(lv, step) for lv in basis.levels]
    radial = radial_matrix(grids)
    size = len(basis)
    ang = np.zeros((size, size))
    ls = np.array([lv.l for lv in basis.levels])
    for a in range(size):
        for b in np.nonzero(np.abs(ls - ls[a]) == 1)[0]:
            if b > a:
                ang[a, b] = angular_factor(basis.levels[a], basis.levels[b], 0)
    ang = ang + ang.T
    return ang * radial


_COUPLING_CACHE: dict = {}


def coupling_matrix(basis: StarkBasis, step: float = DEFAULT_STEP) -> np.ndarray:
    """Field coupling in MHz per V/cm (read-only, cached per basis)."""
    key = (basis, step)
    mat = _COUPLING_CACHE.get(key)
    if mat is None:
        mat = _dipole_z(basis, step) * C.DIPOLE_FIELD_MHZ
        mat = 0.5 * (mat + mat.T)
        mat.setflags(write=False)
        if len(_COUPLING_CACHE) > 16:
            _COUPLING_CACHE.clear()
        _COUPLING_CACHE[key] = mat
    return mat


def stark_hamiltonian(
    basis: StarkBasis, field: float, reference: RydbergLevel = REFERENCE, step: float = DEFAULT_STEP
) -> np.ndarray:
    """Real symmetric Hamiltonian in MHz at ``field`` V/cm along z."""
    if field < 0:
        raise DomainError("field must be non-negative")
    h = field * coupling_matrix(basis, step)
    h[np.diag_indices_from(h)] = basis.energies_MHz(reference)
    return h


@dataclass
class StarkMap:
    fields: np.ndarray  # V/cm
    energies: np.ndarray  # (n_states, n_fields) MHz, row i follows basis level i from zero field
    basis: StarkBasis
    metadata: dict = field(default_factory=dict)

    def curve(self, level: RydbergLevel) -> np.ndarray:
        return self.energies[self.basis.index(level)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["field_V_per_cm"] + [lv.label + " [MHz]" for lv in self.basis.levels])
            for k, f in enumerate(self.fields):
                w.writerow([f"{f:.10g}"] + [f"{e:.10g}" for e in self.energies[:, k]])


def compute_stark_map(
    basis: StarkBasis,
    fields: Sequence[float],
    reference: RydbergLevel = REFERENCE,
    step: float = DEFAULT_STEP,
) -> StarkMap:
    """Diagonalize at each field and follow states by eigenvector overlap.

    The fields must be increasing.  At each sample the eigenvectors are
    assigned to the previous ones by maximal squared overlap (Hungarian
    assignment); a small energy-proximity penalty breaks ties.  Samples where
    any assigned overlap falls below 0.5 are listed in metadata["flagged"].
    """
    fields = np.asarray(fields, dtype=float)
    if fields.ndim != 1 or len(fields) < 1:
        raise DomainError("need at least one field sample")
    if np.any(fields < 0) or np.any(np.diff(fields) <= 0):
        raise DomainError("fields must be non-negative and strictly increasing")
    size = len(basis)
    energies = np.empty((size, len(fields)))
    flagged = []
    prev_vecs = None
    prev_e = None
    min_overlap = 1.0
    for k, f in enumerate(fields):
        h = stark_hamiltonian(basis, f, reference, step)
        e, v = np.linalg.eigh(h)
        if prev_vecs is None:
            if f == 0.0:
                # eigh sorts by energy; map back to basis order
                order = np.argmax(np.abs(v), axis=0)
                perm = np.empty(size, dtype=int)
                perm[order] = np.arange(size)
                if len(set(order)) != size:
                    perm = np.argmax(np.abs(v), axis=1)
            else:
                perm = np.argmax(np.abs(v), axis=1)
                if len(set(perm)) != size:
                    perm = linear_sum_assignment(-np.abs(v))[1]
            vecs = v[:, perm]
            energies[:, k] = e[perm]
        else:
            ov = (prev_vecs.T @ v) ** 2
            spacing = np.abs(prev_e[:, None] - e[None, :])
            cost = -ov + 1e-9 * spacing / (1.0 + spacing.max())
            rows, cols = linear_sum_assignment(cost)
            perm = np.empty(size, dtype=int)
            perm[rows] = cols
            chosen = ov[rows, cols]
            min_overlap = min(min_overlap, float(chosen.min()))
            if chosen.min() < TRACK_THRESHOLD:
                flagged.append(k)
            vecs = v[:, perm]
            # keep a consistent sign for the next overlap
            vecs = vecs * np.sign(np.sum(prev_vecs * vecs, axis=0) + 1e-300)
            energies[:, k] = e[perm]
        prev_vecs = vecs
        prev_e = energies[:, k]
    meta = {
        "basis_size": size,
        "mj": basis.mj,
        "n_range": [basis.n_min, basis.n_max],
        "reference": reference.label,
        "flagged": flagged,
        "min_overlap": min_overlap,
        "step": step,
    }
    return StarkMap(fields, energies, basis, meta)


@dataclass(frozen=True)
class Polarizability:
    level: str
    alpha_half: float  # MHz/(V/cm)^2, shift = -alpha_half * E^2
    fit_range: tuple
    residual: float  # rms residual / max |shift|
    linear_term: float  # MHz/(V/cm)
    linear_sigma: float

    @property
    def alpha(self) -> float:
        return 2.0 * self.alpha_half


def polarizability(
    basis: StarkBasis,
    level: RydbergLevel = REFERENCE,
    fit_range: tuple = DEFAULT_FIT_RANGE,
    samples: int = 11,
    step: float = DEFAULT_STEP,
) -> Polarizability:
    """Fit -(alpha/2) E^2 to the tracked curve of ``level``.

    The fit model is c0 + c1 E + c2 E^2 + c4 E^4 + c6 E^6: the even higher
    orders absorb the hyperpolarizability so that c2 is not biased, and the
    free linear term is reported as a symmetry check.
    """
    lo, hi = fit_range
    if not 0 <= lo < hi:
        raise DomainError("fit range must satisfy 0 <= lo < hi")
    grid = np.linspace(0.0, hi, max(samples, 7))
    smap = compute_stark_map(basis, grid, level, step)
    curve = smap.curve(level)
    sel = grid >= lo
    x, y = grid[sel], curve[sel] - curve[0]
    powers = (0, 1, 2, 4, 6)
    if len(x) <= len(powers):
        raise DomainError("too few samples inside the fit range")
    design = np.vstack([x**p for p in powers]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    r = y - design @ coef
    scale = max(np.abs(y).max(), 1e-30)
    # acceptance residual: how far the data are from the pure quadratic law
    quad = np.polyfit(x, y, 2)
    resid = float(np.sqrt(np.mean((y - np.polyval(quad, x)) ** 2)) / scale)
    s2 = float(r @ r) / (len(x) - len(powers))
    cov = np.linalg.pinv(design.T @ design) * s2
    lin_sigma = float(math.sqrt(max(cov[1, 1], 0.0)))
    if resid > 0.01:
        raise NumericalError("quadratic Stark fit residual exceeds 1%", residual=resid, level=level.label)
    return Polarizability(level.label, float(-coef[2]), (lo, hi), resid, float(coef[1]), lin_sigma)


def stark_shift(alpha_half: float, field: float) -> float:
    """Quadratic Stark shift -(alpha/2) F^2 in MHz."""
    if field < 0:
        raise DomainError("field must be non-negative")
    return -alpha_half * field**2
