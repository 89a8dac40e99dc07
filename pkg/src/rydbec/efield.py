"""Point-charge model of the eight field plates and the MCP Faraday cages.

Each plate is replaced by a point charge at a corner of a cuboid centred on
the atoms.  Positions are in mm, fields in V/cm and charges in "model
units" of V*cm, so that a unit charge at 1 cm gives 1 V/cm.

Axes: the plate faces are normal to z (plates A-D at -z facing E-H at
+z); the MCP cages sit on the x axis (J at +25.5 mm, I at -32.5 mm).
Corner labels, with E facing A:

    z = -Z : A(+x,+y)  B(-x,+y)  C(+x,-y)  D(-x,-y)
    z = +Z : E(+x,+y)  F(-x,+y)  G(+x,-y)  H(-x,-y)

so that B + H is a dipole along x pushing positive charges towards J.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import constants as C
from .errors import DomainError, NumericalError

LABELS = "ABCDEFGH"
_SIGNS = {
    "A": (1, 1, -1),
    "B": (-1, 1, -1),
    "C": (1, -1, -1),
    "D": (-1, -1, -1),
    "E": (1, 1, 1),
    "F": (-1, 1, 1),
    "G": (1, -1, 1),
    "H": (-1, -1, 1),
}
ASPECT = (15.0, 15.0, 14.0)
INNER_DISTANCE_MM = 25.0
MCP_J_X_MM = 25.5
MCP_I_X_MM = -32.5

THEORY_FIELD_PER_VOLT = 0.14  # V/cm at the centre per volt on B and H (simulation)
MEASURED_FIELD_PER_VOLT = 0.2  # V/cm per volt, from the Stark-scan calibration
CAGE_REFERENCE_VOLTAGE = -15.0
CAGE_REFERENCE_FIELD = 0.2  # V/cm at the centre, along +x
CAGE_REFERENCE_GRADIENT = 2.0  # dEx/dx in V/cm^2
CAGE_PAIR_OFFSETS_MM = (4.5, 19.5)  # behind the J grid plane


@dataclass(frozen=True)
class PlateGeometry:
    half_extent: tuple = (
        0.5 * INNER_DISTANCE_MM * ASPECT[0] / ASPECT[2],
        0.5 * INNER_DISTANCE_MM * ASPECT[1] / ASPECT[2],
        0.5 * INNER_DISTANCE_MM,
    )  # mm, (X, Y, Z)
    mcp_j_x: float = MCP_J_X_MM
    mcp_i_x: float = MCP_I_X_MM

    @property
    def corners(self) -> np.ndarray:
        """(8, 3) corner positions in mm, ordered A..H."""
        h = np.asarray(self.half_extent)
        return np.array([np.multiply(_SIGNS[k], h) for k in LABELS], dtype=float)

    def to_dict(self) -> dict:
        return {
            "corners_mm": {k: list(map(float, p)) for k, p in zip(LABELS, self.corners)},
            "half_extent_mm": list(self.half_extent),
            "mcp_J_x_mm": self.mcp_j_x,
            "mcp_I_x_mm": self.mcp_i_x,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PlateGeometry":
        if "half_extent_mm" in d:
            he = tuple(float(v) for v in d["half_extent_mm"])
        else:
            he = cls().half_extent
        if len(he) != 3 or min(he) <= 0:
            raise DomainError("half_extent_mm must be three positive lengths")
        return cls(he, float(d.get("mcp_J_x_mm", MCP_J_X_MM)), float(d.get("mcp_I_x_mm", MCP_I_X_MM)))


DEFAULT_GEOMETRY = PlateGeometry()


@dataclass(frozen=True)
class ChargeSet:
    """Plate charges A..H plus optional extra (cage) point charges."""

    charges: tuple = (0.0,) * 8
    extra_positions: tuple = ()  # mm, tuples of 3
    extra_charges: tuple = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.charges) != 8:
            raise DomainError("a ChargeSet needs exactly eight plate charges")
        if len(self.extra_positions) != len(self.extra_charges):
            raise DomainError("extra charge positions and values differ in length")
        if not np.all(np.isfinite(self.charges)) or not np.all(np.isfinite(self.extra_charges)):
            raise DomainError("charges must be finite")

    @classmethod
    def from_mapping(cls, values: Mapping[str, float]) -> "ChargeSet":
        unknown = set(values) - set(LABELS)
        if unknown:
            raise DomainError(f"unknown plate labels {sorted(unknown)}")
        return cls(tuple(float(values.get(k, 0.0)) for k in LABELS))

    def as_dict(self) -> dict:
        return dict(zip(LABELS, self.charges))

    def __add__(self, other: "ChargeSet") -> "ChargeSet":
        return ChargeSet(
            tuple(a + b for a, b in zip(self.charges, other.charges)),
            self.extra_positions + other.extra_positions,
            self.extra_charges + other.extra_charges,
        )

    def scaled(self, factor: float) -> "ChargeSet":
        return ChargeSet(
            tuple(factor * q for q in self.charges),
            self.extra_positions,
            tuple(factor * q for q in self.extra_charges),
            dict(self.metadata),
        )

    def with_extra(self, other: "ChargeSet") -> "ChargeSet":
        return self + other

    def to_json(self) -> str:
        doc = {
            "units": "model charge (V*cm); positions in mm",
            "plates": self.as_dict(),
            "extra": [
                {"position_mm": list(map(float, p)), "charge": float(q)}
                for p, q in zip(self.extra_positions, self.extra_charges)
            ],
        }
        if self.metadata:
            doc["metadata"] = self.metadata
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ChargeSet":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DomainError(f"invalid charge JSON: {exc}") from None
        plates = doc.get("plates", doc)
        base = cls.from_mapping({k: v for k, v in plates.items() if k in LABELS})
        extra = doc.get("extra", [])
        pos = tuple(tuple(float(v) for v in e["position_mm"]) for e in extra)
        qs = tuple(float(e["charge"]) for e in extra)
        return cls(base.charges, pos, qs)

    def sources(self, geometry: PlateGeometry = DEFAULT_GEOMETRY):
        """All point sources as (positions in cm, charges)."""
        pos = geometry.corners
        q = list(self.charges)
        if self.extra_positions:
            pos = np.vstack([pos, np.asarray(self.extra_positions, dtype=float)])
            q += list(self.extra_charges)
        return pos / C.get("mm_per_cm"), np.asarray(q, dtype=float)


def field_at(geometry: PlateGeometry, charges: ChargeSet, points) -> np.ndarray:
    """Coulomb field in V/cm at point(s) given in mm; shape (..., 3)."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts) / C.get("mm_per_cm")
    src, q = charges.sources(geometry)
    d = pts[:, None, :] - src[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    live = q != 0
    if np.any(r[:, live] < 1e-9):
        raise DomainError("field evaluated at a charge location")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(live, q / r**3, 0.0)
    e = np.einsum("pk,pkd->pd", w, d)
    return e[0] if single else e


def potential_at(geometry: PlateGeometry, charges: ChargeSet, points) -> np.ndarray:
    """Coulomb potential in V (zero at infinity) at point(s) in mm; E = -grad."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts) / C.get("mm_per_cm")
    src, q = charges.sources(geometry)
    r = np.linalg.norm(pts[:, None, :] - src[None, :, :], axis=-1)
    live = q != 0
    if np.any(r[:, live] < 1e-9):
        raise DomainError("potential evaluated at a charge location")
    with np.errstate(divide="ignore"):
        phi = np.where(live, q / r, 0.0).sum(axis=1)
    return phi[0] if single else phi


# ---------------------------------------------------------------------------
# Taylor expansion at the origin

_AXES = "xyz"


def _unit_coefficients(geometry: PlateGeometry):
    """Field, gradient and curvature at the origin per unit plate charge.

    Returns arrays E[c, i], G[c, i, j] = d_j E_i and K[c, i, j, k] =
    d_j d_k E_i, for charges c = A..H.
    """
    p = geometry.corners / C.get("mm_per_cm")
    d = -p  # origin minus source
    r = np.linalg.norm(d, axis=1)
    eye = np.eye(3)
    field = d / r[:, None] ** 3
    grad = eye[None] / r[:, None, None] ** 3 - 3 * np.einsum("ci,cj->cij", d, d) / r[:, None, None] ** 5
    t1 = (
        np.einsum("ij,ck->cijk", eye, d)
        + np.einsum("ik,cj->cijk", eye, d)
        + np.einsum("jk,ci->cijk", eye, d)
    )
    curv = -3 * t1 / r[:, None, None, None] ** 5 + 15 * np.einsum("ci,cj,ck->cijk", d, d, d) / r[:, None, None, None] ** 7
    return field, grad, curv


@dataclass(frozen=True)
class TaylorCoefficients:
    field: np.ndarray  # V/cm
    gradient: np.ndarray  # [i, j] = d_j E_i, V/cm^2
    curvature: np.ndarray  # [i, j, k] = d_j d_k E_i, V/cm^3

    def component(self, key: str) -> float:
        idx = tuple(_AXES.index(ch) for ch in key)
        if len(idx) == 1:
            return float(self.field[idx])
        if len(idx) == 2:
            return float(self.gradient[idx])
        return float(self.curvature[idx])


def taylor_coefficients(geometry: PlateGeometry, charges: ChargeSet, order: int = 2) -> TaylorCoefficients:
    """Analytic Taylor coefficients of E at the origin (extra charges included)."""
    if order not in (0, 1, 2):
        raise DomainError("order must be 0, 1 or 2")
    pos, q = charges.sources(geometry)
    d = -pos
    r = np.linalg.norm(d, axis=1)
    if np.any(r < 1e-12):
        raise DomainError("a charge sits at the origin")
    eye = np.eye(3)
    f = np.einsum("c,ci->i", q / r**3, d)
    g = np.zeros((3, 3))
    k = np.zeros((3, 3, 3))
    if order >= 1:
        g = eye * np.sum(q / r**3) - 3 * np.einsum("c,ci,cj->ij", q / r**5, d, d)
    if order >= 2:
        t1 = (
            np.einsum("ij,ck->cijk", eye, d)
            + np.einsum("ik,cj->cijk", eye, d)
            + np.einsum("jk,ci->cijk", eye, d)
        )
        k = np.einsum("c,cijk->ijk", -3 * q / r**5, t1) + 15 * np.einsum("c,ci,cj,ck->ijk", q / r**7, d, d, d)
    return TaylorCoefficients(f, g, k)


# ---------------------------------------------------------------------------
# inverse problem


class UnreachableTargetError(DomainError):
    def __init__(self, message: str, components: Sequence[str], residuals: Mapping[str, float]):
        super().__init__(message)
        self.components = list(components)
        self.residuals = dict(residuals)


def _check_key(key: str) -> str:
    if not (1 <= len(key) <= 3) or any(ch not in _AXES for ch in key):
        raise DomainError(f"bad target component {key!r}; use e.g. 'x', 'xy' (dEx/dy), 'xyz'")
    return key


@dataclass(frozen=True)
class FieldTarget:
    """Requested Taylor components at the origin.

    Keys: 'x' for E_x (V/cm), 'xy' for dE_x/dy (V/cm^2), 'xyz' for
    d^2E_x/dy dz (V/cm^3).  Optional per-component weights default to one.
    """

    components: Mapping[str, float]
    weights: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.components:
            raise DomainError("a field target needs at least one component")
        for key in list(self.components) + list(self.weights):
            _check_key(key)
        if any(w <= 0 for w in self.weights.values()):
            raise DomainError("weights must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "FieldTarget":
        comps = d.get("components", {k: v for k, v in d.items() if k != "weights"})
        return cls({k: float(v) for k, v in comps.items()}, {k: float(v) for k, v in d.get("weights", {}).items()})


@dataclass(frozen=True)
class SolveResult:
    charges: ChargeSet
    residuals: dict  # component -> achieved - requested
    singular_values: np.ndarray
    rank: int


def design_matrix(geometry: PlateGeometry, keys: Sequence[str]) -> np.ndarray:
    """Rows: requested components; columns: unit charge on plates A..H."""
    fv, gv, kv = _unit_coefficients(geometry)
    rows = []
    for key in keys:
        idx = tuple(_AXES.index(ch) for ch in _check_key(key))
        src = (fv, gv, kv)[len(idx) - 1]
        rows.append(src[(slice(None),) + idx])
    return np.array(rows, dtype=float)


def solve_charges(
    geometry: PlateGeometry, target: FieldTarget, rcond: float = 1e-12, tolerance: float = 1e-9
) -> SolveResult:
    """Weighted minimum-norm least-squares plate charges for a target.

    Columns are scaled to unit norm before the pseudo-inverse so that no
    plate dominates numerically.  If a requested component cannot be met to
    ``tolerance`` (relative to the largest target value), the
    unreachable components are reported in the raised error.
    """
    keys = list(target.components)
    a = design_matrix(geometry, keys)
    t = np.array([target.components[k] for k in keys])
    w = np.array([target.weights.get(k, 1.0) for k in keys])
    aw = a * w[:, None]
    col = np.linalg.norm(aw, axis=0)
    col[col == 0] = 1.0
    scaled = aw / col
    sv = np.linalg.svd(scaled, compute_uv=False)
    pinv = np.linalg.pinv(scaled, rcond=rcond)
    q = (pinv @ (w * t)) / col
    rank = int(np.sum(sv > rcond * sv.max())) if sv.size and sv.max() > 0 else 0
    achieved = a @ q
    res = {k: float(v) for k, v in zip(keys, achieved - t)}
    scale = max(np.abs(t).max(), 1.0e-300)
    bad = [k for k in keys if abs(res[k]) > tolerance * max(scale, 1e-12)]
    if bad and np.abs(t).max() > 0:
        raise UnreachableTargetError(
            f"target components {bad} are not reachable with eight plate charges", bad, res
        )
    meta = {"source": "solve", "rank": rank}
    return SolveResult(ChargeSet(tuple(float(v) for v in q), metadata=meta), res, sv, rank)


# ---------------------------------------------------------------------------
# presets and calibration

_PRESETS = {
    "constant_full": {"A": -1, "B": -1, "C": -1, "D": -1, "E": 1, "F": 1, "G": 1, "H": 1},
    "constant_BH": {"B": 1, "H": 1},
    "gradient_all": {k: 1 for k in LABELS},
    # octupole: sign(x y z); the only corner pattern with no field or gradient
    "saddle_alternate": {k: int(np.prod(_SIGNS[k])) for k in LABELS},
}
PRESET_NAMES = tuple(_PRESETS)


def preset_configuration(name: str) -> ChargeSet:
    try:
        pattern = _PRESETS[name]
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; choose from {', '.join(_PRESETS)}") from None
    cs = ChargeSet.from_mapping({k: float(v) for k, v in pattern.items()})
    return ChargeSet(cs.charges, metadata={"preset": name})


@dataclass(frozen=True)
class VoltageCalibration:
    """Global plate-volts to model-charge factor."""

    charge_per_volt: float  # model units per volt
    field_per_volt: float  # (V/cm)/V for the anchoring preset
    anchor: str = "constant_BH"
    name: str = "theory"

    def charges(self, preset: str, volts: float) -> ChargeSet:
        return preset_configuration(preset).scaled(self.charge_per_volt * volts)

    def volts_for_field(self, field_V_per_cm: float) -> float:
        return field_V_per_cm / self.field_per_volt

    def voltages(self, charges: ChargeSet) -> dict:
        return {k: q / self.charge_per_volt for k, q in charges.as_dict().items()}


def voltage_calibration(
    field_per_volt: float = THEORY_FIELD_PER_VOLT,
    preset: str = "constant_BH",
    geometry: PlateGeometry = DEFAULT_GEOMETRY,
    name: str = "theory",
) -> VoltageCalibration:
    """Scale so that ``preset`` at 1 V gives ``field_per_volt`` V/cm at the origin."""
    if field_per_volt <= 0:
        raise DomainError("field per volt must be positive")
    unit = np.linalg.norm(taylor_coefficients(geometry, preset_configuration(preset), 0).field)
    if unit == 0:
        raise DomainError(f"preset {preset} has no field at the origin")
    return VoltageCalibration(field_per_volt / unit, field_per_volt, preset, name)


def theory_calibration(geometry: PlateGeometry = DEFAULT_GEOMETRY) -> VoltageCalibration:
    return voltage_calibration(THEORY_FIELD_PER_VOLT, geometry=geometry, name="theory")


def measured_calibration(geometry: PlateGeometry = DEFAULT_GEOMETRY) -> VoltageCalibration:
    return voltage_calibration(MEASURED_FIELD_PER_VOLT, geometry=geometry, name="measured")


def _cage_pair(geometry: PlateGeometry, field0: float, grad0: float):
    """Two on-axis charges behind the J grid reproducing (E_x, dE_x/dx) at the origin."""
    xs = np.array([geometry.mcp_j_x + o for o in CAGE_PAIR_OFFSETS_MM]) / C.get("mm_per_cm")
    # on the axis: E_x(0) = -q / a^2, dE_x/dx(0) = -2 q / a^3
    m = np.array([-1.0 / xs**2, -2.0 / xs**3])
    q = np.linalg.solve(m, [field0, grad0])
    return xs, q


def cage_field_model(voltage: float, geometry: PlateGeometry = DEFAULT_GEOMETRY) -> ChargeSet:
    """Effective point charge(s) of the MCP J cage at ``voltage`` volts.

    A single on-axis charge at distance a gives dE/dx / E = 2 / a, so the
    reference pair (0.2 V/cm, 2 V/cm^2 at -15 V) would need a = 2 mm,
    inside the plate region.  The model therefore falls back to two
    on-axis charges behind the grid; this is recorded in the metadata.
    Contributions are linear in the voltage.
    """
    ratio = CAGE_REFERENCE_GRADIENT / CAGE_REFERENCE_FIELD  # 1/cm
    single_a_mm = 2.0 / ratio * C.get("mm_per_cm")
    meta = {"cage": "J", "voltage": voltage, "single_charge_distance_mm": single_a_mm}
    if single_a_mm > geometry.mcp_j_x:
        a = single_a_mm / C.get("mm_per_cm")
        q = -CAGE_REFERENCE_FIELD * a**2 * voltage / CAGE_REFERENCE_VOLTAGE
        meta["model"] = "single"
        return ChargeSet(extra_positions=((single_a_mm, 0.0, 0.0),), extra_charges=(q,), metadata=meta)
    xs, q = _cage_pair(geometry, CAGE_REFERENCE_FIELD, CAGE_REFERENCE_GRADIENT)
    q = q * voltage / CAGE_REFERENCE_VOLTAGE
    meta["model"] = "pair_fallback"
    meta["reason"] = "single charge would sit inside the plate region"
    pos = tuple((float(x * C.get("mm_per_cm")), 0.0, 0.0) for x in xs)
    return ChargeSet(extra_positions=pos, extra_charges=tuple(float(v) for v in q), metadata=meta)


# ---------------------------------------------------------------------------
# export


def field_map_csv(path, geometry: PlateGeometry, charges: ChargeSet, points) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    e = field_at(geometry, charges, pts)
    mag = np.linalg.norm(e, axis=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_mm", "y_mm", "z_mm", "Ex_V_per_cm", "Ey_V_per_cm", "Ez_V_per_cm", "absE_V_per_cm"])
        for p, v, m in zip(pts, e, mag):
            w.writerow([f"{p[0]:.10g}", f"{p[1]:.10g}", f"{p[2]:.10g}"] + [f"{c:.10g}" for c in v] + [f"{m:.10g}"])


def axis_points(axis: str, half_range_mm: float = 10.0, samples: int = 41) -> np.ndarray:
    if axis not in _AXES:
        raise DomainError("axis must be x, y or z")
    s = np.linspace(-half_range_mm, half_range_mm, samples)
    pts = np.zeros((samples, 3))
    pts[:, _AXES.index(axis)] = s
    return pts
