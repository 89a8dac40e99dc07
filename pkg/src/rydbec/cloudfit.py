"""Bimodal analysis of time-of-flight absorption images.

Pipeline: Gaussian fit to the thermal wings -> Bose-enhanced (mu = 0)
fit on the same wing pixels -> subtraction -> Thomas-Fermi fit of the
remainder.  Image columns run along x (a radial trap axis), rows along y
(the axial trap axis).  Lengths in um, optical densities dimensionless,
times of flight in ms.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import least_squares
from scipy.special import spence, zeta

from . import constants as C
from .errors import DomainError, NumericalError

ZETA3 = float(zeta(3.0))
G2_ONE = math.pi**2 / 6.0
CROSS_SECTION_UM2 = C.get("d2_cross_section_cm2") * 1e8
SCATTERING_LENGTH = C.get("scattering_length_a0") * C.a0
DEFAULT_EXCLUSION = 2.0  # fitted Gaussian widths


def polylog_g2(x):
    """Dilogarithm g2(x) = sum x^k / k^2 on [0, 1] (via Spence's function)."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1):
        raise DomainError("g2 argument must lie in [0, 1]")
    out = spence(1.0 - arr)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class AbsorptionImage:
    od: np.ndarray  # optical density, rows = y, columns = x
    pitch_um: float
    tof_ms: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.od = np.asarray(self.od, dtype=float)
        if self.od.ndim != 2 or min(self.od.shape) < 8:
            raise DomainError("optical density must be a 2-D grid of at least 8x8 pixels")
        if not np.all(np.isfinite(self.od)):
            raise DomainError("optical density contains non-finite values")
        if self.pitch_um <= 0 or self.tof_ms < 0:
            raise DomainError("pixel pitch must be positive and TOF non-negative")

    def coordinates(self):
        ny, nx = self.od.shape
        x = (np.arange(nx) - (nx - 1) / 2) * self.pitch_um
        y = (np.arange(ny) - (ny - 1) / 2) * self.pitch_um
        return np.meshgrid(x, y)

    def atom_number(self, cross_section_um2: float = CROSS_SECTION_UM2) -> float:
        return float(self.od.sum() * self.pitch_um**2 / cross_section_um2)

    # -- I/O: CSV or raw float64 grid plus a JSON sidecar
    def save(self, path) -> None:
        path = Path(path)
        side = {"pitch_um": self.pitch_um, "tof_ms": self.tof_ms, "shape": list(self.od.shape)}
        if path.suffix == ".csv":
            np.savetxt(path, self.od, delimiter=",", fmt="%.10g")
        else:
            self.od.astype("<f8").tofile(path)
        side.update({k: v for k, v in self.metadata.items() if k not in side})
        Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "AbsorptionImage":
        path = Path(path)
        side_path = Path(str(path) + ".json")
        if not side_path.exists():
            raise DomainError(f"missing JSON sidecar {side_path}")
        try:
            side = json.loads(side_path.read_text())
            pitch, tof = float(side["pitch_um"]), float(side["tof_ms"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"bad sidecar {side_path}: {exc}") from None
        try:
            if path.suffix == ".csv":
                od = np.loadtxt(path, delimiter=",", ndmin=2)
            else:
                od = np.fromfile(path, dtype="<f8").reshape(side["shape"])
        except (OSError, ValueError, KeyError) as exc:
            raise DomainError(f"cannot read image {path}: {exc}") from None
        return cls(od, pitch, tof, {"source": str(path)})


# ---------------------------------------------------------------------------
# profile models (peak-normalized shapes)


def _gauss2d(p, x, y):
    a, x0, y0, sx, sy, c = p
    return a * np.exp(-0.5 * ((x - x0) / sx) ** 2 - 0.5 * ((y - y0) / sy) ** 2) + c


def _bose2d(p, x, y):
    a, x0, y0, sx, sy, c = p
    z = np.exp(-0.5 * ((x - x0) / sx) ** 2 - 0.5 * ((y - y0) / sy) ** 2)
    return a * spence(1.0 - z) / G2_ONE + c


def _tf2d(p, x, y):
    a, x0, y0, rx, ry = p
    u = 1.0 - ((x - x0) / rx) ** 2 - ((y - y0) / ry) ** 2
    return a * np.clip(u, 0.0, None) ** 1.5


def _fit(model, p0, x, y, data, lower, upper, stage):
    def resid(p):
        return model(p, x, y) - data

    try:
        res = least_squares(resid, p0, bounds=(lower, upper), x_scale="jac", max_nfev=4000)
    except ValueError as exc:
        raise NumericalError(f"{stage} fit failed: {exc}", stage=stage) from None
    rms = float(np.sqrt(np.mean(res.fun**2)))
    if not res.success or not np.all(np.isfinite(res.x)):
        raise NumericalError(f"{stage} fit did not converge", stage=stage, residual=rms)
    return res.x, rms


def _ellipse_mask(x, y, x0, y0, hx, hy):
    return ((x - x0) / hx) ** 2 + ((y - y0) / hy) ** 2 < 1.0


@dataclass(frozen=True)
class WingFit:
    temperature: float  # K, from the x width (point-source expansion)
    temperature_y: float  # K, from the y width
    amplitude: float
    center: tuple  # um
    sigma: tuple  # um
    offset: float
    exclusion: tuple  # half-axes of the excluded ellipse, um
    exclusion_center: tuple
    residual: float
    n_wing_pixels: int


def _temperature(sigma_um: float, tof_ms: float, mass: float = C.M_RB87) -> float:
    t = tof_ms * 1e-3
    if t <= 0:
        return math.nan
    return mass * (sigma_um * 1e-6 / t) ** 2 / C.k_B


def _bimodal2d(p, x, y):
    return _gauss2d(p[:6], x, y) + _tf2d([p[6], p[1], p[2], p[7], p[8]], x, y)


def gaussian_wing_fit(image: AbsorptionImage, exclusion: float = DEFAULT_EXCLUSION, iterations: int = 1) -> WingFit:
    """Gaussian fit to pixels outside an ellipse of ``exclusion`` fitted widths.

    The first exclusion region comes from a Gaussian plus Thomas-Fermi fit
    to the whole image and is widened, if needed, to contain the fitted
    condensate, so a dominant condensate cannot leak into the wings.
    """
    if exclusion < 0:
        raise DomainError("exclusion must be non-negative")
    x, y = image.coordinates()
    od = image.od
    span = image.pitch_um * max(od.shape)
    total = od.sum()
    if total > 0:
        cx = float((od * x).sum() / total)
        cy = float((od * y).sum() / total)
    else:
        cx = cy = 0.0
    s0 = span / 8
    peak = max(od.max(), 1e-6)
    pmin = image.pitch_um * 0.5
    lower = [0.0, x.min(), y.min(), pmin, pmin, -np.inf]
    upper = [np.inf, x.max(), y.max(), span * 2, span * 2, np.inf]
    p0 = [peak / 2, cx, cy, s0, s0, 0.0, peak / 2, span / 10, span / 10]
    q, rms = _fit(
        _bimodal2d, p0, x.ravel(), y.ravel(), od.ravel(), lower + [0.0, pmin, pmin], upper + [np.inf, span, span], "gaussian"
    )
    p = q[:6]
    core = (q[7], q[8]) if q[6] > 1e-3 * peak else (0.0, 0.0)
    if p[0] <= 1e-3 * peak:
        # no visible thermal component: start the wing fit from the core size
        p = np.array([1e-3 * peak, q[1], q[2], max(core[0], s0), max(core[1], s0), p[5]])

    def half_axes(par):
        return max(exclusion * par[3], 1.05 * core[0]), max(exclusion * par[4], 1.05 * core[1])

    mask = np.ones_like(od, dtype=bool)
    for _ in range(iterations + 1 if exclusion > 0 else 0):
        hx, hy = half_axes(p)
        mask = ~_ellipse_mask(x, y, q[1], q[2], hx, hy)
        if mask.sum() < 20:
            raise NumericalError("too few wing pixels outside the exclusion region", stage="wings", pixels=int(mask.sum()))
        p, rms = _fit(_gauss2d, p, x[mask], y[mask], od[mask], lower, upper, "wings")
    ex = half_axes(p) if exclusion > 0 else (0.0, 0.0)
    return WingFit(
        _temperature(p[3], image.tof_ms),
        _temperature(p[4], image.tof_ms),
        float(p[0]),
        (float(p[1]), float(p[2])),
        (float(p[3]), float(p[4])),
        float(p[5]),
        (float(ex[0]), float(ex[1])),
        (float(q[1]), float(q[2])),
        rms,
        int(mask.sum()),
    )


@dataclass(frozen=True)
class BoseFit:
    atom_number: float
    amplitude: float  # peak OD of the g2 profile
    center: tuple
    sigma: tuple
    offset: float
    residual: float
    gaussian_residual: float  # same pixels, Gaussian model, for comparison
    model_flag: str  # "bose" if the g2 model fits better, else "gaussian-like"

    def model(self, image: AbsorptionImage) -> np.ndarray:
        x, y = image.coordinates()
        return _bose2d([self.amplitude, *self.center, *self.sigma, 0.0], x, y)


def bose_enhanced_fit(
    image: AbsorptionImage,
    wings: Optional[WingFit] = None,
    cross_section_um2: float = CROSS_SECTION_UM2,
) -> BoseFit:
    """mu = 0 Bose-enhanced fit on the wing pixels; returns the thermal atom number."""
    if wings is None:
        wings = gaussian_wing_fit(image)
    x, y = image.coordinates()
    od = image.od
    if wings.exclusion[0] > 0:
        mask = ~_ellipse_mask(x, y, *wings.exclusion_center, *wings.exclusion)
    else:
        mask = np.ones_like(od, dtype=bool)
    span = image.pitch_um * max(od.shape)
    # in the far wings g2(z) ~ z, so the Gaussian amplitude maps to a/g2(1)... peak
    p0 = np.array([wings.amplitude * G2_ONE, *wings.center, *wings.sigma, wings.offset])
    lower = [0.0, x.min(), y.min(), image.pitch_um * 0.5, image.pitch_um * 0.5, -np.inf]
    upper = [np.inf, x.max(), y.max(), span * 2, span * 2, np.inf]
    p, rms = _fit(_bose2d, p0, x[mask], y[mask], od[mask], lower, upper, "bose")
    g_rms = wings.residual
    a, sx, sy = p[0], p[3], p[4]
    n = a / G2_ONE * 2 * math.pi * sx * sy * ZETA3 / cross_section_um2
    flag = "bose" if rms <= g_rms * (1 + 1e-9) else "gaussian-like"
    return BoseFit(float(n), float(a), (float(p[1]), float(p[2])), (float(sx), float(sy)), float(p[5]), rms, g_rms, flag)


@dataclass(frozen=True)
class ThomasFermiFit:
    atom_number: float
    amplitude: float
    center: tuple
    radii: tuple  # image plane, um
    residual: float


def thomas_fermi_fit(
    residual: np.ndarray,
    image: AbsorptionImage,
    guess_center=(0.0, 0.0),
    cross_section_um2: float = CROSS_SECTION_UM2,
    noise_floor: Optional[float] = None,
) -> ThomasFermiFit:
    """Fit the column-integrated TF profile to ``residual`` (image minus thermal fit).

    A remainder that carries no significant positive signal yields a zero
    condensate rather than an error.
    """
    x, y = image.coordinates()
    res = np.asarray(residual, dtype=float)
    if noise_floor is None:
        edge = np.concatenate([res[:3].ravel(), res[-3:].ravel(), res[:, :3].ravel(), res[:, -3:].ravel()])
        noise_floor = 5.0 * float(np.std(edge))
    peak = float(res.max())
    zero = ThomasFermiFit(0.0, 0.0, tuple(guess_center), (0.0, 0.0), float(np.sqrt(np.mean(res**2))))
    if peak <= max(noise_floor, 1e-9) or res.sum() <= 0:
        return zero
    half = res > 0.5 * peak
    k = np.argmax(res)
    x0, y0 = float(x.ravel()[k]), float(y.ravel()[k])
    rx0 = max(float(np.ptp(x[half])) / 2 * 1.4, image.pitch_um)
    ry0 = max(float(np.ptp(y[half])) / 2 * 1.4, image.pitch_um)
    span = image.pitch_um * max(res.shape)
    p0 = [peak, x0, y0, rx0, ry0]
    lower = [0.0, x.min(), y.min(), image.pitch_um * 0.5, image.pitch_um * 0.5]
    upper = [np.inf, x.max(), y.max(), span, span]
    p, rms = _fit(_tf2d, p0, x.ravel(), y.ravel(), res.ravel(), lower, upper, "thomas-fermi")
    if p[0] <= noise_floor:
        return zero
    n = (2 * math.pi / 5) * p[0] * p[3] * p[4] / cross_section_um2
    return ThomasFermiFit(float(n), float(p[0]), (float(p[1]), float(p[2])), (float(p[3]), float(p[4])), rms)


# ---------------------------------------------------------------------------
# condensate physics


def castin_dum_scaling(omega_radial: float, omega_axial: float, tof_s: float):
    """(lambda_radial, lambda_axial) expansion factors for a cigar-shaped condensate.

    Angular trap frequencies in rad/s; uses the small-eps asymptotic
    solution lambda_r = sqrt(1 + tau^2), lambda_z = 1 + eps^2 (tau atan tau
    - ln sqrt(1 + tau^2)), tau = omega_r t, eps = omega_z / omega_r.
    """
    tau = omega_radial * tof_s
    eps = omega_axial / omega_radial
    lr = math.sqrt(1 + tau * tau)
    lz = 1 + eps * eps * (tau * math.atan(tau) - math.log(math.sqrt(1 + tau * tau)))
    return lr, lz


@dataclass(frozen=True)
class BecProperties:
    chemical_potential_kHz: float  # mu / h
    radii_um: tuple
    peak_density_cm3: float


def bec_properties(atom_number: float, trap_Hz, scattering_length: float = SCATTERING_LENGTH, mass: float = C.M_RB87):
    """Thomas-Fermi chemical potential, radii and peak density."""
    if atom_number <= 0:
        raise DomainError("condensate atom number must be positive")
    w = 2 * math.pi * np.asarray(trap_Hz, dtype=float)
    if w.shape != (3,) or np.any(w <= 0):
        raise DomainError("need three positive trap frequencies")
    wbar = float(np.prod(w) ** (1 / 3))
    aho = math.sqrt(C.hbar / (mass * wbar))
    mu = 0.5 * C.hbar * wbar * (15 * atom_number * scattering_length / aho) ** 0.4
    radii = np.sqrt(2 * mu / (mass * w**2)) * 1e6
    n0 = mu * mass / (4 * math.pi * C.hbar**2 * scattering_length) * 1e-6
    return BecProperties(mu / C.h / 1e3, tuple(float(r) for r in radii), float(n0))


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class BimodalFitResult:
    temperature_nK: float
    thermal_number: float
    condensate_number: float
    condensate_fraction: float
    tf_radii_image_um: tuple
    tf_radii_trap_um: Optional[tuple]
    expansion_factors: Optional[tuple]
    residuals: dict
    stage_details: dict = field(default_factory=dict)

    @property
    def total_number(self) -> float:
        return self.thermal_number + self.condensate_number

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_number"] = self.total_number
        return d


def analyze_bimodal(
    image: AbsorptionImage,
    trap_Hz: Optional[tuple] = None,
    exclusion: float = DEFAULT_EXCLUSION,
    cross_section_um2: float = CROSS_SECTION_UM2,
    saturation_correction: float = 1.0,
) -> BimodalFitResult:
    """Wing fit -> Bose fit -> subtraction -> TF fit.

    ``trap_Hz`` = (radial, axial) trap frequencies; when given, the image
    TF radii are back-scaled to in-trap radii with the cigar expansion
    factors, which are recorded in the result.
    """
    sigma = cross_section_um2 / saturation_correction
    stage = "wings"
    try:
        wings = gaussian_wing_fit(image, exclusion)
        stage = "bose"
        bose = bose_enhanced_fit(image, wings, sigma)
        stage = "thomas-fermi"
        remainder = image.od - bose.model(image) - bose.offset
        tf = thomas_fermi_fit(remainder, image, bose.center, sigma)
    except NumericalError as exc:
        exc.diagnostics.setdefault("stage", stage)
        raise
    n_th = bose.atom_number
    n_bec = tf.atom_number
    frac = n_bec / (n_bec + n_th) if n_bec + n_th > 0 else 0.0
    trap_radii = None
    factors = None
    if trap_Hz is not None and tf.atom_number > 0:
        fr, fz = trap_Hz
        lr, lz = castin_dum_scaling(2 * math.pi * fr, 2 * math.pi * fz, image.tof_ms * 1e-3)
        factors = (lr, lz)
        trap_radii = (tf.radii[0] / lr, tf.radii[1] / lz)
    temperature = _temperature(bose.sigma[0], image.tof_ms) * 1e9
    return BimodalFitResult(
        float(temperature),
        float(n_th),
        float(n_bec),
        float(frac),
        tf.radii,
        trap_radii,
        factors,
        {"wings": wings.residual, "bose": bose.residual, "thomas_fermi": tf.residual},
        {"wing_temperature_nK": wings.temperature * 1e9, "bose_model_flag": bose.model_flag, "exclusion_um": wings.exclusion},
    )


def synthesize_image(
    temperature: float,
    thermal_number: float,
    condensate_number: float,
    trap_Hz=(250.0, 18.0),
    tof_ms: float = 21.0,
    noise: float = 0.0,
    seed: int = 0,
    pitch_um: float = 6.0,
    shape=(200, 200),
    scattering_length: float = SCATTERING_LENGTH,
    cross_section_um2: float = CROSS_SECTION_UM2,
) -> AbsorptionImage:
    """Bimodal synthetic image: mu = 0 Bose cloud plus an expanded TF condensate.

    ``noise`` is the rms of additive Gaussian OD noise.  The thermal widths
    include the in-trap size, sigma_i^2 = (k_B T/m)(1/omega_i^2 + t^2).
    """
    if temperature < 0 or thermal_number < 0 or condensate_number < 0:
        raise DomainError("temperature and atom numbers must be non-negative")
    fr, fz = trap_Hz
    t = tof_ms * 1e-3
    ny, nx = shape
    x = (np.arange(nx) - (nx - 1) / 2) * pitch_um
    y = (np.arange(ny) - (ny - 1) / 2) * pitch_um
    xx, yy = np.meshgrid(x, y)
    od = np.zeros(shape)
    if thermal_number > 0 and temperature > 0:
        v2 = C.k_B * temperature / C.M_RB87
        sx = math.sqrt(v2 * (1 / (2 * math.pi * fr) ** 2 + t * t)) * 1e6
        sy = math.sqrt(v2 * (1 / (2 * math.pi * fz) ** 2 + t * t)) * 1e6
        peak = thermal_number * cross_section_um2 * G2_ONE / (2 * math.pi * sx * sy * ZETA3)
        od += _bose2d([peak, 0.0, 0.0, sx, sy, 0.0], xx, yy)
    if condensate_number > 0:
        props = bec_properties(condensate_number, (fr, fr, fz), scattering_length)
        lr, lz = castin_dum_scaling(2 * math.pi * fr, 2 * math.pi * fz, t)
        rx, ry = props.radii_um[0] * lr, props.radii_um[2] * lz
        n0 = 5 * condensate_number * cross_section_um2 / (2 * math.pi * rx * ry)
        od += _tf2d([n0, 0.0, 0.0, rx, ry], xx, yy)
    if noise > 0:
        rng = np.random.Generator(np.random.Philox(key=seed))
        od = od + noise * rng.standard_normal(shape)
    meta = {
        "temperature_K": temperature,
        "thermal_number": thermal_number,
        "condensate_number": condensate_number,
        "trap_Hz": list(trap_Hz),
        "seed": seed,
        "noise": noise,
    }
    return AbsorptionImage(od, pitch_um, tof_ms, meta)


def ideal_gas_scenario(fraction: float, total_number: float = 4.6e5, critical_temperature: float = 400e-9):
    """(T, N_th, N_BEC) of an ideal trapped gas with the given condensate fraction."""
    if not 0 <= fraction <= 1:
        raise DomainError("fraction must lie in [0, 1]")
    t = critical_temperature * (1 - fraction) ** (1 / 3)
    return t, total_number * (1 - fraction), total_number * fraction
