"""Two-photon Rydberg excitation: Rabi frequencies, line synthesis, peak fits.

Frequencies follow the cyclic convention (Omega / 2 pi, Delta / 2 pi) and
are given in the unit named by each argument.  Beam radii are 1/e^2
intensity radii in um, cloud positions in um unless stated.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import OptimizeWarning, curve_fit

from . import constants as C
from . import magtrap as MT
from .errors import DomainError, NumericalError
from .rydstruct import RydbergLevel, angular_factor, dipole_matrix_element

GROUND = RydbergLevel(5, 0, 0.5, 0.5)
INTERMEDIATE_J = 1.5
TARGET = RydbergLevel(43, 0, 0.5, 0.5)
MU_B_MHZ_PER_G = C.mu_B / C.h / C.get("G_per_T") / C.get("Hz_per_MHz")
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

_POLARIZATIONS = ("sigma+", "sigma-", "pi")


@dataclass(frozen=True)
class GaussianBeam:
    wavelength_nm: float
    power_W: float
    waist_um: float  # 1/e^2 intensity radius at the atoms
    polarization: str = "pi"

    def __post_init__(self):
        if self.power_W < 0 or self.waist_um <= 0:
            raise DomainError("beam needs power >= 0 and radius > 0")
        if self.polarization not in _POLARIZATIONS:
            raise DomainError(f"polarization must be one of {_POLARIZATIONS}")


def beam_intensity(beam: GaussianBeam, rho_um) -> np.ndarray:
    """I(rho) = 2P/(pi w^2) exp(-2 rho^2/w^2) in W/m^2."""
    w = beam.waist_um * 1e-6
    rho = np.asarray(rho_um, dtype=float) * 1e-6
    return 2 * beam.power_W / (math.pi * w**2) * np.exp(-2 * rho**2 / w**2)


def _field_amplitude(intensity: float) -> float:
    return math.sqrt(2 * intensity / (C.c * C.epsilon_0))


def rabi_frequency(dipole_ea0: float, intensity: float) -> float:
    """Omega/2pi in kHz for a dipole (e a0) in a field of ``intensity`` W/m^2."""
    omega = abs(dipole_ea0) * C.e * C.a0 * _field_amplitude(intensity) / C.hbar
    return omega / (2 * math.pi) / 1e3


def red_dipole() -> float:
    """5S1/2(mj=1/2) -> 5P3/2(mj=3/2) sigma+ dipole in e a0 from the D2 radial integral."""
    inter = RydbergLevel(5, 1, INTERMEDIATE_J, 1.5)
    return C.get("rb_5s_5p_radial_a0") * angular_factor(GROUND, inter, +1)


def blue_dipole(target: RydbergLevel = TARGET) -> float:
    """5P3/2(mj=3/2) -> target(mj=1/2) sigma- dipole in e a0 (Coulomb approximation)."""
    inter = RydbergLevel(5, 1, INTERMEDIATE_J, 1.5)
    return dipole_matrix_element(inter, target.with_mj(0.5), -1)


def two_photon_rabi(omega_red_kHz: float, omega_blue_kHz: float, detuning_MHz: float) -> float:
    """Effective Rabi frequency Omega_r Omega_b / (2 Delta) in kHz."""
    if detuning_MHz == 0:
        raise DomainError("intermediate detuning must be non-zero")
    return omega_red_kHz * omega_blue_kHz / (2.0 * abs(detuning_MHz) * 1e3)


def scattering_rate(omega_red_kHz: float, detuning_MHz: float, gamma_MHz: float = C.get("d2_linewidth_MHz")) -> float:
    """Far-detuned intermediate-state scattering Gamma Omega^2/(4 Delta^2) in kHz.

    All three inputs are cyclic frequencies, so the result is the
    scattering rate divided by 2 pi; multiply by 2 pi for photons per
    second.
    """
    if detuning_MHz == 0:
        raise DomainError("intermediate detuning must be non-zero")
    return gamma_MHz * 1e3 * (omega_red_kHz / 1e3) ** 2 / (4.0 * detuning_MHz**2)


def rabi_coverage(sigma_um: float, w_red_um: float, w_blue_um: float, threshold: float) -> float:
    """Fraction of a radial Gaussian cloud with Omega(rho)/Omega(0) >= threshold."""
    if not 0 <= threshold <= 1:
        raise DomainError("threshold must lie in [0, 1]")
    if threshold == 0:
        return 1.0
    if threshold == 1:
        return 0.0
    if sigma_um <= 0:
        return 1.0
    rc2 = -math.log(threshold) / (1.0 / w_red_um**2 + 1.0 / w_blue_um**2)
    return 1.0 - math.exp(-rc2 / (2.0 * sigma_um**2))


# ---------------------------------------------------------------------------
# polarization and Zeeman structure

_SPHERICAL = {
    +1: np.array([-1.0, -1.0j, 0.0]) / math.sqrt(2.0),
    0: np.array([0.0, 0.0, 1.0], dtype=complex),
    -1: np.array([1.0, -1.0j, 0.0]) / math.sqrt(2.0),
}
_POL_Q = {"sigma+": +1, "sigma-": -1, "pi": 0}


def _rotation_to(b_hat: np.ndarray) -> np.ndarray:
    """Rotation matrix R with R @ z = b_hat (Rodrigues, about z x b_hat)."""
    z = np.array([0.0, 0.0, 1.0])
    b = b_hat / np.linalg.norm(b_hat)
    v = np.cross(z, b)
    s = np.linalg.norm(v)
    cth = float(np.dot(z, b))
    if s < 1e-15:
        if cth > 0:
            return np.eye(3)
        return np.diag([1.0, -1.0, -1.0])  # pi about x
    k = v / s
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * kx + (1 - cth) * kx @ kx


def _rotations_to(b_vectors: np.ndarray) -> np.ndarray:
    """Vectorized ``_rotation_to`` for an (N, 3) array of field vectors."""
    b = b_vectors / np.linalg.norm(b_vectors, axis=1)[:, None]
    v = np.stack([-b[:, 1], b[:, 0], np.zeros(len(b))], axis=1)
    s = np.linalg.norm(v, axis=1)
    cth = b[:, 2]
    safe = np.where(s < 1e-15, 1.0, s)
    k = v / safe[:, None]
    kx = np.zeros((len(b), 3, 3))
    kx[:, 0, 1], kx[:, 0, 2] = -k[:, 2], k[:, 1]
    kx[:, 1, 0], kx[:, 1, 2] = k[:, 2], -k[:, 0]
    kx[:, 2, 0], kx[:, 2, 1] = -k[:, 1], k[:, 0]
    rot = np.eye(3)[None] + s[:, None, None] * kx + (1 - cth)[:, None, None] * kx @ kx
    flip = (s < 1e-15) & (cth < 0)
    rot[flip] = np.diag([1.0, -1.0, -1.0])
    rot[(s < 1e-15) & (cth > 0)] = np.eye(3)
    return rot


def local_components(polarization: str, b_hat) -> dict:
    """Spherical components {q: c_q} of a lab polarization in the frame quantized along B."""
    eps = _SPHERICAL[_POL_Q[polarization]]
    r = _rotation_to(np.asarray(b_hat, dtype=float))
    local = r.T @ eps
    return {q: complex(np.vdot(_SPHERICAL[q], local)) for q in (-1, 0, 1)}


def _two_photon(red_c: dict, blue_c: dict, target: RydbergLevel):
    """Amplitudes into mj = +1/2, -1/2 and the summed angular path strength."""
    amps = np.zeros(2, dtype=complex)
    scale = 0.0
    for i, mf in enumerate((0.5, -0.5)):
        final = target.with_mj(mf)
        total = 0.0j
        for mi in (-1.5, -0.5, 0.5, 1.5):
            inter = RydbergLevel(5, 1, INTERMEDIATE_J, mi)
            q1 = int(round(mi - GROUND.mj))
            q2 = int(round(mf - mi))
            if abs(q1) > 1 or abs(q2) > 1:
                continue
            a1 = angular_factor(GROUND, inter, q1)
            a2 = angular_factor(inter, final, q2)
            total += red_c[q1] * a1 * blue_c[q2] * a2
            scale += abs(a1 * a2)
        amps[i] = total
    return amps, scale


def zeeman_amplitudes(
    b_direction, red_polarization: str = "sigma+", blue_polarization: str = "sigma-", target: RydbergLevel = TARGET,
    normalize: bool = True,
):
    """Two-photon amplitudes (a_+, a_-) into target mj = +1/2, -1/2.

    mj refers to the local quantization axis along B, where the trapped
    ground state is the stretched mj = +1/2 state.  Beam polarizations are
    defined in the lab frame about +z and rotated into the local frame.
    The pair is normalized to unit total weight unless ``normalize`` is
    False.
    """
    b = np.asarray(b_direction, dtype=float)
    norm = np.linalg.norm(b)
    if norm == 0:
        raise DomainError("zero magnetic field: quantization axis undefined")
    red_c = local_components(red_polarization, b / norm)
    blue_c = local_components(blue_polarization, b / norm)
    amps, scale = _two_photon(red_c, blue_c, target)
    # paths can cancel exactly (identical circular polarizations on S -> S);
    # polarization vectors are unit, so ``scale`` bounds each amplitude
    amps[np.abs(amps) <= 1e-12 * scale] = 0.0
    if not normalize:
        return amps
    total = math.sqrt(float(np.sum(np.abs(amps) ** 2)))
    if total == 0:
        raise DomainError("polarizations do not couple to the target state in this field direction")
    return amps / total


def _weights_batch(b_vectors: np.ndarray, red_pol: str, blue_pol: str, target: RydbergLevel):
    """Unnormalized |a_+|^2, |a_-|^2 for an (N, 3) array of field vectors."""
    # the amplitude is bilinear in local components; build the tensor once
    tensor = np.zeros((2, 3, 3), dtype=complex)
    for i, mf in enumerate((0.5, -0.5)):
        for q1 in (-1, 0, 1):
            for q2 in (-1, 0, 1):
                mi = GROUND.mj + q1
                if abs(mi) > INTERMEDIATE_J or abs(mf - mi) > 1 or mf - mi != q2:
                    continue
                inter = RydbergLevel(5, 1, INTERMEDIATE_J, mi)
                tensor[i, q1 + 1, q2 + 1] = angular_factor(GROUND, inter, q1) * angular_factor(
                    inter, target.with_mj(mf), q2
                )
    rot = _rotations_to(b_vectors)
    basis = np.array([_SPHERICAL[q] for q in (-1, 0, 1)])  # rows: e_q
    red_l = np.einsum("qi,nji,j->nq", basis.conj(), rot, _SPHERICAL[_POL_Q[red_pol]])
    blue_l = np.einsum("qi,nji,j->nq", basis.conj(), rot, _SPHERICAL[_POL_Q[blue_pol]])
    amps = np.einsum("iab,na,nb->ni", tensor, red_l, blue_l)
    return np.abs(amps) ** 2


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True)
class ExcitationScheme:
    red: GaussianBeam
    blue: GaussianBeam
    detuning_MHz: float
    target: RydbergLevel = TARGET
    linewidth_MHz: float = 1.5  # instrument FWHM
    alpha_half: float = 0.0  # MHz/(V/cm)^2 of the target, for Stark shifts

    def __post_init__(self):
        if self.detuning_MHz == 0:
            raise DomainError("intermediate detuning must be non-zero")
        if self.linewidth_MHz <= 0:
            raise DomainError("instrument linewidth must be positive")

    def rabi_frequencies(self):
        """(Omega_red, Omega_blue, Omega_eff) on axis in kHz."""
        om_r = rabi_frequency(red_dipole(), float(beam_intensity(self.red, 0.0)))
        om_b = rabi_frequency(blue_dipole(self.target), float(beam_intensity(self.blue, 0.0)))
        return om_r, om_b, two_photon_rabi(om_r, om_b, self.detuning_MHz)


@dataclass
class Spectrum:
    detuning: np.ndarray  # MHz
    signal: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.detuning = np.asarray(self.detuning, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.detuning.shape != self.signal.shape or self.detuning.ndim != 1:
            raise DomainError("detuning and signal must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.detuning)) and np.all(np.isfinite(self.signal))):
            raise DomainError("spectrum samples must be finite")

    def window(self, window=None):
        if window is None:
            return self.detuning, self.signal
        lo, hi = window
        sel = (self.detuning >= lo) & (self.detuning <= hi)
        return self.detuning[sel], self.signal[sel]

    def area(self) -> float:
        return float(trapezoid(self.signal, self.detuning))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["detuning_MHz", "signal"])
            for d, s in zip(self.detuning, self.signal):
                w.writerow([f"{d:.10g}", f"{s:.10g}"])

    @classmethod
    def from_csv(cls, path) -> "Spectrum":
        try:
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise DomainError(f"cannot read spectrum {path}: {exc}") from None
        return cls(data[:, 0], data[:, 1], {"source": str(path)})


FieldSpec = Union[float, Callable]


def synthesize_spectrum(
    scheme: ExcitationScheme,
    trap: MT.IoffePritchardTrap,
    temperature: float,
    atom_count: int,
    electric_field: FieldSpec = 0.0,
    seed: int = 0,
    detunings: Optional[Sequence[float]] = None,
    samples: int = 100_000,
    state: MT.TrappedState = MT.RB87_F2_MF2,
    noise: float = 0.0,
) -> Spectrum:
    """Monte Carlo two-peak spectrum of a thermal cloud in the trap.

    Each sampled atom contributes Gaussian instrument profiles at
    (a) the field-insensitive mj=+1/2 line, shifted by -(alpha/2) E(r)^2,
    and (b) the mj=-1/2 line, further shifted by -2 mu_B |B(r)| / h,
    weighted by the local two-photon amplitudes and the beam intensities.
    ``electric_field`` is a uniform magnitude in V/cm or a callable on
    (N, 3) positions in mm returning field vectors in V/cm.  The result
    is deterministic for a fixed seed (counter-based Philox stream).
    """
    if atom_count < 0 or temperature < 0:
        raise DomainError("atom count and temperature must be non-negative")
    if samples < 1:
        raise DomainError("need at least one Monte Carlo sample")
    if detunings is None:
        detunings = np.linspace(-10.0, 5.0, 601)
    det = np.asarray(detunings, dtype=float)
    sr, sz = MT.thermal_cloud_sigma(trap, state, temperature)
    rng = np.random.Generator(np.random.Philox(key=seed))
    n = int(samples)
    pos_um = rng.standard_normal((n, 3)) * np.array([sr, sr, sz])
    pos_mm = pos_um * 1e-3
    b = MT.field_vector(trap, pos_mm)
    bmag = np.linalg.norm(b, axis=1)
    weights = _weights_batch(b, scheme.red.polarization, scheme.blue.polarization, scheme.target)
    rho = np.hypot(pos_um[:, 0], pos_um[:, 1])
    # excitation probability ~ Omega_eff^2 ~ I_red I_blue
    beam_w = np.exp(-2 * rho**2 * (1 / scheme.red.waist_um**2 + 1 / scheme.blue.waist_um**2))
    if callable(electric_field):
        e = np.linalg.norm(np.atleast_2d(electric_field(pos_mm)), axis=1)
    else:
        e = np.full(n, float(electric_field))
    stark = -scheme.alpha_half * e**2
    centers = np.concatenate([stark, stark - 2.0 * MU_B_MHZ_PER_G * bmag])
    w = np.concatenate([weights[:, 0] * beam_w, weights[:, 1] * beam_w])
    sigma = scheme.linewidth_MHz / FWHM_PER_SIGMA
    norm = 1.0 / (sigma * math.sqrt(2 * math.pi))
    signal = np.zeros_like(det)
    chunk = max(1, 2_000_000 // max(len(det), 1))
    for start in range(0, len(centers), chunk):
        c = centers[start : start + chunk]
        ww = w[start : start + chunk]
        signal += np.exp(-0.5 * ((det[:, None] - c[None, :]) / sigma) ** 2) @ ww
    signal *= norm * atom_count / n
    if noise > 0:
        signal = signal + noise * signal.max() * rng.standard_normal(len(det))
        signal = np.clip(signal, 0.0, None)
    meta = {
        "seed": seed,
        "atom_count": atom_count,
        "samples": n,
        "temperature_K": temperature,
        "trap": trap.to_dict(),
        "cloud_sigma_um": [sr, sz],
        "instrument_fwhm_MHz": scheme.linewidth_MHz,
        "mean_B_G": float(np.average(bmag, weights=w[n:] + 1e-300)),
        "minus_branch_fraction": float(w[n:].sum() / max(w.sum(), 1e-300)),
    }
    return Spectrum(det, signal, meta)


# ---------------------------------------------------------------------------
# fitting


def _gauss(x, a, x0, s, c):
    return a * np.exp(-0.5 * ((x - x0) / s) ** 2) + c


@dataclass(frozen=True)
class PeakFit:
    center: float  # MHz
    width: float  # FWHM, MHz
    sigma: float  # Gaussian sigma, MHz
    area: float
    baseline: float
    uncertainties: dict
    residual: float  # rms residual / peak height
    width_convention: str = "FWHM (= 2.3548 sigma)"

    def to_dict(self) -> dict:
        return {
            "center_MHz": self.center,
            "width_MHz": self.width,
            "sigma_MHz": self.sigma,
            "area": self.area,
            "baseline": self.baseline,
            "uncertainty": self.uncertainties,
            "residual": self.residual,
            "width_convention": self.width_convention,
        }


def fit_gaussian_peak(spectrum: Spectrum, window=None) -> PeakFit:
    """Least-squares Gaussian plus constant baseline inside ``window``."""
    x, y = spectrum.window(window)
    if len(x) < 5:
        raise DomainError("fewer than five samples in the fit window")
    span = float(y.max() - y.min())
    if span <= 1e-12 * max(abs(float(y.max())), 1e-300) or span == 0:
        raise DomainError("flat spectrum: no peak to fit")
    base = float(np.median(np.concatenate([y[: max(len(y) // 10, 1)], y[-max(len(y) // 10, 1) :]])))
    k = int(np.argmax(y))
    above = x[y - base > 0.5 * (y[k] - base)]
    s0 = max((above.max() - above.min()) / FWHM_PER_SIGMA, abs(x[1] - x[0]))
    p0 = [y[k] - base, x[k], s0, base]
    try:
        with warnings.catch_warnings():
            # exact (noise-free) data leave the covariance undefined; handled below
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(_gauss, x, y, p0=p0, maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        res = float(np.sqrt(np.mean((y - _gauss(x, *p0)) ** 2)))
        raise NumericalError(f"Gaussian fit did not converge: {exc}", residual=res) from None
    a, x0, s, c = popt
    s = abs(s)
    resid = float(np.sqrt(np.mean((y - _gauss(x, *popt)) ** 2)) / max(abs(a), 1e-300))
    if a <= 0 or not np.all(np.isfinite(popt)):
        raise NumericalError("fit found no positive peak", residual=resid)
    err = np.sqrt(np.abs(np.diag(pcov))) if np.all(np.isfinite(pcov)) else np.full(4, np.nan)
    unc = {"center_MHz": float(err[1]), "sigma_MHz": float(err[2]), "width_MHz": float(err[2] * FWHM_PER_SIGMA)}
    area = float(a * s * math.sqrt(2 * math.pi))
    return PeakFit(float(x0), float(s * FWHM_PER_SIGMA), float(s), area, float(c), unc, resid)


def _two_gauss(x, a1, x1, s1, a2, x2, s2, c):
    return _gauss(x, a1, x1, s1, 0.0) + _gauss(x, a2, x2, s2, 0.0) + c


def fit_two_peaks(spectrum: Spectrum, guess_left: float, guess_right: float, window=None):
    """Simultaneous fit of two Gaussians; returns (left, right) PeakFit."""
    x, y = spectrum.window(window)
    if len(x) < 8:
        raise DomainError("too few samples for a two-peak fit")
    h = float(y.max())
    p0 = [h / 3, guess_left, 1.0, h, guess_right, 0.7, float(y.min())]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(_two_gauss, x, y, p0=p0, maxfev=40000)
    except (RuntimeError, ValueError) as exc:
        raise NumericalError(f"two-peak fit did not converge: {exc}") from None
    err = np.sqrt(np.abs(np.diag(pcov))) if np.all(np.isfinite(pcov)) else np.full(7, np.nan)
    resid = float(np.sqrt(np.mean((y - _two_gauss(x, *popt)) ** 2)) / max(h, 1e-300))
    fits = []
    for i in (0, 3):
        a, x0, s = popt[i], popt[i + 1], abs(popt[i + 2])
        unc = {"center_MHz": float(err[i + 1]), "sigma_MHz": float(err[i + 2]), "width_MHz": float(err[i + 2] * FWHM_PER_SIGMA)}
        fits.append(PeakFit(float(x0), float(s * FWHM_PER_SIGMA), float(s), float(a * s * math.sqrt(2 * math.pi)), float(popt[6]), unc, resid))
    fits.sort(key=lambda f: f.center)
    return fits[0], fits[1]


def spectrum_center_of_mass(spectrum: Spectrum, window=None) -> float:
    x, y = spectrum.window(window)
    total = float(np.sum(y))
    if len(x) == 0 or total == 0:
        raise DomainError("no signal inside the window")
    return float(np.sum(x * y) / total)


# ---------------------------------------------------------------------------
# Stark-scan calibration


@dataclass
class StarkScan:
    voltages: np.ndarray
    spectra: list
    centers: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.voltages = np.asarray(self.voltages, dtype=float)
        if len(self.spectra) != len(self.voltages):
            raise DomainError("one spectrum per voltage is required")

    def fitted_centers(self, method: str = "gauss", window=None) -> np.ndarray:
        if self.centers is None:
            if method == "gauss":
                self.centers = np.array([fit_gaussian_peak(s, window).center for s in self.spectra])
            elif method == "com":
                self.centers = np.array([spectrum_center_of_mass(s, window) for s in self.spectra])
            else:
                raise DomainError("method must be 'gauss' or 'com'")
        return self.centers

    def to_json_index(self, names: Sequence[str]) -> str:
        return json.dumps(
            {"voltages_V": self.voltages.tolist(), "spectra": list(names), "metadata": self.metadata}, indent=2
        )


@dataclass(frozen=True)
class StarkScanResult:
    vertex_V: float
    offset_field: float  # V/cm at 0 V
    field_per_volt: float  # k, (V/cm)/V
    volts_per_field: float  # V per (V/cm)
    shift_at_zero_MHz: float
    residual: float  # rms / span of centers
    uncertainties: dict

    def to_dict(self) -> dict:
        return {
            "vertex_V": self.vertex_V,
            "offset_field_V_per_cm": self.offset_field,
            "field_per_volt_V_per_cm_per_V": self.field_per_volt,
            "volts_per_V_per_cm": self.volts_per_field,
            "shift_at_zero_MHz": self.shift_at_zero_MHz,
            "residual": self.residual,
            "uncertainty": self.uncertainties,
        }


def stark_scan_analysis(scan: StarkScan, alpha_half: float, method: str = "gauss", window=None) -> StarkScanResult:
    """Parabola center(V) = -(alpha/2) (k (V - V0))^2 + c through the line centers."""
    if alpha_half <= 0:
        raise DomainError("alpha_half must be positive")
    if len(scan.voltages) < 5:
        raise DomainError("at least five voltages are needed")
    centers = scan.fitted_centers(method, window)
    v = scan.voltages
    coef, cov = np.polyfit(v, centers, 2, cov=True)
    a, b, c = coef
    fit = np.polyval(coef, v)
    span = float(np.ptp(centers))
    resid = float(np.sqrt(np.mean((centers - fit) ** 2)) / max(span, 1e-300))
    if resid > 0.1 or a >= 0:
        raise NumericalError("Stark scan is not a downward parabola", residual=resid, curvature=float(a))
    k = math.sqrt(-a / alpha_half)
    v0 = -b / (2 * a)
    # first-order error propagation
    sa, sb = math.sqrt(abs(cov[0, 0])), math.sqrt(abs(cov[1, 1]))
    unc = {
        "vertex_V": float(math.hypot(sb / (2 * a), b * sa / (2 * a * a))),
        "field_per_volt": float(0.5 * k * sa / abs(a)),
    }
    return StarkScanResult(
        float(v0),
        float(abs(k * v0)),
        float(k),
        float(1.0 / k),
        float(b * b / (4 * a)),  # center(0) - center(V0)
        resid,
        unc,
    )


def synthesize_stark_scan(
    voltages: Sequence[float],
    field_per_volt: float,
    offset_field,
    alpha_half: float,
    linewidth_MHz: float = 1.5,
    detunings: Optional[Sequence[float]] = None,
    noise: float = 0.0,
    seed: int = 0,
) -> StarkScan:
    """Scan of Gaussian lines at -(alpha/2)|k V x + E_off|^2 for each voltage.

    ``offset_field`` is a scalar (along x) or a 3-vector in V/cm, e.g. the
    cage field plus a stray field.
    """
    off = np.atleast_1d(np.asarray(offset_field, dtype=float))
    if off.size == 1:
        off = np.array([off[0], 0.0, 0.0])
    if detunings is None:
        detunings = np.linspace(-40.0, 10.0, 1001)
    det = np.asarray(detunings, dtype=float)
    rng = np.random.Generator(np.random.Philox(key=seed))
    sigma = linewidth_MHz / FWHM_PER_SIGMA
    spectra, centers = [], []
    for v in voltages:
        e = off + np.array([field_per_volt * v, 0.0, 0.0])
        c = -alpha_half * float(e @ e)
        sig = np.exp(-0.5 * ((det - c) / sigma) ** 2)
        if noise > 0:
            sig = sig + noise * rng.standard_normal(len(det))
        spectra.append(Spectrum(det, sig, {"voltage_V": float(v)}))
        centers.append(c)
    meta = {
        "field_per_volt": field_per_volt,
        "offset_field": off.tolist(),
        "alpha_half": alpha_half,
        "true_centers_MHz": centers,
    }
    return StarkScan(np.asarray(voltages, dtype=float), spectra, None, meta)


def stark_inhomogeneity(alpha_half: float, fields, weights=None) -> dict:
    """Spread of quadratic Stark shifts over field vectors sampled across a cloud.

    ``fields`` is (N, 3) in V/cm, ``weights`` the atom density at each
    sample.  Returns the weighted mean shift, its rms spread and the ratio,
    which is the relative broadening the field gradient adds to a line.
    """
    f = np.atleast_2d(np.asarray(fields, dtype=float))
    if f.shape[-1] != 3 or not np.all(np.isfinite(f)):
        raise DomainError("fields must be finite (N, 3) vectors")
    w = np.ones(len(f)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(f),) or np.any(w < 0) or w.sum() <= 0:
        raise DomainError("weights must be non-negative with a positive sum")
    shifts = -alpha_half * np.einsum("ij,ij->i", f, f)
    mean = float(np.average(shifts, weights=w))
    rms = float(np.sqrt(np.average((shifts - mean) ** 2, weights=w)))
    return {"mean_shift_MHz": mean, "rms_spread_MHz": rms, "relative": rms / abs(mean) if mean else math.inf}
