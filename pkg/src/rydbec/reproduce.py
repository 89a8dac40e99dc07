"""Regression suite of the headline apparatus numbers.

Each ``criterion_*`` function returns a ``Check`` carrying the measured
values, the targets and a pass flag.  The tolerances are fixed here and
are not meant to be tuned.  Run them all with ``run_all``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cloudfit as CF
from . import constants as C
from . import efield as EF
from . import iontransport as IT
from . import magtrap as MT
from . import rydstruct as RS
from . import spectra as SP
from . import starkmap as SM

TARGET_43S = RS.RydbergLevel(43, 0, 0.5, 0.5)
ALPHA_HALF_REFERENCE = 8.06  # MHz/(V/cm)^2, measured value used for downstream scenarios


@dataclass
class Check:
    number: int
    title: str
    passed: bool
    values: dict = field(default_factory=dict)
    notes: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.values.items())
        return f"[{status}] {self.number:2d} {self.title}: {shown}"


def _fmt(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _within(value, target, rel):
    return abs(value - target) <= rel * abs(target)


# ---------------------------------------------------------------------------
# shared scenarios


def cloverleaf_trap(current_A: float = 400.0, B0: float = 1.5) -> MT.IoffePritchardTrap:
    return MT.IoffePritchardTrap.from_current(current_A, B0)


def excitation_trap() -> MT.IoffePritchardTrap:
    """Trap of the two-peak spectrum: 1 G offset, 310 Hz radial, 18 Hz axial."""
    return MT.IoffePritchardTrap.from_frequencies(1.0, 310.0, 18.0)


def excitation_scheme(alpha_half: float = ALPHA_HALF_REFERENCE) -> SP.ExcitationScheme:
    red = SP.GaussianBeam(780.24, 50e-6, 550.0, "sigma+")
    blue = SP.GaussianBeam(480.0, 55e-3, 35.0, "sigma-")
    return SP.ExcitationScheme(red, blue, 480.0, linewidth_MHz=1.5, alpha_half=alpha_half)


def two_peak_spectrum(seed: int = 1, samples: int = 100_000) -> SP.Spectrum:
    det = np.linspace(-45.0, -25.0, 401)
    return SP.synthesize_spectrum(
        excitation_scheme(), excitation_trap(), 15e-6, 100_000, 2.0, seed=seed, detunings=det, samples=samples
    )


# ---------------------------------------------------------------------------
# criteria


def criterion_1() -> Check:
    fr, fz = MT.trap_frequencies(cloverleaf_trap())
    ok = _within(fr, 250.0, 0.10) and _within(fz, 18.0, 0.10)
    return Check(1, "trap frequencies", ok, {"radial_Hz": fr, "axial_Hz": fz})


def criterion_2() -> Check:
    p = CF.bec_properties(3e5, (250.0, 250.0, 18.0))
    vals = {
        "mu_kHz": p.chemical_potential_kHz,
        "R_rho_um": p.radii_um[0],
        "R_z_um": p.radii_um[2],
        "n0_cm3": p.peak_density_cm3,
    }
    ok = (
        _within(p.chemical_potential_kHz, 3.0, 0.15)
        and _within(p.radii_um[0], 3.3, 0.15)
        and _within(p.radii_um[2], 46.0, 0.15)
        and _within(p.peak_density_cm3, 3.5e14, 0.15)
    )
    return Check(2, "BEC properties", ok, vals)


def criterion_3() -> Check:
    basis = SM.build_basis(43)
    pol = SM.polarizability(basis, TARGET_43S)
    shift = SM.stark_shift(ALPHA_HALF_REFERENCE, 0.27)
    ok_alpha = _within(pol.alpha_half, 8.06, 0.05)
    ok_shift = _within(abs(shift), 0.58, 0.05)
    return Check(
        3,
        "polarizability",
        ok_alpha and ok_shift,
        {"alpha_half": pol.alpha_half, "alpha_ok": ok_alpha, "shift_0.27": shift, "shift_ok": ok_shift},
    )


def criterion_4() -> Check:
    cold = RS.radiative_lifetime(TARGET_43S, 0.0)
    warm = RS.radiative_lifetime(TARGET_43S, 300.0)
    ratio = cold.lifetime / warm.lifetime
    ok_cold = _within(cold.lifetime * 1e6, 99.0, 0.10)
    ok_ratio = abs(ratio - 2.0) <= 0.4
    return Check(
        4,
        "lifetime",
        ok_cold and ok_ratio,
        {"tau0_us": cold.lifetime * 1e6, "tau0_ok": ok_cold, "ratio_0K_300K": ratio, "ratio_ok": ok_ratio},
    )


def criterion_5() -> Check:
    f = RS.classical_ionization_field(TARGET_43S)
    return Check(5, "ionization threshold", 110.0 <= f <= 170.0 and f < 200.0, {"field_V_per_cm": f})


def criterion_6() -> Check:
    cov = SP.rabi_coverage(8.6, 550.0, 35.0, 0.8)
    return Check(6, "Rabi coverage", abs(cov - 0.85) <= 0.02, {"coverage": cov})


def criterion_7() -> Check:
    om_r, om_b, om_eff = excitation_scheme().rabi_frequencies()
    scat = SP.scattering_rate(om_r, 480.0)
    ok = _within(om_eff, 250.0, 0.5) and scat < 1.0
    return Check(7, "effective Rabi / scattering", ok, {"omega_eff_kHz": om_eff, "scattering_kHz": scat})


def criterion_8() -> Check:
    theory = EF.theory_calibration()
    measured = EF.measured_calibration()
    v_th = theory.volts_for_field(1.0)
    v_me = measured.volts_for_field(1.0)
    # forward check of the calibrated charges at 7.2 V
    e72 = np.linalg.norm(EF.taylor_coefficients(EF.DEFAULT_GEOMETRY, theory.charges("constant_BH", 7.2), 0).field)
    # solve -> forward round trip on a reachable target
    rng = np.random.Generator(np.random.Philox(key=8))
    truth = EF.ChargeSet(tuple(rng.normal(size=8)))
    fwd = EF.taylor_coefficients(EF.DEFAULT_GEOMETRY, truth, 1)
    keys = ["x", "y", "z", "xx", "yy", "xy", "xz", "yz"]
    target = EF.FieldTarget({k: fwd.component(k) for k in keys})
    sol = EF.solve_charges(EF.DEFAULT_GEOMETRY, target)
    back = EF.taylor_coefficients(EF.DEFAULT_GEOMETRY, sol.charges, 1)
    resid = max(abs(back.component(k) - target.components[k]) for k in keys)
    ok = abs(v_th - 7.2) <= 0.1 and abs(v_me - 5.0) <= 0.1 and resid < 1e-8
    return Check(
        8,
        "field calibration chain",
        ok,
        {"V_theory": v_th, "E_at_7.2V": float(e72), "V_measured": v_me, "roundtrip_residual": resid},
    )


def criterion_9() -> Check:
    volts = np.linspace(-6.0, 4.0, 11)
    alpha = ALPHA_HALF_REFERENCE
    # synthetic scan: measured calibration plus the cage offset model
    cage = EF.cage_field_model(EF.CAGE_REFERENCE_VOLTAGE)
    cage_e = EF.taylor_coefficients(EF.DEFAULT_GEOMETRY, cage, 0).field
    scan = SP.synthesize_stark_scan(volts, EF.MEASURED_FIELD_PER_VOLT, cage_e, alpha)
    res = SP.stark_scan_analysis(scan, alpha)
    v0_true = -float(cage_e[0]) / EF.MEASURED_FIELD_PER_VOLT
    ok_syn = _within(res.vertex_V, v0_true, 0.005) and _within(res.field_per_volt, EF.MEASURED_FIELD_PER_VOLT, 0.005)
    # paper chain: the 0.58 MHz shift at 0 V fixes the total offset field
    offset = math.sqrt(0.58 / alpha)
    stray = offset - float(cage_e[0])
    scan2 = SP.synthesize_stark_scan(volts, EF.MEASURED_FIELD_PER_VOLT, cage_e + np.array([stray, 0, 0]), alpha)
    res2 = SP.stark_scan_analysis(scan2, alpha)
    ok_chain = _within(abs(res2.vertex_V), 1.34, 0.10) and _within(res2.offset_field, 0.27, 0.10)
    return Check(
        9,
        "Stark-scan analysis",
        ok_syn and ok_chain,
        {
            "synthetic_V0": res.vertex_V,
            "synthetic_k": res.field_per_volt,
            "chain_V0_abs": abs(res2.vertex_V),
            "chain_offset": res2.offset_field,
            "chain_V_per_field": res2.volts_per_field,
        },
    )


def _parabola_error() -> float:
    E = 10.0  # V/cm along x
    src = IT.FieldSources.uniform(E=(E, 0, 0))
    p = IT.ChargedParticle((0.0, 0.0, 0.0), (0.0, 50.0, 0.0))
    t_max = 2e-6
    tr = IT.integrate(p, src, dt=1e-9, t_max=t_max, aperture=None)
    a = p.charge * C.e / p.mass * E * 100.0
    t = tr.times[-1]
    exact = np.array([0.5 * a * t * t, 50.0 * t, 0.0]) * 1e3
    return float(np.linalg.norm(tr.final_position - exact) / np.linalg.norm(exact))


def _larmor_error() -> float:
    B = 1000.0  # G along z
    v = 100.0
    src = IT.FieldSources.uniform(B=(0, 0, B))
    p = IT.ChargedParticle((0.0, 0.0, 0.0), (v, 0.0, 0.0))
    wc = p.charge * C.e * B * 1e-4 / p.mass
    period = 2 * math.pi / wc
    n = 2000
    tr = IT.integrate(p, src, dt=period / n, t_max=period * (1 - 0.5 / n), aperture=None)
    r = v / wc * 1e3  # mm
    return float(np.max(np.linalg.norm(tr.positions - _larmor_path(tr.times, r, wc), axis=1)) / r)


def _larmor_path(times, r, wc):
    return np.stack([r * np.sin(wc * times), -r * (1 - np.cos(wc * times)), np.zeros_like(times)], axis=1)


def criterion_10() -> Check:
    src = IT.ionization_sources(trap=excitation_trap())
    tr = IT.integrate(IT.ChargedParticle((0, 0, 0), (0, 0, 0)), src, 1e-9)
    drift = IT.transverse_drift(tr)
    t_us = tr.flight_time * 1e6
    ok_time = tr.reason == "mcp" and 0.5 <= t_us <= 10.0
    ok_drift = drift.hit and drift.offset_mm < 4.25 and 0.2 <= drift.offset_mm <= 3.0
    para = _parabola_error()
    larmor = _larmor_error()
    ok_oracles = para < 1e-6 and larmor < 1e-6
    return Check(
        10,
        "ion transport",
        ok_time and ok_drift and ok_oracles,
        {
            "flight_us": t_us,
            "time_ok": ok_time,
            "drift_mm": drift.offset_mm,
            "drift_ok": ok_drift,
            "parabola_err": para,
            "larmor_err": larmor,
        },
    )


def criterion_11() -> Check:
    sp = two_peak_spectrum()
    left, right = SP.fit_two_peaks(sp, -35.0, -32.0)
    displacement = right.center - left.center
    expected = 2 * SP.MU_B_MHZ_PER_G * 1.0
    ok_right = abs(right.width - 1.5) <= 0.3
    ok_disp = _within(displacement, expected, 0.15)
    ok_width = _within(left.width, 3.0, 0.30)
    return Check(
        11,
        "spectrum synthesis",
        ok_right and ok_disp and ok_width,
        {
            "right_fwhm": right.width,
            "right_ok": ok_right,
            "displacement": displacement,
            "expected": expected,
            "disp_ok": ok_disp,
            "left_fwhm": left.width,
            "left_ok": ok_width,
        },
    )


def cloud_sweep(fractions=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.65, 0.7, 0.8, 0.9), noise=0.01, seed=12):
    rows = []
    for i, f in enumerate(fractions):
        T, nt, nb = CF.ideal_gas_scenario(f)
        img = CF.synthesize_image(T, nt, nb, noise=noise, seed=seed + i)
        res = CF.analyze_bimodal(img, (250.0, 18.0))
        rows.append((f, res.condensate_fraction))
    return rows


def criterion_12() -> Check:
    rows = cloud_sweep()
    worst = max(abs(a - b) for a, b in rows)
    f65 = dict(rows)[0.65]
    f0 = dict(rows)[0.0]
    ok = worst <= 0.05 and abs(f65 - 0.65) <= 0.05 and abs(f0) <= 0.03
    return Check(12, "cloud-fit pipeline", ok, {"max_error": worst, "fraction_at_65": f65, "fraction_at_Tc": f0})


def criterion_13() -> Check:
    rng = np.random.Generator(np.random.Philox(key=13))
    # div B of the trap expansion
    trap = cloverleaf_trap()
    # relative to the field scale B' + B'' over 1 cm
    div = max(abs(MT.divergence(trap, p)) for p in rng.uniform(-5, 5, (20, 3))) / (trap.Bp + trap.Bpp)
    ok_div = div < 1e-9
    # Hamiltonian symmetry
    basis = SM.build_basis(30, 3)
    h = SM.stark_hamiltonian(basis, 1.0, RS.RydbergLevel(30, 0, 0.5, 0.5))
    ok_sym = bool(np.array_equal(h, h.T))
    # superposition linearity of the plate model
    a = EF.ChargeSet(tuple(rng.normal(size=8)))
    b = EF.ChargeSet(tuple(rng.normal(size=8)))
    pts = rng.uniform(-5, 5, (10, 3))
    lin = float(
        np.max(np.abs(EF.field_at(EF.DEFAULT_GEOMETRY, a + b, pts) - EF.field_at(EF.DEFAULT_GEOMETRY, a, pts) - EF.field_at(EF.DEFAULT_GEOMETRY, b, pts)))
    )
    ok_lin = lin < 1e-10
    # polylog identities: endpoints, g2(x) >= x, reflection
    x = np.linspace(0.0, 1.0, 201)
    g = CF.polylog_g2(x)
    inner = x[1:-1]
    refl = CF.polylog_g2(inner) + CF.polylog_g2(1 - inner) - (math.pi**2 / 6 - np.log(inner) * np.log(1 - inner))
    ok_poly = abs(CF.polylog_g2(1.0) - math.pi**2 / 6) < 1e-12 and bool(np.all(g >= x - 1e-15)) and float(np.max(np.abs(refl))) < 1e-10
    # determinism under seed
    im1 = CF.synthesize_image(300e-9, 2e5, 1e5, noise=0.01, seed=5, shape=(40, 40))
    im2 = CF.synthesize_image(300e-9, 2e5, 1e5, noise=0.01, seed=5, shape=(40, 40))
    det = np.linspace(-5, 2, 50)
    s1 = SP.synthesize_spectrum(excitation_scheme(), excitation_trap(), 15e-6, 1000, 0.0, seed=9, detunings=det, samples=2000)
    s2 = SP.synthesize_spectrum(excitation_scheme(), excitation_trap(), 15e-6, 1000, 0.0, seed=9, detunings=det, samples=2000)
    ok_det = im1.od.tobytes() == im2.od.tobytes() and s1.signal.tobytes() == s2.signal.tobytes()
    ok = ok_div and ok_sym and ok_lin and ok_poly and ok_det
    return Check(
        13,
        "property suites",
        ok,
        {"max_divB": div, "symmetric": ok_sym, "superposition": lin, "polylog": ok_poly, "deterministic": ok_det},
    )


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
    12: criterion_12,
    13: criterion_13,
}


def run_all(numbers=None):
    out = []
    for k in numbers or sorted(CRITERIA):
        out.append(CRITERIA[k]())
    return out


def table(checks) -> str:
    lines = [c.line() for c in checks]
    passed = sum(c.passed for c in checks)
    lines.append(f"{passed}/{len(checks)} criteria passed")
    return "\n".join(lines)
