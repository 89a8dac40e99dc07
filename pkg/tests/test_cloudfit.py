import json
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import curve_fit

from rydbec import cloudfit as CF
from rydbec import constants as C
from rydbec.errors import DomainError, NumericalError

TOF = 21.0


def _gaussian_image(temperature, tof_ms=TOF, amplitude=1.0, pitch=6.0, shape=(160, 160)):
    s = math.sqrt(C.k_B * temperature / C.M_RB87) * tof_ms * 1e-3 * 1e6
    ny, nx = shape
    x = (np.arange(nx) - (nx - 1) / 2) * pitch
    y = (np.arange(ny) - (ny - 1) / 2) * pitch
    xx, yy = np.meshgrid(x, y)
    od = CF._gauss2d([amplitude, 3.0, -2.0, s, s, 0.0], xx, yy)
    return CF.AbsorptionImage(od, pitch, tof_ms), s


# polylog


def test_g2_endpoints():
    assert CF.polylog_g2(1.0) == pytest.approx(math.pi**2 / 6, abs=1e-12)
    assert CF.polylog_g2(0.0) == 0.0


def test_g2_half_against_direct_sum():
    k = np.arange(1, 1_000_001, dtype=float)
    direct = float(np.sum(0.5**k / k**2))
    assert CF.polylog_g2(0.5) == pytest.approx(direct, abs=1e-10)
    assert CF.polylog_g2(0.5) == pytest.approx(0.5822405265, abs=1e-10)


def test_g2_dominates_argument():
    x = np.linspace(0, 1, 1001)
    assert np.all(CF.polylog_g2(x) >= x)


def test_g2_domain():
    with pytest.raises(DomainError):
        CF.polylog_g2(1.5)
    with pytest.raises(DomainError):
        CF.polylog_g2(-0.1)


def test_bose_profile_sharper_than_gaussian():
    # with matched far wings (g2(z) -> z), the Bose peak exceeds the Gaussian peak by g2(1)
    far = 6.0
    bose = CF._bose2d(np.array([1.0, 0, 0, 1.0, 1.0, 0.0]), np.array([0.0, far]), np.array([0.0, 0.0]))
    gauss_peak = bose[1] / math.exp(-0.5 * far**2)
    assert bose[0] / gauss_peak == pytest.approx(CF.G2_ONE, rel=1e-6)
    assert bose[0] / gauss_peak > 1


# image container


def test_image_validation():
    with pytest.raises(DomainError):
        CF.AbsorptionImage(np.zeros((4, 4)), 6.0, TOF)
    with pytest.raises(DomainError):
        CF.AbsorptionImage(np.full((10, 10), np.nan), 6.0, TOF)
    with pytest.raises(DomainError):
        CF.AbsorptionImage(np.zeros((10, 10)), 0.0, TOF)


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_image_io_roundtrip(tmp_path, suffix):
    img = CF.synthesize_image(300e-9, 2e5, 1e5, noise=0.01, seed=5, shape=(40, 50))
    path = tmp_path / f"img{suffix}"
    img.save(path)
    back = CF.AbsorptionImage.load(path)
    assert back.od.shape == img.od.shape
    assert np.allclose(back.od, img.od, rtol=1e-9, atol=1e-12)
    assert back.pitch_um == img.pitch_um and back.tof_ms == img.tof_ms


def test_image_missing_or_bad_sidecar(tmp_path):
    img = CF.synthesize_image(300e-9, 2e5, 0, shape=(20, 20))
    path = tmp_path / "a.csv"
    img.save(path)
    side = tmp_path / "a.csv.json"
    side.write_text("{broken")
    with pytest.raises(DomainError):
        CF.AbsorptionImage.load(path)
    side.unlink()
    with pytest.raises(DomainError):
        CF.AbsorptionImage.load(path)


def test_synthesis_deterministic():
    a = CF.synthesize_image(300e-9, 2e5, 1e5, noise=0.02, seed=9)
    b = CF.synthesize_image(300e-9, 2e5, 1e5, noise=0.02, seed=9)
    c = CF.synthesize_image(300e-9, 2e5, 1e5, noise=0.02, seed=10)
    assert np.array_equal(a.od, b.od)
    assert not np.array_equal(a.od, c.od)


# wing fit


def test_wing_fit_temperature_400nK():
    img, s = _gaussian_image(400e-9)
    assert s == pytest.approx(130, rel=0.02)
    w = CF.gaussian_wing_fit(img)
    assert w.sigma[0] == pytest.approx(s, rel=1e-4)
    assert w.temperature == pytest.approx(400e-9, rel=0.03)


def test_wing_fit_zero_exclusion_equals_full_fit():
    img, s = _gaussian_image(400e-9)
    x, y = img.coordinates()
    w = CF.gaussian_wing_fit(img, exclusion=0.0)
    popt, _ = curve_fit(
        lambda xy, *p: CF._gauss2d(p, xy[0], xy[1]), (x.ravel(), y.ravel()), img.od.ravel(), p0=[0.8, 0, 0, 100, 100, 0]
    )
    assert w.sigma == pytest.approx((popt[3], popt[4]), rel=1e-6)
    assert w.center == pytest.approx((popt[1], popt[2]), abs=1e-6)


def test_doubling_tof_doubles_sigma():
    a, _ = _gaussian_image(300e-9, TOF, pitch=6.0)
    b, _ = _gaussian_image(300e-9, 2 * TOF, pitch=12.0)
    wa, wb = CF.gaussian_wing_fit(a), CF.gaussian_wing_fit(b)
    assert wb.sigma[0] / wa.sigma[0] == pytest.approx(2.0, rel=1e-4)
    assert wb.temperature == pytest.approx(wa.temperature, rel=1e-3)


def test_wing_fit_errors():
    img, _ = _gaussian_image(400e-9)
    with pytest.raises(DomainError):
        CF.gaussian_wing_fit(img, exclusion=-1)
    with pytest.raises(NumericalError):
        CF.gaussian_wing_fit(img, exclusion=50.0)


# Bose fit


def test_bose_fit_recovers_synthesis():
    T, n = 400e-9, 3e5
    img = CF.synthesize_image(T, n, 0.0)
    fit = CF.bose_enhanced_fit(img)
    v2 = C.k_B * T / C.M_RB87
    t = TOF * 1e-3
    sx = math.sqrt(v2 * (1 / (2 * math.pi * 250) ** 2 + t * t)) * 1e6
    sy = math.sqrt(v2 * (1 / (2 * math.pi * 18) ** 2 + t * t)) * 1e6
    assert fit.atom_number == pytest.approx(n, rel=0.02)
    assert fit.sigma == pytest.approx((sx, sy), rel=0.02)
    assert fit.model_flag == "bose"


def test_bose_fit_flags_gaussian_input():
    img, _ = _gaussian_image(400e-9)
    fit = CF.bose_enhanced_fit(img)
    assert fit.model_flag == "gaussian-like"
    assert fit.residual > fit.gaussian_residual


# Thomas-Fermi fit


def test_pure_condensate():
    n = 3e5
    img = CF.synthesize_image(0.0, 0.0, n)
    res = CF.analyze_bimodal(img, trap_Hz=(250, 18))
    props = CF.bec_properties(n, (250, 250, 18))
    lr, lz = CF.castin_dum_scaling(2 * math.pi * 250, 2 * math.pi * 18, TOF * 1e-3)
    truth = (props.radii_um[0] * lr, props.radii_um[2] * lz)
    assert res.tf_radii_image_um == pytest.approx(truth, rel=0.02)
    assert res.condensate_fraction > 0.97


def test_zero_residual_gives_no_condensate():
    img = CF.synthesize_image(300e-9, 2e5, 0.0)
    tf = CF.thomas_fermi_fit(np.zeros_like(img.od), img, (0.0, 0.0))
    assert tf.atom_number == 0.0
    neg = CF.thomas_fermi_fit(-np.abs(img.od), img, (0.0, 0.0))
    assert neg.atom_number == 0.0


# pipeline


def test_pure_thermal_noise_free_fraction_zero():
    res = CF.analyze_bimodal(CF.synthesize_image(*CF.ideal_gas_scenario(0.0)))
    assert res.condensate_fraction == pytest.approx(0.0, abs=0.03)
    assert res.temperature_nK == pytest.approx(400, rel=0.03)


@pytest.fixture(scope="module")
def sweep():
    fracs = np.linspace(0.0, 0.9, 10)
    out = []
    for f in fracs:
        img = CF.synthesize_image(*CF.ideal_gas_scenario(f))
        out.append((f, img, CF.analyze_bimodal(img, trap_Hz=(250, 18))))
    return out


def test_fraction_monotone_in_truth(sweep):
    got = [r.condensate_fraction for _, _, r in sweep]
    assert np.all(np.diff(got) > 0)


def test_fraction_sweep_within_005(sweep):
    for f, _, r in sweep:
        assert r.condensate_fraction == pytest.approx(f, abs=0.05)
        assert 0 <= r.condensate_fraction <= 1


def test_atom_number_additivity(sweep):
    for _, img, r in sweep:
        assert r.total_number == pytest.approx(img.atom_number(), rel=0.03)


def test_back_scaling_consistent(sweep):
    for _, _, r in sweep:
        if r.tf_radii_trap_um is None:
            continue
        lr, lz = r.expansion_factors
        assert r.tf_radii_trap_um[0] * lr == pytest.approx(r.tf_radii_image_um[0], rel=1e-12)
        assert r.tf_radii_trap_um[1] * lz == pytest.approx(r.tf_radii_image_um[1], rel=1e-12)


def test_result_json_serializable(sweep):
    d = sweep[5][2].to_dict()
    json.dumps(d)
    assert d["total_number"] == pytest.approx(d["thermal_number"] + d["condensate_number"])


def test_saturation_correction_scales_numbers():
    img = CF.synthesize_image(*CF.ideal_gas_scenario(0.5))
    a = CF.analyze_bimodal(img)
    b = CF.analyze_bimodal(img, saturation_correction=2.0)
    assert b.total_number == pytest.approx(2 * a.total_number, rel=1e-9)
    assert b.condensate_fraction == pytest.approx(a.condensate_fraction, rel=1e-9)


# condensate physics


def test_castin_dum_against_ode():
    wr, wz = 2 * math.pi * 250, 2 * math.pi * 18
    t = TOF * 1e-3

    def rhs(_, y):
        lr, dlr, lz, dlz = y
        return [dlr, wr**2 / (lr**3 * lz), dlz, wz**2 / (lr**2 * lz**2)]

    sol = solve_ivp(rhs, (0, t), [1, 0, 1, 0], rtol=1e-10, atol=1e-12)
    lr, lz = CF.castin_dum_scaling(wr, wz, t)
    assert lr == pytest.approx(sol.y[0, -1], rel=0.01)
    assert lz == pytest.approx(sol.y[2, -1], rel=0.01)


def test_bec_properties_relations():
    p = CF.bec_properties(3e5, (250, 250, 18))
    mu = p.chemical_potential_kHz * 1e3 * C.h
    for r, f in zip(p.radii_um, (250, 250, 18)):
        assert r * 1e-6 == pytest.approx(math.sqrt(2 * mu / (C.M_RB87 * (2 * math.pi * f) ** 2)), rel=1e-12)
    # mu = 4 pi hbar^2 a n0 / m
    n0 = p.peak_density_cm3 * 1e6
    assert mu == pytest.approx(4 * math.pi * C.hbar**2 * CF.SCATTERING_LENGTH * n0 / C.M_RB87, rel=1e-12)
    # N scales as mu^(5/2)
    q = CF.bec_properties(3e5 * 2**2.5, (250, 250, 18))
    assert q.chemical_potential_kHz == pytest.approx(2 * p.chemical_potential_kHz, rel=1e-12)
    with pytest.raises(DomainError):
        CF.bec_properties(0, (250, 250, 18))
    with pytest.raises(DomainError):
        CF.bec_properties(1e5, (250, 18))


def test_tf_profile_integrates_to_atom_number():
    n = 2e5
    img = CF.synthesize_image(0.0, 0.0, n, pitch_um=1.0, shape=(400, 400))
    assert img.atom_number() == pytest.approx(n, rel=0.01)
