import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rydbec import magtrap as MT
from rydbec import spectra as S
from rydbec.errors import DomainError, NumericalError

SWAP = {"sigma+": "sigma-", "sigma-": "sigma+", "pi": "pi"}
POLS = st.sampled_from(["sigma+", "sigma-", "pi"])


def scheme(linewidth=1.5):
    red = S.GaussianBeam(780.24, 50e-6, 550.0, "sigma+")
    blue = S.GaussianBeam(480.0, 55e-3, 35.0, "sigma-")
    return S.ExcitationScheme(red, blue, 480.0, linewidth_MHz=linewidth)


def test_beam_validation():
    with pytest.raises(DomainError):
        S.GaussianBeam(480, -1.0, 35.0)
    with pytest.raises(DomainError):
        S.GaussianBeam(480, 1.0, 0.0)
    with pytest.raises(DomainError):
        S.GaussianBeam(480, 1.0, 35.0, "circular")


def test_beam_intensity():
    b = S.GaussianBeam(480.0, 55e-3, 35.0)
    assert S.beam_intensity(b, 0.0) == pytest.approx(2.86e7, rel=0.005)
    assert S.beam_intensity(b, 35.0) / S.beam_intensity(b, 0.0) == pytest.approx(math.exp(-2))
    assert S.beam_intensity(S.GaussianBeam(480.0, 0.0, 35.0), 0.0) == 0.0


def test_red_rabi_at_saturation_intensity():
    # stretched D2 transition: Omega = Gamma / sqrt(2) at I_sat = 1.669 mW/cm^2
    om = S.rabi_frequency(S.red_dipole(), 16.69)
    assert om == pytest.approx(6.065e3 / math.sqrt(2), rel=0.01)


def test_rabi_scales_as_sqrt_intensity():
    d = S.red_dipole()
    assert S.rabi_frequency(d, 4.0) / S.rabi_frequency(d, 1.0) == pytest.approx(2.0)


def test_two_photon_rabi():
    assert S.two_photon_rabi(1000.0, 0.0, 480.0) == 0.0
    assert S.two_photon_rabi(0.0, 1000.0, 480.0) == 0.0
    a = S.two_photon_rabi(2000.0, 3000.0, 480.0)
    assert a == pytest.approx(2000 * 3000 / (2 * 480e3))
    assert S.two_photon_rabi(2000.0, 3000.0, 960.0) == pytest.approx(a / 2)
    with pytest.raises(DomainError):
        S.two_photon_rabi(1.0, 1.0, 0.0)


def test_scattering_rate():
    assert S.scattering_rate(0.0, 480.0) == 0.0
    r1 = S.scattering_rate(5000.0, 480.0)
    assert S.scattering_rate(5000.0, 960.0) == pytest.approx(r1 / 4)
    assert r1 == pytest.approx(S.C.get("d2_linewidth_MHz") * 1e3 * 5.0**2 / (4 * 480.0**2))
    with pytest.raises(DomainError):
        S.scattering_rate(1.0, 0.0)


def test_coverage_limits():
    assert S.rabi_coverage(8.6, 550, 35, 0.0) == 1.0
    assert S.rabi_coverage(8.6, 550, 35, 1.0) == 0.0
    with pytest.raises(DomainError):
        S.rabi_coverage(8.6, 550, 35, 1.5)


def test_coverage_monte_carlo_oracle():
    rng = np.random.default_rng(2)
    xy = rng.normal(0, 8.6, (400_000, 2))
    rho2 = np.sum(xy**2, axis=1)
    ratio = np.exp(-rho2 * (1 / 550**2 + 1 / 35**2))
    mc = np.mean(ratio >= 0.8)
    assert S.rabi_coverage(8.6, 550, 35, 0.8) == pytest.approx(mc, abs=0.003)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.98), st.floats(0.001, 0.01), st.floats(1, 50), st.floats(5, 100))
def test_coverage_monotone(t, dt, sigma, w):
    assert S.rabi_coverage(sigma, 550, w, t + dt) <= S.rabi_coverage(sigma, 550, w, t)
    assert S.rabi_coverage(sigma, 550, w * 1.1, t) >= S.rabi_coverage(sigma, 550, w, t)


def test_zeeman_parallel_selection_rule():
    a = S.zeeman_amplitudes([0, 0, 1.0], "sigma+", "sigma-")
    assert abs(a[0]) == pytest.approx(1.0) and abs(a[1]) == 0.0


def test_zeeman_zero_field():
    with pytest.raises(DomainError):
        S.zeeman_amplitudes([0, 0, 0])


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 1), st.sampled_from(["sigma+", "sigma-"]))
def test_identical_circular_polarizations_never_couple(x, y, z, pol):
    # S -> S two-photon coupling needs e1.e2 != 0 or e1 x e2 != 0
    with pytest.raises(DomainError):
        S.zeeman_amplitudes([x, y, z], pol, pol)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), POLS, POLS)
def test_zeeman_antiparallel_swaps_helicity(x, y, z, p1, p2):
    b = np.array([x, y, z])
    if np.linalg.norm(b) < 1e-3:
        b = np.array([0.0, 0.0, 1.0])
    try:
        ref = np.abs(S.zeeman_amplitudes(b, SWAP[p1], SWAP[p2]))
    except DomainError:
        with pytest.raises(DomainError):
            S.zeeman_amplitudes(-b, p1, p2)
        return
    assert np.abs(S.zeeman_amplitudes(-b, p1, p2)) == pytest.approx(ref, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 1))
def test_zeeman_normalized(x, y, z):
    a = S.zeeman_amplitudes([x, y, z])
    assert abs(np.sum(np.abs(a) ** 2) - 1) < 1e-12


def test_zeeman_small_tilt_linear():
    def minus(t):
        return abs(S.zeeman_amplitudes([math.sin(t), 0, math.cos(t)])[1])

    assert minus(2e-4) / minus(1e-4) == pytest.approx(2.0, rel=1e-6)
    # the batch path used by the synthesizer agrees with the scalar path
    b = np.array([[math.sin(0.3), 0.2, math.cos(0.3)]])
    w = S._weights_batch(b, "sigma+", "sigma-", S.TARGET)[0]
    amps = S.zeeman_amplitudes(b[0], normalize=False)
    assert w == pytest.approx(np.abs(amps) ** 2, rel=1e-12)


def test_synthesis_deterministic_and_linear():
    trap = MT.IoffePritchardTrap.from_frequencies(1.0, 310, 18)
    a = S.synthesize_spectrum(scheme(), trap, 15e-6, 1000, seed=3, samples=5000)
    b = S.synthesize_spectrum(scheme(), trap, 15e-6, 1000, seed=3, samples=5000)
    c = S.synthesize_spectrum(scheme(), trap, 15e-6, 1000, seed=4, samples=5000)
    d = S.synthesize_spectrum(scheme(), trap, 15e-6, 3000, seed=3, samples=5000)
    assert np.array_equal(a.signal, b.signal)
    assert not np.array_equal(a.signal, c.signal)
    assert d.area() == pytest.approx(3 * a.area(), rel=1e-12)
    assert np.all(a.signal >= 0)


def test_synthesis_minus_branch_at_zeeman_shift():
    trap = MT.IoffePritchardTrap.from_frequencies(1.0, 310, 18)
    sp = S.synthesize_spectrum(scheme(0.3), trap, 15e-6, 1000, seed=1, samples=20000, detunings=np.linspace(-8, 3, 2201))
    assert sp.metadata["minus_branch_fraction"] > 0
    # the field-insensitive line sits at zero detuning
    assert S.fit_gaussian_peak(sp, (-1.0, 1.0)).center == pytest.approx(0.0, abs=0.01)
    # the shifted branch is centred on -2 mu_B <|B|>, averaged with its own weights
    com = S.spectrum_center_of_mass(sp, (-8.0, -1.5))
    assert com == pytest.approx(-2 * S.MU_B_MHZ_PER_G * sp.metadata["mean_B_G"], rel=0.01)


def test_synthesis_zero_offset_single_peak():
    trap = MT.IoffePritchardTrap(1e-3, 0.5, 10.0)
    sp = S.synthesize_spectrum(scheme(), trap, 1e-6, 1000, seed=0, samples=5000, detunings=np.linspace(-6, 6, 601))
    y = sp.signal
    maxima = np.sum((y[1:-1] > y[:-2]) & (y[1:-1] > y[2:]))
    assert maxima == 1
    assert S.fit_gaussian_peak(sp).width == pytest.approx(1.5, rel=0.02)


def test_stark_shift_applied():
    trap = MT.IoffePritchardTrap.from_frequencies(1.0, 310, 18)
    sch = S.ExcitationScheme(scheme().red, scheme().blue, 480.0, alpha_half=8.0)
    sp = S.synthesize_spectrum(sch, trap, 2e-6, 100, 0.5, seed=0, samples=2000, detunings=np.linspace(-6, 2, 801))
    assert S.fit_two_peaks(sp, -4.8, -2.0)[1].center == pytest.approx(-2.0, abs=0.02)


def _gauss_spectrum(noise, seed=0):
    x = np.linspace(-8, 8, 321)
    s = 1.5 / S.FWHM_PER_SIGMA
    y = np.exp(-0.5 * (x / s) ** 2)
    y = y + noise * np.random.default_rng(seed).standard_normal(len(x))
    return S.Spectrum(x, y)


def test_fit_recovers_gaussian_with_noise():
    f = S.fit_gaussian_peak(_gauss_spectrum(0.01))
    assert f.width == pytest.approx(1.5, rel=0.03)
    assert abs(f.center) < 0.03 * 1.5
    exact = S.fit_gaussian_peak(_gauss_spectrum(0.0))
    assert exact.width == pytest.approx(1.5, rel=1e-8) and abs(exact.center) < 1e-8
    assert "FWHM" in f.to_dict()["width_convention"]


def test_fit_flat_spectrum_errors():
    with pytest.raises(DomainError):
        S.fit_gaussian_peak(S.Spectrum(np.linspace(0, 1, 50), np.ones(50)))


def test_fit_no_peak_errors():
    # a monotone ramp has no positive peak inside the window
    with pytest.raises((NumericalError, DomainError)):
        S.fit_gaussian_peak(S.Spectrum(np.linspace(0, 1, 50), -np.exp(-((np.linspace(0, 1, 50) - 0.5) ** 2) / 0.01)))


def test_center_of_mass():
    assert S.spectrum_center_of_mass(_gauss_spectrum(0.0)) == pytest.approx(0.0, abs=1e-12)
    x = np.linspace(-2, 2, 401)
    y = np.zeros_like(x)
    y[np.isclose(x, -1.0)] = 1.0
    y[np.isclose(x, 1.0)] = 1.0
    assert S.spectrum_center_of_mass(S.Spectrum(x, y)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DomainError):
        S.spectrum_center_of_mass(S.Spectrum(x, np.zeros_like(x)))


def test_center_of_mass_skewed_oracle():
    dist = stats.skewnorm(4.0, loc=-1.0, scale=1.3)
    x = np.linspace(-15, 25, 8001)
    com = S.spectrum_center_of_mass(S.Spectrum(x, dist.pdf(x)))
    assert com == pytest.approx(dist.mean(), abs=1e-6)


def test_stark_scan_recovers_parameters():
    v = np.linspace(-15, 15, 13)
    k, v0 = 0.2, 1.34
    scan = S.synthesize_stark_scan(v, k, -k * v0, 8.06, detunings=np.linspace(-600, 20, 6201))
    res = S.stark_scan_analysis(scan, 8.06)
    assert res.vertex_V == pytest.approx(v0, rel=0.005)
    assert res.field_per_volt == pytest.approx(k, rel=0.005)
    assert res.offset_field == pytest.approx(k * v0, rel=0.005)
    assert res.volts_per_field == pytest.approx(1 / k, rel=0.005)
    com = S.stark_scan_analysis(S.synthesize_stark_scan(v, k, -k * v0, 8.06, detunings=np.linspace(-600, 20, 6201)), 8.06, "com")
    assert com.vertex_V == pytest.approx(v0, rel=0.005)


def test_stark_scan_rejects_bad_input():
    v = np.linspace(-15, 15, 13)
    wavy = S.StarkScan(v, [None] * len(v), centers=np.sin(v))
    with pytest.raises(NumericalError):
        S.stark_scan_analysis(wavy, 8.06)
    with pytest.raises(DomainError):
        S.stark_scan_analysis(S.StarkScan(v[:4], [None] * 4, centers=-(v[:4] ** 2)), 8.06)
    with pytest.raises(DomainError):
        S.stark_scan_analysis(S.StarkScan(v, [None] * len(v), centers=-(v**2)), -1.0)


def test_spectrum_csv_roundtrip(tmp_path):
    sp = _gauss_spectrum(0.0)
    p = tmp_path / "s.csv"
    sp.to_csv(p)
    back = S.Spectrum.from_csv(p)
    assert np.allclose(back.signal, sp.signal, rtol=1e-9)
    with pytest.raises(DomainError):
        S.Spectrum.from_csv(tmp_path / "missing.csv")
    with pytest.raises(DomainError):
        S.Spectrum([0, 1], [0, np.nan])


def test_stark_inhomogeneity_linear_gradient_oracle():
    # E = E0 + g x with x ~ N(0, s): mean E^2 = E0^2 + g^2 s^2,
    # var E^2 = 4 E0^2 g^2 s^2 + 2 g^4 s^4; Gauss-Hermite is exact here
    e0, g, s, a = 1.0, 0.3, 0.5, 8.06
    x, w = np.polynomial.hermite_e.hermegauss(12)
    fields = np.zeros((len(x), 3))
    fields[:, 0] = e0 + g * s * x
    d = S.stark_inhomogeneity(a, fields, w)
    mean = e0**2 + (g * s) ** 2
    var = 4 * e0**2 * (g * s) ** 2 + 2 * (g * s) ** 4
    assert d["mean_shift_MHz"] == pytest.approx(-a * mean, rel=1e-12)
    assert d["rms_spread_MHz"] == pytest.approx(a * math.sqrt(var), rel=1e-12)
    assert d["relative"] == pytest.approx(math.sqrt(var) / mean, rel=1e-12)
    assert S.stark_inhomogeneity(a, np.tile([0.0, 0.0, 1.0], (5, 1)))["rms_spread_MHz"] == 0.0
    with pytest.raises(DomainError):
        S.stark_inhomogeneity(a, np.ones((3, 2)))
    with pytest.raises(DomainError):
        S.stark_inhomogeneity(a, np.ones((3, 3)), [1.0, -1.0, 1.0])
