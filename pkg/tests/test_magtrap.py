import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rydbec import constants as C
from rydbec import magtrap as M
from rydbec.errors import DomainError

TRAP = M.IoffePritchardTrap.from_current(400, 1.5)


def test_coil_constants_at_400A():
    assert TRAP.Bp == pytest.approx(244.0)
    assert TRAP.Bpp == pytest.approx(224.0)


def test_origin_field():
    assert np.allclose(M.field_vector(TRAP, [0, 0, 0]), [0, 0, 1.5])


def test_invalid_trap():
    with pytest.raises(DomainError):
        M.IoffePritchardTrap(0.0, 1, 1)
    with pytest.raises(DomainError):
        M.IoffePritchardTrap(1.0, -1, 1)
    with pytest.raises(DomainError):
        M.IoffePritchardTrap.from_dict({"Bp_G_per_cm": 1})


def test_json_roundtrip():
    import json

    assert M.IoffePritchardTrap.from_dict(json.loads(TRAP.to_json())) == TRAP


def test_radial_growth_quadratic():
    trap = M.IoffePritchardTrap(1.0, 300.0, 1.0)
    rho = np.array([1e-3, 2e-3])  # mm
    dB = M.field_magnitude(trap, np.stack([rho, 0 * rho, 0 * rho], axis=1)) - trap.B0
    assert dB[1] / dB[0] == pytest.approx(4.0, rel=1e-3)


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_divergence_free(x, y, z):
    div = M.divergence(TRAP, [x, y, z])
    scale = TRAP.Bp + TRAP.Bpp  # G/cm scale over 1 cm
    assert abs(div) < 1e-9 * scale


def _numeric_frequency(trap, axis, h_mm=1e-3):
    e = np.zeros(3)
    e[axis] = h_mm
    b = M.field_magnitude(trap, np.array([-e, 0 * e, e]))
    d2 = (b[0] - 2 * b[1] + b[2]) / (h_mm / 10) ** 2  # G/cm^2 == T/m^2
    return math.sqrt(C.mu_B * d2 / C.M_RB87) / (2 * math.pi)


def test_frequencies_paper_trap():
    fr, fz = M.trap_frequencies(TRAP)
    assert fr == pytest.approx(254, abs=1.5)
    assert fz == pytest.approx(19, abs=0.5)


@pytest.mark.parametrize("trap", [TRAP, M.IoffePritchardTrap.from_frequencies(1.0, 310, 18)])
def test_frequencies_match_numeric_curvature(trap):
    fr, fz = M.trap_frequencies(trap)
    assert _numeric_frequency(trap, 0) == pytest.approx(fr, rel=5e-3)
    assert _numeric_frequency(trap, 1) == pytest.approx(fr, rel=5e-3)
    assert _numeric_frequency(trap, 2) == pytest.approx(fz, rel=5e-3)


def test_from_frequencies_roundtrip():
    fr, fz = M.trap_frequencies(M.IoffePritchardTrap.from_frequencies(1.0, 310, 18))
    assert (fr, fz) == pytest.approx((310, 18), rel=1e-12)


def test_unstable_configuration():
    with pytest.raises(DomainError, match="Bp\\^2/B0"):
        M.trap_frequencies(M.IoffePritchardTrap(10.0, 1.0, 100.0))


def test_zero_curvature_axial_zero():
    fr, fz = M.trap_frequencies(M.IoffePritchardTrap(1.5, 244.0, 0.0))
    assert fz == 0.0 and fr > 0


def test_quadrupling_offset_halves_radial():
    a = M.trap_frequencies(M.IoffePritchardTrap(1.0, 244.0, 1e-9))[0]
    b = M.trap_frequencies(M.IoffePritchardTrap(4.0, 244.0, 1e-9))[0]
    assert a / b == pytest.approx(2.0, rel=1e-9)


def test_field_angle():
    assert M.field_angle_to_z(TRAP, [0, 0, 0]) == 0.0
    far = M.field_angle_to_z(M.IoffePritchardTrap(1e-3, 244.0, 0.0), [10.0, 0, 0])
    assert far == pytest.approx(math.pi / 2, abs=1e-4)
    near = M.field_angle_to_z(M.IoffePritchardTrap.from_frequencies(1.0, 310, 18), [8.6e-3, 0, 0])
    assert 0 < near < 0.3


def test_field_angle_zero_field():
    trap = M.IoffePritchardTrap(1.0, 0.0, 16.0)
    # B_z vanishes on the ring rho^2 = 4 B0 / Bpp (cm^2)
    rho_mm = 5.0  # exactly 0.5 cm
    with pytest.raises(DomainError):
        M.field_angle_to_z(trap, [rho_mm, 0, 0])


def test_thermal_sigma_offset_089():
    trap = M.IoffePritchardTrap.from_current(400, 0.89)
    sr, _ = M.thermal_cloud_sigma(trap, M.RB87_F2_MF2, 3.4e-6)
    assert sr == pytest.approx(8.6, rel=0.05)


def test_thermal_sigma_scaling():
    s1 = M.thermal_cloud_sigma(TRAP, M.RB87_F2_MF2, 1e-6)
    s4 = M.thermal_cloud_sigma(TRAP, M.RB87_F2_MF2, 4e-6)
    assert s4[0] / s1[0] == pytest.approx(2.0)
    assert M.thermal_cloud_sigma(TRAP, M.RB87_F2_MF2, 0.0) == (0.0, 0.0)


def test_single_minimum_at_origin():
    g = np.linspace(-0.5, 0.5, 21)
    X, Y, Z = np.meshgrid(g, g, g * 20, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    b = M.field_magnitude(TRAP, pts)
    i = np.argmin(b)
    assert np.allclose(pts[i], 0) and b[i] == pytest.approx(TRAP.B0)
