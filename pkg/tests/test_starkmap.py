import math

import numpy as np
import pytest

from rydbec.errors import DomainError
from rydbec.rydstruct import RydbergLevel, level_energy
from rydbec.starkmap import (
    REFERENCE,
    build_basis,
    compute_stark_map,
    polarizability,
    stark_hamiltonian,
    stark_shift,
)


@pytest.fixture(scope="module")
def basis43():
    return build_basis(43)


@pytest.fixture(scope="module")
def pol43(basis43):
    return polarizability(basis43, REFERENCE)


def test_basis_contents(basis43):
    assert REFERENCE.n in range(basis43.n_min, basis43.n_max + 1)
    basis43.index(REFERENCE)
    ns = {lv.n for lv in basis43.levels}
    assert ns == set(range(39, 48))
    # every l of the n = 45 hydrogenic manifold is present
    assert {lv.l for lv in basis43.levels if lv.n == 45} == set(range(45))
    assert len(set((lv.n, lv.l, lv.j) for lv in basis43.levels)) == len(basis43)
    assert all(lv.mj == 0.5 for lv in basis43.levels)


def test_basis_ordering_deterministic(basis43):
    e = [level_energy(lv) for lv in basis43.levels]
    assert e == sorted(e)
    assert build_basis(43).levels == basis43.levels


def test_basis_size_grows_with_spread():
    sizes = [len(build_basis(30, s)) for s in (3, 4, 5, 6)]
    steps = np.diff(sizes)
    # each extra pair of manifolds adds ~ 2 * 2n states
    assert np.all(steps > 0)
    assert np.allclose(steps / (4 * 30), 1.0, rtol=0.3)


def test_high_mj_excludes_s_and_p():
    b = build_basis(30, 3, 2.5)
    assert all(lv.l >= 2 for lv in b.levels)
    assert all(lv.j >= 2.5 for lv in b.levels)


def test_spread_too_small():
    with pytest.raises(DomainError):
        build_basis(43, 2)


def test_hamiltonian_zero_field_diagonal(basis43):
    h = stark_hamiltonian(basis43, 0.0)
    assert np.count_nonzero(h - np.diag(np.diag(h))) == 0


def test_hamiltonian_symmetric_exact(basis43):
    h = stark_hamiltonian(basis43, 0.7)
    assert np.array_equal(h, h.T)
    assert h.dtype == np.float64


def test_hamiltonian_linear_in_field(basis43):
    d = np.diag(stark_hamiltonian(basis43, 0.0))
    h1 = stark_hamiltonian(basis43, 0.3) - np.diag(d)
    h2 = stark_hamiltonian(basis43, 0.6) - np.diag(d)
    assert np.linalg.norm(h2) == pytest.approx(2 * np.linalg.norm(h1), rel=1e-12)


def test_negative_field_rejected(basis43):
    with pytest.raises(DomainError):
        stark_hamiltonian(basis43, -1.0)


def test_zero_field_map_matches_defect_energies(basis43):
    smap = compute_stark_map(basis43, [0.0, 0.01])
    e0 = level_energy(REFERENCE)
    expected = np.array([(level_energy(lv) - e0) / 1e6 for lv in basis43.levels])
    assert np.max(np.abs(smap.energies[:, 0] - expected)) < 1e-3  # 1 kHz


def test_fields_must_increase(basis43):
    with pytest.raises(DomainError):
        compute_stark_map(basis43, [0.2, 0.1])


def test_shift_consistent_with_fitted_alpha(basis43, pol43):
    smap = compute_stark_map(basis43, np.linspace(0, 0.27, 10))
    shift = smap.curve(REFERENCE)[-1] - smap.curve(REFERENCE)[0]
    assert shift == pytest.approx(-pol43.alpha_half * 0.27**2, rel=0.01)


def test_linear_term_vanishes(pol43):
    assert abs(pol43.linear_term) <= 3 * pol43.linear_sigma + 1e-9
    assert pol43.residual < 0.01


def test_curve_concave_up_to_2(basis43):
    fields = np.linspace(0, 2.0, 41)
    smap = compute_stark_map(basis43, fields)
    c = smap.curve(REFERENCE)
    assert np.all(np.diff(c, 2) <= 1e-9)


def test_curve_continuity(basis43):
    c = compute_stark_map(basis43, np.linspace(0, 0.5, 11)).curve(REFERENCE)
    d = np.abs(np.diff(c))
    # local linear prediction of each jump: mean of the neighbouring jumps (h |c'|)
    predicted = 0.5 * (d[:-2] + d[2:])
    assert np.all(d[1:-1] <= 3 * predicted + 1e-12)


def test_manifold_linear_s_state_quadratic(basis43):
    """Edge of the n=43 hydrogenic fan moves linearly; 43S moves quadratically."""
    e_man = (level_energy(RydbergLevel(43, 10, 10.5)) - level_energy(REFERENCE)) / 1e6
    edges, s_shifts = [], []
    for f in (0.05, 0.1):
        ev = np.linalg.eigvalsh(stark_hamiltonian(basis43, f))
        window = ev[(ev > e_man) & (ev < e_man + 20_000)]
        edges.append(window.max() - e_man)
    smap = compute_stark_map(basis43, [0.0, 0.05, 0.1])
    c = smap.curve(REFERENCE)
    assert edges[1] / edges[0] == pytest.approx(2.0, rel=0.05)
    assert (c[2] - c[0]) / (c[1] - c[0]) == pytest.approx(4.0, rel=0.05)
    # hydrogenic edge slope 3/2 n (n-1) e a0 F
    assert edges[0] / 0.05 == pytest.approx(1.5 * 43 * 42 * 1.2795448, rel=0.1)


def test_basis_convergence(pol43):
    wider = polarizability(build_basis(43, 5), REFERENCE)
    assert abs(wider.alpha_half - pol43.alpha_half) / pol43.alpha_half < 0.01


def test_alpha_scaling_exponent(pol43):
    s30 = RydbergLevel(30, 0, 0.5, 0.5)
    p30 = polarizability(build_basis(30), s30)
    k = math.log(pol43.alpha_half / p30.alpha_half) / math.log(REFERENCE.n_star / s30.n_star)
    assert k == pytest.approx(7.0, rel=0.2)


def test_independent_perturbation_sum(basis43, pol43):
    # second-order perturbation theory with the same couplings is an independent
    # route to alpha/2 (no diagonalization, no tracking)
    h = stark_hamiltonian(basis43, 1.0)
    i = basis43.index(REFERENCE)
    diag = np.diag(h).copy()
    v = h[i].copy()
    v[i] = 0.0
    denom = diag[i] - diag
    denom[i] = np.inf
    second = np.sum(v**2 / denom)
    assert second == pytest.approx(-pol43.alpha_half, rel=0.002)


def test_stark_shift_values():
    assert stark_shift(8.06, 0.0) == 0.0
    assert stark_shift(8.06, 0.27) == pytest.approx(-0.5876, abs=1e-4)
    assert stark_shift(8.06, 1.0) == pytest.approx(-8.06)
    with pytest.raises(DomainError):
        stark_shift(8.06, -0.1)


def test_csv_export(tmp_path, basis43):
    smap = compute_stark_map(basis43, [0.0, 0.1])
    p = tmp_path / "map.csv"
    smap.to_csv(p)
    header = p.read_text().splitlines()[0].split(",")
    assert header[0] == "field_V_per_cm"
    assert len(header) == len(basis43) + 1
