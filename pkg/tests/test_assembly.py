import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from igapeec.assembly import (EPS0, MU0, VACUUM, Assembler, Medium, QuadratureOrders, assemble,
                              assemble_excitation_plane_wave, default_threads, far_field, greens,
                              read_matrix, write_matrix)
from igapeec.models import FACE_ROTATIONS, cube, flat_plate, sphere
from igapeec.spaces import build_spaces, prolongation

import oracles

OMEGA = 2 * np.pi * 1e8   # kappa ~ 2.1 / m


@pytest.fixture(scope="module")
def cube_mats():
    sp = build_spaces(cube(), 2, 0)
    m0, m1 = Assembler(sp, VACUUM, threads=2).assemble([0.0, OMEGA])
    return sp, m0, m1


def test_greens_values():
    x, y = np.zeros((1, 3)), np.array([[1.0, 0, 0]])
    assert greens(0.0, x, y)[0] == pytest.approx(1 / (4 * np.pi), rel=1e-15)
    assert greens(np.pi, x, y)[0] == pytest.approx(-1 / (4 * np.pi), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 100.0), st.floats(1e-3, 10.0))
def test_greens_modulus(kappa, r):
    x, y = np.zeros((1, 3)), np.array([[0.0, r, 0.0]])
    assert abs(greens(kappa, x, y)[0]) == pytest.approx(1 / (4 * np.pi * r), rel=1e-12)
    assert greens(kappa, x, y)[0] == greens(kappa, y, x)[0]


def test_medium_validation():
    with pytest.raises(ValueError):
        Medium(-1.0, MU0)
    assert VACUUM.c == pytest.approx(299792458.0, rel=1e-9)
    assert VACUUM.eta == pytest.approx(376.730313, rel=1e-8)


@pytest.mark.parametrize("k", [0, 1])
def test_complex_symmetry(cube_mats, k):
    _, *mats = cube_mats
    m = mats[k]
    for A in (m.L, m.P):
        assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()


def test_mass_spd_and_shapes(cube_mats):
    sp, m0, _ = cube_mats
    M = m0.M.toarray()
    assert M.shape == (sp.scalar.dim, sp.scalar.dim)
    assert m0.G.shape == (sp.scalar.dim, sp.vector.dim)
    assert np.abs(M - M.T).max() == 0.0
    assert np.linalg.eigvalsh(M).min() > 0


def test_static_blocks_real_and_definite(cube_mats):
    _, m0, _ = cube_mats
    assert np.abs(m0.L.imag).max() == 0.0 and np.abs(m0.P.imag).max() == 0.0
    assert np.linalg.eigvalsh(m0.L.real).min() >= -1e-12 * np.abs(m0.L).max()
    assert np.linalg.eigvalsh(m0.P.real).min() > 0


def test_constant_scalar_row_of_g_vanishes(cube_mats):
    _, m0, _ = cube_mats
    G = m0.G.toarray()
    assert np.abs(G.sum(axis=0)).max() <= 1e-12 * np.abs(G).max()


def test_single_patch_constant_mass_is_area():
    surf = flat_plate(size=0.3)
    sp = build_spaces(surf, 1, 0)
    m = assemble(surf, sp, omega=0.0)
    assert m.M.toarray() == pytest.approx(np.array([[0.09]]), rel=1e-14)


def test_sphere_mass_sums_to_area():
    sp = build_spaces(sphere(), 2, 1)
    M = Assembler(sp, orders=QuadratureOrders(regular=8)).sparse_blocks()[1]
    assert M.sum() == pytest.approx(4 * np.pi, rel=1e-9)


def test_translation_invariance():
    surf = cube(0.5)
    sp = build_spaces(surf, 1, 0)
    moved = surf.translated([3.0, -1.0, 0.25])
    sp2 = build_spaces(moved, 1, 0)
    a = assemble(surf, sp, omega=OMEGA)
    b = assemble(moved, sp2, omega=OMEGA)
    for A, B in ((a.L, b.L), (a.P, b.P)):
        assert np.abs(A - B).max() <= 1e-12 * np.abs(A).max()


def test_two_element_inductance_matches_oracle():
    surf = flat_plate(center=(0.5, 0.5, 0.0))
    sp = build_spaces(surf, 2, (1, 0))
    L = assemble(surf, sp, omega=0.0).L.real / MU0
    ku, kv = [0, 0, 0, .5, 1, 1, 1], [0, 0, 1, 1]
    kud, kvp = [0, 0, .5, 1, 1], [0, 0, 0, 1, 1, 1]
    funs = [(0, oracles.bspline_piece(ku, 2, i), oracles.bspline_piece(kv, 1, j))
            for i in (1, 2) for j in (0, 1)]
    funs += [(1, oracles.bspline_piece(kud, 1, i), oracles.bspline_piece(kvp, 2, 1))
             for i in range(3)]
    ref = np.zeros((7, 7))
    for a in range(7):
        for b in range(a, 7):
            if funs[a][0] == funs[b][0]:
                ref[a, b] = ref[b, a] = oracles.coulomb_integral(
                    funs[a][1], funs[a][2], funs[b][1], funs[b][2])
    assert np.abs(L - ref).max() <= 1e-6 * np.abs(ref).max()
    off = [(a, b) for a in range(7) for b in range(7) if funs[a][0] != funs[b][0]]
    assert max(abs(L[a, b]) for a, b in off) <= 1e-12 * np.abs(ref).max()


def _subspace_errors(omega, orders):
    surf = flat_plate()
    c, f = build_spaces(surf, 2, 0), build_spaces(surf, 2, 1)
    S, V = prolongation(c, f)
    mc = assemble(surf, c, omega=omega, orders=orders)
    mf = assemble(surf, f, omega=omega, orders=orders)
    out = {}
    for name, A, B, left, right in (("L", mc.L, mf.L, V, V), ("P", mc.P, mf.P, S, S),
                                    ("G", mc.G.toarray(), mf.G.toarray(), S, V),
                                    ("M", mc.M.toarray(), mf.M.toarray(), S, S)):
        out[name] = np.abs(left.T @ B @ right - A).max() / np.abs(A).max()
    return out


def test_subspace_property_static():
    err = _subspace_errors(0.0, None)
    assert max(err.values()) <= 1e-8


def test_subspace_property_dynamic():
    err = _subspace_errors(OMEGA, QuadratureOrders(regular=8, dynamic=8))
    assert max(err.values()) <= 1e-8


def test_frequency_continuity():
    sp = build_spaces(cube(), 1, 0)
    a, b = Assembler(sp).assemble([OMEGA, OMEGA * (1 + 1e-6)])
    for A, B in ((a.L, b.L), (a.P, b.P)):
        d = np.abs(A - B).max() / np.abs(A).max()
        assert 0 < d <= 1e-5


def test_thread_count_does_not_change_result():
    sp = build_spaces(cube(), 1, 0)
    a = Assembler(sp, threads=1).assemble([OMEGA])[0]
    b = Assembler(sp, threads=3).assemble([OMEGA])[0]
    np.testing.assert_array_equal(a.L, b.L)
    np.testing.assert_array_equal(a.P, b.P)


def test_thread_env(monkeypatch):
    monkeypatch.setenv("IGAPEEC_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("IGAPEEC_THREADS", "zero")
    with pytest.raises(ValueError):
        default_threads()


def test_scaling_with_medium():
    sp = build_spaces(cube(), 1, 0)
    a = Assembler(sp, VACUUM).assemble([0.0])[0]
    b = Assembler(sp, Medium(4 * EPS0, 2 * MU0)).assemble([0.0])[0]
    np.testing.assert_allclose(b.L, 2 * a.L, rtol=1e-14)
    np.testing.assert_allclose(b.P, a.P / 4, rtol=1e-14)


def test_zero_amplitude_excitation():
    sp = build_spaces(flat_plate(), 2, 1)
    v = assemble_excitation_plane_wave(sp, [0, 0, -1], [1, 0, 0], 3.0, amplitude=0.0)
    assert np.all(v == 0)


def test_static_uniform_field_gives_basis_moments():
    # at kappa = 0 the entries are E . int v_i; on the identity-like plate the
    # moments are products of 1D B-spline integrals (xi_{i+p+1} - xi_i)/(p+1)
    surf = flat_plate(size=2.0)
    sp = build_spaces(surf, 2, 1)
    v = assemble_excitation_plane_wave(sp, [0, 0, -1], [0.6, 0.8, 0], 0.0)
    ku_p, kv_d = [0, 0, 0, .5, 1, 1, 1], [0, 0, .5, 1, 1]

    def moment(knots, p, i):
        return (knots[i + p + 1] - knots[i]) / (p + 1)

    # physical moment of family 1 is t1 * int b b = (2, 0, 0) * ...
    expected = [0.6 * 2 * moment(ku_p, 2, i) * moment(kv_d, 1, j)
                for i in (1, 2) for j in range(3)]
    expected += [0.8 * 2 * moment(kv_d, 1, i) * moment(ku_p, 2, j)
                 for i in range(3) for j in (1, 2)]
    np.testing.assert_allclose(v.real, expected, rtol=1e-13)
    assert np.abs(v.imag).max() == 0.0


def test_excitation_frame_invariance():
    surf = sphere()
    R = FACE_ROTATIONS[2]
    rotated = surf.map_points(lambda X: X @ R.T)
    sp, spr = build_spaces(surf, 2, 0), build_spaces(rotated, 2, 0)
    d, e = np.array([0.0, 0.6, -0.8]), np.array([1.0, 0.0, 0.0])
    a = assemble_excitation_plane_wave(sp, d, e, 1.3)
    b = assemble_excitation_plane_wave(spr, R @ d, R @ e, 1.3)
    np.testing.assert_allclose(np.abs(a), np.abs(b), atol=1e-13 * np.abs(a).max())


@pytest.mark.parametrize("direction,polarization", [([0, 0, 2], [1, 0, 0]),
                                                    ([0, 0, 1], [1, 0, 1])])
def test_plane_wave_validation(direction, polarization):
    sp = build_spaces(flat_plate(), 1, 1)
    with pytest.raises(ValueError):
        assemble_excitation_plane_wave(sp, direction, polarization, 1.0)


def test_far_field_of_uniform_current_is_moment():
    surf = flat_plate(size=1.0)
    sp = build_spaces(surf, 2, 1)
    rng = np.random.default_rng(0)
    J = rng.normal(size=sp.vector.dim)
    N0 = far_field(sp, J, np.array([[0, 0, 1.0]]), 0.0)
    v = assemble_excitation_plane_wave(sp, [0, 0, -1], [1, 0, 0], 0.0)
    assert N0[0, 0].real == pytest.approx(np.dot(v.real, J), rel=1e-12)


def test_matrix_dump_round_trip(tmp_path):
    A = np.array([[1 + 2j, 0], [0.5, -3e-7j]])
    path = tmp_path / "A.mtx"
    write_matrix(path, A)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("%%MatrixMarket")
    assert lines[1].split() == ["2", "2", "3"]
    np.testing.assert_array_equal(read_matrix(path), A)
