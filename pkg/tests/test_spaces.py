import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from igapeec.errors import GeometryError
from igapeec.geometry import edge_param
from igapeec.models import cube, flat_plate, sphere, strip_dipole, two_port_strip
from igapeec.quadrature import tensor_rule
from igapeec.spaces import (build_spaces, evaluate_element, eval_scalar_basis,
                            eval_vector_basis, prolongation)
from igapeec.splines import KnotVector, eval_basis, surface_jacobian_and_normal


def _count(p, n_el):
    """Tensor-product dimension formula for open uniform knot vectors."""
    return p + n_el


def test_single_patch_level_zero_counts():
    sp = build_spaces(flat_plate(), degree=1, refinement=0)
    ps = sp.vector.patch_spaces[0]
    assert ps.n_fam1 + ps.n_fam2 == 2 * (2 * 1)
    assert sp.scalar.dim == 1
    # every one of the four functions carries normal flux through the boundary
    assert sp.vector.dim == 0


@pytest.mark.parametrize("p,h", [(1, 1), (2, 1), (3, 2)])
def test_patch_dimensions(p, h):
    sp = build_spaces(flat_plate(), degree=p, refinement=h)
    n = 2 ** h
    ps = sp.vector.patch_spaces[0]
    assert ps.n_fam1 == _count(p, n) * _count(p - 1, n)
    assert ps.n_fam2 == _count(p - 1, n) * _count(p, n)
    assert sp.scalar.dim == _count(p - 1, n) ** 2
    assert sp.vector.dim == 2 * (_count(p, n) - 2) * _count(p - 1, n)


def test_sphere_counts():
    sp = build_spaces(sphere(), 2, 1)
    per_patch = 2 * _count(2, 2) * _count(1, 2)
    assert sp.vector.dim == 6 * per_patch - 12 * _count(1, 2)
    assert sp.scalar.dim == 6 * _count(1, 2) ** 2


def test_refinement_quadruples_elements():
    counts = [len(build_spaces(flat_plate(), 2, h).elements) for h in range(4)]
    assert counts == [1, 4, 16, 64]
    counts = [len(build_spaces(cube(), 2, h).elements) for h in (1, 2)]
    assert counts[1] == 4 * counts[0]


def test_degree_zero_rejected():
    with pytest.raises(GeometryError):
        build_spaces(flat_plate(), degree=0)


def test_mismatched_edge_refinement_rejected():
    with pytest.raises(GeometryError):
        build_spaces(sphere(), 2, (1, 2))


def test_numbering_is_deterministic():
    a, b = build_spaces(cube(), 2, 1), build_spaces(cube(), 2, 1)
    for x, y in zip(a.vector.loc2glob, b.vector.loc2glob):
        np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(a.vector_dofs, b.vector_dofs)
    # patch-major: numbers first introduced by each patch form consecutive blocks
    seen, nxt = set(), 0
    for l in a.vector.loc2glob:
        new = [int(g) for g in l if g >= 0 and int(g) not in seen]
        assert new == list(range(nxt, nxt + len(new)))
        nxt += len(new)
        seen.update(new)
    assert nxt == a.vector.dim


def test_identity_map_reproduces_reference_functions():
    surf = flat_plate(center=(0.5, 0.5, 0.0))
    sp = build_spaces(surf, 2, (1, 0))
    ku = KnotVector(2, [0, 0, 0, 0.5, 1, 1, 1])
    kv = KnotVector(1, [0, 0, 1, 1])
    kud = KnotVector(1, [0, 0, 0.5, 1, 1])
    kvp = KnotVector(2, [0, 0, 0, 1, 1, 1])
    x, y = 0.3, 0.6
    bu, bv, bud, bvp = (eval_basis(k, t) for k, t in ((ku, x), (kv, y), (kud, x), (kvp, y)))
    expected = {}
    g = 0
    for i in (1, 2):          # interior u functions of the first family
        for j in (0, 1):
            expected[g] = (np.array([bu[i] * bv[j], 0, 0]), None)
            g += 1
    for i in range(3):
        expected[g] = (np.array([0, bud[i] * bvp[1], 0]), None)
        g += 1
    got = {d: v for d, v, _ in eval_vector_basis(sp, 0, (x, y))}
    for d, (v, _) in expected.items():
        np.testing.assert_allclose(got.get(d, np.zeros(3)), v, atol=1e-15)


def _closed_divergence_integrals(sp):
    rule = tensor_rule(sp.degree + 1)
    total = np.zeros(sp.vector.dim)
    for k in range(len(sp.elements)):
        ev = evaluate_element(sp, k, rule.points, geometry=False)
        vals = ev.area * ev.div @ rule.weights
        dofs, sg = sp.vector_dofs[k], sp.vector_sign[k]
        keep = dofs >= 0
        np.add.at(total, dofs[keep], sg[keep] * vals[keep])
    return total


@pytest.mark.parametrize("model", [cube, sphere])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_divergence_integrates_to_zero_on_closed_surfaces(model, p):
    sp = build_spaces(model(), p, 1)
    assert np.abs(_closed_divergence_integrals(sp)).max() <= 1e-13


def test_physical_divergence_integral_equals_reference():
    sp = build_spaces(sphere(), 2, 1)
    rule = tensor_rule(4)
    for k in (0, 5, 17):
        ev = evaluate_element(sp, k, rule.points)
        phys = ev.area * ((ev.div / ev.g) * ev.g) @ rule.weights
        ref = ev.area * ev.div @ rule.weights
        np.testing.assert_allclose(phys, ref, atol=1e-15)


def _conormal(surface, patch, x, y, eps=1e-4):
    """Unit outward conormal of a patch boundary point."""
    t1, t2, n, _ = surface_jacobian_and_normal(surface[patch], np.array([x]), np.array([y]))
    cx = 0.5 + (x - 0.5) * (1 - eps)
    cy = 0.5 + (y - 0.5) * (1 - eps)
    inward = np.array([cx - x, cy - y])
    d = inward[0] * t1[0] + inward[1] * t2[0]
    tau = t2[0] if x in (0.0, 1.0) else t1[0]
    nu = np.cross(tau, n[0])
    nu /= np.linalg.norm(nu)
    return -nu if np.dot(nu, d) > 0 else nu


def _flux_jumps(surface, sp, n_points, rng):
    worst = 0.0
    for (na, ea), link in surface.topology.interior_edges():
        t = rng.uniform(0, 1, n_points)
        xa, ya = edge_param(ea, t)
        xb, yb = edge_param(link.edge, 1 - t if link.flip else t)
        for k in range(n_points):
            fa = {d: np.dot(v, _conormal(surface, na, xa[k], ya[k]))
                  for d, v, _ in eval_vector_basis(sp, na, (xa[k], ya[k]))}
            fb = {d: np.dot(v, _conormal(surface, link.patch, xb[k], yb[k]))
                  for d, v, _ in eval_vector_basis(sp, link.patch, (xb[k], yb[k]))}
            for d in set(fa) | set(fb):
                worst = max(worst, abs(fa.get(d, 0.0) + fb.get(d, 0.0)))
    return worst


@pytest.mark.parametrize("model,p", [(cube, 2), (sphere, 2), (strip_dipole, 2),
                                     (two_port_strip, 3)])
def test_normal_flux_continuous_across_interior_edges(model, p):
    surf = model()
    sp = build_spaces(surf, p, 1)
    scale = surf.bbox_diagonal
    assert _flux_jumps(surf, sp, 100, np.random.default_rng(3)) <= 1e-10 / scale ** 2


def test_boundary_normal_flux_vanishes():
    surf = strip_dipole()
    sp = build_spaces(surf, 2, 1)
    for n in range(len(surf)):
        for e in range(4):
            if surf.topology.partner(n, e) is not None:
                continue
            for t in (0.13, 0.5, 0.77):
                x, y = edge_param(e, t)
                nu = _conormal(surf, n, float(x), float(y))
                for d, v, _ in eval_vector_basis(sp, n, (float(x), float(y))):
                    assert abs(np.dot(v, nu)) <= 1e-9


def test_scalar_partition_of_unity():
    sp = build_spaces(sphere(), 2, 1)
    vals = eval_scalar_basis(sp, 3, (0.31, 0.77))
    assert sum(v for _, v in vals) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("model", [cube, strip_dipole])
def test_prolongation_reproduces_coarse_functions(model):
    surf = model()
    coarse, fine = build_spaces(surf, 2, 1), build_spaces(surf, 2, 2)
    S, V = prolongation(coarse, fine)
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = int(rng.integers(len(surf)))
        pt = tuple(rng.uniform(0.01, 0.99, 2))
        vc = np.zeros((coarse.vector.dim, 3))
        for d, v, _ in eval_vector_basis(coarse, n, pt):
            vc[d] = v
        vf = np.zeros((fine.vector.dim, 3))
        for d, v, _ in eval_vector_basis(fine, n, pt):
            vf[d] = v
        np.testing.assert_allclose(V.T @ vf, vc, atol=1e-12)
        sc = np.zeros(coarse.scalar.dim)
        for d, v in eval_scalar_basis(coarse, n, pt):
            sc[d] = v
        sf = np.zeros(fine.scalar.dim)
        for d, v in eval_scalar_basis(fine, n, pt):
            sf[d] = v
        np.testing.assert_allclose(S.T @ sf, sc, atol=1e-12)


def _reference_components(sp, patch, x, y):
    t1, t2, _, g = surface_jacobian_and_normal(sp.surface[patch], np.array([x]), np.array([y]))
    G = np.array([[t1[0] @ t1[0], t1[0] @ t2[0]], [t2[0] @ t1[0], t2[0] @ t2[0]]])
    out = {}
    for d, v, _ in eval_vector_basis(sp, patch, (x, y)):
        out[d] = g[0] * np.linalg.solve(G, [t1[0] @ v, t2[0] @ v])
    return out, g[0]


SPHERE_SPACES = build_spaces(sphere(), 2, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_piola_divergence_matches_difference_quotient(patch, x, y):
    if min(abs(x - 0.5), abs(y - 0.5)) < 2e-3:
        return
    sp, h = SPHERE_SPACES, 1e-6
    xp, _ = _reference_components(sp, patch, x + h, y)
    xm, _ = _reference_components(sp, patch, x - h, y)
    yp, _ = _reference_components(sp, patch, x, y + h)
    ym, g = _reference_components(sp, patch, x, y - h)
    g = surface_jacobian_and_normal(sp.surface[patch], np.array([x]), np.array([y]))[3][0]
    for d, _, div in eval_vector_basis(sp, patch, (x, y)):
        fd = ((xp[d][0] - xm[d][0]) + (yp[d][1] - ym[d][1])) / (2 * h)
        assert div * g == pytest.approx(fd, abs=1e-5 * max(1.0, abs(fd)))
