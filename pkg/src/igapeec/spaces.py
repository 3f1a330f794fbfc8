"""Discrete spline spaces on a multipatch surface.

The vector (current) space uses, per patch, the two families of reference
fields ``(b^p(x) b^{p-1}(y), 0)`` and ``(0, b^{p-1}(x) b^p(y))`` on uniform
knot vectors, mapped with the contravariant Piola transform
``v = (t1 * v1 + t2 * v2) / g``.  Normal-trace coefficients are glued
across interior edges and removed on boundary edges, which makes the space
divergence conforming.

The scalar (charge/potential) space is the patchwise tensor-product spline
space of degree ``p-1`` into which the reference divergence maps.  Scalar
functions are pulled back without a Jacobian factor, so the global constant
is in the space.  No continuity is imposed across patches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import GeometryError
from .geometry import MultipatchSurface
from .splines import KnotVector, basis_nonzero, eval_basis, surface_derivatives

__all__ = [
    "Element",
    "ElementEval",
    "ScalarSpace",
    "VectorSpace",
    "DiscreteSpaces",
    "build_spaces",
    "eval_vector_basis",
    "eval_scalar_basis",
    "evaluate_element",
    "edge_dofs",
    "prolongation",
]

# outward normal-trace sign of the edge-row functions, per edge
_EDGE_SIGN = {0: -1.0, 1: 1.0, 2: 1.0, 3: -1.0}


@dataclass(frozen=True)
class Element:
    patch: int
    ix: int
    iy: int
    x0: float
    x1: float
    y0: float
    y1: float

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


class PatchSpace(NamedTuple):
    """Uniform 1D spaces of one patch: degree p (``*_p``) and p-1 (``*_d``)."""

    ku_p: KnotVector
    kv_p: KnotVector
    ku_d: KnotVector
    kv_d: KnotVector

    @property
    def n_fam1(self):
        return self.ku_p.n_basis * self.kv_d.n_basis

    @property
    def n_fam2(self):
        return self.ku_d.n_basis * self.kv_p.n_basis

    @property
    def n_vector(self):
        return self.n_fam1 + self.n_fam2

    @property
    def n_scalar(self):
        return self.ku_d.n_basis * self.kv_d.n_basis


class ScalarSpace:
    """Patchwise scalar space of degree ``p-1``; global index = offset + lexicographic."""

    def __init__(self, patch_spaces, degree):
        self.degree = degree
        self.patch_spaces = patch_spaces
        sizes = [ps.n_scalar for ps in patch_spaces]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.dim = int(self.offsets[-1])

    def patch_range(self, n):
        return slice(self.offsets[n], self.offsets[n + 1])


class VectorSpace:
    """Div-conforming space with glued normal traces.

    ``loc2glob[n][l]`` is the global index of local function ``l`` of patch
    ``n`` (``-1`` if removed) and ``sign[n][l]`` its coefficient in that
    global function.  Local numbering: family 1 (``i * kv_d + j``), then
    family 2 (``n_fam1 + i * kv_p + j``).
    """

    def __init__(self, patch_spaces, degree, loc2glob, sign, dim):
        self.degree = degree
        self.patch_spaces = patch_spaces
        self.loc2glob = loc2glob
        self.sign = sign
        self.dim = dim

    def members(self, g):
        """Local functions ``(patch, local, sign)`` making up global function ``g``."""
        out = []
        for n, (l2g, s) in enumerate(zip(self.loc2glob, self.sign)):
            for l in np.flatnonzero(l2g == g):
                out.append((n, int(l), float(s[l])))
        return out


def edge_dofs(ps: PatchSpace, edge: int) -> np.ndarray:
    """Local indices of the normal-trace functions on ``edge``, by edge parameter."""
    nu_p, nv_p = ps.ku_p.n_basis, ps.kv_p.n_basis
    nu_d, nv_d = ps.ku_d.n_basis, ps.kv_d.n_basis
    if edge == 3:
        return 0 * nv_d + np.arange(nv_d)
    if edge == 1:
        return (nu_p - 1) * nv_d + np.arange(nv_d)
    if edge == 0:
        return ps.n_fam1 + np.arange(nu_d) * nv_p + 0
    if edge == 2:
        return ps.n_fam1 + np.arange(nu_d) * nv_p + (nv_p - 1)
    raise ValueError(edge)


class DiscreteSpaces:
    """Scalar and vector spaces plus the element list and local-to-global maps.

    Unpacks as ``scalar, vector = build_spaces(...)``.
    """

    def __init__(self, surface, degree, refinement, scalar, vector, elements):
        self.surface = surface
        self.degree = degree
        self.refinement = refinement
        self.scalar = scalar
        self.vector = vector
        self.elements = elements
        self._element_dofs()

    def __iter__(self):
        return iter((self.scalar, self.vector))

    @property
    def n_elements(self):
        return len(self.elements)

    def _element_dofs(self):
        p = self.degree
        ns, nv = p * p, 2 * p * (p + 1)
        E = len(self.elements)
        sdofs = np.empty((E, ns), dtype=int)
        vdofs = np.empty((E, nv), dtype=int)
        vsign = np.empty((E, nv))
        vloc = np.empty((E, nv), dtype=int)
        for k, el in enumerate(self.elements):
            ps = self.scalar.patch_spaces[el.patch]
            nv_d, nv_p = ps.kv_d.n_basis, ps.kv_p.n_basis
            i_d = el.ix + np.arange(p)
            j_d = el.iy + np.arange(p)
            i_p = el.ix + np.arange(p + 1)
            j_p = el.iy + np.arange(p + 1)
            sdofs[k] = self.scalar.offsets[el.patch] + (i_d[:, None] * nv_d + j_d[None, :]).ravel()
            f1 = (i_p[:, None] * nv_d + j_d[None, :]).ravel()
            f2 = ps.n_fam1 + (i_d[:, None] * nv_p + j_p[None, :]).ravel()
            loc = np.concatenate([f1, f2])
            vloc[k] = loc
            vdofs[k] = self.vector.loc2glob[el.patch][loc]
            vsign[k] = self.vector.sign[el.patch][loc]
        vsign[vdofs < 0] = 0.0
        self.scalar_dofs = sdofs
        self.vector_dofs = vdofs
        self.vector_sign = vsign
        self.vector_local = vloc

    def elements_of_patch(self, n):
        return [k for k, el in enumerate(self.elements) if el.patch == n]


def _refinement_levels(refinement):
    if np.ndim(refinement) == 0:
        return int(refinement), int(refinement)
    hu, hv = refinement
    return int(hu), int(hv)


def build_spaces(surface: MultipatchSurface, degree: int = 2, refinement=1) -> DiscreteSpaces:
    """Build scalar and vector spaces with ``2**h`` uniform elements per direction.

    ``refinement`` is a level ``h`` or a pair ``(h_u, h_v)``.  Numbering is
    patch-major and lexicographic within a patch; a glued function takes
    the index of its first member in that order.
    """
    p = int(degree)
    if p < 1:
        raise GeometryError("vector space needs degree >= 1")
    hu, hv = _refinement_levels(refinement)
    if hu < 0 or hv < 0:
        raise GeometryError("refinement levels must be non-negative")
    neu, nev = 2 ** hu, 2 ** hv
    patch_spaces = []
    for _ in surface.patches:
        ku_p = KnotVector.uniform(p, neu)
        kv_p = KnotVector.uniform(p, nev)
        patch_spaces.append(PatchSpace(ku_p, kv_p, ku_p.derived(), kv_p.derived()))

    # gluing: canonical member gets +1, partner -sigma_a*sigma_b
    alias = [dict() for _ in surface.patches]
    removed = [set() for _ in surface.patches]
    topo = surface.topology
    for n, ps in enumerate(patch_spaces):
        for e in range(4):
            if topo.partner(n, e) is None:
                removed[n].update(int(l) for l in edge_dofs(ps, e))
    for (na, ea), link in topo.interior_edges():
        da = edge_dofs(patch_spaces[na], ea)
        db = edge_dofs(patch_spaces[link.patch], link.edge)
        if da.size != db.size:
            raise GeometryError(
                f"edge {ea} of patch {na} and edge {link.edge} of patch {link.patch} "
                f"carry {da.size} and {db.size} functions; use matching refinement")
        if link.flip:
            db = db[::-1]
        s = -_EDGE_SIGN[ea] * _EDGE_SIGN[link.edge]
        for la, lb in zip(da, db):
            a, b = (na, int(la)), (link.patch, int(lb))
            first, second = (a, b) if a <= b else (b, a)
            alias[second[0]][second[1]] = (first, s)

    loc2glob, sign = [], []
    counter = 0
    for n, ps in enumerate(patch_spaces):
        l2g = np.full(ps.n_vector, -1, dtype=int)
        sg = np.ones(ps.n_vector)
        for l in range(ps.n_vector):
            if l in removed[n]:
                continue
            if l in alias[n]:
                (m, k), s = alias[n][l]
                l2g[l] = loc2glob[m][k] if m < n else l2g[k]
                sg[l] = s
                if l2g[l] < 0:
                    raise GeometryError("inconsistent edge gluing")
            else:
                l2g[l] = counter
                counter += 1
        loc2glob.append(l2g)
        sign.append(sg)

    elements = []
    for n in range(len(surface)):
        for ix in range(neu):
            for iy in range(nev):
                elements.append(Element(n, ix, iy, ix / neu, (ix + 1) / neu,
                                        iy / nev, (iy + 1) / nev))
    scalar = ScalarSpace(patch_spaces, p - 1)
    vector = VectorSpace(patch_spaces, p, loc2glob, sign, counter)
    return DiscreteSpaces(surface, p, (hu, hv), scalar, vector, elements)


class ElementEval(NamedTuple):
    """Basis data of one element at a set of local points.

    ``vec`` holds ``t1 * v1 + t2 * v2`` (the Piola image times ``g``), so
    ``vec * w * area`` is the current basis integrated against ``dGamma``.
    ``div`` is the reference divergence (physical divergence times ``g``).
    """

    X: np.ndarray         # (N, 3)
    t1: np.ndarray
    t2: np.ndarray
    g: np.ndarray         # (N,)
    area: float           # reference measure of the element
    scalar: np.ndarray    # (ns, N)
    vec: np.ndarray       # (nv, N, 3)
    div: np.ndarray       # (nv, N)


def _element_1d(kv_p, kv_d, i0, t, derivative):
    if t.size > 64:
        # singular rules repeat coordinate values heavily
        tu, inv = np.unique(t, return_inverse=True)
        if 2 * tu.size < t.size:
            return tuple(a[inv] for a in _element_1d(kv_p, kv_d, i0, tu, derivative))
    p = kv_p.degree
    span_p = np.full(t.shape, p + i0)
    span_d = np.full(t.shape, p - 1 + i0)
    _, Bp, dBp = basis_nonzero(kv_p, t, span=span_p, derivative=True)
    _, Bd = basis_nonzero(kv_d, t, span=span_d)
    return Bp, dBp, Bd


def evaluate_element(spaces: DiscreteSpaces, k: int, local, geometry=True) -> ElementEval:
    """Evaluate geometry and all local basis functions of element ``k``.

    ``local`` are points in the element's own unit square, shape (N, 2).
    """
    el = spaces.elements[k]
    ps = spaces.scalar.patch_spaces[el.patch]
    p = spaces.degree
    local = np.asarray(local, dtype=float)
    hx, hy = el.x1 - el.x0, el.y1 - el.y0
    x = el.x0 + hx * local[:, 0]
    y = el.y0 + hy * local[:, 1]
    Bp_u, dBp_u, Bd_u = (a.T for a in _element_1d(ps.ku_p, ps.ku_d, el.ix, x, True))
    Bp_v, dBp_v, Bd_v = (a.T for a in _element_1d(ps.kv_p, ps.kv_d, el.iy, y, True))
    N = x.size

    def outer(a, b):
        return (a[:, None, :] * b[None, :, :]).reshape(-1, N)

    scalar = outer(Bd_u, Bd_v)
    f1, f2 = outer(Bp_u, Bd_v), outer(Bd_u, Bp_v)
    div = np.concatenate([outer(dBp_u, Bd_v), outer(Bd_u, dBp_v)])
    if not geometry:
        return ElementEval(None, None, None, None, hx * hy, scalar,
                           np.concatenate([f1, f2]), div)
    X, t1, t2 = surface_derivatives(spaces.surface[el.patch], x, y)
    g = np.linalg.norm(np.cross(t1, t2), axis=1)
    vec = np.empty((f1.shape[0] + f2.shape[0], N, 3))
    np.multiply(f1[:, :, None], t1[None], out=vec[:f1.shape[0]])
    np.multiply(f2[:, :, None], t2[None], out=vec[f1.shape[0]:])
    return ElementEval(X, t1, t2, g, hx * hy, scalar, vec, div)


def _locate(spaces, patch, x, y):
    """Element containing a patch point (closed on the upper side at 1)."""
    ps = spaces.scalar.patch_spaces[patch]
    neu, nev = ps.ku_p.n_elements, ps.kv_p.n_elements
    ix = min(int(np.floor(x * neu)), neu - 1)
    iy = min(int(np.floor(y * nev)), nev - 1)
    for k, el in enumerate(spaces.elements):
        if el.patch == patch and el.ix == ix and el.iy == iy:
            return k, el
    raise ValueError("point outside patch")


def eval_vector_basis(spaces: DiscreteSpaces, patch: int, point):
    """Global vector functions nonzero at a patch point.

    Returns a list of ``(dof, value, divergence)`` with the physical value
    ``(t1 v1 + t2 v2) / g`` and surface divergence ``div_ref / g``; removed
    functions are skipped.  Points on element boundaries use the element on
    the lower-left side unless at the upper patch boundary.
    """
    x, y = point
    k, el = _locate(spaces, patch, x, y)
    loc = np.array([[(x - el.x0) / (el.x1 - el.x0), (y - el.y0) / (el.y1 - el.y0)]])
    ev = evaluate_element(spaces, k, loc)
    out = []
    for a, (dof, s) in enumerate(zip(spaces.vector_dofs[k], spaces.vector_sign[k])):
        if dof < 0:
            continue
        out.append((int(dof), s * ev.vec[a, 0] / ev.g[0], s * ev.div[a, 0] / ev.g[0]))
    combined = {}
    for dof, v, d in out:
        pv, pd = combined.get(dof, (0.0, 0.0))
        combined[dof] = (pv + v, pd + d)
    return [(dof, v, d) for dof, (v, d) in sorted(combined.items())]


def eval_scalar_basis(spaces: DiscreteSpaces, patch: int, point):
    """Global scalar functions nonzero at a patch point as ``(dof, value)``."""
    x, y = point
    k, el = _locate(spaces, patch, x, y)
    loc = np.array([[(x - el.x0) / (el.x1 - el.x0), (y - el.y0) / (el.y1 - el.y0)]])
    ev = evaluate_element(spaces, k, loc, geometry=False)
    return [(int(d), float(v)) for d, v in zip(spaces.scalar_dofs[k], ev.scalar[:, 0])]


def _refine_1d(coarse: KnotVector, fine: KnotVector) -> np.ndarray:
    t = np.linspace(0.0, 1.0, 4 * fine.n_basis + 7)
    Bf, Bc = eval_basis(fine, t), eval_basis(coarse, t)
    T, *_ = np.linalg.lstsq(Bf, Bc, rcond=None)
    T[np.abs(T) < 1e-13] = 0.0
    return T


def prolongation(coarse: DiscreteSpaces, fine: DiscreteSpaces):
    """Coefficient maps expressing coarse basis functions in the fine bases.

    Returns dense ``(S, V)`` with ``S`` of shape (fine scalar, coarse scalar)
    and ``V`` of shape (fine vector, coarse vector).
    """
    if coarse.degree != fine.degree or coarse.surface is not fine.surface and len(
            coarse.surface) != len(fine.surface):
        raise ValueError("spaces must share degree and patch layout")
    S = np.zeros((fine.scalar.dim, coarse.scalar.dim))
    V = np.zeros((fine.vector.dim, coarse.vector.dim))
    for n, (pc, pf) in enumerate(zip(coarse.scalar.patch_spaces, fine.scalar.patch_spaces)):
        Tu_p, Tv_p = _refine_1d(pc.ku_p, pf.ku_p), _refine_1d(pc.kv_p, pf.kv_p)
        Tu_d, Tv_d = _refine_1d(pc.ku_d, pf.ku_d), _refine_1d(pc.kv_d, pf.kv_d)
        S[fine.scalar.patch_range(n), coarse.scalar.patch_range(n)] = np.kron(Tu_d, Tv_d)
        local = np.zeros((pf.n_vector, pc.n_vector))
        local[:pf.n_fam1, :pc.n_fam1] = np.kron(Tu_p, Tv_d)
        local[pf.n_fam1:, pc.n_fam1:] = np.kron(Tu_d, Tv_p)
        cl2g, cs = coarse.vector.loc2glob[n], coarse.vector.sign[n]
        fl2g, fs = fine.vector.loc2glob[n], fine.vector.sign[n]
        # coarse global -> coarse local coefficients of this patch
        C = np.zeros((pc.n_vector, coarse.vector.dim))
        keep = cl2g >= 0
        C[np.flatnonzero(keep), cl2g[keep]] = cs[keep]
        F = local @ C
        fkeep = fl2g >= 0
        V[fl2g[fkeep]] = F[fkeep] * fs[fkeep][:, None]
    return S, V
