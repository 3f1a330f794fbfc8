"""Galerkin assembly of the inductive, capacitive, divergence and mass blocks.

Element pairs are sorted into four groups:

* touching pairs (same element, shared edge, shared vertex) use the
  singular pair rules.  The kernel is split into the static part
  ``1/(4 pi r)``, integrated once per geometry with the full singular
  order, and the smooth remainder ``(exp(-1j k r) - 1)/(4 pi r)``, which
  a low-order rule of the same type resolves at every frequency;
* near pairs (element centres closer than ``near_factor`` times the larger
  diameter) use a tensor rule of doubled order;
* all other pairs share one global point set, so their contribution is a
  product of a dense kernel matrix with sparse basis matrices.

Only unordered pairs are integrated; the transposed block is scattered from
the same numbers, so ``L`` and ``P`` are complex symmetric by construction.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import GeometryError, QuadratureError
from .quadrature import singular_pair_rule, tensor_rule
from .spaces import DiscreteSpaces, evaluate_element

__all__ = [
    "EPS0",
    "MU0",
    "Medium",
    "VACUUM",
    "QuadratureOrders",
    "SystemMatrices",
    "Assembler",
    "greens",
    "assemble",
    "assemble_sweep",
    "assemble_excitation_plane_wave",
    "far_field",
    "default_threads",
    "write_matrix",
    "read_matrix",
]

MU0 = 1.25663706212e-6
EPS0 = 8.8541878128e-12
THREADS_ENV = "IGAPEEC_THREADS"


@dataclass(frozen=True)
class Medium:
    """Homogeneous lossless background."""

    epsilon: float = EPS0
    mu: float = MU0

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError("permittivity must be a positive real")
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise ValueError("permeability must be a positive real")

    @property
    def c(self) -> float:
        return 1.0 / np.sqrt(self.epsilon * self.mu)

    @property
    def eta(self) -> float:
        return np.sqrt(self.mu / self.epsilon)

    def wavenumber(self, omega: float) -> float:
        return float(omega) * np.sqrt(self.epsilon * self.mu)


VACUUM = Medium()


def greens(kappa, x, y):
    """Free-space kernel ``exp(-1j k r) / (4 pi r)`` with ``r = |x - y|``."""
    r = np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1)
    if np.any(r == 0.0):
        raise ValueError("kernel is singular at coincident points")
    return np.exp(-1j * kappa * r) / (4.0 * np.pi * r)


def _dynamic_kernel(kappa, r):
    """``(exp(-1j k r) - 1) / (4 pi r)``, finite and accurate for small ``k r``."""
    h = 0.5 * kappa * r
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (-2.0 * np.sin(h) ** 2 - 1j * np.sin(2.0 * h)) / (4.0 * np.pi * r)
    return np.where(r > 0, out, -1j * kappa / (4.0 * np.pi))


@dataclass(frozen=True)
class QuadratureOrders:
    """Gauss points per direction.

    ``regular=None`` means ``p + 2``.  ``dynamic`` is the order of the singular
    rule used for the smooth frequency-dependent kernel remainder.
    """

    regular: Optional[int] = None
    singular: int = 10
    dynamic: int = 4
    near_factor: float = 2.0

    def regular_order(self, degree):
        return int(self.regular) if self.regular is not None else degree + 2


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    """Blocks of the saddle-point system at one angular frequency."""

    L: np.ndarray
    P: np.ndarray
    G: sparse.csr_matrix
    M: sparse.csr_matrix
    v_ex: np.ndarray
    omega: float
    medium: Medium = VACUUM

    @property
    def n_current(self):
        return self.L.shape[0]

    @property
    def n_charge(self):
        return self.P.shape[0]

    def with_excitation(self, v_ex) -> "SystemMatrices":
        v = np.asarray(v_ex, dtype=complex)
        if v.shape[0] != self.n_current:
            raise ValueError(f"excitation has {v.shape[0]} rows, expected {self.n_current}")
        return SystemMatrices(self.L, self.P, self.G, self.M, v, self.omega, self.medium)


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


# canonical pair coordinates -> element-local coordinates, as (A, b): A @ p + b
_SIDE_MAPS = {
    0: (np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.0, 0.0])),
    1: (np.array([[-1.0, 0.0], [0.0, 1.0]]), np.array([1.0, 0.0])),
    2: (np.array([[0.0, 1.0], [-1.0, 0.0]]), np.array([0.0, 1.0])),
    3: (np.eye(2), np.array([0.0, 0.0])),
}
# (start corner, end corner) of each side, corners numbered cx + 2*cy
_SIDE_CORNERS = {0: (0, 1), 1: (1, 3), 2: (2, 3), 3: (0, 2)}
_IDENTITY = (np.eye(2), np.zeros(2))


def _side_map(side, flip):
    A, b = _SIDE_MAPS[side]
    if not flip:
        return A, b
    F, f = np.array([[1.0, 0.0], [0.0, -1.0]]), np.array([0.0, 1.0])
    return A @ F, A @ f + b


def _corner_map(c):
    cx, cy = c & 1, c >> 1
    return np.diag([-1.0 if cx else 1.0, -1.0 if cy else 1.0]), np.array([float(cx), float(cy)])


def _apply(m, pts):
    A, b = m
    out = pts @ A.T + b
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class _Touching:
    e: int
    f: int
    case: str
    map_e: tuple
    map_f: tuple


def _vertex_ids(spaces, tol):
    corners = []
    for el in spaces.elements:
        patch = spaces.surface[el.patch]
        xs = np.array([el.x0, el.x1, el.x0, el.x1])
        ys = np.array([el.y0, el.y0, el.y1, el.y1])
        corners.append(patch(xs, ys))
    C = np.concatenate(corners)
    parent = np.arange(C.shape[0])

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(cKDTree(C).query_pairs(tol)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(C.shape[0])])
    _, ids = np.unique(roots, return_inverse=True)
    return ids.reshape(-1, 4), C.reshape(-1, 4, 3)


def _classify(spaces, tol, near_factor):
    """Touching pairs with canonical maps, and near (non-touching) pairs."""
    vid, corners = _vertex_ids(spaces, tol)
    E = vid.shape[0]
    for k in range(E):
        if len(set(vid[k])) != 4:
            raise GeometryError(f"element {k} has collapsed corners")
    by_vertex = {}
    for k in range(E):
        for v in vid[k]:
            by_vertex.setdefault(int(v), []).append(k)
    touching = {}
    for ks in by_vertex.values():
        for a in ks:
            for b in ks:
                if a <= b:
                    touching[(a, b)] = None
    out = []
    for (e, f) in sorted(touching):
        if e == f:
            out.append(_Touching(e, f, "coincident", _IDENTITY, _IDENTITY))
            continue
        shared = sorted(set(vid[e]) & set(vid[f]))
        ce = [int(np.flatnonzero(vid[e] == v)[0]) for v in shared]
        cf = [int(np.flatnonzero(vid[f] == v)[0]) for v in shared]
        if len(shared) == 1:
            out.append(_Touching(e, f, "vertex", _corner_map(ce[0]), _corner_map(cf[0])))
        elif len(shared) == 2:
            se = [s for s, cs in _SIDE_CORNERS.items() if set(cs) == set(ce)]
            sf = [s for s, cs in _SIDE_CORNERS.items() if set(cs) == set(cf)]
            if not se or not sf:
                raise QuadratureError(f"elements {e} and {f} share two non-adjacent corners")
            se, sf = se[0], sf[0]
            start_e = vid[e][_SIDE_CORNERS[se][0]]
            flip = vid[f][_SIDE_CORNERS[sf][0]] != start_e
            out.append(_Touching(e, f, "edge", _side_map(se, False), _side_map(sf, flip)))
        else:
            raise QuadratureError(f"cannot resolve adjacency of elements {e} and {f}")
    centre = corners.mean(axis=1)
    diam = np.maximum(np.linalg.norm(corners[:, 3] - corners[:, 0], axis=1),
                      np.linalg.norm(corners[:, 2] - corners[:, 1], axis=1))
    D = cdist(centre, centre)
    limit = near_factor * np.maximum(diam[:, None], diam[None, :])
    near_mask = np.triu(D < limit, 1)
    for t in out:
        near_mask[t.e, t.f] = False
    near = np.argwhere(near_mask)
    return out, near


def _pair_product(Va, w, Vb):
    """``sum_q w_q Va[a, q] . Vb[b, q]`` for vector data of shape (n, q, 3)."""
    na, nb = Va.shape[0], Vb.shape[0]
    A = (Va * w[None, :, None]).reshape(na, -1)
    return A @ Vb.reshape(nb, -1).T


def _scatter(n, rows, cols, vals, out=None):
    """Dense ``n x n`` matrix from COO triplets (duplicates summed)."""
    idx = rows.astype(np.int64) * n + cols
    re = np.bincount(idx, weights=vals.real, minlength=n * n)
    if np.iscomplexobj(vals):
        im = np.bincount(idx, weights=vals.imag, minlength=n * n)
        dense = (re + 1j * im).reshape(n, n)
    else:
        dense = re.reshape(n, n)
    if out is not None:
        out += dense
        return out
    return dense


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add_pair(self, di, dj, loc, same):
        """Add block ``loc`` at (di, dj) and its transpose at (dj, di)."""
        r = np.repeat(di, dj.size)
        c = np.tile(dj, di.size)
        v = loc.ravel()
        self.rows.append(r)
        self.cols.append(c)
        self.vals.append(v)
        if not same:
            self.rows.append(c)
            self.cols.append(r)
            self.vals.append(v)

    def to_dense(self, n, dtype):
        if not self.rows:
            return np.zeros((n, n), dtype=dtype)
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals).astype(dtype)
        keep = (rows >= 0) & (cols >= 0)
        return _scatter(n, rows[keep], cols[keep], vals[keep])


class Assembler:
    """Assembly of one discretisation for any number of frequencies.

    Geometry-dependent data (point sets, pair classes, static singular
    integrals) is computed once and shared across frequencies.
    """

    def __init__(self, spaces: DiscreteSpaces, medium: Medium = VACUUM,
                 orders: Optional[QuadratureOrders] = None, threads: Optional[int] = None):
        self.spaces = spaces
        self.medium = medium
        self.orders = orders or QuadratureOrders()
        self.threads = max(1, int(threads)) if threads is not None else default_threads()
        self._static = None
        self._regular = None
        self._classes = None

    # -- geometry-dependent preprocessing ---------------------------------

    def _element_data(self, n):
        rule = tensor_rule(n)
        X, V, D, S, SG = [], [], [], [], []
        for k in range(self.spaces.n_elements):
            ev = evaluate_element(self.spaces, k, rule.points)
            if np.any(ev.g <= 0) or not np.all(np.isfinite(ev.g)):
                raise GeometryError(f"degenerate area element in element {k}")
            w = rule.weights * ev.area
            X.append(ev.X)
            V.append(ev.vec * w[None, :, None])
            D.append(ev.div * w)
            S.append(ev.scalar * (w * ev.g))
            SG.append(ev.scalar)
        return (np.array(X), np.array(V), np.array(D), np.array(S), np.array(SG),
                rule.weights)

    @property
    def classes(self):
        if self._classes is None:
            tol = 1e-8 * self.spaces.surface.bbox_diagonal
            self._classes = _classify(self.spaces, tol, self.orders.near_factor)
        return self._classes

    @property
    def regular(self):
        if self._regular is None:
            n = self.orders.regular_order(self.spaces.degree)
            self._regular = self._element_data(n)
        return self._regular

    def sparse_blocks(self):
        """The frequency-independent sparse blocks ``(G, M)``."""
        sp = self.spaces
        X, V, D, S, SG, _ = self.regular
        nj, nphi = sp.vector.dim, sp.scalar.dim
        sgn = sp.vector_sign
        rows, cols, vals = [], [], []
        mrows, mcols, mvals = [], [], []
        for k in range(sp.n_elements):
            # G: scalar x divergence; M: scalar x scalar, both with g dx
            Gl = (SG[k] @ D[k].T) * sgn[k][None, :]
            Ml = S[k] @ SG[k].T
            di, dj = sp.scalar_dofs[k], sp.vector_dofs[k]
            keep = dj >= 0
            rows.append(np.repeat(di, keep.sum()))
            cols.append(np.tile(dj[keep], di.size))
            vals.append(Gl[:, keep].ravel())
            mrows.append(np.repeat(di, di.size))
            mcols.append(np.tile(di, di.size))
            mvals.append(Ml.ravel())
        G = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(nphi, nj)).tocsr()
        M = sparse.coo_matrix((np.concatenate(mvals), (np.concatenate(mrows), np.concatenate(mcols))),
                              shape=(nphi, nphi)).tocsr()
        M = 0.5 * (M + M.T)
        G.sum_duplicates()
        M.sum_duplicates()
        return G.tocsr(), M.tocsr()

    def _point_matrices(self):
        """Sparse maps from global DOFs to weighted values at the regular points."""
        sp = self.spaces
        X, V, D, S, SG, _ = self.regular
        E, nv, nq, _ = V.shape
        ns = S.shape[1]
        pts = np.arange(E * nq).reshape(E, nq)
        mats = []
        for d in range(3):
            r = np.broadcast_to(pts[:, None, :], (E, nv, nq))
            c = np.broadcast_to(sp.vector_dofs[:, :, None], (E, nv, nq))
            v = V[..., d] * sp.vector_sign[:, :, None]
            keep = c >= 0
            mats.append(sparse.csr_matrix((v[keep], (r[keep], c[keep])),
                                          shape=(E * nq, sp.vector.dim)))
        r = np.broadcast_to(pts[:, None, :], (E, ns, nq))
        c = np.broadcast_to(sp.scalar_dofs[:, :, None], (E, ns, nq))
        B = sparse.csr_matrix((S.ravel(), (r.ravel(), c.ravel())),
                              shape=(E * nq, sp.scalar.dim))
        return mats, B

    def _regular_distances(self):
        X = self.regular[0]
        E, nq, _ = X.shape
        R = cdist(X.reshape(-1, 3), X.reshape(-1, 3))
        mask = np.zeros((E, E), dtype=bool)
        touching, near = self.classes
        for t in touching:
            mask[t.e, t.f] = mask[t.f, t.e] = True
        mask[near[:, 0], near[:, 1]] = True
        mask[near[:, 1], near[:, 0]] = True
        keep = ~np.repeat(np.repeat(mask, nq, axis=0), nq, axis=1)
        R[~keep] = 1.0
        return R, keep

    def _touching_static(self, t: _Touching, rule):
        """Static singular integrals and the point data of the dynamic rule."""
        sp = self.spaces
        ea = evaluate_element(sp, t.e, _apply(t.map_e, rule.x))
        fa = evaluate_element(sp, t.f, _apply(t.map_f, rule.y))
        r = np.linalg.norm(ea.X - fa.X, axis=1)
        if np.any(r <= 0):
            raise QuadratureError("singular rule produced coincident points")
        w = rule.weights * (ea.area * fa.area) / (4.0 * np.pi * r)
        Ll = _pair_product(ea.vec, w, fa.vec)
        Pl = (ea.scalar * (w * ea.g * fa.g)) @ fa.scalar.T
        return Ll, Pl

    def _touching_dynamic_data(self, t: _Touching, rule):
        sp = self.spaces
        ea = evaluate_element(sp, t.e, _apply(t.map_e, rule.x))
        fa = evaluate_element(sp, t.f, _apply(t.map_f, rule.y))
        r = np.linalg.norm(ea.X - fa.X, axis=1)
        w = rule.weights * (ea.area * fa.area)
        return (r, w, ea.vec, fa.vec, ea.scalar * ea.g, fa.scalar * fa.g)

    def _map(self, fn, items):
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    @property
    def static(self):
        """Frequency-independent part: sparse blocks and static singular blocks."""
        if self._static is None:
            G, M = self.sparse_blocks()
            touching, _ = self.classes
            rules = {c: singular_pair_rule(c, self.orders.singular)
                     for c in ("coincident", "edge", "vertex")}
            blocks = self._map(lambda t: self._touching_static(t, rules[t.case]), touching)
            self._static = (G, M, blocks)
        return self._static

    # -- frequency-dependent parts --------------------------------------

    def _near_blocks(self, kappas):
        """Near-pair local blocks for all frequencies: lists over pairs of (L, P) per kappa."""
        _, near = self.classes
        if near.size == 0:
            return []
        n = 2 * self.orders.regular_order(self.spaces.degree)
        if not hasattr(self, "_near_data"):
            self._near_data = self._element_data(n)
        X, V, D, S, SG, _ = self._near_data

        def block(pair):
            e, f = pair
            R = cdist(X[e], X[f])
            out = []
            for kappa in kappas:
                K = np.exp(-1j * kappa * R) / (4.0 * np.pi * R)
                Ll = sum(V[e][:, :, d] @ K @ V[f][:, :, d].T for d in range(3))
                Pl = S[e] @ K @ S[f].T
                out.append((Ll, Pl))
            return out

        return self._map(block, [tuple(p) for p in near])

    def _dynamic_blocks(self, kappas):
        touching, _ = self.classes
        rules = {c: singular_pair_rule(c, self.orders.dynamic)
                 for c in ("coincident", "edge", "vertex")}

        def block(t):
            r, w, Ve, Vf, Se, Sf = self._touching_dynamic_data(t, rules[t.case])
            out = []
            for kappa in kappas:
                if kappa == 0.0:
                    out.append(None)
                    continue
                wk = w * _dynamic_kernel(kappa, r)
                Ll = _pair_product(Ve, wk, Vf)
                Pl = (Se * wk) @ Sf.T
                out.append((Ll, Pl))
            return out

        return self._map(block, touching)

    def assemble(self, omegas: Sequence[float]) -> list:
        """System matrices (with zero excitation) for each angular frequency."""
        omegas = [float(w) for w in omegas]
        if any(not np.isfinite(w) or w < 0 for w in omegas):
            raise ValueError("angular frequencies must be finite and non-negative")
        sp = self.spaces
        mu, eps = self.medium.mu, self.medium.epsilon
        kappas = [self.medium.wavenumber(w) for w in omegas]
        G, M, static_blocks = self.static
        touching, near = self.classes
        near_blocks = self._near_blocks(kappas)
        dyn_blocks = self._dynamic_blocks(kappas)
        A, B = self._point_matrices()
        R, keep = self._regular_distances()
        Rinv = np.where(keep, 1.0 / (4.0 * np.pi * R), 0.0)
        nj, nphi = sp.vector.dim, sp.scalar.dim
        vd, vs, sd = sp.vector_dofs, sp.vector_sign, sp.scalar_dofs
        results = []
        for k, (omega, kappa) in enumerate(zip(omegas, kappas)):
            K = Rinv if kappa == 0.0 else np.exp(-1j * kappa * R) * Rinv
            L = np.zeros((nj, nj), dtype=complex)
            for Ad in A:
                KA = (Ad.T @ K).T                   # dense (points, nj)
                L += (Ad.T @ KA)
            P = (B.T @ (B.T @ K).T).astype(complex)
            tl, tp = _Triplets(), _Triplets()
            for i, t in enumerate(touching):
                Ll, Pl = static_blocks[i]
                dyn = dyn_blocks[i][k]
                if dyn is not None:
                    Ll = Ll + dyn[0]
                    Pl = Pl + dyn[1]
                same = t.e == t.f
                if same:
                    Ll = 0.5 * (Ll + Ll.T)
                    Pl = 0.5 * (Pl + Pl.T)
                Ll = Ll * vs[t.e][:, None] * vs[t.f][None, :]
                tl.add_pair(vd[t.e], vd[t.f], Ll, same)
                tp.add_pair(sd[t.e], sd[t.f], Pl, same)
            for i, (e, f) in enumerate(near):
                Ll, Pl = near_blocks[i][k]
                Ll = Ll * vs[e][:, None] * vs[f][None, :]
                tl.add_pair(vd[e], vd[f], Ll, False)
                tp.add_pair(sd[e], sd[f], Pl, False)
            L += tl.to_dense(nj, complex)
            P += tp.to_dense(nphi, complex)
            L *= mu
            P /= eps
            if kappa == 0.0:
                L = L.real.astype(complex)
                P = P.real.astype(complex)
            results.append(SystemMatrices(L, P, G, M, np.zeros(nj, dtype=complex),
                                          omega, self.medium))
        return results


def _check_spaces(surface, spaces):
    if surface is not None and spaces.surface is not surface:
        raise ValueError("discrete spaces were built on a different surface")


def assemble(surface, spaces: DiscreteSpaces, medium: Medium = VACUUM, omega: float = 0.0,
             excitation=None, orders: Optional[QuadratureOrders] = None,
             threads: Optional[int] = None) -> SystemMatrices:
    """Assemble all blocks at one angular frequency.

    ``excitation`` is ``None`` (zero right-hand side), an array of length
    ``spaces.vector.dim`` or a callable ``f(spaces, kappa) -> array``.
    """
    _check_spaces(surface, spaces)
    mats = Assembler(spaces, medium, orders, threads).assemble([omega])[0]
    if excitation is None:
        return mats
    if callable(excitation):
        excitation = excitation(spaces, medium.wavenumber(omega))
    return mats.with_excitation(excitation)


def assemble_sweep(spaces: DiscreteSpaces, medium: Medium = VACUUM, omegas=(),
                   orders: Optional[QuadratureOrders] = None,
                   threads: Optional[int] = None) -> list:
    """Assemble at several frequencies, sharing all geometry work."""
    return Assembler(spaces, medium, orders, threads).assemble(omegas)


def assemble_excitation_plane_wave(spaces: DiscreteSpaces, direction, polarization, kappa,
                                   amplitude: complex = 1.0, order: Optional[int] = None):
    """Tested incident field ``v_i = int E_inc . v_i`` for a plane wave.

    ``E_inc(x) = amplitude * polarization * exp(-1j k direction . x)``.
    """
    d = np.asarray(direction, dtype=float)
    e = np.asarray(polarization, dtype=complex)
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValueError("propagation direction must be a unit vector")
    if abs(np.dot(d, e)) > 1e-12 * max(1.0, np.linalg.norm(e)):
        raise ValueError("polarization must be orthogonal to the propagation direction")
    n = order if order is not None else spaces.degree + 4
    rule = tensor_rule(n)
    v = np.zeros(spaces.vector.dim, dtype=complex)
    if amplitude == 0:
        return v
    for k in range(spaces.n_elements):
        ev = evaluate_element(spaces, k, rule.points)
        field = amplitude * np.exp(-1j * kappa * (ev.X @ d))
        loc = (ev.vec @ e) @ (field * rule.weights) * ev.area
        dofs = spaces.vector_dofs[k]
        keep = dofs >= 0
        np.add.at(v, dofs[keep], loc[keep] * spaces.vector_sign[k][keep])
    return v


def far_field(spaces: DiscreteSpaces, current, directions, kappa, order: Optional[int] = None):
    """Radiation vector ``N(r) = int j(y) exp(1j k r . y) dGamma(y)``.

    ``directions`` has shape (D, 3) of unit vectors; returns (D, 3).
    """
    J = np.asarray(current, dtype=complex)
    R = np.atleast_2d(np.asarray(directions, dtype=float))
    n = order if order is not None else spaces.degree + 4
    rule = tensor_rule(n)
    out = np.zeros((R.shape[0], 3), dtype=complex)
    for k in range(spaces.n_elements):
        ev = evaluate_element(spaces, k, rule.points)
        dofs = spaces.vector_dofs[k]
        c = np.where(dofs >= 0, J[np.maximum(dofs, 0)] * spaces.vector_sign[k], 0.0)
        jq = np.einsum("a,aqd->qd", c, ev.vec) * (rule.weights * ev.area)[:, None]
        phase = np.exp(1j * kappa * (R @ ev.X.T))           # (D, q)
        out += phase @ jq
    return out


def write_matrix(path, A):
    """Write a matrix as text: ``rows cols nnz`` header, then ``row col re im`` (1-based)."""
    if sparse.issparse(A):
        C = A.tocoo()
        rows, cols, vals = C.row, C.col, C.data.astype(complex)
        shape = A.shape
    else:
        A = np.atleast_2d(np.asarray(A))
        rows, cols = np.nonzero(A != 0)
        vals = A[rows, cols].astype(complex)
        shape = A.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate complex general\n")
        fh.write(f"{shape[0]} {shape[1]} {len(vals)}\n")
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{r + 1} {c + 1} {v.real:.17g} {v.imag:.17g}\n")


def read_matrix(path) -> np.ndarray:
    """Read a file written by :func:`write_matrix` into a dense complex array."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("%")]
    m, n, nnz = (int(t) for t in lines[0].split())
    A = np.zeros((m, n), dtype=complex)
    for ln in lines[1:1 + nnz]:
        r, c, re, im = ln.split()
        A[int(r) - 1, int(c) - 1] += float(re) + 1j * float(im)
    return A
