"""B-spline bases and rational tensor-product (NURBS) surfaces.

Basis functions follow the Cox--de Boor recursion on half-open knot spans,
with the right end of the parameter interval treated as a left limit so that
the last basis function equals one at ``x = 1``.  All evaluation routines are
vectorised over points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

__all__ = [
    "KnotVector",
    "NurbsPatch",
    "basis_nonzero",
    "eval_basis",
    "eval_basis_derivative",
    "eval_curve",
    "eval_surface",
    "surface_derivatives",
    "surface_jacobian_and_normal",
]


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class KnotVector:
    """A p-open knot vector on [0, 1].

    Knots given on another interval are rescaled affinely on construction.
    """

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        p = int(self.degree)
        if p < 0:
            raise GeometryError(f"negative degree {p}")
        xi = np.asarray(self.knots, dtype=float).ravel()
        if xi.size < 2 * (p + 1):
            raise GeometryError(
                f"degree {p} needs at least {2 * (p + 1)} knots, got {xi.size}")
        if np.any(np.diff(xi) < 0):
            raise GeometryError("knot vector is not non-decreasing")
        lo, hi = xi[0], xi[-1]
        if not hi > lo:
            raise GeometryError("knot vector spans an empty interval")
        if lo != 0.0 or hi != 1.0:
            xi = (xi - lo) / (hi - lo)
            xi[0:p + 1] = 0.0
            xi[-(p + 1):] = 1.0
        if np.any(xi[:p + 1] != 0.0) or np.any(xi[-(p + 1):] != 1.0):
            raise GeometryError(f"knot vector is not {p}-open")
        _, counts = np.unique(xi, return_counts=True)
        if counts[0] != p + 1 or counts[-1] != p + 1:
            raise GeometryError("end knots must have multiplicity exactly p+1")
        if np.any(counts[1:-1] > p + 1):
            raise GeometryError("interior knot multiplicity exceeds p+1")
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "knots", _readonly(xi))

    @classmethod
    def uniform(cls, degree: int, n_elements: int) -> "KnotVector":
        """Open knot vector with ``n_elements`` equal spans and simple interior knots."""
        inner = np.linspace(0.0, 1.0, n_elements + 1)[1:-1]
        xi = np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])
        return cls(degree, xi)

    @property
    def n_basis(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def n_elements(self) -> int:
        return self.breakpoints.size - 1

    def derived(self) -> "KnotVector":
        """Knot vector of the derivative space (degree p-1, end knots dropped)."""
        if self.degree < 1:
            raise GeometryError("degree-0 space has no derivative space")
        return KnotVector(self.degree - 1, self.knots[1:-1])

    def find_span(self, x) -> np.ndarray:
        """Index ``s`` with ``knots[s] <= x < knots[s+1]`` (left limit at 1)."""
        x = np.asarray(x, dtype=float)
        span = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(span, self.degree, self.n_basis - 1)

    def greville(self) -> np.ndarray:
        p = self.degree
        if p == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        return np.array([self.knots[i + 1:i + p + 1].mean()
                         for i in range(self.n_basis)])

    def __repr__(self):
        return f"KnotVector(degree={self.degree}, knots={self.knots.tolist()})"


def basis_nonzero(kv: KnotVector, x, span=None, derivative=False):
    """Values of the ``p+1`` basis functions that are nonzero on each span.

    Parameters
    ----------
    kv : KnotVector
    x : array_like, shape (N,)
    span : array_like of int, optional
        Knot span per point.  Passing it pins points that lie on a knot to a
        chosen element, which the assembly code relies on.
    derivative : bool
        Also return the first derivatives.

    Returns
    -------
    span : ndarray, shape (N,)
        Function ``span - p + r`` owns column ``r`` of the value arrays.
    values : ndarray, shape (N, p+1)
    dvalues : ndarray, shape (N, p+1)
        Only when ``derivative`` is true.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    span = kv.find_span(x) if span is None else np.broadcast_to(
        np.asarray(span, dtype=int), x.shape)
    p, U = kv.degree, kv.knots
    N = np.zeros(x.shape + (p + 1,))
    N[..., 0] = 1.0
    left = np.zeros(x.shape + (p + 1,))
    right = np.zeros(x.shape + (p + 1,))
    prev = N[..., :1].copy()
    for j in range(1, p + 1):
        left[..., j] = x - U[span + 1 - j]
        right[..., j] = U[span + j] - x
        saved = np.zeros(x.shape)
        for r in range(j):
            temp = N[..., r] / (right[..., r + 1] + left[..., j - r])
            N[..., r] = saved + right[..., r + 1] * temp
            saved = left[..., j - r] * temp
        N[..., j] = saved
        if j == p - 1:
            prev = N[..., :p].copy()
    if not derivative:
        return span, N
    dN = np.zeros_like(N)
    if p > 0:
        for r in range(p + 1):
            i = span - p + r
            if r >= 1:
                dN[..., r] += prev[..., r - 1] / (U[i + p] - U[i])
            if r <= p - 1:
                dN[..., r] -= prev[..., r] / (U[i + p + 1] - U[i + 1])
        dN *= p
    return span, N, dN


def _dense(kv, span, vals):
    out = np.zeros(span.shape + (kv.n_basis,))
    p = kv.degree
    rows = np.arange(span.size)
    flat = out.reshape(-1, kv.n_basis)
    v = vals.reshape(-1, p + 1)
    s = span.ravel()
    for r in range(p + 1):
        flat[rows, s - p + r] = v[:, r]
    return out


def eval_basis(kv: KnotVector, x) -> np.ndarray:
    """All ``k`` basis functions at ``x``; shape ``x.shape + (k,)``."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("evaluation point outside [0, 1]")
    span, vals = basis_nonzero(kv, x.ravel())
    return _dense(kv, span, vals).reshape(x.shape + (kv.n_basis,))


def eval_basis_derivative(kv: KnotVector, x) -> np.ndarray:
    """First derivatives of all basis functions at ``x``."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("evaluation point outside [0, 1]")
    span, _, dvals = basis_nonzero(kv, x.ravel(), derivative=True)
    return _dense(kv, span, dvals).reshape(x.shape + (kv.n_basis,))


def eval_curve(kv: KnotVector, control_points, x, weights=None) -> np.ndarray:
    """Rational (or polynomial, if ``weights`` is None) spline curve."""
    P = np.asarray(control_points, dtype=float)
    w = np.ones(P.shape[0]) if weights is None else np.asarray(weights, float)
    B = eval_basis(kv, x) * w
    return (B @ P) / B.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class NurbsPatch:
    """Rational tensor-product patch mapping [0,1]^2 into R^3.

    ``points[j1, j2]`` is the control point for basis pair ``(j1, j2)``,
    ``j1`` along the first (``u``) direction.
    """

    ku: KnotVector
    kv: KnotVector
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        shape = (self.ku.n_basis, self.kv.n_basis)
        if P.shape != shape + (3,):
            raise GeometryError(
                f"control net has shape {P.shape[:2]}, knot vectors need {shape}")
        if w.shape != shape:
            raise GeometryError(f"weights have shape {w.shape}, expected {shape}")
        if not np.all(np.isfinite(P)) or not np.all(np.isfinite(w)):
            raise GeometryError("non-finite control data")
        if np.any(w <= 0.0):
            raise GeometryError("weights must be strictly positive")
        object.__setattr__(self, "points", _readonly(P))
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def degrees(self):
        return self.ku.degree, self.kv.degree

    @property
    def shape(self):
        return self.ku.n_basis, self.kv.n_basis

    def homogeneous(self) -> np.ndarray:
        return np.concatenate(
            [self.points * self.weights[..., None], self.weights[..., None]], axis=-1)

    def with_points(self, points) -> "NurbsPatch":
        return NurbsPatch(self.ku, self.kv, points, self.weights)

    def __call__(self, x, y):
        return eval_surface(self, x, y)


def _homogeneous_sums(patch, x, y, derivative):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape
    x, y = x.ravel(), y.ravel()
    p1, p2 = patch.degrees
    if derivative:
        su, Bu, dBu = basis_nonzero(patch.ku, x, derivative=True)
        sv, Bv, dBv = basis_nonzero(patch.kv, y, derivative=True)
    else:
        su, Bu = basis_nonzero(patch.ku, x)
        sv, Bv = basis_nonzero(patch.kv, y)
    iu = su[:, None] - p1 + np.arange(p1 + 1)
    iv = sv[:, None] - p2 + np.arange(p2 + 1)
    n = x.size
    Pw = patch.homogeneous()[iu[:, :, None], iv[:, None, :]].reshape(n, -1, 4)

    def contract(A, B):
        return np.einsum("nc,nck->nk", (A[:, :, None] * B[:, None, :]).reshape(n, -1), Pw)

    S = contract(Bu, Bv)
    if not derivative:
        return shape, S
    return shape, S, contract(dBu, Bv), contract(Bu, dBv)


def eval_surface(patch: NurbsPatch, x, y) -> np.ndarray:
    """Physical points of the patch at parameters ``(x, y)``."""
    shape, S = _homogeneous_sums(patch, x, y, False)
    return (S[:, :3] / S[:, 3:]).reshape(shape + (3,))


def surface_derivatives(patch: NurbsPatch, x, y):
    """Points and the two parametric tangents, by the quotient rule.

    Returns ``(X, t1, t2)`` with shapes ``(..., 3)``.
    """
    shape, S, Su, Sv = _homogeneous_sums(patch, x, y, True)
    w = S[:, 3:]
    X = S[:, :3] / w
    t1 = (Su[:, :3] - X * Su[:, 3:]) / w
    t2 = (Sv[:, :3] - X * Sv[:, 3:]) / w
    return (X.reshape(shape + (3,)), t1.reshape(shape + (3,)),
            t2.reshape(shape + (3,)))


def surface_jacobian_and_normal(patch: NurbsPatch, x, y, tol=1e-12):
    """Tangents, unit normal ``t1 x t2 / |t1 x t2|`` and area element.

    Raises
    ------
    GeometryError
        Where ``|t1 x t2|`` falls below ``tol`` times the squared size of the
        control net.
    """
    _, t1, t2 = surface_derivatives(patch, x, y)
    c = np.cross(t1, t2)
    g = np.linalg.norm(c, axis=-1)
    P = patch.points.reshape(-1, 3)
    scale = np.ptp(P, axis=0).max() if P.shape[0] > 1 else 1.0
    if np.any(g < tol * max(scale, 1e-300) ** 2):
        raise GeometryError("degenerate surface point (vanishing area element)")
    return t1, t2, c / g[..., None], g
