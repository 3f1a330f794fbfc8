"""Gauss--Legendre rules and Duffy-type rules for singular element pairs.

Element pairs are integrated over ``[0,1]^2 x [0,1]^2`` in canonical local
coordinates.  The singular cases use relative coordinates along directions
where the two elements overlap and a Duffy (pyramid) split around the
singular point, so the transform Jacobian cancels a ``1/|x - y|`` kernel:

* ``coincident``: both elements identical.  Eight sub-domains.
* ``edge``: the shared edge is ``x[:, 0] == 0 == y[:, 0]`` and a point on it
  has the same second coordinate in both elements.  Six sub-domains.
* ``vertex``: the shared vertex is the local origin of both elements.  Four
  sub-domains.
* ``regular``: plain tensor product.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import QuadratureError

__all__ = [
    "CASES",
    "QuadratureRule",
    "SingularPairRule",
    "gauss_legendre",
    "singular_pair_rule",
    "tensor_rule",
]

CASES = ("coincident", "edge", "vertex", "regular")
MAX_POINTS = 64


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points and positive weights on [0, 1] (or [0, 1]^d for tensor rules)."""

    points: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.weights.size

    def integrate(self, f):
        return np.sum(self.weights * f(self.points), axis=-1)


@dataclass(frozen=True, eq=False)
class SingularPairRule:
    """Paired points ``x[q], y[q]`` in the unit square with weights ``w[q]``."""

    case: str
    order: int
    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.weights.size


_cache: dict = {}
_lock = threading.Lock()


def _cached(key, build):
    rule = _cache.get(key)
    if rule is None:
        rule = build()
        for a in vars(rule).values():
            if isinstance(a, np.ndarray):
                a.setflags(write=False)
        with _lock:
            rule = _cache.setdefault(key, rule)
    return rule


def gauss_legendre(n: int) -> QuadratureRule:
    """``n``-point Gauss--Legendre rule on [0, 1]; exact to degree ``2n - 1``."""
    n = int(n)
    if not 1 <= n <= MAX_POINTS:
        raise ValueError(f"Gauss-Legendre order must lie in [1, {MAX_POINTS}], got {n}")

    def build():
        t, w = leggauss(n)
        return QuadratureRule(0.5 * (t + 1.0), 0.5 * w)

    return _cached(("gl", n), build)


def tensor_rule(n: int) -> QuadratureRule:
    """``n x n`` tensor Gauss rule on the unit square, points shaped (n*n, 2)."""

    def build():
        g = gauss_legendre(n)
        X, Y = np.meshgrid(g.points, g.points, indexing="ij")
        W = np.outer(g.weights, g.weights)
        return QuadratureRule(np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel())

    return _cached(("tensor", n), build)


def _grid(n, dim):
    g = gauss_legendre(n)
    pts = np.array(list(itertools.product(g.points, repeat=dim)))
    wts = np.prod(np.array(list(itertools.product(g.weights, repeat=dim))), axis=1)
    return pts, wts


def _pyramids(xi, eta, dim):
    """Duffy split of [0,1]^dim about the origin.

    Returns the list of mapped points (one array per pyramid) and the common
    Jacobian ``xi**(dim-1)``.
    """
    out = []
    for k in range(dim):
        cols = []
        e = iter(range(eta.shape[1]))
        for d in range(dim):
            cols.append(xi if d == k else xi * eta[:, next(e)])
        out.append(np.stack(cols, axis=1))
    return out, xi ** (dim - 1)


def _slide(z, s):
    """Overlap along one direction: pairs with ``b_y - b_x = z`` from ``|z|`` and ``s``."""
    a = np.abs(z)
    lo = (1.0 - a) * s
    bx = np.where(z >= 0, lo, lo + a)
    by = np.where(z >= 0, lo + a, lo)
    return bx, by, 1.0 - a


def _coincident(n):
    pts, wts = _grid(n, 4)
    xi, eta, s1, s2 = pts.T
    xs, ys, ws = [], [], []
    for tri in range(2):
        z1, z2 = (xi, xi * eta) if tri == 0 else (xi * eta, xi)
        for sg1, sg2 in itertools.product((1.0, -1.0), repeat=2):
            bx1, by1, m1 = _slide(sg1 * z1, s1)
            bx2, by2, m2 = _slide(sg2 * z2, s2)
            xs.append(np.stack([bx1, bx2], axis=1))
            ys.append(np.stack([by1, by2], axis=1))
            ws.append(wts * xi * m1 * m2)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


def _edge(n):
    pts, wts = _grid(n, 4)
    xi, eta, s = pts[:, 0], pts[:, 1:3], pts[:, 3]
    mapped, jac = _pyramids(xi, eta, 3)
    xs, ys, ws = [], [], []
    for u in mapped:
        ax, ay, az = u.T
        for sg in (1.0, -1.0):
            bx, by, m = _slide(sg * az, s)
            xs.append(np.stack([ax, bx], axis=1))
            ys.append(np.stack([ay, by], axis=1))
            ws.append(wts * jac * m)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


def _vertex(n):
    pts, wts = _grid(n, 4)
    mapped, jac = _pyramids(pts[:, 0], pts[:, 1:], 4)
    xs = [u[:, :2] for u in mapped]
    ys = [u[:, 2:] for u in mapped]
    ws = [wts * jac for _ in mapped]
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


def _regular(n):
    t = tensor_rule(n)
    q = len(t)
    i = np.repeat(np.arange(q), q)
    j = np.tile(np.arange(q), q)
    return t.points[i], t.points[j], t.weights[i] * t.weights[j]


_BUILDERS = {"coincident": _coincident, "edge": _edge, "vertex": _vertex,
             "regular": _regular}


def singular_pair_rule(case: str, n: int) -> SingularPairRule:
    """Quadrature rule for an element pair in canonical configuration.

    ``n`` Gauss points are used in every one of the four integration
    variables of each sub-domain.
    """
    if case not in _BUILDERS:
        raise QuadratureError(f"unsupported adjacency case {case!r}")
    n = int(n)
    if not 1 <= n <= MAX_POINTS:
        raise ValueError(f"quadrature order must lie in [1, {MAX_POINTS}], got {n}")

    def build():
        x, y, w = _BUILDERS[case](n)
        return SingularPairRule(case, n, x, y, w)

    return _cached(("pair", case, n), build)
