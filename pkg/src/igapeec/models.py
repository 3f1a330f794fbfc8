"""Generators for the shipped desk-scale geometries.

Run ``python -m igapeec.models OUTDIR`` to regenerate the JSON files that
are packaged under ``igapeec/data``.
"""

from __future__ import annotations

import json
import sys
from math import comb
from pathlib import Path

import numpy as np

from .geometry import MultipatchSurface, geometry_to_dict
from .splines import KnotVector, NurbsPatch

__all__ = [
    "flat_plate",
    "cube",
    "sphere",
    "strip_dipole",
    "two_port_strip",
    "tapered_dipole",
    "FACE_ROTATIONS",
]


def _rot(axis, deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    if axis == "x":
        R = [[1, 0, 0], [0, c, -s], [0, s, c]]
    else:
        R = [[c, 0, s], [0, 1, 0], [-s, 0, c]]
    R = np.array(R)
    R[np.abs(R) < 1e-15] = 0.0
    return R


# proper rotations taking the +z face to +z, -z, +x, -x, +y, -y
FACE_ROTATIONS = (np.eye(3), _rot("x", 180), _rot("y", 90), _rot("y", -90),
                  _rot("x", -90), _rot("x", 90))


def _bezier(points, weights):
    p1, p2 = points.shape[0] - 1, points.shape[1] - 1
    ku = KnotVector(p1, [0.0] * (p1 + 1) + [1.0] * (p1 + 1))
    kv = KnotVector(p2, [0.0] * (p2 + 1) + [1.0] * (p2 + 1))
    return NurbsPatch(ku, kv, points, weights)


def bilinear(corners) -> NurbsPatch:
    """Flat (or twisted) patch from corners ordered (0,0), (1,0), (0,1), (1,1)."""
    c = np.asarray(corners, dtype=float)
    P = np.array([[c[0], c[2]], [c[1], c[3]]])
    return _bezier(P, np.ones((2, 2)))


def flat_plate(size=1.0, center=(0.0, 0.0, 0.0)) -> MultipatchSurface:
    """Square plate of side ``size`` in the z = const plane."""
    h = 0.5 * size
    c = np.asarray(center, dtype=float)
    corners = [c + [-h, -h, 0], c + [h, -h, 0], c + [-h, h, 0], c + [h, h, 0]]
    return MultipatchSurface([bilinear(corners)])


def cube(edge=1.0) -> MultipatchSurface:
    """Closed cube centred at the origin, six outward-oriented bilinear faces."""
    h = 0.5 * edge
    top = [[-h, -h, h], [h, -h, h], [-h, h, h], [h, h, h]]
    faces = [bilinear([R @ np.array(p) for p in top]) for R in FACE_ROTATIONS]
    return MultipatchSurface(faces)


def _bernstein_product(f, g):
    """Coefficients of the product of two tensor Bernstein polynomials."""
    m1, m2 = f.shape[0] - 1, f.shape[1] - 1
    n1, n2 = g.shape[0] - 1, g.shape[1] - 1
    out = np.zeros((m1 + n1 + 1, m2 + n2 + 1))
    for i in range(m1 + 1):
        for j in range(m2 + 1):
            for k in range(n1 + 1):
                for l in range(n2 + 1):
                    c = (comb(m1, i) * comb(n1, k) / comb(m1 + n1, i + k)
                         * comb(m2, j) * comb(n2, l) / comb(m2 + n2, j + l))
                    out[i + k, j + l] += c * f[i, j] * g[k, l]
    return out


def _sphere_face():
    """Exact rational biquartic patch covering the cube face ``|x|,|y| <= z``.

    A rational biquadratic square bounded by four circular arcs in the
    stereographic plane (projection from the south pole) is lifted to the
    sphere by the inverse projection, which is quadratic in homogeneous
    coordinates.  Great circles map to the bounding arcs, so the patch edges
    are exact great-circle arcs.
    """
    c = 1.0 / (np.sqrt(3.0) + 1.0)          # corner (1,1,1)/sqrt(3)
    a = c * (2 * c + 1) / (c + 1)           # tangent intersection of the edge arc
    w1 = (c + 1) / np.sqrt(2.0)             # cosine of the half opening angle
    S = np.array([[-c, -a, -c], [0, 0, 0], [c, a, c]])
    T = np.array([[-c, 0, c], [-a, 0, a], [-c, 0, c]])
    W = np.array([[1, w1, 1], [w1, w1 * w1, w1], [1, w1, 1]])
    Sh, Th = S * W, T * W
    X = 2 * _bernstein_product(Sh, W)
    Y = 2 * _bernstein_product(Th, W)
    SS = _bernstein_product(Sh, Sh) + _bernstein_product(Th, Th)
    WW = _bernstein_product(W, W)
    Z = WW - SS
    H = WW + SS
    assert np.all(H > 0)
    return np.stack([X / H, Y / H, Z / H], axis=-1), H


def sphere(radius=1.0, center=(0.0, 0.0, 0.0)) -> MultipatchSurface:
    """Exact six-patch NURBS sphere (cubed-sphere layout, degree 4 x 4)."""
    P, H = _sphere_face()
    c = np.asarray(center, dtype=float)
    faces = [_bezier(radius * (P @ R.T) + c, H) for R in FACE_ROTATIONS]
    return MultipatchSurface(faces)


def _strip_patch(x0, x1, half_width, degree_u=1, n_u=2):
    """Flat strip patch in z=0 spanning ``x0..x1``; width may vary per column."""
    hw = np.broadcast_to(np.asarray(half_width, dtype=float), (n_u,))
    if degree_u == 1:
        ku = KnotVector(1, [0, 0] + list(np.linspace(0, 1, n_u)[1:-1]) + [1, 1])
    else:
        ku = KnotVector(degree_u, [0.0] * 3 + [0.5] + [1.0] * 3)
    g = ku.greville()
    xs = x0 + (x1 - x0) * g
    P = np.zeros((ku.n_basis, 2, 3))
    P[:, 0, 0] = P[:, 1, 0] = xs
    P[:, 0, 1] = -hw
    P[:, 1, 1] = hw
    kv = KnotVector(1, [0, 0, 1, 1])
    return NurbsPatch(ku, kv, P, np.ones((ku.n_basis, 2)))


def strip_dipole(length=0.012, width=0.001) -> MultipatchSurface:
    """Flat strip dipole along x: two arms meeting at the feed line x = 0.

    The feed lies on the shared edge (patch 1, ``u = 0``).
    """
    h = 0.5 * length
    return MultipatchSurface([_strip_patch(-h, 0.0, 0.5 * width),
                              _strip_patch(0.0, h, 0.5 * width)])


def two_port_strip(length=0.018, width=0.001) -> MultipatchSurface:
    """Straight strip of three equal patches; ports on the two inner edges."""
    h, t = 0.5 * length, length / 6.0
    return MultipatchSurface([_strip_patch(-h, -t, 0.5 * width),
                              _strip_patch(-t, t, 0.5 * width),
                              _strip_patch(t, h, 0.5 * width)])


def tapered_dipole(length=0.012, feed_half_width=0.0005, half_widths=(0.0005,) * 3):
    """Dipole whose arm width follows a quadratic spline profile.

    Each arm has four control columns; the feed column is fixed and the three
    outer half-widths are design variables shared (mirror-symmetrically) by
    both arms and by the upper and lower strip boundaries.

    Returns ``(surface, design_entries)``.
    """
    h = 0.5 * length
    hw = [feed_half_width] + list(half_widths)
    right = _strip_patch(0.0, h, hw, degree_u=2, n_u=4)
    left = _strip_patch(-h, 0.0, hw[::-1], degree_u=2, n_u=4)
    surface = MultipatchSurface([left, right])
    entries = []
    for k in range(1, 4):
        for patch, i in ((0, 3 - k), (1, k)):
            for j, scale in ((0, -1.0), (1, 1.0)):
                entries.append({"patch": patch, "i": i, "j": j, "axis": "y",
                                "lower": 0.0002, "upper": 0.004,
                                "group": f"half_width_{k}", "scale": scale})
    return surface, entries


def write_all(outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    def dump(name, doc):
        (outdir / name).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")

    dump("plate.json", geometry_to_dict(flat_plate()))
    dump("cube.json", geometry_to_dict(cube()))
    dump("sphere.json", geometry_to_dict(sphere()))
    dump("strip_dipole.json", geometry_to_dict(strip_dipole()))
    dump("two_port_strip.json", geometry_to_dict(two_port_strip()))
    surf, entries = tapered_dipole()
    doc = geometry_to_dict(surf)
    doc["design"] = entries
    # keep the outer tip from flaring wider than the middle by more than 2 mm
    doc["guards"] = [{"coeffs": [0.0, -1.0, 1.0], "rhs": 0.002, "sense": "<="}]
    dump("tapered_dipole.json", doc)


if __name__ == "__main__":
    write_all(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "data")
