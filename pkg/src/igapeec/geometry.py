"""Multipatch surfaces, edge topology, shape design variables and file I/O.

Patch edges are numbered counter-clockwise in the parameter square::

    edge 0: y = 0, parameter x      edge 2: y = 1, parameter x
    edge 1: x = 1, parameter y      edge 3: x = 0, parameter y
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConformityError, DesignError, GeometryError, InfeasibleDesign
from .splines import KnotVector, NurbsPatch, eval_surface

__all__ = [
    "EdgeLink",
    "Topology",
    "MultipatchSurface",
    "ConformityReport",
    "DesignHandle",
    "LinearGuard",
    "DesignVector",
    "edge_points",
    "check_conformity",
    "load_geometry",
    "parse_geometry",
    "geometry_to_dict",
    "save_geometry",
    "apply_design",
]

log = logging.getLogger(__name__)

N_EDGES = 4
DEFAULT_TOL = 1e-9
# Edges closer than this fraction of their length are treated as meant to be glued.
CANDIDATE_FRACTION = 0.05
_AXES = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}


def edge_param(edge: int, t):
    """Patch parameters ``(x, y)`` of edge points at edge parameter ``t``."""
    t = np.asarray(t, dtype=float)
    c = np.zeros_like(t)
    o = np.ones_like(t)
    return {0: (t, c), 1: (o, t), 2: (t, o), 3: (c, t)}[edge]


def edge_points(patch: NurbsPatch, edge: int, t) -> np.ndarray:
    x, y = edge_param(edge, t)
    return eval_surface(patch, x, y)


@dataclass(frozen=True)
class EdgeLink:
    patch: int
    edge: int
    flip: bool


@dataclass(frozen=True)
class Topology:
    """Per patch, per edge: the glued partner edge or ``None`` on the boundary."""

    links: tuple

    def partner(self, patch: int, edge: int) -> Optional[EdgeLink]:
        return self.links[patch][edge]

    def interior_edges(self):
        """Unique glued edge pairs as ``((patch, edge), EdgeLink)``."""
        out = []
        for n, row in enumerate(self.links):
            for e, link in enumerate(row):
                if link is not None and (n, e) < (link.patch, link.edge):
                    out.append(((n, e), link))
        return out

    @property
    def n_interior_edges(self) -> int:
        return len(self.interior_edges())

    @property
    def n_boundary_edges(self) -> int:
        return sum(link is None for row in self.links for link in row)


@dataclass(frozen=True)
class ConformityReport:
    """Maximum sampled gap for every glued edge pair."""

    gaps: dict
    tolerance: float

    @property
    def max_gap(self) -> float:
        return max(self.gaps.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return self.max_gap <= self.tolerance


class MultipatchSurface:
    """Ordered collection of NURBS patches with detected edge topology.

    Construction validates conformity: every pair of edges that nearly
    coincide must coincide to ``tol`` times the bounding-box diagonal.
    """

    def __init__(self, patches: Sequence[NurbsPatch], tol: float = DEFAULT_TOL,
                 topology: Optional[Topology] = None, check: bool = True):
        if len(patches) == 0:
            raise GeometryError("surface needs at least one patch")
        self.patches = tuple(patches)
        self.tol = float(tol)
        self.topology = topology if topology is not None else detect_topology(
            self.patches, self.tol * self.bbox_diagonal)
        if check:
            report = check_conformity(self)
            if not report.ok:
                (a, b), gap = max(report.gaps.items(), key=lambda kv: kv[1])
                raise ConformityError(
                    f"patches {a[0]} and {b[0]} do not conform along edges "
                    f"{a[1]}/{b[1]}: max gap {gap:.3e} m exceeds {report.tolerance:.3e} m",
                    patches=(a[0], b[0]), gap=gap)

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def __getitem__(self, i):
        return self.patches[i]

    @property
    def control_points(self) -> np.ndarray:
        return np.concatenate([p.points.reshape(-1, 3) for p in self.patches])

    @property
    def bbox_diagonal(self) -> float:
        P = self.control_points
        return float(np.linalg.norm(P.max(axis=0) - P.min(axis=0)))

    def map_points(self, fn) -> "MultipatchSurface":
        """New surface with every control point passed through ``fn``.

        The topology is reused; conformity is preserved by rigid motions and
        scalings, so it is not re-checked.
        """
        patches = [p.with_points(fn(p.points)) for p in self.patches]
        return MultipatchSurface(patches, self.tol, self.topology, check=False)

    def translated(self, offset) -> "MultipatchSurface":
        offset = np.asarray(offset, dtype=float)
        return self.map_points(lambda P: P + offset)

    def __repr__(self):
        return (f"MultipatchSurface({len(self)} patches, "
                f"{self.topology.n_interior_edges} interior edges, "
                f"{self.topology.n_boundary_edges} boundary edges)")


def _edge_length(patch, edge, samples=9):
    X = edge_points(patch, edge, np.linspace(0, 1, samples))
    return float(np.linalg.norm(np.diff(X, axis=0), axis=1).sum())


def detect_topology(patches, abs_tol) -> Topology:
    """Pair up patch edges whose end and mid points (nearly) coincide."""
    info = []
    for n, patch in enumerate(patches):
        for e in range(N_EDGES):
            X = edge_points(patch, e, np.array([0.0, 0.5, 1.0]))
            info.append((n, e, X, _edge_length(patch, e)))
    links = [[None] * N_EDGES for _ in patches]
    best = {}
    for a in range(len(info)):
        na, ea, Xa, la = info[a]
        if la <= abs_tol:
            continue
        for b in range(a + 1, len(info)):
            nb, eb, Xb, lb = info[b]
            if lb <= abs_tol or (na == nb and ea == eb):
                continue
            cand = max(CANDIDATE_FRACTION * min(la, lb), abs_tol)
            for flip in (False, True):
                Y = Xb[::-1] if flip else Xb
                d = np.linalg.norm(Xa - Y, axis=1).max()
                if d <= cand:
                    for key in (a, b):
                        if key not in best or d < best[key][0]:
                            best[key] = (d, a, b, flip)
    for key, (d, a, b, flip) in best.items():
        # keep only mutual best matches
        if best.get(a, (None, None, None))[1:3] != (a, b):
            continue
        if best.get(b, (None, None, None))[1:3] != (a, b):
            continue
        na, ea = info[a][:2]
        nb, eb = info[b][:2]
        links[na][ea] = EdgeLink(nb, eb, flip)
        links[nb][eb] = EdgeLink(na, ea, flip)
    return Topology(tuple(tuple(row) for row in links))


def check_conformity(surface: MultipatchSurface, samples: int = 33) -> ConformityReport:
    """Sample all glued edge pairs and report the largest point gap of each."""
    t = np.linspace(0.0, 1.0, samples)
    gaps = {}
    for (n, e), link in surface.topology.interior_edges():
        Xa = edge_points(surface[n], e, t)
        Xb = edge_points(surface[link.patch], link.edge, 1.0 - t if link.flip else t)
        gaps[((n, e), (link.patch, link.edge))] = float(
            np.linalg.norm(Xa - Xb, axis=1).max())
    return ConformityReport(gaps, surface.tol * surface.bbox_diagonal)


# ---------------------------------------------------------------------------
# design variables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignHandle:
    """One control-point coordinate driven by a design variable.

    The coordinate equals ``base + scale * (value - initial)`` of its variable.
    """

    patch: int
    i: int
    j: int
    axis: int
    scale: float = 1.0


@dataclass(frozen=True)
class LinearGuard:
    """Linear inequality ``coeffs . v <= rhs`` (or ``>=``) over variables."""

    coeffs: tuple
    rhs: float
    sense: str = "<="

    def satisfied(self, v, atol=0.0) -> bool:
        lhs = float(np.dot(self.coeffs, v))
        if self.sense == "<=":
            return lhs <= self.rhs + atol
        return lhs >= self.rhs - atol


@dataclass
class DesignVector:
    """Design variables (one per linked group) with box bounds and guards."""

    names: list
    handles: list           # per variable: list of DesignHandle
    initial: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    base: list = field(default_factory=list)   # per variable: coordinates at ``initial``
    guards: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.names)

    def __len__(self):
        return self.n

    @classmethod
    def empty(cls) -> "DesignVector":
        return cls([], [], np.zeros(0), np.zeros(0), np.zeros(0), [], [])

    @classmethod
    def from_entries(cls, surface: MultipatchSurface, entries, guards=()) -> "DesignVector":
        """Build from file entries ``{patch, i, j, axis, lower, upper, group[, scale]}``.

        Entries sharing ``group`` become one scalar variable; entries without a
        group each get their own.  Bounds apply to the variable.
        """
        order, members, bounds = [], {}, {}
        for k, ent in enumerate(entries):
            name = str(ent.get("group", f"_{k}"))
            try:
                axis = _AXES[ent["axis"]]
            except KeyError:
                raise GeometryError(f"design entry {k}: bad axis {ent.get('axis')!r}")
            n, i, j = int(ent["patch"]), int(ent["i"]), int(ent["j"])
            if not 0 <= n < len(surface):
                raise GeometryError(f"design entry {k}: no patch {n}")
            k1, k2 = surface[n].shape
            if not (0 <= i < k1 and 0 <= j < k2):
                raise GeometryError(f"design entry {k}: control index ({i},{j}) outside net")
            scale = float(ent.get("scale", 1.0))
            if scale == 0.0:
                raise GeometryError(f"design entry {k}: zero scale")
            if name not in members:
                order.append(name)
                members[name] = []
                bounds[name] = [-np.inf, np.inf]
            members[name].append(DesignHandle(n, i, j, axis, scale))
            lo, hi = bounds[name]
            bounds[name] = [max(lo, float(ent["lower"])), min(hi, float(ent["upper"]))]
        initial, base = [], []
        for name in order:
            coords = np.array([surface[h.patch].points[h.i, h.j, h.axis] for h in members[name]])
            scales = np.array([h.scale for h in members[name]])
            vals = coords / scales
            if np.ptp(vals) > 1e-12 * max(1.0, np.abs(vals).max()):
                raise GeometryError(
                    f"design group {name!r}: members disagree on the initial value {vals}")
            initial.append(vals[0])
            base.append(coords)
        lower = np.array([bounds[n][0] for n in order])
        upper = np.array([bounds[n][1] for n in order])
        initial = np.array(initial)
        slack = 1e-12 * np.maximum(np.abs(lower), np.abs(upper))
        initial = np.where((initial < lower) & (initial >= lower - slack), lower, initial)
        initial = np.where((initial > upper) & (initial <= upper + slack), upper, initial)
        if np.any(lower > upper) or np.any(initial < lower) or np.any(initial > upper):
            raise DesignError("initial design outside its bounds")
        gl = []
        for g in guards:
            coeffs = tuple(float(c) for c in g["coeffs"])
            if len(coeffs) != len(order):
                raise GeometryError(
                    f"guard has {len(coeffs)} coefficients for {len(order)} variables")
            sense = g.get("sense", "<=")
            if sense not in ("<=", ">="):
                raise GeometryError(f"guard sense {sense!r} not understood")
            gl.append(LinearGuard(coeffs, float(g["rhs"]), sense))
        return cls(order, [members[n] for n in order], initial, lower, upper, base, gl)

    def feasible(self, values) -> bool:
        return all(g.satisfied(values) for g in self.guards)

    def to_entries(self):
        out = []
        for name, hs, lo, hi in zip(self.names, self.handles, self.lower, self.upper):
            for h in hs:
                out.append({"patch": h.patch, "i": h.i, "j": h.j, "axis": "xyz"[h.axis],
                            "lower": float(lo), "upper": float(hi), "group": name,
                            "scale": h.scale})
        return out


def apply_design(surface: MultipatchSurface, design: DesignVector, values) -> MultipatchSurface:
    """Surface with the design-handled coordinates set from ``values``.

    Handled coordinates are computed from the coordinates recorded in
    ``design`` when it was built, so applying ``design.initial`` reproduces the
    original surface exactly.

    Raises
    ------
    DesignError
        Wrong length or values outside the box bounds.
    InfeasibleDesign
        A guard is violated or the moved patches no longer conform.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size != design.n:
        raise DesignError(f"design has {design.n} variables, got {values.size} values")
    if np.any(values < design.lower) or np.any(values > design.upper):
        raise DesignError("design values outside bounds")
    if not design.feasible(values):
        raise InfeasibleDesign("design violates a guard inequality")
    if design.n == 0:
        return surface
    nets = [np.array(p.points) for p in surface.patches]
    for v, v0, hs, base in zip(values, design.initial, design.handles, design.base):
        for h, b in zip(hs, base):
            # a handle whose coordinate is the scaled value itself is set
            # exactly, so written geometries reload within their bounds
            nets[h.patch][h.i, h.j, h.axis] = (h.scale * v if b == h.scale * v0
                                               else b + h.scale * (v - v0))
    touched = {h.patch for hs in design.handles for h in hs}
    patches = [p.with_points(nets[k]) if k in touched else p
               for k, p in enumerate(surface.patches)]
    out = MultipatchSurface(patches, surface.tol, surface.topology, check=False)
    report = check_conformity(out)
    if not report.ok:
        raise InfeasibleDesign(
            f"design breaks patch conformity (gap {report.max_gap:.3e} m); "
            "handles on shared edges must be linked")
    return out


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def _patch_from_dict(k, d) -> NurbsPatch:
    try:
        p1, p2 = (int(v) for v in d["degrees"])
        ku = KnotVector(p1, d["knots_u"])
        kv = KnotVector(p2, d["knots_v"])
        cp = np.asarray(d["control_points"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GeometryError):
            raise GeometryError(f"patch {k}: {exc}") from None
        raise GeometryError(f"patch {k}: malformed entry ({exc})") from None
    k1, k2 = ku.n_basis, kv.n_basis
    if cp.shape != (k1 * k2, 4):
        raise GeometryError(
            f"patch {k}: expected {k1 * k2} control points [x,y,z,w], got shape {cp.shape}")
    cp = cp.reshape(k1, k2, 4)
    if np.any(cp[..., 3] <= 0):
        raise GeometryError(f"patch {k}: non-positive weight")
    try:
        return NurbsPatch(ku, kv, cp[..., :3], cp[..., 3])
    except GeometryError as exc:
        raise GeometryError(f"patch {k}: {exc}") from None


def parse_geometry(doc: dict, tol: float = DEFAULT_TOL):
    """Surface, design vector and raw document from a parsed geometry file."""
    if not isinstance(doc, dict) or not isinstance(doc.get("patches"), list):
        raise GeometryError("geometry document needs a 'patches' array")
    patches = [_patch_from_dict(k, d) for k, d in enumerate(doc["patches"])]
    surface = MultipatchSurface(patches, tol=float(doc.get("tolerance", tol)))
    entries = doc.get("design", [])
    design = (DesignVector.from_entries(surface, entries, doc.get("guards", []))
              if entries else DesignVector.empty())
    return surface, design


def load_geometry(path, tol: float = DEFAULT_TOL, with_design: bool = False):
    """Read a geometry JSON file (see README for the schema)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GeometryError(f"{path}: not valid JSON ({exc})") from None
    surface, design = parse_geometry(doc, tol)
    log.debug("loaded %s: %r", path, surface)
    return (surface, design) if with_design else surface


def geometry_to_dict(surface: MultipatchSurface, design: Optional[DesignVector] = None) -> dict:
    doc = {"patches": []}
    for p in surface.patches:
        cp = np.concatenate([p.points, p.weights[..., None]], axis=-1).reshape(-1, 4)
        doc["patches"].append({
            "degrees": [p.ku.degree, p.kv.degree],
            "knots_u": p.ku.knots.tolist(),
            "knots_v": p.kv.knots.tolist(),
            "control_points": cp.tolist(),
        })
    if design is not None and design.n:
        doc["design"] = design.to_entries()
        if design.guards:
            doc["guards"] = [{"coeffs": list(g.coeffs), "rhs": g.rhs, "sense": g.sense}
                             for g in design.guards]
    return doc


def save_geometry(path, surface: MultipatchSurface, design: Optional[DesignVector] = None):
    Path(path).write_text(json.dumps(geometry_to_dict(surface, design), indent=1) + "\n",
                          encoding="utf-8")
