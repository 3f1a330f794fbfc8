"""Derivative-free bound-constrained minimisation by quadratic interpolation.

The method follows the BOBYQA scheme: ``m`` interpolation points define a
quadratic model whose Hessian changes by the least Frobenius norm from one
iteration to the next; the model is minimised in a box-bounded trust
region; trial points replace the interpolation point that keeps the set
best poised; the resolution ``rho`` shrinks from ``rho_beg`` to
``rho_end``.  After local convergence the search restarts around the best
point with the radius enlarged by ``restart_scale`` per restart.

Objective values that are ``inf``/``nan``, or an objective raising
:class:`~igapeec.errors.InfeasibleDesign`, count as ``+inf`` (extreme
barrier); such points never enter the interpolation set.

The KKT system of the model update is solved directly at every iteration
(it is tiny for the problem sizes involved) instead of updating its inverse.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import DesignError, GeometryError, InfeasibleDesign, NumericalError

__all__ = [
    "TrustRegionConfig",
    "TraceEntry",
    "OptimizationTrace",
    "OptimizeResult",
    "minimize",
    "ShapeResult",
    "optimize_shape",
    "TRACE_HEADER",
]

TRACE_HEADER = ("iter", "goal", "radius", "restart")


@dataclass(frozen=True)
class TrustRegionConfig:
    """Radii are in the optimiser's variable units.

    ``npt=None`` means ``2n + 1`` interpolation points.  A restart that
    does not lower the best value by a relative ``restart_tol`` counts as
    unsuccessful; after ``max_unsuccessful_restarts`` of those in a row the
    run stops.
    """

    rho_beg: float = 0.2
    rho_end: float = 0.01
    restart_scale: float = 1.2
    maxfun: int = 200
    npt: Optional[int] = None
    restarts: bool = True
    max_unsuccessful_restarts: int = 2
    restart_tol: float = 1e-6

    def __post_init__(self):
        if not 0 < self.rho_end < self.rho_beg:
            raise ValueError("need 0 < rho_end < rho_beg")
        if not self.restart_scale > 1:
            raise ValueError("restart scale factor must exceed 1")
        if self.maxfun < 1:
            raise ValueError("maxfun must be positive")

    def n_points(self, n):
        m = 2 * n + 1 if self.npt is None else int(self.npt)
        if not n + 2 <= m <= (n + 1) * (n + 2) // 2:
            raise ValueError(f"interpolation set size {m} outside [{n + 2}, "
                             f"{(n + 1) * (n + 2) // 2}] for {n} variables")
        return m


@dataclass(frozen=True)
class TraceEntry:
    index: int
    x: tuple
    f: float
    radius: float
    restart: int
    best: float


@dataclass
class OptimizationTrace:
    """One entry per objective evaluation, in evaluation order."""

    entries: List[TraceEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def record(self, x, f, radius, restart):
        best = min(f, self.entries[-1].best) if self.entries else f
        self.entries.append(TraceEntry(len(self.entries), tuple(float(v) for v in x),
                                       float(f), float(radius), int(restart), float(best)))

    @property
    def values(self) -> np.ndarray:
        return np.array([e.f for e in self.entries])

    @property
    def best_values(self) -> np.ndarray:
        return np.array([e.best for e in self.entries])

    @property
    def points(self) -> np.ndarray:
        return np.array([e.x for e in self.entries])

    def stagnation_index(self, rel: float = 1e-4, window: int = 10) -> Optional[int]:
        """First evaluation after which the best value improves by less than
        ``rel`` (relative) over all remaining evaluations, provided at least
        ``window`` evaluations follow; ``None`` if the run never stagnated.
        """
        b = self.best_values
        if b.size == 0 or not np.isfinite(b[-1]):
            return None
        for i in range(b.size - window):
            if np.isfinite(b[i]) and b[i] - b[-1] <= rel * abs(b[i]):
                return i
        return None

    def write_csv(self, path, names: Optional[Sequence[str]] = None):
        n = len(self.entries[0].x) if self.entries else 0
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(TRACE_HEADER) + [f"design_{i}" for i in range(n)])
            for e in self.entries:
                w.writerow([e.index, repr(e.f), repr(e.radius), e.restart]
                           + [repr(v) for v in e.x])


@dataclass(frozen=True)
class OptimizeResult:
    x: np.ndarray
    fun: float
    trace: OptimizationTrace
    nfev: int
    n_restarts: int
    converged: bool
    budget_exhausted: bool
    message: str


class _Barrier(Exception):
    pass


def _trsbox(g, H, delta, sl, su, tol=1e-12):
    """Approximate minimiser of ``g.d + d.H.d/2`` with ``|d| <= delta``, ``sl <= d <= su``.

    Truncated conjugate gradients; a variable that reaches a bound is fixed
    there and the iteration restarts on the remaining ones.
    """
    n = g.size
    d = np.zeros(n)
    fixed = ((sl >= 0) & (g > 0)) | ((su <= 0) & (g < 0))
    for _ in range(n + 1):
        free = ~fixed
        r = -(g + H @ d)
        r[~free] = 0.0
        p = r.copy()
        rr = r @ r
        if rr <= tol * (g @ g + tol):
            break
        hit_box = False
        for _ in range(2 * n + 2):
            Hp = H @ p
            pHp = p @ Hp
            # largest alpha inside the ball
            dp, pp, dd = d @ p, p @ p, d @ d
            disc = dp * dp + pp * (delta * delta - dd)
            a_ball = (-dp + math.sqrt(max(disc, 0.0))) / pp if pp > 0 else 0.0
            # largest alpha inside the box
            with np.errstate(divide="ignore", invalid="ignore"):
                a_up = np.where(p > 0, (su - d) / p, np.inf)
                a_lo = np.where(p < 0, (sl - d) / p, np.inf)
            a_bounds = np.minimum(a_up, a_lo)
            a_bounds[~free] = np.inf
            j = int(np.argmin(a_bounds))
            a_box = max(float(a_bounds[j]), 0.0)
            a_cg = rr / pHp if pHp > 0 else np.inf
            a = min(a_cg, a_ball, a_box)
            d = d + a * p
            if a == a_box and a_box < min(a_cg, a_ball):
                fixed[j] = True
                d[j] = sl[j] if p[j] < 0 else su[j]
                hit_box = True
                break
            if a == a_ball and a_ball <= a_cg:
                return d
            r = r - a * Hp
            r[~free] = 0.0
            rr_new = r @ r
            if rr_new <= tol * (g @ g + tol):
                return d
            p = r + (rr_new / rr) * p
            rr = rr_new
        if not hit_box:
            break
    return d


class _Model:
    """Quadratic ``c + g.s + s.H.s/2`` in ``s = x - centre``, plus Lagrange data."""

    def __init__(self, Y, f, centre, H_old):
        m, n = Y.shape
        S = Y - centre
        scale = max(np.abs(S).max(), 1e-300)
        Ss = S / scale
        A = 0.5 * (Ss @ Ss.T) ** 2
        W = np.zeros((m + n + 1, m + n + 1))
        W[:m, :m] = A
        W[:m, m] = W[m, :m] = 1.0
        W[:m, m + 1:] = Ss
        W[m + 1:, :m] = Ss.T
        try:
            Winv = np.linalg.inv(W)
        except np.linalg.LinAlgError:
            Winv = np.linalg.pinv(W)
        self.Winv, self.Ss, self.scale, self.centre = Winv, Ss, scale, centre
        Hs_old = H_old * scale ** 2
        rhs = np.zeros(m + n + 1)
        rhs[:m] = f - 0.5 * np.einsum("ki,ij,kj->k", Ss, Hs_old, Ss)
        sol = Winv @ rhs
        lam, c, gs = sol[:m], sol[m], sol[m + 1:]
        Hs = Hs_old + (Ss.T * lam) @ Ss
        self.c = c
        self.g = gs / scale
        self.H = Hs / scale ** 2
        self.m, self.n = m, n

    def value(self, x):
        s = x - self.centre
        return self.c + self.g @ s + 0.5 * s @ self.H @ s

    def lagrange(self, x):
        """Values of all ``m`` Lagrange functions at ``x``."""
        s = (x - self.centre) / self.scale
        m = self.m
        v = np.concatenate([0.5 * (self.Ss @ s) ** 2, [1.0], s])
        return self.Winv[:m] @ v

    def lagrange_gradient(self, t):
        """Gradient of the ``t``-th Lagrange function at the centre."""
        return self.Winv[self.m + 1:, t] / self.scale


def _initial_points(x0, lo, hi, rho, m):
    n = x0.size
    pts = [x0.copy()]
    steps = []
    for i in range(n):
        if x0[i] - lo[i] < 1e-15 * max(1.0, abs(lo[i])) or x0[i] == lo[i]:
            a, b = rho, 2 * rho
        elif hi[i] - x0[i] <= 0:
            a, b = -rho, -2 * rho
        else:
            a, b = rho, -rho
        steps.append((a, b))
    for i in range(n):
        e = np.zeros(n)
        e[i] = steps[i][0]
        pts.append(x0 + e)
    for i in range(n):
        e = np.zeros(n)
        e[i] = steps[i][1]
        pts.append(x0 + e)
    k = 0
    pairs = [(i, j) for j in range(n) for i in range(j)]
    while len(pts) < m:
        i, j = pairs[k]
        e = np.zeros(n)
        e[i], e[j] = steps[i][0], steps[j][0]
        pts.append(x0 + e)
        k += 1
    return np.clip(np.array(pts[:m]), lo, hi)


def minimize(fun: Callable, x0, lower, upper, config: Optional[TrustRegionConfig] = None,
             feasible: Optional[Callable] = None) -> OptimizeResult:
    """Minimise ``fun`` over the box ``[lower, upper]``.

    Parameters
    ----------
    fun : callable
        ``fun(x) -> float``; ``inf``, ``nan`` or
        :class:`~igapeec.errors.InfeasibleDesign` mark infeasible points.
    x0, lower, upper : array_like
        Start point and finite bounds.
    config : TrustRegionConfig, optional
    feasible : callable, optional
        Cheap predicate checked before ``fun``; ``False`` means ``+inf``.

    Raises
    ------
    DesignError
        If the bounds are invalid or ``x0`` is infeasible.
    """
    cfg = config or TrustRegionConfig()
    x0 = np.asarray(x0, dtype=float).ravel()
    lo = np.asarray(lower, dtype=float).ravel()
    hi = np.asarray(upper, dtype=float).ravel()
    n = x0.size
    if lo.size != n or hi.size != n:
        raise DesignError("bounds and start point differ in length")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise DesignError("bounds must be finite")
    if np.any(lo >= hi):
        raise DesignError("every lower bound must lie below its upper bound")
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise DesignError("start point violates the bounds")
    m = cfg.n_points(n)
    trace = OptimizationTrace()
    state = {"restart": 0, "radius": cfg.rho_beg}

    barrier_points = set()

    def evaluate(x):
        x = np.clip(x, lo, hi)
        key = x.tobytes()
        if key in barrier_points:
            return x, np.inf
        try:
            if feasible is not None and not feasible(x):
                raise _Barrier
            f = float(fun(x))
            if not np.isfinite(f):
                raise _Barrier
        except (_Barrier, InfeasibleDesign):
            f = np.inf
            barrier_points.add(key)
        trace.record(x, f, state["radius"], state["restart"])
        return x, f

    x_start, f_start = evaluate(x0)
    if not np.isfinite(f_start):
        raise DesignError("initial point is infeasible")

    best_x, best_f = x_start.copy(), f_start
    H_keep = np.zeros((n, n))
    unsuccessful = 0
    converged = False
    rho_beg = min(cfg.rho_beg, 0.5 * float(np.min(hi - lo)))
    restart_rho = rho_beg
    while True:
        f_before = best_f
        x_opt, f_opt, H_keep, local_done = _local_run(
            evaluate, best_x, best_f, lo, hi, restart_rho, min(cfg.rho_end, 0.5 * restart_rho),
            m, cfg.maxfun, trace, state, H_keep)
        if f_opt < best_f:
            best_x, best_f = x_opt, f_opt
        if not local_done or len(trace) >= cfg.maxfun:
            break
        converged = True
        if not cfg.restarts:
            break
        if state["restart"] > 0:
            improved = f_before - best_f > cfg.restart_tol * max(abs(f_before), 1e-300)
            unsuccessful = 0 if improved else unsuccessful + 1
            if unsuccessful >= cfg.max_unsuccessful_restarts:
                break
        state["restart"] += 1
        restart_rho = min(rho_beg * cfg.restart_scale ** state["restart"],
                          0.5 * float(np.min(hi - lo)))
    exhausted = len(trace) >= cfg.maxfun
    msg = "budget exhausted" if exhausted else "converged"
    return OptimizeResult(best_x, best_f, trace, len(trace), state["restart"],
                          converged, exhausted, msg)


def _local_run(evaluate, x0, f0, lo, hi, rho_beg, rho_end, m, maxfun, trace, state, H_old):
    """One trust-region run from ``x0`` (value ``f0`` already known)."""
    n = x0.size
    rho = delta = rho_beg
    state["radius"] = delta
    x_in = x0
    # shift the start away from bounds so initial steps stay feasible
    x0 = x0.copy()
    for i in range(n):
        if lo[i] < x0[i] < lo[i] + rho:
            x0[i] = lo[i] if x0[i] - lo[i] <= 0.5 * rho else lo[i] + rho
        elif hi[i] - rho < x0[i] < hi[i]:
            x0[i] = hi[i] if hi[i] - x0[i] <= 0.5 * rho else hi[i] - rho
    Y = _initial_points(x0, lo, hi, rho, m)
    F = np.empty(m)
    for k in range(m):
        if k == 0 and np.array_equal(Y[0], x_in):
            F[0] = f0
            continue
        if len(trace) >= maxfun:
            return _best(Y[:k], F[:k], x_in, f0) + (H_old, False)
        Y[k], F[k] = evaluate(Y[k])
    # barrier points cannot be interpolated: try other offsets of the same
    # length first (a start on a guard boundary has a feasible side), then
    # pull them towards the start point
    for k in range(m):
        if np.isfinite(F[k]):
            continue
        for c in _replacement_offsets(Y, k, rho, lo, hi):
            if len(trace) >= maxfun:
                break
            Y[k], F[k] = evaluate(c)
            if np.isfinite(F[k]):
                break
        tries = 0
        while not np.isfinite(F[k]) and tries < 6 and len(trace) < maxfun:
            Y[k] = 0.5 * (Y[k] + Y[0])
            Y[k], F[k] = evaluate(Y[k])
            tries += 1
        if not np.isfinite(F[k]):
            return _best(Y, F, x_in, f0) + (H_old, False)
    kopt = int(np.argmin(F))
    H = H_old.copy()
    loops = 0
    while len(trace) < maxfun and loops < 50 * maxfun:
        loops += 1
        xopt, fopt = Y[kopt], F[kopt]
        model = _Model(Y, F, xopt, H)
        H = model.H
        d = _trsbox(model.g, model.H, delta, lo - xopt, hi - xopt)
        dnorm = float(np.linalg.norm(d))
        dist = np.linalg.norm(Y - xopt, axis=1)
        if dnorm < 0.5 * rho:
            delta = max(0.5 * delta, rho) if delta > rho else rho
            far = int(np.argmax(dist))
            if dist[far] > 2.0 * delta:
                status = _geometry_step(evaluate, model, Y, F, far, max(0.1 * delta, rho),
                                        lo, hi, trace, maxfun)
                if status == "budget":
                    break
                kopt = int(np.argmin(F))
                if status == "ok":
                    continue
            if rho <= rho_end:
                return Y[kopt].copy(), F[kopt], H, True
            rho, delta = _reduce_rho(rho, rho_end)
            state["radius"] = delta
            continue
        state["radius"] = delta
        xnew, fnew = evaluate(xopt + d)
        pred = model.value(xopt) - model.value(xnew)
        if not np.isfinite(fnew):
            ratio = -np.inf
        else:
            ratio = (fopt - fnew) / pred if pred > 0 else (-np.inf if fnew >= fopt else 1.0)
        if ratio <= 0.1:
            delta = min(0.5 * delta, dnorm)
        elif ratio <= 0.7:
            delta = max(0.5 * delta, dnorm)
        else:
            delta = max(0.5 * delta, 2.0 * dnorm)
        if delta <= 1.5 * rho:
            delta = rho
        if np.isfinite(fnew):
            lag = model.lagrange(xnew)
            ref = xnew if fnew < fopt else xopt
            w = np.maximum(1.0, (np.linalg.norm(Y - ref, axis=1) / delta) ** 2)
            score = np.abs(lag) * w
            if fnew >= fopt:
                score[kopt] = -1.0
            t = int(np.argmax(score))
            if score[t] > 1e-10:
                Y[t], F[t] = xnew, fnew
            kopt = int(np.argmin(F))
        if ratio < 0.1:
            xopt = Y[kopt]
            dist = np.linalg.norm(Y - xopt, axis=1)
            far = int(np.argmax(dist))
            if dist[far] > 2.0 * delta:
                model = _Model(Y, F, xopt, H)
                status = _geometry_step(evaluate, model, Y, F, far, max(0.1 * delta, rho),
                                        lo, hi, trace, maxfun)
                if status == "budget":
                    break
                kopt = int(np.argmin(F))
                if status == "ok":
                    continue
                # barrier in the geometry step: resolve on a finer scale
                delta = rho
            if max(delta, dnorm) <= rho:
                if rho <= rho_end:
                    return Y[kopt].copy(), F[kopt], H, True
                rho, delta = _reduce_rho(rho, rho_end)
                state["radius"] = delta
    kopt = int(np.argmin(F))
    return Y[kopt].copy(), F[kopt], H, False


def _replacement_offsets(Y, k, rho, lo, hi):
    """Candidate points at distance about ``rho`` from ``Y[0]`` not yet in ``Y``."""
    xc, n = Y[0], Y.shape[1]
    s = Y[k] - xc
    dirs = [-s]
    for j in range(n):
        e = np.zeros(n)
        e[j] = rho
        dirs += [s - e, s + e, -s - e, -s + e]
    out = []
    for d in dirs:
        c = np.clip(xc + d, lo, hi)
        if np.linalg.norm(c - xc) < 0.5 * rho:
            continue
        others = np.delete(Y, k, axis=0)
        if np.min(np.linalg.norm(others - c, axis=1)) < 0.25 * rho:
            continue
        if any(np.array_equal(c, o) for o in out):
            continue
        out.append(c)
    return out


def _best(Y, F, x0, f0):
    if len(F) and np.min(F) < f0:
        k = int(np.argmin(F))
        return Y[k].copy(), F[k]
    return x0.copy(), f0


def _reduce_rho(rho, rho_end):
    ratio = rho / rho_end
    if ratio <= 16.0:
        new = rho_end
    elif ratio <= 250.0:
        new = math.sqrt(rho * rho_end)
    else:
        new = 0.1 * rho
    return new, max(0.5 * rho, new)


def _geometry_step(evaluate, model, Y, F, t, radius, lo, hi, trace, maxfun):
    """Replace point ``t`` by a point of large ``|l_t|`` within ``radius`` of the centre."""
    if len(trace) >= maxfun:
        return "budget"
    xc = model.centre
    cands = []
    gl = model.lagrange_gradient(t)
    if np.linalg.norm(gl) > 0:
        u = gl / np.linalg.norm(gl)
        cands += [xc + radius * u, xc - radius * u]
    for k in range(Y.shape[0]):
        s = Y[k] - xc
        ns = np.linalg.norm(s)
        if ns > 0:
            cands += [xc + radius * s / ns, xc - radius * s / ns]
    for i in range(xc.size):
        e = np.zeros(xc.size)
        e[i] = radius
        cands += [xc + e, xc - e]
    best, best_val = None, -1.0
    for c in cands:
        c = np.clip(c, lo, hi)
        if np.linalg.norm(c - xc) < 1e-3 * radius:
            continue
        v = abs(model.lagrange(c)[t])
        if v > best_val + 1e-14:
            best, best_val = c, v
    if best is None:
        return "barrier"
    xnew, fnew = evaluate(best)
    if np.isfinite(fnew):
        Y[t], F[t] = xnew, fnew
        return "ok"
    return "barrier"


@dataclass(frozen=True)
class ShapeResult:
    surface: object
    values: np.ndarray
    goal: float
    initial_goal: float
    trace: OptimizationTrace
    result: Optional[OptimizeResult]

    @property
    def ratio(self) -> float:
        return self.goal / self.initial_goal if self.initial_goal else float("nan")


def optimize_shape(surface, design, degree=2, refinement=1, medium=None, ports=(), omegas=(),
                   q: float = 8.0, config: Optional[TrustRegionConfig] = None, orders=None,
                   threads: Optional[int] = None, progress: Optional[Callable] = None) -> ShapeResult:
    """Minimise the q-norm of |S11| over the band by moving control points.

    The optimiser works on design values rescaled to the unit box, so the
    radii in ``config`` are fractions of each variable's range.  Every
    candidate rebuilds spaces and matrices from the modified spline
    geometry; no meshing step is involved.
    """
    from .assembly import VACUUM
    from .geometry import apply_design
    from .solve import frequency_sweep, goal
    from .spaces import build_spaces

    medium = medium or VACUUM
    omegas = np.asarray(omegas, dtype=float)

    def simulate(values):
        surf = apply_design(surface, design, values)
        spaces = build_spaces(surf, degree, refinement)
        sweep = frequency_sweep(surf, spaces, medium, ports, omegas, orders=orders,
                                threads=threads)
        return surf, goal(sweep, q)

    if design.n == 0:
        g0 = simulate(np.zeros(0))[1]
        trace = OptimizationTrace()
        trace.record([], g0, 0.0, 0)
        return ShapeResult(surface, np.zeros(0), g0, g0, trace, None)

    lo, hi = np.asarray(design.lower, float), np.asarray(design.upper, float)
    span = hi - lo

    def to_values(z):
        v = lo + np.asarray(z) * span
        return np.clip(v, lo, hi)

    def objective(z):
        try:
            val = simulate(to_values(z))[1]
        except (InfeasibleDesign, GeometryError, DesignError, NumericalError):
            return np.inf
        if progress is not None:
            progress(z, val)
        return val

    z0 = (np.asarray(design.initial, float) - lo) / span
    z0 = np.clip(z0, 0.0, 1.0)
    res = minimize(objective, z0, np.zeros(design.n), np.ones(design.n), config,
                   feasible=lambda z: design.feasible(to_values(z)))
    values = to_values(res.x)
    best_surface = apply_design(surface, design, values)
    return ShapeResult(best_surface, values, res.fun, res.trace.values[0], res.trace, res)
