"""Solution of the saddle-point system, lumped ports and scattering parameters.

With current coefficients ``J`` and (negated) potential coefficients ``Phi``
the system reads::

    [ 1j w L         G^T    ] [J  ]   [v_ex]
    [ P M^-1 G   -1j w M    ] [Phi] = [ 0  ]

and the surface charge is ``rho = -(1/(1j w)) M^-1 G J``.

A port is a delta gap on a parameter line of one patch.  Its excitation is
``V * f`` and its current ``f^T J``, where ``f_i`` is the flux of basis
function ``i`` through the gap line.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .assembly import (VACUUM, Assembler, Medium, QuadratureOrders, SystemMatrices,
                       assemble_excitation_plane_wave, default_threads, far_field)
from .errors import NumericalError
from .quadrature import gauss_legendre
from .spaces import DiscreteSpaces
from .splines import KnotVector, basis_nonzero

__all__ = [
    "SolveResult",
    "Port",
    "SweepResult",
    "block_matrix",
    "solve_system",
    "recover_charge",
    "port_flux_vector",
    "s_from_y",
    "s_from_z",
    "extract_sparams",
    "frequency_sweep",
    "goal",
    "monostatic_rcs",
    "scatter_plane_wave",
    "write_sweep_csv",
    "read_sweep_csv",
    "CSV_HEADER",
]

COND_LIMIT = 1e14
CSV_HEADER = ("frequency_hz", "s11_re", "s11_im", "s11_db")


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Solution blocks plus diagnostics; unpacks as ``J, Phi``."""

    J: np.ndarray
    Phi: np.ndarray
    residual: float
    condition: float
    omega: float

    def __iter__(self):
        return iter((self.J, self.Phi))


def _factor_mass(M):
    try:
        return linalg.cho_factor(M.toarray() if hasattr(M, "toarray") else np.asarray(M))
    except linalg.LinAlgError as exc:
        raise NumericalError("mass matrix is not positive definite") from exc


def block_matrix(mats: SystemMatrices, mass_factor=None) -> np.ndarray:
    """Dense system matrix; ``M^-1 G`` comes from a Cholesky solve."""
    jw = 1j * mats.omega
    cf = mass_factor if mass_factor is not None else _factor_mass(mats.M)
    Gd = mats.G.toarray()
    MinvG = linalg.cho_solve(cf, Gd)
    nj, nphi = mats.n_current, mats.n_charge
    A = np.empty((nj + nphi, nj + nphi), dtype=complex)
    A[:nj, :nj] = jw * mats.L
    A[:nj, nj:] = Gd.T
    A[nj:, :nj] = mats.P @ MinvG
    A[nj:, nj:] = -jw * mats.M.toarray()
    return A


def _equilibrate(A):
    r = np.abs(A).max(axis=1)
    r = np.where(r > 0, 1.0 / r, 1.0)
    c = np.abs(A * r[:, None]).max(axis=0)
    c = np.where(c > 0, 1.0 / c, 1.0)
    return r, c


def solve_system(mats: SystemMatrices, rhs=None, cond_limit: float = COND_LIMIT) -> SolveResult:
    """Solve the block system with dense LU on the equilibrated matrix.

    ``rhs`` replaces ``mats.v_ex`` and may hold several columns.  The
    reported residual is ``|D_r (A x - b)| / |D_r b|`` in the max norm, with
    ``D_r`` the row equilibration (the blocks of ``A`` differ by many orders
    of magnitude in SI units); zero for ``b = 0``.

    Raises
    ------
    NumericalError
        If the estimated condition number of the equilibrated system
        exceeds ``cond_limit``.
    """
    v = mats.v_ex if rhs is None else np.asarray(rhs, dtype=complex)
    single = v.ndim == 1
    V = v.reshape(v.shape[0], -1)
    nj, nphi = mats.n_current, mats.n_charge
    if V.shape[0] != nj:
        raise ValueError(f"right-hand side has {V.shape[0]} rows, expected {nj}")
    A = block_matrix(mats)
    b = np.zeros((nj + nphi, V.shape[1]), dtype=complex)
    b[:nj] = V
    r, c = _equilibrate(A)
    As = A * r[:, None] * c[None, :]
    lu, piv, info = lapack.zgetrf(As)
    if info > 0:
        raise NumericalError(f"system matrix is singular at omega = {mats.omega:g} rad/s",
                             omega=mats.omega)
    anorm = np.abs(As).sum(axis=0).max()
    rcond, _ = lapack.zgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if not cond < cond_limit:
        raise NumericalError(
            f"system matrix is near singular at omega = {mats.omega:g} rad/s "
            f"(condition estimate {cond:.3e})", omega=mats.omega)
    bs = b * r[:, None]
    y, _ = lapack.zgetrs(lu, piv, bs)
    # one step of iterative refinement
    dy, _ = lapack.zgetrs(lu, piv, bs - As @ y)
    y = y + dy
    x = y * c[:, None]
    bn = np.abs(bs).max()
    res = 0.0 if bn == 0 else float(np.abs(As @ y - bs).max() / bn)
    J, Phi = x[:nj], x[nj:]
    if single:
        J, Phi = J[:, 0], Phi[:, 0]
    return SolveResult(J, Phi, res, float(cond), mats.omega)


def recover_charge(J, M, G, omega: float) -> np.ndarray:
    """Charge coefficients ``-(1/(1j w)) M^-1 G J``."""
    if omega == 0:
        raise ValueError("charge cannot be recovered from the current at omega = 0")
    GJ = G @ np.asarray(J)
    return -linalg.cho_solve(_factor_mass(M), GJ) / (1j * omega)


@dataclass(frozen=True)
class Port:
    """Delta-gap port on the line ``axis = t`` of ``patch``.

    ``axis='u'`` is the line of constant first parameter, spanning
    ``start <= v <= end``; positive current flows towards increasing ``u``.
    """

    patch: int
    axis: str
    t: float
    start: float = 0.0
    end: float = 1.0
    z0: float = 50.0
    voltage: complex = 1.0
    name: str = ""

    def __post_init__(self):
        if self.axis not in ("u", "v"):
            raise ValueError(f"port axis must be 'u' or 'v', got {self.axis!r}")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("port line parameter must lie in [0, 1]")
        if not 0.0 <= self.start < self.end <= 1.0:
            raise ValueError("port segment must satisfy 0 <= start < end <= 1")
        if not self.z0 > 0:
            raise ValueError("reference impedance must be positive")

    @classmethod
    def from_dict(cls, d) -> "Port":
        known = {"patch", "axis", "t", "start", "end", "z0", "voltage", "name"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown port fields {sorted(extra)}")
        return cls(**d)


def _integrate_basis(kv: KnotVector, a, b):
    """Integrals of all basis functions of ``kv`` over [a, b]."""
    out = np.zeros(kv.n_basis)
    rule = gauss_legendre(kv.degree + 1)
    bp = kv.breakpoints
    cuts = np.unique(np.concatenate([[a, b], bp[(bp > a) & (bp < b)]]))
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        x = lo + (hi - lo) * rule.points
        span, N = basis_nonzero(kv, x, span=np.full(x.shape, kv.find_span(0.5 * (lo + hi))))
        for r in range(kv.degree + 1):
            np.add.at(out, span - kv.degree + r, N[:, r] * rule.weights * (hi - lo))
    return out


def port_flux_vector(spaces: DiscreteSpaces, port: Port) -> np.ndarray:
    """Flux of each global current function through the gap line."""
    if not 0 <= port.patch < len(spaces.surface):
        raise ValueError(f"port patch {port.patch} does not exist")
    ps = spaces.vector.patch_spaces[port.patch]
    if port.axis == "u":
        k_cross, k_along = ps.ku_p, ps.kv_d
    else:
        k_cross, k_along = ps.kv_p, ps.ku_d
    bp = k_cross.breakpoints
    if np.min(np.abs(bp - port.t)) > 1e-12:
        raise ValueError(f"port line {port.axis} = {port.t} is not an element boundary")
    t = float(bp[np.argmin(np.abs(bp - port.t))])
    span, N = basis_nonzero(k_cross, np.array([t]))
    cross = np.zeros(k_cross.n_basis)
    cross[span[0] - k_cross.degree + np.arange(k_cross.degree + 1)] = N[0]
    along = _integrate_basis(k_along, port.start, port.end)
    if port.axis == "u":
        local = np.outer(cross, along).ravel()
        lidx = np.arange(ps.n_fam1)
    else:
        local = np.outer(along, cross).ravel()
        lidx = ps.n_fam1 + np.arange(ps.n_fam2)
    f = np.zeros(spaces.vector.dim)
    l2g = spaces.vector.loc2glob[port.patch][lidx]
    sg = spaces.vector.sign[port.patch][lidx]
    keep = (l2g >= 0) & (local != 0)
    np.add.at(f, l2g[keep], local[keep] * sg[keep])
    if not np.any(np.abs(f) > 1e-14 * max(1.0, np.abs(local).max())):
        raise ValueError(f"no current function crosses the gap of port {port}")
    return f


def _ports_z0(ports):
    return np.array([p.z0 for p in ports], dtype=float)


def s_from_y(Y, z0) -> np.ndarray:
    """Scattering matrix from admittances: ``(I - z Y z)(I + z Y z)^-1`` with ``z = sqrt(Z0)``.

    For equal reference impedances this is ``(Y0 - Y)(Y0 + Y)^-1``.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=complex))
    z = np.sqrt(np.broadcast_to(np.asarray(z0, dtype=float), (Y.shape[0],)))
    Yn = z[:, None] * Y * z[None, :]
    I = np.eye(Y.shape[0])
    A = I + Yn
    if np.linalg.cond(A) > 1e15:
        raise NumericalError("Y0 + Y is singular")
    return np.linalg.solve(A.T, (I - Yn).T).T


def s_from_z(Z, z0) -> np.ndarray:
    """Scattering matrix from impedances; ``(Z - Z0)/(Z + Z0)`` for one port."""
    Z = np.atleast_2d(np.asarray(Z, dtype=complex))
    z = np.sqrt(np.broadcast_to(np.asarray(z0, dtype=float), (Z.shape[0],)))
    Zn = Z / z[:, None] / z[None, :]
    I = np.eye(Z.shape[0])
    return np.linalg.solve((Zn + I).T, (Zn - I).T).T


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Network parameters per frequency (first axis) for ``n_ports`` ports."""

    omegas: np.ndarray
    S: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    current_norms: np.ndarray
    residuals: np.ndarray
    z0: np.ndarray = field(default_factory=lambda: np.array([50.0]))

    @property
    def frequencies(self) -> np.ndarray:
        return self.omegas / (2.0 * np.pi)

    @property
    def n_ports(self) -> int:
        return self.S.shape[1]

    def s(self, m=0, k=0) -> np.ndarray:
        return self.S[:, m, k]

    def goal(self, q=8.0, m=0, k=0) -> float:
        return goal(self, q, m, k)


def _solve_ports(mats, F, omega):
    res = solve_system(mats, rhs=F)
    Y = F.T @ res.J
    try:
        Z = np.linalg.inv(Y)
    except np.linalg.LinAlgError:
        Z = np.full_like(Y, np.nan)
    return Y, Z, np.linalg.norm(res.J, axis=0), res.residual


def frequency_sweep(surface, spaces: DiscreteSpaces, medium: Medium = VACUUM,
                    ports: Sequence[Port] = (), omegas=(),
                    orders: Optional[QuadratureOrders] = None,
                    threads: Optional[int] = None) -> SweepResult:
    """Network parameters at each angular frequency in ``omegas`` (input order)."""
    if surface is not None and spaces.surface is not surface:
        raise ValueError("discrete spaces were built on a different surface")
    ports = list(ports)
    if not ports:
        raise ValueError("at least one port is required")
    omegas = np.asarray(omegas, dtype=float).ravel()
    if omegas.size == 0:
        raise ValueError("empty frequency list")
    if np.any(omegas <= 0):
        raise ValueError("port analysis needs positive frequencies")
    threads = default_threads() if threads is None else max(1, int(threads))
    all_mats = Assembler(spaces, medium, orders, threads).assemble(omegas)
    # unit gap voltages: excitation F, port currents F^T J
    Fu = np.stack([port_flux_vector(spaces, p) for p in ports], axis=1).astype(complex)

    def run(i):
        return _solve_ports(all_mats[i], Fu, omegas[i])

    if threads > 1 and omegas.size > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(run, range(omegas.size)))
    else:
        out = [run(i) for i in range(omegas.size)]
    Y = np.array([o[0] for o in out])
    Z = np.array([o[1] for o in out])
    z0 = _ports_z0(ports)
    S = np.array([s_from_y(y, z0) for y in Y])
    norms = np.array([o[2] for o in out])
    res = np.array([o[3] for o in out])
    return SweepResult(omegas, S, Z, Y, norms, res, z0)


def extract_sparams(surface, spaces: DiscreteSpaces, medium: Medium = VACUUM,
                    ports: Sequence[Port] = (), omega: float = 1.0, **kw) -> np.ndarray:
    """Scattering matrix at one angular frequency."""
    return frequency_sweep(surface, spaces, medium, ports, [omega], **kw).S[0]


def goal(samples, q: float = 8.0, m: int = 0, k: int = 0) -> float:
    """q-norm ``(sum_i |s_i|^q)^(1/q)`` of the samples (no averaging).

    ``samples`` is a :class:`SweepResult` (entry ``S[:, m, k]`` is used) or
    an array of complex or real samples.
    """
    if not q >= 1:
        raise ValueError("q must be >= 1")
    s = samples.S[:, m, k] if isinstance(samples, SweepResult) else samples
    a = np.abs(np.asarray(s).ravel())
    if a.size == 0:
        raise ValueError("goal of an empty sweep")
    if not np.all(np.isfinite(a)):
        raise NumericalError("non-finite scattering parameter in sweep")
    top = a.max()
    if top == 0:
        return 0.0
    if np.isinf(q):
        return float(top)
    return float(top * np.sum((a / top) ** q) ** (1.0 / q))


def scatter_plane_wave(surface, spaces: DiscreteSpaces, medium: Medium = VACUUM,
                       omega: float = 1.0, direction=(0.0, 0.0, 1.0),
                       polarization=(1.0, 0.0, 0.0), orders=None, threads=None) -> SolveResult:
    """Induced current on a perfect conductor illuminated by a unit plane wave."""
    kappa = medium.wavenumber(omega)
    mats = Assembler(spaces, medium, orders, threads).assemble([omega])[0]
    v = assemble_excitation_plane_wave(spaces, direction, polarization, kappa)
    return solve_system(mats, rhs=v)


def monostatic_rcs(spaces: DiscreteSpaces, J, omega: float, medium: Medium = VACUUM,
                   direction=(0.0, 0.0, 1.0)) -> float:
    """Backscatter cross section (m^2) for a unit-amplitude incident wave along ``direction``."""
    kappa = medium.wavenumber(omega)
    rhat = -np.asarray(direction, dtype=float)
    N = far_field(spaces, J, rhat[None, :], kappa)[0]
    Nt = N - np.dot(N, rhat) * rhat
    return float((kappa * medium.eta) ** 2 / (4.0 * np.pi) * np.vdot(Nt, Nt).real)


def write_sweep_csv(path, sweep: SweepResult, m: int = 0, k: int = 0,
                    timestamp: Optional[str] = None):
    """CSV of ``S[m, k]`` per frequency; optional leading ``# generated`` line."""
    s = sweep.S[:, m, k]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if timestamp:
            fh.write(f"# generated {timestamp}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for f, v in zip(sweep.frequencies, s):
            db = 20.0 * np.log10(abs(v)) if v != 0 else -np.inf
            w.writerow([repr(float(f)), repr(float(v.real)), repr(float(v.imag)), repr(float(db))])


def read_sweep_csv(path):
    """Frequencies (Hz) and complex samples from a sweep CSV."""
    freqs, vals = [], []
    with open(path, encoding="utf-8") as fh:
        rows = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise ValueError(f"{path}: not a sweep CSV (header {header})")
    for row in reader:
        freqs.append(float(row[0]))
        vals.append(complex(float(row[1]), float(row[2])))
    return np.array(freqs), np.array(vals)
