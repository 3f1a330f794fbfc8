"""Command-line front end: ``igapeec check|sweep|optimize|plot``.

Configuration is a JSON file; command-line flags override file values,
which override built-in defaults.  Exit codes: 0 success, 2 configuration
error, 3 geometry error, 4 numerical failure, 5 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .assembly import (THREADS_ENV, Assembler, Medium, QuadratureOrders, VACUUM,
                       default_threads, write_matrix)
from .errors import ConformityError, DesignError, GeometryError, IgaPeecError, NumericalError
from .geometry import check_conformity, load_geometry, parse_geometry, save_geometry
from .optimize import TrustRegionConfig, optimize_shape
from .solve import Port, frequency_sweep, goal, read_sweep_csv, write_sweep_csv
from .spaces import build_spaces

__all__ = ["main", "load_config", "svg_plot", "DEFAULTS"]

EXIT_OK, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4, 5

DEFAULTS = {
    "geometry": None,
    "medium": "vacuum",
    "discretization": {"degree": 2, "refinement": 1},
    "quadrature": {"regular": None, "singular": 10, "dynamic": 4, "near_factor": 2.0},
    "ports": [],
    "band": {"f_min": 8e9, "f_max": 18e9, "n": None},
    "q": 8.0,
    "trust_region": {"rho_beg": 0.2, "rho_end": 0.01, "restart_scale": 1.2, "maxfun": 200,
                     "npt": None, "restarts": True, "max_unsuccessful_restarts": 2},
    "verification_samples": 200,
    "output": "out",
}
SWEEP_SAMPLES = 200
OPTIMIZE_SAMPLES = 21


class ConfigError(ValueError):
    pass


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if k not in out:
            raise ConfigError(f"unknown configuration key {k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            sub = dict(out[k])
            for kk, vv in v.items():
                if kk not in sub:
                    raise ConfigError(f"unknown configuration key {k}.{kk}")
                sub[kk] = vv
            out[k] = sub
        else:
            out[k] = v
    return out


def load_config(path, overrides=None) -> dict:
    """Read a JSON run configuration and apply ``overrides`` (dotted keys)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read configuration {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: configuration must be a JSON object")
    cfg = _merge(DEFAULTS, doc)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        parts = key.split(".")
        node = cfg
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = value
    cfg["_base"] = str(path.parent)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if not cfg["geometry"]:
        raise ConfigError("configuration needs a 'geometry' file")
    b = cfg["band"]
    try:
        fmin, fmax = float(b["f_min"]), float(b["f_max"])
    except (TypeError, ValueError):
        raise ConfigError("band limits must be numbers")
    if b["n"] is not None and (not isinstance(b["n"], int) or b["n"] < 1):
        raise ConfigError("band.n must be a positive integer")
    if not 0 < fmin <= fmax or (fmin == fmax and b["n"] not in (None, 1)):
        raise ConfigError("band must satisfy 0 < f_min < f_max")
    if not float(cfg["q"]) >= 1:
        raise ConfigError("q must be >= 1")
    for p in cfg["ports"]:
        if not isinstance(p, dict):
            raise ConfigError("ports must be objects")
    if not isinstance(cfg["verification_samples"], int) or cfg["verification_samples"] < 1:
        raise ConfigError("verification_samples must be a positive integer")


def _medium(cfg):
    m = cfg["medium"]
    if m in (None, "vacuum"):
        return VACUUM
    if isinstance(m, dict):
        try:
            return Medium(float(m.get("epsilon", VACUUM.epsilon)), float(m.get("mu", VACUUM.mu)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid medium: {exc}")
    raise ConfigError(f"unknown medium {m!r}")


def _geometry_path(cfg):
    return _resolve_geometry(cfg["geometry"], cfg["_base"])


def _resolve_geometry(g, base="."):
    """``builtin:NAME`` names a packaged geometry; relative paths use ``base``."""
    if g.startswith("builtin:"):
        name = g.split(":", 1)[1]
        ref = resources.files("igapeec") / "data" / f"{name}.json"
        if not ref.is_file():
            raise OSError(f"no built-in geometry {name!r}")
        return Path(str(ref))
    p = Path(g)
    return p if p.is_absolute() else Path(base) / p


def _ports(cfg):
    try:
        return [Port.from_dict(d) for d in cfg["ports"]]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid port: {exc}")


def _orders(cfg):
    try:
        return QuadratureOrders(**cfg["quadrature"])
    except TypeError as exc:
        raise ConfigError(f"invalid quadrature settings: {exc}")


def _omegas(cfg, default_n):
    b = cfg["band"]
    n = b["n"] if b["n"] is not None else default_n
    f = np.linspace(float(b["f_min"]), float(b["f_max"]), n) if n > 1 else np.array(
        [float(b["f_min"])])
    return 2.0 * np.pi * f


def _refinement(cfg):
    r = cfg["discretization"]["refinement"]
    return tuple(r) if isinstance(r, (list, tuple)) else int(r)


def _timestamp(args):
    if args.no_timestamp:
        return None
    return _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()


# -- SVG -------------------------------------------------------------------

_COLORS = ("#1f4e9c", "#c0392b", "#2a8c3c", "#7d3c98")


def _nice_ticks(lo, hi, n=6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    ticks = np.arange(start, hi + 0.5 * step, step)
    return [float(t) for t in ticks if lo - 1e-9 * step <= t <= hi + 1e-9 * step]


def svg_plot(series, path, title="|S11|"):
    """Write an 800x500 SVG line plot.

    ``series`` is a list of ``(label, frequencies_hz, values_db)``.
    """
    W, H = 800, 500
    left, right, top, bottom = 80, 30, 40, 60
    fx = np.concatenate([np.asarray(s[1], float) for s in series]) / 1e9
    fy = np.concatenate([np.asarray(s[2], float) for s in series])
    fy = fy[np.isfinite(fy)]
    x0, x1 = float(fx.min()), float(fx.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    y0 = float(np.floor(fy.min() / 5.0) * 5.0) if fy.size else -40.0
    y1 = float(np.ceil(fy.max() / 5.0) * 5.0) if fy.size else 0.0
    if y1 <= y0:
        y1 = y0 + 5.0

    def px(f):
        return left + (f - x0) / (x1 - x0) * (W - left - right)

    def py(v):
        return top + (y1 - v) / (y1 - y0) * (H - top - bottom)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" '
           f'width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{title}</text>']
    for t in _nice_ticks(x0, x1):
        X = px(t)
        out.append(f'<line x1="{X:.2f}" y1="{top}" x2="{X:.2f}" y2="{H - bottom}" '
                   'stroke="#dddddd"/>')
        out.append(f'<text x="{X:.2f}" y="{H - bottom + 18}" text-anchor="middle">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        Y = py(t)
        out.append(f'<line x1="{left}" y1="{Y:.2f}" x2="{W - right}" y2="{Y:.2f}" '
                   'stroke="#dddddd"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{W - left - right}" '
               f'height="{H - top - bottom}" fill="none" stroke="black"/>')
    out.append(f'<text x="{W / 2:.1f}" y="{H - 15}" text-anchor="middle">frequency [GHz]</text>')
    out.append(f'<text x="20" y="{H / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 20 {H / 2:.1f})">S11 magnitude [dB]</text>')
    for k, (label, f, v) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}"
                       for a, b in zip(np.asarray(f, float) / 1e9, np.asarray(v, float))
                       if np.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = top + 18 + 18 * k
        out.append(f'<line x1="{W - right - 150}" y1="{ly}" x2="{W - right - 125}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - right - 118}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def _db(s):
    a = np.abs(s)
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(a)


# -- commands --------------------------------------------------------------

def cmd_check(args):
    path = _resolve_geometry(args.geometry)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise GeometryError(f"{path}: invalid JSON ({exc})") from exc
    surface, design = parse_geometry(doc)
    topo = surface.topology
    report = check_conformity(surface)
    print(f"OK, {len(surface)} patches, {topo.n_interior_edges} interior edges, "
          f"{topo.n_boundary_edges} boundary edges, max gap {report.max_gap:.3e}")
    if design.n:
        print(f"design: {design.n} variables ({', '.join(design.names)})")
    return EXIT_OK


def _setup(cfg, default_n):
    surface, design = load_geometry(_geometry_path(cfg), with_design=True)
    ports = _ports(cfg)
    if not ports:
        raise ConfigError("configuration defines no ports")
    return surface, design, ports, _medium(cfg), _orders(cfg), _omegas(cfg, default_n)


def cmd_sweep(args):
    cfg = load_config(args.config, _overrides(args))
    surface, _, ports, medium, orders, omegas = _setup(cfg, SWEEP_SAMPLES)
    deg = int(cfg["discretization"]["degree"])
    spaces = build_spaces(surface, deg, _refinement(cfg))
    out = _outdir(args, cfg)
    t0 = time.perf_counter()
    sweep = frequency_sweep(surface, spaces, medium, ports, omegas, orders=orders,
                            threads=args.threads)
    csv_path = out / "sweep.csv"
    write_sweep_csv(csv_path, sweep, timestamp=_timestamp(args))
    svg_plot([("S11", sweep.frequencies, _db(sweep.s()))], out / "sweep.svg")
    if args.dump_matrices:
        mats = Assembler(spaces, medium, orders, args.threads).assemble([omegas[0]])[0]
        for name in ("L", "P", "G", "M"):
            write_matrix(out / f"{name}.mtx", getattr(mats, name))
    q = float(cfg["q"])
    print(f"{spaces.vector.dim} current / {spaces.scalar.dim} charge unknowns, "
          f"{omegas.size} frequencies in {time.perf_counter() - t0:.1f} s")
    print(f"goal (q={q:g}): {goal(sweep, q):.6g}")
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_optimize(args):
    cfg = load_config(args.config, _overrides(args))
    surface, design, ports, medium, orders, omegas = _setup(cfg, OPTIMIZE_SAMPLES)
    if design.n == 0:
        print("nothing to optimize: the geometry defines no design variables")
        return EXIT_CONFIG
    deg = int(cfg["discretization"]["degree"])
    ref = _refinement(cfg)
    q = float(cfg["q"])
    try:
        tr = TrustRegionConfig(**cfg["trust_region"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid trust_region settings: {exc}")
    out = _outdir(args, cfg)
    t0 = time.perf_counter()

    def progress(z, val):
        if args.verbose:
            print(f"  goal {val:.6g} at {np.round(z, 4).tolist()}", flush=True)

    res = optimize_shape(surface, design, deg, ref, medium, ports, omegas, q, tr, orders,
                         args.threads, progress)
    save_geometry(out / "optimized_geometry.json", res.surface, design)
    res.trace.write_csv(out / "trace.csv")
    stag = res.trace.stagnation_index()
    print(f"{len(res.trace)} evaluations in {time.perf_counter() - t0:.1f} s")
    print(f"goal (q={q:g}, {omegas.size} samples): initial {res.initial_goal:.6g}, "
          f"final {res.goal:.6g}, ratio {res.ratio:.4f}")
    print(f"stagnation after evaluation {stag}" if stag is not None
          else "no stagnation detected")
    print("design: " + ", ".join(f"{n}={v:.6g}" for n, v in zip(design.names, res.values)))
    nv = int(cfg["verification_samples"])
    dense = _omegas({"band": dict(cfg["band"], n=nv)}, nv)
    series = []
    goals = []
    for label, surf in (("initial", surface), ("optimized", res.surface)):
        sp = build_spaces(surf, deg, ref)
        sw = frequency_sweep(surf, sp, medium, ports, dense, orders=orders,
                             threads=args.threads)
        write_sweep_csv(out / f"sweep_{label}.csv", sw, timestamp=_timestamp(args))
        series.append((label, sw.frequencies, _db(sw.s())))
        goals.append(goal(sw, q))
    svg_plot(series, out / "sweep.svg")
    print(f"verification ({nv} samples): initial {goals[0]:.6g}, optimized {goals[1]:.6g}, "
          f"ratio {goals[1] / goals[0]:.4f}")
    return EXIT_OK


def cmd_plot(args):
    series = []
    for p in args.csv:
        f, s = read_sweep_csv(p)
        series.append((Path(p).stem, f, _db(s)))
    svg_plot(series, args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def _outdir(args, cfg):
    out = Path(args.output or cfg["output"])
    if not out.is_absolute() and not args.output:
        out = Path(cfg["_base"]) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _overrides(args):
    o = {
        "q": args.q,
        "band.f_min": args.f_min,
        "band.f_max": args.f_max,
        "band.n": args.n_freq,
        "discretization.degree": args.degree,
        "discretization.refinement": args.refinement,
    }
    if getattr(args, "maxfun", None) is not None:
        o["trust_region.maxfun"] = args.maxfun
    return o


def _refinement_arg(text):
    parts = [int(t) for t in text.split(",")]
    if len(parts) == 1:
        return parts[0]
    if len(parts) == 2:
        return parts
    raise argparse.ArgumentTypeError("refinement is H or HU,HV")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="igapeec",
                                 description="Isogeometric A-EFIE solver and shape optimiser.")
    ap.add_argument("--threads", type=_positive_int, default=None,
                    help=f"worker cap (default: ${THREADS_ENV} or CPU count)")
    sub = ap.add_subparsers(dest="command", required=True)
    # the flag is also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS,
                        help=argparse.SUPPRESS)

    c = sub.add_parser("check", parents=[common], help="validate a geometry file")
    c.add_argument("geometry")
    c.set_defaults(func=cmd_check)

    for name, func, hlp in (("sweep", cmd_sweep, "frequency sweep of S11"),
                            ("optimize", cmd_optimize, "shape optimisation")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("config")
        s.add_argument("-o", "--output", help="output directory")
        s.add_argument("--q", type=float)
        s.add_argument("--f-min", type=float, dest="f_min")
        s.add_argument("--f-max", type=float, dest="f_max")
        s.add_argument("--n-freq", type=_positive_int, dest="n_freq")
        s.add_argument("--degree", type=int)
        s.add_argument("--refinement", type=_refinement_arg)
        s.add_argument("--no-timestamp", action="store_true",
                       help="omit the timestamp line in CSV output")
        if name == "sweep":
            s.add_argument("--dump-matrices", action="store_true",
                           help="write L, P, G, M at the first frequency as text")
        else:
            s.add_argument("--maxfun", type=_positive_int)
            s.add_argument("-v", "--verbose", action="store_true")
        s.set_defaults(func=func)

    p = sub.add_parser("plot", parents=[common], help="SVG plot of one or two sweep CSV files")
    p.add_argument("csv", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is None:
        try:
            args.threads = default_threads()
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if args.command == "plot" and not 1 <= len(args.csv) <= 2:
        print("error: plot takes one or two CSV files", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConformityError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (ConfigError, DesignError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (IgaPeecError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
