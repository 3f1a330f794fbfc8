import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from igapeec.errors import DesignError, InfeasibleDesign
from igapeec.geometry import DesignVector
from igapeec.models import flat_plate
from igapeec.optimize import (TRACE_HEADER, OptimizationTrace, TrustRegionConfig, _Model,
                              _trsbox, minimize, optimize_shape)


def quadratic(x):
    return (x[0] - 0.3) ** 2 + 2 * (x[1] + 0.1) ** 2 + 0.5 * x[0] * x[1]


def rosenbrock(x):
    return 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2


def test_quadratic_converges_quickly():
    # minimiser of the quadratic solved from its gradient equations
    H = np.array([[2.0, 0.5], [0.5, 4.0]])
    x_star = np.linalg.solve(H, [0.6, -0.4])
    cfg = TrustRegionConfig(rho_beg=0.5, rho_end=1e-6, maxfun=30, restarts=False)
    res = minimize(quadratic, [1.0, 1.0], [-2, -2], [2, 2], cfg)
    assert res.nfev <= 30
    np.testing.assert_allclose(res.x, x_star, atol=1e-5)


def test_rosenbrock():
    cfg = TrustRegionConfig(rho_beg=0.5, rho_end=1e-6, maxfun=300)
    res = minimize(rosenbrock, [-1.2, 1.0], [-2, -2], [2, 2], cfg)
    assert res.nfev <= 300
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-2)


def test_active_bound():
    cfg = TrustRegionConfig(rho_beg=0.3, rho_end=1e-6, maxfun=60)
    res = minimize(lambda x: (x[0] - 3) ** 2 + x[1] ** 2, [0.0, 0.5], [-1, -1], [1, 1], cfg)
    assert res.x[0] == 1.0
    assert abs(res.x[1]) <= 1e-4


def test_guard_acts_as_barrier():
    # minimum of the unconstrained problem is infeasible
    def fun(x):
        if x[0] + x[1] > 0.5:
            raise InfeasibleDesign("guard")
        return (x[0] - 1) ** 2 + (x[1] - 1) ** 2

    cfg = TrustRegionConfig(rho_beg=0.2, rho_end=1e-5, maxfun=200)
    res = minimize(fun, [0.0, 0.0], [-1, -1], [1, 1], cfg)
    assert res.x.sum() <= 0.5
    # the barrier hides the constraint from the model, so the run ends on
    # the guard line but not necessarily at its constrained optimum 1.125
    assert res.x.sum() >= 0.5 - 1e-3
    assert 1.125 <= res.fun <= 1.2
    assert np.isinf(res.trace.values).any()
    assert res.converged and not res.budget_exhausted


def test_bounds_respected_and_best_monotone():
    seen = []

    def fun(x):
        seen.append(np.array(x))
        return rosenbrock(x)

    res = minimize(fun, [0.2, 0.2], [0, 0], [0.6, 0.5], TrustRegionConfig(maxfun=80))
    pts = np.array(seen)
    assert pts.min(axis=0).min() >= 0 and np.all(pts.max(axis=0) <= [0.6, 0.5])
    b = res.trace.best_values
    assert np.all(np.diff(b) <= 0)
    assert res.fun == b[-1] == res.trace.values.min()


def test_deterministic():
    cfg = TrustRegionConfig(maxfun=60)
    a = minimize(rosenbrock, [-1, 1], [-2, -2], [2, 2], cfg)
    b = minimize(rosenbrock, [-1, 1], [-2, -2], [2, 2], cfg)
    np.testing.assert_array_equal(a.trace.points, b.trace.points)


def test_budget_is_respected():
    res = minimize(rosenbrock, [-1.2, 1.0], [-2, -2], [2, 2], TrustRegionConfig(maxfun=17))
    assert res.nfev == 17 and res.budget_exhausted


def test_input_validation():
    with pytest.raises(DesignError):
        minimize(quadratic, [0, 0], [1, -1], [0, 1])
    with pytest.raises(DesignError):
        minimize(quadratic, [3, 0], [-1, -1], [1, 1])
    with pytest.raises(DesignError):
        minimize(lambda x: np.inf, [0, 0], [-1, -1], [1, 1])
    with pytest.raises(ValueError):
        TrustRegionConfig(rho_beg=0.01, rho_end=0.1)
    with pytest.raises(ValueError):
        TrustRegionConfig(restart_scale=1.0)
    with pytest.raises(ValueError):
        TrustRegionConfig(npt=3).n_points(2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10000))
def test_model_interpolates(n, seed):
    rng = np.random.default_rng(seed)
    m = 2 * n + 1
    Y = rng.uniform(-1, 1, (m, n))
    f = rng.normal(size=m)
    model = _Model(Y, f, Y[0], np.zeros((n, n)))
    assert max(abs(model.value(y) - v) for y, v in zip(Y, f)) <= 1e-8 * (1 + np.abs(f).max())
    L = np.array([model.lagrange(y) for y in Y])
    np.testing.assert_allclose(L, np.eye(m), atol=1e-8)


def test_model_reproduces_quadratic_with_full_set():
    rng = np.random.default_rng(0)
    n = 2
    Y = rng.uniform(-1, 1, ((n + 1) * (n + 2) // 2, n))
    model = _Model(Y, np.array([quadratic(y) for y in Y]), Y[0], np.zeros((n, n)))
    np.testing.assert_allclose(model.H, [[2.0, 0.5], [0.5, 4.0]], atol=1e-9)


def test_trsbox_stays_in_region():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = 3
        A = rng.normal(size=(n, n))
        H = A + A.T
        g = rng.normal(size=n)
        sl, su = -rng.uniform(0, 1, n), rng.uniform(0, 1, n)
        d = _trsbox(g, H, 0.7, sl, su)
        assert np.linalg.norm(d) <= 0.7 + 1e-12
        assert np.all(d >= sl - 1e-12) and np.all(d <= su + 1e-12)
        assert g @ d + 0.5 * d @ H @ d <= 1e-14


def test_stagnation_index():
    t = OptimizationTrace()
    for i, f in enumerate([5, 4, 3, 2] + [2] * 12):
        t.record([i], f, 0.1, 0)
    assert t.stagnation_index() == 3
    short = OptimizationTrace()
    for f in (3, 2, 1):
        short.record([0], f, 0.1, 0)
    assert short.stagnation_index() is None


def test_trace_csv(tmp_path):
    t = OptimizationTrace()
    t.record([0.1, 0.2], 1.5, 0.2, 0)
    t.record([0.3, 0.2], np.inf, 0.2, 1)
    path = tmp_path / "trace.csv"
    t.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(TRACE_HEADER) + ["design_0", "design_1"]
    assert lines[2].split(",")[1] == "inf"
    assert len(lines) == 3


def test_empty_design_shortcut():
    from igapeec.models import strip_dipole
    from igapeec.solve import Port
    res = optimize_shape(strip_dipole(), DesignVector.empty(), degree=1, refinement=1,
                         ports=[Port(1, "u", 0.5)], omegas=[2 * np.pi * 1e10])
    assert len(res.trace) == 1
    assert res.result is None and res.values.size == 0
    assert res.ratio == 1.0


def test_design_bounds_validated():
    with pytest.raises(DesignError):
        DesignVector.from_entries(flat_plate(), [
            {"patch": 0, "i": 0, "j": 0, "axis": "z", "lower": 1.0, "upper": 0.0}])
