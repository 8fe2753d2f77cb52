import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import twomembranes as tm
from twomembranes import (ConfigurationError, Field, PucciParams, SolutionPair, barrier_check,
                          build_domain, get_case, nonuniqueness_demo, residual_report)
from twomembranes.solver import unconstrained_pair
from twomembranes.verify import bump, bump_curvature_bound

P = PucciParams(1.0, 2.0)
CASES = [c.name for c in tm.analytic_library()]


def stencil_reach(dom):
    fs = tm.frame_set(dom.dim)
    return dom.h * max(np.linalg.norm(v) for v in fs.directions)


# --------------------------------------------------------------------------- library

def test_library_values():
    a, b, c = (get_case(n) for n in ("one_d_optimal", "radial_2d", "fb_counterexample"))
    x1 = np.array([[-0.3], [0.4]])
    np.testing.assert_array_equal(a.f(x1), [2.0, 2.0])
    np.testing.assert_array_equal(a.g(x1), [-2.0, -2.0])
    x2 = np.array([[0.2, 0.7], [-0.5, 0.1]])
    np.testing.assert_array_equal(c.g(x2), [-2.0, -2.0])
    np.testing.assert_allclose(c.f(x2), [2.0 + 12.0 * 0.2, 2.0])
    # just outside the kink circle the radial Hessian has eigenvalues {2, 0}
    r = 0.5 + 1e-12
    np.testing.assert_allclose(b.f(np.array([[r, 0.0]])), 2 * 2.0, rtol=1e-10)
    assert set(CASES) >= {"one_d_optimal", "radial_2d", "fb_counterexample"}


def test_radial_rhs_from_symbolic_hessian():
    """Independent route: M+ of the finite-difference Hessian of the closed form."""
    b = get_case("radial_2d")
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, size=(300, 2))
    r = np.linalg.norm(pts, axis=1)
    pts = pts[np.abs(r - 0.5) > 0.05]
    h = 1e-4
    H = np.zeros((len(pts), 2, 2))
    for i in range(2):
        for j in range(2):
            ei, ej = np.eye(2)[i] * h, np.eye(2)[j] * h
            H[:, i, j] = (b.u(pts + ei + ej) - b.u(pts + ei - ej) - b.u(pts - ei + ej)
                          + b.u(pts - ei - ej)) / (4 * h * h)
    outside = np.linalg.norm(pts, axis=1) > 0.5
    np.testing.assert_allclose(tm.pucci_plus(P, H)[outside], b.f(pts)[outside], rtol=1e-5)


def test_self_check_detects_wrong_data():
    a = get_case("one_d_optimal")
    from dataclasses import replace
    bad = replace(a, f=lambda x: np.full(len(x), 1.0))
    assert a.self_check() and not bad.self_check()
    with pytest.raises(ConfigurationError):
        get_case("nope")


# --------------------------------------------------------------------------- residual report

@pytest.mark.parametrize("name", CASES)
@pytest.mark.parametrize("n", [51, 101, 201])
def test_analytic_cases_certify(name, n):
    case = get_case(name)
    pb = case.problem(n)
    dom = pb.domain
    pair = case.pair(dom)
    rep = residual_report(pair, pb, case.K * dom.h)
    assert rep.passed, rep.to_dict()["flags"]
    bad = np.concatenate([rep.failing_nodes(), rep.exceptional_nodes()])
    if bad.size:
        assert case.fb_distance(dom.points[bad]).max() <= stencil_reach(dom) + 1e-12


def test_kink_row_needs_order_h_tolerance():
    """At the node just right of 0 the scheme sees Lambda * (h^2/2)/h^2 = 1 - 0.5 mismatch."""
    case = get_case("one_d_optimal")
    pb = case.problem(101)
    rep = residual_report(case.pair(pb.domain), pb, 0.0)
    assert not rep.passed
    k = np.argmin(np.abs(pb.domain.points[pb.domain.interior, 0]))
    # u = x_+^2/2 at x = 0: M+(h^2/2 / h^2) = Lambda / 2 = 1 < f = 2; the others vanish
    assert rep.rF[k] == pytest.approx(-1.0)
    assert np.abs(np.delete(rep.rF, k)[np.delete(rep.omega, k)]).max() < 1e-9


def test_ordering_violation():
    case = get_case("one_d_optimal")
    pb = case.problem(51)
    dom = pb.domain
    pair = case.pair(dom)
    v = pair.v.copy()
    v.flat[dom.interior[5]] += 1.0
    rep = residual_report(SolutionPair.from_fields(pair.u, v), pb, 0.01)
    assert not rep.ordering_ok


def test_unconstrained_pair_certifies():
    dom = build_domain(1, "interval", 51)
    F = tm.OperatorSpec("PucciMax", P)
    pb = tm.ProblemSpec(dom, F, F.partner(), 2.0, -2.0, 5.0, -5.0)
    u, v = unconstrained_pair(pb)
    rep = residual_report(SolutionPair.from_fields(u, v), pb, 1e-7)
    assert rep.passed and rep.omega.all() and not rep.band.any()
    assert rep.gap[dom.active].min() > 0


def test_report_serialization_and_domain_mismatch():
    case = get_case("fb_counterexample")
    pb = case.problem(41)
    pair = case.pair(pb.domain)
    d = json.loads(residual_report(pair, pb, case.K * pb.domain.h).to_json())
    assert set(d["flags"]) == {"supersolution_F_ok", "equation_F_on_omega_ok", "subsolution_G_ok",
                               "equation_G_on_omega_ok", "ordering_ok"}
    assert "x" in d["sup_norms"]["max_rF"] and d["passed"]
    with pytest.raises(ConfigurationError):
        residual_report(case.pair(build_domain(2, "box", 21)), pb, 0.1)
    with pytest.raises(ConfigurationError):
        residual_report(pair, pb, -1.0)


@given(st.floats(0, 0.5), st.floats(0, 0.5), st.integers(0, 1000))
def test_flags_monotone_in_tol(t1, t2, seed):
    lo, hi = sorted((t1, t2))
    case = get_case("one_d_optimal")
    pb = case.problem(31)
    rng = np.random.default_rng(seed)
    pair = case.pair(pb.domain)
    noisy = SolutionPair.from_fields(pair.u + 0.01 * rng.normal(size=pb.domain.size), pair.v)
    a = residual_report(noisy, pb, lo).flags()
    b = residual_report(noisy, pb, hi).flags()
    assert all(b[k] for k in a if a[k])


# --------------------------------------------------------------------------- non-uniqueness

D1 = build_domain(1, "interval", 201)


def test_nonuniqueness_admissible():
    p1, p2, (r1, r2) = nonuniqueness_demo(D1, 0.025)
    assert r1.passed and r2.passed
    diff = np.abs(p1.u.flat - p2.u.flat)
    assert diff.max() >= 0.025 / 2
    x = D1.coords
    assert np.all(diff[(x <= -1) | (x >= 0)] == 0.0)
    np.testing.assert_array_equal(p1.gap.flat, p2.gap.flat)


def test_nonuniqueness_zero_amplitude():
    p1, p2, _ = nonuniqueness_demo(D1, 0.0)
    np.testing.assert_array_equal(p1.u.flat, p2.u.flat)
    np.testing.assert_array_equal(p1.v.flat, p2.v.flat)


def test_nonuniqueness_too_large():
    with pytest.raises(ConfigurationError, match="admissible"):
        nonuniqueness_demo(D1, 0.2)
    _, _, (r1, r2) = nonuniqueness_demo(D1, 0.2, strict=False)
    assert r1.passed and not r2.passed
    assert not (r2.supersolution_F_ok and r2.subsolution_G_ok)
    with pytest.raises(ConfigurationError):
        nonuniqueness_demo(build_domain(2, "box", 11))


def test_bump_curvature():
    x = np.linspace(-1, 0, 200001)
    d2 = np.gradient(np.gradient(bump(1.0, x), x), x)
    assert np.abs(d2[100:-100]).max() == pytest.approx(bump_curvature_bound(1.0), rel=1e-3)
    np.testing.assert_allclose(bump(1.0, x, 2)[1000:-1000], d2[1000:-1000], atol=1e-3)
    assert bump(1.0, np.array([-0.5]))[0] == 1.0
    assert bump_curvature_bound(0.031) < 1.0 < bump_curvature_bound(0.0315)


# --------------------------------------------------------------------------- barrier

def test_barrier_half():
    C, cert = barrier_check(0.5, 1.0, P)
    exact = 16.0 / (3.0 * 2 ** (-7 / 4))
    assert exact <= C <= exact * 1.005 + 1e-12
    assert cert["all_satisfied"] and cert["binding_x"] == 2.0
    assert cert["pucci_route_max_diff"] <= 1e-9 * C


def test_barrier_zero_rhs():
    C, cert = barrier_check(0.5, 0.0, P)
    assert C == pytest.approx(1e-8) and cert["all_satisfied"]


def test_barrier_constant_against_gamma():
    """Derived from the closed form C(gamma) = hnorm / (lam a (1 - a) 2^(a - 2)), a = gamma/2."""
    gammas = np.linspace(0.05, 0.95, 10)
    Cs = np.array([barrier_check(g, 1.0, P)[0] for g in gammas])
    a = gammas / 2
    exact = 1.0 / (a * (1 - a) * 2 ** (a - 2))
    assert np.all(Cs >= exact) and np.all(Cs <= exact * 1.005 + 1e-12)
    assert np.all(np.diff(Cs) < 0)


def test_barrier_errors():
    for g in (0.0, 1.0):
        with pytest.raises(ConfigurationError):
            barrier_check(g, 1.0, P)
    with pytest.raises(ConfigurationError):
        barrier_check(0.5, -1.0, P)
