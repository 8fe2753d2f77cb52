import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import twomembranes as tm
from twomembranes import (ConfigurationError, Field, OperatorSpec, ProblemDef, ProblemSpec,
                          PucciParams, SolutionPair, SolverConfig, StageFailure, build_domain,
                          frame_set, penalized_map, solve_dirichlet, solve_penalized,
                          solve_two_membranes)
from twomembranes.core import beta_eps_eval
from twomembranes.grid import apply_operator
from twomembranes.solver import penalized_residuals, unconstrained_pair

from conftest import no_contact_problem

P = PucciParams(1.0, 2.0)
FMAX = OperatorSpec("PucciMax", P)
FMIN = FMAX.partner()
D1 = build_domain(1, "interval", 41)


def q(x):
    return x[:, 0]


# --------------------------------------------------------------------------- Dirichlet

def test_dirichlet_quadratic_exact():
    u = solve_dirichlet(FMAX, 2.0, lambda x: 0.5 * q(x) ** 2, D1)
    np.testing.assert_allclose(u.flat, 0.5 * D1.coords ** 2, atol=1e-9)


def test_dirichlet_affine_exact_2d():
    dom = build_domain(2, "box", 21)
    aff = lambda x: 1.0 + 0.5 * x[:, 0] - 2.0 * x[:, 1]
    u = solve_dirichlet(FMAX, 0.0, aff, dom)
    np.testing.assert_allclose(u.flat, aff(dom.points), atol=1e-9)


def test_dirichlet_with_kinked_boundary_data():
    """rhs = Lambda with data from x_+^2/2 is solved by the quadratic through that data."""
    dom = build_domain(1, "interval", 201)
    u = solve_dirichlet(FMAX, 2.0, lambda x: 0.5 * np.maximum(q(x), 0) ** 2, dom)
    exact = 0.5 * dom.coords ** 2 + 0.25 * dom.coords - 0.25
    np.testing.assert_allclose(u.flat, exact, atol=1e-9)


@pytest.mark.parametrize("dim, shape, n", [(1, "interval", 31), (2, "box", 21), (2, "disc", 25)])
def test_dirichlet_residual_target(dim, shape, n):
    dom = build_domain(dim, shape, n)
    fs = frame_set(dim)
    rhs = Field.sample(dom, lambda x: 1.0 + np.sin(3 * x[:, 0]))
    cfg = SolverConfig()
    u = solve_dirichlet(FMIN, rhs, lambda x: np.cos(x[:, 0]), dom, fs, cfg)
    res = apply_operator(FMIN, u, fs) - rhs.flat[dom.interior]
    assert np.abs(res).max() <= cfg.resolve(dom).inner_tol
    b = dom.boundary
    np.testing.assert_array_equal(u.flat[b], np.cos(dom.proj[b, 0]))


def test_dirichlet_plain_sweeps_and_jacobi():
    dom = build_domain(1, "interval", 21)
    for sweep in ("GaussSeidel", "Jacobi"):
        cfg = SolverConfig(accelerate=False, sweep=sweep, inner_tol=1e-9)
        u = solve_dirichlet(FMAX, 2.0, lambda x: 0.5 * q(x) ** 2, dom, cfg=cfg)
        np.testing.assert_allclose(u.flat, 0.5 * dom.coords ** 2, atol=1e-8)


def test_dirichlet_errors():
    hist = []
    cfg = SolverConfig(accelerate=False, max_inner=2)
    with pytest.raises(tm.NonConvergenceError) as exc:
        solve_dirichlet(FMAX, 1.0, 0.0, D1, cfg=cfg, history=hist)
    assert len(exc.value.history) == 3 and hist == exc.value.history
    rhs = Field.constant(D1, 1.0)
    rhs.flat[D1.interior[3]] = np.nan
    with pytest.raises(tm.DivergenceError):
        solve_dirichlet(FMAX, rhs, 0.0, D1)


@settings(max_examples=25)
@given(st.integers(0, 10 ** 6), st.sampled_from([1, 2]))
def test_discrete_comparison(seed, dim):
    rng = np.random.default_rng(seed)
    dom = build_domain(dim, "interval" if dim == 1 else "box", 11 if dim == 2 else 21)
    spec = FMAX if rng.random() < 0.5 else FMIN
    r1 = Field(dom, rng.normal(size=dom.size))
    r2 = Field(dom, r1.flat + np.abs(rng.normal(size=dom.size)))
    b1 = Field(dom, rng.normal(size=dom.size))
    b2 = Field(dom, b1.flat - np.abs(rng.normal(size=dom.size)))
    cfg = SolverConfig()
    u1 = solve_dirichlet(spec, r1, b1, dom, cfg=cfg)
    u2 = solve_dirichlet(spec, r2, b2, dom, cfg=cfg)
    tol = cfg.resolve(dom).inner_tol
    assert np.all(u1.flat >= u2.flat - 10 * tol)


# --------------------------------------------------------------------------- problem model

def _problem(dom=D1, **kw):
    args = dict(F=FMAX, G=FMIN, f=2.0, g=-2.0, u0=lambda x: 0.5 * np.maximum(q(x), 0) ** 2,
                v0=lambda x: -0.5 * np.maximum(q(x), 0) ** 2)
    args.update(kw)
    return ProblemSpec(dom, **args)


def test_problem_invariants():
    with pytest.raises(ConfigurationError, match="u0 > v0"):
        _problem(u0=0.0, v0=1.0)
    with pytest.raises(ConfigurationError, match="u0 > v0"):
        _problem(u0=0.0, v0=0.0)
    with pytest.raises(ConfigurationError, match="compatible"):
        _problem(G=OperatorSpec("PucciMin", PucciParams(1.0, 3.0)))
    with pytest.raises(ConfigurationError, match="convex"):
        _problem(F=FMIN)
    with pytest.raises(ConfigurationError, match="concave"):
        _problem(G=FMAX)
    with pytest.raises(ConfigurationError, match="f - g"):
        _problem(f=0.0, g=1.0)
    assert _problem(f=0.0, g=1.0, allow_degenerate=True).N == 1.0


def test_relaxed_compatibility_flag():
    # M-(X) with a wider range satisfies F(X) <= -G(-X) but not equality
    G = OperatorSpec("PucciMin", PucciParams(0.5, 3.0))
    with pytest.raises(ConfigurationError):
        _problem(G=G)
    assert _problem(G=G, relaxed_compatibility=True).G is G


def test_solver_config_validation():
    for bad in (dict(eps_factor=1.0), dict(eps_stages=0), dict(sweep="SOR"), dict(eps0=-1.0),
                dict(coupling="anderson"), dict(relaxation=0.0), dict(max_newton=0),
                dict(refine_stages=0)):
        with pytest.raises(ConfigurationError):
            SolverConfig(**bad)
    cfg = SolverConfig().resolve(D1)
    assert cfg.eps0 * 0.5 ** 7 == pytest.approx(0.5 * D1.h ** 2)
    assert cfg.inner_tol == 1e-8 and cfg.contact_tol == pytest.approx(2 * D1.h ** 2)
    assert SolverConfig().resolve(build_domain(2, "box", 11)).inner_tol == 1e-7


# --------------------------------------------------------------------------- penalized map

def test_penalized_map_inactive_penalty():
    pb = _problem(u0=1.0, v0=-1.0)
    free_u, free_v = unconstrained_pair(pb)
    u, v = penalized_map(pb, free_u, free_v, eps=1e-3)
    np.testing.assert_allclose(u.flat, free_u.flat, atol=1e-12)
    np.testing.assert_allclose(v.flat, free_v.flat, atol=1e-12)


def test_penalized_map_full_penalty():
    pb = _problem()
    same = Field(D1, np.where(np.isin(np.arange(D1.size), D1.boundary), pb.ub, 0.0))
    u, v = penalized_map(pb, same, Field(D1, same.values.copy()), eps=0.1)
    N = pb.N
    eu = solve_dirichlet(FMAX, 2.0 - N, pb.ub_field, D1)
    ev = solve_dirichlet(FMIN, -2.0 + N, pb.vb_field, D1)
    np.testing.assert_allclose(u.flat, eu.flat, atol=1e-9)
    np.testing.assert_allclose(v.flat, ev.flat, atol=1e-9)


@pytest.mark.parametrize("coupling", ["newton", "picard"])
def test_fixed_point_has_small_penalized_residual(coupling):
    pb = _problem()
    cfg = SolverConfig(coupling=coupling, relaxation=0.1 if coupling == "picard" else 1.0)
    u, v = solve_penalized(pb, 0.2, cfg)
    rF, rG = penalized_residuals(pb, u, v, pb.penalty(0.2))
    assert max(np.abs(rF).max(), np.abs(rG).max()) <= 10 * cfg.resolve(D1).inner_tol
    u2, v2 = penalized_map(pb, u, v, 0.2, cfg)
    assert np.abs(u2.flat - u.flat).max() <= 1e-6 and np.abs(v2.flat - v.flat).max() <= 1e-6


@pytest.mark.parametrize("eps, omega", [(0.5, 0.25), (0.2, 0.1)])
def test_picard_and_newton_agree(eps, omega):
    """Damped iteration of T reaches the same fixed point as coupled Newton."""
    pb = _problem()
    un, vn = solve_penalized(pb, eps, SolverConfig(coupling="newton"))
    up, vp = solve_penalized(pb, eps, SolverConfig(coupling="picard", relaxation=omega,
                                                   picard_tol=1e-11, max_picard=2000))
    assert np.abs(un.flat - up.flat).max() <= 1e-7
    assert np.abs(vn.flat - vp.flat).max() <= 1e-7


def test_undamped_picard_oscillates_here():
    # T is not a contraction for this data: undamped iteration stalls at the cap
    with pytest.raises(tm.NonConvergenceError) as exc:
        solve_penalized(_problem(), 0.5, SolverConfig(coupling="picard", max_picard=200))
    assert exc.value.history[-1] > 0.1


def test_picard_cap():
    with pytest.raises(tm.NonConvergenceError):
        solve_penalized(_problem(), 1e-3, SolverConfig(coupling="picard", max_picard=2))


def test_no_contact_penalized():
    pb = no_contact_problem(41)
    cfg = SolverConfig().resolve(pb.domain)
    u, v = solve_penalized(pb, 1e-3, cfg)
    assert np.all((u.flat - v.flat)[pb.domain.active] > cfg.contact_tol)


def test_mirror_symmetry():
    pb = _problem()
    u, v = solve_penalized(pb, 0.05)
    np.testing.assert_allclose(v.flat, -u.flat, atol=1e-9)


# --------------------------------------------------------------------------- continuation

def test_one_d_contact_set_and_report():
    case = tm.get_case("one_d_optimal")
    pb = case.problem(201)
    pair = solve_two_membranes(pb)
    dom = pb.domain
    x = dom.coords[pair.contact_mask]
    assert abs(x.min() + 1) <= 2 * dom.h and abs(x.max()) <= 2 * dom.h
    rep = pair.report
    assert rep.converged and rep.failed_eps is None
    assert max(rep.residual_F, rep.residual_G) <= 10 * rep.inner_tol
    assert [s["eps"] for s in rep.eps_trace][-1] == pytest.approx(0.5 * dom.h ** 2)
    gap = pair.gap.flat[dom.active]
    assert gap.min() >= -rep.contact_tol
    b = dom.boundary
    np.testing.assert_array_equal(pair.u.flat[b], pb.ub[b])
    np.testing.assert_array_equal(pair.v.flat[b], pb.vb[b])
    beta = beta_eps_eval(pb.penalty(rep.eps_trace[-1]["eps"]), gap)
    assert beta.min() >= -pb.N and beta.max() <= 0.0
    assert set(rep.to_dict()) - {"wall_time"} == set(rep.to_dict(include_timing=False))


def test_no_contact_empty_mask():
    pair = solve_two_membranes(no_contact_problem(101))
    assert not pair.contact_mask.any()


def test_unconstrained_instance_is_unchanged():
    pb = _problem(u0=10.0, v0=-10.0)
    free_u, free_v = unconstrained_pair(pb)
    pair = solve_two_membranes(pb, SolverConfig(multilevel=False))
    assert all(s["change"] <= 1e-10 for s in pair.report.eps_trace[1:])
    np.testing.assert_allclose(pair.u.flat, free_u.flat, atol=1e-10)
    assert not pair.contact_mask.any()


def test_determinism_bitwise():
    pb = tm.get_case("fb_counterexample").problem(41)
    a = solve_two_membranes(pb)
    b = solve_two_membranes(pb)
    assert a.u.values.tobytes() == b.u.values.tobytes()
    assert a.v.values.tobytes() == b.v.values.tobytes()
    assert a.report.to_dict() == b.report.to_dict()


def test_multilevel_matches_single_level():
    pb = tm.get_case("one_d_optimal").problem(161)
    ml = solve_two_membranes(pb)
    sl = solve_two_membranes(pb, SolverConfig(multilevel=False))
    assert {s["n"] for s in ml.report.eps_trace} == {21, 41, 81, 161}
    assert {s["n"] for s in sl.report.eps_trace} == {161}
    # both runs end on the same penalized system, which has a single solution
    assert np.abs(ml.u.flat - sl.u.flat).max() <= 1e-6


def test_stage_failure_carries_report_and_partial_fields():
    pb = tm.get_case("one_d_optimal").problem(81)
    with pytest.raises(StageFailure) as exc:
        solve_two_membranes(pb, SolverConfig(max_newton=1))
    err = exc.value
    assert err.eps > 0 and err.report.failed_eps == err.eps and not err.report.converged
    assert err.partial[0].domain is pb.domain


def test_problem_def_and_coarsen():
    case = tm.get_case("fb_counterexample")
    pdef = case.problem_def()
    assert isinstance(pdef, ProblemDef) and pdef.name == "fb_counterexample"
    pb = pdef.discretize(41)
    assert pb.can_coarsen() and not pb.coarsen().can_coarsen()
    c = pb.coarsen()
    np.testing.assert_array_equal(c.f.values, pb.f.values[::2, ::2])
    with pytest.raises(ConfigurationError):
        pdef.discretize(43).coarsen()


def test_solution_pair_from_fields():
    u = Field.sample(D1, lambda x: np.maximum(q(x), 0.0))
    v = Field.constant(D1, 0.0)
    pair = SolutionPair.from_fields(u, v)
    assert pair.contact_mask.sum() == (D1.coords <= 0).sum()
    with pytest.raises(ConfigurationError):
        SolutionPair.from_fields(u, Field.constant(build_domain(1, "interval", 11), 0.0))
