import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import twomembranes as tm
from twomembranes import (ConfigurationError, Field, SolutionPair, build_domain,
                          contact_eigen_check, get_case, holder_seminorm, nondegeneracy_curve,
                          refinement_study, second_diff_supnorm)
from twomembranes.diagnostics import regularity_report


def sample(dom, fn):
    return Field.sample(dom, fn)


# --------------------------------------------------------------------------- second differences

def test_second_diff_kink_profile():
    dom = build_domain(1, "interval", 401)
    u = sample(dom, lambda x: 0.5 * np.maximum(x[:, 0], 0) ** 2)
    I = dom.interior
    away = I[np.abs(dom.points[I, 0]) > 1.5 * dom.h]
    assert abs(second_diff_supnorm(u, region=away[dom.points[away, 0] > 0]) - 1.0) <= 1e-10
    assert second_diff_supnorm(u) == pytest.approx(1.0, abs=1e-10)


def test_second_diff_affine_and_quartic():
    dom = build_domain(2, "box", 41)
    assert second_diff_supnorm(sample(dom, lambda x: 2 - x[:, 0] + 3 * x[:, 1])) <= 1e-10
    prev = None
    for n in (101, 201, 401):
        d = build_domain(1, "interval", n)
        val = second_diff_supnorm(sample(d, lambda x: x[:, 0] ** 4), region=d.interior)
        # boundary-adjacent node x = 1 - h: (12 x^2 + 2 h^2) -> 12
        x = 1 - d.h
        assert val == pytest.approx(12 * x ** 2 + 2 * d.h ** 2, rel=1e-9)
        if prev is not None:
            assert abs(val - 12) < abs(prev - 12)
        prev = val


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_second_diff_affine_invariance(a, b, c):
    dom = build_domain(2, "box", 21)
    u = sample(dom, lambda x: np.sin(2 * x[:, 0]) * x[:, 1] ** 2)
    w = sample(dom, lambda x: np.sin(2 * x[:, 0]) * x[:, 1] ** 2 + a + b * x[:, 0] + c * x[:, 1])
    assert second_diff_supnorm(w) == pytest.approx(second_diff_supnorm(u), abs=1e-9 * (1 + abs(a) + abs(b) + abs(c)))


def test_second_diff_region_must_be_interior():
    dom = build_domain(1, "interval", 21)
    with pytest.raises(ConfigurationError):
        second_diff_supnorm(sample(dom, lambda x: x[:, 0]), region=dom.boundary)


# --------------------------------------------------------------------------- Hölder

def test_holder_examples():
    d = build_domain(1, "interval", 201)
    assert holder_seminorm(Field.constant(d, 3.0), 0.5) == 0.0
    assert holder_seminorm(sample(d, lambda x: np.sqrt(np.abs(x[:, 0]))), 0.5) == pytest.approx(1.0, abs=1e-12)
    assert holder_seminorm(sample(d, lambda x: x[:, 0]), 1.0) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(ConfigurationError):
        holder_seminorm(Field.constant(d, 0.0), 0.0)


def test_holder_sampling_is_seeded_and_below_exhaustive():
    d = build_domain(2, "box", 81)
    u = sample(d, lambda x: np.sqrt(np.abs(x[:, 0] * x[:, 1])))
    a = holder_seminorm(u, 0.5, pairs=20000, seed=1)
    b = holder_seminorm(u, 0.5, pairs=20000, seed=1)
    assert a == b
    assert a <= holder_seminorm(u, 0.5, pairs="all") + 1e-12


def test_regularity_report_dict():
    d = build_domain(1, "interval", 51)
    rep = regularity_report(sample(d, lambda x: x[:, 0] ** 2), etas=(0.5, 1.0))
    out = rep.to_dict()
    assert set(out["holder_estimates"]) == {"0.5", "1"} and out["second_diff_sup"] >= 0


# --------------------------------------------------------------------------- contact eigenvalues

def test_contact_eigen_case_a():
    case = get_case("one_d_optimal")
    pb = case.problem(101)
    rep = contact_eigen_check(case.pair(pb.domain), pb, case.K * pb.domain.h)
    assert rep.passed and rep.nodes_checked > 0
    # gap(h) = h^2 <= 2h^2 puts x = h in the mask, so the deepest node x = 0 sees
    # u'' = (h^2/2)/h^2 = 1/2: margin (Lambda - lambda)/2 - (f - g) = 1/2 - 4
    assert rep.max_margin == pytest.approx(-3.5)


def test_contact_eigen_synthetic_violation():
    dom = build_domain(1, "interval", 51)
    F = tm.OperatorSpec("PucciMax", tm.PucciParams(1.0, 2.0))
    pb = tm.ProblemSpec(dom, F, F.partner(), 0.0, 0.0, 1.0, 0.0)
    u = sample(dom, lambda x: x[:, 0] ** 2)
    pair = SolutionPair.from_fields(u, u.copy())
    mask = np.ones(dom.lattice_shape, dtype=bool)
    rep = contact_eigen_check(pair, pb, 1e-9, mask=mask)
    assert not rep.passed
    np.testing.assert_allclose([v["margin"] for v in rep.violations], 2.0, rtol=1e-9)
    assert {v["field"] for v in rep.violations} == {"u", "v"}


def test_contact_eigen_empty_mask():
    case = get_case("fb_counterexample")
    pb = case.problem(21)
    rep = contact_eigen_check(case.pair(pb.domain), pb, 0.1,
                              mask=np.zeros(pb.domain.lattice_shape, dtype=bool))
    assert rep.passed and rep.nodes_checked == 0
    with pytest.raises(ConfigurationError):
        contact_eigen_check(case.pair(pb.domain), pb, 0.1, mask=np.zeros(3, dtype=bool))


# --------------------------------------------------------------------------- non-degeneracy

def test_nondegeneracy_cubic_and_quadratic():
    case = get_case("fb_counterexample")
    d = build_domain(2, "box", 401)
    pair = case.pair(d)
    cube = nondegeneracy_curve(pair.gap)
    assert 2.9 <= cube.slope <= 3.1
    quad = nondegeneracy_curve(sample(d, lambda x: (x ** 2).sum(1)))
    assert 1.95 <= quad.slope <= 2.05
    fields = list(csv.reader(io.StringIO(cube.to_csv())))
    assert fields[0] == ["r", "sup_w"] and len(fields) == 18
    assert json.loads(json.dumps(cube.to_dict()))["degenerate"] is False


@pytest.mark.parametrize("p, n", [(1.5, 201), (2.0, 201), (3.0, 201), (4.0, 401)])
def test_power_law_slopes_over_a_decade(p, n):
    """The h/2 band biases the slope by about -p h / (2 r); p = 4 needs n = 401."""
    d = build_domain(2, "box", n)
    c = nondegeneracy_curve(sample(d, lambda x: np.linalg.norm(x, axis=1) ** p),
                            radii=np.geomspace(0.09, 0.9, 12))
    assert abs(c.slope - p) <= 0.05


def test_band_bias_is_first_order():
    w = lambda x: np.linalg.norm(x, axis=1) ** 4
    radii = np.geomspace(0.1, 1.0, 12)
    errs = [abs(nondegeneracy_curve(sample(build_domain(2, "box", n), w), radii=radii).slope - 4)
            for n in (201, 401, 801)]
    assert errs[0] / errs[1] > 1.7 and errs[1] / errs[2] > 1.7


def test_nondegeneracy_degenerate_and_errors():
    d = build_domain(2, "box", 41)
    assert nondegeneracy_curve(Field.constant(d, 0.0)).degenerate
    w = sample(d, lambda x: x[:, 0] ** 2)
    with pytest.raises(ConfigurationError):
        nondegeneracy_curve(w, center=(0.01, 0.0))
    with pytest.raises(ConfigurationError):
        nondegeneracy_curve(w, radii=[0.3, 0.2])
    with pytest.raises(ConfigurationError):
        nondegeneracy_curve(w, center=(0.6, 0.0))


# --------------------------------------------------------------------------- refinement

def test_refinement_study_case_a():
    table = refinement_study(get_case("one_d_optimal").problem_def(), [51, 101, 201])
    err = table.column("err_u")
    assert np.all(np.diff(err) < 0)
    assert max(table.ratios()) <= 1.25
    assert all(o > 1.5 for o in table.orders("err_u"))
    text = table.to_csv()
    assert text.splitlines()[0].startswith("n,h,err_u") and "runtime" not in text
    d = table.to_dict()
    assert "runtime" not in d["rows"][0] and "order_u" in d
    assert "runtime" in table.to_dict(include_timing=True)["rows"][0]


def test_refinement_study_exact_quadratic():
    F = tm.OperatorSpec("PucciMax", tm.PucciParams(1.0, 2.0))
    u = lambda x: 0.5 * x[:, 0] ** 2 + 1.0
    v = lambda x: -0.5 * x[:, 0] ** 2 - 1.0
    pdef = tm.ProblemDef(1, "interval", F, F.partner(), 2.0, -2.0, u, v, exact=(u, v), name="quad")
    table = refinement_study(pdef, [21, 41, 81])
    assert table.column("err_u").max() <= 1e-10 and table.column("err_v").max() <= 1e-10


def test_unconstrained_smooth_problem_order():
    """Error against a fine-grid reference decays at least like h^1.5."""
    F = tm.OperatorSpec("PucciMax", tm.PucciParams(1.0, 2.0))
    f = lambda x: 2.0 + np.sin(3 * x[:, 0])
    pdef = tm.ProblemDef(1, "interval", F, F.partner(), f, lambda x: -f(x),
                         lambda x: np.cos(x[:, 0]) + 2.0, lambda x: -np.cos(x[:, 0]) - 2.0)
    ref_n = 1281
    ref = tm.solve_two_membranes(pdef.discretize(ref_n))
    errs, hs = [], []
    for n in (41, 81, 161):
        sol = tm.solve_two_membranes(pdef.discretize(n))
        step = (ref_n - 1) // (n - 1)
        errs.append(np.abs(sol.u.flat - ref.u.flat[::step]).max())
        hs.append(2.0 / (n - 1))
    orders = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    assert np.all(orders >= 1.5), orders
    # no contact: the same table from refinement_study has NaN errors and zero contact nodes
    table = refinement_study(pdef, [41, 81])
    assert np.isnan(table.column("err_u")).all() and table.column("contact_nodes").max() == 0
    assert "order_u" not in table.to_dict()


def test_refinement_study_validation():
    with pytest.raises(ConfigurationError):
        refinement_study(get_case("one_d_optimal").problem_def(), [101, 51])
