"""Residual certification, the closed-form example library and the constructive checks.

A pair (u, v) is certified through the monotone discrete operators:

* ``F_h(u) <= f`` and ``G_h(v) >= g`` at every Interior node,
* ``F_h(u) = f`` and ``G_h(v) = g`` where the gap ``u - v`` is open,
* ``u >= v``.

Nodes of the open set whose stencil reaches the detected contact set form the
free-boundary band. The discrete operator straddles the kink there, so those
nodes are reported separately instead of counting against the equation flags.
"""

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import OperatorSpec, PucciParams, operator_eval, pucci_plus
from .errors import ConfigurationError
from .grid import Domain, Field, apply_operator, build_domain, frame_set, stencil
from .solver import ProblemDef, ProblemSpec, SolutionPair

__all__ = [
    "ResidualReport", "residual_report", "AnalyticCase", "analytic_library", "get_case",
    "nonuniqueness_demo", "barrier_check", "bump", "bump_curvature_bound",
]


def _same_domain(a, b):
    return a is b or a.metadata() == b.metadata()


def _node_record(dom, flat, value):
    return {"node": list(dom.node_of(int(flat))),
            "x": [float(c) for c in dom.points[int(flat)]], "value": float(value)}


# --------------------------------------------------------------------------- residual report

@dataclass(eq=False)
class ResidualReport:
    """Residual arrays of a candidate pair; every flag is derived from them on demand."""

    domain: Domain
    rF: np.ndarray          # F_h(u) - f, in Interior order
    rG: np.ndarray          # G_h(v) - g, in Interior order
    gap: np.ndarray         # u - v, flat over the lattice (NaN on Exterior nodes)
    tol: float
    contact_tol: float
    band: np.ndarray        # Interior-order mask: open-set nodes whose stencil meets the contact set

    @property
    def omega(self):
        """Interior-order mask of the open set {gap > contact_tol}."""
        return self.gap[self.domain.interior] > self.contact_tol

    @property
    def certified(self):
        return self.omega & ~self.band

    @property
    def supersolution_F_ok(self):
        return bool(np.all(self.rF <= self.tol))

    @property
    def subsolution_G_ok(self):
        return bool(np.all(self.rG >= -self.tol))

    @property
    def equation_F_on_omega_ok(self):
        return bool(np.all(np.abs(self.rF[self.certified]) <= self.tol))

    @property
    def equation_G_on_omega_ok(self):
        return bool(np.all(np.abs(self.rG[self.certified]) <= self.tol))

    @property
    def ordering_ok(self):
        act = self.domain.active
        return bool(np.all(self.gap[act] >= -self.tol))

    def flags(self):
        return {
            "supersolution_F_ok": self.supersolution_F_ok,
            "equation_F_on_omega_ok": self.equation_F_on_omega_ok,
            "subsolution_G_ok": self.subsolution_G_ok,
            "equation_G_on_omega_ok": self.equation_G_on_omega_ok,
            "ordering_ok": self.ordering_ok,
        }

    @property
    def passed(self):
        return all(self.flags().values())

    def exceptional_nodes(self):
        """Flat indices of band nodes where an equation residual exceeds tol."""
        I = self.domain.interior
        bad = self.omega & self.band & ((np.abs(self.rF) > self.tol) | (np.abs(self.rG) > self.tol))
        return I[bad]

    def failing_nodes(self):
        """Flat indices of every Interior node that violates any inequality or equation."""
        I = self.domain.interior
        bad = (self.rF > self.tol) | (self.rG < -self.tol)
        bad |= self.certified & ((np.abs(self.rF) > self.tol) | (np.abs(self.rG) > self.tol))
        bad |= self.gap[I] < -self.tol
        return I[bad]

    def to_dict(self, max_nodes=50):
        dom = self.domain
        I = dom.interior
        act = dom.active
        out = {"flags": self.flags(), "passed": self.passed, "tol": self.tol,
               "contact_tol": self.contact_tol,
               "counts": {"interior": int(I.size), "omega": int(self.omega.sum()),
                          "band": int(self.band.sum()),
                          "exceptional": int(self.exceptional_nodes().size)}}
        sup = {}
        if I.size:
            k = int(np.argmax(self.rF))
            sup["max_rF"] = _node_record(dom, I[k], self.rF[k])
            k = int(np.argmin(self.rG))
            sup["min_rG"] = _node_record(dom, I[k], self.rG[k])
            k = int(np.argmax(np.abs(self.rF)))
            sup["sup_abs_rF"] = _node_record(dom, I[k], abs(self.rF[k]))
            k = int(np.argmax(np.abs(self.rG)))
            sup["sup_abs_rG"] = _node_record(dom, I[k], abs(self.rG[k]))
            cert = np.flatnonzero(self.certified)
            if cert.size:
                k = cert[int(np.argmax(np.abs(self.rF[cert])))]
                sup["omega_abs_rF"] = _node_record(dom, I[k], abs(self.rF[k]))
                k = cert[int(np.argmax(np.abs(self.rG[cert])))]
                sup["omega_abs_rG"] = _node_record(dom, I[k], abs(self.rG[k]))
        k = act[int(np.argmin(self.gap[act]))]
        sup["min_gap"] = _node_record(dom, k, self.gap[k])
        out["sup_norms"] = sup
        exc = self.exceptional_nodes()[:max_nodes]
        out["exceptional_nodes"] = [[float(c) for c in dom.points[j]] for j in exc]
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(**kw), indent=2, sort_keys=True)


def _band(dom, fs, contact_flat):
    """Interior-order mask: node, or one of its stencil neighbours, lies in the contact set."""
    st = stencil(dom, fs)
    near = contact_flat[st.interior].copy()
    for nb in (st.nplus, st.nminus):
        ok = nb >= 0
        hit = np.zeros(nb.shape, dtype=bool)
        hit[ok] = contact_flat[nb[ok]]
        near |= hit.any(axis=1)
    return near


def residual_report(pair, problem, tol, fs=None, contact_tol=None):
    """Discrete residuals of pair against problem, plus the five certification flags."""
    dom = problem.domain
    if not (_same_domain(pair.u.domain, dom) and _same_domain(pair.v.domain, dom)):
        raise ConfigurationError("pair and problem live on different domains")
    if not tol >= 0:
        raise ConfigurationError("tol must be nonnegative")
    fs = fs or frame_set(dom.dim)
    if contact_tol is None:
        ct = getattr(pair.report, "contact_tol", float("nan"))
        contact_tol = ct if np.isfinite(ct) else 2.0 * dom.h ** 2
    u = Field(dom, pair.u.values)
    v = Field(dom, pair.v.values)
    I = dom.interior
    rF = apply_operator(problem.F, u, fs) - problem.f.flat[I]
    rG = apply_operator(problem.G, v, fs) - problem.g.flat[I]
    gap = u.flat - v.flat
    contact = np.zeros(dom.size, dtype=bool)
    act = dom.active
    contact[act] = gap[act] <= contact_tol
    band = _band(dom, fs, contact) & ~contact[dom.interior]
    return ResidualReport(dom, rF, rG, gap, float(tol), float(contact_tol), band)


# --------------------------------------------------------------------------- analytic cases

@dataclass(frozen=True)
class AnalyticCase:
    """Closed-form solution of the two-membranes system with its data.

    ``hess_u``/``hess_v`` return (k, d, d) Hessians used by the registration
    self-check; ``fb_distance`` is the distance to the known free boundary and
    ``K`` the constant in the certification tolerance ``K * h``.
    """

    name: str
    dim: int
    shape: str
    F: OperatorSpec
    G: OperatorSpec
    u: Callable
    v: Callable
    f: Callable
    g: Callable
    hess_u: Callable
    hess_v: Callable
    contact: Callable
    fb_distance: Callable
    contact_description: str
    K: float
    width: int = 1
    notes: str = ""

    def problem_def(self):
        return ProblemDef(self.dim, self.shape, self.F, self.G, self.f, self.g, self.u, self.v,
                          width=self.width, exact=(self.u, self.v), name=self.name)

    def problem(self, n):
        return self.problem_def().discretize(n)

    def pair(self, domain, contact_tol=None):
        """The closed forms sampled on a grid, wrapped as a SolutionPair."""
        return SolutionPair.from_fields(Field.sample(domain, self.u), Field.sample(domain, self.v),
                                        contact_tol)

    def self_check(self, samples=4000, seed=0, rtol=1e-10):
        """Continuum consistency of the stored closed forms at random points.

        On the open set the equations hold; on the contact set u = v and both
        inequalities hold; u >= v everywhere.
        """
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1.0, 1.0, size=(samples, self.dim))
        if self.shape == "disc":
            x = x[np.linalg.norm(x, axis=1) < 1.0]
        # stay off the free boundary, where the Hessians jump
        x = x[self.fb_distance(x) > 1e-6]
        cu = self.contact(x)
        Fu = operator_eval(self.F, self.hess_u(x))
        Gv = operator_eval(self.G, self.hess_v(x))
        fx, gx = self.f(x), self.g(x)
        scale = 1.0 + np.abs(fx) + np.abs(gx)
        ok_eq = np.all(np.abs(Fu - fx)[~cu] <= rtol * scale[~cu]) and \
            np.all(np.abs(Gv - gx)[~cu] <= rtol * scale[~cu])
        ok_ineq = np.all(Fu <= fx + rtol * scale) and np.all(Gv >= gx - rtol * scale)
        gap = self.u(x) - self.v(x)
        ok_gap = np.all(gap >= -rtol) and np.all(np.abs(gap[cu]) <= rtol) and np.all(gap[~cu] > 0)
        ok_data = np.all(fx - gx >= -rtol)
        return bool(ok_eq and ok_ineq and ok_gap and ok_data)


def _xp(x):
    return np.maximum(x[:, 0], 0.0)


def _hess_from(dxx, dyy=None):
    if dyy is None:
        return dxx[:, None, None]
    z = np.zeros_like(dxx)
    return np.stack([np.stack([dxx, z], -1), np.stack([z, dyy], -1)], -2)


def _one_d_optimal(p):
    F = OperatorSpec("PucciMax", p)
    return AnalyticCase(
        name="one_d_optimal", dim=1, shape="interval", F=F, G=F.partner(),
        u=lambda x: 0.5 * _xp(x) ** 2,
        v=lambda x: -0.5 * _xp(x) ** 2,
        f=lambda x: np.full(len(x), p.Lam),
        g=lambda x: np.full(len(x), -p.Lam),
        hess_u=lambda x: _hess_from((x[:, 0] > 0).astype(float)),
        hess_v=lambda x: _hess_from(-(x[:, 0] > 0).astype(float)),
        contact=lambda x: x[:, 0] <= 0,
        fb_distance=lambda x: np.abs(x[:, 0]),
        contact_description="[-1, 0]",
        K=1.0,
        notes="u = x_+^2/2, v = -u; kink of the second derivative at 0",
    )


def _radial(p, rho=0.5):
    F = OperatorSpec("PucciMax", p)
    L = p.Lam

    def r(x):
        return np.hypot(x[:, 0], x[:, 1])

    def u(x):
        return np.maximum(r(x) - rho, 0.0) ** 2

    def f(x):
        # eigenvalues of D^2u for r > rho: 2 (radial) and 2(r - rho)/r (tangential),
        # both >= 0, so M+ = Lambda * trace; extended continuously by 2 Lambda inside
        rr = np.maximum(r(x), rho)
        return L * (4.0 - 2.0 * rho / rr)

    def hess_u(x):
        rr = r(x)
        out = np.zeros((len(x), 2, 2))
        on = rr > rho
        nrm = x[on] / rr[on, None]
        tan = np.stack([-nrm[:, 1], nrm[:, 0]], 1)
        e_t = 2.0 * (rr[on] - rho) / rr[on]
        out[on] = 2.0 * nrm[:, :, None] * nrm[:, None, :] + e_t[:, None, None] * tan[:, :, None] * tan[:, None, :]
        return out

    return AnalyticCase(
        name="radial_2d", dim=2, shape="box", F=F, G=F.partner(),
        u=u, v=lambda x: -u(x), f=f, g=lambda x: -f(x),
        hess_u=hess_u, hess_v=lambda x: -hess_u(x),
        contact=lambda x: r(x) <= rho,
        fb_distance=lambda x: np.abs(r(x) - rho),
        contact_description=f"closed disc |x| <= {rho:g}",
        K=2.0,
        notes="u = (|x| - 1/2)_+^2, v = -u on the box [-1, 1]^2",
    )


def _free_boundary(p, C=1.0):
    F = OperatorSpec("PucciMax", p)
    lam, L = p.lam, p.Lam
    return AnalyticCase(
        name="fb_counterexample", dim=2, shape="box", F=F, G=F.partner(),
        u=lambda x: x[:, 0] ** 2 - x[:, 1] ** 2 + C * _xp(x) ** 3,
        v=lambda x: x[:, 0] ** 2 - x[:, 1] ** 2,
        f=lambda x: 2.0 * (L - lam) + 6.0 * C * L * _xp(x),
        g=lambda x: np.full(len(x), -2.0 * (L - lam)),
        hess_u=lambda x: _hess_from(2.0 + 6.0 * C * _xp(x), np.full(len(x), -2.0)),
        hess_v=lambda x: _hess_from(np.full(len(x), 2.0), np.full(len(x), -2.0)),
        contact=lambda x: x[:, 0] <= 0,
        fb_distance=lambda x: np.abs(x[:, 0]),
        contact_description="half box {x <= 0}",
        K=2.0 * C * L + 1.0,
        notes=f"u = x^2 - y^2 + C x_+^3, v = x^2 - y^2 with C = {C:g}; w = C x_+^3",
    )


def analytic_library(lam=1.0, Lam=2.0, C=1.0):
    """Registered closed-form cases; each passes its self-check or registration fails."""
    p = PucciParams(lam, Lam)
    cases = [_one_d_optimal(p), _radial(p), _free_boundary(p, C)]
    for case in cases:
        if not case.self_check():
            raise ConfigurationError(f"analytic case {case.name} fails its self-check")
    return cases


def get_case(name, **params):
    for case in analytic_library(**params):
        if case.name == name:
            return case
    names = ", ".join(c.name for c in analytic_library(**params))
    raise ConfigurationError(f"unknown analytic case {name!r} (available: {names})")


# --------------------------------------------------------------------------- non-uniqueness

_BUMP_S = 4.0


def _bump_t(t, deriv=0):
    """exp(s(1 - 1/(1-t^2))) on (-1, 1), zero outside; peak 1 at t = 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    q = 1.0 - ti * ti
    phi = np.exp(_BUMP_S * (1.0 - 1.0 / q))
    if deriv == 0:
        out[inside] = phi
    else:
        g1 = -2.0 * _BUMP_S * ti / q ** 2
        g2 = -2.0 * _BUMP_S * (1.0 + 3.0 * ti * ti) / q ** 3
        out[inside] = phi * (g1 * g1 + g2)
    return out


def _bump_curvature_unit():
    t = np.linspace(-1.0, 1.0, 200001)[1:-1]
    return float(np.abs(_bump_t(t, 2)).max())


_BUMP_D2 = _bump_curvature_unit()       # max |phi''| of the unit bump on (-1, 1)


def bump(amplitude, x, deriv=0):
    """Smooth bump supported in (-1, 0) with peak value ``amplitude`` at x = -1/2."""
    t = 2.0 * (np.asarray(x, dtype=float) + 0.5)      # (-1, 0) -> (-1, 1)
    scale = 1.0 if deriv == 0 else 4.0                # chain rule, d/dx = 2 d/dt
    return amplitude * scale * _bump_t(t, deriv)


def bump_curvature_bound(amplitude):
    """sup |psi''| for the bump of the given amplitude."""
    return 4.0 * _BUMP_D2 * abs(amplitude)


def nonuniqueness_demo(domain, amplitude=0.025, strict=True, fs=None):
    """Two solutions with identical data: the 1D optimal case and its bump perturbation.

    The bump psi is added to both membranes; it lives inside the contact set,
    so the gap and the open set are unchanged. ``strict`` rejects amplitudes
    with sup|psi''| > 1; with ``strict=False`` they are allowed, and the
    perturbed pair then fails certification.
    Returns (pair1, pair2, (report1, report2)).
    """
    if domain.dim != 1:
        raise ConfigurationError("the non-uniqueness construction is one-dimensional")
    if strict and bump_curvature_bound(amplitude) > 1.0 + 1e-12:
        raise ConfigurationError(
            f"amplitude {amplitude:g} gives sup|psi''| = {bump_curvature_bound(amplitude):.4g} > 1; "
            f"admissible amplitudes are <= {1.0 / (4.0 * _BUMP_D2):.6g}")
    case = get_case("one_d_optimal")
    problem = ProblemSpec(domain, case.F, case.G, case.f, case.g, case.u, case.v)
    pair1 = case.pair(domain)
    psi = Field.sample(domain, lambda x: bump(amplitude, x[:, 0]))
    pair2 = SolutionPair.from_fields(pair1.u + psi, pair1.v + psi)
    tol = case.K * domain.h
    return pair1, pair2, (residual_report(pair1, problem, tol, fs),
                          residual_report(pair2, problem, tol, fs))


# --------------------------------------------------------------------------- barrier

def _geometric_candidates(lo=1e-8, hi=1e12, ratio=1.005):
    k = int(np.ceil(np.log(hi / lo) / np.log(ratio))) + 1
    return lo * ratio ** np.arange(k)


def barrier_check(gamma, hnorm, p, samples=1000, ratio=1.005):
    """Smallest candidate C with C lam (g/2)(g/2 - 1) x^(g/2 - 2) <= -hnorm on x in (0, 2].

    The candidates form a geometric list of the given ratio; since the left-hand
    side is linear in C with a negative coefficient, the admissible candidates
    form an upper set and bisection over the list finds the first one. The
    certificate re-evaluates the barrier's Pucci value from its Hessian
    diag(psi'', 0) as an independent route.
    """
    if not 0 < gamma < 1:
        raise ConfigurationError(f"gamma must lie in (0, 1), got {gamma}")
    if not hnorm >= 0:
        raise ConfigurationError("hnorm must be nonnegative")
    if samples < 1:
        raise ConfigurationError("samples must be >= 1")
    x = np.linspace(2.0 / samples, 2.0, samples)
    a = gamma / 2.0
    unit = p.lam * a * (a - 1.0) * x ** (a - 2.0)       # value for C = 1; negative

    def ok(C):
        return bool(np.all(C * unit <= -hnorm))

    cands = _geometric_candidates(ratio=ratio)
    lo, hi = 0, cands.size - 1
    if not ok(cands[hi]):
        raise ConfigurationError("no candidate C is large enough")   # pragma: no cover
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(cands[mid]):
            hi = mid
        else:
            lo = mid + 1
    C = float(cands[lo])
    vals = C * unit
    k = int(np.argmax(vals))                           # closest to violating
    hess = np.zeros((samples, 2, 2))
    hess[:, 0, 0] = C * a * (a - 1.0) * x ** (a - 2.0)
    route2 = pucci_plus(p, hess)
    cert = {
        "C": C,
        "binding_x": float(x[k]),
        "binding_value": float(vals[k]),
        "required": -float(hnorm),
        "margin": float(-hnorm - vals[k]),
        "all_satisfied": bool(np.all(vals <= -hnorm)),
        "samples": int(samples),
        "candidate_ratio": float(ratio),
        "pucci_route_max_diff": float(np.abs(route2 - vals).max()),
    }
    return C, cert
