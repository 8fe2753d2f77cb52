"""Dirichlet solves, the penalized fixed-point map and epsilon continuation."""

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import pyamg
from scipy.sparse.linalg import spsolve

from ._backend import BACKEND, kernels
from .core import OperatorKind, OperatorSpec, PenaltyConfig, beta_eps_eval, beta_eps_prime, operator_eval
from .errors import (ConfigurationError, DivergenceError, NonConvergenceError, StageFailure,
                     TwoMembranesError)
from .grid import Domain, Field, build_domain, frame_set, stencil

log = logging.getLogger(__name__)

__all__ = [
    "ProblemSpec", "ProblemDef", "SolverConfig", "SolutionPair", "SolveReport",
    "solve_dirichlet", "penalized_map", "solve_penalized", "solve_two_membranes",
    "penalized_residuals",
]

BoundaryFn = Callable[[np.ndarray], np.ndarray]


def _boundary_values(domain, boundary):
    """Flat array holding boundary data on Boundary nodes (NaN elsewhere)."""
    out = np.full(domain.size, np.nan)
    b = domain.boundary
    if isinstance(boundary, Field):
        out[b] = boundary.flat[b]
    elif callable(boundary):
        out[b] = np.broadcast_to(np.asarray(boundary(domain.proj[b]), dtype=float), b.shape)
    else:
        out[b] = float(boundary)
    if not np.all(np.isfinite(out[b])):
        raise ConfigurationError("boundary data is not finite")
    return out


def _as_field(domain, data):
    if isinstance(data, Field):
        return data
    if callable(data):
        return Field.sample(domain, data)
    return Field.constant(domain, float(data))


# --------------------------------------------------------------------------- problem

@dataclass(eq=False)
class ProblemSpec:
    """Discretized two-membranes data.

    ``u0``/``v0`` are boundary functions ``points -> values`` (or Fields); they
    are sampled on Boundary nodes at their projection points.
    """

    domain: Domain
    F: OperatorSpec
    G: OperatorSpec
    f: Field
    g: Field
    u0: object
    v0: object
    allow_degenerate: bool = False
    relaxed_compatibility: bool = False
    exact: Optional[tuple] = None      # optional closed-form (u, v) callables

    def __post_init__(self):
        self.f = _as_field(self.domain, self.f).check_finite()
        self.g = _as_field(self.domain, self.g).check_finite()
        self.ub = _boundary_values(self.domain, self.u0)
        self.vb = _boundary_values(self.domain, self.v0)
        self.validate()

    def validate(self):
        if self.F.kind not in (OperatorKind.PUCCI_MAX, OperatorKind.BELLMAN_MAX):
            raise ConfigurationError(f"F must be a convex (sup-type) operator, got {self.F.kind.value}")
        if self.G.kind not in (OperatorKind.PUCCI_MIN, OperatorKind.BELLMAN_MIN):
            raise ConfigurationError(f"G must be a concave (inf-type) operator, got {self.G.kind.value}")
        self._check_compatibility()
        b = self.domain.boundary
        gap = self.ub[b] - self.vb[b]
        if np.any(gap < 0) or not np.any(gap > 0):
            raise ConfigurationError(
                "boundary data must satisfy u0 > v0 on the boundary "
                f"(min u0 - v0 = {gap.min():.6g}); equality is tolerated only on part of it")
        a = self.domain.active
        if not self.allow_degenerate and np.any(self.f.flat[a] - self.g.flat[a] < 0):
            raise ConfigurationError(
                "f - g >= 0 is required (set allow_degenerate to study the no-contact regime)")

    def _check_compatibility(self, samples=64, seed=12345):
        rng = np.random.default_rng(seed)
        d = self.domain.dim
        X = rng.normal(size=(samples, d, d))
        if self.F.is_bellman or self.G.is_bellman:
            X = X * np.eye(d)      # Bellman families act on frame-diagonal matrices
        else:
            X = 0.5 * (X + np.swapaxes(X, 1, 2))
        gv = operator_eval(self.G, X)
        fv = -operator_eval(self.F, -X)
        scale = 1.0 + np.abs(fv)
        if self.relaxed_compatibility:
            # only F(X) <= -G(-X) is needed for existence
            ok = np.all(operator_eval(self.F, X) <= -operator_eval(self.G, -X) + 1e-12 * scale)
        else:
            ok = np.allclose(gv, fv, rtol=1e-12, atol=1e-12)
        if not ok:
            raise ConfigurationError("G is not compatible with F: need G(X) = -F(-X)")

    def can_coarsen(self, min_n=21):
        d = self.domain
        return d.shape in ("interval", "box") and (d.n - 1) % 4 == 0 and (d.n + 1) // 2 >= min_n

    def coarsen(self):
        """The same problem on the grid of spacing 2h (every other lattice node)."""
        d = self.domain
        if d.shape not in ("interval", "box") or (d.n - 1) % 4:
            raise ConfigurationError(f"cannot coarsen a {d.shape} grid with n={d.n}")
        cd = build_domain(d.dim, d.shape, (d.n + 1) // 2, d.width)
        sub = (slice(None, None, 2),) * d.dim

        def restrict(a):
            return Field(cd, np.ascontiguousarray(a.reshape(d.lattice_shape)[sub]))

        return ProblemSpec(cd, self.F, self.G, restrict(self.f.values), restrict(self.g.values),
                           restrict(self.ub), restrict(self.vb), self.allow_degenerate,
                           self.relaxed_compatibility, self.exact)

    @property
    def ub_field(self):
        return Field(self.domain, self.ub)

    @property
    def vb_field(self):
        return Field(self.domain, self.vb)

    @property
    def N(self):
        a = self.domain.active
        return float(np.abs(self.f.flat[a] - self.g.flat[a]).max())

    def penalty(self, eps, profile="cubic"):
        return PenaltyConfig(self.N, eps, profile)


@dataclass(frozen=True)
class ProblemDef:
    """Resolution-independent problem: callables plus operator choices."""

    dim: int
    shape: str
    F: OperatorSpec
    G: OperatorSpec
    f: object
    g: object
    u0: object
    v0: object
    width: int = 1
    allow_degenerate: bool = False
    relaxed_compatibility: bool = False
    exact: Optional[tuple] = None
    name: str = ""

    def discretize(self, n):
        dom = build_domain(self.dim, self.shape, n, self.width)
        return ProblemSpec(dom, self.F, self.G, self.f, self.g, self.u0, self.v0,
                           self.allow_degenerate, self.relaxed_compatibility, self.exact)


# --------------------------------------------------------------------------- config

@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs. ``None`` entries resolve against the grid spacing h:

    * ``eps0``: chosen so that the last stage uses eps = h^2 / 2;
    * ``inner_tol``: 1e-8 in 1D, 1e-7 in 2D;
    * ``contact_tol``: 2 h^2.
    """

    eps0: Optional[float] = None
    eps_factor: float = 0.5
    eps_stages: int = 8
    inner_tol: Optional[float] = None
    picard_tol: float = 1e-9
    max_inner: int = 20000
    max_picard: int = 500
    max_newton: int = 80
    sweep: str = "GaussSeidel"
    contact_tol: Optional[float] = None
    coupling: str = "newton"
    relaxation: float = 1.0
    accelerate: bool = True
    profile: str = "cubic"
    multilevel: bool = True
    coarse_min: int = 21
    refine_stages: int = 2

    def __post_init__(self):
        if self.sweep not in ("GaussSeidel", "Jacobi"):
            raise ConfigurationError(f"sweep must be GaussSeidel or Jacobi, got {self.sweep!r}")
        if self.coupling not in ("newton", "picard"):
            raise ConfigurationError(f"coupling must be newton or picard, got {self.coupling!r}")
        if not 0 < self.eps_factor < 1:
            raise ConfigurationError("eps_factor must lie in (0, 1)")
        if self.eps_stages < 1:
            raise ConfigurationError("eps_stages must be >= 1")
        for name in ("eps0", "inner_tol", "contact_tol"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not self.picard_tol > 0:
            raise ConfigurationError("picard_tol must be positive")
        if not 0 < self.relaxation <= 1:
            raise ConfigurationError("relaxation must lie in (0, 1]")
        if self.refine_stages < 1 or self.coarse_min < 5:
            raise ConfigurationError("refine_stages must be >= 1 and coarse_min >= 5")
        if min(self.max_inner, self.max_picard, self.max_newton) < 1:
            raise ConfigurationError("iteration caps must be >= 1")

    def resolve(self, domain):
        h2 = domain.h ** 2
        eps0 = self.eps0
        if eps0 is None:
            eps0 = 0.5 * h2 / self.eps_factor ** (self.eps_stages - 1)
        tol = self.inner_tol if self.inner_tol is not None else (1e-8 if domain.dim == 1 else 1e-7)
        ctol = self.contact_tol if self.contact_tol is not None else 2.0 * h2
        return replace(self, eps0=eps0, inner_tol=tol, contact_tol=ctol)

    def schedule(self):
        return [self.eps0 * self.eps_factor ** k for k in range(self.eps_stages)]


# --------------------------------------------------------------------------- results

@dataclass
class SolveReport:
    eps_trace: list = field(default_factory=list)
    residual_F: float = float("nan")
    residual_G: float = float("nan")
    wall_time: float = 0.0
    converged: bool = False
    failed_eps: Optional[float] = None
    message: str = ""
    frames: list = field(default_factory=list)
    backend: str = BACKEND
    coupling: str = ""
    N: float = float("nan")
    inner_tol: float = float("nan")
    contact_tol: float = float("nan")
    contact_nodes: int = 0
    min_gap: float = float("nan")

    def to_dict(self, include_timing=False):
        d = asdict(self)
        if not include_timing:
            d.pop("wall_time")
        return d


@dataclass(eq=False)
class SolutionPair:
    u: Field
    v: Field
    contact_mask: np.ndarray     # lattice-shaped bool, False on Exterior nodes
    report: SolveReport

    @property
    def gap(self):
        return self.u - self.v

    @classmethod
    def from_fields(cls, u, v, contact_tol=None, report=None):
        """Wrap given fields (closed forms, loaded files) with a contact mask gap <= contact_tol."""
        dom = u.domain
        if v.domain is not dom:
            raise ConfigurationError("u and v live on different domains")
        ctol = 2.0 * dom.h ** 2 if contact_tol is None else float(contact_tol)
        gap = u.flat - v.flat
        mask = np.zeros(dom.size, dtype=bool)
        mask[dom.active] = gap[dom.active] <= ctol
        if report is None:
            report = SolveReport(converged=True, message="fields supplied directly",
                                 contact_tol=ctol, contact_nodes=int(mask.sum()),
                                 min_gap=float(gap[dom.active].min()))
        return cls(u, v, mask.reshape(dom.lattice_shape), report)


# --------------------------------------------------------------------------- linear algebra

def _assemble(st, coeffs, policy, ufull):
    """Matrix of the frozen-policy linear operator on interior unknowns.

    Returns (A, b) with  L_policy(u) = A @ u[interior] + b.
    """
    m = st.interior.size
    npol = coeffs.shape[0]
    f = policy // npol
    p = policy % npol
    dirs = st.frame_dirs[f]                       # (m, d)
    cw = coeffs[p] * st.w[dirs]                   # (m, d)
    rows = np.arange(m)
    nb = np.concatenate([np.take_along_axis(st.nplus, dirs, 1),
                         np.take_along_axis(st.nminus, dirs, 1)], axis=1)
    cw2 = np.concatenate([cw, cw], axis=1)
    col = st.pos[nb]
    inner = col >= 0
    rr = np.broadcast_to(rows[:, None], nb.shape)
    b = np.where(inner, 0.0, cw2 * ufull[nb]).sum(1)
    data = np.concatenate([cw2[inner], -2.0 * cw.sum(1)])
    ri = np.concatenate([rr[inner], rows])
    ci = np.concatenate([col[inner], rows])
    A = sp.csr_matrix((data, (ri, ci)), shape=(m, m))
    return A, b


_DIRECT_MAX = 2500


def _amg_solve(M, rhs, rtol, builder):
    # pyamg draws start vectors for spectral-radius estimates from numpy's
    # global generator; pin it so solves are reproducible, then restore it
    state = np.random.get_state()
    np.random.seed(0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            ml = builder(M)
            x = ml.solve(rhs, tol=rtol, accel="gmres", maxiter=400)
    finally:
        np.random.set_state(state)
    if not np.all(np.isfinite(x)) or \
            np.abs(M @ x - rhs).max() > 100 * rtol * max(np.abs(rhs).max(), 1.0):
        return None
    return x


_AMG_BUILDERS = (
    lambda M: pyamg.ruge_stuben_solver(M, strength=("classical", {"theta": 0.1}), interpolation="direct",
                                       max_coarse=300, coarse_solver="splu"),
    lambda M: pyamg.smoothed_aggregation_solver(M, symmetry="nonsymmetric", max_coarse=300, coarse_solver="splu"),
)


def _linsolve(A, b, rtol=1e-12):
    """Solve A x = b: sparse LU for small systems, AMG-preconditioned GMRES otherwise.

    -A is an M-matrix for every frozen policy (the discrete operators are
    monotone), the setting where classical AMG is reliable. Classical
    coarsening occasionally breaks down on rows dominated by long-range stencil
    entries; smoothed aggregation and then LU are the fallbacks.
    """
    if A.shape[0] <= _DIRECT_MAX:
        return spsolve(A.tocsc(), b)
    M = -A.tocsr()
    for builder in _AMG_BUILDERS:
        try:
            x = _amg_solve(M, -b, rtol, builder)
        except (ValueError, ArithmeticError, RuntimeError, RuntimeWarning, UserWarning):
            x = None
        if x is not None:
            return x
    return spsolve(A.tocsc(), b)


def _op(st, coeffs, sense, ufull):
    return kernels.operator_values(ufull, *st.kernel_args(), coeffs, sense)


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite values in {what}")


# --------------------------------------------------------------------------- Dirichlet

def solve_dirichlet(spec, rhs, boundary, dom, fs=None, cfg=None, warm=None, history=None):
    """Solve the discrete Dirichlet problem  H(D^2 u) = rhs  with u = boundary.

    Relaxation sweeps solve the scalar nodal equation exactly; with
    ``cfg.accelerate`` they are preceded by Howard policy iteration, so the
    sweeps normally only confirm the residual target.
    """
    cfg = (cfg or SolverConfig()).resolve(dom)
    fs = fs or frame_set(dom.dim)
    st = stencil(dom, fs)
    coeffs = spec.coefficients(dom.dim)
    r = rhs.flat[st.interior] if isinstance(rhs, Field) else np.broadcast_to(
        np.asarray(rhs, dtype=float), st.interior.shape)
    r = np.ascontiguousarray(r, dtype=float)
    _check_finite(r, "right-hand side")
    u = _boundary_values(dom, boundary)
    if warm is not None:
        u[st.interior] = warm.flat[st.interior]
    else:
        u[st.interior] = 0.0
    hist = [] if history is None else history

    def residual():
        vals, pol = _op(st, coeffs, spec.sense, u)
        res = vals - r
        _check_finite(res, "Dirichlet residual")
        return np.abs(res).max(initial=0.0), pol

    res, pol = residual()
    hist.append(res)
    if cfg.accelerate and res > cfg.inner_tol:
        seen = set()
        for _ in range(cfg.max_newton):
            A, b = _assemble(st, coeffs, pol, u)
            u[st.interior] = _linsolve(A, r - b)
            key = pol.tobytes()
            res, pol_new = residual()
            hist.append(res)
            if res <= 1e-3 * cfg.inner_tol or key in seen or np.array_equal(pol_new, pol):
                break
            seen.add(key)
            pol = pol_new
    jacobi = cfg.sweep == "Jacobi"
    sweeps = 0
    while res > cfg.inner_tol:
        if sweeps >= cfg.max_inner:
            raise NonConvergenceError(
                f"Dirichlet solve: residual {res:.3e} > {cfg.inner_tol:.1e} after {sweeps} sweeps", hist)
        kernels.sweep(u, r, *st.kernel_args(), coeffs, spec.sense, jacobi, st.colors)
        sweeps += 1
        res, _ = residual()
        hist.append(res)
    return Field(dom, u)


# --------------------------------------------------------------------------- penalized system

def penalized_residuals(problem, u, v, pen, fs=None):
    """Interior residuals of F(D^2u) - f - b(u-v) and G(D^2v) - g + b(u-v)."""
    st = stencil(problem.domain, fs or frame_set(problem.domain.dim))
    I = st.interior
    beta = beta_eps_eval(pen, u.flat[I] - v.flat[I])
    rF = _op(st, problem.F.coefficients(problem.domain.dim), problem.F.sense, u.flat)[0] \
        - problem.f.flat[I] - beta
    rG = _op(st, problem.G.coefficients(problem.domain.dim), problem.G.sense, v.flat)[0] \
        - problem.g.flat[I] + beta
    return rF, rG


def penalized_map(problem, ubar, vbar, eps, cfg=None, fs=None, profile=None):
    """One application of T: decoupled Dirichlet solves with the frozen penalty."""
    cfg = (cfg or SolverConfig()).resolve(problem.domain)
    dom = problem.domain
    pen = problem.penalty(eps, profile or cfg.profile)
    I = dom.interior
    beta = np.zeros(dom.size)
    beta[I] = beta_eps_eval(pen, ubar.flat[I] - vbar.flat[I])
    rhs_u = Field(dom, problem.f.flat + beta)
    rhs_v = Field(dom, problem.g.flat - beta)
    u = solve_dirichlet(problem.F, rhs_u, problem.ub_field, dom, fs, cfg, warm=ubar)
    v = solve_dirichlet(problem.G, rhs_v, problem.vb_field, dom, fs, cfg, warm=vbar)
    return u, v


def unconstrained_pair(problem, cfg=None, fs=None):
    cfg = (cfg or SolverConfig()).resolve(problem.domain)
    u = solve_dirichlet(problem.F, problem.f, problem.ub_field, problem.domain, fs, cfg)
    v = solve_dirichlet(problem.G, problem.g, problem.vb_field, problem.domain, fs, cfg)
    return u, v


def solve_penalized(problem, eps, cfg=None, fs=None, warm=None, info=None):
    """Fixed point of T at penalty scale eps.

    ``cfg.coupling == "picard"`` iterates T itself (optionally relaxed);
    ``"newton"`` runs semismooth Newton on the coupled penalized system, whose
    solutions are exactly the fixed points of T.
    """
    cfg = (cfg or SolverConfig()).resolve(problem.domain)
    fs = fs or frame_set(problem.domain.dim)
    if warm is None:
        warm = unconstrained_pair(problem, cfg, fs)
    info = {} if info is None else info
    if cfg.coupling == "picard":
        return _picard(problem, eps, cfg, fs, warm, info)
    return _newton(problem, eps, cfg, fs, warm, info)


def _picard(problem, eps, cfg, fs, warm, info):
    ubar, vbar = warm[0].copy(), warm[1].copy()
    hist = []
    I = problem.domain.interior
    for it in range(1, cfg.max_picard + 1):
        u, v = penalized_map(problem, ubar, vbar, eps, cfg, fs)
        du = u.flat[I] - ubar.flat[I]
        dv = v.flat[I] - vbar.flat[I]
        change = max(np.abs(du).max(initial=0.0), np.abs(dv).max(initial=0.0))
        hist.append(change)
        _check_finite(change, "Picard iterate")
        if change <= cfg.picard_tol:
            info.update(iterations=it, history=hist)
            return u, v
        om = cfg.relaxation
        ubar.flat[I] += om * du
        vbar.flat[I] += om * dv
    raise NonConvergenceError(
        f"Picard iteration: change {hist[-1]:.3e} > {cfg.picard_tol:.1e} after {cfg.max_picard} steps", hist)


def _newton(problem, eps, cfg, fs, warm, info):
    dom = problem.domain
    st = stencil(dom, fs)
    I = st.interior
    m = I.size
    pen = problem.penalty(eps, cfg.profile)
    cF = problem.F.coefficients(dom.dim)
    cG = problem.G.coefficients(dom.dim)
    fI = problem.f.flat[I]
    gI = problem.g.flat[I]
    u = problem.ub.copy()
    v = problem.vb.copy()
    u[I] = warm[0].flat[I]
    v[I] = warm[1].flat[I]

    def evaluate(u, v):
        vF, pF = _op(st, cF, problem.F.sense, u)
        vG, pG = _op(st, cG, problem.G.sense, v)
        beta = beta_eps_eval(pen, u[I] - v[I])
        R = np.concatenate([vF - fI - beta, vG - gI + beta])
        _check_finite(R, "penalized residual")
        return R, pF, pG

    R, pF, pG = evaluate(u, v)
    r = np.abs(R).max(initial=0.0)
    hist = [r]
    it = 0
    while r > cfg.inner_tol:
        if it >= cfg.max_newton:
            raise NonConvergenceError(
                f"coupled Newton: residual {r:.3e} > {cfg.inner_tol:.1e} after {it} steps", hist)
        it += 1
        AF, _ = _assemble(st, cF, pF, u)
        AG, _ = _assemble(st, cG, pG, v)
        D = sp.diags(beta_eps_prime(pen, u[I] - v[I]))
        J = sp.bmat([[AF - D, D], [D, AG - D]], format="csr")
        # inexact Newton: linear accuracy tied to the current residual
        step = _linsolve(J, -R, rtol=min(1e-4, max(1e-12, 1e-2 * r)))
        _check_finite(step, "Newton step")
        # backtracking on the l2 merit 0.5 |R|^2
        phi = 0.5 * R @ R
        t = 1.0
        for _ in range(40):
            un = u.copy()
            vn = v.copy()
            un[I] += t * step[:m]
            vn[I] += t * step[m:]
            Rn, pFn, pGn = evaluate(un, vn)
            if 0.5 * Rn @ Rn <= (1.0 - 2e-4 * t) * phi:
                break
            t *= 0.5
        u, v, R, pF, pG = un, vn, Rn, pFn, pGn
        r = np.abs(R).max(initial=0.0)
        hist.append(r)
    info.update(iterations=it, history=hist)
    return Field(dom, u), Field(dom, v)


# --------------------------------------------------------------------------- continuation

def _rescale_gap(u, v, I, eps_old, eps_new):
    """Stage predictor: where 0 < u - v < eps_old, shrink the gap by eps_new/eps_old.

    Inside the penalty layer the gap scales with eps; moving both membranes
    symmetrically keeps their mean unchanged.
    """
    u = u.copy()
    v = v.copy()
    w = u.flat[I] - v.flat[I]
    layer = (w > 0) & (w < eps_old)
    shift = 0.5 * w[layer] * (1.0 - eps_new / eps_old)
    idx = I[layer]
    u.flat[idx] -= shift
    v.flat[idx] += shift
    return u, v


def _prolong(coarse, fine_dom):
    """Interpolate from the 2h lattice onto fine_dom, axis by axis.

    Midpoints use the four-point cubic rule (-1, 9, 9, -1)/16, which keeps
    second differences of smooth data accurate; the two midpoints next to an
    edge fall back to linear interpolation.
    """
    a = coarse.values
    for ax in range(a.ndim):
        a = np.moveaxis(a, ax, 0)
        out = np.empty((2 * a.shape[0] - 1,) + a.shape[1:])
        out[::2] = a
        mid = 0.5 * (a[:-1] + a[1:])
        if a.shape[0] >= 4:
            mid[1:-1] = (9.0 * (a[1:-2] + a[2:-1]) - (a[:-3] + a[3:])) / 16.0
        out[1::2] = mid
        a = np.moveaxis(out, 0, ax)
    return Field(fine_dom, np.ascontiguousarray(a))


def _lift(u, v, problem):
    """Prolong a coarse pair onto problem's grid and reimpose its boundary data."""
    u = _prolong(u, problem.domain)
    v = _prolong(v, problem.domain)
    b = problem.domain.boundary
    u.values.flat[b] = problem.ub[b]
    v.values.flat[b] = problem.vb[b]
    return u, v


def _level_chain(problem, cfg):
    """Problems from coarsest to finest when nested iteration applies.

    Only used with the automatic eps schedule, which is defined per grid.
    """
    chain = [problem]
    if cfg.multilevel and cfg.eps0 is None:
        while chain[-1].can_coarsen(cfg.coarse_min):
            chain.append(chain[-1].coarsen())
    return chain[::-1]


def _continuation(problem, cfg, fs, schedule, u, v, report, level_n, prev=None):
    dom = problem.domain
    for eps in schedule:
        if prev is not None:
            u, v = _rescale_gap(u, v, dom.interior, prev, eps)
        prev = eps
        info = {}
        try:
            un, vn = solve_penalized(problem, eps, cfg, fs, warm=(u, v), info=info)
        except TwoMembranesError as exc:
            report.failed_eps = eps
            report.message = str(exc)
            failure = StageFailure(eps, exc)
            failure.partial = (u, v)    # last accepted pair, on this level's grid
            raise failure from exc
        rF, rG = penalized_residuals(problem, un, vn, problem.penalty(eps, cfg.profile), fs)
        change = max(np.abs(un.flat[dom.interior] - u.flat[dom.interior]).max(initial=0.0),
                     np.abs(vn.flat[dom.interior] - v.flat[dom.interior]).max(initial=0.0))
        report.eps_trace.append({
            "n": level_n, "eps": eps, "iterations": info.get("iterations", 0),
            "residual_F": float(np.abs(rF).max(initial=0.0)),
            "residual_G": float(np.abs(rG).max(initial=0.0)),
            "change": float(change),
        })
        log.debug("n=%d eps=%.3e iterations=%s change=%.3e", level_n, eps,
                  info.get("iterations"), change)
        u, v = un, vn
    return u, v, prev


def solve_two_membranes(problem, cfg=None, fs=None):
    """Run epsilon continuation and assemble the solution pair with its contact set.

    With ``cfg.multilevel`` (and the automatic eps schedule) the full schedule
    runs on the coarsest grid of a 2h-hierarchy; each finer grid starts from the
    interpolated coarse pair and only runs the last ``cfg.refine_stages`` stages
    of its own schedule. The penalized system is monotone, so its solution does
    not depend on the starting point.
    """
    t0 = time.perf_counter()
    dom = problem.domain
    user_cfg = cfg or SolverConfig()
    cfg = user_cfg.resolve(dom)
    fs = fs or frame_set(dom.dim)
    report = SolveReport(frames=fs.describe(), coupling=cfg.coupling, N=problem.N,
                         inner_tol=cfg.inner_tol, contact_tol=cfg.contact_tol)
    u = v = prev = None
    chain = _level_chain(problem, user_cfg)
    for level, pb in enumerate(chain):
        lcfg = user_cfg.resolve(pb.domain)
        schedule = lcfg.schedule()
        if u is None:
            u, v = unconstrained_pair(pb, lcfg, fs)
        else:
            u, v = _lift(u, v, pb)
            schedule = schedule[-cfg.refine_stages:]
        try:
            u, v, prev = _continuation(pb, lcfg, fs, schedule, u, v, report, pb.domain.n, prev)
        except StageFailure as exc:
            pu, pv = exc.partial
            for finer in chain[level + 1:]:
                pu, pv = _lift(pu, pv, finer)
            exc.partial = (pu, pv)
            report.wall_time = time.perf_counter() - t0
            exc.report = report
            raise
    last = report.eps_trace[-1]
    report.residual_F = last["residual_F"]
    report.residual_G = last["residual_G"]
    gap = u.flat - v.flat
    mask = np.zeros(dom.size, dtype=bool)
    act = dom.active
    mask[act] = gap[act] <= cfg.contact_tol
    report.contact_nodes = int(mask.sum())
    report.min_gap = float(gap[act].min())
    report.converged = True
    report.wall_time = time.perf_counter() - t0
    return SolutionPair(u, v, mask.reshape(dom.lattice_shape), report)
