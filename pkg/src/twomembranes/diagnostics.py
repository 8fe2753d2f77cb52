"""Measured regularity quantities: second differences, Hölder quotients, the contact
eigenvalue bound, non-degeneracy growth curves and refinement studies."""

import csv
import io
import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._backend import kernels
from .core import eigen_sym
from .errors import ConfigurationError
from .grid import INTERIOR, Field, discrete_hessians, frame_set, second_differences
from .solver import SolverConfig, solve_two_membranes

__all__ = [
    "second_diff_supnorm", "holder_seminorm", "RegularityReport", "regularity_report",
    "ContactEigenReport", "contact_eigen_check", "NondegeneracyCurve", "nondegeneracy_curve",
    "StudyTable", "refinement_study",
]

_ALL_PAIRS_MAX = 3000        # all pairs up to this many nodes (~4.5M pairs)
_SAMPLED_PAIRS = 400_000


def _region_rows(dom, region):
    """Positions (in Interior order) of the region's flat indices."""
    region = np.asarray(region, dtype=np.int64).ravel()
    pos = np.full(dom.size, -1, dtype=np.int64)
    pos[dom.interior] = np.arange(dom.interior.size)
    rows = pos[region]
    if np.any(rows < 0):
        raise ConfigurationError("region must consist of Interior nodes")
    return rows


def second_diff_supnorm(u, fs=None, region=None):
    """max |d2_e u| over region nodes and frame directions (default: inner quarter region)."""
    dom = u.domain
    region = dom.inner_region() if region is None else region
    rows = _region_rows(dom, region)
    if rows.size == 0:
        return 0.0
    d2 = second_differences(u, fs or frame_set(dom.dim))[rows]
    d2 = np.abs(d2[np.isfinite(d2)])
    return float(d2.max(initial=0.0))


def holder_seminorm(u, eta, pairs="auto", seed=0):
    """max |u(x) - u(y)| / |x - y|^eta over node pairs.

    ``pairs`` is ``"all"``, ``"auto"`` (all pairs for small grids, otherwise a
    seeded sample) or an integer number of sampled pairs.
    """
    if not 0 < eta <= 1:
        raise ConfigurationError(f"eta must lie in (0, 1], got {eta}")
    dom = u.domain
    act = dom.active
    pts = np.ascontiguousarray(dom.points[act])
    vals = np.ascontiguousarray(u.flat[act])
    m = act.size
    if pairs == "all" or (pairs == "auto" and m <= _ALL_PAIRS_MAX):
        return float(kernels.holder_max_all(pts, vals, float(eta)))
    count = _SAMPLED_PAIRS if pairs == "auto" else int(pairs)
    if count < 1:
        raise ConfigurationError("pairs must be positive")
    rng = np.random.default_rng(seed)
    left = rng.integers(0, m, size=count)
    right = rng.integers(0, m, size=count)
    # nearest neighbours carry the steepest quotients; always include them
    nb = np.arange(m - 1)
    left = np.concatenate([left, nb])
    right = np.concatenate([right, nb + 1])
    return float(kernels.holder_max(pts, vals, float(eta), left.astype(np.int64),
                                    right.astype(np.int64)))


@dataclass
class RegularityReport:
    second_diff_sup: float
    holder_estimates: dict = field(default_factory=dict)
    table: Optional[list] = None

    def to_dict(self):
        return {"second_diff_sup": self.second_diff_sup,
                "holder_estimates": {f"{k:g}": v for k, v in sorted(self.holder_estimates.items())},
                "table": self.table}


def regularity_report(u, fs=None, region=None, etas=(0.25, 0.5, 1.0), seed=0):
    return RegularityReport(second_diff_supnorm(u, fs, region),
                            {float(e): holder_seminorm(u, e, seed=seed) for e in etas})


# --------------------------------------------------------------------------- contact eigenvalues

@dataclass
class ContactEigenReport:
    nodes_checked: int
    violations: list
    max_margin: float          # largest lhs - rhs over checked nodes (<= tol means pass)
    tol: float

    @property
    def passed(self):
        return not self.violations

    def to_dict(self):
        return {"passed": self.passed, "nodes_checked": self.nodes_checked,
                "violations": self.violations, "max_margin": self.max_margin, "tol": self.tol}


def _deep_contact(dom, mask):
    """Interior nodes of the mask whose 3x3 Hessian stencil stays inside the mask.

    Only Interior nodes count as contact here: Boundary nodes carry Dirichlet
    data, and the bound concerns the contact set inside the open domain.
    """
    flat = mask.ravel() & (dom.kind.ravel() == INTERIOR)
    idx = dom.interior[flat[dom.interior]]
    if idx.size == 0:
        return idx
    n = dom.n
    offs = [1, -1] if dom.dim == 1 else [s * n + t for s in (-1, 0, 1) for t in (-1, 0, 1)]
    keep = np.ones(idx.size, dtype=bool)
    for o in offs:
        keep &= flat[idx + o]
    return idx[keep]


def contact_eigen_check(pair, problem, tol, mask=None):
    """(Lambda - lambda) sum |e| <= f - g + tol on the contact set, for both membranes.

    ``e`` are the eigenvalues of the discrete Hessian; only contact nodes whose
    full Hessian stencil lies in the contact set are checked. ``mask`` overrides
    the pair's contact mask.
    """
    dom = problem.domain
    mask = pair.contact_mask if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != dom.lattice_shape:
        raise ConfigurationError("contact mask does not match the domain")
    idx = _deep_contact(dom, mask)
    if idx.size == 0:
        return ContactEigenReport(0, [], float("-inf"), float(tol))
    p = problem.F.params
    rhs = problem.f.flat[idx] - problem.g.flat[idx] + tol
    violations = []
    worst = -np.inf
    for name, fld in (("u", pair.u), ("v", pair.v)):
        e = eigen_sym(discrete_hessians(Field(dom, fld.values), idx))
        lhs = (p.Lam - p.lam) * np.abs(e).sum(-1)
        margin = lhs - (rhs - tol)
        worst = max(worst, float(margin.max()))
        for k in np.flatnonzero(lhs > rhs):
            violations.append({"field": name, "x": [float(c) for c in dom.points[idx[k]]],
                               "margin": float(margin[k])})
    return ContactEigenReport(int(idx.size), violations, worst, float(tol))


# --------------------------------------------------------------------------- non-degeneracy

@dataclass
class NondegeneracyCurve:
    center: tuple
    radii: np.ndarray
    sup_values: np.ndarray
    slope: float
    intercept: float
    residual: float
    degenerate: bool

    def to_dict(self):
        return {"center": list(self.center), "radii": self.radii.tolist(),
                "sup_values": self.sup_values.tolist(), "slope": self.slope,
                "intercept": self.intercept, "residual": self.residual,
                "degenerate": self.degenerate}

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["r", "sup_w"])
        for r, s in zip(self.radii, self.sup_values):
            wr.writerow([f"{r:.17g}", f"{s:.17g}"])
        return buf.getvalue()


def nondegeneracy_curve(w, center=None, radii=None):
    """sup of w over discrete spheres {| |x - c| - r | <= h/2} and the log-log slope."""
    dom = w.domain
    c = np.zeros(dom.dim) if center is None else np.asarray(center, dtype=float).ravel()
    if c.size != dom.dim:
        raise ConfigurationError("center has the wrong dimension")
    k = np.rint((c + 1.0) / dom.h)
    if np.any(np.abs(k * dom.h - 1.0 - c) > 1e-9) or np.any(k < 0) or np.any(k >= dom.n):
        raise ConfigurationError(f"center {tuple(c)} is not a lattice node")
    radii = np.linspace(0.1, 0.5, 17) if radii is None else np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size == 0 or np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ConfigurationError("radii must be positive and strictly increasing")
    reach = np.linalg.norm(c) if dom.shape == "disc" else np.abs(c).max()
    if reach + radii[-1] > 1.0 + 1e-12:
        raise ConfigurationError("spheres leave the domain")
    act = dom.active
    dist = np.linalg.norm(dom.points[act] - c, axis=1)
    vals = w.flat[act]
    sups = np.empty(radii.size)
    for i, r in enumerate(radii):
        band = np.abs(dist - r) <= 0.5 * dom.h + 1e-12
        if not band.any():
            raise ConfigurationError(f"no nodes on the discrete sphere of radius {r:g}")
        sups[i] = vals[band].max()
    pos = sups > 0
    if pos.sum() < 2:
        return NondegeneracyCurve(tuple(c.tolist()), radii, sups, float("nan"), float("nan"),
                                  float("nan"), True)
    X = np.log(radii[pos])
    Y = np.log(sups[pos])
    A = np.stack([X, np.ones_like(X)], 1)
    (slope, icpt), *_ = np.linalg.lstsq(A, Y, rcond=None)
    res = float(np.sqrt(np.mean((A @ np.array([slope, icpt]) - Y) ** 2)))
    return NondegeneracyCurve(tuple(c.tolist()), radii, sups, float(slope), float(icpt), res, False)


# --------------------------------------------------------------------------- refinement study

_STUDY_COLS = ("n", "h", "err_u", "err_v", "second_diff_u", "second_diff_v", "contact_nodes",
               "iterations")


@dataclass
class StudyTable:
    rows: list
    name: str = ""

    def column(self, key):
        return np.array([r[key] for r in self.rows], dtype=float)

    def orders(self, key="err_u"):
        """Observed orders log(e_k / e_{k+1}) / log(h_k / h_{k+1})."""
        e, h = self.column(key), self.column("h")
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])).tolist()

    def ratios(self, key="second_diff"):
        v = self.column(key)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (v[1:] / v[:-1]).tolist()

    def to_dict(self, include_timing=False):
        rows = [{k: v for k, v in r.items() if include_timing or k != "runtime"} for r in self.rows]
        out = {"name": self.name, "rows": rows, "second_diff_ratios": self.ratios()}
        if all(np.isfinite(r["err_u"]) for r in self.rows):
            out["order_u"] = self.orders("err_u")
            out["order_v"] = self.orders("err_v")
        return out

    def to_csv(self, include_timing=False):
        cols = list(_STUDY_COLS) + ["second_diff"] + (["runtime"] if include_timing else [])
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(cols)
        for r in self.rows:
            wr.writerow([r[c] if isinstance(r[c], (int, np.integer)) else f"{r[c]:.17g}"
                         for c in cols])
        return buf.getvalue()

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def refinement_study(problem, resolutions, cfg=None, fs=None, region_radius=0.25):
    """Solve a resolution-independent problem on each grid and tabulate the measurements.

    ``problem`` is a ProblemDef; its ``exact`` pair (if any) supplies the error
    columns, otherwise they are NaN.
    """
    resolutions = [int(n) for n in resolutions]
    if not resolutions or any(b <= a for a, b in zip(resolutions, resolutions[1:])):
        raise ConfigurationError("resolutions must be increasing")
    rows = []
    for n in resolutions:
        spec = problem.discretize(n)
        dom = spec.domain
        lfs = fs or frame_set(dom.dim)
        t0 = time.perf_counter()
        sol = solve_two_membranes(spec, cfg or SolverConfig(), lfs)
        runtime = time.perf_counter() - t0
        region = dom.inner_region(region_radius)
        su = second_diff_supnorm(sol.u, lfs, region)
        sv = second_diff_supnorm(sol.v, lfs, region)
        err_u = err_v = float("nan")
        if problem.exact is not None:
            act = dom.active
            err_u = float(np.abs(sol.u.flat[act] - problem.exact[0](dom.points[act])).max())
            err_v = float(np.abs(sol.v.flat[act] - problem.exact[1](dom.points[act])).max())
        rows.append({"n": n, "h": dom.h, "err_u": err_u, "err_v": err_v,
                     "second_diff_u": su, "second_diff_v": sv, "second_diff": max(su, sv),
                     "contact_nodes": sol.report.contact_nodes,
                     "iterations": int(sum(s["iterations"] for s in sol.report.eps_trace)),
                     "runtime": runtime})
    return StudyTable(rows, problem.name)
