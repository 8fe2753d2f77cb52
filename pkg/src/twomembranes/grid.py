"""Lattice domains, grid fields and the monotone wide-stencil operators.

Nodes are stored on the full lattice ``coords^dim`` with ``coords`` spanning
[-1, 1]; axis 0 is ``x`` and axis 1 is ``y``. Each node is classified as
Exterior, Boundary or Interior. Field values are NaN on Exterior nodes.
"""

import functools
import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import ConfigurationError, StencilError, UnsupportedDimensionError

__all__ = [
    "EXTERIOR", "BOUNDARY", "INTERIOR", "Domain", "Field", "FrameSet",
    "build_domain", "frame_set", "stencil", "second_difference",
    "discrete_operator", "apply_operator", "discrete_hessian",
    "second_differences",
]

EXTERIOR, BOUNDARY, INTERIOR = 0, 1, 2

_SHAPES = {1: ("interval",), 2: ("box", "disc")}


def _primitive_vectors(dim, width):
    """Lattice directions up to sign with max-norm <= width and coprime entries."""
    if dim == 1:
        return [(1,)]
    out = []
    for a in range(0, width + 1):
        for b in range(-width, width + 1):
            if (a, b) == (0, 0) or math.gcd(a, abs(b)) != 1:
                continue
            if a == 0 and b < 0:
                continue
            out.append((a, b))
    return out


def _canon(v):
    """Representative of +-v with the first nonzero entry positive."""
    for c in v:
        if c != 0:
            return tuple(v) if c > 0 else tuple(-x for x in v)
    return tuple(v)


@dataclass(frozen=True)
class FrameSet:
    """Orthogonal frames of lattice directions; 1D uses the single frame {(1)}."""

    dim: int
    width: int
    frames: tuple

    @property
    def directions(self):
        seen = []
        for fr in self.frames:
            for v in fr:
                if v not in seen:
                    seen.append(v)
        return tuple(seen)

    def describe(self):
        return [[list(v) for v in fr] for fr in self.frames]


@functools.lru_cache(maxsize=None)
def frame_set(dim, width=2):
    """All orthogonal equal-length frames built from directions of max-norm <= width.

    ``width=2`` gives the four frames {(1,0),(0,1)}, {(1,1),(1,-1)},
    {(1,2),(2,-1)}, {(2,1),(1,-2)}.
    """
    if dim not in (1, 2):
        raise UnsupportedDimensionError(f"dimension {dim} not supported")
    if dim == 1:
        return FrameSet(1, 1, (((1,),),))
    if width < 1:
        raise ConfigurationError("frame width must be >= 1")
    frames = []
    keys = set()
    for v in _primitive_vectors(2, width):
        perp = _canon((-v[1], v[0]))
        # x-leaning direction first; Bellman coefficients attach in this order
        fr = tuple(sorted((_canon(v), perp), key=lambda t: (abs(t[0]) < abs(t[1]), -t[1])))
        if fr not in keys:
            keys.add(fr)
            frames.append(fr)
    frames.sort(key=lambda fr: (max(abs(c) for c in fr[0] + fr[1]), fr))
    return FrameSet(2, width, tuple(frames))


@dataclass(frozen=True, eq=False)
class Domain:
    dim: int
    shape: str
    n: int
    width: int
    h: float
    coords: np.ndarray
    kind: np.ndarray        # lattice-shaped node classification
    proj: np.ndarray        # (M, dim) boundary projection points (nodes themselves elsewhere)

    @property
    def lattice_shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n ** self.dim

    @functools.cached_property
    def points(self):
        """(M, dim) coordinates of every lattice node in flat (row-major) order."""
        grids = np.meshgrid(*([self.coords] * self.dim), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        pts.setflags(write=False)
        return pts

    @functools.cached_property
    def interior(self):
        idx = np.flatnonzero(self.kind.ravel() == INTERIOR)
        idx.setflags(write=False)
        return idx

    @functools.cached_property
    def boundary(self):
        idx = np.flatnonzero(self.kind.ravel() == BOUNDARY)
        idx.setflags(write=False)
        return idx

    @functools.cached_property
    def active(self):
        idx = np.flatnonzero(self.kind.ravel() != EXTERIOR)
        idx.setflags(write=False)
        return idx

    def counts(self):
        k = self.kind.ravel()
        return {"interior": int((k == INTERIOR).sum()), "boundary": int((k == BOUNDARY).sum()),
                "exterior": int((k == EXTERIOR).sum())}

    def metadata(self):
        return {"dim": self.dim, "shape": self.shape, "n": self.n, "width": self.width,
                "h": self.h, "counts": self.counts()}

    def flat(self, node):
        node = tuple(int(i) for i in np.atleast_1d(node))
        if len(node) != self.dim or any(not 0 <= i < self.n for i in node):
            raise StencilError(f"node {node} is not on the lattice")
        return int(np.ravel_multi_index(node, self.lattice_shape))

    def node_of(self, flat):
        return tuple(int(i) for i in np.unravel_index(flat, self.lattice_shape))

    def inner_region(self, radius=0.25):
        """Interior flat indices inside the inner quarter ball (disc) or box (others)."""
        pts = self.points[self.interior]
        if self.shape == "disc":
            keep = np.linalg.norm(pts, axis=1) <= radius + 1e-12
        else:
            keep = np.abs(pts).max(axis=1) <= radius + 1e-12
        return self.interior[keep]


@functools.lru_cache(maxsize=64)
def build_domain(dim, shape, n, width=1):
    """Discretize [-1,1], [-1,1]^2 or the unit disc with n nodes per axis.

    A node is Interior when every neighbour along the width-``width`` stencil
    directions exists and is not Exterior; remaining non-Exterior nodes are
    Boundary. Disc Boundary nodes store their radial projection onto the circle.
    """
    if dim not in _SHAPES:
        raise UnsupportedDimensionError(f"dimension {dim} not supported")
    if shape not in _SHAPES[dim]:
        raise ConfigurationError(f"shape {shape!r} is not available in dimension {dim}")
    if not isinstance(n, (int, np.integer)) or n < 5 or n % 2 == 0:
        raise ConfigurationError(f"n must be an odd integer >= 5, got {n!r}")
    if width < 1:
        raise ConfigurationError("stencil width must be >= 1")
    n = int(n)
    h = 2.0 / (n - 1)
    coords = np.linspace(-1.0, 1.0, n)
    coords[(n - 1) // 2] = 0.0
    lat = (n,) * dim
    grids = np.meshgrid(*([coords] * dim), indexing="ij")
    if shape == "disc":
        r = np.hypot(grids[0], grids[1])
        candidate = r <= 1.0 + 1e-12
    else:
        candidate = np.ones(lat, dtype=bool)

    vecs = _primitive_vectors(dim, width) if dim == 2 else [(s,) for s in range(1, width + 1)]
    if dim == 2:
        # stencils also need the axis/corner points used by the discrete Hessian
        vecs = sorted(set(vecs) | {(1, 0), (0, 1), (1, 1), (1, -1)})
    interior = candidate.copy()
    for v in vecs:
        for sgn in (1, -1):
            interior &= _shifted(candidate, tuple(sgn * c for c in v))
    kind = np.full(lat, EXTERIOR, dtype=np.int8)
    kind[candidate] = BOUNDARY
    kind[interior] = INTERIOR
    kind.setflags(write=False)

    pts = np.stack([g.ravel() for g in grids], axis=1)
    proj = pts.copy()
    if shape == "disc":
        bnd = kind.ravel() == BOUNDARY
        rr = np.linalg.norm(pts[bnd], axis=1)
        proj[bnd] = pts[bnd] / np.where(rr > 0, rr, 1.0)[:, None]
    proj.setflags(write=False)
    coords.setflags(write=False)
    return Domain(dim, shape, n, int(width), h, coords, kind, proj)


def _shifted(mask, v):
    """out[x] = mask[x + v] (False off-lattice)."""
    out = np.zeros_like(mask)
    src = []
    dst = []
    n = mask.shape[0]
    for c in v:
        if c >= 0:
            dst.append(slice(0, n - c))
            src.append(slice(c, n))
        else:
            dst.append(slice(-c, n))
            src.append(slice(0, n + c))
    out[tuple(dst)] = mask[tuple(src)]
    return out


@dataclass(eq=False)
class Field:
    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.domain.lattice_shape:
            v = v.reshape(self.domain.lattice_shape)
        self.values = v

    @classmethod
    def sample(cls, domain, fn, at="nodes"):
        """Evaluate ``fn(points) -> values`` on active nodes.

        ``at="projection"`` evaluates on the stored boundary projections, which is
        how Dirichlet data reaches disc Boundary nodes.
        """
        flat = np.full(domain.size, np.nan)
        pts = domain.proj if at == "projection" else domain.points
        act = domain.active
        flat[act] = np.broadcast_to(np.asarray(fn(pts[act]), dtype=float), act.shape)
        return cls(domain, flat)

    @classmethod
    def constant(cls, domain, value):
        flat = np.full(domain.size, np.nan)
        flat[domain.active] = value
        return cls(domain, flat)

    @property
    def flat(self):
        return self.values.reshape(-1)

    def copy(self):
        return Field(self.domain, self.values.copy())

    def check_finite(self):
        if not np.all(np.isfinite(self.flat[self.domain.active])):
            raise ConfigurationError("field has non-finite values on active nodes")
        return self

    def __sub__(self, other):
        return Field(self.domain, self.values - _vals(other))

    def __add__(self, other):
        return Field(self.domain, self.values + _vals(other))

    def __neg__(self):
        return Field(self.domain, -self.values)


def _vals(x):
    return x.values if isinstance(x, Field) else x


@dataclass(frozen=True, eq=False)
class Stencil:
    """Flat index tables for an (immutable) domain and frame set."""

    domain: Domain
    frames: FrameSet
    interior: np.ndarray
    pos: np.ndarray
    dirs: np.ndarray
    w: np.ndarray
    nplus: np.ndarray
    nminus: np.ndarray
    frame_dirs: np.ndarray
    frame_ok: np.ndarray
    colors: np.ndarray

    def kernel_args(self):
        return (self.interior, self.nplus, self.nminus, self.w, self.frame_dirs, self.frame_ok)


def _coloring(dirs):
    # smallest (C, q) with a + q b != 0 mod C for every direction (a, b)
    if dirs.shape[1] == 1:
        cmax = int(np.abs(dirs).max())
        return lambda idx: idx[:, 0] % (cmax + 1)
    for C in range(2, 64):
        for q in range(C):
            if all((a + q * b) % C != 0 for a, b in dirs):
                return lambda idx, C=C, q=q: (idx[:, 0] + q * idx[:, 1]) % C
    raise ConfigurationError("no lattice colouring found")  # pragma: no cover


@functools.lru_cache(maxsize=64)
def _stencil_cached(domain, frames):
    if frames.dim != domain.dim:
        raise ConfigurationError("frame set and domain dimensions differ")
    dirs = np.array(frames.directions, dtype=np.int64)
    interior = np.asarray(domain.interior, dtype=np.int64)
    pos = np.full(domain.size, -1, dtype=np.int64)
    pos[interior] = np.arange(interior.size)
    idx = np.array(np.unravel_index(interior, domain.lattice_shape)).T   # (m, dim)
    active = domain.kind.ravel() != EXTERIOR
    n = domain.n

    def neighbour(v):
        tgt = idx + v
        ok = np.all((tgt >= 0) & (tgt < n), axis=1)
        flat = np.full(interior.size, -1, dtype=np.int64)
        flat[ok] = np.ravel_multi_index(tuple(tgt[ok].T), domain.lattice_shape)
        bad = flat < 0
        bad[~bad] = ~active[flat[~bad]]
        flat[bad] = -1
        return flat

    nplus = np.stack([neighbour(v) for v in dirs], axis=1)
    nminus = np.stack([neighbour(-v) for v in dirs], axis=1)
    w = 1.0 / (domain.h ** 2 * (dirs ** 2).sum(1))
    dir_index = {tuple(v): i for i, v in enumerate(frames.directions)}
    frame_dirs = np.array([[dir_index[v] for v in fr] for fr in frames.frames], dtype=np.int64)
    have = (nplus >= 0) & (nminus >= 0)
    frame_ok = np.all(have[:, frame_dirs], axis=2)
    if not frame_ok[:, 0].all():
        raise StencilError("an interior node lacks the axis frame")
    colors = _coloring(dirs)(idx).astype(np.int64)
    for a in (interior, pos, nplus, nminus, w, frame_dirs, frame_ok, colors):
        a.setflags(write=False)
    return Stencil(domain, frames, interior, pos, dirs, w, nplus, nminus, frame_dirs, frame_ok, colors)


def stencil(domain, frames=None):
    return _stencil_cached(domain, frames or frame_set(domain.dim))


def _center_index(u, node):
    dom = u.domain
    flat = dom.flat(node)
    if dom.kind.ravel()[flat] != INTERIOR:
        raise StencilError(f"node {dom.node_of(flat)} is not an Interior node")
    return flat


def second_difference(u, node, e):
    """(u(x+he) - 2u(x) + u(x-he)) / (h^2 |e|^2) at a lattice node."""
    dom = u.domain
    c = _center_index(u, node)
    e = np.atleast_1d(np.asarray(e, dtype=np.int64))
    base = np.array(dom.node_of(c))
    vals = []
    for sgn in (1, -1):
        tgt = base + sgn * e
        if np.any(tgt < 0) or np.any(tgt >= dom.n):
            raise StencilError(f"stencil point {tuple(tgt)} leaves the lattice")
        j = dom.flat(tgt)
        if dom.kind.ravel()[j] == EXTERIOR:
            raise StencilError(f"stencil point {tuple(tgt)} is Exterior")
        vals.append(u.flat[j])
    return (vals[0] - 2.0 * u.flat[c] + vals[1]) / (dom.h ** 2 * float(e @ e))


def second_differences(u, frames=None):
    """Directional second differences, shape (interior nodes, directions); NaN where unavailable."""
    st = stencil(u.domain, frames)
    uf = u.flat
    c = uf[st.interior][:, None]
    d2 = (uf[st.nplus] - 2.0 * c + uf[st.nminus]) * st.w[None, :]
    return np.where((st.nplus >= 0) & (st.nminus >= 0), d2, np.nan)


def apply_operator(spec, u, frames=None, with_policy=False):
    """Discrete operator at every Interior node (order of ``domain.interior``)."""
    st = stencil(u.domain, frames)
    coeffs = spec.coefficients(u.domain.dim)
    vals, policy = kernels.operator_values(
        np.ascontiguousarray(u.flat), *st.kernel_args(), coeffs, spec.sense)
    return (vals, policy) if with_policy else vals


def discrete_operator(spec, u, node, frames=None):
    """Max (or min) over available frames and coefficient members of sum_i c_i d2_i."""
    st = stencil(u.domain, frames)
    c = _center_index(u, node)
    k = st.pos[c]
    coeffs = spec.coefficients(u.domain.dim)
    uf = u.flat
    best = None
    for f, fd in enumerate(st.frame_dirs):
        if not st.frame_ok[k, f]:
            continue
        d2 = (uf[st.nplus[k, fd]] - 2.0 * uf[c] + uf[st.nminus[k, fd]]) * st.w[fd]
        for member in coeffs:
            s = 0.0
            for ci, di in zip(member, d2):
                s += ci * di
            if best is None or (spec.sense > 0 and s > best) or (spec.sense < 0 and s < best):
                best = s
    return float(best)


def discrete_hessian(u, node):
    """Centered second differences with the four-corner cross quotient."""
    dom = u.domain
    if dom.dim == 1:
        return np.array([[second_difference(u, node, (1,))]])
    dxx = second_difference(u, node, (1, 0))
    dyy = second_difference(u, node, (0, 1))
    i, j = dom.node_of(_center_index(u, node))
    try:
        q = [u.flat[dom.flat((i + a, j + b))] for a, b in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
    except StencilError:
        raise StencilError(f"corner stencil leaves the lattice at {(i, j)}") from None
    if not np.all(np.isfinite(q)):
        raise StencilError(f"corner stencil reaches an Exterior node at {(i, j)}")
    dxy = (q[0] - q[1] - q[2] + q[3]) / (4.0 * dom.h ** 2)
    return np.array([[dxx, dxy], [dxy, dyy]])


def discrete_hessians(u, idx=None):
    """(k, dim, dim) discrete Hessians at the given Interior flat indices (default all)."""
    dom = u.domain
    idx = dom.interior if idx is None else np.asarray(idx, dtype=np.int64)
    uf = u.flat
    h2 = dom.h ** 2
    if dom.dim == 1:
        return ((uf[idx + 1] - 2 * uf[idx] + uf[idx - 1]) / h2)[:, None, None]
    n = dom.n
    c = uf[idx]
    dxx = (uf[idx + n] - 2 * c + uf[idx - n]) / h2
    dyy = (uf[idx + 1] - 2 * c + uf[idx - 1]) / h2
    dxy = (uf[idx + n + 1] - uf[idx + n - 1] - uf[idx - n + 1] + uf[idx - n - 1]) / (4 * h2)
    return np.stack([np.stack([dxx, dxy], -1), np.stack([dxy, dyy], -1)], -2)
