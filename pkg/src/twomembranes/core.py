"""Pucci extremal operators, frame-diagonal Bellman operators and the penalty profile.

All matrix functions accept a single symmetric matrix of shape ``(d, d)`` or a
stack of shape ``(..., d, d)`` with ``d`` in ``{1, 2}`` and broadcast over the
leading axes.
"""

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UnsupportedDimensionError

__all__ = [
    "PucciParams", "OperatorKind", "OperatorSpec", "PenaltyConfig",
    "eigen_sym", "pucci_plus", "pucci_minus", "pucci_plus_eigs",
    "pucci_minus_eigs", "operator_eval", "beta_eval", "beta_eps_eval",
    "beta_eps_prime", "smoothstep", "smoothstep_prime",
]

_SYM_RTOL = 1e-12


@dataclass(frozen=True)
class PucciParams:
    lam: float
    Lam: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and np.isfinite(self.Lam)):
            raise ConfigurationError("ellipticity constants must be finite")
        if not 0 < self.lam < self.Lam:
            raise ConfigurationError(
                f"need 0 < lambda < Lambda, got lambda={self.lam}, Lambda={self.Lam}")

    @classmethod
    def degenerate(cls, c):
        """lambda == Lambda == c, bypassing validation. Test use only."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "lam", float(c))
        object.__setattr__(obj, "Lam", float(c))
        return obj


class OperatorKind(str, enum.Enum):
    PUCCI_MAX = "PucciMax"
    PUCCI_MIN = "PucciMin"
    BELLMAN_MAX = "BellmanMax"
    BELLMAN_MIN = "BellmanMin"


_PARTNER = {
    OperatorKind.PUCCI_MAX: OperatorKind.PUCCI_MIN,
    OperatorKind.PUCCI_MIN: OperatorKind.PUCCI_MAX,
    OperatorKind.BELLMAN_MAX: OperatorKind.BELLMAN_MIN,
    OperatorKind.BELLMAN_MIN: OperatorKind.BELLMAN_MAX,
}


@dataclass(frozen=True)
class OperatorSpec:
    """Which uniformly elliptic operator is applied.

    For the Bellman kinds ``family`` is a sequence of coefficient tuples; the
    i-th coefficient multiplies the second derivative along the i-th direction of
    a stencil frame.
    """

    kind: OperatorKind
    params: PucciParams
    family: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "kind", OperatorKind(self.kind))
        fam = tuple(tuple(float(a) for a in member) for member in self.family)
        object.__setattr__(self, "family", fam)
        if self.is_bellman:
            if not fam:
                raise ConfigurationError("Bellman operator needs a nonempty family")
            if len({len(m) for m in fam}) != 1:
                raise ConfigurationError("family members must all have the same length")
            lo, hi = self.params.lam, self.params.Lam
            for member in fam:
                if any(not lo <= a <= hi for a in member):
                    raise ConfigurationError(
                        f"family coefficients must lie in [{lo}, {hi}], got {member}")

    @property
    def is_bellman(self):
        return self.kind in (OperatorKind.BELLMAN_MAX, OperatorKind.BELLMAN_MIN)

    @property
    def sense(self):
        """+1 for sup-type (convex) operators, -1 for inf-type (concave)."""
        return 1 if self.kind in (OperatorKind.PUCCI_MAX, OperatorKind.BELLMAN_MAX) else -1

    def partner(self):
        """The operator X -> -F(-X)."""
        return OperatorSpec(_PARTNER[self.kind], self.params, self.family)

    def coefficients(self, dim):
        """Coefficient table of shape (members, dim) used by the stencil kernels.

        The Pucci kinds use every corner of [lambda, Lambda]^dim; picking the best
        corner per frame reproduces the sign rule exactly.
        """
        if self.is_bellman:
            c = np.array(self.family, dtype=float)
            if c.shape[1] != dim:
                raise ConfigurationError(
                    f"family members have length {c.shape[1]}, domain dimension is {dim}")
            return c
        corners = itertools.product((self.params.lam, self.params.Lam), repeat=dim)
        return np.array(list(corners), dtype=float)


def _check_sym(X):
    X = np.asarray(X, dtype=float)
    if X.ndim < 2 or X.shape[-1] != X.shape[-2]:
        raise ConfigurationError(f"expected square matrices, got shape {X.shape}")
    d = X.shape[-1]
    if d not in (1, 2):
        raise UnsupportedDimensionError(f"matrix dimension {d} not supported (only 1 or 2)")
    if d == 2:
        off = np.abs(X[..., 0, 1] - X[..., 1, 0])
        scale = np.abs(X).max(axis=(-2, -1)) if X.size else 0.0
        if np.any(off > _SYM_RTOL * np.maximum(scale, 1e-300)):
            raise ConfigurationError("matrix is not symmetric")
    return X


def eigen_sym(X):
    """Ascending eigenvalues of a 1x1 or 2x2 symmetric matrix, in closed form."""
    X = _check_sym(X)
    if X.shape[-1] == 1:
        return X[..., 0, :].copy()
    a, b, c = X[..., 0, 0], X[..., 0, 1], X[..., 1, 1]
    m = 0.5 * (a + c)
    r = np.hypot(0.5 * (a - c), b)
    # large-magnitude root first, the other from the determinant (no cancellation)
    big = m + np.copysign(r, m)
    det = a * c - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.where(big != 0.0, det / np.where(big != 0.0, big, 1.0), 0.0)
    lo = np.minimum(big, small)
    hi = np.maximum(big, small)
    return np.stack([lo, hi], axis=-1)


def pucci_plus_eigs(e, lam, Lam):
    e = np.asarray(e, dtype=float)
    return Lam * np.where(e > 0, e, 0.0).sum(-1) + lam * np.where(e <= 0, e, 0.0).sum(-1)


def pucci_minus_eigs(e, lam, Lam):
    e = np.asarray(e, dtype=float)
    return lam * np.where(e > 0, e, 0.0).sum(-1) + Lam * np.where(e <= 0, e, 0.0).sum(-1)


def pucci_plus(p, X):
    return pucci_plus_eigs(eigen_sym(X), p.lam, p.Lam)


def pucci_minus(p, X):
    return pucci_minus_eigs(eigen_sym(X), p.lam, p.Lam)


def operator_eval(spec, X):
    """Evaluate F(X) for an OperatorSpec.

    Bellman kinds require X diagonal (in the frame the family is written in).
    """
    if spec.kind is OperatorKind.PUCCI_MAX:
        return pucci_plus(spec.params, X)
    if spec.kind is OperatorKind.PUCCI_MIN:
        return pucci_minus(spec.params, X)
    if not spec.family:
        raise ConfigurationError("Bellman operator needs a nonempty family")
    X = _check_sym(X)
    d = X.shape[-1]
    diag = np.diagonal(X, axis1=-2, axis2=-1)
    if d == 2 and np.any(np.abs(X[..., 0, 1]) > _SYM_RTOL * np.maximum(np.abs(diag).max(-1), 1e-300)):
        raise ConfigurationError("Bellman families act on frame-diagonal matrices only")
    vals = diag @ spec.coefficients(d).T
    return vals.max(-1) if spec.sense > 0 else vals.min(-1)


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty profile beta with depth N acting on the scale epsilon."""

    N: float
    epsilon: float
    profile: str = "cubic"

    def __post_init__(self):
        if not self.N >= 0:
            raise ConfigurationError(f"penalty depth N must be >= 0, got {self.N}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.profile not in ("cubic", "quintic"):
            raise ConfigurationError(f"unknown penalty profile {self.profile!r}")

    @classmethod
    def from_data(cls, f, g, epsilon, profile="cubic"):
        """Depth N = sup |f - g| over the given node values."""
        diff = np.asarray(f, dtype=float) - np.asarray(g, dtype=float)
        diff = diff[np.isfinite(diff)]
        N = float(np.abs(diff).max()) if diff.size else 0.0
        return cls(N, epsilon, profile)

    def with_epsilon(self, epsilon):
        return PenaltyConfig(self.N, epsilon, self.profile)


def smoothstep(t, profile="cubic"):
    s = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    if profile == "cubic":
        return s * s * (3.0 - 2.0 * s)
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0)


def smoothstep_prime(t, profile="cubic"):
    t = np.asarray(t, dtype=float)
    s = np.clip(t, 0.0, 1.0)
    if profile == "cubic":
        d = 6.0 * s * (1.0 - s)
    else:
        d = 30.0 * s * s * (1.0 - s) * (1.0 - s)
    return np.where((t > 0.0) & (t < 1.0), d, 0.0)


def beta_eval(c, t):
    """beta(t) = -N (1 - s(t)): equals -N for t <= 0 and 0 for t >= 1."""
    return -c.N * (1.0 - smoothstep(t, c.profile))


def beta_eps_eval(c, t):
    return beta_eval(c, np.asarray(t, dtype=float) / c.epsilon)


def beta_eps_prime(c, t):
    return c.N * smoothstep_prime(np.asarray(t, dtype=float) / c.epsilon, c.profile) / c.epsilon
