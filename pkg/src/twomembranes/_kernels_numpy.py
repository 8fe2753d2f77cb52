"""Vectorized numpy versions of the loop kernels (same signatures as the numba ones).

Gauss-Seidel is realised as a multicolour sweep: nodes of one colour share no
stencil edge, so each colour class is updated simultaneously.
"""

import numpy as np

NAME = "numpy"

_PAIR_BLOCK = 1 << 20


def _candidates(u, interior, nplus, nminus, w, frame_dirs, coeffs, rows=None):
    # returns a (k, F, P) and b (F, P) so that candidate value = a - b * u(center)
    if rows is not None:
        nplus, nminus = nplus[rows], nminus[rows]
    F, d = frame_dirs.shape
    sums = u[nplus] + u[nminus]                        # (k, D)
    sw = sums[:, frame_dirs] * w[frame_dirs]           # (k, F, d)
    a = np.einsum("kfi,pi->kfp", sw, coeffs)
    b = 2.0 * (w[frame_dirs] @ coeffs.T)               # (F, P)
    return a, b


def _select(x, frame_ok, sense, npol):
    fill = -np.inf if sense > 0 else np.inf
    x = np.where(frame_ok[:, :, None], x, fill).reshape(x.shape[0], -1)
    arg = x.argmax(1) if sense > 0 else x.argmin(1)
    return x[np.arange(x.shape[0]), arg], arg


def operator_values(u, interior, nplus, nminus, w, frame_dirs, frame_ok, coeffs, sense):
    a, b = _candidates(u, interior, nplus, nminus, w, frame_dirs, coeffs)
    vals = a - b[None] * u[interior][:, None, None]
    return _select(vals, frame_ok, sense, coeffs.shape[0])


def _roots(u, rhs, interior, nplus, nminus, w, frame_dirs, frame_ok, coeffs, sense, rows):
    a, b = _candidates(u, interior, nplus, nminus, w, frame_dirs, coeffs, rows)
    t = (a - rhs[rows][:, None, None]) / b[None]
    return _select(t, frame_ok[rows], sense, coeffs.shape[0])[0]


def sweep(u, rhs, interior, nplus, nminus, w, frame_dirs, frame_ok, coeffs, sense, jacobi, colors):
    if jacobi:
        rows = np.arange(interior.shape[0])
        t = _roots(u, rhs, interior, nplus, nminus, w, frame_dirs, frame_ok, coeffs, sense, rows)
        delta = np.abs(t - u[interior]).max(initial=0.0)
        u[interior] = t
        return float(delta)
    delta = 0.0
    for c in range(colors.max(initial=-1) + 1):
        rows = np.flatnonzero(colors == c)
        t = _roots(u, rhs, interior, nplus, nminus, w, frame_dirs, frame_ok, coeffs, sense, rows)
        idx = interior[rows]
        delta = max(delta, float(np.abs(t - u[idx]).max(initial=0.0)))
        u[idx] = t
    return delta


def holder_max(points, vals, eta, left, right):
    best = 0.0
    for s in range(0, left.shape[0], _PAIR_BLOCK):
        i, j = left[s:s + _PAIR_BLOCK], right[s:s + _PAIR_BLOCK]
        r2 = ((points[i] - points[j]) ** 2).sum(1)
        ok = r2 > 0
        if ok.any():
            q = np.abs(vals[i][ok] - vals[j][ok]) / r2[ok] ** (0.5 * eta)
            best = max(best, float(q.max()))
    return best


def holder_max_all(points, vals, eta):
    n = points.shape[0]
    best = 0.0
    step = max(1, _PAIR_BLOCK // max(n, 1))
    for s in range(0, n, step):
        blk = slice(s, min(n, s + step))
        r2 = ((points[blk, None, :] - points[None, :, :]) ** 2).sum(-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.abs(vals[blk, None] - vals[None, :]) / r2 ** (0.5 * eta)
        q[r2 == 0] = 0.0
        best = max(best, float(q.max(initial=0.0)))
    return best
