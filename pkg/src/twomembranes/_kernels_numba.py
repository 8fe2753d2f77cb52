"""Loop kernels compiled with numba.

Array conventions (shared with ``_kernels_numpy``):

* ``u`` is the flat lattice field, ``interior`` the flat indices of unknown nodes;
* ``nplus``/``nminus`` hold, per interior node and stencil direction, the flat
  index of the neighbour at ``+e``/``-e`` (``-1`` when it does not exist);
* ``w[d] = 1 / (h^2 |e_d|^2)``;
* ``frame_dirs[f]`` lists the direction indices of frame ``f`` and
  ``frame_ok[k, f]`` says whether frame ``f`` fits at interior node ``k``;
* ``coeffs[p]`` is one coefficient assignment, one entry per frame direction;
* ``sense`` is +1 (max over frames and members) or -1 (min).
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def operator_values(u, interior, nplus, nminus, w, frame_dirs, frame_ok, coeffs, sense):
    m = interior.shape[0]
    nf, d = frame_dirs.shape
    npol = coeffs.shape[0]
    vals = np.empty(m)
    policy = np.empty(m, dtype=np.int64)
    for k in range(m):
        c0 = u[interior[k]]
        best = 0.0
        arg = -1
        for f in range(nf):
            if not frame_ok[k, f]:
                continue
            for p in range(npol):
                s = 0.0
                for i in range(d):
                    e = frame_dirs[f, i]
                    dd = (u[nplus[k, e]] - 2.0 * c0 + u[nminus[k, e]]) * w[e]
                    s += coeffs[p, i] * dd
                if arg < 0 or (sense > 0 and s > best) or (sense < 0 and s < best):
                    best = s
                    arg = f * npol + p
        vals[k] = best
        policy[k] = arg
    return vals, policy


@njit(cache=True)
def _node_root(u, k, r, interior, nplus, nminus, w, frame_dirs, frame_ok, coeffs, sense):
    # Op(t) is the max (or min) of affine maps a - b t with b > 0, so the root
    # of Op(t) = r is the max (or min) of (a - r) / b over the candidates.
    nf, d = frame_dirs.shape
    npol = coeffs.shape[0]
    best = 0.0
    first = True
    for f in range(nf):
        if not frame_ok[k, f]:
            continue
        for p in range(npol):
            a = 0.0
            b = 0.0
            for i in range(d):
                e = frame_dirs[f, i]
                cw = coeffs[p, i] * w[e]
                a += cw * (u[nplus[k, e]] + u[nminus[k, e]])
                b += 2.0 * cw
            t = (a - r) / b
            if first or (sense > 0 and t > best) or (sense < 0 and t < best):
                best = t
                first = False
    return best


@njit(cache=True)
def sweep(u, rhs, interior, nplus, nminus, w, frame_dirs, frame_ok, coeffs, sense, jacobi, colors):
    """One relaxation sweep in place; returns the sup-norm of the update.

    Gauss-Seidel visits the colour classes in increasing order (storage order
    within a class), which matches the multicolour sweep of the numpy backend.
    """
    m = interior.shape[0]
    src = u.copy() if jacobi else u
    ncol = 1
    if not jacobi:
        for k in range(m):
            if colors[k] + 1 > ncol:
                ncol = colors[k] + 1
    delta = 0.0
    for c in range(ncol):
        for k in range(m):
            if not jacobi and colors[k] != c:
                continue
            t = _node_root(src, k, rhs[k], interior, nplus, nminus, w, frame_dirs, frame_ok,
                           coeffs, sense)
            j = interior[k]
            ch = abs(t - u[j])
            if ch > delta:
                delta = ch
            u[j] = t
    return delta


@njit(cache=True)
def holder_max(points, vals, eta, left, right):
    """max |v_i - v_j| / |x_i - x_j|^eta over the index pairs (left[q], right[q])."""
    best = 0.0
    dim = points.shape[1]
    for q in range(left.shape[0]):
        i = left[q]
        j = right[q]
        r2 = 0.0
        for c in range(dim):
            dx = points[i, c] - points[j, c]
            r2 += dx * dx
        if r2 == 0.0:
            continue
        val = abs(vals[i] - vals[j]) / r2 ** (0.5 * eta)
        if val > best:
            best = val
    return best


@njit(cache=True)
def holder_max_all(points, vals, eta):
    """Same as holder_max over every unordered pair of nodes."""
    best = 0.0
    n = points.shape[0]
    dim = points.shape[1]
    for i in range(n):
        for j in range(i + 1, n):
            r2 = 0.0
            for c in range(dim):
                dx = points[i, c] - points[j, c]
                r2 += dx * dx
            if r2 == 0.0:
                continue
            val = abs(vals[i] - vals[j]) / r2 ** (0.5 * eta)
            if val > best:
                best = val
    return best
