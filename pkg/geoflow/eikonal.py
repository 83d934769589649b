"""Distance reconstruction on a uniform 3D grid.

Near the interface, distances come from Newton iterations for the closest
point on the zero set of a tricubic spline of φ. Further out, a fast sweeping
solver for |∇d| = 1 takes over: a first-order Godunov upwind update with
Gauss-Seidel sweeps in the 8 axis orderings. Nodes flagged ``fixed`` keep
their initial value.
"""
from __future__ import annotations

import logging

import numba
import numpy as np
from numba import njit
from scipy import ndimage

log = logging.getLogger(__name__)


FAR: float = 1.0e10
NEWTON_MAX_ITER: int = 25
# in grid cells
NEWTON_TOL: float = 1e-6
_GG_MIN: float = 1e-12


def set_threads(count: int) -> None:
    if count > 0:
        numba.set_num_threads(min(count, numba.config.NUMBA_NUM_THREADS))


@njit(cache=True)
def _solve_local(a: float, b: float, c: float, h: float) -> float:
    # sort so that a <= b <= c
    if a > b:
        a, b = b, a
    if b > c:
        b, c = c, b
    if a > b:
        a, b = b, a
    u = a + h
    if u <= b:
        return u
    u = 0.5 * (a + b + np.sqrt(max(2.0 * h * h - (a - b) * (a - b), 0.0)))
    if u <= c:
        return u
    s = a + b + c
    q = s * s - 3.0 * (a * a + b * b + c * c - h * h)
    return (s + np.sqrt(max(q, 0.0))) / 3.0


@njit(cache=True)
def _sweep(d, fixed, h, sx, sy, sz):
    nx, ny, nz = d.shape
    change = 0.0
    for ii in range(nx):
        i = ii if sx > 0 else nx - 1 - ii
        for jj in range(ny):
            j = jj if sy > 0 else ny - 1 - jj
            for kk in range(nz):
                k = kk if sz > 0 else nz - 1 - kk
                if fixed[i, j, k]:
                    continue
                a = FAR
                if i > 0:
                    a = min(a, d[i - 1, j, k])
                if i < nx - 1:
                    a = min(a, d[i + 1, j, k])
                b = FAR
                if j > 0:
                    b = min(b, d[i, j - 1, k])
                if j < ny - 1:
                    b = min(b, d[i, j + 1, k])
                c = FAR
                if k > 0:
                    c = min(c, d[i, j, k - 1])
                if k < nz - 1:
                    c = min(c, d[i, j, k + 1])
                if a >= FAR and b >= FAR and c >= FAR:
                    continue
                u = _solve_local(a, b, c, h)
                if u < d[i, j, k]:
                    change = max(change, d[i, j, k] - u)
                    d[i, j, k] = u
    return change


@njit(cache=True)
def _fast_sweep(d, fixed, h, max_iterations, tol):
    iterations = 0
    for it in range(max_iterations):
        change = 0.0
        for sx in (1, -1):
            for sy in (1, -1):
                for sz in (1, -1):
                    change = max(change, _sweep(d, fixed, h, sx, sy, sz))
        iterations = it + 1
        if change <= tol:
            break
    return iterations


def fast_sweep(
    initial: np.ndarray,
    fixed: np.ndarray,
    h: float,
    max_iterations: int = 4,
    tol: float = 1e-12,
) -> np.ndarray:
    """Unsigned distance from the ``fixed`` nodes; other nodes start at +∞."""
    d = np.where(fixed, np.abs(initial), FAR).astype(np.float64)
    fixed = np.ascontiguousarray(fixed, dtype=np.bool_)
    iterations = _fast_sweep(d, fixed, float(h), int(max_iterations), float(tol))
    log.debug("快速扫描在 %d 轮后结束", iterations)
    return d


def _spline(a: np.ndarray) -> np.ndarray:
    return ndimage.spline_filter(a, order=3, mode="mirror")


def _sample(coeffs: np.ndarray, q: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(coeffs, q.T, order=3, mode="mirror", prefilter=False)


def closest_point_distance(
    phi: np.ndarray,
    h: float,
    targets: np.ndarray,
    max_iterations: int = NEWTON_MAX_ITER,
    tol: float = NEWTON_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    """Unsigned distance from each ``targets`` node to the zero set of the tricubic spline of φ.

    The foot point p solves φ(p) = 0 with x − p parallel to ∇φ(p). Each Newton
    step moves p onto the zero set along ∇φ and drops the tangential part of
    x − p. Results follow the order of ``np.nonzero(targets)``; the second array
    flags nodes whose iteration converged.
    """
    coeffs = _spline(phi)
    grads = [_spline(np.gradient(phi, axis=axis, edge_order=2)) for axis in range(3)]
    x = np.argwhere(targets).astype(np.float64)
    p = x.copy()
    upper = np.asarray(phi.shape, dtype=np.float64) - 1.0
    converged = np.zeros(len(x), dtype=bool)
    active = np.arange(len(x))
    for _ in range(max_iterations):
        if active.size == 0:
            break
        q = p[active]
        f = _sample(coeffs, q)
        g = np.stack([_sample(c, q) for c in grads], axis=-1)
        gg = np.maximum(np.einsum("ni,ni->n", g, g), _GG_MIN)
        r = x[active] - q
        step = r - ((np.einsum("ni,ni->n", r, g) + f) / gg)[:, None] * g
        p[active] = np.clip(q + step, 0.0, upper)
        done = np.linalg.norm(step, axis=-1) < tol
        converged[active[done]] = True
        active = active[~done]
    log.debug("最近点迭代: %d/%d 个节点收敛", int(converged.sum()), len(x))
    return np.linalg.norm(x - p, axis=-1) * h, converged
