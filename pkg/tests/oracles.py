"""Independent reference implementations used to check the fast paths.

Everything here is deliberately written with a different algorithm than the
production code: ray visitation by fine sampling with recursive bisection,
convolution by literal nested loops, gradients by central finite differences.
"""

from __future__ import annotations

import numpy as np

from voxnav.voxel import UNKNOWN, OccupancyGrid, RayMode, StopCause


def sample_ray_cells(grid: OccupancyGrid, start, direction, max_range: float) -> list[tuple[int, int, int]]:
    """Ordered cells a segment passes through, found by sampling.

    Samples the ray at resolution/10 steps (plus the exact endpoint) and
    recursively bisects any step whose endpoints do not land in the same or
    face-adjacent cells, so corner-clipped cells are never skipped. Indices
    are pure floor arithmetic; out-of-grid indices are kept so the caller can
    apply its own bounds rule.
    """
    start = np.asarray(start, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    res = grid.resolution
    origin = grid.origin

    def cell_at(t: float) -> tuple[int, int, int]:
        p = start + t * d
        return tuple(int(v) for v in np.floor((p - origin) / res))

    step = res / 10.0
    ts = list(np.arange(0.0, max_range, step)) + [max_range]

    def expand(t0, c0, t1, c1, out):
        """Append the cells entered after ``c0`` up to and including ``c1``."""
        if c0 == c1:
            return
        if sum(abs(a - b) for a, b in zip(c0, c1)) == 1:
            out.append(c1)
            return
        tm = 0.5 * (t0 + t1)
        if tm <= t0 or tm >= t1:  # interval below float resolution
            out.append(c1)
            return
        cm = cell_at(tm)
        expand(t0, c0, tm, cm, out)
        expand(tm, cm, t1, c1, out)

    seq = [cell_at(0.0)]
    for t0, t1 in zip(ts[:-1], ts[1:]):
        sub: list[tuple[int, int, int]] = []
        expand(t0, seq[-1], t1, cell_at(t1), sub)
        seq.extend(sub)
    return seq


def sample_raycast(grid: OccupancyGrid, start, direction, max_range, mode: RayMode, threshold=0.5):
    """Raycast semantics evaluated over the sampled cell sequence."""
    visited: list[tuple[int, int, int]] = []
    for cell in sample_ray_cells(grid, start, direction, max_range):
        if not grid.in_bounds(cell):
            return visited, None, StopCause.OUT_OF_BOUNDS
        v = grid.cells[cell]
        if mode is RayMode.REVERSE and v == UNKNOWN:
            return visited, cell, StopCause.HIT_UNKNOWN
        if v > threshold:
            return visited, cell, StopCause.HIT_OCCUPIED
        visited.append(cell)
    return visited, None, StopCause.MAX_RANGE


def conv3d_naive(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride=1, dilation=1, padding=0) -> np.ndarray:
    """Literal seven-nested-loop 3D cross-correlation, channels-last.

    x: (N, D, H, W, Cin), w: (k, k, k, Cin, Cout), b: (Cout,).
    """
    n, dd, hh, ww, ci = x.shape
    k = w.shape[0]
    co = w.shape[4]
    xp = np.zeros((n, dd + 2 * padding, hh + 2 * padding, ww + 2 * padding, ci), dtype=x.dtype)
    xp[:, padding:padding + dd, padding:padding + hh, padding:padding + ww, :] = x
    span = dilation * (k - 1) + 1
    od = (dd + 2 * padding - span) // stride + 1
    oh = (hh + 2 * padding - span) // stride + 1
    ow = (ww + 2 * padding - span) // stride + 1
    out = np.zeros((n, od, oh, ow, co), dtype=np.float64)
    for ni in range(n):
        for zo in range(od):
            for yo in range(oh):
                for xo in range(ow):
                    for oc in range(co):
                        acc = 0.0
                        for a in range(k):
                            for bb in range(k):
                                for c in range(k):
                                    for ic in range(ci):
                                        acc += (
                                            xp[ni, zo * stride + a * dilation,
                                               yo * stride + bb * dilation,
                                               xo * stride + c * dilation, ic]
                                            * w[a, bb, c, ic, oc]
                                        )
                        out[ni, zo, yo, xo, oc] = acc + b[oc]
    return out


def finite_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of scalar function ``f`` at ``x``."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise relative error between two arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
