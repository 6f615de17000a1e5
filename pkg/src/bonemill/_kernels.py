"""Compiled inner loops for ball-on-heightfield carving."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def cut_grid(path, origin_x, origin_y, h, nx, ny, z_top, z_reach, stencil, r, out):  # pragma: no cover - compiled
    r2 = r * r
    for k in range(path.shape[0]):
        px = path[k, 0]
        py = path[k, 1]
        pz = path[k, 2]
        bx = int(np.rint((px - origin_x) / h))
        by = int(np.rint((py - origin_y) / h))
        cbx = min(max(bx, 0), nx - 1)
        cby = min(max(by, 0), ny - 1)
        if pz - r >= z_reach[cbx, cby]:
            continue
        for s in range(stencil.shape[0]):
            ix = bx + stencil[s, 0]
            iy = by + stencil[s, 1]
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny:
                continue
            dx = origin_x + h * ix - px
            dy = origin_y + h * iy - py
            d2 = dx * dx + dy * dy
            if d2 >= r2:
                continue
            depth = z_top[ix, iy] - (pz - math.sqrt(r2 - d2))
            if depth > out[ix, iy]:
                out[ix, iy] = depth


@njit(cache=True)
def cut_points(qxy, qz, path, r, out):  # pragma: no cover - compiled
    r2 = r * r
    for i in range(qxy.shape[0]):
        best = out[i]
        for k in range(path.shape[0]):
            dx = qxy[i, 0] - path[k, 0]
            dy = qxy[i, 1] - path[k, 1]
            d2 = dx * dx + dy * dy
            if d2 >= r2:
                continue
            depth = qz[i] - (path[k, 2] - math.sqrt(r2 - d2))
            if depth > best:
                best = depth
        out[i] = best
