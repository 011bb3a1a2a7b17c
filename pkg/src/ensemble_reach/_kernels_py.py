"""Pure-Python reference kernels, used when the compiled extension is absent."""
from collections import deque
import math

import numpy as np


def rasterize_disks(xs, ys, x0, y0, hx, hy, nx, ny, radius):
    out = np.zeros((nx, ny), dtype=np.uint8)
    r2 = radius * radius
    for px, py in zip(np.asarray(xs, float), np.asarray(ys, float)):
        i0 = max(int(math.floor((px - radius - x0) / hx)), 0)
        i1 = min(int(math.ceil((px + radius - x0) / hx)), nx - 1)
        j0 = max(int(math.floor((py - radius - y0) / hy)), 0)
        j1 = min(int(math.ceil((py + radius - y0) / hy)), ny - 1)
        if i1 < i0 or j1 < j0:
            continue
        cx0 = x0 + np.arange(i0, i1 + 1) * hx
        cy0 = y0 + np.arange(j0, j1 + 1) * hy
        dx = np.maximum(np.maximum(cx0 - px, px - (cx0 + hx)), 0.0)
        dy = np.maximum(np.maximum(cy0 - py, py - (cy0 + hy)), 0.0)
        hit = dx[:, None] ** 2 + dy[None, :] ** 2 <= r2
        out[i0:i1 + 1, j0:j1 + 1] |= hit.astype(np.uint8)
    return out


def flood_reach(blocked):
    blocked = np.asarray(blocked, dtype=bool)
    nx, ny = blocked.shape
    seen = np.zeros((nx, ny), dtype=np.uint8)
    queue = deque()
    for i in range(nx):
        for j in (0, ny - 1):
            if not blocked[i, j] and not seen[i, j]:
                seen[i, j] = 1
                queue.append((i, j))
    for j in range(ny):
        for i in (0, nx - 1):
            if not blocked[i, j] and not seen[i, j]:
                seen[i, j] = 1
                queue.append((i, j))
    while queue:
        i, j = queue.popleft()
        for a, b in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
            if 0 <= a < nx and 0 <= b < ny and not blocked[a, b] and not seen[a, b]:
                seen[a, b] = 1
                queue.append((a, b))
    return seen


def cluster_radius(xs, ys, radius):
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    n = len(xs)
    order = np.argsort(xs, kind="stable")
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    r2 = radius * radius
    for a in range(n):
        ia = order[a]
        for b in range(a + 1, n):
            ib = order[b]
            dx = xs[ib] - xs[ia]
            if dx > radius:
                break
            dy = ys[ib] - ys[ia]
            if dx * dx + dy * dy <= r2:
                ra, rb = find(ia), find(ib)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    labels = np.empty(n, dtype=np.intp)
    remap = {}
    for a in range(n):
        r = find(a)
        if r not in remap:
            remap[r] = len(remap)
        labels[a] = remap[r]
    return labels
