# Compiled hot loops. Semantics mirror _kernels_py exactly; tests run both.
from libc.math cimport sqrt, floor, ceil
import numpy as np


def rasterize_disks(const double[:] xs, const double[:] ys, double x0, double y0,
                    double hx, double hy, Py_ssize_t nx, Py_ssize_t ny, double radius):
    """Mark grid cells that intersect a closed disk of ``radius`` around any point."""
    out = np.zeros((nx, ny), dtype=np.uint8)
    cdef unsigned char[:, :] blk = out
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t k, i, j, i0, i1, j0, j1
    cdef double px, py, cx0, cx1, cy0, cy1, dx, dy, r2 = radius * radius
    for k in range(n):
        px = xs[k]
        py = ys[k]
        i0 = <Py_ssize_t>floor((px - radius - x0) / hx)
        i1 = <Py_ssize_t>ceil((px + radius - x0) / hx)
        j0 = <Py_ssize_t>floor((py - radius - y0) / hy)
        j1 = <Py_ssize_t>ceil((py + radius - y0) / hy)
        if i0 < 0:
            i0 = 0
        if j0 < 0:
            j0 = 0
        if i1 > nx - 1:
            i1 = nx - 1
        if j1 > ny - 1:
            j1 = ny - 1
        for i in range(i0, i1 + 1):
            cx0 = x0 + i * hx
            cx1 = cx0 + hx
            if px < cx0:
                dx = cx0 - px
            elif px > cx1:
                dx = px - cx1
            else:
                dx = 0.0
            for j in range(j0, j1 + 1):
                cy0 = y0 + j * hy
                cy1 = cy0 + hy
                if py < cy0:
                    dy = cy0 - py
                elif py > cy1:
                    dy = py - cy1
                else:
                    dy = 0.0
                if dx * dx + dy * dy <= r2:
                    blk[i, j] = 1
    return out


def flood_reach(const unsigned char[:, :] blocked):
    """4-connected flood fill of free cells starting from every free boundary cell."""
    cdef Py_ssize_t nx = blocked.shape[0], ny = blocked.shape[1]
    out = np.zeros((nx, ny), dtype=np.uint8)
    cdef unsigned char[:, :] seen = out
    stack_arr = np.empty(nx * ny * 2 + 2, dtype=np.intp)
    cdef Py_ssize_t[:] stack = stack_arr
    cdef Py_ssize_t top = 0, i, j, k
    for i in range(nx):
        for j in range(ny):
            if (i == 0 or j == 0 or i == nx - 1 or j == ny - 1) and not blocked[i, j] and not seen[i, j]:
                seen[i, j] = 1
                stack[top] = i
                stack[top + 1] = j
                top += 2
    while top > 0:
        top -= 2
        i = stack[top]
        j = stack[top + 1]
        if i > 0 and not blocked[i - 1, j] and not seen[i - 1, j]:
            seen[i - 1, j] = 1
            stack[top] = i - 1
            stack[top + 1] = j
            top += 2
        if i < nx - 1 and not blocked[i + 1, j] and not seen[i + 1, j]:
            seen[i + 1, j] = 1
            stack[top] = i + 1
            stack[top + 1] = j
            top += 2
        if j > 0 and not blocked[i, j - 1] and not seen[i, j - 1]:
            seen[i, j - 1] = 1
            stack[top] = i
            stack[top + 1] = j - 1
            top += 2
        if j < ny - 1 and not blocked[i, j + 1] and not seen[i, j + 1]:
            seen[i, j + 1] = 1
            stack[top] = i
            stack[top + 1] = j + 1
            top += 2
    return out


cdef Py_ssize_t _find(Py_ssize_t[:] parent, Py_ssize_t a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def cluster_radius(const double[:] xs, const double[:] ys, double radius):
    """Single-linkage clusters: points within ``radius`` are linked.

    Labels are canonical: cluster ids increase with the smallest member index.
    """
    cdef Py_ssize_t n = xs.shape[0]
    order_arr = np.argsort(np.asarray(xs), kind="stable").astype(np.intp)
    cdef Py_ssize_t[:] order = order_arr
    parent_arr = np.arange(n, dtype=np.intp)
    cdef Py_ssize_t[:] parent = parent_arr
    cdef Py_ssize_t a, b, ia, ib, ra, rb
    cdef double dx, dy, r2 = radius * radius
    for a in range(n):
        ia = order[a]
        for b in range(a + 1, n):
            ib = order[b]
            dx = xs[ib] - xs[ia]
            if dx > radius:
                break
            dy = ys[ib] - ys[ia]
            if dx * dx + dy * dy <= r2:
                ra = _find(parent, ia)
                rb = _find(parent, ib)
                if ra != rb:
                    if ra < rb:
                        parent[rb] = ra
                    else:
                        parent[ra] = rb
    labels_arr = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[:] labels = labels_arr
    remap_arr = np.full(n, -1, dtype=np.intp)
    cdef Py_ssize_t[:] remap = remap_arr
    cdef Py_ssize_t nxt = 0, r
    for a in range(n):
        r = _find(parent, a)
        if remap[r] < 0:
            remap[r] = nxt
            nxt += 1
        labels[a] = remap[r]
    return labels_arr
