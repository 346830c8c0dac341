"""Compiled traversal kernels for the BVH.

Scalar inner loops compiled with numba; callers allocate the output
arrays. Geometry is passed as flat float64 arrays so the compiled
signatures stay stable across meshes. Misses are reported as face
index -1. Ties (a ray hitting a shared edge, a point equidistant from
two faces) go to the lowest face index so results do not depend on
traversal order.
"""

import numpy as np
from numba import njit

_STACK = 128  # traversal stack; fits any sane median-split tree


@njit(cache=True, error_model="numpy", inline="always")
def _ray_tri(ox, oy, oz, dx, dy, dz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Moller-Trumbore. Returns (t, u, v) or t = -1 on miss."""
    e1x, e1y, e1z = bx - ax, by - ay, bz - az
    e2x, e2y, e2z = cx - ax, cy - ay, cz - az
    hx = dy * e2z - dz * e2y
    hy = dz * e2x - dx * e2z
    hz = dx * e2y - dy * e2x
    det = e1x * hx + e1y * hy + e1z * hz
    if det == 0.0:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    sx, sy, sz = ox - ax, oy - ay, oz - az
    u = (sx * hx + sy * hy + sz * hz) * inv
    # accept-positive comparisons so NaN falls through to a miss
    if not (u >= -1e-12 and u <= 1.0 + 1e-12):
        return -1.0, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if not (v >= -1e-12 and u + v <= 1.0 + 1e-12):
        return -1.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if not (t > 0.0):
        return -1.0, 0.0, 0.0
    return t, u, v


@njit(cache=True, error_model="numpy", inline="always")
def _ray_box(ox, oy, oz, dx, dy, dz, x0, y0, z0, x1, y1, z1, tmax):
    """Slab test: does the ray meet the box within (0, tmax]?"""
    tmn = 0.0
    tmx = tmax
    for axis in range(3):
        if axis == 0:
            o, d, lo, hi = ox, dx, x0, x1
        elif axis == 1:
            o, d, lo, hi = oy, dy, y0, y1
        else:
            o, d, lo, hi = oz, dz, z0, z1
        if d == 0.0:
            if o < lo or o > hi:
                return False
        else:
            inv = 1.0 / d
            t0 = (lo - o) * inv
            t1 = (hi - o) * inv
            if t0 > t1:
                t0, t1 = t1, t0
            if t0 > tmn:
                tmn = t0
            if t1 < tmx:
                tmx = t1
            if tmn > tmx:
                return False
    return True


@njit(cache=True, error_model="numpy", inline="always")
def _box_d2(px, py, pz, x0, y0, z0, x1, y1, z1):
    d2 = 0.0
    if px < x0:
        d2 += (x0 - px) ** 2
    elif px > x1:
        d2 += (px - x1) ** 2
    if py < y0:
        d2 += (y0 - py) ** 2
    elif py > y1:
        d2 += (py - y1) ** 2
    if pz < z0:
        d2 += (z0 - pz) ** 2
    elif pz > z1:
        d2 += (pz - z1) ** 2
    return d2


@njit(cache=True, error_model="numpy", inline="always")
def _closest_on_tri(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Closest point on a triangle (Ericson's region walk)."""
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return (
        ax + abx * v + acx * w,
        ay + aby * v + acy * w,
        az + abz * v + acz * w,
    )


@njit(cache=True, error_model="numpy")
def ray_cast_kernel(
    origins, dirs, bmin, bmax, left, right, start, count, order, va, vb, vc,
    out_face, out_t, out_u, out_v,
):
    """Nearest positive ray hits for a batch of rays."""
    stack = np.empty(_STACK, dtype=np.int64)
    for i in range(origins.shape[0]):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        best_t = np.inf
        best_f = -1
        best_u = 0.0
        best_v = 0.0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if not _ray_box(
                ox, oy, oz, dx, dy, dz,
                bmin[node, 0], bmin[node, 1], bmin[node, 2],
                bmax[node, 0], bmax[node, 1], bmax[node, 2],
                best_t,
            ):
                continue
            if left[node] < 0:
                for s in range(start[node], start[node] + count[node]):
                    f = order[s]
                    t, u, v = _ray_tri(
                        ox, oy, oz, dx, dy, dz,
                        va[f, 0], va[f, 1], va[f, 2],
                        vb[f, 0], vb[f, 1], vb[f, 2],
                        vc[f, 0], vc[f, 1], vc[f, 2],
                    )
                    if t >= 0.0 and (t < best_t or (t == best_t and f < best_f)):
                        best_t = t
                        best_f = f
                        best_u = u
                        best_v = v
            else:
                stack[top] = right[node]
                top += 1
                stack[top] = left[node]
                top += 1
        out_face[i] = best_f
        out_t[i] = best_t if best_f >= 0 else -1.0
        out_u[i] = best_u
        out_v[i] = best_v


@njit(cache=True, error_model="numpy")
def closest_point_kernel(
    points, bmin, bmax, left, right, start, count, order, va, vb, vc,
    out_face, out_q, out_d2,
):
    """Globally closest point on the mesh for a batch of query points."""
    stack = np.empty(_STACK, dtype=np.int64)
    for i in range(points.shape[0]):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best_d2 = np.inf
        best_f = -1
        qx = qy = qz = 0.0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if (
                _box_d2(
                    px, py, pz,
                    bmin[node, 0], bmin[node, 1], bmin[node, 2],
                    bmax[node, 0], bmax[node, 1], bmax[node, 2],
                )
                > best_d2
            ):
                continue
            if left[node] < 0:
                for s in range(start[node], start[node] + count[node]):
                    f = order[s]
                    cx, cy, cz = _closest_on_tri(
                        px, py, pz,
                        va[f, 0], va[f, 1], va[f, 2],
                        vb[f, 0], vb[f, 1], vb[f, 2],
                        vc[f, 0], vc[f, 1], vc[f, 2],
                    )
                    d2 = (cx - px) ** 2 + (cy - py) ** 2 + (cz - pz) ** 2
                    if d2 < best_d2 or (d2 == best_d2 and f < best_f):
                        best_d2 = d2
                        best_f = f
                        qx, qy, qz = cx, cy, cz
            else:
                # visit the nearer child first for tighter pruning
                l, r = left[node], right[node]
                dl = _box_d2(
                    px, py, pz,
                    bmin[l, 0], bmin[l, 1], bmin[l, 2],
                    bmax[l, 0], bmax[l, 1], bmax[l, 2],
                )
                dr = _box_d2(
                    px, py, pz,
                    bmin[r, 0], bmin[r, 1], bmin[r, 2],
                    bmax[r, 0], bmax[r, 1], bmax[r, 2],
                )
                if dl <= dr:
                    stack[top] = r
                    top += 1
                    stack[top] = l
                    top += 1
                else:
                    stack[top] = l
                    top += 1
                    stack[top] = r
                    top += 1
        out_face[i] = best_f
        out_q[i, 0] = qx
        out_q[i, 1] = qy
        out_q[i, 2] = qz
        out_d2[i] = best_d2


@njit(cache=True, error_model="numpy")
def segment_distance_kernel(points, seg_a, seg_b, out_d):
    """Distance from each point to the nearest of the given segments."""
    m = seg_a.shape[0]
    for i in range(points.shape[0]):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best = np.inf
        for j in range(m):
            ax, ay, az = seg_a[j, 0], seg_a[j, 1], seg_a[j, 2]
            ux = seg_b[j, 0] - ax
            uy = seg_b[j, 1] - ay
            uz = seg_b[j, 2] - az
            uu = ux * ux + uy * uy + uz * uz
            if uu > 0.0:
                t = ((px - ax) * ux + (py - ay) * uy + (pz - az) * uz) / uu
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            else:
                t = 0.0
            ex = px - (ax + t * ux)
            ey = py - (ay + t * uy)
            ez = pz - (az + t * uz)
            d2 = ex * ex + ey * ey + ez * ez
            if d2 < best:
                best = d2
        out_d[i] = np.sqrt(best)
