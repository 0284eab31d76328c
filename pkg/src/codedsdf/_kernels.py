"""Numba kernels for the geometric hot paths.

All kernels are strict-IEEE (no fastmath) so results are bitwise reproducible
and independent of how callers batch or chunk the work. ``nogil=True`` lets
the deterministic chunked thread pool run them concurrently.
"""

import math

import numpy as np
from numba import njit

# Feature kinds for closest-point classification.
FEAT_FACE = 0
FEAT_EDGE = 1
FEAT_VERTEX = 2


@njit(cache=True, nogil=True)
def closest_point_triangle(ax, ay, az, bx, by, bz, cx, cy, cz, px, py, pz):
    """Closest point on triangle (a,b,c) to p.

    Returns (cpx, cpy, cpz, kind, local) where kind is FEAT_* and local is
    the vertex corner (0,1,2) or edge (0:ab, 1:bc, 2:ca) within the triangle.
    Region tests follow the standard Voronoi-region decomposition.
    """
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az, FEAT_VERTEX, 0

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz, FEAT_VERTEX, 1

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz, FEAT_EDGE, 0

    cpx_, cpy_, cpz_ = px - cx, py - cy, pz - cz
    d5 = abx * cpx_ + aby * cpy_ + abz * cpz_
    d6 = acx * cpx_ + acy * cpy_ + acz * cpz_
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz, FEAT_VERTEX, 2

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz, FEAT_EDGE, 2

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return (
            bx + w * (cx - bx),
            by + w * (cy - by),
            bz + w * (cz - bz),
            FEAT_EDGE,
            1,
        )

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return (
        ax + abx * v + acx * w,
        ay + aby * v + acy * w,
        az + abz * v + acz * w,
        FEAT_FACE,
        0,
    )


@njit(cache=True, nogil=True)
def _feature_normal(face_n, vert_pn, edge_pn, tris, tri, kind, local):
    if kind == FEAT_FACE:
        return face_n[tri, 0], face_n[tri, 1], face_n[tri, 2]
    if kind == FEAT_VERTEX:
        v = tris[tri, local]
        return vert_pn[v, 0], vert_pn[v, 1], vert_pn[v, 2]
    return edge_pn[tri, local, 0], edge_pn[tri, local, 1], edge_pn[tri, local, 2]


@njit(cache=True, nogil=True)
def brute_signed_distance(verts, tris, face_n, vert_pn, edge_pn, px, py, pz):
    """Exact signed distance by scanning every triangle.

    Ties on squared distance are broken toward the smaller triangle index so
    the result is independent of scan order. Returns
    (distance, cpx, cpy, cpz, triangle, kind, local).
    """
    best_d2 = np.inf
    best_tri = -1
    bx_ = by_ = bz_ = 0.0
    bkind = blocal = 0
    for f in range(tris.shape[0]):
        i0, i1, i2 = tris[f, 0], tris[f, 1], tris[f, 2]
        cpx, cpy, cpz, kind, local = closest_point_triangle(
            verts[i0, 0], verts[i0, 1], verts[i0, 2],
            verts[i1, 0], verts[i1, 1], verts[i1, 2],
            verts[i2, 0], verts[i2, 1], verts[i2, 2],
            px, py, pz,
        )
        dx, dy, dz = px - cpx, py - cpy, pz - cpz
        d2 = dx * dx + dy * dy + dz * dz
        if d2 < best_d2 or (d2 == best_d2 and f < best_tri):
            best_d2 = d2
            best_tri = f
            bx_, by_, bz_ = cpx, cpy, cpz
            bkind, blocal = kind, local
    nx, ny, nz = _feature_normal(face_n, vert_pn, edge_pn, tris, best_tri, bkind, blocal)
    dot = (px - bx_) * nx + (py - by_) * ny + (pz - bz_) * nz
    dist = math.sqrt(best_d2)
    if dot < 0.0:
        dist = -dist
    return dist, bx_, by_, bz_, best_tri, bkind, blocal


@njit(cache=True, nogil=True)
def brute_signed_many(verts, tris, face_n, vert_pn, edge_pn, q, out_d, out_cp, out_tri, out_feat):
    for i in range(q.shape[0]):
        d, cx, cy, cz, tri, kind, local = brute_signed_distance(
            verts, tris, face_n, vert_pn, edge_pn, q[i, 0], q[i, 1], q[i, 2]
        )
        out_d[i] = d
        out_cp[i, 0] = cx
        out_cp[i, 1] = cy
        out_cp[i, 2] = cz
        out_tri[i] = tri
        out_feat[i, 0] = kind
        out_feat[i, 1] = local


@njit(cache=True, nogil=True)
def _box_dist2(bmin, bmax, node, px, py, pz):
    d2 = 0.0
    v = px
    lo = bmin[node, 0]
    hi = bmax[node, 0]
    if v < lo:
        d2 += (lo - v) * (lo - v)
    elif v > hi:
        d2 += (v - hi) * (v - hi)
    v = py
    lo = bmin[node, 1]
    hi = bmax[node, 1]
    if v < lo:
        d2 += (lo - v) * (lo - v)
    elif v > hi:
        d2 += (v - hi) * (v - hi)
    v = pz
    lo = bmin[node, 2]
    hi = bmax[node, 2]
    if v < lo:
        d2 += (lo - v) * (lo - v)
    elif v > hi:
        d2 += (v - hi) * (v - hi)
    return d2


@njit(cache=True, nogil=True)
def build_tree(tri_min, tri_max, centroids, leaf_size, node_min, node_max,
               node_left, node_right, node_start, node_count, order):
    """Leaf-aligned median split over the longest centroid axis.

    Split positions are rounded to multiples of ``leaf_size`` so every split
    produces ceil(n/leaf_size) leaves total; the tree is then a full binary
    tree with exactly 2*ceil(T/leaf_size) - 1 nodes. Returns the node count.
    """
    n_tris = tri_min.shape[0]
    for i in range(n_tris):
        order[i] = i

    # Explicit stack of (node, start, end). Depth bounded by ~2*log2(n)+4.
    stack_cap = 2 * n_tris + 4
    stack = np.empty((stack_cap, 3), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n_tris
    top = 1
    next_node = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]

        lo0 = lo1 = lo2 = np.inf
        hi0 = hi1 = hi2 = -np.inf
        clo0 = clo1 = clo2 = np.inf
        chi0 = chi1 = chi2 = -np.inf
        for k in range(start, end):
            t = order[k]
            if tri_min[t, 0] < lo0:
                lo0 = tri_min[t, 0]
            if tri_min[t, 1] < lo1:
                lo1 = tri_min[t, 1]
            if tri_min[t, 2] < lo2:
                lo2 = tri_min[t, 2]
            if tri_max[t, 0] > hi0:
                hi0 = tri_max[t, 0]
            if tri_max[t, 1] > hi1:
                hi1 = tri_max[t, 1]
            if tri_max[t, 2] > hi2:
                hi2 = tri_max[t, 2]
            if centroids[t, 0] < clo0:
                clo0 = centroids[t, 0]
            if centroids[t, 1] < clo1:
                clo1 = centroids[t, 1]
            if centroids[t, 2] < clo2:
                clo2 = centroids[t, 2]
            if centroids[t, 0] > chi0:
                chi0 = centroids[t, 0]
            if centroids[t, 1] > chi1:
                chi1 = centroids[t, 1]
            if centroids[t, 2] > chi2:
                chi2 = centroids[t, 2]
        node_min[node, 0] = lo0
        node_min[node, 1] = lo1
        node_min[node, 2] = lo2
        node_max[node, 0] = hi0
        node_max[node, 1] = hi1
        node_max[node, 2] = hi2

        count = end - start
        if count <= leaf_size:
            node_left[node] = -1
            node_right[node] = -1
            node_start[node] = start
            node_count[node] = count
            continue

        e0, e1, e2 = chi0 - clo0, chi1 - clo1, chi2 - clo2
        axis = 0
        if e1 > e0:
            axis = 1
            e0 = e1
        if e2 > e0:
            axis = 2

        # Sort this span by centroid along the split axis (stable).
        keys = np.empty(count, np.float64)
        for k in range(count):
            keys[k] = centroids[order[start + k], axis]
        perm = np.argsort(keys, kind="mergesort")
        tmp = np.empty(count, np.int64)
        for k in range(count):
            tmp[k] = order[start + perm[k]]
        for k in range(count):
            order[start + k] = tmp[k]

        # Median rounded up to a leaf_size multiple keeps leaves full.
        half = count // 2
        mid = ((half + leaf_size - 1) // leaf_size) * leaf_size
        if mid >= count:
            mid = count - leaf_size
        if mid <= 0:
            mid = leaf_size

        left = next_node
        right = next_node + 1
        next_node += 2
        node_left[node] = left
        node_right[node] = right
        node_start[node] = start
        node_count[node] = count
        stack[top, 0] = left
        stack[top, 1] = start
        stack[top, 2] = start + mid
        top += 1
        stack[top, 0] = right
        stack[top, 1] = start + mid
        stack[top, 2] = end
        top += 1

    return next_node


@njit(cache=True, nogil=True)
def tree_signed_distance(verts, tris, face_n, vert_pn, edge_pn, node_min,
                         node_max, node_left, node_right, node_start,
                         node_count, order, px, py, pz):
    """Branch-and-bound traversal; identical result to the brute scan.

    Boxes are pruned only when strictly farther than the current best, and
    leaf updates use the same (distance, triangle-index) ordering as the
    brute-force scan, so ties resolve identically. Returns
    (distance, cpx, cpy, cpz, triangle, kind, local, nodes_visited).
    """
    best_d2 = np.inf
    best_tri = -1
    bx_ = by_ = bz_ = 0.0
    bkind = blocal = 0
    visited = 0

    stack = np.empty(128, np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_dist2(node_min, node_max, node, px, py, pz) > best_d2:
            continue
        visited += 1
        left = node_left[node]
        if left < 0:
            s = node_start[node]
            for k in range(s, s + node_count[node]):
                f = order[k]
                i0, i1, i2 = tris[f, 0], tris[f, 1], tris[f, 2]
                cpx, cpy, cpz, kind, local = closest_point_triangle(
                    verts[i0, 0], verts[i0, 1], verts[i0, 2],
                    verts[i1, 0], verts[i1, 1], verts[i1, 2],
                    verts[i2, 0], verts[i2, 1], verts[i2, 2],
                    px, py, pz,
                )
                dx, dy, dz = px - cpx, py - cpy, pz - cpz
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best_d2 or (d2 == best_d2 and f < best_tri):
                    best_d2 = d2
                    best_tri = f
                    bx_, by_, bz_ = cpx, cpy, cpz
                    bkind, blocal = kind, local
        else:
            right = node_right[node]
            dl = _box_dist2(node_min, node_max, left, px, py, pz)
            dr = _box_dist2(node_min, node_max, right, px, py, pz)
            # Push the farther child first so the nearer is explored next.
            if dl <= dr:
                if dr <= best_d2:
                    stack[top] = right
                    top += 1
                stack[top] = left
                top += 1
            else:
                if dl <= best_d2:
                    stack[top] = left
                    top += 1
                stack[top] = right
                top += 1

    nx, ny, nz = _feature_normal(face_n, vert_pn, edge_pn, tris, best_tri, bkind, blocal)
    dot = (px - bx_) * nx + (py - by_) * ny + (pz - bz_) * nz
    dist = math.sqrt(best_d2)
    if dot < 0.0:
        dist = -dist
    return dist, bx_, by_, bz_, best_tri, bkind, blocal, visited


@njit(cache=True, nogil=True)
def tree_signed_many(verts, tris, face_n, vert_pn, edge_pn, node_min, node_max,
                     node_left, node_right, node_start, node_count, order, q,
                     out_d, out_cp, out_tri, out_feat):
    for i in range(q.shape[0]):
        d, cx, cy, cz, tri, kind, local, _ = tree_signed_distance(
            verts, tris, face_n, vert_pn, edge_pn, node_min, node_max,
            node_left, node_right, node_start, node_count, order,
            q[i, 0], q[i, 1], q[i, 2],
        )
        out_d[i] = d
        out_cp[i, 0] = cx
        out_cp[i, 1] = cy
        out_cp[i, 2] = cz
        out_tri[i] = tri
        out_feat[i, 0] = kind
        out_feat[i, 1] = local


@njit(cache=True, nogil=True)
def ray_triangle(ox, oy, oz, dx, dy, dz, ax, ay, az, bx, by, bz, cx, cy, cz, eps_bary):
    """Moller-Trumbore ray/triangle test.

    Returns (hit, t, u, v); hits require t >= 0 and barycentrics within
    [-eps_bary, 1 + eps_bary]. Rays parallel to the plane miss.
    """
    e1x, e1y, e1z = bx - ax, by - ay, bz - az
    e2x, e2y, e2z = cx - ax, cy - ay, cz - az
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return False, 0.0, 0.0, 0.0
    inv = 1.0 / det
    tx, ty, tz = ox - ax, oy - ay, oz - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -eps_bary or u > 1.0 + eps_bary:
        return False, 0.0, 0.0, 0.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -eps_bary or u + v > 1.0 + eps_bary:
        return False, 0.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t < 0.0:
        return False, 0.0, 0.0, 0.0
    return True, t, u, v


@njit(cache=True, nogil=True)
def scan_ray_hits(verts, tris, ox, oy, oz, dx, dy, dz, start, end, eps_bary):
    """Smallest-t ray hit over triangles [start, end); ties take the lower
    triangle index. Returns (t, triangle) with triangle == -1 on miss."""
    best_t = np.inf
    best_tri = -1
    for f in range(start, end):
        i0, i1, i2 = tris[f, 0], tris[f, 1], tris[f, 2]
        hit, t, _, _ = ray_triangle(
            ox, oy, oz, dx, dy, dz,
            verts[i0, 0], verts[i0, 1], verts[i0, 2],
            verts[i1, 0], verts[i1, 1], verts[i1, 2],
            verts[i2, 0], verts[i2, 1], verts[i2, 2],
            eps_bary,
        )
        if hit and (t < best_t or (t == best_t and f < best_tri)):
            best_t = t
            best_tri = f
    return best_t, best_tri


@njit(cache=True, nogil=True)
def scan_nearest_triangle(verts, tris, px, py, pz, start, end):
    """Nearest triangle by unsigned distance over [start, end)."""
    best_d2 = np.inf
    best_tri = -1
    for f in range(start, end):
        i0, i1, i2 = tris[f, 0], tris[f, 1], tris[f, 2]
        cpx, cpy, cpz, _, _ = closest_point_triangle(
            verts[i0, 0], verts[i0, 1], verts[i0, 2],
            verts[i1, 0], verts[i1, 1], verts[i1, 2],
            verts[i2, 0], verts[i2, 1], verts[i2, 2],
            px, py, pz,
        )
        ddx, ddy, ddz = px - cpx, py - cpy, pz - cpz
        d2 = ddx * ddx + ddy * ddy + ddz * ddz
        if d2 < best_d2 or (d2 == best_d2 and f < best_tri):
            best_d2 = d2
            best_tri = f
    return best_d2, best_tri
