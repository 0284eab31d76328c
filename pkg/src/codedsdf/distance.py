"""Ground-truth signed distance to a triangle mesh.

``brute_force_signed_distance`` scans every triangle and is the reference
oracle; ``AabbTree`` answers identically via branch-and-bound pruning and is
also the rebuild-per-pose baseline used by the benchmark. Signs come from
angle-weighted pseudonormals of the closest feature (negative inside).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateGeometryError
from .geom import Pseudonormals, TriMesh, pseudonormals

FEATURE_NAMES = {_kernels.FEAT_FACE: "face", _kernels.FEAT_EDGE: "edge", _kernels.FEAT_VERTEX: "vertex"}


@dataclass(frozen=True)
class SignedDistanceResult:
    """distance is negative inside; feature describes the closest element of
    the winning triangle ('face' / 'edge' / 'vertex' with its local index)."""

    distance: float
    closest_point: np.ndarray
    triangle: int
    feature: str
    feature_local: int


def _result(d, cp, tri, kind, local) -> SignedDistanceResult:
    return SignedDistanceResult(float(d), np.asarray(cp), int(tri), FEATURE_NAMES[int(kind)], int(local))


def brute_force_signed_distance(mesh: TriMesh, pn: Pseudonormals, q) -> SignedDistanceResult:
    """Exact signed distance by scanning all triangles of a watertight mesh."""
    q = np.asarray(q, np.float64)
    d, cx, cy, cz, tri, kind, local = _kernels.brute_signed_distance(
        mesh.vertices, mesh.triangles, pn.face, pn.vertex, pn.edge, q[0], q[1], q[2]
    )
    return _result(d, np.array([cx, cy, cz]), tri, kind, local)


def brute_force_signed_many(mesh: TriMesh, pn: Pseudonormals, q: np.ndarray):
    """Batch form: returns (distances, closest_points, triangles, features)."""
    q = np.ascontiguousarray(q, np.float64)
    n = len(q)
    out_d = np.empty(n, np.float64)
    out_cp = np.empty((n, 3), np.float64)
    out_tri = np.empty(n, np.int64)
    out_feat = np.empty((n, 2), np.int64)
    _kernels.brute_signed_many(
        mesh.vertices, mesh.triangles, pn.face, pn.vertex, pn.edge, q,
        out_d, out_cp, out_tri, out_feat,
    )
    return out_d, out_cp, out_tri, out_feat


@dataclass(frozen=True)
class AabbTree:
    """Binary AABB tree built over one mesh pose, with the pseudonormals
    needed to sign query results. Immutable; safe for concurrent queries."""

    mesh: TriMesh
    pn: Pseudonormals
    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    order: np.ndarray
    leaf_size: int

    @property
    def num_nodes(self) -> int:
        return len(self.node_left)

    def depth(self) -> int:
        depths = {0: 1}
        best = 1
        for node in range(self.num_nodes):
            d = depths[node]
            best = max(best, d)
            left = int(self.node_left[node])
            if left >= 0:
                depths[left] = d + 1
                depths[int(self.node_right[node])] = d + 1
        return best

    def query(self, q) -> SignedDistanceResult:
        return tree_signed_distance(self, q)

    def query_with_stats(self, q) -> tuple[SignedDistanceResult, int]:
        """Query plus the number of tree nodes visited (pruning diagnostics)."""
        q = np.asarray(q, np.float64)
        d, cx, cy, cz, tri, kind, local, visited = _kernels.tree_signed_distance(
            self.mesh.vertices, self.mesh.triangles, self.pn.face, self.pn.vertex,
            self.pn.edge, self.node_min, self.node_max, self.node_left,
            self.node_right, self.node_start, self.node_count, self.order,
            q[0], q[1], q[2],
        )
        return _result(d, np.array([cx, cy, cz]), tri, kind, local), int(visited)


def build_aabb_tree(mesh: TriMesh, leaf_size: int = 4) -> AabbTree:
    """Build the tree (leaf-aligned median split over the longest axis).

    Includes pseudonormal computation: a rebuild-per-pose baseline must
    refresh normals for sign tests, so their cost belongs to the build.
    """
    if mesh.num_triangles == 0:
        raise DegenerateGeometryError("cannot build a tree over an empty mesh")
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    pn = pseudonormals(mesh)
    v, t = mesh.vertices, mesh.triangles
    corners = v[t]  # (F,3,3)
    tri_min = np.ascontiguousarray(corners.min(axis=1))
    tri_max = np.ascontiguousarray(corners.max(axis=1))
    centroids = np.ascontiguousarray(corners.mean(axis=1))

    n_tris = mesh.num_triangles
    n_nodes = 2 * math.ceil(n_tris / leaf_size) - 1
    node_min = np.empty((n_nodes, 3), np.float64)
    node_max = np.empty((n_nodes, 3), np.float64)
    node_left = np.empty(n_nodes, np.int64)
    node_right = np.empty(n_nodes, np.int64)
    node_start = np.empty(n_nodes, np.int64)
    node_count = np.empty(n_nodes, np.int64)
    order = np.empty(n_tris, np.int64)
    used = _kernels.build_tree(
        tri_min, tri_max, centroids, leaf_size, node_min, node_max,
        node_left, node_right, node_start, node_count, order,
    )
    assert used == n_nodes, (used, n_nodes)
    return AabbTree(mesh, pn, node_min, node_max, node_left, node_right,
                    node_start, node_count, order, leaf_size)


def tree_signed_distance(tree: AabbTree, q) -> SignedDistanceResult:
    """Signed distance via the tree; result identical to the brute scan."""
    q = np.asarray(q, np.float64)
    d, cx, cy, cz, tri, kind, local, _ = _kernels.tree_signed_distance(
        tree.mesh.vertices, tree.mesh.triangles, tree.pn.face, tree.pn.vertex,
        tree.pn.edge, tree.node_min, tree.node_max, tree.node_left,
        tree.node_right, tree.node_start, tree.node_count, tree.order,
        q[0], q[1], q[2],
    )
    return _result(d, np.array([cx, cy, cz]), tri, kind, local)


def tree_signed_many(tree: AabbTree, q: np.ndarray):
    """Batch form of tree_signed_distance (single kernel call over all
    points; used by dataset generation and the benchmark's query loop)."""
    q = np.ascontiguousarray(q, np.float64)
    n = len(q)
    out_d = np.empty(n, np.float64)
    out_cp = np.empty((n, 3), np.float64)
    out_tri = np.empty(n, np.int64)
    out_feat = np.empty((n, 2), np.int64)
    _kernels.tree_signed_many(
        tree.mesh.vertices, tree.mesh.triangles, tree.pn.face, tree.pn.vertex,
        tree.pn.edge, tree.node_min, tree.node_max, tree.node_left,
        tree.node_right, tree.node_start, tree.node_count, tree.order, q,
        out_d, out_cp, out_tri, out_feat,
    )
    return out_d, out_cp, out_tri, out_feat
