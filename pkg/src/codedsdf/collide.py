"""Runtime collision queries against a trained coded-SDF network.

A collider bundles the network, its training normalization, the pose encoder
(modal basis for volumetric objects, joint-angle map for skinned ones), and
the surface mesh used to resolve triangle IDs. Queries batch all points into
one input matrix (the code repeated per column), evaluate distances, obtain
normals from the network's input gradient, and optionally resolve the
colliding triangle by a linear ray scan over the surface.

Query evaluation runs in float64 (parameters are cast up once): encoder
round-off then stays far below the rigid-invariance guarantees. The
benchmark path (`distances_*`) evaluates in the network's native precision.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels, net as net_mod, parallel
from .dataset import Normalization
from .geom import RigidTransform, TetMesh, TriMesh, surface_with_map
from .modes import ModalBasis, encode_fem
from .skin import AngleCodeMap, Skeleton, encode_skin, world_to_root

_SCAN_CHUNK = 2048  # triangles per parallel scan chunk (fixed, not per-worker)
_DEGENERATE_GRAD = 1e-8
_CODE_WARN_LIMIT = 1.5


@dataclass(frozen=True)
class CollisionResult:
    """World-space query result. ``colliding`` means distance < 0; a None
    normal comes with ``degenerate_normal`` set; ``triangle`` is filled only
    when requested and resolved."""

    distance: float
    normal: np.ndarray | None
    triangle: int | None
    colliding: bool
    degenerate_normal: bool = False
    no_triangle_hit: bool = False


def resolve_triangle(point, normal, surface: TriMesh, eps_bary: float = 1e-9,
                     fallback_nearest: bool = False) -> int:
    """Linear scan: smallest-t hit of the ray (point, normal) against all
    surface triangles; ties broken toward the lower triangle index.

    The scan runs over fixed triangle chunks merged in order, so the result
    is identical for any worker count. Returns -1 on miss unless
    ``fallback_nearest`` asks for the nearest triangle by distance instead.
    """
    point = np.asarray(point, np.float64)
    normal = np.asarray(normal, np.float64)
    v, t = surface.vertices, surface.triangles

    def scan(start, end):
        return _kernels.scan_ray_hits(v, t, point[0], point[1], point[2],
                                      normal[0], normal[1], normal[2],
                                      start, end, eps_bary)

    best_t, best_tri = np.inf, -1
    ranges = parallel.chunk_ranges(surface.num_triangles, _SCAN_CHUNK)
    for part_t, part_tri in parallel.run_chunks(scan, ranges):
        if part_tri >= 0 and (part_t < best_t or (part_t == best_t and part_tri < best_tri)):
            best_t, best_tri = part_t, part_tri
    if best_tri < 0 and fallback_nearest:
        best_d2 = np.inf
        for part_d2, part_tri in parallel.run_chunks(
            lambda s, e: _kernels.scan_nearest_triangle(v, t, point[0], point[1], point[2], s, e),
            ranges,
        ):
            if part_d2 < best_d2 or (part_d2 == best_d2 and part_tri < best_tri):
                best_d2, best_tri = part_d2, part_tri
    return int(best_tri)


class NeuralCollider:
    """Immutable after construction; queries are safe to run concurrently."""

    def __init__(self, network: net_mod.Mlp, normalization: Normalization, *,
                 basis: ModalBasis | None = None, rest: TetMesh | None = None,
                 code_map: AngleCodeMap | None = None, skeleton: Skeleton | None = None,
                 surface: TriMesh | None = None):
        self.net = network
        self.net64 = network.astype(np.float64)
        self.normalization = normalization
        self.basis = basis
        self.rest = rest
        self.code_map = code_map
        self.skeleton = skeleton
        if basis is not None:
            if rest is None:
                raise ValueError("FEM collider needs the rest tet mesh")
            if basis.num_vertices != rest.num_vertices:
                raise ValueError("modal basis does not match the rest mesh")
            if network.code_dim != basis.num_modes:
                raise ValueError(
                    f"network expects code dim {network.code_dim}, basis has {basis.num_modes}"
                )
            self.surface, self.surface_map = surface_with_map(rest)
            self.mode = "fem"
        elif code_map is not None:
            if skeleton is None or surface is None:
                raise ValueError("skin collider needs a skeleton and surface mesh")
            if network.code_dim != code_map.code_dim:
                raise ValueError(
                    f"network expects code dim {network.code_dim}, code map has {code_map.code_dim}"
                )
            self.surface = surface
            self.surface_map = None
            self.mode = "skin"
        else:
            raise ValueError("need either a modal basis or an angle code map")

    # -- shared internals ---------------------------------------------------

    def _rows(self, points_frame: np.ndarray, zn: np.ndarray, dtype) -> np.ndarray:
        qn = self.normalization.normalize_points(points_frame)
        rows = np.empty((len(qn), 3 + len(zn)), dtype)
        rows[:, :3] = qn
        rows[:, 3:] = zn
        return rows

    def _check_code(self, zn: np.ndarray) -> None:
        if (np.abs(zn) > _CODE_WARN_LIMIT).any():
            worst = float(np.abs(zn).max())
            warnings.warn(
                f"pose code leaves the training range (|z| up to {worst:.2f}); "
                "the network is extrapolating",
                stacklevel=3,
            )

    def _evaluate(self, rows: np.ndarray, with_grad: bool):
        """Distances (normalized) and optionally input gradients, chunked to
        bound memory; chunking cannot change per-row results."""
        n = len(rows)
        d = np.empty(n, np.float64)
        grad = np.empty((n, 3), np.float64) if with_grad else None
        for s in range(0, n, net_mod._EVAL_CHUNK):
            part = np.ascontiguousarray(rows[s : s + net_mod._EVAL_CHUNK])
            if with_grad:
                pred, acts = net_mod._forward_rows(self.net64, part, keep=True)
                _, _, din = net_mod._backward_rows(self.net64, acts, np.ones(len(part)))
                grad[s : s + len(part)] = din[:, :3]
            else:
                pred = net_mod._forward_rows(self.net64, part, keep=False)[0]
            d[s : s + len(part)] = pred
        return d, grad

    def _package(self, d_norm, grad, rot_back, aligned_points, aligned_surface,
                 want_triangles, fallback_nearest):
        dists = self.normalization.denormalize_distances(d_norm)
        results = []
        for i in range(len(dists)):
            g = grad[i]
            gn = float(np.linalg.norm(g))
            if gn < _DEGENERATE_GRAD:
                normal_frame = None
                normal_world = None
            else:
                normal_frame = g / gn
                normal_world = rot_back @ normal_frame
            tri = None
            no_hit = False
            if want_triangles:
                if normal_frame is None:
                    tri, no_hit = None, True
                else:
                    hit = resolve_triangle(aligned_points[i], normal_frame,
                                           aligned_surface, fallback_nearest=fallback_nearest)
                    tri, no_hit = (hit, False) if hit >= 0 else (None, True)
            results.append(CollisionResult(
                distance=float(dists[i]),
                normal=normal_world,
                triangle=tri,
                colliding=bool(dists[i] < 0.0),
                degenerate_normal=normal_frame is None,
                no_triangle_hit=no_hit,
            ))
        return results

    # -- FEM ----------------------------------------------------------------

    def _encode_fem(self, x: np.ndarray):
        z, align = encode_fem(x, self.rest.vertices, self.basis)
        zn = self.normalization.normalize_codes(z)
        return zn, align

    def query_fem(self, x: np.ndarray, points: np.ndarray, want_triangles: bool = False,
                  fallback_nearest: bool = False) -> list[CollisionResult]:
        """Full collision query for a deformed volumetric pose.

        ``x`` are the current full-space vertices, ``points`` world-space
        queries. Points are carried into the rigid-aligned training frame,
        batch-evaluated, and mapped back: distances in world units, unit
        normals in world space, plus triangle IDs (scan over the deformed
        surface in the aligned frame) when requested.
        """
        if self.mode != "fem":
            raise ValueError("collider is not in FEM mode")
        points = np.atleast_2d(np.asarray(points, np.float64))
        zn, align = self._encode_fem(x)
        self._check_code(zn)
        aligned = align.apply(points)
        d_norm, grad = self._evaluate(self._rows(aligned, zn, np.float64), with_grad=True)
        aligned_surface = None
        if want_triangles:
            aligned_surface = self.surface.with_vertices(align.apply(x)[self.surface_map])
        return self._package(d_norm, grad, align.rotation.T, aligned, aligned_surface,
                             want_triangles, fallback_nearest)

    def distances_fem(self, x: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Benchmark path: encode + batched forward only, native precision."""
        if self.mode != "fem":
            raise ValueError("collider is not in FEM mode")
        zn, align = self._encode_fem(x)
        rows = self._rows(align.apply(points), zn, self.net.dtype)
        d_norm = net_mod._forward_rows(self.net, rows, keep=False)[0]
        return np.asarray(self.normalization.denormalize_distances(d_norm))

    # -- Skinning -----------------------------------------------------------

    def query_skin(self, angles: np.ndarray, root_world: RigidTransform,
                   points: np.ndarray) -> list[CollisionResult]:
        """Collision query against the skinned character.

        Points go from world into the root joint's frame, the joint-angle
        code conditions the batch, and normals rotate back to world. No
        triangle resolution on this path.
        """
        if self.mode != "skin":
            raise ValueError("collider is not in skin mode")
        points = np.atleast_2d(np.asarray(points, np.float64))
        zn = self.normalization.normalize_codes(encode_skin(angles, self.code_map))
        self._check_code(zn)
        local = world_to_root(points, root_world)
        d_norm, grad = self._evaluate(self._rows(local, zn, np.float64), with_grad=True)
        return self._package(d_norm, grad, root_world.rotation, local, None, False, False)

    def distances_skin(self, angles: np.ndarray, root_world: RigidTransform,
                       points: np.ndarray) -> np.ndarray:
        """Benchmark path: encode + batched forward only, native precision."""
        if self.mode != "skin":
            raise ValueError("collider is not in skin mode")
        zn = self.normalization.normalize_codes(encode_skin(angles, self.code_map))
        rows = self._rows(world_to_root(points, root_world), zn, self.net.dtype)
        d_norm = net_mod._forward_rows(self.net, rows, keep=False)[0]
        return np.asarray(self.normalization.denormalize_distances(d_norm))

    # -- Normals helper used by accuracy evaluation --------------------------

    def distances_and_normals_fem(self, x, points):
        res = self.query_fem(x, points)
        return _unpack_results(res)

    def distances_and_normals_skin(self, angles, root_world, points):
        res = self.query_skin(angles, root_world, points)
        return _unpack_results(res)


def _unpack_results(results: list[CollisionResult]):
    d = np.array([r.distance for r in results])
    normals = np.full((len(results), 3), np.nan)
    for i, r in enumerate(results):
        if r.normal is not None:
            normals[i] = r.normal
    return d, normals
