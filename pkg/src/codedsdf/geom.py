"""Mesh types, mesh file I/O, and core geometric kernels.

Surface meshes are OBJ files; tetrahedral meshes are TetGen-style
.node/.ele text pairs. All mesh types are immutable after construction;
deformed poses are represented as fresh vertex arrays paired with the rest
mesh via :meth:`TriMesh.with_vertices` / :meth:`TetMesh.with_vertices`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateGeometryError, FormatError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _validate_triangles(vertices: np.ndarray, triangles: np.ndarray, label: str) -> None:
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise FormatError(f"{label}: triangle index out of range")
    a = vertices[triangles[:, 0]]
    n = np.cross(vertices[triangles[:, 1]] - a, vertices[triangles[:, 2]] - a)
    areas = 0.5 * np.linalg.norm(n, axis=1)
    scale = float(vertices.max() - vertices.min()) if len(vertices) else 1.0
    bad = np.nonzero(areas <= 1e-14 * max(scale, 1e-30) ** 2)[0]
    if bad.size:
        raise DegenerateGeometryError(f"{label}: zero-area triangle at index {bad[0]}")


def _check_orientation(triangles: np.ndarray, label: str) -> None:
    """Each directed interior edge must appear exactly once."""
    edges = set()
    for f, (a, b, c) in enumerate(triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            if (u, v) in edges:
                raise DegenerateGeometryError(
                    f"{label}: inconsistent orientation, directed edge "
                    f"({u},{v}) repeated at triangle {f}"
                )
            edges.add((int(u), int(v)))


@dataclass(frozen=True)
class TriMesh:
    """Triangle surface mesh: vertices (V,3) float64, triangles (F,3) int64,
    counter-clockwise outward orientation."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(np.asarray(self.vertices, np.float64)))
        object.__setattr__(self, "triangles", _frozen(np.asarray(self.triangles, np.int64)))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same connectivity over a deformed vertex array."""
        v = np.asarray(vertices, np.float64)
        if v.shape != self.vertices.shape:
            raise ValueError(f"vertex array shape {v.shape} != {self.vertices.shape}")
        return TriMesh(v, self.triangles)

    def mean_edge_length(self) -> float:
        t = self.triangles
        v = self.vertices
        e = np.concatenate([
            v[t[:, 1]] - v[t[:, 0]],
            v[t[:, 2]] - v[t[:, 1]],
            v[t[:, 0]] - v[t[:, 2]],
        ])
        return float(np.linalg.norm(e, axis=1).mean())


@dataclass(frozen=True)
class TetMesh:
    """Tetrahedral volume mesh: vertices (V,3) float64, tets (T,4) int64 with
    positive signed volume."""

    vertices: np.ndarray
    tets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(np.asarray(self.vertices, np.float64)))
        object.__setattr__(self, "tets", _frozen(np.asarray(self.tets, np.int64)))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_tets(self) -> int:
        return len(self.tets)

    def volumes(self, vertices: np.ndarray | None = None) -> np.ndarray:
        v = self.vertices if vertices is None else np.asarray(vertices, np.float64)
        a = v[self.tets[:, 0]]
        return (
            np.einsum(
                "ij,ij->i",
                np.cross(v[self.tets[:, 1]] - a, v[self.tets[:, 2]] - a),
                v[self.tets[:, 3]] - a,
            )
            / 6.0
        )

    def with_vertices(self, vertices: np.ndarray) -> "TetMesh":
        v = np.asarray(vertices, np.float64)
        if v.shape != self.vertices.shape:
            raise ValueError(f"vertex array shape {v.shape} != {self.vertices.shape}")
        return TetMesh(v, self.tets)


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, np.float64)
        t = np.asarray(self.translation, np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be (3,3) and translation (3,)")
        if abs(np.linalg.det(r) - 1.0) > 1e-9 or np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, np.float64)
        return p @ self.rotation.T + self.translation

    def apply_rotation(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, np.float64) @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, np.float64)
        d = np.asarray(self.direction, np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", _frozen(o))
        object.__setattr__(self, "direction", _frozen(d))


@dataclass(frozen=True)
class RayHit:
    t: float
    u: float
    v: float


@dataclass(frozen=True)
class Pseudonormals:
    """Angle-weighted pseudonormals for a watertight oriented TriMesh.

    ``face`` is (F,3) unit normals; ``vertex`` is (V,3) angle-weighted unit
    normals; ``edge`` is (F,3,3) where edge[f, e] is the unit mean of the two
    face normals incident to local edge e of triangle f (e: 0=v0v1, 1=v1v2,
    2=v2v0). Each shared edge stores the same value in both incident faces.
    """

    face: np.ndarray
    vertex: np.ndarray
    edge: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# File I/O


def load_mesh(path, kind: str):
    """Load and validate a mesh file.

    kind="surface-obj" parses an OBJ file into a TriMesh; kind="tet-node-ele"
    parses a TetGen .node/.ele pair (pass either file, the sibling extension
    is inferred) into a TetMesh with all tets reoriented to positive volume.
    """
    if kind == "surface-obj":
        return _load_obj(path)
    if kind == "tet-node-ele":
        return _load_node_ele(path)
    raise ValueError(f"unknown mesh kind {kind!r}")


def _load_obj(path) -> TriMesh:
    if not os.path.exists(path):
        raise FormatError(f"{path}: no such file")
    verts: list[list[float]] = []
    tris: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise FormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError as e:
                    raise FormatError(f"{path}:{lineno}: bad vertex coordinate ({e})") from None
            elif tag == "f":
                if len(parts) != 4:
                    raise FormatError(
                        f"{path}:{lineno}: only triangle faces are supported "
                        f"({len(parts) - 1} indices given)"
                    )
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise FormatError(f"{path}:{lineno}: bad face index {tok!r}") from None
                    if i < 1:
                        raise FormatError(
                            f"{path}:{lineno}: face index {i} (OBJ indices are 1-based)"
                        )
                    idx.append(i - 1)
                tris.append(idx)
            # other records (vn, vt, o, g, s, mtllib, usemtl) are ignored
    if not verts or not tris:
        raise FormatError(f"{path}: no vertices or no faces found")
    v = np.array(verts, np.float64)
    t = np.array(tris, np.int64)
    if t.max() >= len(v):
        f = int(np.nonzero((t >= len(v)).any(axis=1))[0][0])
        raise FormatError(f"{path}: face {f} references vertex {t.max() + 1} of {len(v)}")
    _validate_triangles(v, t, str(path))
    mesh = TriMesh(v, t)
    _check_orientation(t, str(path))
    return mesh


def _split_node_ele(path) -> tuple[str, str]:
    base, ext = os.path.splitext(str(path))
    if ext == ".node":
        return str(path), base + ".ele"
    if ext == ".ele":
        return base + ".node", str(path)
    raise FormatError(f"{path}: expected a .node or .ele file")


def _data_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if body:
                yield lineno, body.split()


def _load_node_ele(path) -> TetMesh:
    node_path, ele_path = _split_node_ele(path)
    for p in (node_path, ele_path):
        if not os.path.exists(p):
            raise FormatError(f"{p}: no such file")

    rows = list(_data_lines(node_path))
    if not rows:
        raise FormatError(f"{node_path}: empty file")
    lineno, header = rows[0]
    try:
        n_pts, dim = int(header[0]), int(header[1])
    except (ValueError, IndexError):
        raise FormatError(f"{node_path}:{lineno}: bad header") from None
    if dim != 3:
        raise FormatError(f"{node_path}:{lineno}: dimension must be 3, got {dim}")
    if len(rows) - 1 != n_pts:
        raise FormatError(f"{node_path}: header promises {n_pts} nodes, found {len(rows) - 1}")
    ids = np.empty(n_pts, np.int64)
    verts = np.empty((n_pts, 3), np.float64)
    for k, (lineno, parts) in enumerate(rows[1:]):
        try:
            ids[k] = int(parts[0])
            verts[k] = [float(x) for x in parts[1:4]]
        except (ValueError, IndexError):
            raise FormatError(f"{node_path}:{lineno}: bad node row") from None
    base = int(ids[0])
    if base not in (0, 1) or not np.array_equal(ids, np.arange(base, base + n_pts)):
        raise FormatError(f"{node_path}: node indices must be consecutive from 0 or 1")

    rows = list(_data_lines(ele_path))
    if not rows:
        raise FormatError(f"{ele_path}: empty file")
    lineno, header = rows[0]
    try:
        n_tets, per = int(header[0]), int(header[1])
    except (ValueError, IndexError):
        raise FormatError(f"{ele_path}:{lineno}: bad header") from None
    if per != 4:
        raise FormatError(f"{ele_path}:{lineno}: expected 4 nodes per tet, got {per}")
    if len(rows) - 1 != n_tets:
        raise FormatError(f"{ele_path}: header promises {n_tets} tets, found {len(rows) - 1}")
    tets = np.empty((n_tets, 4), np.int64)
    for k, (lineno, parts) in enumerate(rows[1:]):
        try:
            tets[k] = [int(x) for x in parts[1:5]]
        except (ValueError, IndexError):
            raise FormatError(f"{ele_path}:{lineno}: bad tet row") from None
    tets -= base  # .ele indices share the .node file's base
    if tets.min() < 0 or tets.max() >= n_pts:
        raise FormatError(f"{ele_path}: tet vertex index out of range")

    mesh = TetMesh(verts, tets)
    vols = mesh.volumes()
    scale = float(verts.max() - verts.min()) if n_pts else 1.0
    zero = np.nonzero(np.abs(vols) <= 1e-14 * max(scale, 1e-30) ** 3)[0]
    if zero.size:
        raise DegenerateGeometryError(f"{ele_path}: zero-volume tet at index {zero[0]}")
    flip = vols < 0
    if flip.any():
        t = tets.copy()
        t[flip, 0], t[flip, 1] = tets[flip, 1], tets[flip, 0]
        mesh = TetMesh(verts, t)
    return mesh


def save_obj(path, mesh: TriMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def save_node_ele(path_base, mesh: TetMesh) -> None:
    """Write ``<base>.node`` and ``<base>.ele`` (1-based indices)."""
    with open(str(path_base) + ".node", "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.num_vertices} 3 0 0\n")
        for i, v in enumerate(mesh.vertices, start=1):
            fh.write(f"{i} {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
    with open(str(path_base) + ".ele", "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.num_tets} 4 0\n")
        for i, t in enumerate(mesh.tets, start=1):
            fh.write(f"{i} {t[0] + 1} {t[1] + 1} {t[2] + 1} {t[3] + 1}\n")


# ---------------------------------------------------------------------------
# Operations

# Outward-oriented faces of a positive-volume tet (v0,v1,v2,v3).
_TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


def surface_with_map(mesh: TetMesh) -> tuple[TriMesh, np.ndarray]:
    """Boundary surface plus the map from surface to tet vertex indices."""
    count: dict[tuple, int] = {}
    oriented: dict[tuple, tuple] = {}
    for tet in mesh.tets:
        for fa, fb, fc in _TET_FACES:
            face = (int(tet[fa]), int(tet[fb]), int(tet[fc]))
            key = tuple(sorted(face))
            count[key] = count.get(key, 0) + 1
            oriented[key] = face
    boundary = [oriented[k] for k in sorted(count) if count[k] == 1]
    if not boundary:
        raise DegenerateGeometryError("tet mesh has no boundary faces")
    used = sorted({v for face in boundary for v in face})
    remap = {v: i for i, v in enumerate(used)}
    tris = np.array([[remap[a], remap[b], remap[c]] for a, b, c in boundary], np.int64)
    vmap = np.array(used, np.int64)
    surf = TriMesh(mesh.vertices[vmap], tris)
    _check_orientation(tris, "surface_of")
    return surf, vmap


def surface_of(mesh: TetMesh) -> TriMesh:
    """Outward-oriented boundary surface of a tet mesh."""
    return surface_with_map(mesh)[0]


def ray_triangle_intersect(ray: Ray, a, b, c, eps_bary: float = 1e-9) -> RayHit | None:
    """Ray/triangle intersection; None on miss."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    c = np.asarray(c, np.float64)
    hit, t, u, v = _kernels.ray_triangle(
        ray.origin[0], ray.origin[1], ray.origin[2],
        ray.direction[0], ray.direction[1], ray.direction[2],
        a[0], a[1], a[2], b[0], b[1], b[2], c[0], c[1], c[2], eps_bary,
    )
    return RayHit(t, u, v) if hit else None


def pseudonormals(mesh: TriMesh) -> Pseudonormals:
    """Angle-weighted pseudonormals; raises if the mesh is not watertight."""
    v, t = mesh.vertices, mesh.triangles
    e0 = v[t[:, 1]] - v[t[:, 0]]
    e1 = v[t[:, 2]] - v[t[:, 1]]
    e2 = v[t[:, 0]] - v[t[:, 2]]
    fn = np.cross(e0, -e2)
    norms = np.linalg.norm(fn, axis=1, keepdims=True)
    if (norms <= 0).any():
        f = int(np.nonzero(norms[:, 0] <= 0)[0][0])
        raise DegenerateGeometryError(f"degenerate triangle {f} in pseudonormals")
    fn = fn / norms

    def corner_angle(u, w):
        un = u / np.linalg.norm(u, axis=1, keepdims=True)
        wn = w / np.linalg.norm(w, axis=1, keepdims=True)
        return np.arccos(np.clip(np.einsum("ij,ij->i", un, wn), -1.0, 1.0))

    ang = np.stack(
        [corner_angle(e0, -e2), corner_angle(e1, -e0), corner_angle(e2, -e1)], axis=1
    )
    vert_pn = np.zeros_like(v)
    for corner in range(3):
        np.add.at(vert_pn, t[:, corner], ang[:, corner, None] * fn)
    vn = np.linalg.norm(vert_pn, axis=1, keepdims=True)
    if (vn == 0).any():
        raise DegenerateGeometryError("isolated or degenerate vertex in pseudonormals")
    vert_pn /= vn

    # Pair each directed edge with its opposite to find the adjacent face.
    owner: dict[tuple, tuple] = {}
    for f, (a, b, c) in enumerate(t):
        for e, (p, q) in enumerate(((a, b), (b, c), (c, a))):
            owner[(int(p), int(q))] = (f, e)
    edge_pn = np.zeros((len(t), 3, 3))
    for (p, q), (f, e) in owner.items():
        mate = owner.get((q, p))
        if mate is None:
            raise DegenerateGeometryError(
                f"mesh is not watertight: boundary edge ({p},{q}) on triangle {f}"
            )
        g, _ = mate
        n = fn[f] + fn[g]
        edge_pn[f, e] = n / np.linalg.norm(n)
    return Pseudonormals(_frozen(fn), _frozen(vert_pn), _frozen(edge_pn))


def kabsch_align(x: np.ndarray, ref: np.ndarray) -> RigidTransform:
    """Least-squares proper rigid transform mapping x onto a reference set.

    Returns the (rotation, translation) minimizing sum ||R x_j + t - ref_j||^2.
    Reflections are corrected to proper rotations via the determinant sign.
    """
    x = np.asarray(x, np.float64)
    ref = np.asarray(ref, np.float64)
    if x.shape != ref.shape or x.ndim != 2 or x.shape[1] != 3 or len(x) < 3:
        raise ValueError("point sets must both be (n>=3, 3)")
    xc = x.mean(axis=0)
    rc = ref.mean(axis=0)
    h = (x - xc).T @ (ref - rc)  # cross-covariance, 3x3
    u, s, vt = np.linalg.svd(h)
    if s[1] <= max(1e-12 * s[0], 1e-300):
        raise DegenerateGeometryError(
            "alignment is underdetermined: cross-covariance rank < 2"
        )
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, rc - rot @ xc)
