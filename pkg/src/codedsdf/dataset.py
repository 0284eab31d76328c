"""Training data: pose generation, SDF sampling, normalization, persistence.

Samples are (query point, code, signed distance) triples. Query points and
distances share one uniform world-to-[-1,1]^3 scaling so the stored field
keeps a unit gradient in normalized space; codes are normalized element-wise
(FEM) or carry the 1/pi convention from the skinning encoder.

Generation is a pure function of (geometry, basis/clips, config, seed): each
pose draws from its own seed-derived RNG stream, so results do not depend on
how poses are distributed over worker threads.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import parallel
from .binio import Packer, Unpacker, read_framed, write_framed
from .distance import AabbTree, build_aabb_tree, tree_signed_many
from .errors import FormatError
from .geom import TetMesh, TriMesh, surface_with_map
from .modes import ModalBasis, encode_fem, reconstruct_displacement
from .skin import (AngleCodeMap, AnimationClip, Skeleton, SkinWeights,
                   encode_skin, forward_kinematics, lbs_deform)

DATASET_MAGIC = b"NCDS"
DATASET_VERSION = 1

SAMPLE_SURFACE = 0
SAMPLE_NEAR = 1
SAMPLE_UNIFORM = 2


class Sample(NamedTuple):
    q: np.ndarray
    z: np.ndarray
    d: float


@dataclass(frozen=True)
class Normalization:
    """World <-> normalized-space maps fitted on the training set.

    Points: q_n = scale * (q_w - translation); distances share the same
    scale. Codes: per-element affine [lo, hi] -> [-1, 1] for rule "affine";
    rule "angle" marks codes already scaled by 1/pi by the encoder (identity
    here). Constant affine elements (lo == hi) map to 0.
    """

    scale: float
    translation: np.ndarray
    code_rule: str
    code_lo: np.ndarray
    code_hi: np.ndarray

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.code_rule not in ("affine", "angle"):
            raise ValueError(f"unknown code rule {self.code_rule!r}")

    @property
    def code_dim(self) -> int:
        return len(self.code_lo)

    def constant_elements(self) -> np.ndarray:
        return np.nonzero(self.code_hi - self.code_lo <= 0)[0]

    def normalize_points(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p, np.float64) - self.translation) * self.scale

    def denormalize_points(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, np.float64) / self.scale + self.translation

    def normalize_distances(self, d):
        return np.asarray(d, np.float64) * self.scale

    def denormalize_distances(self, d):
        return np.asarray(d, np.float64) / self.scale

    def normalize_codes(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, np.float64)
        if self.code_rule == "angle":
            return z.copy()
        span = self.code_hi - self.code_lo
        safe = np.where(span > 0, span, 1.0)
        out = 2.0 * (z - self.code_lo) / safe - 1.0
        return np.where(span > 0, out, 0.0)

    def denormalize_codes(self, zn: np.ndarray) -> np.ndarray:
        zn = np.asarray(zn, np.float64)
        if self.code_rule == "angle":
            return zn.copy()
        span = self.code_hi - self.code_lo
        return np.where(span > 0, self.code_lo + (zn + 1.0) * span / 2.0, self.code_lo)

    def pack(self, p: Packer) -> None:
        p.text(self.code_rule)
        p.f64(self.scale)
        p.array(self.translation.astype("<f8"))
        p.array(self.code_lo.astype("<f8"))
        p.array(self.code_hi.astype("<f8"))

    @classmethod
    def unpack(cls, u: Unpacker) -> "Normalization":
        rule = u.text()
        scale = u.f64()
        return cls(scale, u.array(), rule, u.array(), u.array())


def fit_normalization(bbox_min, bbox_max, codes: np.ndarray, code_rule: str = "affine") -> Normalization:
    """Uniform scale from the longest bbox axis (span -> 2), center
    translation; per-element code ranges for the affine rule."""
    bbox_min = np.asarray(bbox_min, np.float64)
    bbox_max = np.asarray(bbox_max, np.float64)
    extent = float((bbox_max - bbox_min).max())
    if extent <= 0:
        raise ValueError("bounding box has zero extent")
    codes = np.asarray(codes, np.float64)
    if codes.ndim != 2 or len(codes) == 0:
        raise ValueError("need at least one code row")
    if code_rule == "affine":
        lo, hi = codes.min(axis=0), codes.max(axis=0)
    else:
        m = codes.shape[1]
        lo, hi = -np.ones(m), np.ones(m)
    return Normalization(2.0 / extent, (bbox_min + bbox_max) / 2.0, code_rule, lo, hi)


@dataclass(frozen=True)
class Dataset:
    """Normalized training samples plus the normalization that produced them.
    Arrays are float32 (the on-disk precision)."""

    q: np.ndarray  # (N, 3)
    z: np.ndarray  # (N, m)
    d: np.ndarray  # (N,)
    normalization: Normalization
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.q) != len(self.z) or len(self.q) != len(self.d):
            raise ValueError("sample arrays disagree in length")

    def __len__(self) -> int:
        return len(self.d)

    @property
    def code_dim(self) -> int:
        return self.z.shape[1]

    def sample(self, i: int) -> Sample:
        return Sample(self.q[i], self.z[i], float(self.d[i]))

    def model_inputs(self) -> np.ndarray:
        return np.hstack([self.q, self.z])

    @property
    def distances(self) -> np.ndarray:
        return self.d


# ---------------------------------------------------------------------------
# FEM pose generation


def _pose_rng(seed: int, pose: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, pose))))


def generate_fem_poses(mesh: TetMesh, basis: ModalBasis, count: int, amplitude: float,
                       noise: float = 0.0, seed: int = 0,
                       max_inverted_frac: float = 0.02):
    """Sample deformed poses from the modal basis.

    Coefficient j of pose i is uniform in +-amplitude/sqrt(eigenvalue_j), so
    softer modes deform more. ``noise`` adds a smooth non-modal displacement
    field (radial-falloff control points, fraction of the bbox diagonal) to
    mimic details the code cannot represent. Returns (poses (count,n,3),
    coefficients (count,m)); warns if any pose inverts more than
    ``max_inverted_frac`` of the tets.
    """
    if amplitude < 0 or noise < 0:
        raise ValueError("amplitude and noise must be non-negative")
    rest = mesh.vertices
    bmin, bmax = rest.min(axis=0), rest.max(axis=0)
    diag = float(np.linalg.norm(bmax - bmin))
    inv_sqrt = 1.0 / np.sqrt(basis.eigenvalues)

    poses = np.empty((count, len(rest), 3))
    coeffs = np.empty((count, basis.num_modes))
    worst = 0
    for i in range(count):
        rng = _pose_rng(seed, i)
        c = rng.uniform(-1.0, 1.0, basis.num_modes) * amplitude * inv_sqrt
        x = rest + reconstruct_displacement(basis, c)
        if noise > 0:
            centers = rng.uniform(bmin, bmax, size=(8, 3))
            vecs = rng.standard_normal((8, 3))
            vecs *= noise * diag / np.abs(vecs).max()
            sigma = 0.3 * diag
            for ctr, vec in zip(centers, vecs):
                w = np.exp(-np.sum((x - ctr) ** 2, axis=1) / (2 * sigma * sigma))
                x = x + w[:, None] * vec
        poses[i] = x
        coeffs[i] = c
        inverted = int(np.sum(mesh.volumes(x) <= 0))
        worst = max(worst, inverted)
    if worst > max_inverted_frac * mesh.num_tets:
        warnings.warn(
            f"pose amplitude {amplitude:g} inverts up to {worst} of "
            f"{mesh.num_tets} tets (> {max_inverted_frac:.0%})",
            stacklevel=2,
        )
    return poses, coeffs


# ---------------------------------------------------------------------------
# SDF sampling


def split_counts(total: int, ratio) -> list[int]:
    """Largest-remainder apportionment of ``total`` by ``ratio``."""
    ratio = np.asarray(ratio, np.float64)
    exact = total * ratio / ratio.sum()
    counts = np.floor(exact).astype(int)
    rema = exact - counts
    for _ in range(total - counts.sum()):
        k = int(np.argmax(rema))
        counts[k] += 1
        rema[k] = -1
    return counts.tolist()


def _surface_points(surface: TriMesh, n: int, rng: np.random.Generator):
    """Area-weighted random points on the surface; returns (points, face ids)."""
    v, t = surface.vertices, surface.triangles
    cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    cum = np.cumsum(areas)
    faces = np.searchsorted(cum, rng.random(n) * cum[-1])
    faces = np.minimum(faces, len(t) - 1)
    u = rng.random(n)
    w = rng.random(n)
    flip = u + w > 1.0
    u[flip], w[flip] = 1.0 - u[flip], 1.0 - w[flip]
    a = v[t[faces, 0]]
    pts = a + u[:, None] * (v[t[faces, 1]] - a) + w[:, None] * (v[t[faces, 2]] - a)
    return pts, faces


def sample_pose_sdf(surface: TriMesh, tree: AabbTree, k: int, ratio=(2, 2, 1),
                    sigma_near: float = 0.0, bbox=None, seed: int = 0):
    """Sample one pose's field: on-surface points, near-surface points
    (surface points offset along the face normal by N(0, sigma_near)), and
    uniform points in the shared bounding box, in the given ratio.

    Returns (points (k,3), signed distances (k,), sample types (k,) u8),
    distances from the tree oracle.
    """
    if k < 5:
        raise ValueError("need at least 5 samples per pose")
    rng = np.random.Generator(np.random.PCG64(seed)) if isinstance(seed, int) else seed
    if bbox is None:
        bbox = surface.bbox()
    bmin, bmax = np.asarray(bbox[0], np.float64), np.asarray(bbox[1], np.float64)
    if sigma_near <= 0:
        sigma_near = 0.01 * float(np.linalg.norm(bmax - bmin))

    n_surf, n_near, n_unif = split_counts(k, ratio)
    pts = np.empty((k, 3))
    types = np.empty(k, np.uint8)

    p_surf, _ = _surface_points(surface, n_surf, rng)
    pts[:n_surf] = p_surf
    types[:n_surf] = SAMPLE_SURFACE

    p_near, faces = _surface_points(surface, n_near, rng)
    offsets = rng.normal(0.0, sigma_near, n_near)
    pts[n_surf : n_surf + n_near] = p_near + offsets[:, None] * tree.pn.face[faces]
    types[n_surf : n_surf + n_near] = SAMPLE_NEAR

    pts[n_surf + n_near :] = rng.uniform(bmin, bmax, size=(n_unif, 3))
    types[n_surf + n_near :] = SAMPLE_UNIFORM

    dists = tree_signed_many(tree, pts)[0]
    return pts, dists, types


# ---------------------------------------------------------------------------
# End-to-end builders


def build_fem_dataset(mesh: TetMesh, basis: ModalBasis, n_poses: int, per_pose: int,
                      amplitude: float, ratio=(2, 2, 1), sigma_frac: float = 0.01,
                      noise: float = 0.0, seed: int = 0, return_detail: bool = False):
    """Full FEM pipeline: modal poses -> rigid-aligned surfaces -> oracle
    samples -> fitted normalization -> packed Dataset."""
    surf_rest, vmap = surface_with_map(mesh)
    poses, _ = generate_fem_poses(mesh, basis, n_poses, amplitude, noise, seed)

    codes = np.empty((n_poses, basis.num_modes))
    surfaces = []
    for i in range(n_poses):
        z, align = encode_fem(poses[i], mesh.vertices, basis)
        codes[i] = z
        surfaces.append(surf_rest.with_vertices(align.apply(poses[i])[vmap]))

    bmin = np.min([s.bbox()[0] for s in surfaces], axis=0)
    bmax = np.max([s.bbox()[1] for s in surfaces], axis=0)
    sigma = sigma_frac * float(np.linalg.norm(bmax - bmin))

    def sample_range(lo, hi):
        out = []
        for i in range(lo, hi):
            tree = build_aabb_tree(surfaces[i])
            out.append(sample_pose_sdf(surfaces[i], tree, per_pose, ratio, sigma,
                                       (bmin, bmax), _pose_rng(seed, i)))
        return out

    chunks = parallel.chunk_ranges(n_poses, max(1, n_poses // 16))
    results = [r for part in parallel.run_chunks(sample_range, chunks) for r in part]
    return assemble_dataset(results, codes, "affine", per_pose, seed, "fem",
                             surfaces if return_detail else None, poses if return_detail else None)


def skin_pose_surface(rest: TriMesh, weights: SkinWeights, skel: Skeleton,
                      angles: np.ndarray) -> TriMesh:
    """LBS pose expressed in the root joint's frame."""
    posed = lbs_deform(rest, weights, skel, angles)
    rot, trans = forward_kinematics(skel, angles)
    root_inv_rot = rot[0].T
    return posed.with_vertices((posed.vertices - trans[0]) @ root_inv_rot.T)


def build_skin_dataset(rest: TriMesh, weights: SkinWeights, skel: Skeleton,
                       cmap: AngleCodeMap, frames: np.ndarray, per_pose: int,
                       ratio=(2, 2, 1), sigma_frac: float = 0.01, seed: int = 0,
                       return_detail: bool = False):
    """Skinning pipeline over explicit pose frames (rows of joint angles)."""
    frames = np.asarray(frames, np.float64)
    n_poses = len(frames)
    codes = np.stack([encode_skin(frames[i], cmap) for i in range(n_poses)])
    surfaces = [skin_pose_surface(rest, weights, skel, frames[i]) for i in range(n_poses)]

    bmin = np.min([s.bbox()[0] for s in surfaces], axis=0)
    bmax = np.max([s.bbox()[1] for s in surfaces], axis=0)
    sigma = sigma_frac * float(np.linalg.norm(bmax - bmin))

    def sample_range(lo, hi):
        out = []
        for i in range(lo, hi):
            tree = build_aabb_tree(surfaces[i])
            out.append(sample_pose_sdf(surfaces[i], tree, per_pose, ratio, sigma,
                                       (bmin, bmax), _pose_rng(seed, i)))
        return out

    chunks = parallel.chunk_ranges(n_poses, max(1, n_poses // 16))
    results = [r for part in parallel.run_chunks(sample_range, chunks) for r in part]
    return assemble_dataset(results, codes, "angle", per_pose, seed, "skin",
                             surfaces if return_detail else None, frames if return_detail else None)


def assemble_dataset(results, codes, rule, per_pose, seed, kind,
                     surfaces=None, poses=None):
    """Shared final stage: fit normalization over the sampled points, pack
    normalized f32 arrays, and (optionally) return the f64 generation detail
    for consistency checks."""
    pts = np.concatenate([r[0] for r in results])
    dists = np.concatenate([r[1] for r in results])
    types = np.concatenate([r[2] for r in results])
    norm = fit_normalization(pts.min(axis=0), pts.max(axis=0), codes, rule)

    zn = norm.normalize_codes(codes)
    z_rows = np.repeat(zn, [len(r[0]) for r in results], axis=0)
    counts = {"surface": int(np.sum(types == SAMPLE_SURFACE)),
              "near": int(np.sum(types == SAMPLE_NEAR)),
              "uniform": int(np.sum(types == SAMPLE_UNIFORM))}
    ds = Dataset(
        norm.normalize_points(pts).astype(np.float32),
        z_rows.astype(np.float32),
        norm.normalize_distances(dists).astype(np.float32),
        norm,
        {"n_poses": len(codes), "samples_per_pose": per_pose,
         "code_dim": int(codes.shape[1]), "counts": counts,
         "seed": int(seed), "kind": kind},
    )
    if surfaces is None:
        return ds
    detail = {"surfaces": surfaces, "poses": poses, "codes": codes,
              "points": pts, "dists": dists, "types": types}
    return ds, detail


# ---------------------------------------------------------------------------
# Persistence


def save_dataset(path, ds: Dataset) -> None:
    p = Packer()
    p.text(json.dumps(ds.metadata, sort_keys=True))
    ds.normalization.pack(p)
    p.i64(len(ds))
    p.i64(ds.code_dim)
    p.array(np.ascontiguousarray(ds.q, "<f4"))
    p.array(np.ascontiguousarray(ds.z, "<f4"))
    p.array(np.ascontiguousarray(ds.d, "<f4"))
    write_framed(path, DATASET_MAGIC, DATASET_VERSION, p.payload())


def load_dataset(path) -> Dataset:
    payload = read_framed(path, DATASET_MAGIC, DATASET_VERSION)
    u = Unpacker(payload, str(path))
    metadata = json.loads(u.text())
    norm = Normalization.unpack(u)
    n = u.i64()
    m = u.i64()
    q = u.array()
    z = u.array()
    d = u.array()
    u.done()
    if q.shape != (n, 3) or z.shape != (n, m) or d.shape != (n,):
        raise FormatError(f"{path}: sample array shapes disagree with header")
    return Dataset(q, z, d, norm, metadata)
