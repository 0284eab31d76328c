"""Procedural test assets: no external downloads needed.

Provides the desk-scale fixtures the pipeline and tests run on: a unit cube,
icospheres, a bumpy-sphere tet mesh (star tetrahedralization from the
centroid), a flat plate, a capsule-chain biped-lite character with smooth
blended geometry and distance-falloff skin weights, and synthetic animation
clips with deliberately constant and excluded degrees of freedom.
"""

from __future__ import annotations

import numpy as np
from skimage import measure

from .dataset import assemble_dataset, sample_pose_sdf
from .distance import build_aabb_tree
from .errors import DegenerateGeometryError
from .geom import TetMesh, TriMesh
from .skin import AnimationClip, Joint, Skeleton, SkinWeights


def unit_cube() -> TriMesh:
    """Axis-aligned unit cube [0,1]^3, 8 vertices / 12 outward triangles."""
    v = np.array([
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ], np.float64)
    t = np.array([
        [0, 2, 1], [0, 3, 2],  # bottom (-z)
        [4, 5, 6], [4, 6, 7],  # top (+z)
        [0, 1, 5], [0, 5, 4],  # front (-y)
        [2, 3, 7], [2, 7, 6],  # back (+y)
        [0, 4, 7], [0, 7, 3],  # left (-x)
        [1, 2, 6], [1, 6, 5],  # right (+x)
    ], np.int64)
    return TriMesh(v, t)


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box with the cube's topology."""
    cube = unit_cube()
    v = (cube.vertices - 0.5) * np.asarray(size, np.float64) + np.asarray(center, np.float64)
    return TriMesh(v, cube.triangles)


def icosphere(radius: float = 1.0, subdivisions: int = 3) -> TriMesh:
    """Subdivided icosahedron projected onto a sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        cache: dict[tuple, int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = verts[i] + verts[j]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriMesh(np.array(verts) * radius, np.array(faces, np.int64))


def bumpy_sphere(radius: float = 1.0, subdivisions: int = 3, bump_amp: float = 0.12,
                 n_bumps: int = 6, seed: int = 7) -> TriMesh:
    """Sphere with smooth radial bumps (Gaussian lobes on the sphere)."""
    base = icosphere(1.0, subdivisions)
    rng = np.random.Generator(np.random.PCG64(seed))
    dirs = rng.standard_normal((n_bumps, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    v = base.vertices
    lobes = np.exp((v @ dirs.T - 1.0) / 0.12)  # (V, n_bumps)
    r = radius * (1.0 + bump_amp * lobes.sum(axis=1))
    return TriMesh(v * r[:, None], base.triangles)


def star_tet_mesh(surface: TriMesh) -> TetMesh:
    """Tetrahedralize a star-shaped closed surface by coning to its centroid."""
    center = surface.vertices.mean(axis=0)
    verts = np.vstack([center[None, :], surface.vertices])
    tets = np.hstack([
        np.zeros((surface.num_triangles, 1), np.int64),
        surface.triangles + 1,
    ])
    mesh = TetMesh(verts, tets)
    if (mesh.volumes() <= 0).any():
        raise DegenerateGeometryError("surface is not star-shaped around its centroid")
    return mesh


def bumpy_tet_sphere(radius: float = 1.0, subdivisions: int = 3, bump_amp: float = 0.12,
                     seed: int = 7) -> TetMesh:
    """The bumpy sphere as a volumetric fixture (~10*4^s tets)."""
    return star_tet_mesh(bumpy_sphere(radius, subdivisions, bump_amp, seed=seed))


# ---------------------------------------------------------------------------
# Capsule-chain character

# name, parent, rest offset from parent, Euler axes
_JOINTS = [
    ("root",       -1, (0.0, 0.0, 0.0),      ""),
    ("spine",       0, (0.0, 0.20, 0.0),     "xz"),
    ("head",        1, (0.0, 0.40, 0.0),     "x"),
    ("upper_arm_l", 1, (0.16, 0.32, 0.0),    "zy"),
    ("forearm_l",   3, (0.26, 0.0, 0.0),     "z"),
    ("hand_l",      4, (0.24, 0.0, 0.0),     "xyz"),
    ("upper_arm_r", 1, (-0.16, 0.32, 0.0),   "zy"),
    ("forearm_r",   6, (-0.26, 0.0, 0.0),    "z"),
    ("hand_r",      7, (-0.24, 0.0, 0.0),    "xyz"),
    ("thigh_l",     0, (0.10, -0.04, 0.0),   "xz"),
    ("shin_l",      9, (0.0, -0.30, 0.0),    "x"),
    ("foot_l",     10, (0.0, -0.28, 0.0),    "x"),
    ("thigh_r",     0, (-0.10, -0.04, 0.0),  "xz"),
    ("shin_r",     12, (0.0, -0.30, 0.0),    "x"),
    ("foot_r",     13, (0.0, -0.28, 0.0),    "x"),
]

EXCLUDED_JOINTS = ("head", "hand_l", "hand_r", "foot_l", "foot_r")

# Bone proxies for geometry and weights: (joint, start offset, end offset,
# radius) in that joint's rest-world frame.
_BONES = [
    ("root", (0.0, -0.06, 0.0), (0.0, 0.14, 0.0), 0.125),
    ("spine", (0.0, 0.0, 0.0), (0.0, 0.30, 0.0), 0.13),
    ("head", (0.0, 0.02, 0.0), (0.0, 0.14, 0.0), 0.095),
    ("upper_arm_l", (0.0, 0.0, 0.0), (0.24, 0.0, 0.0), 0.055),
    ("forearm_l", (0.0, 0.0, 0.0), (0.22, 0.0, 0.0), 0.045),
    ("hand_l", (0.0, 0.0, 0.0), (0.07, 0.0, 0.0), 0.05),
    ("upper_arm_r", (0.0, 0.0, 0.0), (-0.24, 0.0, 0.0), 0.055),
    ("forearm_r", (0.0, 0.0, 0.0), (-0.22, 0.0, 0.0), 0.045),
    ("hand_r", (0.0, 0.0, 0.0), (-0.07, 0.0, 0.0), 0.05),
    ("thigh_l", (0.0, 0.0, 0.0), (0.0, -0.26, 0.0), 0.07),
    ("shin_l", (0.0, 0.0, 0.0), (0.0, -0.24, 0.0), 0.055),
    ("foot_l", (0.0, 0.0, 0.0), (0.02, -0.05, 0.04), 0.05),
    ("thigh_r", (0.0, 0.0, 0.0), (0.0, -0.26, 0.0), 0.07),
    ("shin_r", (0.0, 0.0, 0.0), (0.0, -0.24, 0.0), 0.055),
    ("foot_r", (0.0, 0.0, 0.0), (0.02, -0.05, 0.04), 0.05),
]


def character_skeleton() -> Skeleton:
    joints = [
        Joint(name, parent, np.eye(3), np.array(offset, np.float64), axes)
        for name, parent, offset, axes in _JOINTS
    ]
    return Skeleton(tuple(joints))


def _rest_bone_segments(skel: Skeleton):
    """(joint index, world start, world end, radius) per bone at rest."""
    world = np.zeros((skel.num_joints, 3))
    for i, j in enumerate(skel.joints):
        world[i] = j.rest_translation + (world[j.parent] if j.parent >= 0 else 0.0)
    segs = []
    for name, a, b, r in _BONES:
        ji = skel.joint_index(name)
        segs.append((ji, world[ji] + np.asarray(a), world[ji] + np.asarray(b), r))
    return segs


def _capsule_distance(p: np.ndarray, a, b, r) -> np.ndarray:
    ab = b - a
    t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - a - t[:, None] * ab[None, :], axis=1) - r


def character_mesh(skel: Skeleton, resolution: int = 40, blend: float = 40.0) -> TriMesh:
    """Watertight body surface: marching cubes over the smooth union
    (log-sum-exp) of the bone capsules at rest."""
    segs = _rest_bone_segments(skel)
    lo = np.min([np.minimum(a, b) - r for _, a, b, r in segs], axis=0) - 0.12
    hi = np.max([np.maximum(a, b) + r for _, a, b, r in segs], axis=0) + 0.12
    axes = [np.linspace(lo[k], hi[k], resolution) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dists = np.stack([_capsule_distance(grid, a, b, r) for _, a, b, r in segs])
    field = -np.log(np.exp(-blend * dists).sum(axis=0)) / blend
    vol = field.reshape(resolution, resolution, resolution)

    spacing = tuple((hi[k] - lo[k]) / (resolution - 1) for k in range(3))
    verts, faces, _, _ = measure.marching_cubes(vol, level=0.0, spacing=spacing)
    verts = verts + lo
    mesh = TriMesh(verts, faces.astype(np.int64))
    # Divergence theorem: flip if the isosurface came out inward.
    a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
    if np.einsum("ij,ij->i", np.cross(a, b), c).sum() < 0:
        mesh = TriMesh(verts, faces[:, ::-1].astype(np.int64))
    return mesh


def character_weights(skel: Skeleton, mesh: TriMesh, falloff: float = 0.04) -> SkinWeights:
    """Distance-falloff weights to the bone capsules, at most 4 influences."""
    segs = _rest_bone_segments(skel)
    d = np.stack([
        np.maximum(_capsule_distance(mesh.vertices, a, b, r), 0.0)
        for _, a, b, r in segs
    ])  # (B, V)
    joint_ids = np.array([ji for ji, _, _, _ in segs])
    w = np.exp(-(d / falloff) ** 2) + 1e-12
    top = np.argsort(-w, axis=0, kind="stable")[:4]  # (4, V)
    vidx = np.arange(mesh.num_vertices)
    wt = w[top, vidx[None, :]].T  # (V, 4)
    jt = joint_ids[top].T
    wt = wt / wt.sum(axis=1, keepdims=True)
    return SkinWeights(jt.astype(np.int64), wt)


def synthetic_clips(skel: Skeleton, n_frames: int = 120, n_clips: int = 2,
                    fps: float = 30.0, seed: int = 11) -> list[AnimationClip]:
    """Sinusoidal joint trajectories; excluded joints still move (exclusion
    must be by name, not variation) while *_z leg abduction and the shoulder
    twist axes stay constant to exercise constant-DOF pruning."""
    labels = skel.dof_labels()
    amp = np.zeros(skel.num_dofs)
    for d, lab in enumerate(labels):
        joint, axis = lab.rsplit(".", 1)
        if joint.startswith(("thigh",)) and axis == "z":
            amp[d] = 0.0  # constant: pruned from the code
        elif joint.startswith(("upper_arm",)) and axis == "y":
            amp[d] = 0.3
        elif joint.startswith(("hand",)):
            amp[d] = 0.5  # varying but excluded by name
        elif joint == "spine":
            amp[d] = 0.25
        elif joint == "head":
            amp[d] = 0.3
        elif joint.startswith("upper_arm"):
            amp[d] = 0.55
        elif joint.startswith("forearm"):
            amp[d] = 0.5
        elif joint.startswith("thigh"):
            amp[d] = 0.45
        elif joint.startswith("shin"):
            amp[d] = 0.5
        elif joint.startswith("foot"):
            amp[d] = 0.3
    rng = np.random.Generator(np.random.PCG64(seed))
    clips = []
    for c in range(n_clips):
        freq = rng.uniform(0.8, 2.2, skel.num_dofs)
        phase = rng.uniform(0.0, 2.0 * np.pi, skel.num_dofs)
        t = np.arange(n_frames) / fps
        frames = amp[None, :] * np.sin(2.0 * np.pi * freq[None, :] * t[:, None] + phase[None, :])
        clips.append(AnimationClip(f"clip{c}", frames, fps))
    return clips


# ---------------------------------------------------------------------------
# Toy sphere family (1-D radius code)


def sphere_family_dataset(radii, per_pose: int = 2000, subdivisions: int = 3,
                          ratio=(2, 2, 1), sigma_frac: float = 0.015, seed: int = 0,
                          return_detail: bool = False):
    """Dataset of icosphere SDFs coded by a single radius value."""
    radii = np.asarray(radii, np.float64)
    surfaces = [icosphere(r, subdivisions) for r in radii]
    rmax = float(radii.max())
    bbox = (np.full(3, -1.3 * rmax), np.full(3, 1.3 * rmax))
    sigma = sigma_frac * float(np.linalg.norm(bbox[1] - bbox[0]))
    results = []
    for i, surf in enumerate(surfaces):
        tree = build_aabb_tree(surf)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, i))))
        results.append(sample_pose_sdf(surf, tree, per_pose, ratio, sigma, bbox, rng))
    codes = radii[:, None]
    return assemble_dataset(results, codes, "affine", per_pose, seed, "toy-sphere",
                            surfaces if return_detail else None,
                            radii if return_detail else None)
