"""Linear blend skinning, joint-angle codes, and the root-frame transform.

A skeleton is a tree of joints with rigid rest transforms and up to three
ordered Euler rotation axes each; the full joint-angle vector stacks every
joint's degrees of freedom in joint order. The deformation code keeps only
the DOFs that actually vary across the animation set (minus explicitly
excluded joints) and scales them by 1/pi.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericError
from .geom import RigidTransform, TriMesh

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


def _axis_rotation(axis: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], np.float64)
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], np.float64)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], np.float64)


def quat_to_matrix(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = np.asarray(q, np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int  # -1 for the root
    rest_rotation: np.ndarray
    rest_translation: np.ndarray
    axes: str  # ordered Euler axes, e.g. "zx"; "" for a fixed joint

    def __post_init__(self):
        if any(a not in _AXIS_INDEX for a in self.axes) or len(self.axes) > 3:
            raise ValueError(f"joint {self.name}: bad axes {self.axes!r}")


@dataclass(frozen=True)
class Skeleton:
    joints: tuple[Joint, ...]
    dof_joint: np.ndarray = field(init=False, repr=False)
    dof_axis: tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self):
        roots = [j for j in self.joints if j.parent < 0]
        if len(roots) != 1:
            raise ValueError(f"skeleton must have exactly one root, found {len(roots)}")
        for i, j in enumerate(self.joints):
            if j.parent >= i:
                raise ValueError(f"joint {j.name}: parents must precede children")
        dj, da = [], []
        for i, j in enumerate(self.joints):
            for a in j.axes:
                dj.append(i)
                da.append(a)
        object.__setattr__(self, "dof_joint", np.array(dj, np.int64))
        object.__setattr__(self, "dof_axis", tuple(da))

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def num_dofs(self) -> int:
        return len(self.dof_joint)

    def joint_index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(name)

    def dof_labels(self) -> list[str]:
        return [f"{self.joints[j].name}.{a}" for j, a in zip(self.dof_joint, self.dof_axis)]


@dataclass(frozen=True)
class SkinWeights:
    """Up to four (joint, weight) influences per vertex; weights sum to 1."""

    joints: np.ndarray  # (V,4) int64, padded with 0
    weights: np.ndarray  # (V,4) float64, padded with 0

    def __post_init__(self):
        w = np.asarray(self.weights, np.float64)
        if (w < -1e-12).any():
            raise ValueError("skin weights must be non-negative")
        if np.abs(w.sum(axis=1) - 1.0).max() > 1e-6:
            raise ValueError("skin weights must sum to 1 per vertex")


@dataclass(frozen=True)
class AnimationClip:
    name: str
    frames: np.ndarray  # (F, D) radians
    fps: float

    def __post_init__(self):
        if not np.isfinite(self.frames).all():
            raise ValueError(f"clip {self.name}: non-finite angles")


@dataclass(frozen=True)
class AngleCodeMap:
    """Which DOFs enter the code. kept_dofs are global DOF indices;
    constant_values records the rest of the DOF vector."""

    kept_dofs: np.ndarray  # (K,) int64
    kept_labels: tuple[str, ...]
    excluded_joints: tuple[str, ...]
    constant_values: dict[int, float]
    num_dofs: int

    @property
    def code_dim(self) -> int:
        return len(self.kept_dofs)

    def to_jsonable(self) -> dict:
        return {
            "kept_dofs": [int(i) for i in self.kept_dofs],
            "kept_labels": list(self.kept_labels),
            "excluded_joints": list(self.excluded_joints),
            "constant_values": {str(k): float(v) for k, v in self.constant_values.items()},
            "num_dofs": int(self.num_dofs),
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "AngleCodeMap":
        return cls(
            np.array(d["kept_dofs"], np.int64),
            tuple(d["kept_labels"]),
            tuple(d["excluded_joints"]),
            {int(k): float(v) for k, v in d["constant_values"].items()},
            int(d["num_dofs"]),
        )


def forward_kinematics(skel: Skeleton, angles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World transforms (rotations (J,3,3), translations (J,3)) per joint."""
    angles = np.asarray(angles, np.float64)
    if angles.shape != (skel.num_dofs,):
        raise ValueError(f"angle vector must have {skel.num_dofs} entries, got {angles.shape}")
    rot = np.empty((skel.num_joints, 3, 3))
    trans = np.empty((skel.num_joints, 3))
    cursor = 0
    for i, j in enumerate(skel.joints):
        local_rot = j.rest_rotation.copy()
        for a in j.axes:
            local_rot = local_rot @ _axis_rotation(a, angles[cursor])
            cursor += 1
        if j.parent < 0:
            rot[i] = local_rot
            trans[i] = j.rest_translation
        else:
            rot[i] = rot[j.parent] @ local_rot
            trans[i] = rot[j.parent] @ j.rest_translation + trans[j.parent]
    return rot, trans


def lbs_deform(rest: TriMesh, weights: SkinWeights, skel: Skeleton, angles: np.ndarray) -> TriMesh:
    """Linear blend skinning of the rest surface by a joint-angle vector."""
    if len(weights.weights) != rest.num_vertices:
        raise ValueError("weight table size does not match the mesh")
    rot, trans = forward_kinematics(skel, angles)
    rot0, trans0 = forward_kinematics(skel, np.zeros(skel.num_dofs))
    # Per-joint skinning transform: current world o inverse rest world.
    skin_rot = np.einsum("jab,jcb->jac", rot, rot0)
    skin_trans = trans - np.einsum("jab,jb->ja", skin_rot, trans0)

    v = rest.vertices
    out = np.zeros_like(v)
    for slot in range(weights.joints.shape[1]):
        jidx = weights.joints[:, slot]
        w = weights.weights[:, slot][:, None]
        out += w * (np.einsum("vab,vb->va", skin_rot[jidx], v) + skin_trans[jidx])
    return rest.with_vertices(out)


def build_angle_code_map(
    clips: list[AnimationClip],
    skel: Skeleton,
    excluded: list[str] = (),
    eps_const: float = 1e-6,
) -> AngleCodeMap:
    """Drop constant DOFs (range over all clip frames <= eps_const) and all
    DOFs of excluded joints; record their values."""
    if not clips or not all(len(c.frames) for c in clips):
        raise ValueError("need at least one clip with at least one frame")
    frames = np.concatenate([c.frames for c in clips], axis=0)
    if frames.shape[1] != skel.num_dofs:
        raise ValueError(f"clip DOF count {frames.shape[1]} != skeleton {skel.num_dofs}")
    labels = skel.dof_labels()
    excluded_idx = {skel.joint_index(name) for name in excluded}
    span = frames.max(axis=0) - frames.min(axis=0)

    kept, constants = [], {}
    for d in range(skel.num_dofs):
        if int(skel.dof_joint[d]) in excluded_idx or span[d] <= eps_const:
            constants[d] = float(frames[0, d])
        else:
            kept.append(d)
    if not kept:
        raise NumericError("all DOFs constant or excluded: code would be empty")
    kept_arr = np.array(kept, np.int64)
    return AngleCodeMap(
        kept_arr,
        tuple(labels[d] for d in kept),
        tuple(excluded),
        constants,
        skel.num_dofs,
    )


def encode_skin(angles: np.ndarray, cmap: AngleCodeMap) -> np.ndarray:
    """Code = kept joint angles / pi. Values outside [-1,1] are allowed but
    flagged: they are outside the nominal training range."""
    angles = np.asarray(angles, np.float64)
    if angles.shape != (cmap.num_dofs,):
        raise ValueError(f"angle vector must have {cmap.num_dofs} entries, got {angles.shape}")
    z = angles[cmap.kept_dofs] / np.pi
    if (np.abs(z) > 1.0).any():
        worst = int(np.abs(z).argmax())
        warnings.warn(
            f"joint-angle code outside [-1,1]: {cmap.kept_labels[worst]} = {z[worst]:.3f}",
            stacklevel=2,
        )
    return z


def world_to_root(points: np.ndarray, root_world: RigidTransform) -> np.ndarray:
    """Map world-space points into the root joint's frame."""
    return root_world.inverse().apply(points)


def root_to_world_normals(normals: np.ndarray, root_world: RigidTransform) -> np.ndarray:
    """Map root-frame direction vectors back to world (rotation only)."""
    return root_world.apply_rotation(normals)


# ---------------------------------------------------------------------------
# Character file: skeleton + weights + clips in one plain-text file.
#
#   codedsdf-character 1
#   joints <J>
#   <name> <parent> <tx> <ty> <tz> <qw> <qx> <qy> <qz> <axes|->
#   weights <V>
#   <joint>:<weight> [<joint>:<weight> ...]      (one line per vertex)
#   clips <C>
#   clip <name> <frames> <fps>
#   <D whitespace-separated angles in radians per frame line>
#
# '#' starts a comment; numbers round-trip via repr.


def save_character(path, skel: Skeleton, weights: SkinWeights, clips: list[AnimationClip]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("codedsdf-character 1\n")
        fh.write(f"joints {skel.num_joints}\n")
        for j in skel.joints:
            q = _matrix_to_quat(j.rest_rotation)
            t = j.rest_translation
            axes = j.axes if j.axes else "-"
            fh.write(
                f"{j.name} {j.parent} {t[0]!r} {t[1]!r} {t[2]!r} "
                f"{q[0]!r} {q[1]!r} {q[2]!r} {q[3]!r} {axes}\n"
            )
        fh.write(f"weights {len(weights.weights)}\n")
        for jrow, wrow in zip(weights.joints, weights.weights):
            pairs = [f"{int(j)}:{w!r}" for j, w in zip(jrow, wrow) if w > 0.0]
            if not pairs:
                pairs = [f"{int(jrow[0])}:0.0"]
            fh.write(" ".join(pairs) + "\n")
        fh.write(f"clips {len(clips)}\n")
        for c in clips:
            fh.write(f"clip {c.name} {len(c.frames)} {c.fps!r}\n")
            for row in c.frames:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _matrix_to_quat(r: np.ndarray) -> np.ndarray:
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        return np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    i = int(np.argmax(np.diag(r)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = np.sqrt(max(1.0 + r[i, i] - r[j, j] - r[k, k], 0.0)) * 2
    q = np.empty(4)
    q[0] = (r[k, j] - r[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (r[j, i] + r[i, j]) / s
    q[1 + k] = (r[k, i] + r[i, k]) / s
    return q


def load_character(path):
    """Returns (skeleton, weights, clips)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.split("#", 1)[0].rstrip() for ln in fh]
    rows = [(i + 1, ln.split()) for i, ln in enumerate(lines) if ln.strip()]
    pos = 0

    def take(expect: str | None = None):
        nonlocal pos
        if pos >= len(rows):
            raise FormatError(f"{path}: unexpected end of file")
        lineno, parts = rows[pos]
        pos += 1
        if expect is not None and parts[0] != expect:
            raise FormatError(f"{path}:{lineno}: expected {expect!r}, found {parts[0]!r}")
        return lineno, parts

    lineno, head = take()
    if head[:1] != ["codedsdf-character"] or len(head) < 2 or head[1] != "1":
        raise FormatError(f"{path}:{lineno}: not a codedsdf-character v1 file")

    lineno, parts = take("joints")
    n_joints = int(parts[1])
    joints = []
    for _ in range(n_joints):
        lineno, p = take()
        if len(p) != 10:
            raise FormatError(f"{path}:{lineno}: joint row needs 10 fields")
        axes = "" if p[9] == "-" else p[9]
        joints.append(Joint(
            p[0], int(p[1]),
            quat_to_matrix([float(p[5]), float(p[6]), float(p[7]), float(p[8])]),
            np.array([float(p[2]), float(p[3]), float(p[4])]),
            axes,
        ))
    skel = Skeleton(tuple(joints))

    lineno, parts = take("weights")
    n_verts = int(parts[1])
    jt = np.zeros((n_verts, 4), np.int64)
    wt = np.zeros((n_verts, 4), np.float64)
    for v in range(n_verts):
        lineno, p = take()
        if len(p) > 4:
            raise FormatError(f"{path}:{lineno}: more than 4 influences")
        for slot, pair in enumerate(p):
            j, _, w = pair.partition(":")
            jt[v, slot] = int(j)
            wt[v, slot] = float(w)
    weights = SkinWeights(jt, wt)

    lineno, parts = take("clips")
    n_clips = int(parts[1])
    clips = []
    for _ in range(n_clips):
        lineno, p = take("clip")
        name, n_frames, fps = p[1], int(p[2]), float(p[3])
        frames = np.empty((n_frames, skel.num_dofs), np.float64)
        for f in range(n_frames):
            lineno, vals = take()
            if len(vals) != skel.num_dofs:
                raise FormatError(
                    f"{path}:{lineno}: frame has {len(vals)} angles, skeleton has {skel.num_dofs} DOFs"
                )
            frames[f] = [float(x) for x in vals]
        clips.append(AnimationClip(name, frames, fps))
    return skel, weights, clips
