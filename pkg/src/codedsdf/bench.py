"""Benchmark harness, level-set slices, and accuracy evaluation.

The synthetic benchmark times, per query count N, a rebuild-per-pose AABB
tree (hierarchy build on the fresh pose plus N signed-distance queries)
against the neural path (pose encoding plus one batched network evaluation
of the same N points). Both methods see identical query points drawn
uniformly in the current pose's bounding box. Timings use the monotonic
clock, discard warm-up trials, and report the median over repetitions.
"""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .distance import AabbTree, build_aabb_tree, tree_signed_many
from .geom import TriMesh

_PGM_LEVELS = 16  # contour banding period in the slice images


@dataclass(frozen=True)
class BenchRecord:
    method: str  # "bvh" | "neural-cpu"
    n_queries: int
    wall_ns: int  # median over repetitions
    pose_id: str
    sign_agreement: float  # fraction of points where both methods agree


class PoseSource(NamedTuple):
    """Yields fresh deformed poses for benchmark trials.

    ``surface(trial)`` returns the world-space surface mesh for the trial's
    pose; ``neural_eval(trial, points)`` runs the collider's benchmark path
    (encode + batched forward) for the same pose and returns distances.
    """

    surface: Callable[[int], TriMesh]
    neural_eval: Callable[[int, np.ndarray], np.ndarray]
    label: str


def run_benchmark(source: PoseSource, ns: list[int], reps: int = 9,
                  warmup: int = 2, seed: int = 0) -> list[BenchRecord]:
    """Time both methods over the given query counts.

    A fresh pose is generated per trial (never timed); the BVH timing covers
    hierarchy build plus the query loop, the neural timing covers encoding
    plus the batched forward pass. Queries run through a single compiled
    loop so interpreter dispatch does not tax the baseline.
    """
    if reps < 5:
        raise ValueError("need at least 5 repetitions")
    records = []
    trial = 0
    for n in ns:
        bvh_ns, neural_ns, agree = [], [], []
        for rep in range(warmup + reps):
            surf = source.surface(trial)
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, trial))))
            lo, hi = surf.bbox()
            pts = rng.uniform(lo, hi, size=(n, 3))

            t0 = time.perf_counter_ns()
            tree = build_aabb_tree(surf)
            d_bvh = tree_signed_many(tree, pts)[0]
            t1 = time.perf_counter_ns()

            t2 = time.perf_counter_ns()
            d_net = source.neural_eval(trial, pts)
            t3 = time.perf_counter_ns()

            trial += 1
            if rep < warmup:
                continue
            bvh_ns.append(t1 - t0)
            neural_ns.append(t3 - t2)
            agree.append(float(np.mean(np.sign(d_bvh) == np.sign(d_net))))
        records.append(BenchRecord("bvh", n, int(np.median(bvh_ns)), source.label,
                                   float(np.mean(agree))))
        records.append(BenchRecord("neural-cpu", n, int(np.median(neural_ns)), source.label,
                                   float(np.mean(agree))))
    return records


def records_to_csv(records: list[BenchRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method,N,ns,pose_id,sign_agreement\n")
        for r in records:
            fh.write(f"{r.method},{r.n_queries},{r.wall_ns},{r.pose_id},{r.sign_agreement:.6f}\n")


def _method_series(records: list[BenchRecord], method: str) -> tuple[np.ndarray, np.ndarray]:
    rows = sorted((r.n_queries, r.wall_ns) for r in records if r.method == method)
    return np.array([n for n, _ in rows], np.float64), np.array([t for _, t in rows], np.float64)


def loglog_slope(records: list[BenchRecord], method: str, top_decade: bool = True) -> float:
    """Least-squares slope of log(time) vs log(N), optionally restricted to
    the top decade of query counts."""
    n, t = _method_series(records, method)
    if top_decade:
        keep = n >= n.max() / 10.0
        n, t = n[keep], t[keep]
    if len(n) < 2:
        raise ValueError("need at least two query counts for a slope")
    return float(np.polyfit(np.log(n), np.log(t), 1)[0])


def crossover(records: list[BenchRecord]) -> float | None:
    """Smallest N at which the BVH is no slower than the neural path,
    interpolating linearly in log N; None if the BVH never catches up."""
    n_b, t_b = _method_series(records, "bvh")
    n_n, t_n = _method_series(records, "neural-cpu")
    if len(n_b) == 0 or not np.array_equal(n_b, n_n):
        raise ValueError("methods were benchmarked on different query-count grids")
    diff = t_b - t_n  # positive while the BVH is slower
    for i in range(len(diff)):
        if diff[i] <= 0:
            if i == 0:
                return float(n_b[0])
            x0, x1 = np.log(n_b[i - 1]), np.log(n_b[i])
            frac = diff[i - 1] / (diff[i - 1] - diff[i])
            return float(np.exp(x0 + frac * (x1 - x0)))
    return None


# ---------------------------------------------------------------------------
# Level-set slices


@dataclass(frozen=True)
class SliceGrid:
    """R x R signed distances over an axis-aligned plane, row-major with u
    varying fastest; u/v are the two in-plane axes in ascending axis order."""

    axis: int
    offset: float
    resolution: int
    u_range: tuple[float, float]
    v_range: tuple[float, float]
    values: np.ndarray
    extrapolated: bool


def levelset_slice(distance_fn, normalization, axis: int, offset: float,
                   resolution: int, pad: float = 0.0) -> SliceGrid:
    """Evaluate the field on a plane grid.

    ``distance_fn(points) -> world distances`` is the collider's query path
    bound to one pose; the grid spans the training box (denormalized
    [-1,1]^3) plus optional padding. Grid points outside the training box are
    still evaluated and flagged as extrapolation.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    lo = normalization.denormalize_points(-np.ones(3)) - pad
    hi = normalization.denormalize_points(np.ones(3)) + pad
    axes = [k for k in range(3) if k != axis]
    u = np.linspace(lo[axes[0]], hi[axes[0]], resolution)
    v = np.linspace(lo[axes[1]], hi[axes[1]], resolution)
    pts = np.empty((resolution * resolution, 3))
    uu, vv = np.meshgrid(u, v, indexing="xy")
    pts[:, axes[0]] = uu.ravel()
    pts[:, axes[1]] = vv.ravel()
    pts[:, axis] = offset
    values = np.asarray(distance_fn(pts), np.float64).reshape(resolution, resolution)
    norm_pts = normalization.normalize_points(pts)
    extrapolated = bool((np.abs(norm_pts) > 1.0 + 1e-12).any())
    return SliceGrid(axis, offset, resolution, (float(u[0]), float(u[-1])),
                     (float(v[0]), float(v[-1])), values, extrapolated)


def slice_to_csv(grid: SliceGrid, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# axis={grid.axis} offset={grid.offset!r} resolution={grid.resolution} "
                 f"u={grid.u_range!r} v={grid.v_range!r} extrapolated={grid.extrapolated}\n")
        for row in grid.values:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def slice_to_pgm(grid: SliceGrid, path, d_max: float | None = None) -> None:
    """8-bit P5 image. Mapping: distance 0 -> 128, +d_max -> 255, -d_max -> 0
    (linear, clamped), with a light periodic banding overlay so iso-contours
    read at a glance."""
    v = grid.values
    if d_max is None:
        d_max = float(np.abs(v).max()) or 1.0
    base = np.clip(128.0 + 127.0 * v / d_max, 0, 255)
    bands = 12.0 * np.cos(np.pi * _PGM_LEVELS * v / d_max)
    img = np.clip(base + bands, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.resolution} {grid.resolution}\n255\n".encode())
        fh.write(img.tobytes())


# ---------------------------------------------------------------------------
# Accuracy against the oracle


class PoseEval(NamedTuple):
    """One held-out pose: the collider's prediction path and the exact-
    distance tree built over the same pose in the same frame."""

    predict: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    tree: AabbTree


def _band_points(tree: AabbTree, band: float, count: int, rng) -> np.ndarray:
    """Evaluation points with |oracle distance| <= band: surface points
    pushed along face normals by uniform offsets, plus box points filtered
    into the band. On-surface points (undefined sign) never appear."""
    surf = tree.mesh
    v, t = surf.vertices, surf.triangles
    cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    cum = np.cumsum(areas)

    n_off = count // 2
    faces = np.minimum(np.searchsorted(cum, rng.random(n_off) * cum[-1]), len(t) - 1)
    u, w = rng.random(n_off), rng.random(n_off)
    flip = u + w > 1.0
    u[flip], w[flip] = 1.0 - u[flip], 1.0 - w[flip]
    a = v[t[faces, 0]]
    on_surf = a + u[:, None] * (v[t[faces, 1]] - a) + w[:, None] * (v[t[faces, 2]] - a)
    offsets = rng.uniform(-0.98 * band, 0.98 * band, n_off)
    pts = [on_surf + offsets[:, None] * tree.pn.face[faces]]

    lo, hi = surf.bbox()
    box = rng.uniform(lo - band, hi + band, size=(count - n_off, 3))
    d_box = tree_signed_many(tree, box)[0]
    pts.append(box[np.abs(d_box) <= band])
    pts = np.concatenate(pts)
    d = tree_signed_many(tree, pts)[0]
    return pts[np.abs(d) <= band]


def evaluate_accuracy(pose_evals: list[PoseEval], band: float,
                      points_per_pose: int = 2000, seed: int = 0) -> dict:
    """Near-surface accuracy over held-out poses.

    Within the band |d_oracle| <= band: mean absolute distance error, sign
    agreement, and the angle between predicted normals and the oracle
    gradient direction (mean and 95th percentile, degrees).
    """
    abs_err, signs, angles = [], [], []
    for i, pe in enumerate(pose_evals):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, i))))
        pts = _band_points(pe.tree, band, points_per_pose, rng)
        d_oracle, cp, _, _ = tree_signed_many(pe.tree, pts)
        d_pred, n_pred = pe.predict(pts)
        abs_err.append(np.abs(d_pred - d_oracle))
        signs.append(np.sign(d_pred) == np.sign(d_oracle))

        offset = pts - cp
        norms = np.linalg.norm(offset, axis=1)
        ok = (norms > 1e-9) & np.isfinite(n_pred).all(axis=1)
        g_oracle = offset[ok] / norms[ok, None] * np.sign(d_oracle[ok])[:, None]
        cosang = np.clip(np.einsum("ij,ij->i", g_oracle, n_pred[ok]), -1.0, 1.0)
        angles.append(np.degrees(np.arccos(cosang)))

    abs_err = np.concatenate(abs_err)
    signs = np.concatenate(signs)
    angles = np.concatenate(angles) if angles else np.array([np.nan])
    return {
        "mae": float(abs_err.mean()),
        "sign_agreement": float(signs.mean()),
        "normal_mean_deg": float(angles.mean()),
        "normal_p95_deg": float(np.percentile(angles, 95)),
        "n_points": int(len(abs_err)),
    }


def machine_info() -> dict:
    import numba

    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "cpu_count": str(__import__("os").cpu_count()),
    }
