"""Command-line frontend.

Subcommands: gen-assets, modes, sample, train, query, bench, slice, eval.
Flag values override config-file values override defaults; every run echoes
its fully resolved configuration and writes it as a manifest next to the
outputs, so any run can be reproduced with ``--config <manifest>``.

Exit codes: 0 success, 1 usage error, 2 file/format error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import assets, bench, parallel
from .collide import NeuralCollider
from .dataset import (build_fem_dataset, build_skin_dataset, load_dataset,
                      save_dataset)
from .errors import (CodedSdfError, DegenerateGeometryError, FormatError,
                     NumericError, UsageError)
from .geom import RigidTransform, load_mesh, save_node_ele, save_obj
from .modes import (MaterialParams, assemble_fem_system, compute_linear_modes,
                    load_basis, save_basis)
from .net import TrainConfig, load_checkpoint, mlp_init, save_checkpoint, train
from .skin import AngleCodeMap, build_angle_code_map, load_character, save_character


def _ratio(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"ratio must look like 2:2:1, got {text!r}")
    return tuple(int(p) for p in parts)


def _int_list(text: str):
    return [int(p) for p in text.replace(",", " ").split()]


def _float_list(text: str):
    return [float(p) for p in text.replace(",", " ").split()]


@dataclass(frozen=True)
class Opt:
    name: str
    typ: Callable
    default: object
    help: str = ""
    flag: bool = False  # boolean store_true option


_COMMON = [
    Opt("threads", int, 1, "worker threads (outputs are identical for any value)"),
    Opt("seed", int, 0, "global random seed"),
]

_COMMANDS: dict[str, list[Opt]] = {
    "gen-assets": _COMMON + [
        Opt("out", str, "assets", "output directory"),
        Opt("subdivisions", int, 3, "icosphere subdivision level for the tet fixture"),
        Opt("bench_subdivisions", int, 4, "subdivision level for the benchmark sphere"),
        Opt("bump_amp", float, 0.12, "bump amplitude on the tet sphere"),
        Opt("char_resolution", int, 40, "marching-cubes grid for the character"),
        Opt("clip_frames", int, 120, "frames per synthetic clip"),
    ],
    "modes": _COMMON + [
        Opt("tet", str, None, ".node file of the tet mesh"),
        Opt("ele", str, None, ".ele file of the tet mesh"),
        Opt("m", int, 128, "number of modes"),
        Opt("youngs", float, 5e4, "Young's modulus"),
        Opt("poisson", float, 0.45, "Poisson ratio"),
        Opt("density", float, 1000.0, "density"),
        Opt("out", str, "basis.bin", "output basis file"),
    ],
    "sample": _COMMON + [
        Opt("tet", str, None, ".node file (FEM mode)"),
        Opt("ele", str, None, ".ele file (FEM mode)"),
        Opt("basis", str, None, "modal basis file (FEM mode)"),
        Opt("character", str, None, "character file (skinning mode)"),
        Opt("mesh", str, None, "character rest surface OBJ (skinning mode)"),
        Opt("exclude", str, "head,hand_l,hand_r,foot_l,foot_r",
            "comma-separated excluded joints (skinning mode)"),
        Opt("frame_stride", int, 1, "keep every k-th clip frame (skinning mode)"),
        Opt("frame_phase", int, 0, "stride phase (skinning mode)"),
        Opt("poses", int, 100, "number of training poses (FEM mode)"),
        Opt("per_pose", int, 2000, "SDF samples per pose"),
        Opt("ratio", _ratio, (2, 2, 1), "surface:near:uniform sample ratio"),
        Opt("amplitude", float, 1.0, "modal amplitude (FEM mode)"),
        Opt("noise", float, 0.0, "smooth non-modal noise fraction (FEM mode)"),
        Opt("sigma_frac", float, 0.01, "near-sample sigma as bbox-diagonal fraction"),
        Opt("out", str, "data.ncds", "output dataset file"),
    ],
    "train": _COMMON + [
        Opt("data", str, None, "dataset file"),
        Opt("lr", float, 1e-4, "learning rate"),
        Opt("delta", float, 0.1, "loss clamp"),
        Opt("layers", int, 8, "hidden layers"),
        Opt("width", int, 128, "hidden width"),
        Opt("epochs", int, 200, "training epochs"),
        Opt("batch", int, 1024, "minibatch size"),
        Opt("val_fraction", float, 0.1, "held-out fraction"),
        Opt("log_every", int, 10, "epochs between progress lines (0 = quiet)"),
        Opt("out", str, "ckpt.ncnn", "output checkpoint"),
    ],
    "query": _COMMON + [
        Opt("ckpt", str, None, "checkpoint file"),
        Opt("tet", str, None, ".node file (FEM mode)"),
        Opt("ele", str, None, ".ele file (FEM mode)"),
        Opt("basis", str, None, "modal basis file (FEM mode)"),
        Opt("pose", str, None, "deformed pose .node file (FEM mode; default rest)"),
        Opt("character", str, None, "character file (skinning mode)"),
        Opt("mesh", str, None, "character rest surface OBJ (skinning mode)"),
        Opt("clip", str, None, "clip name (skinning mode)"),
        Opt("frame", int, 0, "frame index within the clip"),
        Opt("root", _float_list, None, "root transform: 9 rotation + 3 translation values"),
        Opt("points", str, None, "text file of query points, one x y z per line"),
        Opt("triangles", bool, False, "resolve triangle IDs (FEM mode)", flag=True),
        Opt("out", str, "query.csv", "output CSV"),
    ],
    "bench": _COMMON + [
        Opt("ckpt", str, None, "checkpoint file"),
        Opt("tet", str, None, ".node file (FEM mode)"),
        Opt("ele", str, None, ".ele file (FEM mode)"),
        Opt("basis", str, None, "modal basis file (FEM mode)"),
        Opt("character", str, None, "character file (skinning mode)"),
        Opt("mesh", str, None, "surface OBJ (skinning mode, or FEM override)"),
        Opt("amplitude", float, 1.0, "pose amplitude (FEM mode)"),
        Opt("ns", _int_list, [2 ** k for k in range(17)], "query counts"),
        Opt("reps", int, 9, "repetitions per count"),
        Opt("warmup", int, 2, "discarded warm-up repetitions"),
        Opt("out", str, "bench-out", "output directory"),
    ],
    "slice": _COMMON + [
        Opt("ckpt", str, None, "checkpoint file"),
        Opt("tet", str, None, ".node file (FEM mode)"),
        Opt("ele", str, None, ".ele file (FEM mode)"),
        Opt("basis", str, None, "modal basis file (FEM mode)"),
        Opt("pose", str, None, "deformed pose .node file (FEM mode)"),
        Opt("character", str, None, "character file (skinning mode)"),
        Opt("mesh", str, None, "character rest surface OBJ (skinning mode)"),
        Opt("clip", str, None, "clip name (skinning mode)"),
        Opt("frame", int, 0, "frame index"),
        Opt("axis", str, "z", "slice plane normal axis (x|y|z)"),
        Opt("offset", float, 0.0, "plane offset along the axis"),
        Opt("resolution", int, 128, "grid resolution"),
        Opt("pad", float, 0.0, "extra world-units margin around the training box"),
        Opt("out", str, "slice-out", "output directory"),
    ],
    "eval": _COMMON + [
        Opt("ckpt", str, None, "checkpoint file"),
        Opt("tet", str, None, ".node file (FEM mode)"),
        Opt("ele", str, None, ".ele file (FEM mode)"),
        Opt("basis", str, None, "modal basis file (FEM mode)"),
        Opt("character", str, None, "character file (skinning mode)"),
        Opt("mesh", str, None, "character rest surface OBJ (skinning mode)"),
        Opt("amplitude", float, 1.0, "held-out pose amplitude (FEM mode)"),
        Opt("frame_stride", int, 5, "evaluate every k-th frame (skinning mode)"),
        Opt("frame_phase", int, 0, "stride phase (skinning mode)"),
        Opt("poses", int, 20, "held-out pose count (FEM mode)"),
        Opt("per_pose", int, 2000, "evaluation points per pose"),
        Opt("band_frac", float, 0.05, "near-surface band as bbox-diagonal fraction"),
        Opt("out", str, "eval-out", "output directory"),
    ],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="codedsdf", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    for cmd, opts in _COMMANDS.items():
        p = sub.add_parser(cmd, description=f"codedsdf {cmd}")
        p.add_argument("--config", default=None, help="key = value config file")
        for o in opts:
            flag = "--" + o.name.replace("_", "-")
            if o.flag:
                p.add_argument(flag, dest=o.name, action="store_const", const=True,
                               default=None, help=o.help)
            else:
                p.add_argument(flag, dest=o.name, type=str, default=None, help=o.help)
    return parser


def _parse_config_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise FormatError(f"{path}: no such config file")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = body.partition("=")
            out[key.strip()] = value.strip()
    return out


def _coerce(o: Opt, raw):
    if raw is None or not isinstance(raw, str):
        return raw
    if o.flag or o.typ is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    try:
        return o.typ(raw)
    except ValueError as e:
        raise UsageError(f"bad value for --{o.name.replace('_', '-')}: {e}") from None


def resolve_config(cmd: str, args: argparse.Namespace) -> dict:
    """Flags > config file > defaults; unknown config keys are rejected."""
    opts = {o.name: o for o in _COMMANDS[cmd]}
    file_values = _parse_config_file(args.config) if args.config else {}
    for key in file_values:
        if key not in opts:
            raise UsageError(f"unknown config key {key!r} for command {cmd!r}")
    cfg = {}
    for name, o in opts.items():
        flag_val = getattr(args, name)
        if flag_val is not None:
            cfg[name] = _coerce(o, flag_val)
        elif name in file_values:
            cfg[name] = _coerce(o, file_values[name])
        else:
            cfg[name] = o.default
    return cfg


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def _echo_and_manifest(cmd: str, cfg: dict, manifest_path: str) -> None:
    lines = [f"{k} = {_fmt_value(v)}" for k, v in sorted(cfg.items()) if v is not None]
    print(f"[codedsdf {cmd}] resolved config:")
    for ln in lines:
        print("  " + ln)
    os.makedirs(os.path.dirname(os.path.abspath(manifest_path)), exist_ok=True)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(f"# codedsdf {cmd} manifest; rerun with: codedsdf {cmd} --config <this file>\n")
        for k, v in sorted(bench.machine_info().items()):
            fh.write(f"# {k}: {v}\n")
        fh.write("\n".join(lines) + "\n")


def _require(cfg: dict, *names: str) -> None:
    for n in names:
        if cfg.get(n) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required here")


def _outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Shared context loading


def _load_fem_context(cfg):
    _require(cfg, "ckpt", "tet", "ele", "basis")
    mesh = load_mesh(cfg["tet"], "tet-node-ele")
    basis = load_basis(cfg["basis"])
    bundle = load_checkpoint(cfg["ckpt"])
    collider = NeuralCollider(bundle.net, bundle.normalization, basis=basis, rest=mesh)
    return mesh, basis, bundle, collider


def _load_skin_context(cfg):
    _require(cfg, "ckpt", "character", "mesh")
    skel, weights, clips = load_character(cfg["character"])
    surf = load_mesh(cfg["mesh"], "surface-obj")
    bundle = load_checkpoint(cfg["ckpt"])
    if "code_map" not in bundle.encoder_meta:
        raise FormatError(f"{cfg['ckpt']}: checkpoint carries no joint-angle code map")
    cmap = AngleCodeMap.from_jsonable(bundle.encoder_meta["code_map"])
    collider = NeuralCollider(bundle.net, bundle.normalization, code_map=cmap,
                              skeleton=skel, surface=surf)
    return skel, weights, clips, surf, cmap, bundle, collider


def _skin_frames(clips, stride: int, phase: int) -> np.ndarray:
    frames = np.concatenate([c.frames for c in clips])
    return frames[phase::stride]


def _load_points(path: str) -> np.ndarray:
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].split()
            if not body:
                continue
            if len(body) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 coordinates")
            pts.append([float(x) for x in body])
    if not pts:
        raise FormatError(f"{path}: no points found")
    return np.array(pts)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_assets(cfg) -> int:
    out = _outdir(cfg["out"])
    save_obj(os.path.join(out, "cube.obj"), assets.unit_cube())
    save_obj(os.path.join(out, "icosphere.obj"),
             assets.icosphere(1.0, cfg["bench_subdivisions"]))
    tet = assets.bumpy_tet_sphere(1.0, cfg["subdivisions"], cfg["bump_amp"], seed=cfg["seed"])
    save_node_ele(os.path.join(out, "bumpy"), tet)
    skel = assets.character_skeleton()
    mesh = assets.character_mesh(skel, cfg["char_resolution"])
    weights = assets.character_weights(skel, mesh)
    clips = assets.synthetic_clips(skel, cfg["clip_frames"], seed=cfg["seed"] + 11)
    save_obj(os.path.join(out, "character.obj"), mesh)
    save_character(os.path.join(out, "character.txt"), skel, weights, clips)
    print(f"assets written to {out}/ (cube.obj, icosphere.obj, bumpy.node/.ele, "
          f"character.obj, character.txt)")
    return 0


def cmd_modes(cfg) -> int:
    _require(cfg, "tet", "ele")
    mesh = load_mesh(cfg["tet"], "tet-node-ele")
    mat = MaterialParams(cfg["youngs"], cfg["poisson"], cfg["density"])
    system = assemble_fem_system(mesh, mat)
    basis = compute_linear_modes(system, cfg["m"])
    save_basis(cfg["out"], basis)
    print(f"{basis.num_modes} modes over {basis.num_vertices} vertices -> {cfg['out']}")
    return 0


def cmd_sample(cfg) -> int:
    if cfg["character"] is not None:
        _require(cfg, "character", "mesh")
        skel, weights, clips = load_character(cfg["character"])
        surf = load_mesh(cfg["mesh"], "surface-obj")
        excluded = [s for s in cfg["exclude"].split(",") if s]
        cmap = build_angle_code_map(clips, skel, excluded)
        frames = _skin_frames(clips, cfg["frame_stride"], cfg["frame_phase"])
        ds = build_skin_dataset(surf, weights, skel, cmap, frames, cfg["per_pose"],
                                cfg["ratio"], cfg["sigma_frac"], cfg["seed"])
        ds.metadata["code_map"] = cmap.to_jsonable()
        ds.metadata["character_ref"] = cfg["character"]
    else:
        _require(cfg, "tet", "ele", "basis")
        mesh = load_mesh(cfg["tet"], "tet-node-ele")
        basis = load_basis(cfg["basis"])
        ds = build_fem_dataset(mesh, basis, cfg["poses"], cfg["per_pose"],
                               cfg["amplitude"], cfg["ratio"], cfg["sigma_frac"],
                               cfg["noise"], cfg["seed"])
        ds.metadata["basis_ref"] = cfg["basis"]
    save_dataset(cfg["out"], ds)
    c = ds.metadata["counts"]
    print(f"{len(ds)} samples ({c['surface']} surface / {c['near']} near / "
          f"{c['uniform']} uniform) -> {cfg['out']}")
    return 0


def cmd_train(cfg) -> int:
    _require(cfg, "data")
    ds = load_dataset(cfg["data"])
    config = TrainConfig(cfg["lr"], cfg["delta"], cfg["epochs"], cfg["batch"],
                         cfg["seed"], cfg["val_fraction"])
    network = mlp_init(3 + ds.code_dim, cfg["width"], cfg["layers"], cfg["seed"])
    network, history = train(ds, config, network, log_every=cfg["log_every"])
    meta = {"kind": ds.metadata.get("kind", "unknown"),
            "dataset_seed": ds.metadata.get("seed")}
    for key in ("code_map", "basis_ref", "character_ref"):
        if key in ds.metadata:
            meta[key] = ds.metadata[key]
    save_checkpoint(cfg["out"], network, ds.normalization, meta)
    final_val = history.val_loss[-1] if history.val_loss else float("nan")
    print(f"trained {cfg['epochs']} epochs: train loss {history.train_loss[-1]:.5f}, "
          f"val loss {final_val:.5f} -> {cfg['out']}")
    return 0


def _query_results_csv(path, points, results) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,z,distance,nx,ny,nz,triangle,colliding,flags\n")
        for p, r in zip(points, results):
            n = r.normal if r.normal is not None else (float("nan"),) * 3
            tri = r.triangle if r.triangle is not None else -1
            flags = ("degenerate_normal" if r.degenerate_normal else "") + \
                    ("|no_hit" if r.no_triangle_hit else "")
            fh.write(f"{p[0]!r},{p[1]!r},{p[2]!r},{r.distance!r},"
                     f"{n[0]!r},{n[1]!r},{n[2]!r},{tri},{int(r.colliding)},{flags}\n")


def cmd_query(cfg) -> int:
    _require(cfg, "points")
    points = _load_points(cfg["points"])
    if cfg["character"] is not None:
        skel, weights, clips, surf, cmap, bundle, collider = _load_skin_context(cfg)
        angles = _clip_frame(clips, cfg["clip"], cfg["frame"])
        root = _parse_root(cfg["root"])
        results = collider.query_skin(angles, root, points)
    else:
        mesh, basis, bundle, collider = _load_fem_context(cfg)
        x = mesh.vertices if cfg["pose"] is None else _load_pose(cfg["pose"], mesh)
        results = collider.query_fem(x, points, want_triangles=cfg["triangles"])
    _query_results_csv(cfg["out"], points, results)
    hits = sum(r.colliding for r in results)
    print(f"{len(results)} queries, {hits} colliding -> {cfg['out']}")
    return 0


def _load_pose(path, mesh) -> np.ndarray:
    posed = load_mesh(path, "tet-node-ele") if path.endswith((".node", ".ele")) else None
    if posed is None:
        raise UsageError("--pose must be a .node file of deformed vertices")
    if posed.num_vertices != mesh.num_vertices:
        raise FormatError(f"{path}: pose has {posed.num_vertices} vertices, "
                          f"rest has {mesh.num_vertices}")
    return posed.vertices


def _clip_frame(clips, name, frame) -> np.ndarray:
    if name is None:
        name = clips[0].name
    for c in clips:
        if c.name == name:
            if not 0 <= frame < len(c.frames):
                raise UsageError(f"frame {frame} out of range for clip {name!r}")
            return c.frames[frame]
    raise UsageError(f"no clip named {name!r}")


def _parse_root(vals) -> RigidTransform:
    if vals is None:
        return RigidTransform.identity()
    if len(vals) != 12:
        raise UsageError("--root needs 12 numbers: row-major rotation then translation")
    return RigidTransform(np.array(vals[:9]).reshape(3, 3), np.array(vals[9:]))


def _fem_pose_stream(mesh, basis, amplitude, seed):
    from .dataset import generate_fem_poses

    cache = {}

    def pose(trial: int) -> np.ndarray:
        if trial not in cache:
            cache.clear()  # one-deep: trials are visited in order
            poses, _ = generate_fem_poses(mesh, basis, 1, amplitude, seed=seed + trial)
            cache[trial] = poses[0]
        return cache[trial]

    return pose


def cmd_bench(cfg) -> int:
    out = _outdir(cfg["out"])
    if cfg["character"] is not None:
        skel, weights, clips, surf, cmap, bundle, collider = _load_skin_context(cfg)
        frames = np.concatenate([c.frames for c in clips])
        from .dataset import skin_pose_surface
        from .geom import RigidTransform as RT

        def surface(trial):
            return skin_pose_surface(surf, weights, skel, frames[trial % len(frames)])

        def neural_eval(trial, pts):
            return collider.distances_skin(frames[trial % len(frames)],
                                           RT.identity(), pts)

        label = "character"
    else:
        mesh, basis, bundle, collider = _load_fem_context(cfg)
        pose_of = _fem_pose_stream(mesh, basis, cfg["amplitude"], cfg["seed"] + 1000)
        surf_rest, vmap = collider.surface, collider.surface_map

        def surface(trial):
            return surf_rest.with_vertices(pose_of(trial)[vmap])

        def neural_eval(trial, pts):
            return collider.distances_fem(pose_of(trial), pts)

        label = "fem"

    source = bench.PoseSource(surface, neural_eval, label)
    records = bench.run_benchmark(source, cfg["ns"], cfg["reps"], cfg["warmup"], cfg["seed"])
    bench.records_to_csv(records, os.path.join(out, "bench.csv"))
    summary = [
        f"neural log-log slope (top decade): {bench.loglog_slope(records, 'neural-cpu'):.3f}",
        f"bvh log-log slope (top decade): {bench.loglog_slope(records, 'bvh'):.3f}",
    ]
    x = bench.crossover(records)
    summary.append("crossover: none (neural never overtaken)" if x is None
                   else f"crossover: N* ~ {x:.0f} (hardware-dependent, not a target)")
    for k, v in sorted(bench.machine_info().items()):
        summary.append(f"machine {k}: {v}")
    with open(os.path.join(out, "bench.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(summary) + "\n")
    print("\n".join(summary))
    print(f"-> {out}/bench.csv")
    return 0


def cmd_slice(cfg) -> int:
    out = _outdir(cfg["out"])
    axis = {"x": 0, "y": 1, "z": 2}.get(cfg["axis"])
    if axis is None:
        raise UsageError("--axis must be x, y, or z")
    if cfg["character"] is not None:
        skel, weights, clips, surf, cmap, bundle, collider = _load_skin_context(cfg)
        angles = _clip_frame(clips, cfg["clip"], cfg["frame"])
        root = RigidTransform.identity()
        distance_fn = lambda pts: np.array(
            [r.distance for r in collider.query_skin(angles, root, pts)])
    else:
        mesh, basis, bundle, collider = _load_fem_context(cfg)
        x = mesh.vertices if cfg["pose"] is None else _load_pose(cfg["pose"], mesh)
        distance_fn = lambda pts: np.array(
            [r.distance for r in collider.query_fem(x, pts)])
    grid = bench.levelset_slice(distance_fn, bundle.normalization, axis,
                                cfg["offset"], cfg["resolution"], cfg["pad"])
    bench.slice_to_csv(grid, os.path.join(out, "slice.csv"))
    bench.slice_to_pgm(grid, os.path.join(out, "slice.pgm"))
    print(f"slice axis={cfg['axis']} offset={cfg['offset']} "
          f"extrapolated={grid.extrapolated} -> {out}/slice.csv, {out}/slice.pgm")
    return 0


def cmd_eval(cfg) -> int:
    out = _outdir(cfg["out"])
    from .distance import build_aabb_tree

    pose_evals = []
    if cfg["character"] is not None:
        skel, weights, clips, surf, cmap, bundle, collider = _load_skin_context(cfg)
        from .dataset import skin_pose_surface

        frames = _skin_frames(clips, cfg["frame_stride"], cfg["frame_phase"])
        ident = RigidTransform.identity()
        for angles in frames:
            posed = skin_pose_surface(surf, weights, skel, angles)
            tree = build_aabb_tree(posed)
            pose_evals.append(bench.PoseEval(
                lambda pts, a=angles: collider.distances_and_normals_skin(a, ident, pts),
                tree))
        bbox_lo = np.min([pe.tree.mesh.bbox()[0] for pe in pose_evals], axis=0)
        bbox_hi = np.max([pe.tree.mesh.bbox()[1] for pe in pose_evals], axis=0)
    else:
        mesh, basis, bundle, collider = _load_fem_context(cfg)
        from .dataset import generate_fem_poses
        from .modes import encode_fem

        poses, _ = generate_fem_poses(mesh, basis, cfg["poses"], cfg["amplitude"],
                                      seed=cfg["seed"])
        surf_rest, vmap = collider.surface, collider.surface_map
        for x in poses:
            tree = build_aabb_tree(surf_rest.with_vertices(x[vmap]))
            pose_evals.append(bench.PoseEval(
                lambda pts, xx=x: collider.distances_and_normals_fem(xx, pts), tree))
        bbox_lo = np.min([pe.tree.mesh.bbox()[0] for pe in pose_evals], axis=0)
        bbox_hi = np.max([pe.tree.mesh.bbox()[1] for pe in pose_evals], axis=0)

    band = cfg["band_frac"] * float(np.linalg.norm(bbox_hi - bbox_lo))
    stats = bench.evaluate_accuracy(pose_evals, band, cfg["per_pose"], cfg["seed"])
    lines = [f"{k} = {v!r}" for k, v in sorted(stats.items())] + [f"band = {band!r}"]
    with open(os.path.join(out, "eval.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


_HANDLERS = {
    "gen-assets": cmd_gen_assets,
    "modes": cmd_modes,
    "sample": cmd_sample,
    "train": cmd_train,
    "query": cmd_query,
    "bench": cmd_bench,
    "slice": cmd_slice,
    "eval": cmd_eval,
}


def run_cli(argv: list[str]) -> int:
    """Parse and execute; raises package errors for main() to map."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 1
    cfg = resolve_config(args.command, args)
    parallel.set_workers(cfg["threads"])
    out = cfg.get("out", "run")
    manifest = (os.path.join(out, "manifest.cfg")
                if args.command in ("gen-assets", "bench", "slice", "eval")
                else str(out) + ".manifest")
    _echo_and_manifest(args.command, cfg, manifest)
    return _HANDLERS[args.command](cfg)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run_cli(argv)
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return 1
    except (FormatError, FileNotFoundError, OSError) as e:
        print(f"error: io: {e}", file=sys.stderr)
        return 2
    except (NumericError, DegenerateGeometryError) as e:
        print(f"error: numeric: {e}", file=sys.stderr)
        return 3
    except CodedSdfError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
