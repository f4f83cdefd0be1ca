"""Command line entry points: ``simulate``, ``sync``, ``optimize``, ``eval``.

Every command takes ``--out``; ``--config`` points at a JSON document whose
keys override the defaults below, and the fully resolved configuration is
written to ``<out>/config.json`` so a run can be reproduced from it.

Exit codes: 0 success, 1 input or schema error, 2 numerical divergence.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
import warnings
from contextlib import nullcontext
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from .events import EventParseError, parse_events, write_events
from .formats import (FormatError, read_f32, read_image, read_tum, write_checkpoint, write_f32,
                      write_png, write_tum)
from .geometry import Intrinsics, Pointmap, Pose
from .metrics import MetricsError, Trajectory, ate, depth_metrics, rpe
from .objective import PairEdge, Weights
from .pipeline import Frames, PatchConfig, build_inputs, make_edges, synthesize
from .solver import DivergenceError, SolverConfig, optimize
from .state import GlobalState
from .sync import SensorStreams, SyncWarning, align_day, align_night
from .synth import DepthModel, SceneSpec, SceneSpecError, TextureSpec, orbit_trajectory, perturb

log = logging.getLogger("evopt")

THREADS_ENV = "EVOPT_THREADS"


class InputError(ValueError):
    """Bad or missing input; maps to exit code 1."""


# ---------------------------------------------------------------- configuration

DEFAULT_CONFIG = {
    "seed": 0,
    "weights": {"w_smooth": 0.01, "w_flow": 0.01, "w_event_base": 0.01},
    "solver": {"iters": 300, "lr": 0.01, "window": 10, "stride": 1, "depth_mode": "pixel",
               "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "patches": {"half_width": 7, "max_corners": 64, "harris_k": 0.04, "harris_sigma": 1.0,
                "nms_radius": 5, "max_motion_spread": 1.5},
    "snr": {"kernel": 5, "epsilon": 1e-3},
    "init": {"sigma_rot_deg": 0.0, "sigma_trans": 0.0, "sigma_logdepth": 0.0},
    "eval": {"scale_align": False, "rpe_delta": 1},
    "formats": {"png": True, "png_bits": 16},
}

_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


CONFIG_SCHEMA = _obj({
    "command": {"type": "string"},  # recorded in snapshots, ignored on input
    "seed": {"type": "integer", "minimum": 0},
    "weights": _obj({"w_smooth": _nonneg, "w_flow": _nonneg, "w_event_base": _nonneg}),
    "solver": _obj({
        "iters": {"type": "integer", "minimum": 1},
        "lr": _pos,
        "window": {"type": "integer", "minimum": 2},
        "stride": {"type": "integer", "minimum": 1},
        "depth_mode": {"enum": ["pixel", "frame"]},
        "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "eps": _pos,
    }),
    "patches": _obj({
        "half_width": {"type": "integer", "minimum": 1},
        "max_corners": {"type": "integer", "minimum": 0},
        "harris_k": _num,
        "harris_sigma": _pos,
        "nms_radius": {"type": "integer", "minimum": 0},
        "max_motion_spread": _pos,
    }),
    "snr": _obj({"kernel": {"type": "integer", "minimum": 1}, "epsilon": _pos}),
    "init": _obj({"sigma_rot_deg": _nonneg, "sigma_trans": _nonneg, "sigma_logdepth": _nonneg}),
    "eval": _obj({"scale_align": {"type": "boolean"}, "rpe_delta": {"type": "integer", "minimum": 1}}),
    "formats": _obj({"png": {"type": "boolean"}, "png_bits": {"enum": [8, 16]}}),
})

_intrinsics = _obj({"fx": _pos, "fy": _pos, "cx": _num, "cy": _num}, ["fx", "fy", "cx", "cy"])
_vec = lambda n: {"type": "array", "items": _num, "minItems": n, "maxItems": n}  # noqa: E731

SCENE_SCHEMA = _obj({
    "width": {"type": "integer", "minimum": 1},
    "height": {"type": "integer", "minimum": 1},
    "intrinsics": _intrinsics,
    "trajectory": _obj({
        "kind": {"enum": ["orbit", "static", "samples"]},
        "n_keys": {"type": "integer", "minimum": 2},
        "duration": _pos,
        "radius": _num,
        "look_at_depth": _pos,
        "jitter": _nonneg,
        "pose": _vec(7),
        "samples": {"type": "array", "items": _vec(8), "minItems": 1},
    }, ["kind"]),
    "frame_times": {"oneOf": [
        {"type": "array", "items": _num, "minItems": 1},
        _obj({"start": _num, "end": _num, "count": {"type": "integer", "minimum": 1}},
             ["start", "end", "count"]),
    ]},
    "texture": _obj({k: (_int if k == "noise_components" else _num)
                     for k in TextureSpec.__dataclass_fields__}),
    "depth_model": _obj({"kind": {"enum": ["plane", "relief"]}, "normal": _vec(3),
                         "offset": _num, "amplitude": _num, "wavelength": _pos}),
    "contrast_C": _pos,
    "seed": {"type": "integer", "minimum": 0},
    "events": _obj({"mode": {"enum": ["linearized", "threshold"]}, "quantum_divisor": _pos,
                    "flows": {"type": "boolean"}}),
}, ["width", "height", "intrinsics", "trajectory", "frame_times"])


def _validate(doc, schema, what: str):
    err = jsonschema.exceptions.best_match(jsonschema.Draft7Validator(schema).iter_errors(doc))
    if err is not None:
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise InputError(f"{what} field {where}: {err.message}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _read_json(path, what: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path} is not valid JSON: {exc}") from None


def resolve_config(path=None, seed=None) -> dict:
    """Defaults overridden by the JSON at ``path`` and then by ``seed``."""
    user = _read_json(path, "config") if path else {}
    _validate(user, CONFIG_SCHEMA, "config")
    cfg = _merge(DEFAULT_CONFIG, user)
    if seed is not None:
        cfg["seed"] = seed
    _validate(cfg, CONFIG_SCHEMA, "config")
    return cfg


def _dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- scene

def _pose7(v) -> Pose:
    """[tx, ty, tz, qx, qy, qz, qw] (TUM order) to a Pose."""
    return Pose(np.array([v[6], v[3], v[4], v[5]]), v[:3])


def _frame_times(ft) -> np.ndarray:
    if isinstance(ft, dict):
        return np.linspace(ft["start"], ft["end"], ft["count"])
    t = np.asarray(ft, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise InputError("scene field frame_times: must be strictly increasing")
    return t


def scene_from_json(doc: dict, seed=None) -> tuple[SceneSpec, np.ndarray, dict]:
    """(SceneSpec, frame times, event options) from a validated scene document."""
    _validate(doc, SCENE_SCHEMA, "scene")
    times = _frame_times(doc["frame_times"])
    seed = doc.get("seed", 0) if seed is None else seed
    tj = doc["trajectory"]
    kind = tj["kind"]
    if kind == "orbit":
        traj = orbit_trajectory(tj.get("n_keys", 10), tj.get("duration", float(times[-1]) or 1.0),
                                tj.get("radius", 0.4), tj.get("look_at_depth", 3.0), seed,
                                tj.get("jitter", 0.0))
    elif kind == "static":
        P = _pose7(tj["pose"]) if "pose" in tj else Pose.identity()
        t_end = float(times[-1]) if times[-1] > times[0] else float(times[0]) + 1.0
        traj = [(float(times[0]), P), (t_end, P)]
    else:
        if "samples" not in tj:
            raise InputError("scene field trajectory.samples: required for kind 'samples'")
        traj = [(s[0], _pose7(s[1:])) for s in tj["samples"]]
    dm = doc.get("depth_model", {})
    depth_model = DepthModel(**{**dm, "normal": tuple(dm.get("normal", (0.0, 0.0, 1.0)))})
    try:
        spec = SceneSpec(doc["width"], doc["height"], Intrinsics(**doc["intrinsics"]), traj,
                         TextureSpec(**doc.get("texture", {})), depth_model,
                         doc.get("contrast_C", 0.2), seed, tuple(times.tolist()))
    except SceneSpecError as exc:
        raise InputError(f"scene field {exc}") from None
    ev = {"mode": "linearized", "quantum_divisor": 8.0, "flows": True, **doc.get("events", {})}
    return spec, times, ev


# ---------------------------------------------------------------- simulate

def cmd_simulate(scene_path, out_dir, cfg: dict, seed=None) -> dict:
    """Render a scene; ``seed`` (when given) overrides the scene's own seed."""
    doc = _read_json(scene_path, "scene")
    spec, times, ev = scene_from_json(doc, seed)
    out = Path(out_dir)
    for sub in ("frames", "depth", "flows"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    try:
        seq = synthesize(spec, times, ev["mode"], ev["quantum_divisor"], ev["flows"])
    except ValueError as exc:
        raise InputError(f"scene cannot be rendered: {exc}") from None
    frames = []
    for i, (t, img, d) in enumerate(zip(times, seq.frames.images, seq.gt_depths)):
        name = f"{i:06d}"
        write_f32(out / "frames" / f"{name}.f32", img)
        if cfg["formats"]["png"]:
            write_png(out / "frames" / f"{name}.png", img, cfg["formats"]["png_bits"])
        write_f32(out / "depth" / f"{name}.f32", d)
        frames.append({"t": float(t), "image": f"frames/{name}.f32", "depth": f"depth/{name}.f32"})
    write_events(out / "events.csv", seq.frames.events)
    write_tum(out / "trajectory.tum", times, seq.gt_poses)
    flows = []
    for (i, j), du in sorted(seq.frames.flows.items()):
        stem = f"flows/{i:06d}_{j:06d}"
        write_f32(out / f"{stem}.f32", du)
        write_f32(out / f"{stem}_mask.f32", seq.frames.masks[(i, j)].astype(float))
        flows.append({"pair": [i, j], "flow": f"{stem}.f32", "mask": f"{stem}_mask.f32"})
    manifest = {
        "width": spec.width, "height": spec.height,
        "intrinsics": spec.intrinsics.to_dict(),
        "frames": frames,
        "events": "events.csv",
        "trajectory": "trajectory.tum",
        "flows": flows,
        "quanta": [float(q) for q in seq.quanta],
    }
    _dump_json(out / "manifest.json", manifest)
    resolved_scene = {**doc, "seed": spec.seed}
    _dump_json(out / "scene.json", resolved_scene)
    return {"frames": len(frames), "events": len(seq.frames.events)}


# ---------------------------------------------------------------- optimize

def _path(base: Path, rel) -> Path:
    p = base / rel
    if not p.exists():
        raise InputError(f"referenced file not found: {p}")
    return p


def _squeeze(a):
    return a[..., 0] if a.ndim == 3 and a.shape[2] == 1 else a


def _load_pointmap_edges(base, entries, poses, depths_out, K):
    """Edges from pointmap files; also fills per-frame depth where missing."""
    edges = []
    for e in entries:
        a, b = e["pair"]
        Xaa = read_f32(_path(base, e["aa"]))
        Xba = read_f32(_path(base, e["ba"]))
        ca = _squeeze(read_f32(_path(base, e["conf_aa"]))) if "conf_aa" in e else np.ones(Xaa.shape[:2])
        cb = _squeeze(read_f32(_path(base, e["conf_ba"]))) if "conf_ba" in e else np.ones(Xba.shape[:2])
        edges.append(PairEdge(a, b, Pointmap(Xaa, ca, "cam_a"), Pointmap(Xba, cb, "cam_a"), poses[a]))
        if depths_out[a] is None:
            depths_out[a] = Xaa[..., 2]
        if depths_out[b] is None:
            depths_out[b] = (poses[b].inverse() @ poses[a]).apply(Xba)[..., 2]
    return edges


def load_problem(manifest_path, cfg: dict):
    """Frames, initial state and objective inputs described by a manifest."""
    mpath = Path(manifest_path)
    man = _read_json(mpath, "manifest")
    base = mpath.parent
    missing = [k for k in ("width", "height", "intrinsics", "frames", "events") if k not in man]
    frames_doc = man.get("frames", [])
    if frames_doc and any("image" not in f for f in frames_doc):
        missing.append("images")
    has_depth = bool(frames_doc) and all("depth" in f for f in frames_doc)
    if not has_depth and "pointmaps" not in man:
        missing.append("pointmaps (or depth-init)")
    if "init_trajectory" not in man and "trajectory" not in man:
        missing.append("trajectory")
    if missing:
        raise InputError("manifest is missing required inputs: " + ", ".join(missing))
    W, H = int(man["width"]), int(man["height"])
    try:
        K = Intrinsics(**man["intrinsics"])
    except TypeError as exc:
        raise InputError(f"manifest field intrinsics: {exc}") from None
    times = np.array([float(f["t"]) for f in frames_doc])
    images = [read_image(_path(base, f["image"])) for f in frames_doc]
    events = parse_events(_path(base, man["events"]), W, H)
    ttimes, tposes = read_tum(_path(base, man.get("init_trajectory", man.get("trajectory"))))
    if len(ttimes) != len(times) or np.max(np.abs(ttimes - times)) > 1e-6:
        raise InputError("trajectory timestamps do not match the frame timestamps")
    depths = [_squeeze(read_f32(_path(base, f["depth"]))) if "depth" in f else None for f in frames_doc]
    if "pointmaps" in man:
        edges = _load_pointmap_edges(base, man["pointmaps"], tposes, depths, K)
    else:
        s = cfg["solver"]
        edges = make_edges(np.array(depths), tposes, [K], s["window"], s["stride"])
    if any(d is None for d in depths):
        raise InputError("some frames have neither depth nor a pointmap")
    depths = np.array(depths)
    flows, masks = {}, {}
    for fl in man.get("flows", []):
        key = tuple(fl["pair"])
        flows[key] = read_f32(_path(base, fl["flow"]))[..., :2]
        if "mask" in fl:
            masks[key] = _squeeze(read_f32(_path(base, fl["mask"]))) > 0.5
    frames = Frames(images, times, depths, list(tposes), [K], events, flows, masks)

    state = GlobalState.from_depths(tposes, [K], depths, [e.pairwise_pose for e in edges],
                                    [e.scale for e in edges])
    ini = cfg["init"]
    if ini["sigma_rot_deg"] or ini["sigma_trans"] or ini["sigma_logdepth"]:
        state = perturb(state, math.radians(ini["sigma_rot_deg"]), ini["sigma_trans"],
                        ini["sigma_logdepth"], seed=cfg["seed"])
        state.edge_poses = [state.poses[e.frame_a] for e in edges]
    w = cfg["weights"]
    p = cfg["patches"]
    patch_cfg = PatchConfig(p["half_width"], p["max_corners"], p["harris_k"], p["harris_sigma"],
                            p["nms_radius"], p["max_motion_spread"], cfg["snr"]["kernel"],
                            cfg["snr"]["epsilon"])
    inputs = build_inputs(frames, state, edges, Weights(w["w_smooth"], w["w_flow"], w["w_event_base"]),
                          patch_cfg)
    return frames, state, inputs


def solver_config(cfg: dict) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(iters=s["iters"], lr=s["lr"], beta1=s["beta1"], beta2=s["beta2"],
                        eps=s["eps"], depth_mode=s["depth_mode"])


LOSS_COLUMNS = ("iter", "align", "smooth", "flow", "event", "total")


def write_loss_csv(path, trace) -> None:
    """Per-iteration weighted loss terms, written with round-trip precision."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(LOSS_COLUMNS)
        for it, bd in enumerate(trace):
            wr.writerow([it, *(repr(float(v)) for v in (*bd.weighted(), bd.total))])


def _write_state(out: Path, times, state: GlobalState) -> None:
    write_tum(out / "trajectory.tum", times, state.poses)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    for i in range(state.n_frames):
        write_f32(out / "depth" / f"{i:06d}.f32", state.depth(i))
    write_checkpoint(out / "checkpoint", {
        "rotations": np.array([P.rotation for P in state.poses]),
        "translations": np.array([P.translation for P in state.poses]),
        "log_depths": state.log_depths,
        "intrinsics": np.array([[K.fx, K.fy, K.cx, K.cy] for K in state.intrinsics]),
        "edge_log_scales": state.edge_log_scales,
        "edge_rotations": np.array([P.rotation for P in state.edge_poses]).reshape(-1, 4),
        "edge_translations": np.array([P.translation for P in state.edge_poses]).reshape(-1, 3),
    })


def cmd_optimize(manifest_path, out_dir, cfg: dict) -> dict:
    frames, state, inputs = load_problem(manifest_path, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        final, trace = optimize(state, inputs, solver_config(cfg))
    except DivergenceError as exc:
        write_loss_csv(out / "loss.csv", exc.trace)
        _write_state(out, frames.times, exc.state)
        raise
    write_loss_csv(out / "loss.csv", trace)
    _write_state(out, frames.times, final)
    return {"iterations": len(trace) - 1, "patches": len(inputs.patches),
            "initial_total": trace[0].total, "final_total": trace[-1].total}


# ---------------------------------------------------------------- eval

def _depth_files(d: Path) -> dict:
    return {p.name: p for p in sorted((d / "depth").glob("*.f32"))} if (d / "depth").is_dir() else {}


def cmd_eval(pred_dir, gt_dir, out_dir, cfg: dict) -> dict:
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    if not pred_dir.is_dir():
        raise InputError(f"prediction directory not found: {pred_dir}")
    pd, gd = _depth_files(pred_dir), _depth_files(gt_dir)
    has_traj = (pred_dir / "trajectory.tum").exists()
    if not pd and not has_traj:
        raise InputError(f"prediction directory {pred_dir} holds no depth files and no trajectory")
    if pd and set(pd) != set(gd):
        extra = sorted(set(pd) - set(gd))
        lack = sorted(set(gd) - set(pd))
        raise InputError(f"unmatched depth frames: only in prediction {extra}, only in ground truth {lack}")
    ev = cfg["eval"]
    rows = []
    for name in pd:
        m = depth_metrics(_squeeze(read_f32(pd[name])), _squeeze(read_f32(gd[name])), ev["scale_align"])
        rows.append((Path(name).stem, m))
    result: dict = {}
    if rows:
        for k in ("abs_rel", "delta_125", "rmse_log"):
            result[k] = float(np.mean([getattr(m, k) for _, m in rows]))
    if has_traj:
        if not (gt_dir / "trajectory.tum").exists():
            raise InputError(f"ground-truth trajectory missing in {gt_dir}")
        pt, pp = read_tum(pred_dir / "trajectory.tum")
        gt_t, gp = read_tum(gt_dir / "trajectory.tum")
        pred, gt = Trajectory(pt, pp), Trajectory(gt_t, gp)
        rt, rr = rpe(pred, gt, ev["rpe_delta"])
        result.update(ate=ate(pred, gt), rpe_trans=rt, rpe_rot=rr)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "metrics.json", result)
    with open(out / "per_frame.csv", "w", encoding="utf-8", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(("frame", "abs_rel", "delta_125", "rmse_log"))
        for name, m in rows:
            wr.writerow([name, *(repr(float(v)) for v in m)])
    return result


# ---------------------------------------------------------------- sync

def load_streams(manifest_path) -> SensorStreams:
    mpath = Path(manifest_path)
    man = _read_json(mpath, "sync manifest")
    base = mpath.parent
    for k in ("width", "height", "intrinsics", "images", "depths", "poses", "events"):
        if k not in man:
            raise InputError(f"sync manifest field {k}: required")
    W, H = int(man["width"]), int(man["height"])
    K = Intrinsics(**man["intrinsics"])
    K_d = Intrinsics(**man["depth_intrinsics"]) if "depth_intrinsics" in man else K
    imgs = man["images"]
    deps = man["depths"]
    pose_file = base / man["poses"]
    if not pose_file.exists():
        raise InputError(f"sync manifest field poses: file not found: {pose_file}")
    pt, pp = read_tum(pose_file)
    masks = None
    if any("mask" in e for e in imgs):
        masks = [_squeeze(read_f32(_path(base, e["mask"]))) > 0.5 if "mask" in e else np.ones((H, W), bool)
                 for e in imgs]
    ext = _pose7(man["depth_extrinsic"]) if "depth_extrinsic" in man else Pose.identity()
    return SensorStreams(
        np.array([e["t"] for e in imgs], dtype=float),
        [read_image(_path(base, e["path"])) for e in imgs], K,
        np.array([e["t"] for e in deps], dtype=float),
        [_squeeze(read_f32(_path(base, e["path"]))) for e in deps], K_d,
        pt, pp, parse_events(_path(base, man["events"]), W, H), ext, masks,
        warp_form=man.get("warp_form", "standard"))


def cmd_sync(manifest_path, mode: str, out_dir) -> dict:
    streams = load_streams(manifest_path)
    n_img, n_dep = len(streams.image_times), len(streams.depth_times)
    if mode == "day" and n_dep > n_img or mode == "night" and n_dep < n_img:
        log.warning("%s mode requested but the data has %d depth samples for %d images",
                    mode, n_dep, n_img)
    align = align_day if mode == "day" else align_night
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SyncWarning)
        tuples = align(streams)
    skipped = [str(w.message) for w in caught if issubclass(w.category, SyncWarning)]
    for msg in skipped:
        log.warning("skipped: %s", msg)
    out = Path(out_dir)
    (out / "tuples").mkdir(parents=True, exist_ok=True)
    index, unfillable = [], 0
    for n, tup in enumerate(tuples):
        d = out / "tuples" / f"{n:06d}"
        d.mkdir(exist_ok=True)
        write_f32(d / "image.f32", tup.image)
        write_f32(d / "depth.f32", tup.depth)
        write_f32(d / "valid.f32", tup.valid.astype(float))
        write_events(d / "events.csv", tup.events)
        if tup.unfilled is not None:
            unfillable += int(tup.unfilled.sum())
        index.append({"image_t": tup.image_t, "depth_t": tup.depth_t, "events": len(tup.events),
                      "dir": f"tuples/{n:06d}"})
    write_tum(out / "poses.tum", [t.image_t for t in tuples], [t.pose for t in tuples])
    summary = {"mode": mode, "count": len(tuples), "skipped": len(skipped),
               "skipped_reasons": skipped, "unfillable_pixels": unfillable, "tuples": index}
    _dump_json(out / "summary.json", summary)
    return summary


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--config", help="JSON config overriding the defaults")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--threads", type=int,
                        help=f"numeric library thread count (default: ${THREADS_ENV} or library default)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="evopt", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="render a synthetic dataset")
    p.add_argument("scene", help="scene JSON")
    p = sub.add_parser("sync", parents=[common], help="align raw sensor streams")
    p.add_argument("manifest")
    p.add_argument("--mode", choices=("day", "night"), required=True)
    p = sub.add_parser("optimize", parents=[common], help="jointly refine poses and depths")
    p.add_argument("manifest")
    p = sub.add_parser("eval", parents=[common], help="depth and trajectory metrics")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    return ap


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return None


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, args.seed)
        n_threads = _threads(args.threads)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(out / "config.json", {**cfg, "command": args.command})
        with threadpool_limits(n_threads) if n_threads else nullcontext():
            if args.command == "simulate":
                res = cmd_simulate(args.scene, out, cfg, args.seed)
            elif args.command == "sync":
                res = cmd_sync(args.manifest, args.mode, out)
            elif args.command == "optimize":
                res = cmd_optimize(args.manifest, out, cfg)
            else:
                res = cmd_eval(args.pred_dir, args.gt_dir, out, cfg)
    except DivergenceError as exc:
        print(f"error: optimisation diverged: {exc}", file=sys.stderr)
        return 2
    except (InputError, FormatError, EventParseError, MetricsError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(res, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
