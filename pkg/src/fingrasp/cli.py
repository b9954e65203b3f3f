"""Batch command-line front end for the grasp pipeline.

Every subcommand reads one self-describing JSON config (command-line flags
override individual keys), creates an output directory, echoes the effective
config there for provenance, and writes its artifacts under it.  Exit codes:
0 success, 1 domain failure (no feasible grasp, corrupt input data), 2
usage or config error.  Errors also go to stderr as single-line JSON records.

Heavy modules load inside the handlers so that --threads can cap numeric
worker pools before they spin up.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .errors import ConfigError, FinGraspError

log = logging.getLogger("fingrasp.cli")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

# wall-clock context from a full-scale robot system; not pass/fail targets
REFERENCE_SECONDS = {"representation": 0.2, "decision": 0.01, "collision": 19.0}


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

def _int(v):
    if isinstance(v, bool):
        raise ValueError("expected an integer")
    if isinstance(v, int):
        return v
    return int(str(v), 10)


def _float(v):
    if isinstance(v, bool):
        raise ValueError("expected a number")
    if isinstance(v, (int, float)):
        return float(v)
    return float(str(v))


def _str(v):
    if not isinstance(v, str):
        raise ValueError("expected a string")
    return v


def _bool(v):
    if isinstance(v, bool):
        return v
    word = str(v).strip().lower()
    if word in ("true", "1", "yes"):
        return True
    if word in ("false", "0", "no"):
        return False
    raise ValueError("expected a boolean")


def _list_of(parse):
    def convert(v):
        items = v if isinstance(v, list) else str(v).split(",")
        return [parse(x) for x in items]
    return convert


_ints = _list_of(_int)
_floats = _list_of(_float)
_strs = _list_of(_str)


@dataclass(frozen=True)
class _Key:
    parse: object
    default: object
    help: str
    flag: bool = True


# keys every command accepts; command/version are provenance echoes so a
# written config.json stays loadable as-is
GLOBAL_KEYS = {
    "seed": _Key(_int, 0, "master seed for every stochastic stage"),
    "output": _Key(_str, None, "output directory (default runs/<command>)"),
    "threads": _Key(_int, None, "cap numeric worker threads"),
    "command": _Key(_str, None, "provenance echo of the subcommand", flag=False),
    "version": _Key(_str, None, "provenance echo of the package version",
                    flag=False),
}


def _load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def _effective_config(name: str, schema: dict, args) -> dict:
    """Defaults, then config-file keys, then explicit flags; unknown or
    uncoercible keys are config errors."""
    allowed = {**GLOBAL_KEYS, **schema}
    file_cfg = _load_config(args.config) if args.config else {}
    if file_cfg.get("command") not in (None, name):
        raise ConfigError(
            f"config was written for '{file_cfg['command']}', not '{name}'")
    unknown = sorted(set(file_cfg) - set(allowed))
    if unknown:
        raise ConfigError(
            f"unknown config keys for {name}: {', '.join(unknown)}")
    effective = {}
    for key, spec in allowed.items():
        value = file_cfg.get(key, spec.default)
        override = getattr(args, key, None)
        if override is not None:
            value = override
        if value is not None:
            try:
                value = spec.parse(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {value!r} ({exc})") \
                    from exc
        effective[key] = value
    return effective


def _write_provenance(out: Path, effective: dict) -> None:
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(effective, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise ConfigError(f"{key} must be set (flag --{key.replace('_', '-')} "
                          f"or config key)")
    return cfg[key]


# ---------------------------------------------------------------------------
# shared handler plumbing
# ---------------------------------------------------------------------------

def _resolve_scene(cfg: dict):
    """A scene descriptor file wins over a (category, seed) preset."""
    if cfg.get("scene"):
        from .scenes import load_scene
        return load_scene(cfg["scene"])
    from .simlab import CATEGORY_NAMES, make_category_scene
    category = cfg["category"]
    if category not in CATEGORY_NAMES:
        raise ConfigError(f"unknown category '{category}'; choose from "
                          f"{', '.join(CATEGORY_NAMES)}")
    return make_category_scene(category, cfg["seed"])


def _resolve_params(cfg: dict):
    from .decision import NetworkParams, load_params
    if cfg.get("weights"):
        return load_params(cfg["weights"])
    log.warning("no weights given; using untrained parameters (seed %d)",
                cfg["seed"])
    return NetworkParams.init(cfg["seed"])


def _write_metrics_csv(rows, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_scene_gen(cfg: dict, out: Path) -> int:
    """Reproducible category scenes: JSON descriptors, meshes, clouds."""
    from .geometry import save_cloud_ply
    from .scenes import overhead_camera, sample_point_cloud, save_scene
    from .simlab import CATEGORY_NAMES, make_category_scene

    names = cfg["categories"] if cfg["categories"] else list(CATEGORY_NAMES)
    unknown = [c for c in names if c not in CATEGORY_NAMES]
    if unknown:
        raise ConfigError(f"unknown categories: {', '.join(unknown)}; choose "
                          f"from {', '.join(CATEGORY_NAMES)}")
    scene_dir = out / "scenes"
    cloud_dir = out / "clouds"
    scene_dir.mkdir(exist_ok=True)
    cloud_dir.mkdir(exist_ok=True)
    index = []
    for i in range(cfg["per_category"]):
        for category in names:
            scene_seed = cfg["seed"] * 1_000_003 + i
            scene = make_category_scene(category, scene_seed)
            save_scene(scene, scene_dir / f"{scene.identifier}.json",
                       scene_dir)
            cloud = sample_point_cloud(scene, overhead_camera(scene),
                                       cfg["cloud_resolution"])
            save_cloud_ply(cloud.positions, cloud.normals,
                           cloud_dir / f"{scene.identifier}.ply")
            index.append({"identifier": scene.identifier,
                          "category": category, "seed": scene_seed,
                          "objects": len(scene.objects)})
            log.info("scene %s: %d objects, %d cloud points",
                     scene.identifier, len(scene.objects),
                     len(cloud.positions))
    with open(out / "index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2)
        fh.write("\n")
    print(f"scenes = {len(index)}")
    print(f"index = {out / 'index.json'}")
    return 0


def cmd_collect(cfg: dict, out: Path) -> int:
    """Trial-and-error data collection into a JSONL dataset."""
    from .simlab import collect_trials

    if cfg["n"] < 1:
        raise ConfigError("n must be at least 1")
    dataset = collect_trials(cfg["n"], cfg["seed"],
                             frames_per_scene=cfg["frames_per_scene"],
                             cloud_resolution=cfg["cloud_resolution"])
    path = out / cfg["dataset"]
    dataset.save(path)
    print(f"records = {len(dataset)}")
    print(f"success_rate = {dataset.success_rate:.4f}")
    print(f"skipped_scenes = {dataset.skipped_scenes}")
    print(f"dataset = {path}")
    return 0


def cmd_train(cfg: dict, out: Path) -> int:
    """Train the decision net; report eval-split classification accuracy."""
    from .decision import TrainConfig, save_loss_history, save_params, train
    from .simlab import TrialDataset, classification_accuracy, split_dataset

    dataset = TrialDataset.load(_require(cfg, "dataset"))
    if cfg["eval_count"] > 0:
        train_recs, eval_recs = split_dataset(dataset, cfg["eval_count"],
                                              cfg["seed"])
    else:
        train_recs, eval_recs = list(dataset), []
    result = train(train_recs, TrainConfig(epochs=cfg["epochs"],
                                           batch_size=cfg["batch_size"],
                                           seed=cfg["seed"]))
    save_params(result.params, out / cfg["weights"])
    save_loss_history(result.loss_history, out / "loss.csv")
    accuracy = classification_accuracy(result.params,
                                       eval_recs if eval_recs else train_recs)
    metrics = {"train_size": len(train_recs), "eval_size": len(eval_recs),
               "final_loss": float(result.loss_history[-1][2]),
               "diverged": result.diverged,
               "classification_accuracy": accuracy}
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for key in ("train_size", "eval_size", "final_loss", "diverged",
                "classification_accuracy"):
        print(f"{key} = {metrics[key]}")
    print(f"weights = {out / cfg['weights']}")
    return 0


def cmd_eval(cfg: dict, out: Path) -> int:
    """Classification accuracy on the held-out split, plus simulated grasp
    success on fresh scenes when scenes_per_category > 0."""
    from .decision import load_params
    from .simlab import (TrialDataset, classification_accuracy,
                         evaluate_policy, save_category_bars_svg,
                         split_dataset, standard_scene_suite)

    dataset = TrialDataset.load(_require(cfg, "dataset"))
    params = load_params(_require(cfg, "weights"))
    _, eval_recs = split_dataset(dataset, cfg["eval_count"], cfg["seed"])
    accuracy = classification_accuracy(params, eval_recs)
    rows = [("classification_accuracy", accuracy)]
    doc = {"classification_accuracy": accuracy, "eval_size": len(eval_recs)}
    print(f"classification_accuracy = {accuracy:.4f}")
    if cfg["scenes_per_category"] > 0:
        scenes = standard_scene_suite(cfg["scenes_per_category"], cfg["seed"])
        report = evaluate_policy(scenes, params, seed=cfg["seed"],
                                 frames_per_scene=cfg["frames_per_scene"],
                                 cloud_resolution=cfg["cloud_resolution"])
        lo, hi = report.interval
        rows += [("success_rate", report.rate),
                 ("success_rate_low", lo), ("success_rate_high", hi),
                 ("scenes", report.total)]
        doc["policy"] = report.to_dict()
        save_category_bars_svg(report, out / "category_bars.svg")
        print(f"success_rate = {report.rate:.4f} "
              f"({report.successes}/{report.total})")
    _write_metrics_csv(rows, out / "metrics.csv")
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_plan(cfg: dict, out: Path) -> int:
    """Plan one grasp on a scene; dump plan JSON plus viewer PLY files."""
    from .geometry import save_cloud_ply
    from .planner import GraspPlanner, PlannerConfig, save_hand_ply
    from .scenes import overhead_camera, sample_point_cloud, save_scene

    scene = _resolve_scene(cfg)
    params = _resolve_params(cfg)
    planner = GraspPlanner(params, PlannerConfig(
        num_grasp_points=cfg["num_grasp_points"], top_k=cfg["top_k"],
        augmentations=cfg["augmentations"], seed=cfg["seed"]))
    cloud = sample_point_cloud(scene, overhead_camera(scene),
                               cfg["cloud_resolution"])
    plan = planner.plan(scene, cloud)
    plan.save(out / "plan.json")
    save_hand_ply(plan.grasp, out / "hand.ply")
    save_cloud_ply(cloud.positions, cloud.normals, out / "cloud.ply")
    save_scene(scene, out / "scene.json", out)
    grasp = plan.grasp
    print(f"scene = {scene.identifier}")
    print(f"type_id = {grasp.type_id}")
    print(f"width = {grasp.width:.4f}")
    print(f"translation = {[round(float(x), 4) for x in grasp.translation]}")
    print(f"quality = {grasp.quality:.4f}")
    print(f"below_gate = {plan.below_gate}")
    print(f"candidates = {plan.num_candidates}")
    print(f"plan = {out / 'plan.json'}")
    return 0


def cmd_track(cfg: dict, out: Path) -> int:
    """Track a planned grasp through a scripted rigid-motion sequence."""
    import numpy as np

    from .geometry import RigidTransform
    from .planner import GraspPlanner, PlannerConfig
    from .tracking import (export_sequence, make_scripted_sequence,
                           save_track_log, track_sequence)

    if cfg["frames"] < 1:
        raise ConfigError("frames must be at least 1")
    step = np.asarray(cfg["step"], dtype=np.float64)
    if step.shape != (3,):
        raise ConfigError("step must hold exactly three floats (meters)")
    scene = _resolve_scene(cfg)
    params = _resolve_params(cfg)
    planner = GraspPlanner(params, PlannerConfig(
        num_grasp_points=cfg["num_grasp_points"], top_k=cfg["top_k"],
        augmentations=cfg["augmentations"], seed=cfg["seed"]))
    yaw = np.deg2rad(cfg["yaw_step_deg"])
    transforms = []
    for i in range(cfg["frames"]):
        spin = RigidTransform.rotation_about_axis(
            np.zeros(3), np.array([0.0, 0.0, 1.0]), yaw * i)
        transforms.append(RigidTransform(spin.rotation, step * i))
    scenes = make_scripted_sequence(scene, transforms)
    states = track_sequence(scenes, planner, cfg["alpha"], cfg["gate"],
                            cfg["cloud_resolution"])
    save_track_log(states, out / "track.csv")
    export_sequence(scenes, transforms, out / "sequence",
                    cfg["cloud_resolution"])
    last = states[-1]
    print(f"frames_tracked = {len(states)}")
    print(f"terminated = {last.terminated}")
    print(f"final_similarity = {last.similarity:.4f}")
    print(f"log = {out / 'track.csv'}")
    return 0


def cmd_report(cfg: dict, out: Path) -> int:
    """Learning-curve rendering: one line per repeated run, plus the mean
    curve with deviation bars. Reads a CSV or computes one from a dataset."""
    from .simlab import (TrialDataset, learning_curve, load_learning_curve_csv,
                         save_learning_curve_csv, save_learning_curve_svg,
                         save_repeat_curves_svg, split_dataset)

    if cfg.get("curve"):
        try:
            rows = load_learning_curve_csv(cfg["curve"])
        except OSError as exc:
            raise ConfigError(f"cannot read curve CSV: {exc}") from exc
    elif cfg.get("dataset"):
        dataset = TrialDataset.load(cfg["dataset"])
        train_recs, eval_recs = split_dataset(dataset, cfg["eval_count"],
                                              cfg["seed"])
        sizes = cfg["sizes"]
        if not sizes:
            n = len(train_recs)
            sizes = sorted({max(1, n // 8), max(1, n // 4), max(1, n // 2), n})
        rows = learning_curve(train_recs, eval_recs, sizes, cfg["repeats"],
                              cfg["seed"])
        save_learning_curve_csv(rows, out / "curve.csv")
        print(f"curve = {out / 'curve.csv'}")
    else:
        raise ConfigError("report needs either curve (CSV path) or "
                          "dataset (JSONL path)")
    save_repeat_curves_svg(rows, out / "curve.svg")
    save_learning_curve_svg(rows, out / "curve_mean.svg")
    print(f"sizes = {[r['size'] for r in rows]}")
    print(f"mean_accuracy = {[round(r['mean_accuracy'], 4) for r in rows]}")
    print(f"svg = {out / 'curve.svg'}")
    return 0


def cmd_bench(cfg: dict, out: Path) -> int:
    """Per-phase wall clock for one scene: representation engine, decision
    inference over a candidate batch, voxel collision filtering."""
    import time
    import warnings

    import numpy as np

    from .collision import check_collision, closing_segments, voxelize_hand
    from .decision import encode_reps, infer_batch
    from .planner import PlannerConfig, generate_candidates, sample_grasp_points
    from .representation import compute_representation
    from .scenes import Scene, overhead_camera, sample_point_cloud
    from .taxonomy import builtin_hand, builtin_taxonomy, hand_geometry

    if cfg["candidates"] < 1:
        raise ConfigError("candidates must be at least 1")
    if cfg["empty"]:
        scene = Scene([], 0.0, "empty")
    else:
        scene = _resolve_scene(cfg)
    params = _resolve_params(cfg)
    hand = builtin_hand()
    taxonomy = builtin_taxonomy()
    cloud = sample_point_cloud(scene, overhead_camera(scene),
                               cfg["cloud_resolution"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        frames = sample_grasp_points(cloud, cfg["num_grasp_points"],
                                     cfg["seed"])

    start = time.perf_counter()
    reps = [compute_representation(scene, frame) for frame in frames]
    rep_seconds = time.perf_counter() - start

    usable = [rep for rep in reps if not rep.is_empty]
    batch = 0
    decision_seconds = 0.0
    if usable:
        X = encode_reps(usable)
        copies = -(-cfg["candidates"] // len(X))
        X = np.tile(X, (copies, 1))[:cfg["candidates"]]
        batch = len(X)
        infer_batch(params, X)  # load the kernels before the timed pass
        start = time.perf_counter()
        infer_batch(params, X)
        decision_seconds = time.perf_counter() - start

    grasps = []
    if frames:
        pool = generate_candidates(scene, frames, params,
                                   PlannerConfig(top_k=cfg["candidates"],
                                                 seed=cfg["seed"]))
        grasps = [cand.grasp for cand in pool]
    start = time.perf_counter()
    for grasp in grasps:
        grid = voxelize_hand(hand_geometry(grasp, hand, taxonomy))
        segments = closing_segments(grasp, hand, taxonomy)
        check_collision(grid, cloud, segments)
    collision_seconds = time.perf_counter() - start

    phases = [("representation", rep_seconds, len(frames)),
              ("decision", decision_seconds, batch),
              ("collision", collision_seconds, len(grasps))]
    import csv
    with open(out / "timings.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "seconds", "count", "reference_seconds"])
        for name, seconds, count in phases:
            writer.writerow([name, f"{seconds:.6f}", count,
                             REFERENCE_SECONDS[name]])
    units = {"representation": "frames", "decision": "candidates",
             "collision": "candidates"}
    for name, seconds, count in phases:
        print(f"{name} = {seconds:.4f} s over {count} {units[name]} "
              f"(reference {REFERENCE_SECONDS[name]} s)")
    print("reference figures describe a full-scale robot pipeline; "
          "context only, not pass/fail")
    print(f"timings = {out / 'timings.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

COMMANDS = {
    "scene-gen": (cmd_scene_gen, {
        "per_category": _Key(_int, 3, "scenes per category"),
        "categories": _Key(_strs, None, "comma-separated category subset"),
        "cloud_resolution": _Key(_int, 2500, "camera ray resolution"),
    }, "generate reproducible cluttered scenes with clouds"),
    "collect": (cmd_collect, {
        "n": _Key(_int, 100, "number of trial records"),
        "frames_per_scene": _Key(_int, 8, "grasp frames sampled per scene"),
        "cloud_resolution": _Key(_int, 2500, "camera ray resolution"),
        "dataset": _Key(_str, "trials.jsonl", "output dataset filename"),
    }, "collect simulated trial-and-error grasp records"),
    "train": (cmd_train, {
        "dataset": _Key(_str, None, "trial dataset JSONL path"),
        "eval_count": _Key(_int, 500, "held-out record count (0 = train on all)"),
        "epochs": _Key(_int, 20, "training epochs"),
        "batch_size": _Key(_int, 128, "minibatch size"),
        "weights": _Key(_str, "weights.bin", "output weights filename"),
    }, "train the grasp decision network"),
    "eval": (cmd_eval, {
        "dataset": _Key(_str, None, "trial dataset JSONL path"),
        "weights": _Key(_str, None, "trained weights path"),
        "eval_count": _Key(_int, 500, "held-out record count"),
        "scenes_per_category": _Key(_int, 0, "fresh scenes per category for "
                                              "policy rollouts (0 = skip)"),
        "frames_per_scene": _Key(_int, 8, "grasp frames per rollout scene"),
        "cloud_resolution": _Key(_int, 2500, "camera ray resolution"),
    }, "score a trained model on held-out records and fresh scenes"),
    "plan": (cmd_plan, {
        "scene": _Key(_str, None, "scene descriptor JSON (wins over category)"),
        "category": _Key(_str, "household", "scene category preset"),
        "weights": _Key(_str, None, "trained weights (untrained if omitted)"),
        "num_grasp_points": _Key(_int, 64, "sampled grasp frames"),
        "top_k": _Key(_int, 100, "candidate pool size"),
        "augmentations": _Key(_int, 2, "jittered augmentation passes"),
        "cloud_resolution": _Key(_int, 2500, "camera ray resolution"),
    }, "plan the best collision-free grasp on one scene"),
    "track": (cmd_track, {
        "scene": _Key(_str, None, "scene descriptor JSON (wins over category)"),
        "category": _Key(_str, "household", "scene category preset"),
        "weights": _Key(_str, None, "trained weights (untrained if omitted)"),
        "frames": _Key(_int, 10, "sequence length"),
        "step": _Key(_floats, [0.01, 0.0, 0.0], "per-frame translation (m)"),
        "yaw_step_deg": _Key(_float, 0.0, "per-frame rotation about z (deg)"),
        "alpha": _Key(_float, 0.6, "pose smoothing weight in (0, 1]"),
        "gate": _Key(_float, 0.08, "association distance gate (m)"),
        "num_grasp_points": _Key(_int, 12, "grasp frames per frame"),
        "top_k": _Key(_int, 80, "candidate pool size"),
        "augmentations": _Key(_int, 0, "jittered augmentation passes"),
        "cloud_resolution": _Key(_int, 2500, "camera ray resolution"),
    }, "follow a grasp through a scripted rigid-motion sequence"),
    "report": (cmd_report, {
        "curve": _Key(_str, None, "existing learning-curve CSV to render"),
        "dataset": _Key(_str, None, "dataset JSONL to compute a curve from"),
        "sizes": _Key(_ints, None, "training sizes (auto ladder if omitted)"),
        "repeats": _Key(_int, 3, "repeated runs per size"),
        "eval_count": _Key(_int, 500, "held-out record count"),
    }, "render learning curves, one line per repeated run"),
    "bench": (cmd_bench, {
        "category": _Key(_str, "household", "scene category preset"),
        "scene": _Key(_str, None, "scene descriptor JSON (wins over category)"),
        "empty": _Key(_bool, False, "bench an object-free scene"),
        "weights": _Key(_str, None, "trained weights (untrained if omitted)"),
        "candidates": _Key(_int, 500, "candidate batch size"),
        "num_grasp_points": _Key(_int, 8, "grasp frames for the scene"),
        "cloud_resolution": _Key(_int, 2500, "camera ray resolution"),
    }, "time the pipeline phases on one scene"),
}


class _Parser(argparse.ArgumentParser):
    """Usage problems surface as ConfigError so they share the exit-code and
    stderr-record contract instead of argparse's bare exit."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fingrasp",
                     description="multi-finger grasp pipeline front end")
    parser.add_argument("--version", action="version",
                        version=f"fingrasp {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="command",
                                required=True)
    for name, (_, schema, blurb) in COMMANDS.items():
        p = sub.add_parser(name, help=blurb, description=blurb)
        p.add_argument("--config", metavar="FILE",
                       help="JSON config; flags override its keys")
        p.add_argument("-v", "--verbose", action="count", default=0,
                       help="more logging (-vv for debug)")
        for key, spec in {**GLOBAL_KEYS, **schema}.items():
            if not spec.flag:
                continue
            flag = "--" + key.replace("_", "-")
            if spec.parse is _bool:
                p.add_argument(flag, action="store_const", const="true",
                               default=None, help=spec.help)
            else:
                p.add_argument(flag, default=None, metavar=key.upper(),
                               help=spec.help)
    return parser


def _setup_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _emit_error(exc: Exception) -> None:
    record = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler, schema, _ = COMMANDS[args.subcommand]
        effective = _effective_config(args.subcommand, schema, args)
        _setup_logging(args.verbose)
        if effective["threads"] is not None:
            if effective["threads"] < 1:
                raise ConfigError("threads must be at least 1")
            # must land before the numeric libraries load in the handlers
            for var in _THREAD_VARS:
                os.environ[var] = str(effective["threads"])
        out = Path(effective["output"] or os.path.join("runs",
                                                       args.subcommand))
        effective["output"] = str(out)
        effective["command"] = args.subcommand
        effective["version"] = __version__
        out.mkdir(parents=True, exist_ok=True)
        _write_provenance(out, effective)
        return handler(effective, out)
    except ConfigError as exc:
        _emit_error(exc)
        return 2
    except ValueError as exc:
        # bad parameter values surface from module validators
        _emit_error(exc)
        return 2
    except FinGraspError as exc:
        _emit_error(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
