"""``streetcross <task> --config FILE [--set key=value]...``

Exit codes: 0 success, 1 invalid configuration / input / failed verification,
2 runtime error. Every task writes ``run.json`` (resolved config plus
metrics) into ``out_dir``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import attenet as tl
from . import checkpoint
from . import fusion
from . import gradsuite
from . import iatcnn as mp
from .config import ConfigError, resolve
from .labels import CrossingLabel, TrafficLightState, class_set
from .metrics import (
    classification_report,
    pr_curve,
    score_trajectories,
    write_json,
    write_pr_curve,
    write_rows,
)
from .netpbm import read_label_file, read_ppm, write_label_file, write_ppm
from .synth import gen_social_forces, render_signal_patch
from .trajectory import (
    WindowSpec,
    collate,
    load_canonical,
    make_window,
    save_canonical,
    window_scene,
    window_starts,
)

log = logging.getLogger("streetcross")

TASKS = ("synth", "train-mp", "eval-mp", "train-tl", "eval-tl", "train-arcp", "eval-arcp", "predict", "gradcheck")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------


def _window(cfg) -> WindowSpec:
    w = cfg["window"]
    return WindowSpec(w["t_obs"], w["t_pred"], w["stride"], w["n_max"])


def _crossing_window(cfg) -> WindowSpec:
    w = cfg["window"]
    return WindowSpec(w["t_obs"], w["t_pred"], w["stride"], cfg["synth"]["crossing_agents"])


def _split(n: int, test_fraction: float) -> int:
    """Number of training items; at least one item lands on each side."""
    return min(max(1, int(round(n * (1.0 - test_fraction)))), n - 1)


def _need(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what}: no path configured")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what}: {p} does not exist")
    return p


def _mp_config(cfg, n_max: int) -> mp.ModelConfig:
    m, w = cfg["mp"], cfg["window"]
    return mp.ModelConfig(variant=m["variant"], kernel_size=m["kernel_size"], filters=tuple(m["filters"]),
                          convs_per_block=m["convs_per_block"], t_obs=w["t_obs"], t_pred=w["t_pred"], n_max=n_max)


def _tl_config(cfg, n_classes: int) -> tl.AtteNetConfig:
    t = cfg["tl"]
    return tl.AtteNetConfig(widths=tuple(t["widths"]), units=tuple(t["units"]), se_reduction=t["se_reduction"],
                            n_classes=n_classes, input_size=t["input_size"], dropout=t["dropout"])


# ----------------------------------------------------------------------
# data on disk
# ----------------------------------------------------------------------


def _load_trajectories(folder: Path, frame_rate: float):
    files = sorted(folder.glob("*.csv"))
    if not files:
        raise UsageError(f"no trajectory CSV files in {folder}")
    return [(f.name, load_canonical(f, frame_rate)) for f in files]


def _load_signals(folder: Path):
    rows = read_label_file(folder / "labels.csv")
    return [(name, read_ppm(folder / name), TrafficLightState(label)) for name, label in rows]


def _load_crossing(folder: Path, spec: WindowSpec, frame_rate: float):
    with open(folder / "manifest.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    lights = dict(read_label_file(folder / "lights.csv"))
    out = []
    for r in rows:
        scene = load_canonical(folder / "windows" / f"{r['window_id']}.csv", frame_rate)
        w = make_window(scene, spec, 0)
        if w is None:
            raise UsageError(f"{r['window_id']}: no agent observed on two frames")
        light = TrafficLightState(lights[r["image_file"]]) if r["image_file"] in lights else None
        out.append((r["window_id"], fusion.CrossingSample(w[0], read_ppm(folder / r["image_file"]),
                                                          CrossingLabel(r["label"]), w[1], light)))
    return out


# ----------------------------------------------------------------------
# tasks
# ----------------------------------------------------------------------


def task_synth(cfg, out: Path) -> dict:
    s, seed = cfg["synth"], cfg["seed"]
    root = Path(cfg["data_dir"])
    # trajectories
    n_tr = _split(s["trajectory_scenes"], s["test_fraction"])
    for k in range(s["trajectory_scenes"]):
        split = "train" if k < n_tr else "test"
        d = root / "trajectories" / split
        d.mkdir(parents=True, exist_ok=True)
        scene_seed = seed * 100003 + k
        n_agents = int(np.random.default_rng([seed, k]).integers(1, s["max_agents"] + 1))
        scene = gen_social_forces(n_agents, s["steps"], seed=scene_seed)
        save_canonical(scene, d / f"scene_{k:04d}.csv")
    # traffic-light images
    classes = class_set(cfg["tl"]["n_classes"])
    n_tr = _split(s["signal_images"], s["test_fraction"])
    rows = {"train": [], "test": []}
    rng = np.random.default_rng([seed, 1])
    for k in range(s["signal_images"]):
        split = "train" if k < n_tr else "test"
        d = root / "signals" / split
        d.mkdir(parents=True, exist_ok=True)
        state = classes[k % len(classes)] if k < len(classes) else classes[int(rng.integers(len(classes)))]
        img = render_signal_patch(state, size=s["image_size"], seed=seed * 100003 + k)
        name = f"img_{k:04d}.ppm"
        write_ppm(d / name, img.pixels)
        rows[split].append((name, state.value))
    for split, r in rows.items():
        write_label_file(root / "signals" / split / "labels.csv", r)
    # crossing scenes
    spec = _crossing_window(cfg)
    scenes = fusion.intersection_scenes(s["crossing_scenes"], seed, s["signalized_fraction"], spec)
    n_tr = _split(len(scenes), s["test_fraction"])
    manifests = {"train": [], "test": []}
    lights = {"train": [], "test": []}
    for k, (scene_seed, sc) in enumerate(scenes):
        split = "train" if k < n_tr else "test"
        d = root / "crossing" / split
        (d / "windows").mkdir(parents=True, exist_ok=True)
        (d / "images").mkdir(parents=True, exist_ok=True)
        wid = f"w_{k:05d}"
        save_canonical(sc.scene, d / "windows" / f"{wid}.csv")
        image_file = f"images/{wid}.ppm"
        write_ppm(d / image_file, render_signal_patch(sc.light, size=s["image_size"], seed=scene_seed).pixels)
        manifests[split].append((wid, image_file, sc.label.value))
        lights[split].append((image_file, sc.light.value))
    for split in ("train", "test"):
        write_rows(root / "crossing" / split / "manifest.csv", ["window_id", "image_file", "label"], manifests[split])
        write_label_file(root / "crossing" / split / "lights.csv", lights[split])
    return {
        "trajectory_scenes": s["trajectory_scenes"],
        "signal_images": s["signal_images"],
        "crossing_scenes": s["crossing_scenes"],
        "crossing_cross_fraction": float(np.mean([sc.label is CrossingLabel.CROSS for _, sc in scenes])),
    }


def _mp_windows(cfg, split: str):
    folder = _need(Path(cfg["data_dir"]) / "trajectories" / split, f"{split} trajectories")
    spec = _window(cfg)
    seqs = []
    for name, scene in _load_trajectories(folder, cfg["frame_rate"]):
        ws = window_scene(scene, spec)
        if ws:
            seqs.append((name, ws))
    if not seqs:
        raise UsageError(f"{folder}: no windows with at least one observed agent")
    return seqs


def task_train_mp(cfg, out: Path) -> dict:
    seqs = _mp_windows(cfg, "train")
    data = [w for _, ws in seqs for w in ws]
    model = mp.build(_mp_config(cfg, cfg["window"]["n_max"]), seed=cfg["seed"])
    m = cfg["mp"]
    hist = mp.train(model, data, mp.TrainConfig(lr=m["lr"], epochs=m["epochs"], batch_size=m["batch_size"],
                                                clip=m["clip"], seed=cfg["seed"]))
    checkpoint.save(model, out / "iatcnn.ckpt")
    write_rows(out / "loss.csv", ["epoch", "loss"], [(i + 1, v) for i, v in enumerate(hist)])
    return {"windows": len(data), "parameters": model.parameter_count(), "loss_history": hist}


def _cv_points(ws, t_pred):
    return np.stack([fusion.cv_baseline_predict(o, t_pred) for o, _ in ws])


def task_eval_mp(cfg, out: Path) -> dict:
    model = checkpoint.load(_need(cfg["checkpoint"], "checkpoint"), kind="iatcnn")
    seqs = _mp_windows(cfg, "test")
    t_pred = model.config.t_pred
    rows = []
    allp, allc, allt, allm = [], [], [], []
    for name, ws in seqs:
        pts = mp.predict_windows(model, ws)
        cv = _cv_points(ws, t_pred)
        _, _, tgt, tm = collate(ws)
        if tm.sum() == 0:
            continue
        s, c = score_trajectories(pts, tgt, tm), score_trajectories(cv, tgt, tm)
        rows.append((name, len(ws), s.samples, s.ade, s.fde, s.orientation_error, s.velocity_error, c.ade, c.fde))
        allp.append(pts), allc.append(cv), allt.append(tgt), allm.append(tm)
    if not rows:
        raise UsageError("test split has no target points")
    write_rows(out / "eval_sequences.csv",
               ["sequence", "windows", "points", "ade", "fde", "orientation_error", "velocity_error", "cv_ade", "cv_fde"],
               rows)
    P, C, T, M = (np.concatenate(a) for a in (allp, allc, allt, allm))
    s, c = score_trajectories(P, T, M), score_trajectories(C, T, M)
    summary = {"model": s.__dict__, "constant_velocity": c.__dict__, "sequences": len(rows)}
    write_json(out / "eval_summary.json", summary)
    return summary


def _signals(cfg, split):
    return _load_signals(_need(Path(cfg["data_dir"]) / "signals" / split, f"{split} signal images"))


def task_train_tl(cfg, out: Path) -> dict:
    data = _signals(cfg, "train")
    model = tl.build(_tl_config(cfg, cfg["tl"]["n_classes"]), seed=cfg["seed"])
    t = cfg["tl"]
    hp = tl.ClassifierTrainConfig(lr=t["lr"], momentum=t["momentum"], decay_end_factor=t["decay_end_factor"],
                                  epochs=t["epochs"], batch_size=t["batch_size"], clip=t["clip"], seed=cfg["seed"])
    hist = tl.train_classifier(model, [d[1] for d in data], [d[2] for d in data], hp)
    checkpoint.save(model, out / "attenet.ckpt")
    write_rows(out / "loss.csv", ["epoch", "loss"], [(i + 1, v) for i, v in enumerate(hist)])
    return {"images": len(data), "parameters": model.parameter_count(), "loss_history": hist}


def task_eval_tl(cfg, out: Path) -> dict:
    model = checkpoint.load(_need(cfg["checkpoint"], "checkpoint"), kind="attenet")
    data = _signals(cfg, "test")
    classes = class_set(model.config.n_classes)
    size = model.config.input_size
    probs = tl.predict_proba(model, [tl.center_crop(d[1], size) for d in data])
    pred = probs.argmax(axis=1)
    truth = tl.label_indices([d[2] for d in data], model.config.n_classes)
    rows = [(d[0], d[2].value, classes[p].value) + tuple(float(x) for x in pr) for d, p, pr in zip(data, pred, probs)]
    write_rows(out / "eval_images.csv", ["filename", "label", "predicted"] + [f"p_{c.value}" for c in classes], rows)
    rep = classification_report(pred, truth, model.config.n_classes)
    summary = {"classes": [c.value for c in classes], **rep.to_dict()}
    write_json(out / "eval_summary.json", summary)
    return summary


def _crossing(cfg, split):
    folder = _need(Path(cfg["data_dir"]) / "crossing" / split, f"{split} crossing data")
    return _load_crossing(folder, _crossing_window(cfg), cfg["frame_rate"])


def _build_arcp(cfg) -> fusion.ARCP:
    a = cfg["arcp"]
    v = a["variant"]
    needs_motion = v in ("ARCP(TLR+MP)", "ARCP(MP)", "NCP")
    needs_light = v != "ARCP(MP)"
    motion = light = None
    if needs_motion:
        if cfg["motion_checkpoint"]:
            motion = checkpoint.load(_need(cfg["motion_checkpoint"], "motion_checkpoint"), kind="iatcnn")
        elif a["cold_start"]:
            motion = mp.build(_mp_config(cfg, cfg["synth"]["crossing_agents"]), seed=cfg["seed"])
        else:
            raise UsageError(f"{v}: set motion_checkpoint or arcp.cold_start")
    if needs_light:
        if cfg["light_checkpoint"]:
            light = checkpoint.load(_need(cfg["light_checkpoint"], "light_checkpoint"), kind="attenet")
        elif a["cold_start"]:
            light = tl.build(_tl_config(cfg, a["light_classes"]), seed=cfg["seed"] + 1)
        else:
            raise UsageError(f"{v}: set light_checkpoint or arcp.cold_start")
    lcfg = light.config if light is not None else _tl_config(cfg, a["light_classes"])
    hw = lcfg.feature_size
    if a["D"] != hw * hw * a["C"]:
        raise UsageError(f"arcp.D: {a['D']} must equal H*W*C = {hw}*{hw}*{a['C']}")
    fc = fusion.FusionConfig(variant=v, n_agents=cfg["synth"]["crossing_agents"], t_pred=cfg["window"]["t_pred"],
                             D=a["D"], H=hw, W=hw, C=a["C"], tl_channels=lcfg.widths[-1], hidden=a["hidden"],
                             ncp_hidden=a["ncp_hidden"], n_tl_classes=lcfg.n_classes)
    return fusion.build_arcp(fc, motion, light, seed=cfg["seed"], frame_rate=cfg["frame_rate"])


def task_train_arcp(cfg, out: Path) -> dict:
    data = [s for _, s in _crossing(cfg, "train")]
    model = _build_arcp(cfg)
    a = cfg["arcp"]
    hist = []
    if a["variant"] != "CV+TLR":
        hist = fusion.joint_train(model, data, fusion.JointTrainConfig(lr=a["lr"], epochs=a["epochs"],
                                                                      batch_size=a["batch_size"], clip=a["clip"],
                                                                      seed=cfg["seed"]))
    checkpoint.save(model, out / "arcp.ckpt")
    write_rows(out / "loss.csv", ["epoch", "loss"], [(i + 1, v) for i, v in enumerate(hist)])
    return {"windows": len(data), "variant": a["variant"], "loss_history": hist,
            "task_weights": {k: float(p.data) for k, p in model.task_weights.items()}}


def task_eval_arcp(cfg, out: Path) -> dict:
    model = checkpoint.load(_need(cfg["checkpoint"], "checkpoint"), kind="arcp")
    items = _crossing(cfg, "test")
    data = [s for _, s in items]
    probs = fusion.predict_proba(model, data)
    rep = fusion.eval_crossing(model, data)
    pred = probs.argmax(axis=1)
    rows = [(wid, s.label.value, fusion.CROSSING_CLASSES[p].value, float(pr[0]))
            for (wid, s), p, pr in zip(items, pred, probs)]
    write_rows(out / "eval_windows.csv", ["window_id", "label", "predicted", "p_cross"], rows)
    curve = pr_curve(probs[:, 0], [s.label is CrossingLabel.CROSS for s in data])
    write_pr_curve(out / "pr_curve.csv", curve)
    summary = {"variant": model.config.variant, "precision": rep.precision, "recall": rep.recall,
               "accuracy": rep.accuracy, "confusion": rep.confusion, "windows": len(data)}
    write_json(out / "eval_summary.json", summary)
    return summary


def task_predict(cfg, out: Path) -> dict:
    model = checkpoint.load(_need(cfg["checkpoint"], "checkpoint"), kind="iatcnn")
    scene = load_canonical(_need(cfg["input"], "input"), cfg["frame_rate"])
    mc = model.config
    spec = WindowSpec(mc.t_obs, mc.t_pred, cfg["window"]["stride"], mc.n_max)
    rows = []
    n = 0
    for start in window_starts(scene, spec):
        w = make_window(scene, spec, start)
        if w is None:
            continue
        obs = w[0]
        pred = mp.forward(model, obs)
        g = pred.gaussians()[0]
        q = pred.quat.data[0]
        pm = pred.pred_mask[0]
        for i, aid in enumerate(obs.agent_ids):
            for k in range(mc.t_pred):
                rows.append((start, int(aid), start + mc.t_obs + k, *map(float, g[i, k, :3]), float(q[i, k, 0]),
                             float(q[i, k, 1]), *map(float, g[i, k, 3:7]), float(pm[i, k])))
        n += 1
    write_rows(out / "predictions.csv",
               ["window_start", "agent_id", "frame", "x", "y", "v", "qw", "qz", "sigma_x", "sigma_y", "sigma_v",
                "rho", "mask_prob"], rows)
    return {"windows": n, "rows": len(rows)}


def task_gradcheck(cfg, out: Path) -> dict:
    g = cfg["gradcheck"]
    entries = gradsuite.run_suite(g["cases"], g["model_cases"], cfg["seed"], g["tolerance"],
                                  progress=lambda e: log.info("%-24s %.3e %s", e.name, e.max_rel_error,
                                                              "ok" if e.passed else "FAIL"))
    write_rows(out / "gradcheck.csv", ["check", "cases", "max_rel_error", "tolerance", "passed"],
               [(e.name, e.cases, float(e.max_rel_error), e.tol, e.passed) for e in entries])
    return {"passed": all(e.passed for e in entries),
            "checks": {e.name: float(e.max_rel_error) for e in entries}}


RUNNERS = {
    "synth": task_synth,
    "train-mp": task_train_mp,
    "eval-mp": task_eval_mp,
    "train-tl": task_train_tl,
    "eval-tl": task_eval_tl,
    "train-arcp": task_train_arcp,
    "eval-arcp": task_eval_arcp,
    "predict": task_predict,
    "gradcheck": task_gradcheck,
}


# ----------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="streetcross", description="Trajectory, traffic-light and crossing-safety models.")
    p.add_argument("task", help="one of: " + ", ".join(TASKS))
    p.add_argument("--config", help="JSON config file (merged over the preset)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, dotted keys for sections (repeatable)")
    p.add_argument("--preset", choices=("desk", "paper"), help="preset to start from (default: desk)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(task: str, cfg: dict) -> tuple[int, dict]:
    """Run one task with a resolved config; returns ``(exit_code, metrics)``."""
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    metrics = RUNNERS[task](cfg, out)
    write_json(out / "run.json", {"task": task, "config": cfg, "metrics": metrics})
    code = 0
    if task == "gradcheck" and not metrics["passed"]:
        code = 1
    return code, metrics


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        if args.task not in TASKS:
            raise UsageError(f"unknown task {args.task!r}; expected one of {', '.join(TASKS)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(args.config, args.overrides, args.preset)
    except (UsageError, ConfigError) as exc:
        print(f"streetcross: error: {exc}", file=sys.stderr)
        return 1
    try:
        code, _ = run(args.task, cfg)
        return code
    except (UsageError, ConfigError) as exc:
        print(f"streetcross: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure inside a task is a runtime error
        log.debug("task failed", exc_info=True)
        print(f"streetcross: {args.task} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
