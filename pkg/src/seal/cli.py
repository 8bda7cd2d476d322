"""Command-line entry point: ``seal <subcommand> [--config C] [--out DIR] ...``.

Exit status is 0 on success, 2 on a configuration error and 3 on any
runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from seal import envsim
from seal.envsim import write_pgm, write_ppm
from seal.evalharness import (ConfigError, Experiment, ExperimentConfig, report_meta, report_row,
                              run_ablations, run_all, run_weak_supervision, self_training_labels,
                              write_report)
from seal.geometry import Pose
from seal.labelprop import (annotation_record, get_labels, label_map, masks_to_annotations,
                            read_annotations, rle_decode, write_annotations)
from seal.perception import FrameStats, PerceptionModel, fine_tune
from seal.policy import POLICY_KINDS, Episode, EpisodeTrace, Frame, load_policy, run_episode, save_policy
from seal.semmap import read_svm, write_svm

log = logging.getLogger("seal")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.policy is not None:
        cfg = replace(cfg, policy=args.policy)
    cfg.validate()
    return cfg


def _out(args, cfg) -> Path:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _policy_for(exp: Experiment, out: Path):
    path = out / f"policy_{exp.cfg.policy}.json"
    if path.exists():
        return load_policy(path)
    return exp.policy(exp.cfg.policy)


# ---------------------------------------------------------------- commands


def cmd_generate_scenes(args, cfg, out):
    d = out / "scenes"
    d.mkdir(exist_ok=True)
    for split, seeds in (("train", cfg.train_seeds), ("test", cfg.test_seeds)):
        for s in seeds:
            envsim.generate_scene(s, cfg.scene).save(d / f"{split}_{s}.json")
    print(f"wrote {len(cfg.train_seeds) + len(cfg.test_seeds)} scenes to {d}")


def cmd_train_policy(args, cfg, out):
    exp = Experiment(cfg, args.jobs)
    pol = exp.policy(cfg.policy)
    path = out / f"policy_{cfg.policy}.json"
    save_policy(pol, path, history=exp._policy_history.get(cfg.policy, []))
    print(f"wrote {path}")


def _episode_dir(out: Path, seed: int) -> Path:
    return out / "episodes" / f"scene_{seed}"


def cmd_collect(args, cfg, out):
    exp = Experiment(cfg, args.jobs)
    pol = _policy_for(exp, out)
    for sc in exp.train_scenes:
        ep = run_episode(sc, pol, exp.pretrained, cfg.noise, cfg.T, cfg.camera, cfg.s_hat,
                         seed=cfg.seed * 1_000_003 + sc.seed, dims=cfg.map_dims, keep_frames=True)
        d = _episode_dir(out, sc.seed)
        d.mkdir(parents=True, exist_ok=True)
        ep.trace.write_csv(d / "trace.csv")
        write_svm(ep.map, d / "map.svm")
        np.savez_compressed(d / "frames.npz",
                            poses=np.array([[f.pose.x, f.pose.y, f.pose.theta] for f in ep.frames]),
                            depth=np.stack([f.depth for f in ep.frames]),
                            raw=np.stack([f.raw for f in ep.frames]))
        (d / "episode.json").write_text(json.dumps(
            {"scene": sc.seed, "policy": pol.kind, "T": cfg.T, "start_xy": list(ep.map.start_xy),
             "reward": int(ep.trace.rewards[-1])}, indent=1))
        if args.dump_images:
            gt = envsim.render(sc, ep.frames[-1].pose, cfg.camera)
            write_pgm(d / "last_depth.pgm", gt.depth)
            write_ppm(d / "last_category.ppm", gt.category)
        print(f"scene {sc.seed}: reward {ep.trace.rewards[-1]} -> {d}")


def _load_episode(d: Path, cfg) -> Episode:
    meta = json.loads((d / "episode.json").read_text())
    m = read_svm(d / "map.svm", tuple(meta["start_xy"]))
    z = np.load(d / "frames.npz")
    frames = [Frame(Pose(*p), dep, raw) for p, dep, raw in zip(z["poses"].tolist(), z["depth"], z["raw"])]
    return Episode(EpisodeTrace(), m, frames)


def _episodes(out: Path):
    root = out / "episodes"
    if not root.is_dir():
        raise FileNotFoundError(f"no episodes under {root}; run `seal collect` first")
    return sorted(p for p in root.iterdir() if (p / "episode.json").exists())


def cmd_labelprop(args, cfg, out):
    for d in _episodes(out):
        ep = _load_episode(d, cfg)
        labeled = label_map(ep.map, cfg.s_hat)
        records = []
        for t, f in enumerate(ep.frames):
            fl = get_labels(labeled, f.pose, f.depth.astype(np.float64), cfg.camera)
            records.append(annotation_record(t, f.pose, masks_to_annotations(fl)))
        write_annotations(d / "annotations.jsonl", records)
        print(f"{d.name}: {len(labeled.table)} instances")


def _label_image(record, shape) -> np.ndarray:
    img = np.zeros(shape, dtype=np.int64)
    for inst in record["instances"]:
        img[rle_decode(inst["mask"], shape)] = inst["category"]
    return img


def cmd_finetune(args, cfg, out):
    stats = []
    base = PerceptionModel()
    for d in _episodes(out):
        ep = _load_episode(d, cfg)
        if args.self_training:
            stats += [FrameStats.from_pair(f.raw, self_training_labels(f.raw, base)) for f in ep.frames]
            continue
        ann = d / "annotations.jsonl"
        if not ann.exists():
            raise FileNotFoundError(f"{ann} missing; run `seal labelprop` first")
        for rec, f in zip(read_annotations(ann), ep.frames):
            stats.append(FrameStats.from_pair(f.raw, _label_image(rec, cfg.camera.shape)))
    model = fine_tune(base, stats, cfg.finetune_lr, cfg.finetune_iters, cfg.batch_size, seed=cfg.seed)
    model.save(out / "model.json")
    print(f"wrote {out / 'model.json'} from {len(stats)} frames")


def cmd_eval(args, cfg, out):
    exp = Experiment(cfg, args.jobs)
    path = Path(args.model) if args.model else out / "model.json"
    models = {"pretrained": exp.pretrained}
    if path.exists():
        models["finetuned"] = PerceptionModel.load(path)
    pooled, per_scene, poses = exp.evaluate([models] * len(cfg.test_seeds))
    rows = [report_row(n, "generalization", s, per_scene[n]) for n, s in pooled.items()]
    _report(out, {"meta": report_meta(exp, poses), "results": rows})


def _report(out, report):
    j, c = write_report(report, out)
    for r in report["results"]:
        print(f"{r['method']:>28s} {r['setting']:>15s}  det {r['det_AP50']:6.2f}  seg {r['seg_AP50']:6.2f}")
    print(f"wrote {j} and {c}")


def cmd_run_all(args, cfg, out):
    _report(out, run_all(cfg, args.jobs))


def cmd_ablate(args, cfg, out):
    _report(out, run_ablations(cfg, args.jobs))


def cmd_weak_sup(args, cfg, out):
    _report(out, run_weak_supervision(cfg, args.jobs))


COMMANDS = {
    "generate-scenes": cmd_generate_scenes,
    "train-policy": cmd_train_policy,
    "collect": cmd_collect,
    "labelprop": cmd_labelprop,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "run-all": cmd_run_all,
    "ablate": cmd_ablate,
    "weak-sup": cmd_weak_sup,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seal", description="Self-supervised embodied active learning at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="experiment config (JSON)")
        s.add_argument("--out", help="output directory (default: config out_dir)")
        s.add_argument("--seed", type=int, help="master seed override")
        s.add_argument("--jobs", type=int, default=1, help="worker processes")
        s.add_argument("--policy", choices=POLICY_KINDS, help="exploration policy override")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "collect":
            s.add_argument("--dump-images", action="store_true", help="write PGM/PPM of the last frame")
        if name == "finetune":
            s.add_argument("--self-training", action="store_true",
                           help="train on the model's own thresholded predictions")
        if name == "eval":
            s.add_argument("--model", help="fine-tuned model JSON (default: OUT/model.json)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = _out(args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](args, cfg, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - top-level failure boundary
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
