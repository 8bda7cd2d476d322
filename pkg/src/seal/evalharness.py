"""Experiment orchestration: data collection with the exploration policy,
self-labeling, perception fine-tuning, and AP50 evaluation for the
generalization, specialization, weak-supervision and ablation protocols.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from seal import envsim
from seal.envsim import NUM_CATEGORIES, GroundTruthFrame, Scene, SceneParams
from seal.geometry import CameraModel, Pose
from seal.labelprop import MIN_INSTANCE_PIXELS, first_hits, get_labels, label_map
from seal.perception import (FrameStats, NoiseProfile, PerceptionModel, annotate_ground_truth,
                             detect, fine_tune, mask_box, predict_raw)
from seal.policy import (POLICY_KINDS, Episode, GlobalPolicyParams, Policy, run_episode,
                         train_policy)
from seal.semmap import DEFAULT_DIMS, SemanticVoxelMap, new_map, update_map

log = logging.getLogger(__name__)

IOU_THRESHOLD = 0.5
LABELINGS = ("labelprop", "self_training")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class ExperimentConfig:
    train_seeds: tuple[int, ...] = tuple(range(0, 25))
    test_seeds: tuple[int, ...] = tuple(range(10_000, 10_005))
    scene: SceneParams = field(default_factory=SceneParams)
    camera: CameraModel = field(default_factory=CameraModel)
    noise: NoiseProfile = field(default_factory=NoiseProfile)
    s_hat: float = 0.9
    T: int = 300
    policy: str = "gainful"
    policy_episodes: int = 25
    policy_lr: float = 0.05
    finetune_lr: float = 1e-4
    finetune_iters: int = 5000
    batch_size: int = 8
    eval_poses: int = 500
    weak_k: tuple[int, ...] = (0, 5, 10)
    seed: int = 0
    map_dims: tuple[int, int, int, int] = DEFAULT_DIMS
    out_dir: str = "runs"

    def validate(self) -> None:
        if not self.train_seeds or not self.test_seeds:
            raise ConfigError("train and test seed lists must be non-empty")
        if set(self.train_seeds) & set(self.test_seeds):
            raise ConfigError("train and test seeds must be disjoint")
        if len(set(self.train_seeds)) != len(self.train_seeds) or \
                len(set(self.test_seeds)) != len(self.test_seeds):
            raise ConfigError("seed lists contain duplicates")
        if not 0.0 < self.s_hat < 1.0:
            raise ConfigError("s_hat must lie in (0, 1)")
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.policy not in POLICY_KINDS:
            raise ConfigError(f"policy must be one of {POLICY_KINDS}")
        if self.policy_episodes < 0 or self.finetune_iters < 0 or self.eval_poses < 1:
            raise ConfigError("budgets must be non-negative and eval_poses positive")
        if self.finetune_lr <= 0.0 or self.policy_lr < 0.0 or self.batch_size < 1:
            raise ConfigError("learning rates and batch size out of range")
        if any(k < 0 or k > self.T for k in self.weak_k):
            raise ConfigError("weak_k entries must lie in [0, T]")
        if len(self.map_dims) != 4 or self.map_dims[0] != NUM_CATEGORIES + 1:
            raise ConfigError(f"map_dims must be ({NUM_CATEGORIES + 1}, L, W, H)")
        try:
            self.scene.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same protocol under another master seed; the noise stream follows."""
        return replace(self, seed=int(seed), noise=replace(self.noise, seed=self.noise.seed + int(seed)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = self.noise.to_dict()
        for key in ("train_seeds", "test_seeds", "weak_k", "map_dims"):
            d[key] = list(d[key])
        d["scene"]["extents"] = list(self.scene.extents)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "scene" in d:
                d["scene"] = envsim.scene_params_from_dict(d["scene"])
            if "camera" in d:
                d["camera"] = CameraModel(**d["camera"])
            if "noise" in d:
                d["noise"] = NoiseProfile.from_dict(d["noise"])
            for key in ("train_seeds", "test_seeds", "weak_k", "map_dims"):
                if key in d:
                    d[key] = tuple(int(v) for v in d[key])
            cfg = cls(**d)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)


def _stream(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key]))


# ---------------------------------------------------------------------- AP


@dataclass
class Instance:
    """One detection (with score) or ground-truth object in one image."""

    image: int
    category: int
    box: tuple[int, int, int, int]  # (x0, y0, x1, y1), inclusive
    mask: np.ndarray | None = None
    score: float = 1.0


def box_iou(a, b) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0]) + 1
    iy = min(a[3], b[3]) - max(a[1], b[1]) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area = lambda r: (r[2] - r[0] + 1) * (r[3] - r[1] + 1)  # noqa: E731
    return inter / (area(a) + area(b) - inter)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.count_nonzero(a & b)
    if inter == 0:
        return 0.0
    return inter / np.count_nonzero(a | b)


def _iou(p: Instance, g: Instance, mode: str) -> float:
    if mode == "box":
        return box_iou(p.box, g.box)
    # disjoint boxes imply disjoint masks
    if box_iou(p.box, g.box) == 0.0:
        return 0.0
    return mask_iou(p.mask, g.mask)


def _augment(p, cand, match, seen) -> bool:
    for g in cand[p]:
        if g in seen:
            continue
        seen.add(g)
        if match.get(g) is None or _augment(match[g], cand, match, seen):
            match[g] = p
            return True
    return False


def category_ap(preds: list[Instance], gts: list[Instance], mode: str = "box",
                thr: float = IOU_THRESHOLD) -> float:
    """All-point interpolated AP for one category.

    Predictions are taken in descending confidence (ties by input order) and
    each is matched to an unused ground truth of its image with IoU >= thr,
    preferring the highest IoU. When every candidate is taken, an augmenting
    path may re-seat earlier matches, so the true-positive count at every
    rank is the largest achievable with each ground truth used once.
    """
    if not gts:
        raise ValueError("category has no ground truth")
    order = sorted(range(len(preds)), key=lambda k: -preds[k].score)
    by_image: dict[int, list[int]] = {}
    for g, gt in enumerate(gts):
        by_image.setdefault(gt.image, []).append(g)
    cand = {}
    for rank, k in enumerate(order):
        p = preds[k]
        ious = [(_iou(p, gts[g], mode), g) for g in by_image.get(p.image, [])]
        cand[rank] = [g for v, g in sorted(ious, key=lambda t: (-t[0], t[1])) if v >= thr]
    match: dict[int, int] = {}
    tp = 0
    recall, precision = [], []
    for rank in range(len(order)):
        if cand[rank] and _augment(rank, cand, match, set()):
            tp += 1
        recall.append(tp / len(gts))
        precision.append(tp / (rank + 1))
    if not recall:
        return 0.0
    envelope = np.maximum.accumulate(np.asarray(precision)[::-1])[::-1]
    r = np.concatenate([[0.0], recall])
    return float(np.sum(np.diff(r) * envelope))


def ap50_per_category(predictions: list[Instance], ground_truth: list[Instance],
                      mode: str = "box") -> dict[int, float]:
    if mode not in ("box", "mask"):
        raise ValueError("mode must be 'box' or 'mask'")
    out = {}
    for c in sorted({g.category for g in ground_truth}):
        out[c] = category_ap([p for p in predictions if p.category == c],
                             [g for g in ground_truth if g.category == c], mode)
    return out


def ap50(predictions: list[Instance], ground_truth: list[Instance], mode: str = "box") -> float:
    """AP at IoU 0.5, macro-averaged over the categories present in the
    ground truth; 0 when there is no ground truth."""
    per = ap50_per_category(predictions, ground_truth, mode)
    return float(np.mean(list(per.values()))) if per else 0.0


# --------------------------------------------------------------- labeling


def self_training_labels(raw: np.ndarray, model: PerceptionModel) -> np.ndarray:
    """Category image from the model's own thresholded predictions: the
    highest calibrated score above its category floor, 0 if none."""
    cal = model.calibrate(raw)
    above = cal > np.asarray(model.floor)[:, None, None]
    masked = np.where(above, cal, -1.0)
    best = masked.argmax(axis=0)
    return np.where(above.any(axis=0), best + 1, 0).astype(np.int64)


def episode_labels(ep: Episode, cam: CameraModel, s_hat: float, m: SemanticVoxelMap | None = None):
    """3D label propagation over one episode: label_map then per-frame
    get_labels. Returns (labeled map, per-frame FrameLabels)."""
    labeled = label_map(m if m is not None else ep.map, s_hat)
    return labeled, [get_labels(labeled, f.pose, f.depth.astype(np.float64), cam) for f in ep.frames]


def rebuild_map(ep: Episode, model: PerceptionModel, cam: CameraModel, s_hat: float,
                dims, replaced: dict[int, np.ndarray] | None = None) -> SemanticVoxelMap:
    """Re-fuse the recorded frames of an episode; `replaced` maps a frame
    index to a calibrated score image used instead of the model output."""
    m = new_map(dims, ep.map.start_xy)
    for t, f in enumerate(ep.frames):
        scores = replaced[t] if replaced and t in replaced else model.calibrate(f.raw)
        update_map(m, f.depth.astype(np.float64), scores, f.pose, cam, s_hat)
    return m


def frame_entropy(m: SemanticVoxelMap, pose: Pose, depth: np.ndarray, cam: CameraModel) -> float:
    """Mean categorical entropy over the first occupied voxel of every pixel
    ray. The distribution is the voxel's category scores plus a background
    residual 1 - max score, renormalized. Pixels without a hit are skipped."""
    hits = first_hits(m.occupancy, m.corner, m.voxel_size, pose, depth, cam)
    ok = hits[:, 0] >= 0
    if not ok.any():
        return 0.0
    s = m.scores[:, hits[ok, 0], hits[ok, 1], hits[ok, 2]].astype(np.float64).T
    v = np.concatenate([s, 1.0 - s.max(axis=1, keepdims=True)], axis=1)
    v = v / v.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(v > 0, v * np.log(v), 0.0).sum(axis=1)
    return float(h.mean())


def select_weak_frames(m: SemanticVoxelMap, ep: Episode, k: int, cam: CameraModel) -> list[int]:
    """Indices of the k frames with the highest mean entropy; ties go to the
    lower index."""
    if k < 0 or k > len(ep.frames):
        raise ValueError(f"k={k} outside [0, {len(ep.frames)}]")
    if k == 0:
        return []
    h = np.array([frame_entropy(m, f.pose, f.depth.astype(np.float64), cam) for f in ep.frames])
    order = np.lexsort((np.arange(len(h)), -h))
    return sorted(int(i) for i in order[:k])


# ------------------------------------------------------------- evaluation


@dataclass
class EvalImage:
    pose: Pose
    depth: np.ndarray  # float32
    instance: np.ndarray  # int16
    category: np.ndarray  # int8

    def ground_truth(self) -> GroundTruthFrame:
        return GroundTruthFrame(self.depth.astype(np.float64), self.category.astype(np.int64),
                                self.instance.astype(np.int64))


def eval_images(scene: Scene, n: int, cam: CameraModel, seed: int) -> list[EvalImage]:
    rng = _stream(seed, scene.seed, 0xE7A1)
    out = []
    for p in envsim.random_free_poses(scene, n, rng):
        gt = envsim.render(scene, p, cam)
        out.append(EvalImage(p, gt.depth.astype(np.float32), gt.instance.astype(np.int16),
                             gt.category.astype(np.int8)))
    return out


def gt_instances(img: EvalImage, image_id: int) -> list[Instance]:
    out = []
    for iid in np.unique(img.instance[img.instance > 0]).tolist():
        mask = img.instance == iid
        if np.count_nonzero(mask) >= MIN_INSTANCE_PIXELS:
            out.append(Instance(image_id, int(img.category[mask][0]), mask_box(mask), mask))
    return out


def eval_noise(noise: NoiseProfile) -> NoiseProfile:
    """Held-out noise stream for evaluation images, so no evaluation frame
    repeats a draw seen during exploration."""
    return replace(noise, seed=noise.seed + 0x5EED)


def predictions(model: PerceptionModel, img: EvalImage, image_id: int, noise: NoiseProfile) -> list[Instance]:
    raw = predict_raw(img.ground_truth(), img.pose, noise)
    return [Instance(image_id, d.category, d.box, d.mask, d.score)
            for d in detect(model.calibrate(raw), model.floor)]


@dataclass
class Scores:
    det: float
    seg: float
    det_per_category: dict[int, float]
    seg_per_category: dict[int, float]
    n_gt: int
    n_pred: int

    def to_dict(self) -> dict:
        return {"det_AP50": 100.0 * self.det, "seg_AP50": 100.0 * self.seg,
                "det_per_category": {str(c): 100.0 * v for c, v in self.det_per_category.items()},
                "seg_per_category": {str(c): 100.0 * v for c, v in self.seg_per_category.items()},
                "n_gt": self.n_gt, "n_pred": self.n_pred}


def score(preds: list[Instance], gts: list[Instance]) -> Scores:
    det = ap50_per_category(preds, gts, "box")
    seg = ap50_per_category(preds, gts, "mask")
    mean = lambda d: float(np.mean(list(d.values()))) if d else 0.0  # noqa: E731
    return Scores(mean(det), mean(seg), det, seg, len(gts), len(preds))


# --------------------------------------------------------------- pipeline


def _collect(args):
    """Worker: one exploration episode, labeled both ways, reduced to
    training statistics. Returns (summary, {labeling: [FrameStats]})."""
    scene, policy, model, noise, cfg, seed = args
    ep = run_episode(scene, policy, model, noise, cfg.T, cfg.camera, cfg.s_hat, seed=seed,
                     dims=cfg.map_dims, keep_frames=True)
    labeled, frames = episode_labels(ep, cfg.camera, cfg.s_hat)
    stats = {"labelprop": [], "self_training": []}
    for f, fl in zip(ep.frames, frames):
        stats["labelprop"].append(FrameStats.from_pair(f.raw, fl.category))
        stats["self_training"].append(FrameStats.from_pair(f.raw, self_training_labels(f.raw, model)))
    summary = {"scene": scene.seed, "reward": int(ep.trace.rewards[-1]),
               "coverage": int(ep.trace.coverage[-1]), "instances": len(labeled.table),
               "labeled_pixels": int(sum(np.count_nonzero(fl.instance) for fl in frames)),
               "collisions": ep.trace.collisions}
    return summary, stats


def _specialize(args):
    """Worker: one test-scene episode with the generalization model, then
    per-scene fine-tuning for plain specialization and for each weak
    supervision budget k (plus the naive baseline).

    The map is fused from pretrained-scale scores: s_hat is a threshold on
    the detector's own confidence, and the fine-tuned calibration trades
    that scale for recall (it rarely exceeds s_hat). The generalization
    model is the starting point of every fine-tune."""
    scene, policy, gen_model, pretrained, noise, cfg, seed, ks = args
    ep = run_episode(scene, policy, pretrained, noise, cfg.T, cfg.camera, cfg.s_hat, seed=seed,
                     dims=cfg.map_dims, keep_frames=True)
    ft = dict(lr=cfg.finetune_lr, iters=cfg.finetune_iters, batch_size=cfg.batch_size,
              seed=seed)
    _, frames = episode_labels(ep, cfg.camera, cfg.s_hat)
    spec = fine_tune(gen_model, [(f.raw, fl.category) for f, fl in zip(ep.frames, frames)], **ft)
    models = {"specialization": spec}
    chosen = {}
    for k in ks:
        picks = select_weak_frames(ep.map, ep, k, cfg.camera)
        chosen[k] = picks
        gts = {t: envsim.render(scene, ep.frames[t].pose, cfg.camera) for t in picks}
        m = rebuild_map(ep, pretrained, cfg.camera, cfg.s_hat, cfg.map_dims,
                        {t: annotate_ground_truth(g) for t, g in gts.items()})
        _, frames_k = episode_labels(ep, cfg.camera, cfg.s_hat, m)
        models[f"seal_k{k}"] = fine_tune(
            gen_model, [(f.raw, fl.category) for f, fl in zip(ep.frames, frames_k)], **ft)
        models[f"naive_k{k}"] = fine_tune(
            pretrained, [(ep.frames[t].raw, gts[t].category) for t in picks], **ft)
    summary = {"scene": scene.seed, "reward": int(ep.trace.rewards[-1]),
               "weak_frames": {str(k): v for k, v in chosen.items()}}
    return summary, models


def _eval_scene(args):
    scene, cfg, models = args
    noise = eval_noise(cfg.noise)
    images = eval_images(scene, cfg.eval_poses, cfg.camera, cfg.seed)
    gts = [g for i, img in enumerate(images) for g in gt_instances(img, i)]
    out = {}
    for name, model in models.items():
        preds = [p for i, img in enumerate(images) for p in predictions(model, img, i, noise)]
        out[name] = (preds, gts)
    poses = [[round(p.pose.x, 4), round(p.pose.y, 4), p.pose.theta] for p in images]
    return out, poses


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(a) for a in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


class Experiment:
    """Lazily computed, cached stages of the full protocol for one config."""

    def __init__(self, cfg: ExperimentConfig, jobs: int = 1):
        cfg.validate()
        self.cfg = cfg
        self.jobs = max(1, int(jobs))
        self.pretrained = PerceptionModel()
        self._scenes: dict[int, Scene] = {}
        self._policies: dict[str, Policy] = {}
        self._policy_history: dict[str, list[float]] = {}
        self._data: dict[str, tuple] = {}
        self._models: dict[tuple[str, str], PerceptionModel] = {}
        self._special = None

    def scene(self, seed: int) -> Scene:
        if seed not in self._scenes:
            self._scenes[seed] = envsim.generate_scene(seed, self.cfg.scene)
        return self._scenes[seed]

    @property
    def train_scenes(self) -> list[Scene]:
        return [self.scene(s) for s in self.cfg.train_seeds]

    @property
    def test_scenes(self) -> list[Scene]:
        return [self.scene(s) for s in self.cfg.test_seeds]

    def policy(self, kind: str) -> Policy:
        if kind not in self._policies:
            params = GlobalPolicyParams(seed=self.cfg.seed)
            if kind in ("gainful", "coverage") and self.cfg.policy_episodes > 0:
                params, hist = train_policy(
                    self.train_scenes, params, self.cfg.policy_episodes, self.cfg.policy_lr,
                    self.pretrained, self.cfg.noise, self.cfg.T, self.cfg.camera, kind,
                    self.cfg.s_hat, self.cfg.map_dims, seed=self.cfg.seed)
                self._policy_history[kind] = hist
            self._policies[kind] = Policy(kind, params)
        return self._policies[kind]

    def training_data(self, kind: str):
        """Per training scene: episode summary and FrameStats per labeling."""
        if kind not in self._data:
            pol = self.policy(kind)
            items = [(sc, pol, self.pretrained, self.cfg.noise, self.cfg,
                      self.cfg.seed * 1_000_003 + sc.seed) for sc in self.train_scenes]
            res = _map(_collect, items, self.jobs)
            summaries = [r[0] for r in res]
            stats = {lab: [s for r in res for s in r[1][lab]] for lab in LABELINGS}
            self._data[kind] = (summaries, stats)
        return self._data[kind]

    def model(self, kind: str, labeling: str = "labelprop") -> PerceptionModel:
        key = (kind, labeling)
        if key not in self._models:
            _, stats = self.training_data(kind)
            self._models[key] = fine_tune(self.pretrained, stats[labeling], self.cfg.finetune_lr,
                                          self.cfg.finetune_iters, self.cfg.batch_size,
                                          seed=self.cfg.seed)
        return self._models[key]

    def specialization(self):
        """Per test scene: summary and the per-scene models."""
        if self._special is None:
            gen = self.model(self.cfg.policy)
            pol = self.policy(self.cfg.policy)
            items = [(sc, pol, gen, self.pretrained, self.cfg.noise, self.cfg,
                      self.cfg.seed * 1_000_003 + sc.seed, tuple(self.cfg.weak_k))
                     for sc in self.test_scenes]
            self._special = _map(_specialize, items, self.jobs)
        return self._special

    def evaluate(self, per_scene_models: list[dict[str, PerceptionModel]]):
        """Score named models; entry i of the list holds the models applied
        to test scene i. Returns ({name: pooled Scores}, {name: [per-scene
        Scores]}, eval poses)."""
        items = [(sc, self.cfg, models) for sc, models in zip(self.test_scenes, per_scene_models)]
        res = _map(_eval_scene, items, self.jobs)
        names = list(per_scene_models[0])
        pooled, per_scene = {}, {}
        for name in names:
            all_p, all_g = [], []
            per_scene[name] = []
            for s, (out, _) in enumerate(res):
                preds, gts = out[name]
                per_scene[name].append(score(preds, gts))
                # image ids are made unique across scenes for pooling
                off = s * self.cfg.eval_poses
                all_p += [replace(p, image=p.image + off) for p in preds]
                all_g += [replace(g, image=g.image + off) for g in gts]
            pooled[name] = score(all_p, all_g)
        return pooled, per_scene, [r[1] for r in res]


# ---------------------------------------------------------------- reports


def report_row(method: str, setting: str, s: Scores, per_scene=None, **extra) -> dict:
    row = {"method": method, "setting": setting, **s.to_dict()}
    if per_scene is not None:
        row["per_scene"] = [{"det_AP50": 100.0 * p.det, "seg_AP50": 100.0 * p.seg} for p in per_scene]
    row.update(extra)
    return row


def _reward_stats(summaries) -> dict:
    r = np.array([s["reward"] for s in summaries], dtype=float)
    return {"mean": float(r.mean()), "std": float(r.std()), "min": float(r.min()), "max": float(r.max())}


def report_meta(exp: Experiment, poses) -> dict:
    digest = hashlib.sha256(json.dumps(poses).encode()).hexdigest()
    return {"config": exp.cfg.to_dict(), "ap_interpolation": "all-point",
            "iou_threshold": IOU_THRESHOLD,
            "weak_entropy_scores": "calibrated scores as stored in the map",
            "eval_pose_sha256": digest, "eval_poses": poses}


def run_generalization(cfg: ExperimentConfig, jobs: int = 1, exp: Experiment | None = None) -> dict:
    exp = exp or Experiment(cfg, jobs)
    gen = exp.model(cfg.policy)
    pooled, per_scene, poses = exp.evaluate([{"pretrained": exp.pretrained, "seal": gen}] * len(cfg.test_seeds))
    summaries, _ = exp.training_data(cfg.policy)
    rows = [report_row("pretrained", "generalization", pooled["pretrained"], per_scene["pretrained"]),
            report_row("seal", "generalization", pooled["seal"], per_scene["seal"],
                       episode_reward=_reward_stats(summaries))]
    return {"meta": report_meta(exp, poses), "results": rows, "models": {"seal_generalization": gen.to_dict()}}


def run_specialization(cfg: ExperimentConfig, jobs: int = 1, exp: Experiment | None = None) -> dict:
    exp = exp or Experiment(cfg, jobs)
    gen = exp.model(cfg.policy)
    special = exp.specialization()
    models = [{"generalization": gen, "specialization": m["specialization"]} for _, m in special]
    pooled, per_scene, poses = exp.evaluate(models)
    rows = [report_row("seal", "generalization", pooled["generalization"], per_scene["generalization"]),
            report_row("seal", "specialization", pooled["specialization"], per_scene["specialization"],
                       episode_reward=_reward_stats([s for s, _ in special]))]
    return {"meta": report_meta(exp, poses), "results": rows}


def run_weak_supervision(cfg: ExperimentConfig, jobs: int = 1, exp: Experiment | None = None) -> dict:
    exp = exp or Experiment(cfg, jobs)
    special = exp.specialization()
    names = [f"{kind}_k{k}" for k in cfg.weak_k for kind in ("seal", "naive")]
    models = [{n: m[n] for n in names} for _, m in special]
    pooled, per_scene, poses = exp.evaluate(models)
    rows = [report_row(n.split("_")[0], f"weak_{n.split('_')[1]}", pooled[n], per_scene[n]) for n in names]
    frames = {str(s["scene"]): s["weak_frames"] for s, _ in special}
    return {"meta": report_meta(exp, poses), "results": rows, "weak_frames": frames}


def run_ablations(cfg: ExperimentConfig, jobs: int = 1, exp: Experiment | None = None) -> dict:
    exp = exp or Experiment(cfg, jobs)
    models = {f"{kind}+{lab}": exp.model(kind, lab) for kind in POLICY_KINDS for lab in LABELINGS}
    pooled, per_scene, poses = exp.evaluate([models] * len(cfg.test_seeds))
    rows = []
    for name, s in pooled.items():
        kind = name.split("+")[0]
        rows.append(report_row(name, "ablation", s, per_scene[name],
                                 episode_reward=_reward_stats(exp.training_data(kind)[0])))
    return {"meta": report_meta(exp, poses), "results": rows}


def run_all(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """Every protocol over one shared cache of policies, episodes and models."""
    exp = Experiment(cfg, jobs)
    parts = [run_generalization(cfg, exp=exp), run_specialization(cfg, exp=exp),
             run_weak_supervision(cfg, exp=exp), run_ablations(cfg, exp=exp)]
    rows, seen = [], set()
    for r in (r for p in parts for r in p["results"]):
        # specialization repeats the generalization row for its own comparison
        if (r["method"], r["setting"]) not in seen:
            seen.add((r["method"], r["setting"]))
            rows.append(r)
    report = {"meta": parts[0]["meta"], "results": rows, "models": parts[0]["models"],
              "weak_frames": parts[2]["weak_frames"],
              "policy_training": {k: v for k, v in sorted(exp._policy_history.items())}}
    return report


def _clean(obj):
    """JSON-ready copy with floats rounded to 9 significant decimals."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if not math.isfinite(v) else round(v, 9)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    """report.json (full) and report.csv (method, setting, det_AP50, seg_AP50)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath, cpath = out / "report.json", out / "report.csv"
    jpath.write_text(json.dumps(_clean(report), indent=1, sort_keys=True) + "\n")
    with open(cpath, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["method", "setting", "det_AP50", "seg_AP50"])
        for r in report["results"]:
            wr.writerow([r["method"], r["setting"], f"{r['det_AP50']:.4f}", f"{r['seg_AP50']:.4f}"])
    return jpath, cpath
