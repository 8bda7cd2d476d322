"""Noisy perception oracle and its trainable per-category recalibration.

Raw score images are produced from ground truth by a seeded corruption
process; the PerceptionModel maps raw scores through a logistic link
``sigmoid(a_c * logit(r) + b_c)`` with one (a_c, b_c) pair per category.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from seal.envsim import NUM_CATEGORIES, GroundTruthFrame
from seal.geometry import Pose

log = logging.getLogger(__name__)

CONFIDENT = (0.9, 1.0)
UNCONFIDENT = (0.2, 0.9)
MISSED = (0.01, 0.1)
RAW_EPS = 1e-4
MIN_GAIN = 1e-3


class DegenerateDataset(UserWarning):
    pass


@dataclass(frozen=True)
class NoiseProfile:
    miss_rate: tuple[float, ...] = (0.3,) * NUM_CATEGORIES
    fp_rate: float = 0.1
    confusion: tuple[float, ...] = (1.0,) * NUM_CATEGORIES
    area_gain: float = 2.5
    conf_cap: float = 0.9
    depth_max: float = 5.0
    confident: tuple[float, float] = CONFIDENT
    seed: int = 0

    def __post_init__(self):
        rates = list(self.miss_rate) + [self.fp_rate]
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError("noise rates must lie in [0, 1]")
        if len(self.miss_rate) != NUM_CATEGORIES or len(self.confusion) != NUM_CATEGORIES:
            raise ValueError(f"expected {NUM_CATEGORIES} per-category entries")
        if not 0.0 <= self.confident[0] <= self.confident[1] <= 1.0:
            raise ValueError("confident score range must be an interval inside [0, 1]")

    @classmethod
    def zero(cls, seed: int = 0) -> "NoiseProfile":
        return cls(miss_rate=(0.0,) * NUM_CATEGORIES, fp_rate=0.0, conf_cap=1.0,
                   area_gain=math.inf, confident=(1.0, 1.0), seed=seed)

    def p_confident(self, area_fraction: float, distance: float) -> float:
        if math.isinf(self.area_gain):
            return 1.0
        a = min(max(area_fraction * self.area_gain, 0.0), self.conf_cap)
        return a * max(0.0, 1.0 - distance / self.depth_max)

    def to_dict(self) -> dict:
        return {
            "miss_rate": list(self.miss_rate),
            "fp_rate": self.fp_rate,
            "confusion": list(self.confusion),
            "area_gain": None if math.isinf(self.area_gain) else self.area_gain,
            "conf_cap": self.conf_cap,
            "depth_max": self.depth_max,
            "confident": list(self.confident),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseProfile":
        d = dict(d)
        for key in ("miss_rate", "confusion", "confident"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("area_gain", 0.0) is None:
            d["area_gain"] = math.inf
        return cls(**d)


def _logit(r):
    r = np.clip(r, RAW_EPS, 1.0 - RAW_EPS)
    return np.log(r) - np.log1p(-r)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class PerceptionModel:
    gain: tuple[float, ...] = (1.0,) * NUM_CATEGORIES
    bias: tuple[float, ...] = (0.0,) * NUM_CATEGORIES
    floor: tuple[float, ...] = (0.5,) * NUM_CATEGORIES
    version: int = 0

    def calibrate(self, raw: np.ndarray) -> np.ndarray:
        """Calibrated (C, H, W) scores; exact zeros stay zero."""
        raw = np.asarray(raw, dtype=np.float64)
        a = np.asarray(self.gain)[:, None, None]
        b = np.asarray(self.bias)[:, None, None]
        if self.is_identity:
            return raw.copy()
        out = _sigmoid(a * _logit(raw) + b)
        return np.where(raw > 0.0, out, 0.0)

    @property
    def is_identity(self) -> bool:
        return all(a == 1.0 for a in self.gain) and all(b == 0.0 for b in self.bias)

    def to_dict(self) -> dict:
        return {"version": self.version, "gain": list(self.gain), "bias": list(self.bias),
                "floor": list(self.floor)}

    @classmethod
    def from_dict(cls, d: dict) -> "PerceptionModel":
        return cls(tuple(d["gain"]), tuple(d["bias"]), tuple(d["floor"]), int(d["version"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "PerceptionModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- predict


def pose_key(pose: Pose) -> tuple[int, int, int]:
    return (int(round(pose.x / 0.25)), int(round(pose.y / 0.25)),
            int(round(pose.theta / 30.0)) % 12)


def _draw(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[k & 0xFFFFFFFF for k in key]]))


def predict_raw(gt: GroundTruthFrame, pose: Pose, noise: NoiseProfile) -> np.ndarray:
    """Raw (uncalibrated) (C, H, W) score image for one ground-truth frame.

    Per visible instance, a detect/miss and confident/unconfident draw keyed
    by (seed, instance, discretized pose); one optional false blob per frame.
    """
    h, w = gt.depth.shape
    scores = np.zeros((NUM_CATEGORIES, h, w), dtype=np.float64)
    pk = pose_key(pose)
    ids, counts = np.unique(gt.instance[gt.instance > 0], return_counts=True)
    for inst, count in zip(ids.tolist(), counts.tolist()):
        mask = gt.instance == inst
        cat = int(gt.category[mask][0])
        rng = _draw(noise.seed, 1, inst, *pk)
        u_miss, u_conf, u_score = rng.random(3)
        if u_miss < noise.miss_rate[cat - 1]:
            s = MISSED[0] + (MISSED[1] - MISSED[0]) * u_score
        else:
            dist = float(np.median(gt.depth[mask]))
            if u_conf < noise.p_confident(count / (h * w), dist):
                lo, hi = noise.confident
                s = lo + (hi - lo) * u_score
            else:
                s = UNCONFIDENT[0] + (UNCONFIDENT[1] - UNCONFIDENT[0]) * u_score
        ch = scores[cat - 1]
        ch[mask] = np.maximum(ch[mask], s)
    if noise.fp_rate > 0.0:
        rng = _draw(noise.seed, 2, *pk)
        if rng.random() < noise.fp_rate:
            bh = int(rng.integers(max(2, h // 10), max(3, h * 3 // 10)))
            bw = int(rng.integers(max(2, w // 10), max(3, w * 3 // 10)))
            r0 = int(rng.integers(0, h - bh + 1))
            c0 = int(rng.integers(0, w - bw + 1))
            under = gt.category[r0:r0 + bh, c0:c0 + bw]
            present = np.bincount(under.ravel(), minlength=NUM_CATEGORIES + 1)
            dominant = int(np.argmax(present[1:]) + 1) if present[1:].any() else 0
            weights = np.array(noise.confusion, dtype=np.float64)
            if dominant:
                weights[dominant - 1] = 0.0
            cat = int(rng.choice(NUM_CATEGORIES, p=weights / weights.sum())) + 1
            s = UNCONFIDENT[0] + (UNCONFIDENT[1] - UNCONFIDENT[0]) * rng.random()
            blob = scores[cat - 1, r0:r0 + bh, c0:c0 + bw]
            np.maximum(blob, s, out=blob)
    return scores


def predict(gt: GroundTruthFrame, pose: Pose, model: PerceptionModel,
            noise: NoiseProfile) -> np.ndarray:
    return model.calibrate(predict_raw(gt, pose, noise))


def annotate_ground_truth(gt: GroundTruthFrame) -> np.ndarray:
    """Score 1.0 on each labeled pixel's category, 0 elsewhere."""
    h, w = gt.category.shape
    scores = np.zeros((NUM_CATEGORIES, h, w), dtype=np.float64)
    cat = gt.category
    rows, cols = np.nonzero(cat > 0)
    scores[cat[rows, cols] - 1, rows, cols] = 1.0
    return scores


# -------------------------------------------------------------- detection


@dataclass
class Detection:
    category: int
    score: float
    mask: np.ndarray
    box: tuple[int, int, int, int]  # (x0, y0, x1, y1), inclusive


def mask_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    return (int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


def detect(calibrated: np.ndarray, floor, min_pixels: int = 10) -> list[Detection]:
    """Threshold each category channel at its floor and split into connected
    components; each component becomes one scored detection."""
    out = []
    for c in range(calibrated.shape[0]):
        above = calibrated[c] > floor[c]
        if not above.any():
            continue
        labels, n = ndimage.label(above)
        if n == 0:
            continue
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        sums = np.bincount(labels.ravel(), weights=calibrated[c].ravel(), minlength=n + 1)
        for k in range(1, n + 1):
            if sizes[k] < min_pixels:
                continue
            mask = labels == k
            out.append(Detection(c + 1, float(sums[k] / sizes[k]), mask, mask_box(mask)))
    return out


# ------------------------------------------------------------ fine-tuning


@dataclass
class FrameStats:
    """Sufficient statistics of one (raw scores, label image) pair.

    Per category: the distinct raw values and the number of pixels carrying
    each value with a positive or negative label.
    """

    values: list[np.ndarray] = field(default_factory=list)
    pos: list[np.ndarray] = field(default_factory=list)
    neg: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def from_pair(cls, raw: np.ndarray, labels: np.ndarray) -> "FrameStats":
        raw = np.asarray(raw)
        labels = np.asarray(labels)
        if raw.shape[1:] != labels.shape:
            raise ValueError(f"raw {raw.shape} and labels {labels.shape} disagree")
        st = cls()
        flat_labels = labels.ravel()
        n = flat_labels.size
        for c in range(raw.shape[0]):
            r = raw[c].ravel()
            y = flat_labels == c + 1
            # most pixels carry no score; count them as one zero entry
            nz = np.flatnonzero(r)
            v, inv = np.unique(r[nz], return_inverse=True)
            pos = np.bincount(inv, weights=y[nz], minlength=len(v))
            neg = np.bincount(inv, minlength=len(v)) - pos
            n_zero = n - len(nz)
            if n_zero:
                z_pos = float(np.count_nonzero(y)) - pos.sum()
                v = np.concatenate([[0.0], v])
                pos = np.concatenate([[z_pos], pos])
                neg = np.concatenate([[n_zero - z_pos], neg])
            st.values.append(v.astype(np.float64))
            st.pos.append(pos.astype(np.float64))
            st.neg.append(neg.astype(np.float64))
        return st


def _as_stats(dataset) -> list[FrameStats]:
    return [d if isinstance(d, FrameStats) else FrameStats.from_pair(*d) for d in dataset]


def loss_and_grad(stats: list[FrameStats], gain, bias):
    """Summed pixelwise binary cross-entropy per frame, averaged over frames.

    Returns (loss, dL/dgain, dL/dbias) with one gradient entry per category.
    Pixels with raw score exactly 0 have no signal and are excluded.
    """
    n_cat = len(gain)
    g_a = np.zeros(n_cat)
    g_b = np.zeros(n_cat)
    loss = 0.0
    if not stats:
        return loss, g_a, g_b
    for c in range(n_cat):
        v = np.concatenate([s.values[c] for s in stats])
        pos = np.concatenate([s.pos[c] for s in stats])
        neg = np.concatenate([s.neg[c] for s in stats])
        keep = v > 0.0
        v, pos, neg = v[keep], pos[keep], neg[keep]
        if not len(v):
            continue
        x = _logit(v)
        z = gain[c] * x + bias[c]
        # -log sigmoid(z) = logaddexp(0, -z); -log(1 - sigmoid(z)) = logaddexp(0, z)
        loss += float(np.sum(pos * np.logaddexp(0.0, -z) + neg * np.logaddexp(0.0, z)))
        p = _sigmoid(z)
        resid = neg * p - pos * (1.0 - p)
        g_a[c] = float(np.sum(resid * x))
        g_b[c] = float(np.sum(resid))
    k = len(stats)
    return loss / k, g_a / k, g_b / k


def fine_tune(model: PerceptionModel, dataset, lr: float = 1e-4, iters: int = 5000,
              batch_size: int = 8, seed: int = 0) -> PerceptionModel:
    """Minibatch SGD on the calibration parameters.

    dataset: sequence of (raw (C,H,W), label image (H,W)) pairs or FrameStats.
    The gain is projected back to >= MIN_GAIN after each step so calibration
    stays monotone. Categories without a positive label carrying raw signal
    keep their parameters: with one class only the fit has no optimum.
    """
    stats = _as_stats(dataset)
    if not stats:
        return model
    n_cat = len(model.gain)
    active = np.ones(n_cat, dtype=bool)
    for c in range(n_cat):
        n_pos = sum(float(s.pos[c].sum()) for s in stats)
        signal = sum(float(s.pos[c][s.values[c] > 0].sum()) for s in stats)
        if n_pos > 0 and signal == 0:
            msg = f"category {c + 1} has {int(n_pos)} labeled pixels but no raw signal; skipped"
            log.warning(msg)
            warnings.warn(msg, DegenerateDataset, stacklevel=2)
            active[c] = False
        elif n_pos == 0:
            # negatives only: the fit would drive the category to "never";
            # a missing self-label is no evidence of absence, so keep it
            log.info("category %d has no positive labels; left unchanged", c + 1)
            active[c] = False
    a = np.array(model.gain, dtype=np.float64)
    b = np.array(model.bias, dtype=np.float64)
    rng = np.random.default_rng(seed)
    bs = min(batch_size, len(stats))
    for _ in range(iters):
        idx = rng.choice(len(stats), size=bs, replace=False) if bs < len(stats) else range(len(stats))
        _, ga, gb = loss_and_grad([stats[i] for i in idx], a, b)
        a = np.where(active, a - lr * ga, a)
        b = np.where(active, b - lr * gb, b)
        a = np.maximum(a, MIN_GAIN)
    return PerceptionModel(tuple(float(v) for v in a), tuple(float(v) for v in b),
                           model.floor, model.version + 1)
