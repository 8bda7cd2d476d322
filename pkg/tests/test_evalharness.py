import json

import numpy as np
import pytest

from oracles import entropy_of_scores, exhaustive_ap
from seal import envsim
from seal.envsim import NUM_CATEGORIES
from seal.evalharness import (ConfigError, ExperimentConfig, Instance, ap50, category_ap, eval_images,
                              eval_noise, frame_entropy, gt_instances, select_weak_frames,
                              self_training_labels)
from seal.geometry import CameraModel, Pose
from seal.perception import PerceptionModel, mask_box
from seal.policy import Episode, EpisodeTrace, Frame
from seal.semmap import new_map

CAM = CameraModel()


def _inst(image, box, score=1.0, category=1):
    return Instance(image, category, box, None, score)


def test_ap50_examples():
    g = [_inst(0, (10, 10, 29, 29))]
    assert ap50([_inst(0, (10, 10, 29, 29))], g) == 1.0
    assert ap50([_inst(0, (50, 50, 60, 60))], g) == 0.0
    assert ap50([], g) == 0.0
    two = g + [_inst(1, (0, 0, 9, 9))]
    assert ap50([_inst(0, (10, 10, 29, 29), 0.9)], two) == 0.5
    # a confident false positive ahead of the hit halves the precision
    assert ap50([_inst(0, (50, 50, 60, 60), 0.9), _inst(0, (11, 11, 29, 29), 0.8)], g) == 0.5
    # categories are averaged with equal weight
    mixed = g + [_inst(0, (0, 0, 9, 9), category=2)]
    assert ap50([_inst(0, (10, 10, 29, 29))], mixed) == 0.5
    assert ap50([], []) == 0.0
    with pytest.raises(ValueError):
        category_ap([], [])


def _micro_case(rng):
    n_img = int(rng.integers(1, 3))
    gts, preds = [], []
    for _ in range(int(rng.integers(1, 4))):
        m = np.zeros((6, 6), bool)
        x, y = rng.integers(0, 4, 2)
        m[x:x + int(rng.integers(2, 4)), y:y + int(rng.integers(2, 4))] = True
        gts.append((int(rng.integers(n_img)), m))
    for _ in range(int(rng.integers(0, 5))):
        if gts and rng.random() < 0.7:
            f, base = gts[int(rng.integers(len(gts)))]
            m = base.copy()
            m ^= rng.random((6, 6)) < 0.15  # jitter the mask
        else:
            f, m = int(rng.integers(n_img)), rng.random((6, 6)) < 0.3
        if not m.any():
            m[0, 0] = True
        preds.append((f, float(rng.choice([0.3, 0.5, 0.7, 0.9])), m))
    return preds, gts


def test_ap_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        preds, gts = _micro_case(rng)
        want = exhaustive_ap(preds, gts)
        p = [Instance(f, 1, mask_box(m), m, s) for f, s, m in preds]
        g = [Instance(f, 1, mask_box(m), m) for f, m in gts]
        assert category_ap(p, g, "mask") == pytest.approx(want, abs=1e-12)


def test_self_training_labels():
    raw = np.zeros((NUM_CATEGORIES, 2, 3))
    raw[0, 0, 0] = 0.7
    raw[1, 0, 0] = 0.8
    raw[2, 0, 1] = 0.4  # under the floor
    raw[4, 1, 2] = 0.95
    lab = self_training_labels(raw, PerceptionModel())
    assert lab.tolist() == [[2, 0, 0], [0, 0, 5]]


def _wall_map():
    """Scores {0.5, 0.5} on a wall ahead (+x) and a confident chair wall
    behind (-x) of the origin."""
    m = new_map((7, 64, 64, 32))
    ahead = np.s_[52:56, :, :]
    behind = np.s_[8:12, :, :]
    for sl in (ahead, behind):
        m.data[(0, *sl)] = 1.0
    m.data[(1, *ahead)] = 0.5
    m.data[(2, *ahead)] = 0.5
    m.data[(1, *behind)] = 0.95
    return m


def _episode(m, headings):
    """Frames at the origin; both walls sit 1.0 m away along the optical
    axis. A heading of None stands for a frame with no valid depth."""
    raw = np.zeros((NUM_CATEGORIES, *CAM.shape), np.float32)
    frames = []
    for h in headings:
        depth = np.full(CAM.shape, 1.0 if h is not None else 0.0, np.float32)
        frames.append(Frame(Pose(0.0, 0.0, h if h is not None else 0.0), depth, raw))
    return Episode(EpisodeTrace(), m, frames)


def test_frame_entropy_matches_direct_computation():
    m = _wall_map()
    d = np.full(CAM.shape, 1.0)
    assert frame_entropy(m, Pose(0, 0, 0.0), d, CAM) == pytest.approx(
        entropy_of_scores([0.5, 0.5, 0, 0, 0, 0]), rel=1e-9)
    assert frame_entropy(m, Pose(0, 0, 180.0), d, CAM) == pytest.approx(
        entropy_of_scores([np.float32(0.95), 0, 0, 0, 0, 0]), rel=1e-9)
    assert frame_entropy(m, Pose(0, 0, 0.0), np.zeros(CAM.shape), CAM) == 0.0


def test_select_weak_frames_examples():
    m = _wall_map()
    ep = _episode(m, [180.0, 0.0, None, 0.0])
    assert select_weak_frames(m, ep, 0, CAM) == []
    assert select_weak_frames(m, ep, 1, CAM) == [1]
    assert select_weak_frames(m, ep, 2, CAM) == [1, 3]  # tie goes to the lower index
    assert select_weak_frames(m, ep, 3, CAM) == [0, 1, 3]
    assert select_weak_frames(m, ep, 4, CAM) == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        select_weak_frames(m, ep, 5, CAM)


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(train_seeds=(1, 2), test_seeds=(2, 3)).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(s_hat=1.0).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(weak_k=(0, 500)).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(policy="bogus").validate()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"T": 10, "colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"noise": {"fp_rate": 2.0}})


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(train_seeds=(3, 4), T=20, weak_k=(0, 2)).with_seed(7)
    assert cfg.noise.seed == 7
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path) == cfg
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_eval_images_are_deterministic_and_held_out():
    sc = envsim.generate_scene(10_000)
    a = eval_images(sc, 5, CAM, 0)
    b = eval_images(sc, 5, CAM, 0)
    assert [x.pose for x in a] == [x.pose for x in b]
    assert [x.pose for x in eval_images(sc, 5, CAM, 1)] != [x.pose for x in a]
    noise = ExperimentConfig().noise
    assert eval_noise(noise).seed != noise.seed
    for i, img in enumerate(a):
        for g in gt_instances(img, i):
            assert g.mask.sum() >= 10 and g.image == i
            assert g.box == mask_box(g.mask)
