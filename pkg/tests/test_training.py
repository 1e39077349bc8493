import math

import numpy as np
import pytest

from hokem.network import HOAGCNModel, ModelConfig, save_checkpoint
from hokem.training import (
    NonFiniteGradientError,
    TrainConfig,
    clip_gradients,
    generate_synthetic_dataset,
    lr_at,
    read_dataset,
    sgd_step,
    synthetic_class_names,
    train,
    write_dataset,
    write_history,
)

from oracles import brute_centroid

SMALL = ModelConfig(n_classes=4, channels=(16, 16))


@pytest.fixture(scope="module")
def data():
    return generate_synthetic_dataset(0, 40, 4)


@pytest.mark.parametrize("epoch, lr", [(0, 0.0), (10, 0.1), (80, 0.0), (5, 0.05), (45, 0.05)])
def test_schedule_points(epoch, lr):
    assert lr_at(TrainConfig(), epoch) == pytest.approx(lr, abs=1e-15)


def test_schedule_shape():
    cfg = TrainConfig()
    xs = np.linspace(0, 80, 1601)
    ys = np.array([lr_at(cfg, x) for x in xs])
    assert ys.max() == lr_at(cfg, 10) == 0.1
    assert np.abs(np.diff(ys)).max() <= 0.1 / 10 * 0.05 + 1e-15
    # piecewise linear: constant slope on each side of the peak
    assert np.allclose(np.diff(ys[xs <= 10], 2), 0) and np.allclose(np.diff(ys[xs >= 10], 2), 0)
    with pytest.raises(ValueError):
        lr_at(cfg, 81)


def test_cosine_schedule_endpoints():
    cfg = TrainConfig(schedule="cosine")
    assert lr_at(cfg, 10) == 0.1 and lr_at(cfg, 80) == pytest.approx(0.0, abs=1e-15)
    assert lr_at(cfg, 45) == pytest.approx(0.05)


def test_sgd_examples():
    (p,), _ = sgd_step([np.array(1.0)], [np.array(0.5)], [np.array(0.0)], 0.1, 0.0, 0.0)
    assert p == pytest.approx(0.95, abs=1e-15)
    (p,), _ = sgd_step([np.array(1.0)], [np.array(0.0)], [np.array(0.0)], 0.1, 0.0, 1e-4)
    assert p == pytest.approx(0.99999, abs=1e-15)
    p, v = [np.array(0.0)], [np.array(0.0)]
    p, v = sgd_step(p, [np.array(1.0)], v, 0.1, 0.9, 0.0)
    assert p[0] == pytest.approx(-0.1)
    p, v = sgd_step(p, [np.array(1.0)], v, 0.1, 0.9, 0.0)
    assert p[0] == pytest.approx(-0.29)


def test_sgd_zero_gradient_identity_and_purity():
    rng = np.random.default_rng(0)
    params = [rng.normal(size=(3, 2)), rng.normal(size=4)]
    before = [p.copy() for p in params]
    new, _ = sgd_step(params, [np.zeros((3, 2)), np.zeros(4)], [np.zeros((3, 2)), np.zeros(4)], 0.1, 0.9, 0.0)
    for a, b, c in zip(new, params, before):
        np.testing.assert_array_equal(a, c)
        np.testing.assert_array_equal(b, c)


def test_sgd_rejects_non_finite():
    with pytest.raises(NonFiniteGradientError):
        sgd_step([np.ones(2)], [np.array([1.0, np.inf])], [np.zeros(2)], 0.1, 0.9, 0.0)


def test_clip_gradients():
    g = [np.array([3.0]), np.array([4.0])]
    out = clip_gradients(g, 1.0)
    assert math.hypot(out[0][0], out[1][0]) == pytest.approx(1.0)
    assert clip_gradients(g, 10.0)[0][0] == 3.0
    assert clip_gradients(g, None) == g


def test_dataset_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_dataset(generate_synthetic_dataset(3, 30, 4), a)
    write_dataset(generate_synthetic_dataset(3, 30, 4), b)
    assert a.read_bytes() == b.read_bytes()
    write_dataset(generate_synthetic_dataset(4, 30, 4), b)
    assert a.read_bytes() != b.read_bytes()


def test_dataset_round_trip(tmp_path, data):
    write_dataset(data, tmp_path / "d.jsonl")
    back = read_dataset(tmp_path / "d.jsonl")
    assert len(back) == len(data)
    for s, t in zip(data, back):
        np.testing.assert_array_equal(s.features, t.features)
        np.testing.assert_array_equal(s.labels, t.labels)
        np.testing.assert_array_equal(s.baseline_probs, t.baseline_probs)
        assert (s.image_id, s.human_box, s.object_box) == (t.image_id, t.human_box, t.object_box)


def _decode(seg):
    h, w = seg["size"]
    flat, value = [], False
    for c in seg["counts"]:
        flat += [value] * c
        value = not value
    return np.array(flat, dtype=bool).reshape(w, h).T


def _independent_labels(record, names):
    """Re-evaluate the labelling rules from the raw record with plain loops."""
    groups = {
        "hold": ("left_wrist", "right_wrist"),
        "kick": ("left_ankle", "right_ankle"),
        "head": ("nose",),
        "sit": ("left_hip", "right_hip"),
        "knee": ("left_knee", "right_knee"),
        "elbow": ("left_elbow", "right_elbow"),
        "shoulder": ("left_shoulder", "right_shoulder"),
    }
    from hokem.hograph import COCO_JOINTS

    kp = dict(zip(COCO_JOINTS, record["human"]["keypoints"]))
    torso = [kp[n] for n in ("left_shoulder", "right_shoulder", "left_hip", "right_hip")]
    diag = math.hypot(max(p[0] for p in torso) - min(p[0] for p in torso), max(p[1] for p in torso) - min(p[1] for p in torso))
    gx, gy = brute_centroid(_decode(record["object"]["segmentation"]))
    hits = [min(math.hypot(kp[j][0] - gx, kp[j][1] - gy) for j in groups[n]) / diag < 0.4 for n in names[:-1]]
    return [float(h) for h in hits] + [float(not any(hits))]


def test_labels_rederivable(data):
    names = synthetic_class_names(4)
    for s in data:
        assert _independent_labels(s.record, names) == s.labels.tolist()


def test_class_balance():
    samples = generate_synthetic_dataset(5, 500, 4)
    counts = np.sum([s.labels for s in samples], axis=0)
    assert (np.abs(counts - 125) <= 12.5).all()
    mixed = generate_synthetic_dataset(6, 500, 3, mixture=(0.5, 0.3, 0.2))
    counts = np.sum([s.labels for s in mixed], axis=0)
    np.testing.assert_allclose(counts, (250, 150, 100), rtol=0.1)


def test_baseline_weakly_informative(data):
    on = np.concatenate([s.baseline_probs[s.labels > 0] for s in data])
    off = np.concatenate([s.baseline_probs[s.labels == 0] for s in data])
    assert 0.5 < on.mean() < 0.6 and 0.4 < off.mean() < 0.5


def test_zero_lr_leaves_parameters(data):
    m = HOAGCNModel(SMALL, seed=0)
    before = m.state()
    train(m, data, TrainConfig(total_epochs=2, warmup_epochs=1, peak_lr=0.0))
    for k, v in m.state().items():
        np.testing.assert_array_equal(v, before[k])


def test_history_length_and_csv(tmp_path, data):
    m = HOAGCNModel(SMALL, seed=0)
    seen = []
    res = train(m, data[:16], TrainConfig(total_epochs=7, warmup_epochs=2), on_epoch=lambda *a: seen.append(a))
    assert len(res.history) == 7 and seen == res.history
    assert [h[1] for h in res.history] == [lr_at(TrainConfig(total_epochs=7, warmup_epochs=2), e) for e in range(7)]
    write_history(res, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,lr,mean_loss" and len(lines) == 8
    assert float(lines[-1].split(",")[2]) == res.losses[-1]


def test_overfit_twenty_samples(data):
    m = HOAGCNModel(SMALL, seed=1)
    res = train(m, data[:20], TrainConfig(total_epochs=200, warmup_epochs=10, batch_size=4))
    assert res.losses[-1] < 0.05


def test_training_reproducible(tmp_path, data):
    cfg = TrainConfig(total_epochs=3, warmup_epochs=1, seed=7)
    for name in ("a", "b"):
        m = HOAGCNModel(SMALL, seed=2)
        train(m, data, cfg)
        save_checkpoint(m, tmp_path / name)
    for f in ("params.bin", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def _smoothed(losses, window=3):
    x = np.asarray(losses)
    return np.convolve(x, np.ones(window) / window, mode="valid")


@pytest.mark.slow
def test_smoothed_loss_decreases_early():
    """First 10 epochs of the scaled schedule: 3-epoch moving average strictly falls in >= 9 of 10 runs."""
    samples = generate_synthetic_dataset(0, 160, 4)
    ok = 0
    for seed in range(10):
        m = HOAGCNModel(ModelConfig(n_classes=4), seed=seed)
        res = train(m, samples, TrainConfig(total_epochs=40, warmup_epochs=5, seed=seed), epochs=10)
        ok += bool((np.diff(_smoothed(res.losses)) < 0).all())
    assert ok >= 9
