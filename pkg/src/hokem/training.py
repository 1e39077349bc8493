"""SGD training with warmup/decay and a synthetic human-object dataset.

The synthetic set poses a jittered 17-joint skeleton, drops a rasterized
object (rectangle, ellipse or L-shape) somewhere around it and labels the
pair by proximity rules between the object's centroid and joint groups,
measured in upper-body units. Samples whose distances fall inside a band
around the rule radius are redrawn, so the rules have a margin.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .features import KeypointSet, keypoint_features, upper_body_diagonal
from .geometry import RasterMask, centroid, decode_rle, encode_rle, extract_object_keypoints
from .hograph import COCO_JOINTS
from .network import HOAGCNModel, bce_loss

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss or gradients became non-finite; ``state`` holds the last good parameters."""

    def __init__(self, message, history, state):
        super().__init__(message)
        self.history = history
        self.state = state


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 80
    warmup_epochs: int = 10
    peak_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0001
    batch_size: int = 16
    seed: int = 0
    schedule: str = "linear"  # linear | cosine (decay shape after warmup)
    grad_clip: Optional[float] = 1.0  # global L2 norm; None disables

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs < total_epochs")
        if self.peak_lr < 0 or self.momentum < 0 or self.weight_decay < 0 or self.batch_size < 1:
            raise ValueError("rates must be non-negative and batch_size positive")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive or None")
        if self.schedule not in ("linear", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_at(config: TrainConfig, epoch: float) -> float:
    """Linear ramp 0 -> peak over warmup, then decay to 0 at ``total_epochs``."""
    if not 0 <= epoch <= config.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.total_epochs}]")
    w, total, peak = config.warmup_epochs, config.total_epochs, config.peak_lr
    if epoch < w:
        return peak * epoch / w
    frac = (epoch - w) / (total - w)
    if config.schedule == "cosine":
        return peak * 0.5 * (1.0 + math.cos(math.pi * frac))
    return peak * (1.0 - frac)


def clip_gradients(grads: Sequence[np.ndarray], max_norm: Optional[float]) -> List[np.ndarray]:
    """Rescale so the global L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return list(grads)
    norm = math.sqrt(float(np.sum([np.vdot(g, g) for g in grads])))
    if not np.isfinite(norm) or norm <= max_norm:
        return list(grads)
    return [g * (max_norm / norm) for g in grads]


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    velocity: Sequence[np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Classical momentum SGD with coupled weight decay.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    Returns new parameter and velocity lists; inputs are not modified.
    """
    bad = [i for i, g in enumerate(grads) if not np.isfinite(g).all()]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradients for parameter indices {bad}")
    new_params, new_velocity = [], []
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise T.DimensionError(f"parameter {p.shape}, gradient {g.shape}, velocity {v.shape} differ")
        v = momentum * v + g + weight_decay * p
        new_velocity.append(v)
        new_params.append(p - lr * v)
    return new_params, new_velocity


# ---------------------------------------------------------------------------
# samples


@dataclass(eq=False)
class HOSample:
    """One human-object pair ready for training and evaluation."""

    features: np.ndarray  # (26, 4)
    labels: np.ndarray  # (N_c,) in {0, 1}
    baseline_probs: np.ndarray  # (N_c,)
    image_id: str
    human_box: Tuple[float, float, float, float]
    object_box: Optional[Tuple[float, float, float, float]]
    record: dict = field(default_factory=dict, repr=False)


def sample_from_record(record: dict) -> HOSample:
    """Rebuild a sample (features included) from its JSON record."""
    human = record["human"]
    obj = record["object"]
    seg = obj["segmentation"]
    mask = RasterMask(decode_rle(seg["counts"], seg["size"]))
    kps = KeypointSet(
        np.asarray(human["keypoints"], dtype=np.float64),
        extract_object_keypoints(mask),
        tuple(human["bbox"]),
        np.asarray(human.get("valid", [True] * len(COCO_JOINTS)), dtype=bool),
    )
    labels = np.asarray(record["labels"], dtype=np.float64)
    probs = np.asarray(record["baseline_probs"], dtype=np.float64)
    if not set(np.unique(labels)) <= {0.0, 1.0}:
        raise ValueError("labels must be multi-hot")
    if probs.shape != labels.shape:
        raise ValueError("baseline_probs length differs from labels")
    return HOSample(
        keypoint_features(kps),
        labels,
        probs,
        str(record["image_id"]),
        tuple(float(v) for v in human["bbox"]),
        tuple(float(v) for v in obj["bbox"]),
        record,
    )


def write_dataset(samples: Iterable[HOSample], path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.record, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_dataset(path) -> List[HOSample]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(sample_from_record(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# synthetic data

J = {name: i for i, name in enumerate(COCO_JOINTS)}

RULE_GROUPS = (
    ("hold", ("left_wrist", "right_wrist")),
    ("kick", ("left_ankle", "right_ankle")),
    ("head", ("nose",)),
    ("sit", ("left_hip", "right_hip")),
    ("knee", ("left_knee", "right_knee")),
    ("elbow", ("left_elbow", "right_elbow")),
    ("shoulder", ("left_shoulder", "right_shoulder")),
)
NONE_CLASS = "none"
MAX_CLASSES = len(RULE_GROUPS) + 1

RULE_RADIUS = 0.4  # upper-body diagonals
MARGIN_LOW, MARGIN_HIGH = 0.75 * RULE_RADIUS, 1.25 * RULE_RADIUS
CANVAS = 512
SHAPES = ("rect", "ellipse", "L")


def synthetic_class_names(n_classes: int) -> Tuple[str, ...]:
    if not 2 <= n_classes <= MAX_CLASSES:
        raise ValueError(f"n_classes must be in [2, {MAX_CLASSES}], got {n_classes}")
    return tuple(name for name, _ in RULE_GROUPS[: n_classes - 1]) + (NONE_CLASS,)


def group_distances(human: np.ndarray, gravity: Sequence[float], n_classes: int) -> np.ndarray:
    """Min distance (upper-body units) from ``gravity`` to each rule group."""
    torso = human[[J["left_shoulder"], J["right_shoulder"], J["left_hip"], J["right_hip"]]]
    w, h = torso.max(axis=0) - torso.min(axis=0)
    diag = float(np.hypot(w, h))
    g = np.asarray(gravity, dtype=np.float64)
    out = []
    for _, joints in RULE_GROUPS[: n_classes - 1]:
        pts = human[[J[n] for n in joints]]
        out.append(np.min(np.hypot(*(pts - g).T)) / diag)
    return np.array(out)


def rule_labels(human: np.ndarray, gravity: Sequence[float], n_classes: int) -> np.ndarray:
    near = group_distances(human, gravity, n_classes) < RULE_RADIUS
    return np.concatenate([near, [not near.any()]]).astype(np.float64)


def _limb(start, phi, length, side):
    return start + length * np.array([side * np.sin(phi), np.cos(phi)])


def _pose(rng: np.random.Generator) -> np.ndarray:
    """Skeleton in body units, y down, neck at the origin."""
    p = np.zeros((17, 2))
    tilt = rng.uniform(-0.08, 0.08)
    p[J["nose"]] = (tilt, -0.45)
    p[J["left_eye"]] = (tilt + 0.06, -0.5)
    p[J["right_eye"]] = (tilt - 0.06, -0.5)
    p[J["left_ear"]] = (tilt + 0.12, -0.47)
    p[J["right_ear"]] = (tilt - 0.12, -0.47)
    hip_w = rng.uniform(0.14, 0.2)
    for side, pre in ((1, "left"), (-1, "right")):
        sh = np.array([side * rng.uniform(0.22, 0.28), 0.0])
        hip = np.array([side * hip_w, rng.uniform(0.8, 0.9)])
        upper = rng.uniform(-0.3, 2.6)
        fore = upper + rng.uniform(-0.3, 1.8)
        elbow = _limb(sh, upper, 0.42, side)
        thigh = rng.uniform(-0.2, 1.3)
        shin = thigh + rng.uniform(-0.9, 0.2)
        knee = _limb(hip, thigh, 0.5, side)
        p[J[f"{pre}_shoulder"]] = sh
        p[J[f"{pre}_elbow"]] = elbow
        p[J[f"{pre}_wrist"]] = _limb(elbow, fore, 0.38, side)
        p[J[f"{pre}_hip"]] = hip
        p[J[f"{pre}_knee"]] = knee
        p[J[f"{pre}_ankle"]] = _limb(knee, shin, 0.48, side)
    return p + rng.normal(0.0, 0.02, size=p.shape)


def _shape_mask(rng: np.random.Generator, kind: str, center, half: float, canvas: int) -> np.ndarray:
    cx, cy = center
    a = half * rng.uniform(0.6, 1.4)
    b = half * rng.uniform(0.6, 1.4)
    theta = rng.uniform(0, np.pi)
    bits = np.zeros((canvas, canvas), dtype=bool)
    reach = int(np.ceil(np.hypot(a, b))) + 2
    x_lo, x_hi = max(int(cx) - reach, 0), min(int(cx) + reach + 1, canvas)
    y_lo, y_hi = max(int(cy) - reach, 0), min(int(cy) + reach + 1, canvas)
    if x_lo >= x_hi or y_lo >= y_hi:
        return bits
    ys, xs = np.mgrid[y_lo:y_hi, x_lo:x_hi].astype(np.float64)
    u = (xs - cx) * np.cos(theta) + (ys - cy) * np.sin(theta)
    v = -(xs - cx) * np.sin(theta) + (ys - cy) * np.cos(theta)
    if kind == "rect":
        inside = (np.abs(u) <= a) & (np.abs(v) <= b)
    elif kind == "ellipse":
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    else:
        # L: full-height left bar plus bottom bar
        t = 0.45
        bar1 = (u >= -a) & (u <= -a + 2 * a * t) & (np.abs(v) <= b)
        bar2 = (u >= -a) & (u <= a) & (v >= b - 2 * b * t) & (v <= b)
        inside = bar1 | bar2
    bits[y_lo:y_hi, x_lo:x_hi] = inside
    return bits


def _draw_sample(rng: np.random.Generator, target: int, n_classes: int, max_tries: int = 200) -> dict:
    """Rejection-sample one scene whose rule labels equal ``{target}`` with margin."""
    n_groups = n_classes - 1
    for _ in range(max_tries):
        body = _pose(rng)
        scale = rng.uniform(50.0, 80.0)
        rot = rng.uniform(-0.2, 0.2)
        rmat = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
        shift = np.array([CANVAS / 2, CANVAS / 2 - 30]) + rng.uniform(-30, 30, size=2)
        human = body @ rmat.T * scale + shift

        if target < n_groups:
            joints = RULE_GROUPS[target][1]
            anchor = body[J[joints[rng.integers(len(joints))]]]
            ang = rng.uniform(0, 2 * np.pi)
            g_body = anchor + rng.uniform(0.0, 0.5 * RULE_RADIUS) * np.array([np.cos(ang), np.sin(ang)])
        else:
            g_body = rng.uniform([-1.6, -0.9], [1.6, 2.4])
        g_img = rmat @ g_body * scale + shift
        half = rng.uniform(0.12, 0.35) * scale
        kind = SHAPES[rng.integers(len(SHAPES))]
        bits = _shape_mask(rng, kind, g_img, half, CANVAS)
        if not bits.any():
            continue
        mask = RasterMask(bits)
        gravity = centroid(mask)
        dists = group_distances(human, gravity, n_classes)
        if ((dists >= MARGIN_LOW) & (dists <= MARGIN_HIGH)).any():
            continue
        labels = rule_labels(human, gravity, n_classes)
        want = np.zeros(n_classes)
        want[target] = 1.0
        if not np.array_equal(labels, want):
            continue
        if (human < 0).any() or (human >= CANVAS).any():
            continue
        margin = 0.1 * scale
        lo = np.maximum(human.min(axis=0) - margin, 0.0)
        hi = np.minimum(human.max(axis=0) + margin, CANVAS - 1.0)
        x0, y0, x1, y1 = mask.bbox
        return {
            "width": CANVAS,
            "height": CANVAS,
            "human": {
                "keypoints": [[float(x), float(y)] for x, y in human],
                "valid": [True] * len(COCO_JOINTS),
                "bbox": [float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])],
            },
            "object": {
                "segmentation": encode_rle(mask.bits),
                "bbox": [float(x0), float(y0), float(x1 + 1), float(y1 + 1)],
                "category": kind,
            },
            "labels": labels.tolist(),
        }
    raise RuntimeError(f"could not draw a sample for class {target} in {max_tries} tries")


def _baseline(rng: np.random.Generator, labels: np.ndarray) -> np.ndarray:
    probs = np.where(labels > 0, 0.55, 0.45) + rng.normal(0.0, 0.05, size=labels.shape)
    return np.clip(probs, 0.01, 1.0)


def generate_synthetic_dataset(
    seed: int, n_samples: int, n_classes: int = 4, mixture: Sequence[float] = None, id_prefix: str = "synth"
) -> List[HOSample]:
    """Deterministic synthetic pairs; class counts follow ``mixture`` exactly (rounded)."""
    names = synthetic_class_names(n_classes)
    mixture = np.full(n_classes, 1.0 / n_classes) if mixture is None else np.asarray(mixture, dtype=float)
    if len(mixture) != n_classes or (mixture < 0).any() or not np.isclose(mixture.sum(), 1.0):
        raise ValueError("mixture must be a distribution over the classes")
    counts = np.floor(mixture * n_samples).astype(int)
    # hand out the rounding remainder to the largest fractional parts
    rest = n_samples - counts.sum()
    order = np.argsort(-(mixture * n_samples - counts), kind="stable")
    counts[order[:rest]] += 1

    rng = np.random.default_rng(seed)
    targets = rng.permutation(np.repeat(np.arange(n_classes), counts))
    samples = []
    for i, target in enumerate(targets):
        record = _draw_sample(rng, int(target), n_classes)
        record["id"] = i
        record["image_id"] = f"{id_prefix}-{seed}-{i:06d}"
        record["class_names"] = list(names)
        record["baseline_probs"] = _baseline(rng, np.asarray(record["labels"])).tolist()
        samples.append(sample_from_record(record))
    return samples


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    history: List[Tuple[int, float, float]]  # (epoch, lr, mean loss)

    @property
    def losses(self) -> List[float]:
        return [h[2] for h in self.history]


def stack_samples(samples: Sequence[HOSample]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.features for s in samples])
    y = np.stack([s.labels for s in samples])
    return x, y


def train(
    model: HOAGCNModel,
    samples: Sequence[HOSample],
    config: TrainConfig,
    on_epoch: Callable[[int, float, float], None] = None,
    epochs: Optional[int] = None,
) -> TrainResult:
    """Mini-batch SGD; the learning rate is evaluated at each epoch's start.

    ``epochs`` stops early after that many epochs of the configured schedule.
    """
    if not samples:
        raise ValueError("empty dataset")
    x, y = stack_samples(samples)
    params = model.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    rng = np.random.default_rng(config.seed)
    history = []
    n_epochs = config.total_epochs if epochs is None else min(epochs, config.total_epochs)
    for epoch in range(n_epochs):
        lr = lr_at(config, epoch)
        good_state = model.state()
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss = bce_loss(model(x[idx]), y[idx])
            value = loss.item()
            grads = T.backward(loss)
            try:
                if not np.isfinite(value):
                    raise NonFiniteGradientError(f"loss is {value}")
                new, velocity = sgd_step(
                    [p.data for p in params],
                    clip_gradients([grads.get(p, np.zeros_like(p.data)) for p in params], config.grad_clip),
                    velocity,
                    lr,
                    config.momentum,
                    config.weight_decay,
                )
            except NonFiniteGradientError as exc:
                model.load_state(good_state)
                raise TrainingDiverged(f"epoch {epoch}: {exc}", history, good_state) from exc
            for p, v in zip(params, new):
                p.data = v
            total += value * len(idx)
        mean_loss = total / len(x)
        history.append((epoch, lr, mean_loss))
        logger.debug("epoch %d lr %.5f loss %.6f", epoch, lr, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, lr, mean_loss)
    return TrainResult(history)


def write_history(result: TrainResult, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,lr,mean_loss\n")
        for epoch, lr, loss in result.history:
            fh.write(f"{epoch},{lr!r},{loss!r}\n")
