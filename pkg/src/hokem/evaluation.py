"""Probability fusion and VOC-style role AP over human-object detections.

A detection is a true positive for class ``c`` when its human box and its
object box both overlap an unmatched ground-truth pair of class ``c`` with IoU
above 0.5. Ground-truth pairs without an object box (occluded objects) are
handled per scenario: scenario 1 requires the detection to carry no object box
either, scenario 2 ignores the object condition.

Detections are ranked by descending score with ties kept in input order. Each
detection is compared to the ground-truth pair it overlaps most; if that pair is
already matched the detection counts as a false positive. AP integrates the
monotone precision envelope over every recall step (all-point interpolation).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Box = Tuple[float, float, float, float]
IOU_THRESHOLD = 0.5


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Detection:
    image_id: str
    human_box: Box
    object_box: Optional[Box]
    scores: np.ndarray
    source: str = "fused"

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "human_box": list(self.human_box),
            "object_box": None if self.object_box is None else list(self.object_box),
            "scores": [float(s) for s in self.scores],
            "source": self.source,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Detection":
        scores = np.asarray(d["scores"], dtype=np.float64)
        if ((scores < 0) | (scores > 1)).any():
            raise ValueError("detection scores must lie in [0, 1]")
        obj = d.get("object_box")
        return cls(
            str(d["image_id"]),
            tuple(float(v) for v in d["human_box"]),
            None if obj is None else tuple(float(v) for v in obj),
            scores,
            d.get("source", "fused"),
        )


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    human_box: Box
    object_box: Optional[Box]
    classes: FrozenSet[int]

    def __post_init__(self):
        if not self.classes:
            raise ValueError("ground truth needs at least one class")

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "human_box": list(self.human_box),
            "object_box": None if self.object_box is None else list(self.object_box),
            "classes": sorted(self.classes),
        }

    @classmethod
    def from_json(cls, d: dict) -> "GroundTruth":
        obj = d.get("object_box")
        return cls(
            str(d["image_id"]),
            tuple(float(v) for v in d["human_box"]),
            None if obj is None else tuple(float(v) for v in obj),
            frozenset(int(c) for c in d["classes"]),
        )


def fuse(baseline, hokem) -> np.ndarray:
    """Elementwise product of two probability vectors."""
    baseline = np.asarray(baseline, dtype=np.float64)
    hokem = np.asarray(hokem, dtype=np.float64)
    if baseline.shape != hokem.shape:
        raise ValueError(f"cannot fuse shapes {baseline.shape} and {hokem.shape}")
    for name, v in (("baseline", baseline), ("hokem", hokem)):
        if ((v < 0) | (v > 1)).any():
            raise ValueError(f"{name} probabilities must lie in [0, 1]")
    return baseline * hokem


def iou(a: Box, b: Box) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    area_a = max(ax1 - ax0, 0.0) * max(ay1 - ay0, 0.0)
    area_b = max(bx1 - bx0, 0.0) * max(by1 - by0, 0.0)
    if area_a <= 0 or area_b <= 0:
        logger.warning("zero-area box in IoU: %s vs %s", a, b)
        return 0.0
    iw = max(min(ax1, bx1) - max(ax0, bx0), 0.0)
    ih = max(min(ay1, by1) - max(ay0, by0), 0.0)
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def pair_overlap(det: Detection, gt: GroundTruth, scenario: int) -> float:
    """``min(human IoU, object IoU)`` with the scenario rule for occluded objects."""
    h = iou(det.human_box, gt.human_box)
    if gt.object_box is None:
        if scenario == 2:
            return h
        return h if det.object_box is None else 0.0
    if det.object_box is None:
        return 0.0
    return min(h, iou(det.object_box, gt.object_box))


def match_detections(
    detections: Sequence[Detection], ground_truths: Sequence[GroundTruth], scenario: int, cls: int
) -> Tuple[np.ndarray, np.ndarray, int]:
    """Greedy matching for one class.

    Returns ``(scores, tp)`` in ranked order and the number of positives.
    """
    if scenario not in (1, 2):
        raise ValueError(f"scenario must be 1 or 2, got {scenario}")
    by_image: Dict[str, List[int]] = {}
    positives = [g for g in ground_truths if cls in g.classes]
    for i, g in enumerate(positives):
        by_image.setdefault(g.image_id, []).append(i)
    scores = np.array([d.scores[cls] for d in detections], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    used = np.zeros(len(positives), dtype=bool)
    tp = np.zeros(len(order), dtype=bool)
    for rank, di in enumerate(order):
        det = detections[di]
        best, best_ov = -1, -np.inf
        for gi in by_image.get(det.image_id, ()):
            ov = pair_overlap(det, positives[gi], scenario)
            if ov > best_ov:
                best, best_ov = gi, ov
        if best >= 0 and best_ov > IOU_THRESHOLD and not used[best]:
            used[best] = True
            tp[rank] = True
    return scores[order], tp, len(positives)


def average_precision(tp: np.ndarray, n_positive: int) -> float:
    """All-point interpolated AP from ranked TP flags."""
    tp = np.asarray(tp, dtype=bool)
    ctp = np.cumsum(tp)
    recall = ctp / n_positive
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def compute_role_ap(
    detections: Sequence[Detection], ground_truths: Sequence[GroundTruth], scenario: int, cls: int
) -> Optional[float]:
    """AP for one class, or ``None`` when the class has no ground truth."""
    _, tp, n_pos = match_detections(detections, ground_truths, scenario, cls)
    if n_pos == 0:
        return None
    return average_precision(tp, n_pos)


def mean_ap(aps) -> float:
    """Mean over defined APs (``None`` entries are skipped)."""
    values = list(aps.values()) if isinstance(aps, dict) else list(aps)
    defined = [a for a in values if a is not None]
    if not defined:
        raise EvaluationError("no class has a defined AP")
    if len(defined) < len(values):
        logger.info("mAP excludes %d class(es) without ground truth", len(values) - len(defined))
    return float(np.mean(defined))


def evaluate(
    detections: Sequence[Detection],
    ground_truths: Sequence[GroundTruth],
    scenario: int,
    class_names: Sequence[str],
) -> dict:
    per_class = {}
    for c, name in enumerate(class_names):
        per_class[name] = compute_role_ap(detections, ground_truths, scenario, c)
    return {
        "scenario": scenario,
        "per_class": per_class,
        "excluded": [n for n, ap in per_class.items() if ap is None],
        "mAP": mean_ap(per_class),
        "n_detections": len(detections),
        "n_ground_truth": len(ground_truths),
    }


def format_report(report: dict, title: str = "") -> str:
    lines = [title] if title else []
    lines.append(f"scenario {report['scenario']}")
    width = max([len(n) for n in report["per_class"]] + [5])
    for name, ap in report["per_class"].items():
        lines.append(f"  {name:<{width}}  {'n/a' if ap is None else f'{100 * ap:6.2f}'}")
    lines.append(f"  {'mAP':<{width}}  {100 * report['mAP']:6.2f}")
    return "\n".join(lines)


def fuse_detections(baseline: Sequence[Detection], hokem: Sequence[Detection]) -> List[Detection]:
    """Pair detections by (image, human box, object box) and multiply scores."""

    def key(d):
        return d.image_id, d.human_box, d.object_box

    index = {}
    for d in hokem:
        if key(d) in index:
            raise ValueError(f"duplicate hokem detection for {key(d)}")
        index[key(d)] = d
    out = []
    for b in baseline:
        h = index.get(key(b))
        if h is None:
            raise ValueError(f"no hokem detection for {key(b)}")
        out.append(Detection(b.image_id, b.human_box, b.object_box, fuse(b.scores, h.scores), "fused"))
    return out


def read_jsonl(path, parse) -> list:
    with open(path) as fh:
        return [parse(json.loads(line)) for line in fh if line.strip()]


def write_jsonl(items: Iterable, path) -> None:
    with open(path, "w") as fh:
        for item in items:
            fh.write(json.dumps(item.to_json(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")
