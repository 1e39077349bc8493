"""Per-keypoint input features ``[x, y, d, a]``.

Coordinates are shifted to the human box's upper-left corner and divided by
the diagonal of the box spanned by the shoulders and hips. ``d`` and ``a``
are the distance and folded angle to the neck (shoulder midpoint).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .geometry import ObjectKeypoints
from .hograph import COCO_JOINTS, N_HUMAN

LEFT_SHOULDER = COCO_JOINTS.index("left_shoulder")
RIGHT_SHOULDER = COCO_JOINTS.index("right_shoulder")
LEFT_HIP = COCO_JOINTS.index("left_hip")
RIGHT_HIP = COCO_JOINTS.index("right_hip")
TORSO = (LEFT_SHOULDER, RIGHT_SHOULDER, LEFT_HIP, RIGHT_HIP)

DIAGONAL_EPS = 1e-6


class NormalizationError(ValueError):
    """The sample cannot be put into the upper-body frame."""


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """One human-object pair in image coordinates."""

    human: np.ndarray  # (17, 2)
    object: ObjectKeypoints
    human_bbox: Tuple[float, float, float, float]
    valid: Optional[np.ndarray] = None  # (17,) bool; None means all valid

    def __post_init__(self):
        human = np.asarray(self.human, dtype=np.float64)
        if human.shape != (N_HUMAN, 2):
            raise ValueError(f"expected human keypoints of shape (17, 2), got {human.shape}")
        object.__setattr__(self, "human", human)
        valid = np.ones(N_HUMAN, dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        object.__setattr__(self, "valid", valid)
        x0, y0, x1, y1 = self.human_bbox
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"human bbox {self.human_bbox} has non-positive extent")

    def points(self) -> np.ndarray:
        """All 26 points, human first, in graph node order."""
        return np.vstack([self.human, self.object.as_array()])


def upper_body_diagonal(kps: KeypointSet) -> float:
    missing = [COCO_JOINTS[i] for i in TORSO if not kps.valid[i]]
    if missing:
        raise NormalizationError(f"missing torso joints: {missing}")
    torso = kps.human[list(TORSO)]
    w, h = torso.max(axis=0) - torso.min(axis=0)
    return float(np.hypot(w, h))


def normalize_coordinates(kps: KeypointSet) -> np.ndarray:
    """``(p - bbox_upper_left) / upper_body_diagonal`` for all 26 points."""
    diag = upper_body_diagonal(kps)
    if diag <= DIAGONAL_EPS:
        raise NormalizationError(f"upper-body diagonal {diag} is degenerate")
    origin = np.array(kps.human_bbox[:2], dtype=np.float64)
    return (kps.points() - origin) / diag


def neck_point(kps: KeypointSet) -> Tuple[float, float]:
    if not (kps.valid[LEFT_SHOULDER] and kps.valid[RIGHT_SHOULDER]):
        raise NormalizationError("neck needs both shoulders")
    x, y = (kps.human[LEFT_SHOULDER] + kps.human[RIGHT_SHOULDER]) / 2.0
    return float(x), float(y)


def compute_features(coords: np.ndarray, neck: Sequence[float]) -> np.ndarray:
    """Rows ``[x, y, d, a]``; ``a`` is 1 on the vertical through the neck, 0 at the neck."""
    coords = np.asarray(coords, dtype=np.float64)
    dx = coords[:, 0] - neck[0]
    dy = coords[:, 1] - neck[1]
    d = np.hypot(dx, dy)
    # arctan2 of absolute values equals arctan|dy/dx| and is total at dx = 0
    a = np.arctan2(np.abs(dy), np.abs(dx)) * (2.0 / np.pi)
    a = np.where(d == 0.0, 0.0, a)
    return np.column_stack([coords, d, a])


def keypoint_features(kps: KeypointSet) -> np.ndarray:
    """Normalize, locate the neck in the normalized frame, build the 26 x 4 matrix."""
    coords = normalize_coordinates(kps)
    neck = (coords[LEFT_SHOULDER] + coords[RIGHT_SHOULDER]) / 2.0
    if not (kps.valid[LEFT_SHOULDER] and kps.valid[RIGHT_SHOULDER]):
        raise NormalizationError("neck needs both shoulders")
    return compute_features(coords, neck)
