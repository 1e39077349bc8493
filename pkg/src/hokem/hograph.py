"""Human-object spatial graph and its partitioned, normalized adjacency stack.

Node order: the 17 COCO joints (indices 0-16), then the 9 object keypoints in
``geometry.KEYPOINT_NAMES`` order (indices 17-25, gravity at 17).

Human skeleton (16 edges)::

    nose-left_eye, nose-right_eye, left_eye-left_ear, right_eye-right_ear,
    left_shoulder-left_elbow, left_elbow-left_wrist,
    right_shoulder-right_elbow, right_elbow-right_wrist,
    left_hip-left_knee, left_knee-left_ankle,
    right_hip-right_knee, right_knee-right_ankle,
    left_shoulder-right_shoulder, left_hip-right_hip,
    left_shoulder-left_hip, right_shoulder-right_hip

Object edges: the 8-cycle top, top_left, left, left_bottom, bottom,
bottom_right, right, right_top, plus a spoke from every peripheral point to
gravity. Cross edges join every object node to six human joints.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .geometry import KEYPOINT_NAMES

COCO_JOINTS = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

HUMAN_SKELETON = (
    ("nose", "left_eye"),
    ("nose", "right_eye"),
    ("left_eye", "left_ear"),
    ("right_eye", "right_ear"),
    ("left_shoulder", "left_elbow"),
    ("left_elbow", "left_wrist"),
    ("right_shoulder", "right_elbow"),
    ("right_elbow", "right_wrist"),
    ("left_hip", "left_knee"),
    ("left_knee", "left_ankle"),
    ("right_hip", "right_knee"),
    ("right_knee", "right_ankle"),
    ("left_shoulder", "right_shoulder"),
    ("left_hip", "right_hip"),
    ("left_shoulder", "left_hip"),
    ("right_shoulder", "right_hip"),
)

OBJECT_RING = ("top", "top_left", "left", "left_bottom", "bottom", "bottom_right", "right", "right_top")

# head, distal extremities, and a torso proxy (COCO-17 has no torso joint)
DEFAULT_CROSS_JOINTS = ("nose", "left_wrist", "right_wrist", "left_ankle", "right_ankle", "left_hip")

N_HUMAN = len(COCO_JOINTS)
N_OBJECT = len(KEYPOINT_NAMES)
N_NODES = N_HUMAN + N_OBJECT
NODE_NAMES = COCO_JOINTS + tuple(f"object_{n}" for n in KEYPOINT_NAMES)
GRAVITY_NODE = N_HUMAN
DEFAULT_BETA = 0.001
NUM_SUBSETS = 3


class GraphConfigError(ValueError):
    pass


class DisconnectedGraphError(ValueError):
    pass


@dataclass(frozen=True)
class GraphConfig:
    cross_joints: Tuple[str, ...] = DEFAULT_CROSS_JOINTS
    center_node: int = GRAVITY_NODE
    beta: float = DEFAULT_BETA

    def to_json(self) -> dict:
        return {"cross_joints": list(self.cross_joints), "center_node": self.center_node, "beta": self.beta}

    @classmethod
    def from_json(cls, d: dict) -> "GraphConfig":
        return cls(
            cross_joints=tuple(d.get("cross_joints", DEFAULT_CROSS_JOINTS)),
            center_node=int(d.get("center_node", GRAVITY_NODE)),
            beta=float(d.get("beta", DEFAULT_BETA)),
        )


@dataclass(frozen=True)
class HOGraph:
    n_human: int
    n_object: int
    edges: Tuple[Tuple[int, int, str], ...]  # (i, j, family) with i < j
    center_node: int
    node_names: Tuple[str, ...] = field(default=NODE_NAMES)

    @property
    def n_total(self) -> int:
        return self.n_human + self.n_object

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_total, self.n_total))
        for i, j, _ in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def edges_of(self, family: str) -> List[Tuple[int, int]]:
        return [(i, j) for i, j, f in self.edges if f == family]


def build_graph(config: GraphConfig = GraphConfig()) -> HOGraph:
    """Fixed topology: human skeleton, object ring + star, object-to-joint links."""
    index = {name: i for i, name in enumerate(COCO_JOINTS)}
    unknown = [j for j in config.cross_joints if j not in index]
    if unknown:
        raise GraphConfigError(f"unknown joint names in cross_joints: {unknown}")
    if len(set(config.cross_joints)) != len(config.cross_joints):
        raise GraphConfigError("cross_joints contains duplicates")
    if not 0 <= config.center_node < N_NODES:
        raise GraphConfigError(f"center_node {config.center_node} out of range")

    obj = {name: N_HUMAN + i for i, name in enumerate(KEYPOINT_NAMES)}
    edges = set()

    def link(i, j, family):
        edges.add((min(i, j), max(i, j), family))

    for a, b in HUMAN_SKELETON:
        link(index[a], index[b], "human")
    for k, name in enumerate(OBJECT_RING):
        link(obj[name], obj[OBJECT_RING[(k + 1) % len(OBJECT_RING)]], "object")
        link(obj[name], obj["gravity"], "object")
    for joint in config.cross_joints:
        for node in obj.values():
            link(index[joint], node, "human-object")

    return HOGraph(N_HUMAN, N_OBJECT, tuple(sorted(edges)), config.center_node)


def hop_distances(adjacency: np.ndarray, source: int) -> np.ndarray:
    n = len(adjacency)
    dist = np.full(n, -1, dtype=int)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adjacency[u]):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def partition_labels(adjacency: np.ndarray, center: int) -> np.ndarray:
    """Spatial-configuration label map.

    ``labels[i, j]`` is 0 for the root (``i == j``) and same-distance
    neighbours, 1 for neighbours closer to ``center`` and 2 for farther ones;
    -1 marks non-neighbours.
    """
    adjacency = np.asarray(adjacency)
    dist = hop_distances(adjacency, center)
    if (dist < 0).any():
        raise DisconnectedGraphError(f"nodes {np.flatnonzero(dist < 0).tolist()} unreachable from {center}")
    n = len(adjacency)
    labels = np.full((n, n), -1, dtype=int)
    for i in range(n):
        labels[i, i] = 0
        for j in np.flatnonzero(adjacency[i]):
            if j == i:
                continue
            labels[i, j] = 0 if dist[j] == dist[i] else (1 if dist[j] < dist[i] else 2)
    return labels


def partition_neighborhoods(g: HOGraph) -> np.ndarray:
    return partition_labels(g.adjacency(), g.center_node)


def subset_masks(labels: np.ndarray, k_v: int = NUM_SUBSETS) -> np.ndarray:
    """Binary masks, shape ``(k_v, N, N)``, one per label value."""
    return np.stack([(labels == k).astype(np.float64) for k in range(k_v)])


def normalize_adjacency(raw: np.ndarray, beta: float = DEFAULT_BETA) -> np.ndarray:
    """``R^-1/2 raw C^-1/2`` with ``R_ii = sum_j raw_ij + beta``, ``C_jj = sum_i raw_ij + beta``.

    For symmetric ``raw`` both degree matrices coincide. Using column degrees
    on the right keeps every nonzero entry at ``1/sqrt((d_i + beta)(d_j + beta))``
    with both degrees >= 1, so ``beta`` only matters for empty rows. Works on a
    single matrix or a ``(k, N, N)`` stack.
    """
    if not beta > 0:
        raise GraphConfigError(f"beta must be positive, got {beta}")
    raw = np.asarray(raw, dtype=np.float64)
    row = 1.0 / np.sqrt(raw.sum(axis=-1) + beta)
    col = 1.0 / np.sqrt(raw.sum(axis=-2) + beta)
    return row[..., :, None] * raw * col[..., None, :]


@dataclass(frozen=True, eq=False)
class AdjacencyStack:
    raw: np.ndarray  # (K_v, N, N) binary
    normalized: np.ndarray  # (K_v, N, N)
    beta: float

    @property
    def degrees(self) -> np.ndarray:
        return self.raw.sum(axis=-1) + self.beta

    def __len__(self):
        return len(self.raw)


def adjacency_stack(g: HOGraph, beta: float = DEFAULT_BETA) -> AdjacencyStack:
    raw = subset_masks(partition_neighborhoods(g))
    return AdjacencyStack(raw, normalize_adjacency(raw, beta), beta)


def graph_to_json(g: HOGraph, beta: float = DEFAULT_BETA) -> dict:
    labels = partition_neighborhoods(g)
    return {
        "nodes": list(g.node_names),
        "n_human": g.n_human,
        "n_object": g.n_object,
        "center_node": g.center_node,
        "beta": beta,
        "edges": [{"i": i, "j": j, "family": f} for i, j, f in g.edges],
        "partition": labels.tolist(),
    }


def graph_from_json(d: dict) -> HOGraph:
    edges = tuple(sorted((int(e["i"]), int(e["j"]), str(e["family"])) for e in d["edges"]))
    return HOGraph(int(d["n_human"]), int(d["n_object"]), edges, int(d["center_node"]), tuple(d["nodes"]))


def dump_graph(g: HOGraph, path, beta: float = DEFAULT_BETA) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_json(g, beta), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_graph(path) -> HOGraph:
    with open(path) as fh:
        return graph_from_json(json.load(fh))


def joint_indices(names: Sequence[str]) -> List[int]:
    index: Dict[str, int] = {n: i for i, n in enumerate(COCO_JOINTS)}
    return [index[n] for n in names]
