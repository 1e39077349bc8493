"""Scene files, configuration, SVG overlays and the end-to-end pipeline.

Scene files are JSON lines, one image per line::

    {"image_id": "img-1", "width": 640, "height": 480,
     "humans": [{"keypoints": [[x, y], ... 17], "valid": [true, ...], "bbox": [x0, y0, x1, y1]}],
     "objects": [{"segmentation": [[x1, y1, x2, y2, ...]] | {"counts": [...], "size": [h, w]},
                  "bbox": [x0, y0, x1, y1], "category": "cup"}],
     "interactions": [{"human": 0, "object": 0, "classes": [3]},
                      {"human": 0, "object": null, "classes": [5]}],
     "baseline": [{"human": 0, "object": 0, "probs": [...]}]}

``object: null`` marks an interaction whose object is occluded.
"""

from __future__ import annotations

import copy
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple
from xml.etree import ElementTree as ET

import jsonschema
import numpy as np

from .evaluation import Detection, GroundTruth, evaluate, format_report, fuse
from .features import KeypointSet, NormalizationError, keypoint_features
from .geometry import KEYPOINT_NAMES, ObjectKeypoints, RasterMask, extract_object_keypoints, mask_from_segmentation
from .hograph import COCO_JOINTS, HUMAN_SKELETON, GraphConfig
from .network import HOAGCNModel, ModelConfig, load_checkpoint, save_checkpoint
from .training import (
    TrainConfig,
    generate_synthetic_dataset,
    read_dataset,
    synthetic_class_names,
    train,
    write_dataset,
    write_history,
)

logger = logging.getLogger(__name__)

CONFIG_ENV = "HOKEM_CONFIG"

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_BOX = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}

SCENE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["image_id", "width", "height", "humans", "objects"],
    "properties": {
        "image_id": {"type": ["string", "integer"]},
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "humans": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["keypoints", "bbox"],
                "properties": {
                    "keypoints": {"type": "array", "items": _POINT, "minItems": 17, "maxItems": 17},
                    "valid": {"type": "array", "items": {"type": "boolean"}, "minItems": 17, "maxItems": 17},
                    "bbox": _BOX,
                },
            },
        },
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["segmentation"],
                "properties": {
                    "segmentation": {
                        "oneOf": [
                            {
                                "type": "array",
                                "minItems": 1,
                                "items": {"type": "array", "items": {"type": "number"}, "minItems": 6},
                            },
                            {
                                "type": "object",
                                "required": ["counts", "size"],
                                "properties": {
                                    "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                                    "size": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                                },
                            },
                        ]
                    },
                    "bbox": _BOX,
                    "category": {"type": "string"},
                },
            },
        },
        "interactions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["human", "object", "classes"],
                "properties": {
                    "human": {"type": "integer", "minimum": 0},
                    "object": {"type": ["integer", "null"], "minimum": 0},
                    "classes": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                },
            },
        },
        "baseline": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["human", "object", "probs"],
                "properties": {
                    "human": {"type": "integer", "minimum": 0},
                    "object": {"type": "integer", "minimum": 0},
                    "probs": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                },
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCENE_SCHEMA)


# ---------------------------------------------------------------------------
# scenes


@dataclass(eq=False)
class HumanInstance:
    keypoints: np.ndarray
    valid: np.ndarray
    bbox: Tuple[float, float, float, float]


@dataclass(eq=False)
class ObjectInstance:
    segmentation: object
    mask: RasterMask
    bbox: Tuple[float, float, float, float]
    category: str = ""


@dataclass(eq=False)
class SceneRecord:
    image_id: str
    width: int
    height: int
    humans: List[HumanInstance]
    objects: List[ObjectInstance]
    interactions: List[dict] = field(default_factory=list)
    baseline: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return copy.deepcopy(self.raw)


@dataclass
class RecordError:
    line: int
    pointer: str
    message: str

    def to_json(self) -> dict:
        return {"line": self.line, "pointer": self.pointer, "message": self.message}


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _box_of_mask(mask: RasterMask) -> Tuple[float, float, float, float]:
    x0, y0, x1, y1 = mask.bbox
    return float(x0), float(y0), float(x1 + 1), float(y1 + 1)


def parse_scene(raw: dict) -> SceneRecord:
    """Validate one scene dict; raises ``jsonschema.ValidationError`` or ``ValueError``."""
    errors = sorted(_VALIDATOR.iter_errors(raw), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        raise errors[0]
    w, h = raw["width"], raw["height"]
    humans = []
    for hum in raw["humans"]:
        valid = np.asarray(hum.get("valid", [True] * 17), dtype=bool)
        x0, y0, x1, y1 = hum["bbox"]
        if not (x1 > x0 and y1 > y0):
            raise jsonschema.ValidationError("malformed box", path=["humans", len(humans), "bbox"])
        humans.append(HumanInstance(np.asarray(hum["keypoints"], dtype=np.float64), valid, tuple(hum["bbox"])))
    objects = []
    for k, obj in enumerate(raw["objects"]):
        try:
            mask = mask_from_segmentation(obj["segmentation"], w, h)
        except ValueError as exc:
            raise jsonschema.ValidationError(str(exc), path=["objects", k, "segmentation"]) from None
        bbox = tuple(obj["bbox"]) if "bbox" in obj else _box_of_mask(mask)
        objects.append(ObjectInstance(obj["segmentation"], mask, bbox, obj.get("category", "")))
    for k, inter in enumerate(raw.get("interactions", [])):
        if inter["human"] >= len(humans):
            raise jsonschema.ValidationError("human index out of range", path=["interactions", k, "human"])
        if inter["object"] is not None and inter["object"] >= len(objects):
            raise jsonschema.ValidationError("object index out of range", path=["interactions", k, "object"])
    baseline = {}
    for k, b in enumerate(raw.get("baseline", [])):
        if b["human"] >= len(humans) or b["object"] >= len(objects):
            raise jsonschema.ValidationError("pair index out of range", path=["baseline", k])
        baseline[(b["human"], b["object"])] = np.asarray(b["probs"], dtype=np.float64)
    return SceneRecord(
        str(raw["image_id"]), w, h, humans, objects, list(raw.get("interactions", [])), baseline, copy.deepcopy(raw)
    )


def iter_scenes(path, errors: List[RecordError]) -> Iterator[SceneRecord]:
    """Stream valid scenes from a JSON-lines file; bad records go to ``errors``."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(RecordError(lineno, "", f"invalid JSON: {exc.msg}"))
                continue
            try:
                yield parse_scene(raw)
            except jsonschema.ValidationError as exc:
                errors.append(RecordError(lineno, _pointer(exc.absolute_path), exc.message))
            except ValueError as exc:
                errors.append(RecordError(lineno, "", str(exc)))


def ingest(path) -> Tuple[List[SceneRecord], List[RecordError]]:
    errors: List[RecordError] = []
    scenes = list(iter_scenes(path, errors))
    return scenes, errors


def write_scenes(scenes: Sequence[SceneRecord], path) -> None:
    with open(path, "w") as fh:
        for s in scenes:
            fh.write(json.dumps(s.to_json(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def enumerate_pairs(scene: SceneRecord) -> List[Tuple[int, int]]:
    """Every (human, object) index pair, human-major."""
    return [(h, o) for h in range(len(scene.humans)) for o in range(len(scene.objects))]


def object_keypoints(scene: SceneRecord) -> List[ObjectKeypoints]:
    return [extract_object_keypoints(o.mask) for o in scene.objects]


def pair_keypoints(scene: SceneRecord, h: int, o: int, obj_kps: ObjectKeypoints = None) -> KeypointSet:
    hum = scene.humans[h]
    obj_kps = obj_kps or extract_object_keypoints(scene.objects[o].mask)
    return KeypointSet(hum.keypoints, obj_kps, hum.bbox, hum.valid)


def scene_detections(
    scene: SceneRecord, model: HOAGCNModel
) -> Tuple[List[Detection], List[Detection], List[Detection], List[GroundTruth]]:
    """Run the network over every pair; returns (hokem, baseline, fused, ground truth)."""
    kps = object_keypoints(scene)
    hokem, base, fused = [], [], []
    for h, o in enumerate_pairs(scene):
        try:
            feats = keypoint_features(pair_keypoints(scene, h, o, kps[o]))
        except NormalizationError as exc:
            logger.warning("%s pair (%d, %d) skipped: %s", scene.image_id, h, o, exc)
            continue
        probs = model.predict(feats)
        hb, ob = scene.humans[h].bbox, scene.objects[o].bbox
        b = scene.baseline.get((h, o), np.ones_like(probs))
        hokem.append(Detection(scene.image_id, hb, ob, probs, "hokem"))
        base.append(Detection(scene.image_id, hb, ob, b, "baseline"))
        fused.append(Detection(scene.image_id, hb, ob, fuse(b, probs), "fused"))
    gts = []
    for inter in scene.interactions:
        ob = None if inter["object"] is None else scene.objects[inter["object"]].bbox
        gts.append(GroundTruth(scene.image_id, scene.humans[inter["human"]].bbox, ob, frozenset(inter["classes"])))
    return hokem, base, fused, gts


# ---------------------------------------------------------------------------
# SVG overlays


def render_svg(
    width: int, height: int, mask: RasterMask, human: np.ndarray, obj_kps: ObjectKeypoints, title: str = ""
) -> str:
    """Mask silhouette, skeleton and the 26 labelled keypoints as an SVG document."""
    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(width),
        height=str(height),
        viewBox=f"0 0 {width} {height}",
    )
    if title:
        ET.SubElement(svg, "title").text = title
    # one rectangle per horizontal run of occupied pixels
    parts = []
    for row in np.flatnonzero(mask.bits.any(axis=1)):
        line = mask.bits[row].astype(np.int8)
        edges = np.flatnonzero(np.diff(np.concatenate([[0], line, [0]])))
        for start, stop in zip(edges[::2], edges[1::2]):
            parts.append(f"M{start - 0.5:g} {row - 0.5:g}h{stop - start}v1h{start - stop}z")
    ET.SubElement(svg, "path", d="".join(parts), fill="#4c9be8", attrib={"fill-opacity": "0.4", "class": "mask"})
    index = {n: i for i, n in enumerate(COCO_JOINTS)}
    for a, b in HUMAN_SKELETON:
        (x1, y1), (x2, y2) = human[index[a]], human[index[b]]
        ET.SubElement(
            svg, "line", x1=f"{x1:g}", y1=f"{y1:g}", x2=f"{x2:g}", y2=f"{y2:g}", stroke="#e8604c", attrib={"class": "bone"}
        )
    points = [(n, p, "#e8604c") for n, p in zip(COCO_JOINTS, human)]
    points += [(f"object_{n}", p, "#2a9d46" if n == "gravity" else "#f2c12e") for n, p in zip(KEYPOINT_NAMES, obj_kps.points)]
    for name, (x, y), color in points:
        c = ET.SubElement(svg, "circle", cx=f"{x:g}", cy=f"{y:g}", r="3", fill=color, attrib={"class": "kp"})
        ET.SubElement(c, "title").text = name
        label = ET.SubElement(svg, "text", x=f"{x + 4:g}", y=f"{y - 4:g}", attrib={"font-size": "8"})
        label.text = name
    return ET.tostring(svg, encoding="unicode")


def render_pair(scene: SceneRecord, h: int, o: int) -> str:
    obj = scene.objects[o]
    return render_svg(
        scene.width,
        scene.height,
        obj.mask,
        scene.humans[h].keypoints,
        extract_object_keypoints(obj.mask),
        f"{scene.image_id} human {h} object {o}",
    )


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    paths: Dict[str, str] = field(
        default_factory=lambda: {"dataset": "data", "checkpoints": "checkpoints", "reports": "reports"}
    )
    data: Dict[str, int] = field(
        default_factory=lambda: {"n_train": 500, "n_test": 200, "n_classes": 4, "train_seed": 0, "test_seed": 1}
    )
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: Dict[str, object] = field(
        default_factory=lambda: {
            "channels": [64, 64, 64, 128, 128, 256],
            "ska": "every",
            "ska_axis": "channel",
            "learn_offsets": True,
            "data_driven": True,
            "residual": True,
            "seed": 0,
        }
    )
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: Dict[str, int] = field(default_factory=lambda: {"scenario": 1})

    def model_config(self, class_names: Sequence[str]) -> Tuple[ModelConfig, int]:
        m = dict(self.model)
        seed = int(m.pop("seed", 0))
        m["channels"] = tuple(m["channels"])
        return ModelConfig(n_classes=len(class_names), graph=self.graph, class_names=tuple(class_names), **m), seed

    def to_json(self) -> dict:
        return {
            "paths": dict(self.paths),
            "data": dict(self.data),
            "graph": self.graph.to_json(),
            "model": copy.deepcopy(self.model),
            "train": self.train.to_json(),
            "evaluation": dict(self.evaluation),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PipelineConfig":
        base = cls()
        merged = base.to_json()
        for section, values in d.items():
            if section not in merged:
                raise ValueError(f"unknown config section {section!r}")
            unknown = set(values) - set(merged[section])
            if unknown:
                raise ValueError(f"unknown keys in {section}: {sorted(unknown)}")
            merged[section].update(values)
        return cls(
            paths=merged["paths"],
            data=merged["data"],
            graph=GraphConfig.from_json(merged["graph"]),
            model=merged["model"],
            train=TrainConfig.from_json(merged["train"]),
            evaluation=merged["evaluation"],
        )


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> PipelineConfig:
    """Read a JSON config (``$HOKEM_CONFIG`` when ``path`` is None) and apply ``section.key=value`` overrides."""
    path = path or os.environ.get(CONFIG_ENV)
    d = {}
    if path:
        with open(path) as fh:
            d = json.load(fh)
    merged = PipelineConfig.from_json(d).to_json()
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in merged or name not in merged[section]:
            raise ValueError(f"bad override {item!r}; expected section.key=value")
        try:
            merged[section][name] = json.loads(value)
        except json.JSONDecodeError:
            merged[section][name] = value
    return PipelineConfig.from_json(merged)


def dump_config(config: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# pipeline steps


def gen_data(config: PipelineConfig, out_dir) -> Tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    d = config.data
    train_path = os.path.join(out_dir, "train.jsonl")
    test_path = os.path.join(out_dir, "test.jsonl")
    write_dataset(generate_synthetic_dataset(d["train_seed"], d["n_train"], d["n_classes"], id_prefix="train"), train_path)
    write_dataset(generate_synthetic_dataset(d["test_seed"], d["n_test"], d["n_classes"], id_prefix="test"), test_path)
    return train_path, test_path


def class_names_of(samples) -> Tuple[str, ...]:
    names = samples[0].record.get("class_names")
    return tuple(names) if names else tuple(f"class_{i}" for i in range(len(samples[0].labels)))


def train_step(config: PipelineConfig, dataset_path, checkpoint_dir, history_path=None) -> HOAGCNModel:
    samples = read_dataset(dataset_path)
    model_cfg, seed = config.model_config(class_names_of(samples))
    model = HOAGCNModel(model_cfg, seed=seed)
    result = train(model, samples, config.train)
    save_checkpoint(model, checkpoint_dir, extra={"train": config.train.to_json()})
    if history_path:
        write_history(result, history_path)
    return model


def sample_detections(samples, scores, source):
    return [Detection(s.image_id, s.human_box, s.object_box, sc, source) for s, sc in zip(samples, scores)]


def sample_ground_truth(samples) -> List[GroundTruth]:
    return [
        GroundTruth(s.image_id, s.human_box, s.object_box, frozenset(np.flatnonzero(s.labels).tolist()))
        for s in samples
        if s.labels.any()
    ]


def eval_step(config: PipelineConfig, checkpoint_dir, dataset_path, report_path=None) -> dict:
    model = load_checkpoint(checkpoint_dir)
    samples = read_dataset(dataset_path)
    names = model.config.class_names or class_names_of(samples)
    probs = model.predict(np.stack([s.features for s in samples]))
    base = np.stack([s.baseline_probs for s in samples])
    gts = sample_ground_truth(samples)
    scenario = int(config.evaluation["scenario"])
    report = {
        "scenario": scenario,
        "sources": {
            "hokem": evaluate(sample_detections(samples, probs, "hokem"), gts, scenario, names),
            "baseline": evaluate(sample_detections(samples, base, "baseline"), gts, scenario, names),
            "fused": evaluate(sample_detections(samples, fuse(base, probs), "fused"), gts, scenario, names),
        },
    }
    if report_path:
        write_report(report, report_path)
    return report


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    table = "\n\n".join(format_report(r, name) for name, r in report["sources"].items())
    with open(os.path.splitext(path)[0] + ".txt", "w") as fh:
        fh.write(table + "\n")


def run_pipeline(config: PipelineConfig, workdir) -> dict:
    """gen-data -> train -> eval under ``workdir``; returns artifact paths and the report."""
    data_dir = os.path.join(workdir, config.paths["dataset"])
    ckpt_dir = os.path.join(workdir, config.paths["checkpoints"])
    report_dir = os.path.join(workdir, config.paths["reports"])
    os.makedirs(report_dir, exist_ok=True)
    train_path, test_path = gen_data(config, data_dir)
    train_step(config, train_path, ckpt_dir, os.path.join(report_dir, "history.csv"))
    report_path = os.path.join(report_dir, "report.json")
    report = eval_step(config, ckpt_dir, test_path, report_path)
    return {"train": train_path, "test": test_path, "checkpoint": ckpt_dir, "report": report_path, "result": report}
