"""Command-line entry point: ``hokem <command> [options]``.

Every command takes ``--config`` (JSON; ``$HOKEM_CONFIG`` when omitted) and
repeatable ``--set section.key=value`` overrides. Failures print a one-line
JSON error summary to stderr and exit with status 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import evaluation, hograph, pipeline
from .evaluation import Detection, GroundTruth


def _extract_keypoints(args, config):
    scenes, errors = pipeline.ingest(args.scenes)
    with open(args.out, "w") as fh:
        for scene in scenes:
            for k, kps in enumerate(pipeline.object_keypoints(scene)):
                rec = {"image_id": scene.image_id, "object": k, "keypoints": kps.to_json()}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return errors


def _build_graph(args, config):
    g = hograph.build_graph(config.graph)
    hograph.dump_graph(g, args.out, config.graph.beta)
    return []


def _gen_data(args, config):
    pipeline.gen_data(config, args.out_dir)
    return []


def _train(args, config):
    pipeline.train_step(config, args.dataset, args.checkpoint, args.history)
    return []


def _eval(args, config):
    if args.checkpoint:
        if not args.dataset:
            raise ValueError("--checkpoint needs --dataset")
        report = pipeline.eval_step(config, args.checkpoint, args.dataset, args.report)
        print("\n\n".join(evaluation.format_report(r, n) for n, r in report["sources"].items()))
        return []
    if not (args.detections and args.ground_truth and args.classes):
        raise ValueError("give --checkpoint/--dataset or --detections/--ground-truth/--classes")
    dets = evaluation.read_jsonl(args.detections, Detection.from_json)
    gts = evaluation.read_jsonl(args.ground_truth, GroundTruth.from_json)
    names = args.classes.split(",")
    report = evaluation.evaluate(dets, gts, int(config.evaluation["scenario"]), names)
    wrapped = {"scenario": report["scenario"], "sources": {dets[0].source if dets else "detections": report}}
    if args.report:
        pipeline.write_report(wrapped, args.report)
    print(evaluation.format_report(report))
    return []


def _fuse(args, config):
    base = evaluation.read_jsonl(args.baseline, Detection.from_json)
    hokem = evaluation.read_jsonl(args.hokem, Detection.from_json)
    evaluation.write_jsonl(evaluation.fuse_detections(base, hokem), args.out)
    return []


def _render(args, config):
    scenes, errors = pipeline.ingest(args.scenes)
    os.makedirs(args.out_dir, exist_ok=True)
    for scene in scenes:
        if args.image_id and scene.image_id != args.image_id:
            continue
        for h, o in pipeline.enumerate_pairs(scene):
            path = os.path.join(args.out_dir, f"{scene.image_id}_h{h}_o{o}.svg")
            with open(path, "w") as fh:
                fh.write(pipeline.render_pair(scene, h, o))
    return errors


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hokem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: $HOKEM_CONFIG)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-keypoints", parents=[common], help="nine keypoints per object mask")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_extract_keypoints)

    p = sub.add_parser("build-graph", parents=[common], help="write the human-object graph as JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_build_graph)

    p = sub.add_parser("gen-data", parents=[common], help="write synthetic train/test sets")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_gen_data)

    p = sub.add_parser("train", parents=[common], help="train HO-AGCN on a dataset file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--history")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", parents=[common], help="role AP report")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--detections")
    p.add_argument("--ground-truth")
    p.add_argument("--classes", help="comma-separated class names")
    p.add_argument("--report")
    p.set_defaults(func=_eval)

    p = sub.add_parser("fuse", parents=[common], help="multiply baseline and HOKEM detection scores")
    p.add_argument("--baseline", required=True)
    p.add_argument("--hokem", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_fuse)

    p = sub.add_parser("render", parents=[common], help="SVG overlays per human-object pair")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--image-id")
    p.set_defaults(func=_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = pipeline.load_config(args.config, args.set)
        record_errors = args.func(args, config)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable summary
        sys.stderr.write(json.dumps({"command": args.command, "error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    if record_errors:
        sys.stderr.write(
            json.dumps({"command": args.command, "record_errors": [e.to_json() for e in record_errors]}) + "\n"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
