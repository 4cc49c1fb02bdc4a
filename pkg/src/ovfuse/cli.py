"""``ovfuse`` command line.

Exit codes: 0 on success, 2 on invalid arguments or configuration, 3 when a
stage fails at runtime.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .capability import (CapabilityTable, aggregate_attention, binarize_coarse_mask, build_capability,
                         load_capability_corpus, sample_prompt_points)
from .distill import ToyPointModel, TrainSchedule, train
from .errors import ConfigError, OvfuseError
from .fusion import FusionConfig, capability_fuse, load_classes
from .geometry import PointFeatureSet, PointScene, load_camera, project_views
from .metrics import LabelMap, classify_points, confusion_and_metrics
from .pipeline import PipelineConfig, align_model, manifest_hash, run_pipeline
from .superpoint import identity_partition, segment_mesh, SuperpointPartition
from .synth import SyntheticSceneSpec, synth_generate, write_synthetic
from .tensor import read_tensor, write_pgm, write_tensor

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return value
    return parse


def _load_cameras(paths):
    cams = []
    for p in paths:
        view, feats, masks = load_camera(p)
        cams.append((Path(p), view, feats, masks))
    return cams


def _features(path) -> PointFeatureSet:
    return PointFeatureSet.from_features(read_tensor(path).astype(np.float64))


def cmd_project(args):
    scene = PointScene.from_ply(args.scene)
    cams = _load_cameras(args.views)
    corr = project_views(scene, [c[1] for c in cams], args.sigma_rel)
    write_tensor(corr.as_array().astype(np.int32), args.out)
    print(f"{len(corr)} correspondences over {len(scene)} points -> {args.out}")


def cmd_align(args):
    scene = PointScene.from_ply(args.scene)
    emb = load_classes(args.classes)
    cams = _load_cameras(args.views)
    corr = project_views(scene, [c[1] for c in cams], args.sigma_rel)
    f = align_model(args.model, cams, corr, len(scene), emb.channels)
    write_tensor(f.features.astype(np.float32), args.out)
    print(f"model {args.model}: {int(f.valid.sum())}/{len(f)} points observed -> {args.out}")


def cmd_capability(args):
    if args.stack is not None:
        agg = aggregate_attention(read_tensor(args.stack))
        coarse = binarize_coarse_mask(agg, args.threshold)
        prompts = sample_prompt_points(coarse, args.points, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_tensor(agg.astype(np.float32), out / "attention.ovt")
        write_pgm(coarse, out / "coarse_mask.pgm")
        (out / "prompts.json").write_text(json.dumps({"points": prompts.tolist()}) + "\n")
        print(f"coarse mask with {int(coarse.sum())} pixels, prompts {prompts.tolist()} -> {out}")
        return
    if args.corpus is None or args.model is None:
        raise ConfigError("capability needs --corpus and --model, or --stack")
    names = load_classes(args.classes).names if args.classes else None
    corpus = load_capability_corpus(args.corpus)
    if args.model not in corpus:
        raise ConfigError(f"corpus has no model {args.model!r}")
    table = build_capability(args.model, corpus[args.model], names)
    table.save(args.out)
    print(f"capability table for {args.model} -> {args.out}")


def cmd_fuse(args):
    if len(args.features) != len(args.caps):
        raise ConfigError(f"{len(args.features)} feature files but {len(args.caps)} capability tables")
    emb = load_classes(args.classes)
    sets = [_features(p) for p in args.features]
    caps = [CapabilityTable.load(p, emb.names) for p in args.caps]
    fused = capability_fuse(sets, caps, emb, FusionConfig(args.tau))
    write_tensor(fused.features.astype(np.float32), args.out)
    print(f"fused {len(sets)} models, {int(fused.valid.sum())}/{len(fused)} valid -> {args.out}")


def cmd_superpoints(args):
    scene = PointScene.from_ply(args.mesh)
    part = identity_partition(len(scene)) if args.identity else segment_mesh(
        scene.points, scene.faces, args.k, args.min_size)
    part.save(args.out)
    print(f"{part.n_segments} superpoints over {len(scene)} points -> {args.out}")


def cmd_distill(args):
    try:
        sched = TrainSchedule(total_epochs=args.epochs, phase1_epochs=args.phase1, lr=args.lr,
                              steps_per_epoch=args.steps, alpha=args.alpha, tau_ce=args.tau_ce,
                              hidden=args.hidden, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    scene = PointScene.from_ply(args.scene)
    emb = load_classes(args.classes)
    targets = _features(args.targets)
    part = SuperpointPartition.load(args.superpoints) if args.superpoints else identity_partition(len(scene))
    model, log = train(scene.points, targets, part, emb, sched)
    out = Path(args.out)
    model.save(out, {"tau_ce": sched.tau_ce, "seed": sched.seed})
    (out / "train_log.json").write_text(json.dumps(log.to_json(), indent=1) + "\n")
    write_tensor(model(scene.points).astype(np.float32), out / "features.ovt")
    last = log.epochs[-1]["loss"] if len(log) else float("nan")
    print(f"{len(log)} epochs, final loss {last:.6f} -> {out}")


def cmd_eval(args):
    emb = load_classes(args.classes)
    label_map = LabelMap.load(args.label_map) if args.label_map else None
    if args.features is not None:
        f = _features(args.features)
    else:
        scene = PointScene.from_ply(args.scene)
        f = PointFeatureSet.from_features(ToyPointModel.load(args.checkpoint)(scene.points))
    truth = read_tensor(args.labels).astype(np.int64).reshape(-1)
    pred = classify_points(f, emb, label_map)
    names = label_map.coarse_names if label_map else emb.names
    metrics = confusion_and_metrics(pred, truth, len(names)).to_json(names)
    text = json.dumps(metrics, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_synth(args):
    spec = SyntheticSceneSpec.from_json(json.loads(Path(args.spec).read_text())) if args.spec else SyntheticSceneSpec()
    path = write_synthetic(synth_generate(spec, args.seed), args.out)
    print(f"synthetic scene written; pipeline config {path}")


def _parse_override(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def cmd_run(args):
    cfg = PipelineConfig.load(args.config, dict(args.set or []))
    out = run_pipeline(cfg, args.out)
    metrics = json.loads((out / "metrics.json").read_text())
    if "miou" in metrics:
        print(f"distilled mIoU {metrics['miou']:.4f}, fused mIoU {metrics['fused']['miou']:.4f}")
    print(f"artifacts in {out}; manifest sha256 {manifest_hash(out)}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ovfuse", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="pixel/point correspondences after the occlusion test")
    p.add_argument("--scene", required=True)
    p.add_argument("--views", nargs="+", required=True)
    p.add_argument("--sigma-rel", type=_positive(float), default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("align", help="per-point features of one model from its per-view outputs")
    p.add_argument("--scene", required=True)
    p.add_argument("--views", nargs="+", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--sigma-rel", type=_positive(float), default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("capability", help="capability table from a mask corpus, or prompts from attention maps")
    p.add_argument("--corpus")
    p.add_argument("--model")
    p.add_argument("--classes")
    p.add_argument("--stack", help="[Y, Z, h, w] attention stack (.ovt)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--points", type=_positive(int), default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_capability)

    p = sub.add_parser("fuse", help="capability-guided fusion")
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--caps", nargs="+", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--tau", type=_positive(float), default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("superpoints", help="graph segmentation of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--k", type=_positive(float), default=0.02)
    p.add_argument("--min-size", type=_positive(int), default=50)
    p.add_argument("--identity", action="store_true", help="one superpoint per point")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_superpoints)

    p = sub.add_parser("distill", help="train the toy 3D model on fused targets")
    p.add_argument("--scene", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--superpoints")
    p.add_argument("--classes", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--phase1", type=int, default=70)
    p.add_argument("--lr", type=float, default=TrainSchedule.lr)
    p.add_argument("--steps", type=int, default=TrainSchedule.steps_per_epoch)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--tau-ce", type=float, default=0.07)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="zero-shot metrics of point features")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--features")
    src.add_argument("--checkpoint")
    p.add_argument("--scene", help="points to run --checkpoint on")
    p.add_argument("--classes", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--label-map")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic scene and its pipeline config")
    p.add_argument("--out", required=True)
    p.add_argument("--spec")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="whole pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--set", action="append", type=_parse_override, metavar="KEY=VALUE",
                   help="override a config entry, dotted keys reach nested tables")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    if args.command == "eval" and args.checkpoint and not args.scene:
        print("error: --checkpoint needs --scene", file=sys.stderr)
        return EXIT_INVALID
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OvfuseError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
