"""Command-line interface: ``faceaction {synth,train,predict,landmarks,eval,explain}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

import argparse
import json
import logging
import sys

from . import dataset, evaluation, imaging, interaction, landmarks, overlay, pipeline, regions, synth
from .errors import FaceActionError, InvalidInputError, SchemaError
from .learning import TrainingConfig
from .serialize import FORMAT_VERSION, dump_json, load_json

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("faceaction")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _box(values):
    return imaging.Box(*values)


def cmd_synth(args):
    path = synth.synth_generate(args.out, args.classes, args.per_class, args.seed, args.prefix)
    print(f"wrote {args.classes * args.per_class} records to {path}")


def _config(args):
    doc = {}
    if args.config:
        doc = load_json(args.config)
        if not isinstance(doc, dict):
            raise SchemaError("config must be a JSON object")
    for key in ("seed", "gamma", "svm_c", "s_min"):
        v = getattr(args, key, None)
        if v is not None:
            doc[key] = v
    return TrainingConfig.from_dict(doc)


def _plugins(args):
    if getattr(args, "embeddings", None):
        return {"appearance": regions.EmbeddingAppearance.load(args.embeddings)}
    return {}


def _load_bundle(args):
    return pipeline.PipelineBundle.load(args.bundle, **_plugins(args))


def cmd_train(args):
    ds = dataset.load_dataset(args.manifest)
    cfg = _config(args)
    bundle = pipeline.train_pipeline(ds, cfg, progress=log.info, **_plugins(args))
    bundle.save(args.out)
    print(f"trained {len(bundle.classes)} classes on {len(ds)} records; bundle written to {args.out}")


def cmd_predict(args):
    bundle = _load_bundle(args)
    ds = dataset.load_dataset(args.manifest)
    results = pipeline.classify_batch(bundle, ds, progress=log.info)
    rows = [(r.image_id, c, r.scores[c].score) for r in results for c in bundle.classes]
    evaluation.write_scores(args.out, rows)
    if args.landmarks_out:
        doc = {"version": FORMAT_VERSION, "landmarks": {}}
        for r in results:
            if r.face is not None and r.face.landmarks is not None:
                src = r.face.landmarks.map(r.face.crop_transform.to_source)
                doc["landmarks"][r.image_id] = src.to_dict()
        dump_json(args.landmarks_out, doc)
    if args.results_out:
        dump_json(args.results_out, {"version": FORMAT_VERSION, "results": [r.to_dict() for r in results]})
    failed = sum(r.error is not None for r in results)
    print(f"scored {len(results)} images ({failed} failed); scores written to {args.out}")


def _load_landmark_predictions(path):
    doc = load_json(path)
    if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported landmark file {path}")
    return {k: landmarks.LandmarkSet.from_dict(v) for k, v in doc.get("landmarks", {}).items()}


def cmd_eval(args):
    ds = dataset.load_dataset(args.manifest, check_images=False)
    rows = evaluation.read_scores(args.scores)
    preds = _load_landmark_predictions(args.landmarks) if args.landmarks else None
    report = evaluation.evaluate(rows, ds, preds)
    if args.out:
        report.save(args.out)
    for c, ap in report.average_precision.items():
        print(f"AP {c}: {ap:.4f}")
    print(f"mean AP: {report.mean_ap:.4f}")


def _face_crop(args):
    img = imaging.load_gray(args.image)
    box = _box(args.box)
    crop, amap = imaging.normalized_face_crop(img, box)
    return img, box, crop, amap


def cmd_landmarks(args):
    bundle = pipeline.PipelineBundle.load(args.bundle)
    img, box, crop, amap = _face_crop(args)
    det = landmarks.detect_landmarks(bundle.corpus, crop)
    src = det.landmarks.map(amap.to_source)
    doc = {"version": FORMAT_VERSION, "image": args.image, "box": box.to_list(),
           "landmarks": src.to_dict(), "used_refined": det.used_refined.tolist(), "flags": det.flags}
    if args.out:
        dump_json(args.out, doc)
    else:
        print(json.dumps(doc, indent=2))
    if args.overlay:
        overlay.emit_overlay(img, pipeline.Overlay(landmarks=src.points, face_box=box), args.overlay)


def cmd_explain(args):
    bundle = _load_bundle(args)
    img = imaging.load_gray(args.image)
    face = landmarks.FaceRecord(_box(args.box), args.score)
    result = pipeline.classify(bundle, img, None, face, args.image)
    c = args.cls or pipeline.best_class(result)
    if c is not None and c not in bundle.classes:
        raise InvalidInputError(f"unknown class {c!r}; known: {bundle.classes}")
    ov = pipeline.explain(result, c) if c is not None else pipeline.Overlay()
    overlay.emit_overlay(img, ov, args.out)
    if args.heatmap and not result.non_class:
        ctx = pipeline.face_context(img, face.box, face.score)
        overlay.emit_heatmap(interaction.location_prior(bundle.star_model, ctx.crop), args.heatmap)
    summary = {"class": c, "scores": {k: s.score for k, s in result.scores.items()}, "overlay": ov.to_dict()}
    if args.json:
        dump_json(args.json, {"version": FORMAT_VERSION, **summary})
    print(json.dumps(summary, default=str))


def build_parser():
    p = _Parser(prog="faceaction", description="Face-related action recognition from face-object interactions.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic annotated dataset")
    s.add_argument("out")
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--prefix", default="img")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a bundle from an annotated manifest")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON file with training options")
    s.add_argument("--seed", type=int)
    s.add_argument("--gamma", type=float)
    s.add_argument("--svm-c", dest="svm_c", type=float)
    s.add_argument("--s-min", dest="s_min", type=float)
    s.add_argument("--embeddings", help="precomputed appearance vectors (JSON) replacing the built-in descriptor")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="score every image of a manifest")
    s.add_argument("bundle")
    s.add_argument("manifest")
    s.add_argument("--out", required=True, help="scores CSV")
    s.add_argument("--landmarks-out", help="predicted landmarks JSON")
    s.add_argument("--results-out", help="full per-image results JSON")
    s.add_argument("--embeddings", help="precomputed appearance vectors (JSON) replacing the built-in descriptor")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("landmarks", help="detect landmarks for one face")
    s.add_argument("bundle")
    s.add_argument("image")
    s.add_argument("--box", type=float, nargs=4, required=True, metavar=("X0", "Y0", "X1", "Y1"))
    s.add_argument("--out")
    s.add_argument("--overlay", help="PNG with landmarks drawn")
    s.set_defaults(func=cmd_landmarks)

    s = sub.add_parser("eval", help="average precision of a scores file")
    s.add_argument("scores")
    s.add_argument("manifest")
    s.add_argument("--out", help="report JSON")
    s.add_argument("--landmarks", help="predicted landmarks JSON from predict")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("explain", help="draw the best-scoring region for one face")
    s.add_argument("bundle")
    s.add_argument("image")
    s.add_argument("--box", type=float, nargs=4, required=True, metavar=("X0", "Y0", "X1", "Y1"))
    s.add_argument("--score", type=float, help="face detector score (omit for an annotated face)")
    s.add_argument("--class", dest="cls")
    s.add_argument("--out", required=True, help="overlay PNG")
    s.add_argument("--json", help="overlay description JSON")
    s.add_argument("--heatmap", help="object-location heat map PNG")
    s.add_argument("--embeddings", help="precomputed appearance vectors (JSON) replacing the built-in descriptor")
    s.set_defaults(func=cmd_explain)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("faceaction: a command is required (see --help)")
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (FaceActionError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception as err:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
