"""Train and evaluate the full classifier on a synthetic benchmark.

Four classes differ only in the direction the action object leaves the
mouth. The script generates train and test sets, trains every model,
scores the test images, reports average precision per class, breaks one
score into its appearance and region terms, and draws the best region of
a few test images.

Run: python demos/end_to_end.py [out_dir] [images_per_class]
"""

import os
import sys
import time

from faceaction import evaluation, overlay, pipeline, synth
from faceaction.dataset import load_dataset


def main(out_dir="demo_out", per_class="15"):
    per_class = int(per_class)
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    train = load_dataset(synth.synth_generate(os.path.join(out_dir, "train"), 4, per_class, seed=1))
    test = load_dataset(synth.synth_generate(os.path.join(out_dir, "test"), 4, per_class, seed=2))
    bundle = pipeline.train_pipeline(train)
    print(f"trained on {len(train)} images in {time.perf_counter() - t0:.0f}s")

    results = pipeline.classify_batch(bundle, test)
    rows = [(r.image_id, c, r.score(c)) for r in results for c in bundle.classes]
    report = evaluation.evaluate(rows, test)
    for c, ap in report.average_precision.items():
        print(f"AP {c:16s} {ap:.3f}")
    print(f"mean AP {report.mean_ap:.3f}")

    res = results[0]
    c = pipeline.best_class(res)
    s = res.scores[c]
    print(f"{res.image_id}: best class {c}")
    print("  S = eta_F + eta_M + gamma * (eta_Int + eta_Obj)")
    print(f"  {s.score:.3f} = {s.eta_f:.3f} + {s.eta_m:.3f} + {bundle.config.gamma} * "
          f"({s.eta_int:.3f} + {s.eta_obj:.3f})")

    for rec, res in list(zip(test.records, results))[:4]:
        path = os.path.join(out_dir, f"explain_{rec.id}.png")
        overlay.emit_overlay(test.load_image(rec), pipeline.explain(res, rec.label), path)
        print(f"overlay for {rec.id} ({rec.label}) written to {path}")
    print(f"total {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main(*sys.argv[1:])
