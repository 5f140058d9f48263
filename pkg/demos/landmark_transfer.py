"""Facial landmarks by exemplar transfer on synthetic faces.

A corpus of annotated faces is built, then landmarks are predicted for
faces the corpus has not seen. For each landmark the report shows the
coarse estimate (density mode of the neighbors' positions), the refined
estimate (a star model trained on those neighbors) and which one the
fusion rule kept.

Run: python demos/landmark_transfer.py [out_dir]
"""

import os
import sys

import numpy as np

from faceaction import imaging, landmarks, overlay, synth
from faceaction.pipeline import Overlay


def annotated_faces(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        img, face, _ = synth.render_sample(rng, i % 4)
        out.append(landmarks.AnnotatedFace(img, face.box, face.score, face.landmarks))
    return out


def main(out_dir="demo_out"):
    os.makedirs(out_dir, exist_ok=True)
    corpus = landmarks.build_corpus(annotated_faces(80, seed=1))
    print(f"corpus: {len(corpus)} faces")

    errors = []
    for k, face in enumerate(annotated_faces(6, seed=2)):
        crop, amap = imaging.normalized_face_crop(face.image, face.box)
        det = landmarks.detect_landmarks(corpus, crop)
        truth = face.landmarks.map(amap.to_crop)
        err = np.linalg.norm(det.landmarks.points - truth.points, axis=1)
        errors.append(err.mean())
        print(f"face {k}: mean error {err.mean():.2f} px (crop frame), refined kept for "
              f"{int(det.used_refined.sum())}/7 landmarks")
        if k == 0:
            for name, c, r, used in zip(landmarks.LANDMARK_NAMES, det.coarse.points,
                                        det.refined.points, det.used_refined):
                print(f"  {name:20s} coarse {c.round(1)} refined {r.round(1)} -> {'refined' if used else 'coarse'}")
            src = det.landmarks.map(amap.to_source)
            path = os.path.join(out_dir, "landmarks.png")
            overlay.emit_overlay(face.image, Overlay(landmarks=src.points, face_box=face.box), path)
            print(f"  overlay written to {path}")
    print(f"mean error over unseen faces: {np.mean(errors):.2f} px")


if __name__ == "__main__":
    main(*sys.argv[1:])
