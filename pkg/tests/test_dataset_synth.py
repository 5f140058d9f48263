import hashlib
import json
import os

import numpy as np
import pytest

from faceaction import dataset, imaging, synth
from faceaction.dataset import AnnotationRecord, FaceAnnotation
from faceaction.errors import SchemaError
from faceaction.landmarks import LANDMARK_NAMES, MOUTH_CENTER, LandmarkSet


def record(k=0, polygon=((1, 1), (5, 1), (5, 5))):
    box = imaging.Box(10, 10, 50, 50)
    lm = LandmarkSet(np.arange(14.0).reshape(7, 2) + k, [0, 0, 1, 0, 0, 0, 0])
    face = FaceAnnotation(box, lm, 3.5, [list(p) for p in polygon], [imaging.Box(0, 0, 5, 5)])
    return AnnotationRecord(f"r{k}", f"r{k}.png", "drinking", imaging.Box(0, 0, 60, 60), [face])


def write_manifest(path, lines):
    path.write_text("\n".join(json.dumps(x) for x in lines) + "\n")
    return str(path)


class TestManifest:
    def test_round_trip(self, tmp_path):
        recs = [record(0), record(1)]
        p = str(tmp_path / "m.jsonl")
        dataset.save_dataset(p, recs, ["drinking", "smoking"])
        ds = dataset.load_dataset(p, check_images=False)
        assert ds.classes == ["drinking", "smoking"]
        assert [r.to_dict() for r in ds.records] == [r.to_dict() for r in recs]

    def test_empty(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text("")
        assert len(dataset.load_dataset(str(p))) == 0

    def test_six_landmarks_names_record(self, tmp_path):
        bad = record(0).to_dict()
        del bad["faces"][0]["landmarks"][LANDMARK_NAMES[-1]]
        p = write_manifest(tmp_path / "m.jsonl", [{"version": 1}, record(1).to_dict(), bad])
        with pytest.raises(SchemaError, match="record 1") as info:
            dataset.load_dataset(p, check_images=False)
        assert info.value.index == 1

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text('{"version": 1}\n{oops\n')
        with pytest.raises(SchemaError, match="record 0"):
            dataset.load_dataset(str(p))

    def test_missing_image(self, tmp_path):
        p = write_manifest(tmp_path / "m.jsonl", [record(0).to_dict()])
        with pytest.raises(SchemaError, match="missing image"):
            dataset.load_dataset(p)

    def test_short_polygon(self, tmp_path):
        bad = record(0, polygon=((0, 0), (1, 1))).to_dict()
        with pytest.raises(SchemaError):
            dataset.load_dataset(write_manifest(tmp_path / "m.jsonl", [bad]), check_images=False)

    def test_bad_version(self, tmp_path):
        p = write_manifest(tmp_path / "m.jsonl", [{"version": 7}])
        with pytest.raises(SchemaError):
            dataset.load_dataset(p)

    @pytest.mark.parametrize("field", ["id", "label", "person_box", "faces"])
    def test_missing_field(self, tmp_path, field):
        d = record(0).to_dict()
        del d[field]
        with pytest.raises(SchemaError):
            dataset.load_dataset(write_manifest(tmp_path / "m.jsonl", [d]), check_images=False)

    def test_degenerate_box(self, tmp_path):
        d = record(0).to_dict()
        d["person_box"] = [5, 5, 5, 9]
        with pytest.raises(SchemaError):
            dataset.load_dataset(write_manifest(tmp_path / "m.jsonl", [d]), check_images=False)

    def test_polygon_mask_in_crop(self):
        amap = imaging.AffineMap(2.0, 2.0, 10.0, 10.0)
        m = dataset.polygon_mask([[10, 10], [30, 10], [30, 30], [10, 30]], amap, (20, 20))
        assert m[0:11, 0:11].all() and np.count_nonzero(m) == 121


def digest(directory):
    h = hashlib.sha256()
    for root, _, files in sorted(os.walk(directory)):
        for f in sorted(files):
            with open(os.path.join(root, f), "rb") as fh:
                h.update(f.encode() + fh.read())
    return h.hexdigest()


class TestSynth:
    def test_reproducible(self, tmp_path):
        synth.synth_generate(str(tmp_path / "a"), 2, 2, seed=3)
        synth.synth_generate(str(tmp_path / "b"), 2, 2, seed=3)
        synth.synth_generate(str(tmp_path / "c"), 2, 2, seed=4)
        assert digest(tmp_path / "a") == digest(tmp_path / "b") != digest(tmp_path / "c")

    def test_counts_balanced(self, tmp_path):
        ds = dataset.load_dataset(synth.synth_generate(str(tmp_path), 4, 30, seed=0))
        assert len(ds) == 120
        assert ds.classes == list(synth.CLASS_NAMES)
        labels = [r.label for r in ds.records]
        assert all(labels.count(c) == 30 for c in ds.classes)

    def test_object_centroid_band(self):
        rng = np.random.default_rng(5)
        for i in range(40):
            k = i % 4
            img, face, _ = synth.render_sample(rng, k)
            poly = np.asarray(face.object_polygon)
            s = face.box.width
            centroid = poly.mean(axis=0)
            d = np.linalg.norm(centroid - face.landmarks.points[MOUTH_CENTER]) / s
            lo, hi = synth.class_pose(k).centroid_band()
            assert lo - 1e-9 <= d <= hi + 1e-9
            assert img.min() >= 0 and img.max() <= 1

    def test_extra_classes(self):
        assert synth.class_names(6)[4:] == ["class_4", "class_5"]
        assert synth.class_pose(5).angle_deg != synth.class_pose(4).angle_deg

    def test_nearest_centroid_separable(self, tmp_path):
        # object angle relative to the face separates the classes
        rng = np.random.default_rng(0)
        feats, labels = [], []
        for i in range(80):
            _, face, _ = synth.render_sample(rng, i % 4)
            d = np.asarray(face.object_polygon).mean(axis=0) - face.landmarks.points[MOUTH_CENTER]
            feats.append(d / np.linalg.norm(d))
            labels.append(i % 4)
        feats, labels = np.array(feats), np.array(labels)
        cents = np.array([feats[labels == k].mean(axis=0) for k in range(4)])
        pred = np.argmin(np.linalg.norm(feats[:, None] - cents[None], axis=2), axis=1)
        assert np.mean(pred == labels) == 1.0
