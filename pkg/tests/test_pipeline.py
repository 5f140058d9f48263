import math

import numpy as np
import pytest

from faceaction import imaging, landmarks, pipeline, regions
from faceaction.dataset import Dataset
from faceaction.errors import PluginError, SchemaError
from faceaction.regions import RegionPool


@pytest.fixture(scope="module")
def classified(small_data):
    bundle, test = small_data["bundle"], small_data["test"]
    return [(rec, test.load_image(rec), pipeline.classify(bundle, test.load_image(rec), rec.person_box,
                                                           rec.face, rec.id))
            for rec in test.records]


class TestScoreFormula:
    def test_arithmetic(self):
        assert pipeline.combine_scores(1.0, 2.0, 10.0, 0.1) == 4.0

    def test_gamma_zero(self):
        assert pipeline.combine_scores(1.5, -0.25, 123.0, 0.0) == 1.25


class TestBundle:
    def test_classes_shared(self, small_data):
        b = small_data["bundle"]
        assert b.classes == b.appearance_model.classes == b.region_model.classes
        assert b.region_model.spans == {"interaction": (0, 299), "object": (299, 1134)}
        assert b.appearance_model.spans == {"face": (0, 205), "mouth": (205, 410)}

    def test_round_trip_scores(self, small_data, classified):
        loaded = pipeline.PipelineBundle.load(small_data["bundle_path"])
        rec, img, res = classified[0]
        again = pipeline.classify(loaded, img, rec.person_box, rec.face, rec.id)
        for c in res.classes:
            assert again.score(c) == res.score(c)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError):
            pipeline.PipelineBundle.load(str(tmp_path / "nope.json"))

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(SchemaError):
            pipeline.PipelineBundle.load(str(p))

    def test_wrong_version(self, small_data):
        doc = small_data["bundle"].to_dict()
        doc["version"] = 99
        with pytest.raises(SchemaError):
            pipeline.PipelineBundle.from_dict(doc)


class TestClassify:
    def test_decomposition(self, classified):
        for _, _, res in classified:
            assert not res.non_class and res.pool_size > 0
            for s in res.scores.values():
                assert abs(s.score - (s.eta_f + s.eta_m + 0.1 * (s.eta_int + s.eta_obj))) <= 1e-9

    def test_gamma_zero_is_appearance_only(self, small_data, classified):
        bundle = small_data["bundle"]
        rec, img, res = classified[1]
        ablated = pipeline.classify(bundle, img, rec.person_box, rec.face, rec.id, gamma=0.0)
        for c in bundle.classes:
            assert ablated.score(c) == res.scores[c].eta_f + res.scores[c].eta_m
        ctx = pipeline.face_context(img, rec.face.box)
        f, m = pipeline.appearance_features(ctx.crop, res.face.landmarks, bundle.appearance)
        full = bundle.appearance_model.decision(np.concatenate([f, m]))
        np.testing.assert_allclose([ablated.score(c) for c in bundle.classes], full, rtol=0, atol=1e-9)

    def test_gamma_rescales_region_term_only(self, small_data, classified):
        rec, img, res = classified[2]
        big = pipeline.classify(small_data["bundle"], img, rec.person_box, rec.face, rec.id, gamma=0.5)
        for c in res.classes:
            a, b = res.scores[c], big.scores[c]
            assert (a.eta_f, a.eta_m) == (b.eta_f, b.eta_m)
            assert b.score - b.eta_f - b.eta_m == pytest.approx(5 * (a.score - a.eta_f - a.eta_m), abs=1e-9)

    def test_true_class_ranks_first(self, classified):
        hits = [pipeline.best_class(res) == rec.label for rec, _, res in classified]
        assert np.mean(hits) >= 0.75

    def test_low_face_score_non_class(self, small_data, classified):
        rec, img, _ = classified[0]
        face = landmarks.FaceRecord(rec.face.box, -0.1)
        res = pipeline.classify(small_data["bundle"], img, None, face)
        assert res.non_class and "face-below-s_min" in res.flags
        assert all(res.score(c) == -math.inf for c in res.classes)
        assert pipeline.best_class(res) is None
        assert pipeline.explain(res, res.classes[0]).empty

    def test_annotated_face_passes_gate(self, small_data, classified):
        rec, img, _ = classified[0]
        res = pipeline.classify(small_data["bundle"], img, None, landmarks.FaceRecord(rec.face.box, None))
        assert not res.non_class

    def test_override_equals_detector(self, small_data, classified):
        rec, img, res = classified[3]
        bundle = small_data["bundle"]
        detector = lambda image, person: [(imaging.Box(0, 0, 20, 20), 1.0), (rec.face.box, 6.0)]
        with_det = pipeline.PipelineBundle(bundle.classes, bundle.appearance_model, bundle.region_model,
                                           bundle.star_model, bundle.corpus, bundle.config,
                                           face_detector=detector)
        a = pipeline.classify(with_det, img, rec.person_box)
        b = pipeline.classify(bundle, img, rec.person_box, landmarks.FaceRecord(rec.face.box, 6.0))
        for c in bundle.classes:
            assert a.score(c) == b.score(c)

    def test_no_detector(self, small_data, classified):
        _, img, _ = classified[0]
        with pytest.raises(PluginError):
            pipeline.classify(small_data["bundle"], img)

    def test_detector_finds_nothing(self, small_data, classified):
        _, img, _ = classified[0]
        b = small_data["bundle"]
        nobody = pipeline.PipelineBundle(b.classes, b.appearance_model, b.region_model, b.star_model, b.corpus,
                                         face_detector=lambda image, person: [])
        res = pipeline.classify(nobody, img)
        assert res.non_class and res.flags == ["no-face"]

    def test_empty_pool(self, small_data, classified, monkeypatch):
        rec, img, _ = classified[0]
        monkeypatch.setattr(regions, "build_pool", lambda crop, segmenter=None: RegionPool())
        res = pipeline.classify(small_data["bundle"], img, None, rec.face)
        assert "empty-pool" in res.flags and res.pool_size == 0
        for s in res.scores.values():
            assert s.region is None and s.score == s.eta_f + s.eta_m

    def test_ties_lowest_region(self, small_data, classified, monkeypatch):
        rec, img, res = classified[0]
        best = res.regions[res.scores[res.classes[0]].region]
        monkeypatch.setattr(regions, "build_pool",
                            lambda crop, segmenter=None: RegionPool([best, best], ["segmentation"] * 2))
        tied = pipeline.classify(small_data["bundle"], img, None, rec.face)
        assert all(s.region == 0 for s in tied.scores.values())


class TestBatch:
    def test_empty(self, small_data):
        assert pipeline.classify_batch(small_data["bundle"], Dataset([], ".", ["a"])) == []

    def test_deterministic_and_ordered(self, small_data):
        test = small_data["test"]
        sub = Dataset(test.records[:3], test.root, test.classes)
        a = pipeline.classify_batch(small_data["bundle"], sub)
        b = pipeline.classify_batch(small_data["bundle"], sub)
        assert [r.image_id for r in a] == [r.id for r in sub.records]
        for x, y in zip(a, b):
            assert {c: s.score for c, s in x.scores.items()} == {c: s.score for c, s in y.scores.items()}

    def test_failure_recorded(self, small_data):
        test = small_data["test"]
        good = test.records[0]
        missing = type(good)("ghost", "images/ghost.png", good.label, good.person_box, good.faces)
        res = pipeline.classify_batch(small_data["bundle"], Dataset([missing, good], test.root, test.classes))
        assert res[0].non_class and res[0].error
        assert not res[1].non_class


class TestExplain:
    def test_overlay_hits_object(self, classified):
        ious = []
        for rec, img, res in classified:
            ov = pipeline.explain(res, rec.label)
            truth = imaging.rasterize_polygon(rec.face.object_polygon, img.shape)
            ious.append(regions.overlap_score(ov.region_mask, truth))
            assert ov.face_box == rec.face.box and ov.landmarks.shape == (7, 2)
        assert np.mean(np.array(ious) >= 0.5) >= 0.75

    def test_landmark_round_trip(self, classified):
        _, _, res = classified[0]
        amap = res.face.crop_transform
        pts = res.face.landmarks.points
        np.testing.assert_allclose(amap.to_crop(amap.to_source(pts)), pts, atol=1e-9)

    def test_mask_transfer(self):
        amap = imaging.AffineMap(1.5, 1.5, 10.0, 20.0)
        mask = np.zeros((40, 40), bool)
        mask[10:20, 5:15] = True
        src = pipeline.crop_mask_to_source(mask, amap, (100, 100))
        ys, xs = np.nonzero(src)
        back = amap.to_crop(np.stack([xs, ys], axis=1).astype(float))
        assert np.all((back[:, 0] >= 4.5) & (back[:, 0] <= 14.5))
        assert np.all((back[:, 1] >= 9.5) & (back[:, 1] <= 19.5))
        assert np.count_nonzero(src) == pytest.approx(100 * 1.5 ** 2, rel=0.15)

    def test_to_dict(self, classified):
        rec, _, res = classified[0]
        d = pipeline.explain(res, rec.label).to_dict()
        assert d["class"] == rec.label and d["region_area"] > 0 and len(d["region_bbox"]) == 4
