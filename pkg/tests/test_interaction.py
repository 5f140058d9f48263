import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faceaction import imaging, interaction, star_vote, synth
from faceaction.errors import InvalidInputError, PluginError
from faceaction.landmarks import LandmarkSet, MOUTH_CENTER
from faceaction.star_vote import HeatMap


def random_region(rng, shape=(96, 96), n=50):
    mask = np.zeros(shape, dtype=bool)
    idx = rng.choice(mask.size, n, replace=False)
    mask.flat[idx] = True
    return mask


class TestDistances:
    def test_single_pixel_at_landmark(self):
        mask = np.zeros((20, 20), bool)
        mask[5, 7] = True
        pts = np.array([[7, 5]] + [[0, 0]] * 6, dtype=float)
        d = interaction.landmark_distances(mask, LandmarkSet(pts))
        assert d[0] == d[1] == 0.0
        assert d[2] == d[3] == math.hypot(7, 5)

    @pytest.mark.parametrize("seed", range(100))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        mask = random_region(rng)
        pts = rng.random((7, 2)) * 96
        got = interaction.landmark_distances(mask, LandmarkSet(pts))
        expected = []
        for px, py in pts:
            ds = [math.sqrt((x - px) ** 2 + (y - py) ** 2)
                  for y in range(96) for x in range(96) if mask[y, x]]
            expected += [min(ds), max(ds)]
        np.testing.assert_allclose(got, expected, rtol=1e-12)
        assert np.all(got[0::2] <= got[1::2])

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            interaction.landmark_distances(np.zeros((5, 5), bool), np.zeros((7, 2)))


class TestLogPolar:
    def test_single_pixel(self):
        mask = np.zeros((96, 96), bool)
        mask[40, 70] = True
        c = interaction.logpolar_coverage(mask, (50, 50))
        assert c.shape == (5, 8) and c.sum() == 1 and c.max() == 1
        # distance sqrt(500) ~ 22.4, angle atan2(-10, 20) + 2 pi
        edges = np.geomspace(1, 96, 6)
        r_bin = np.searchsorted(edges, math.hypot(20, 10), side="right") - 1
        a_bin = int((math.atan2(-10, 20) + 2 * math.pi) / (2 * math.pi / 8))
        assert c[r_bin, a_bin] == 1

    def test_center_pixel_innermost(self):
        mask = np.zeros((10, 10), bool)
        mask[5, 5] = True
        c = interaction.logpolar_coverage(mask, (5, 5), r_max=8)
        assert c[0].sum() == 1

    def test_beyond_r_max(self):
        mask = np.zeros((96, 96), bool)
        mask[90:, 90:] = True
        assert interaction.logpolar_coverage(mask, (0, 0), r_max=50).sum() == 0

    def test_disc_area(self):
        r_max = 96
        yy, xx = np.mgrid[0:201, 0:201]
        disc = (xx - 100) ** 2 + (yy - 100) ** 2 <= r_max ** 2
        total = interaction.logpolar_coverage(disc, (100, 100), r_max=r_max).sum()
        assert abs(total - math.pi * r_max ** 2) / (math.pi * r_max ** 2) < 0.02

    @settings(max_examples=100)
    @given(st.integers(0, 100_000), st.floats(2, 60), st.floats(2, 60),
           st.floats(0, 95), st.floats(0, 95))
    def test_total_monotone_in_r_max(self, seed, r1, r2, px, py):
        mask = random_region(np.random.default_rng(seed), n=200)
        lo, hi = sorted((r1, r2))
        a = interaction.logpolar_coverage(mask, (px, py), r_max=lo).sum()
        b = interaction.logpolar_coverage(mask, (px, py), r_max=hi).sum()
        ys, xs = np.nonzero(mask)
        assert a <= b
        assert b == np.count_nonzero(np.hypot(xs - px, ys - py) <= hi)

    def test_bad_parameters(self):
        with pytest.raises(InvalidInputError):
            interaction.logpolar_coverage(np.ones((3, 3), bool), (1, 1), r_max=1)


class TestFaceOverlaps:
    box = imaging.Box(20, 20, 60, 60)

    def test_identity(self):
        np.testing.assert_array_equal(interaction.face_overlaps(self.box.mask((96, 96)), self.box), [1, 1, 1])

    def test_disjoint(self):
        m = np.zeros((96, 96), bool)
        m[80:, 80:] = True
        np.testing.assert_array_equal(interaction.face_overlaps(m, self.box), [0, 0, 0])

    def test_left_half(self):
        m = np.zeros((96, 96), bool)
        m[20:60, 20:40] = True
        np.testing.assert_array_equal(interaction.face_overlaps(m, self.box), [0.5, 1.0, 0.5])

    @settings(max_examples=100)
    @given(st.integers(0, 100_000))
    def test_in_unit_interval(self, seed):
        m = random_region(np.random.default_rng(seed), n=300)
        o = interaction.face_overlaps(m, self.box)
        assert np.all((o >= 0) & (o <= 1))


class TestPriors:
    def test_location_delegates(self):
        faces = [synth.render_sample(np.random.default_rng(s), 0)[0][:96, :96] for s in range(2)]
        model = star_vote.train_star([(f, (48, 48)) for f in faces])
        a = interaction.location_prior(model, faces[0])
        b = star_vote.vote(model, faces[0])
        np.testing.assert_array_equal(a.mass, b.mass)

    def test_location_right_of_mouth(self):
        # class 0 objects leave the mouth toward +x
        rng = np.random.default_rng(0)
        samples, tests = [], []
        for i in range(14):
            img, face, _ = synth.render_sample(rng, 0)
            crop, amap = imaging.normalized_face_crop(img, face.box)
            obj = imaging.rasterize_polygon(face.object_polygon, img.shape)
            ys, xs = np.nonzero(obj)
            center = amap.to_crop([xs.mean(), ys.mean()])
            mouth = amap.to_crop(face.landmarks.points[MOUTH_CENTER])
            (samples if i < 10 else tests).append((crop, np.rint(center).astype(int), mouth))
        model = star_vote.train_star([(c, tuple(t)) for c, t, _ in samples])
        for crop, _, mouth in tests:
            x, _ = interaction.location_prior(model, crop).argmax()
            assert x > mouth[0]

    def test_constant_image_saliency(self):
        h = interaction.saliency_prior(np.full((96, 96), 0.5))
        assert h.mass.sum() == pytest.approx(1.0)
        assert h.mass[48, 48] > h.mass[0, 0] > 0
        assert not h.fallback

    def test_blob_more_salient(self):
        img = np.zeros((96, 96))
        img[40:56, 40:56] = 1.0
        h = interaction.saliency_prior(img)
        blob = h.mass[40:56, 40:56].sum()
        for y, x in [(0, 0), (0, 70), (70, 0), (70, 70), (10, 40)]:
            assert blob > h.mass[y:y + 16, x:x + 16].sum()

    def test_zero_plugin_fallback(self):
        h = interaction.saliency_prior(np.zeros((8, 8)), lambda img: np.zeros_like(img))
        assert h.fallback
        np.testing.assert_allclose(h.mass, 1 / 64)

    @pytest.mark.parametrize("plugin", [
        lambda img: np.zeros((3, 3)),
        lambda img: -np.ones_like(img),
        lambda img: 1 / 0,
    ])
    def test_plugin_errors(self, plugin):
        with pytest.raises(PluginError):
            interaction.saliency_prior(np.zeros((8, 8)), plugin)


class TestFeatures:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.mask = random_region(rng, n=80)
        self.lms = LandmarkSet(rng.random((7, 2)) * 96)
        self.box = imaging.Box(24, 24, 72, 72)
        self.uniform = HeatMap.normalized(np.ones((96, 96)))

    def test_layout(self):
        f = interaction.interaction_features(self.mask, self.lms, self.box, self.uniform, self.uniform)
        assert len(f.vector) == 2 + 14 + 7 * 5 * 8 + 3 == 299
        assert f.spans["logpolar"] == (16, 296)
        np.testing.assert_allclose(f.span("distances"), interaction.landmark_distances(self.mask, self.lms))
        np.testing.assert_array_equal(f.span("overlaps"), interaction.face_overlaps(self.mask, self.box))
        lp = [interaction.logpolar_coverage(self.mask, p).ravel() for p in self.lms.points]
        np.testing.assert_array_equal(f.span("logpolar"), np.concatenate(lp))

    def test_uniform_mass(self):
        f = interaction.interaction_features(self.mask, self.lms, self.box, self.uniform, self.uniform)
        assert f.span("loc_mass")[0] == pytest.approx(1 / 96 ** 2, rel=1e-12)

    def test_all_mass_inside(self):
        m = np.zeros((96, 96), bool)
        m[10:20, 10:15] = True
        loc = HeatMap.normalized(m.astype(float))
        f = interaction.interaction_features(m, self.lms, self.box, loc, self.uniform)
        assert f.span("loc_mass")[0] == pytest.approx(1 / 50, rel=1e-12)

    def test_landmark_array_accepted(self):
        a = interaction.interaction_features(self.mask, self.lms, self.box, self.uniform, self.uniform)
        b = interaction.interaction_features(self.mask, self.lms.points, self.box, self.uniform, self.uniform)
        np.testing.assert_array_equal(a.vector, b.vector)
