"""Training and inference for the full face-action classifier.

The class score of an image with face ``F`` is::

    S_c = eta_F + eta_M + gamma * max_r (eta_Int(r) + eta_Obj(r))

where ``eta_F``/``eta_M`` come from the appearance model split into its
face and mouth spans, and ``eta_Int``/``eta_Obj`` from the region model
split into its interaction and object spans. Each model's bias is folded
into its second-to-be-reported term (``eta_F`` and ``eta_Obj``) so the
identity above holds exactly.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import imaging, interaction, landmarks, regions, star_vote
from .dataset import polygon_mask
from .errors import FaceActionError, InvalidInputError, PluginError, SchemaError, TrainingError
from .learning import (NEGATIVE, LinearModel, Standardizer, TrainingConfig, assign_region_labels,
                       center_in_crop, mask_centroid, train_appearance_model, train_object_center_star,
                       train_one_vs_all)
from .serialize import FORMAT_VERSION, check_version, dump_json, load_json

log = logging.getLogger(__name__)

NON_CLASS = "non-class"


# ---------------------------------------------------------------------------
# per-face preparation
# ---------------------------------------------------------------------------


@dataclass
class FaceContext:
    """A face normalized into the crop frame shared by all features."""

    box: imaging.Box
    score: float
    crop: np.ndarray
    transform: imaging.AffineMap
    face_box: imaging.Box
    image_shape: tuple

    @property
    def record(self):
        return landmarks.FaceRecord(self.box, self.score, None, self.transform)


def face_context(image, box, score=None):
    image = imaging.as_gray(image)
    crop, amap = imaging.normalized_face_crop(image, box)
    return FaceContext(box, score, crop, amap, amap.box_to_crop(box), image.shape)


def appearance_features(crop, lms, appearance):
    """Appearance vectors of the face crop and of the mouth window."""
    try:
        f = np.asarray(appearance(crop), dtype=np.float64).ravel()
        m = np.asarray(appearance(landmarks.mouth_crop(crop, lms)), dtype=np.float64).ravel()
    except FaceActionError:
        raise
    except Exception as err:
        raise PluginError(appearance, err) from err
    return f, m


def region_features(ctx, masks, lms, loc, sal, appearance):
    """``(n_regions, n_int + n_obj)`` matrix of ``[V_Int; V_Obj]`` rows."""
    rows = []
    for m in masks:
        vi = interaction.interaction_features(m, lms, ctx.face_box, loc, sal).vector
        vo = regions.object_features(m, ctx.crop, appearance).vector
        rows.append(np.concatenate([vi, vo]))
    return np.array(rows).reshape(len(rows), -1)


def region_spans(appearance_length):
    n_int = sum(b - a for a, b in interaction.interaction_layout().values())
    n_obj = sum(b - a for a, b in regions.object_layout(appearance_length).values())
    return {"interaction": (0, n_int), "object": (n_int, n_int + n_obj)}


# ---------------------------------------------------------------------------
# bundle
# ---------------------------------------------------------------------------


@dataclass
class PipelineBundle:
    """Everything needed to classify an image.

    Plugins are not serialized; a loaded bundle uses the built-in baselines
    unless others are passed to :meth:`load`.
    """

    classes: list
    appearance_model: LinearModel
    region_model: LinearModel
    star_model: star_vote.StarModel
    corpus: landmarks.FaceCorpus
    config: TrainingConfig = field(default_factory=TrainingConfig)
    segmenter: object = None
    saliency: object = None
    appearance: object = None
    face_detector: object = None

    def __post_init__(self):
        self.classes = list(self.classes)
        if self.appearance_model.classes != self.classes or self.region_model.classes != self.classes:
            raise InvalidInputError("appearance and region models must share the bundle's class list")
        if self.segmenter is None:
            self.segmenter = regions.GraphSegmenter()
        if self.appearance is None:
            self.appearance = regions.PyramidAppearance()
        if self.saliency is None:
            self.saliency = interaction.center_prior_saliency

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "classes": self.classes,
            "appearance_model": self.appearance_model.to_dict(include_standardization=False),
            "region_model": self.region_model.to_dict(include_standardization=False),
            "star_model": self.star_model.to_dict(),
            "corpus": self.corpus.to_dict(),
            "standardization": {
                "appearance": _std_dict(self.appearance_model.standardizer),
                "region": _std_dict(self.region_model.standardizer),
            },
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc, **plugins):
        check_version(doc, "bundle")
        try:
            std = doc["standardization"]
            app = LinearModel.from_dict(doc["appearance_model"], _std_load(std["appearance"]))
            reg = LinearModel.from_dict(doc["region_model"], _std_load(std["region"]))
            return cls(doc["classes"], app, reg, star_vote.StarModel.from_dict(doc["star_model"]),
                       landmarks.FaceCorpus.from_dict(doc["corpus"]), TrainingConfig.from_dict(doc["config"]),
                       **plugins)
        except (KeyError, TypeError) as err:
            raise SchemaError(f"malformed bundle: {err}") from err

    def save(self, path):
        dump_json(path, self.to_dict())

    @classmethod
    def load(cls, path, **plugins):
        try:
            doc = load_json(path)
        except OSError as err:
            raise SchemaError(f"cannot read bundle {path}: {err}") from err
        except ValueError as err:
            raise SchemaError(f"bundle {path} is not valid JSON: {err}") from err
        return cls.from_dict(doc, **plugins)


def _std_dict(s):
    return None if s is None else s.to_dict()


def _std_load(d):
    return None if d is None else Standardizer.from_dict(d)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train_pipeline(dataset, cfg=TrainingConfig(), star_params=star_vote.StarParams(),
                   segmenter=None, saliency=None, appearance=None, progress=None):
    """Train every model of a :class:`PipelineBundle` from an annotated dataset.

    Ground-truth face boxes and landmarks drive training. Records without a
    face are skipped. Positive images without an object polygon are treated
    as occluded: they train the appearance model only.
    """
    classes = list(dataset.classes)
    segmenter = segmenter or regions.GraphSegmenter()
    appearance = appearance or regions.PyramidAppearance()
    saliency = saliency or interaction.center_prior_saliency
    items = []
    for rec in dataset.records:
        face = rec.face
        if face is None:
            log.warning("record %s has no face; skipped", rec.id)
            continue
        img = dataset.load_image(rec)
        score = face.score if face.score is not None else math.inf
        ctx = face_context(img, face.box, score)
        lms = face.landmarks.map(ctx.transform.to_crop)
        r_gt = None
        if face.object_polygon is not None:
            r_gt = polygon_mask(face.object_polygon, ctx.transform, ctx.crop.shape)
            if not r_gt.any():
                r_gt = None
        items.append((rec, img, face, score, ctx, lms, r_gt))
    if not items:
        raise TrainingError("no usable training records")

    corpus = landmarks.build_corpus(
        [landmarks.AnnotatedFace(img, face.box, score, face.landmarks) for _, img, face, score, _, _, _ in items],
        star_params=star_params)

    F, M = [], []
    for _, _, _, _, ctx, lms, _ in items:
        f, m = appearance_features(ctx.crop, lms, appearance)
        F.append(f)
        M.append(m)
    labels = [rec.label for rec, *_ in items]
    known = [l in classes for l in labels]
    app_model = train_appearance_model(F, M, labels, classes, cfg)
    if progress:
        progress("appearance model trained")

    grids = [star_vote.prepare_grid(ctx.crop, star_params.stride, star_params.patch) for *_, ctx, _, _ in items]
    star_idx = [i for i, it in enumerate(items)
                if it[6] is not None and center_in_crop(mask_centroid(it[6]), it[4].crop.shape)]
    if len(star_idx) < 2:
        raise TrainingError("need at least 2 images with an object polygon to train the location model")
    ocs = train_object_center_star([grids[i] for i in star_idx], [mask_centroid(items[i][6]) for i in star_idx],
                                   star_params)
    priors = {i: ocs.priors[k] for k, i in enumerate(star_idx)}
    if progress:
        progress("object-center model trained")

    X, Y = [], []
    for i, (rec, img, face, score, ctx, lms, r_gt) in enumerate(items):
        positive = known[i]
        if positive and r_gt is None:
            continue
        pool = regions.build_pool(ctx.crop, segmenter)
        lab = assign_region_labels(pool, r_gt, positive, cfg) if positive else None
        loc = priors.get(i) or star_vote.vote(ocs.model, grids[i])
        sal = interaction.saliency_prior(ctx.crop, saliency)
        masks = ([r_gt] if r_gt is not None else []) + list(pool.masks)
        feats = region_features(ctx, masks, lms, loc, sal, appearance)
        y = np.full((len(masks), len(classes)), NEGATIVE)
        if positive:
            k = classes.index(rec.label)
            own = np.zeros(len(masks), dtype=np.int64)
            # lab.index is -1 for r_gt, else the pool position
            own[lab.index + (1 if r_gt is not None else 0)] = lab.labels
            y[:, k] = own
        X.append(feats)
        Y.append(y)
        if progress:
            progress(f"region features {i + 1}/{len(items)}")
    reg_model = train_one_vs_all(np.vstack(X), np.vstack(Y), classes, region_spans(len(F[0])), cfg)
    return PipelineBundle(classes, app_model, reg_model, ocs.model, corpus, cfg,
                          segmenter, saliency, appearance)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


@dataclass
class ClassScore:
    score: float
    eta_f: float
    eta_m: float
    eta_int: float = 0.0
    eta_obj: float = 0.0
    region: int = None

    def to_dict(self):
        return {"score": self.score, "eta_f": self.eta_f, "eta_m": self.eta_m,
                "eta_int": self.eta_int, "eta_obj": self.eta_obj, "region": self.region}


@dataclass
class ClassificationResult:
    image_id: str
    classes: list
    scores: dict
    face: landmarks.FaceRecord = None
    non_class: bool = False
    flags: list = field(default_factory=list)
    pool_size: int = 0
    used_refined: np.ndarray = None
    image_shape: tuple = None
    regions: list = field(default_factory=list, repr=False)
    provenance: list = field(default_factory=list, repr=False)
    location_peak: tuple = None
    error: str = None

    def score(self, c):
        return self.scores[c].score

    def to_dict(self):
        d = {"image_id": self.image_id, "non_class": self.non_class, "flags": list(self.flags),
             "pool_size": self.pool_size,
             "scores": {c: s.to_dict() for c, s in self.scores.items()}}
        if self.face is not None:
            d["face"] = {"box": self.face.box.to_list(), "score": self.face.score,
                         "landmarks": self.face.landmarks.to_dict() if self.face.landmarks is not None else None}
        if self.error is not None:
            d["error"] = self.error
        return d


def combine_scores(eta_f, eta_m, region_term, gamma):
    """Class score from the appearance terms and the best region term."""
    return eta_f + eta_m + gamma * region_term


def _non_class(image_id, classes, face, flag, image_shape=None, error=None):
    scores = {c: ClassScore(-math.inf, -math.inf, -math.inf) for c in classes}
    return ClassificationResult(image_id, list(classes), scores, face, True, [flag],
                                image_shape=image_shape, error=error)


def _detect_face(bundle, image, person_box):
    if bundle.face_detector is None:
        raise PluginError(type(None), "no face detector configured and no face override given")
    try:
        dets = list(bundle.face_detector(image, person_box))
    except Exception as err:
        raise PluginError(bundle.face_detector, err) from err
    best = None
    for box, score in dets:
        cx, cy = box.center
        if person_box is not None and not (person_box.x0 <= cx < person_box.x1 and person_box.y0 <= cy < person_box.y1):
            continue
        if best is None or score > best[1]:
            best = (box, float(score))
    return best


def classify(bundle, image, person_box=None, face_override=None, image_id=None, gamma=None):
    """Per-class scores for one image.

    ``face_override`` (anything with ``box`` and ``score``) replaces the
    detector; a ``None`` score means an annotated face and always passes
    the ``s_min`` gate.
    """
    image = imaging.as_gray(image)
    cfg = bundle.config
    gamma = cfg.gamma if gamma is None else gamma
    if face_override is not None:
        box, score = face_override.box, face_override.score
    else:
        det = _detect_face(bundle, image, person_box)
        if det is None:
            return _non_class(image_id, bundle.classes, None, "no-face", image.shape)
        box, score = det
    if score is not None and score < cfg.s_min:
        return _non_class(image_id, bundle.classes, landmarks.FaceRecord(box, score), "face-below-s_min",
                          image.shape)

    ctx = face_context(image, box, score)
    det = landmarks.detect_landmarks(bundle.corpus, ctx.crop)
    lms = det.landmarks
    flags = list(det.flags)

    f, m = appearance_features(ctx.crop, lms, bundle.appearance)
    app = bundle.appearance_model.partial_scores(np.concatenate([f, m]))
    eta_f = app["face"] + bundle.appearance_model.b
    eta_m = app["mouth"]

    pool = regions.build_pool(ctx.crop, bundle.segmenter)
    loc = interaction.location_prior(bundle.star_model, ctx.crop)
    if loc.fallback:
        flags.append("location-prior-uniform")
    sal = interaction.saliency_prior(ctx.crop, bundle.saliency)
    if sal.fallback:
        flags.append("saliency-uniform")

    C = len(bundle.classes)
    if len(pool):
        feats = region_features(ctx, pool.masks, lms, loc, sal, bundle.appearance)
        parts = bundle.region_model.partial_scores(feats)
        e_int = parts["interaction"]
        e_obj = parts["object"] + bundle.region_model.b
        # argmax returns the first (lowest id) maximum
        best = np.argmax(e_int + e_obj, axis=0)
        b_int = e_int[best, np.arange(C)]
        b_obj = e_obj[best, np.arange(C)]
    else:
        flags.append("empty-pool")
        best = [None] * C
        b_int = np.zeros(C)
        b_obj = np.zeros(C)

    scores = {}
    for k, c in enumerate(bundle.classes):
        s = combine_scores(eta_f[k], eta_m[k], b_int[k] + b_obj[k], gamma)
        scores[c] = ClassScore(float(s), float(eta_f[k]), float(eta_m[k]), float(b_int[k]), float(b_obj[k]),
                               None if best[k] is None else int(best[k]))
    face = landmarks.FaceRecord(box, score, lms, ctx.transform)
    return ClassificationResult(image_id, list(bundle.classes), scores, face, False, flags, len(pool),
                                det.used_refined, image.shape, list(pool.masks), list(pool.provenance),
                                loc.argmax())


def classify_batch(bundle, dataset, use_annotated_faces=True, progress=None):
    """Classify every record; failures become flagged non-class results."""
    out = []
    for i, rec in enumerate(dataset.records):
        try:
            img = dataset.load_image(rec)
            face = rec.face if (use_annotated_faces or bundle.face_detector is None) else None
            if face is None and bundle.face_detector is None:
                out.append(_non_class(rec.id, bundle.classes, None, "no-face", img.shape))
            else:
                out.append(classify(bundle, img, rec.person_box, face, rec.id))
        except (FaceActionError, OSError) as err:
            log.warning("record %s failed: %s", rec.id, err)
            out.append(_non_class(rec.id, bundle.classes, None, "error", error=str(err)))
        if progress:
            progress(f"classified {i + 1}/{len(dataset.records)}")
    return out


# ---------------------------------------------------------------------------
# explanation
# ---------------------------------------------------------------------------


@dataclass
class Overlay:
    """Drawable explanation in source-image coordinates; ``empty`` when nothing is drawn."""

    class_name: str = None
    score: float = None
    region_mask: np.ndarray = None
    landmarks: np.ndarray = None
    face_box: imaging.Box = None
    location_peak: tuple = None

    @property
    def empty(self):
        return self.region_mask is None and self.landmarks is None and self.face_box is None

    def to_dict(self):
        d = {"class": self.class_name, "score": self.score}
        if self.face_box is not None:
            d["face_box"] = self.face_box.to_list()
        if self.landmarks is not None:
            d["landmarks"] = self.landmarks.tolist()
        if self.location_peak is not None:
            d["location_peak"] = list(self.location_peak)
        if self.region_mask is not None:
            x0, y0, x1, y1 = imaging.mask_bbox(self.region_mask)
            d["region_bbox"] = [x0, y0, x1 + 1, y1 + 1]
            d["region_area"] = int(np.count_nonzero(self.region_mask))
        return d


def crop_mask_to_source(mask, amap, shape):
    """Resample a crop-frame mask into the source frame (nearest crop pixel)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    (sx0, sy0), (sx1, sy1) = amap.to_source([[-0.5, -0.5], [w - 0.5, h - 0.5]])
    x0, x1 = max(0, int(math.floor(min(sx0, sx1)))), min(shape[1], int(math.ceil(max(sx0, sx1))) + 1)
    y0, y1 = max(0, int(math.floor(min(sy0, sy1)))), min(shape[0], int(math.ceil(max(sy0, sy1))) + 1)
    out = np.zeros(shape, dtype=bool)
    if x0 >= x1 or y0 >= y1:
        return out
    xs = np.arange(x0, x1)
    ys = np.arange(y0, y1)
    cx = np.rint((xs - amap.offset_x) / amap.scale_x).astype(np.int64)
    cy = np.rint((ys - amap.offset_y) / amap.scale_y).astype(np.int64)
    okx = (cx >= 0) & (cx < w)
    oky = (cy >= 0) & (cy < h)
    sub = mask[np.clip(cy, 0, h - 1)[:, None], np.clip(cx, 0, w - 1)[None, :]] & oky[:, None] & okx[None, :]
    out[y0:y1, x0:x1] = sub
    return out


def explain(result, c):
    """Overlay for class ``c``: best region, landmarks, face box and location peak."""
    if result.non_class or result.face is None:
        return Overlay(c)
    s = result.scores[c]
    amap = result.face.crop_transform
    region = None
    if s.region is not None:
        region = crop_mask_to_source(result.regions[s.region], amap, result.image_shape)
    peak = None
    if result.location_peak is not None:
        peak = tuple(float(v) for v in amap.to_source(np.array(result.location_peak, dtype=np.float64)))
    lm = amap.to_source(result.face.landmarks.points)
    return Overlay(c, s.score, region, lm, result.face.box, peak)


def best_class(result):
    if result.non_class:
        return None
    return max(result.classes, key=lambda c: result.scores[c].score)
