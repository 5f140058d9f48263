"""Seven-point facial landmark detection by exemplar transfer.

A test face is matched to its K nearest corpus faces (L2 over block
gradient histograms of the normalized crop). Two hypotheses are formed per
landmark: a coarse one from the KDE mode of the neighbors' landmark
positions, and a refined one from a star model trained on the neighbors
for that landmark. The refined point is kept unless it strays more than
``t_l`` pixels from the coarse one.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import imaging
from . import star_vote
from .errors import InvalidInputError, SchemaError, TrainingError
from .serialize import FORMAT_VERSION, check_version, pack_array, unpack_array

log = logging.getLogger(__name__)

LANDMARK_NAMES = (
    "left_eye_center",
    "right_eye_center",
    "mouth_left_corner",
    "mouth_right_corner",
    "mouth_center",
    "nose_tip",
    "chin",
)
N_LANDMARKS = len(LANDMARK_NAMES)
MOUTH_CENTER = LANDMARK_NAMES.index("mouth_center")

MIN_SCORE = 2.45
MIN_CONTAINED = 0.8
K_NEIGHBORS = 20
KDE_BANDWIDTH = 20.0
T_L = 30.0
FACE_HOG_CELLS = 8
FACE_HOG_BINS = 9
MOUTH_SIZE = 32


@dataclass
class LandmarkSet:
    """Seven ``(x, y)`` points in the fixed :data:`LANDMARK_NAMES` order."""

    points: np.ndarray
    dont_care: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.points) != N_LANDMARKS:
            raise InvalidInputError(f"expected {N_LANDMARKS} landmarks, got {len(self.points)}")
        if self.dont_care is None:
            self.dont_care = np.zeros(N_LANDMARKS, dtype=bool)
        self.dont_care = np.asarray(self.dont_care, dtype=bool).reshape(N_LANDMARKS)

    def map(self, fn):
        return LandmarkSet(fn(self.points), self.dont_care.copy())

    def to_dict(self):
        return {name: {"x": float(p[0]), "y": float(p[1]), "dont_care": bool(dc)}
                for name, p, dc in zip(LANDMARK_NAMES, self.points, self.dont_care)}

    @classmethod
    def from_dict(cls, doc):
        if set(doc) != set(LANDMARK_NAMES):
            raise SchemaError(f"landmarks must be exactly {list(LANDMARK_NAMES)}, got {sorted(doc)}")
        pts = [[doc[n]["x"], doc[n]["y"]] for n in LANDMARK_NAMES]
        dc = [bool(doc[n].get("dont_care", False)) for n in LANDMARK_NAMES]
        return cls(pts, dc)


@dataclass
class FaceRecord:
    """A face: source-image box, detector score, landmarks in crop coordinates."""

    box: imaging.Box
    score: float
    landmarks: LandmarkSet = None
    crop_transform: imaging.AffineMap = None

    def __post_init__(self):
        if self.box.width <= 0 or self.box.height <= 0:
            raise InvalidInputError(f"degenerate face box {self.box}")


@dataclass
class AnnotatedFace:
    """Training face with landmarks in source-image coordinates."""

    image: np.ndarray
    box: imaging.Box
    score: float
    landmarks: LandmarkSet


def contained_fraction(box, landmarks):
    p = landmarks.points
    inside = (p[:, 0] >= box.x0) & (p[:, 0] < box.x1) & (p[:, 1] >= box.y0) & (p[:, 1] < box.y1)
    return inside.mean()


def face_descriptor(face_crop):
    return imaging.block_gradient_histogram(face_crop, FACE_HOG_CELLS, FACE_HOG_CELLS, FACE_HOG_BINS)


class FaceCorpus:
    """Normalized face crops with landmarks and a kd-tree over their descriptors."""

    def __init__(self, crops, landmarks, descriptors=None, star_params=star_vote.StarParams()):
        self.crops = np.asarray(crops, dtype=np.float64)
        self.landmarks = list(landmarks)
        if len(self.crops) == 0:
            raise TrainingError("face corpus is empty")
        if len(self.crops) != len(self.landmarks):
            raise InvalidInputError("crops and landmark sets differ in length")
        if descriptors is None:
            descriptors = np.array([face_descriptor(c) for c in self.crops])
        self.descriptors = np.asarray(descriptors, dtype=np.float64)
        self.star_params = star_params
        self._tree = cKDTree(self.descriptors)
        self._grids = {}

    def __len__(self):
        return len(self.crops)

    def grid(self, i):
        """Dense descriptor grid of entry ``i``, computed once and cached."""
        if i not in self._grids:
            p = self.star_params
            self._grids[i] = star_vote.prepare_grid(self.crops[i], p.stride, p.patch)
        return self._grids[i]

    def to_dict(self):
        n, h, w = self.crops.shape
        return {
            "version": FORMAT_VERSION,
            "landmark_names": list(LANDMARK_NAMES),
            "crop_size": [w, h],
            "star_params": star_vote.params_to_dict(self.star_params),
            "entries": [
                {"crop": pack_array(c), "descriptor": pack_array(d), "landmarks": l.to_dict()}
                for c, d, l in zip(self.crops, self.descriptors, self.landmarks)
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        check_version(doc, "face corpus")
        if list(doc.get("landmark_names", [])) != list(LANDMARK_NAMES):
            raise SchemaError("corpus landmark order does not match")
        try:
            w, h = doc["crop_size"]
            entries = doc["entries"]
            crops = [unpack_array(e["crop"], (h, w)).astype(np.float64) for e in entries]
            desc = [unpack_array(e["descriptor"]) for e in entries]
            lms = [LandmarkSet.from_dict(e["landmarks"]) for e in entries]
            params = star_vote.params_from_dict(doc["star_params"])
        except (KeyError, TypeError, ValueError) as err:
            raise SchemaError(f"malformed face corpus: {err}") from err
        return cls(crops, lms, np.array(desc, dtype=np.float64), params)


def build_corpus(faces, min_score=MIN_SCORE, min_contained=MIN_CONTAINED,
                 star_params=star_vote.StarParams()):
    """Filter, crop and index annotated faces.

    Faces scoring below ``min_score`` or with no more than ``min_contained``
    of their landmarks inside the box are dropped.
    """
    crops, lms = [], []
    for face in faces:
        if face.score < min_score:
            continue
        if contained_fraction(face.box, face.landmarks) <= min_contained:
            continue
        crop, amap = imaging.normalized_face_crop(face.image, face.box)
        crops.append(crop)
        lms.append(face.landmarks.map(amap.to_crop))
    if not crops:
        raise TrainingError("no face passed corpus filtering")
    return FaceCorpus(crops, lms, star_params=star_params)


@dataclass(frozen=True)
class Neighbor:
    index: int
    distance: float
    landmarks: LandmarkSet


def knn_faces(corpus, face_crop, k=K_NEIGHBORS):
    """Exact k nearest corpus faces, ascending distance, ties by corpus id."""
    q = face_descriptor(face_crop)
    n = len(corpus)
    if k > n:
        log.warning("corpus has %d faces, fewer than k=%d", n, k)
        k = n
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    dk, _ = corpus._tree.query(q, k=k)
    radius = float(np.atleast_1d(dk)[-1])
    cand = np.asarray(corpus._tree.query_ball_point(q, radius * (1 + 1e-9) + 1e-12), dtype=np.int64)
    d = np.linalg.norm(corpus.descriptors[cand] - q, axis=1)
    order = np.lexsort((cand, d))[:k]
    return [Neighbor(int(cand[i]), float(d[i]), corpus.landmarks[cand[i]]) for i in order]


def kde_mode(candidates, bandwidth=KDE_BANDWIDTH):
    """Candidate with the highest Gaussian KDE density among the candidates.

    Candidates are put in lexicographic order first so the result does not
    depend on input order.
    """
    c = np.asarray(candidates, dtype=np.float64).reshape(-1, 2)
    order = np.lexsort((c[:, 1], c[:, 0]))
    c = c[order]
    d2 = np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=2)
    density = np.exp(-d2 / (2 * bandwidth ** 2)).sum(axis=1)
    return c[int(np.argmax(density))]


def coarse_landmarks(neighbors, bandwidth=KDE_BANDWIDTH):
    """Per-landmark KDE mode over the neighbors' landmark positions.

    Returns the landmark set and a boolean array marking landmarks that were
    copied from the nearest neighbor because every neighbor had them
    flagged don't-care.
    """
    if not neighbors:
        raise InvalidInputError("need at least one neighbor")
    pts = np.zeros((N_LANDMARKS, 2))
    copied = np.zeros(N_LANDMARKS, dtype=bool)
    for i in range(N_LANDMARKS):
        cands = [nb.landmarks.points[i] for nb in neighbors if not nb.landmarks.dont_care[i]]
        if cands:
            pts[i] = kde_mode(cands, bandwidth)
        else:
            nearest = min(neighbors, key=lambda nb: (nb.distance, nb.index))
            pts[i] = nearest.landmarks.points[i]
            copied[i] = True
    return LandmarkSet(pts), copied


def refine_landmarks(neighbors, face_crop, corpus, coarse=None, params=None):
    """Star-model hypothesis for each landmark, trained on the neighbors.

    Landmarks whose model cannot be trained, or whose vote map has no
    in-bounds vote, fall back to ``coarse`` (if given) and are flagged.
    """
    params = params or corpus.star_params
    test_grid = star_vote.prepare_grid(face_crop, params.stride, params.patch)
    h, w = test_grid.shape
    pts = np.zeros((N_LANDMARKS, 2))
    fallback = np.zeros(N_LANDMARKS, dtype=bool)
    for i in range(N_LANDMARKS):
        samples = []
        for nb in neighbors:
            p = nb.landmarks.points[i]
            if nb.landmarks.dont_care[i]:
                continue
            if not (0 <= p[0] <= w - 1 and 0 <= p[1] <= h - 1):
                continue
            samples.append((corpus.grid(nb.index), p))
        heat = None
        if samples:
            try:
                model = star_vote.train_star(samples, params)
                heat = star_vote.vote(model, test_grid)
            except TrainingError:
                heat = None
        if heat is None or heat.fallback:
            fallback[i] = True
            if coarse is not None:
                pts[i] = coarse.points[i]
            continue
        pts[i] = heat.argmax()
    return LandmarkSet(pts), fallback


def fuse_landmarks(coarse, refined, t_l=T_L):
    """Keep the refined point where it lies within ``t_l`` of the coarse one."""
    d = np.linalg.norm(refined.points - coarse.points, axis=1)
    use_refined = d <= t_l
    pts = np.where(use_refined[:, None], refined.points, coarse.points)
    return LandmarkSet(pts, coarse.dont_care.copy()), use_refined


@dataclass
class LandmarkDetection:
    landmarks: LandmarkSet
    coarse: LandmarkSet
    refined: LandmarkSet
    used_refined: np.ndarray
    flags: list = field(default_factory=list)


def detect_landmarks(corpus, face_crop, k=K_NEIGHBORS, bandwidth=KDE_BANDWIDTH, t_l=T_L, params=None):
    face_crop = imaging.as_gray(face_crop)
    neighbors = knn_faces(corpus, face_crop, k)
    coarse, copied = coarse_landmarks(neighbors, bandwidth)
    refined, fallback = refine_landmarks(neighbors, face_crop, corpus, coarse, params)
    fused, used = fuse_landmarks(coarse, refined, t_l)
    # a fallen-back refinement is the coarse point itself
    used &= ~fallback
    flags = [f"coarse-copied:{LANDMARK_NAMES[i]}" for i in np.nonzero(copied)[0]]
    flags += [f"refine-fallback:{LANDMARK_NAMES[i]}" for i in np.nonzero(fallback)[0]]
    return LandmarkDetection(fused, coarse, refined, used, flags)


def mouth_crop(face_crop, landmarks, size=MOUTH_SIZE):
    """Square window of side ``height / 3`` centered on the mouth, resized to ``size``."""
    face_crop = imaging.as_gray(face_crop)
    side = max(1, int(round(face_crop.shape[0] / 3.0)))
    cx, cy = np.rint(landmarks.points[MOUTH_CENTER]).astype(int)
    x0 = cx - side // 2
    y0 = cy - side // 2
    window = imaging.crop_padded(face_crop, x0, y0, side, side)
    return imaging.resize_bilinear(window, size, size)
