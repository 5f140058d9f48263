"""Training: region labels, linear SVMs, standardization and the object-center star model."""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import star_vote
from .errors import InvalidInputError, SchemaError, TrainingError
from .regions import overlap_score
from .serialize import FORMAT_VERSION, check_version, pack_array, unpack_array

log = logging.getLogger(__name__)

POSITIVE = 1
F8 = "<f8"
NEGATIVE = -1


@dataclass(frozen=True)
class TrainingConfig:
    t_plus: float = 0.55
    t_minus: float = 0.3
    svm_c: float = 1.0
    seed: int = 0
    gamma: float = 0.1
    s_min: float = 0.0
    balance: bool = True
    tol: float = 1e-4
    max_epochs: int = 5000

    def __post_init__(self):
        if not 0.0 <= self.t_minus < self.t_plus <= 1.0:
            raise InvalidInputError(f"need 0 <= t_minus < t_plus <= 1, got {self.t_minus}, {self.t_plus}")
        if self.svm_c <= 0:
            raise InvalidInputError("svm_c must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = {k: doc[k] for k in cls.__dataclass_fields__ if k in doc}
        unknown = set(doc) - set(known)
        if unknown:
            raise SchemaError(f"unknown config keys {sorted(unknown)}")
        return cls(**known)


# ---------------------------------------------------------------------------
# region labels
# ---------------------------------------------------------------------------


@dataclass
class LabeledRegions:
    """Labels over ``[r_gt] + pool`` (r_gt first when present); ``index`` is -1 for r_gt."""

    masks: list
    labels: np.ndarray
    index: np.ndarray
    overlaps: np.ndarray


def assign_region_labels(pool, r_gt, image_is_positive, cfg=TrainingConfig(), occluded=False):
    masks = list(getattr(pool, "masks", pool))
    if image_is_positive and r_gt is None and not occluded:
        raise TrainingError("positive image has no ground-truth object region and is not marked occluded")
    if r_gt is not None:
        ovp = np.array([overlap_score(m, r_gt) for m in masks])
    else:
        ovp = np.zeros(len(masks))
    if not image_is_positive:
        labels = np.full(len(masks), NEGATIVE)
    elif r_gt is None:
        # occluded object: the whole pool is R-
        labels = np.full(len(masks), NEGATIVE)
    else:
        labels = np.zeros(len(masks), dtype=np.int64)
        labels[ovp >= cfg.t_plus] = POSITIVE
        labels[ovp <= cfg.t_minus] = NEGATIVE
    index = np.arange(len(masks))
    if r_gt is not None:
        masks = [np.asarray(r_gt, dtype=bool)] + masks
        labels = np.concatenate([[POSITIVE if image_is_positive else NEGATIVE], labels])
        index = np.concatenate([[-1], index])
        ovp = np.concatenate([[1.0], ovp])
    keep = labels != 0
    return LabeledRegions([m for m, k in zip(masks, keep) if k], labels[keep].astype(np.int64),
                          index[keep], ovp[keep])


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------


class StandardizedArray(np.ndarray):
    """Marker type for features that already went through a :class:`Standardizer`."""


class Standardizer:
    """Per-coordinate z-scoring fit on training features."""

    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        if self.mean.shape != self.scale.shape or np.any(self.scale <= 0):
            raise InvalidInputError("standardizer needs matching mean/scale with positive scale")

    @classmethod
    def fit(cls, X):
        if isinstance(X, StandardizedArray):
            raise InvalidInputError("features are already standardized")
        X = np.asarray(X, dtype=np.float64)
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 1e-12, sd, 1.0))

    def __len__(self):
        return len(self.mean)

    def apply(self, X):
        if isinstance(X, StandardizedArray):
            raise InvalidInputError("features are already standardized")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != len(self.mean):
            raise InvalidInputError(f"feature length {X.shape[-1]} != standardizer length {len(self.mean)}")
        return ((X - self.mean) / self.scale).view(StandardizedArray)

    def to_dict(self):
        return {"mean": pack_array(self.mean, F8), "scale": pack_array(self.scale, F8)}

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(unpack_array(doc["mean"], dtype=F8), unpack_array(doc["scale"], dtype=F8))
        except (KeyError, TypeError, ValueError) as err:
            raise SchemaError(f"malformed standardization: {err}") from err


# ---------------------------------------------------------------------------
# linear SVM
# ---------------------------------------------------------------------------


@dataclass
class SvmResult:
    w: np.ndarray
    b: float
    objective: list = field(default_factory=list)
    gap: float = np.inf
    epochs: int = 0
    converged: bool = False


def train_linear_svm(X, y, c=1.0, seed=0, balance=True, tol=1e-4, max_epochs=5000, sample_weight=None):
    """L2-regularized hinge-loss SVM by dual coordinate descent.

    Minimizes ``0.5 * |(w, b)|^2 + sum_i C_i * hinge(y_i (w.x_i + b))`` with
    ``C_i = c / n`` (times ``#neg / #pos`` for positives when ``balance``).
    The bias is learned as the weight of a constant feature. Iterates until
    the relative duality gap drops to ``tol``. ``objective`` records the dual
    objective (minimization form) after each epoch; it never increases.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise InvalidInputError("X must be (n, d) with one label per row")
    y = np.where(y > 0, 1.0, -1.0)
    n_pos = int(np.count_nonzero(y > 0))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("SVM training needs both positive and negative samples")
    n = len(y)
    upper = np.full(n, c / n)
    if balance:
        upper[y > 0] *= n_neg / n_pos
    if sample_weight is not None:
        upper = upper * np.asarray(sample_weight, dtype=np.float64)
    Xa = np.hstack([X, np.ones((n, 1))])
    Xy = Xa * y[:, None]
    qii = np.einsum("ij,ij->i", Xa, Xa)
    alpha = np.zeros(n)
    w = np.zeros(Xa.shape[1])
    rng = np.random.default_rng(seed)
    res = SvmResult(w[:-1], 0.0)
    for epoch in range(1, max_epochs + 1):
        for i in rng.permutation(n):
            if qii[i] == 0:
                continue
            g = Xy[i] @ w - 1.0
            a = alpha[i]
            if (a == 0 and g >= 0) or (a == upper[i] and g <= 0):
                continue
            a_new = min(max(a - g / qii[i], 0.0), upper[i])
            if a_new != a:
                w += (a_new - a) * Xy[i]
                alpha[i] = a_new
        ww = w @ w
        dual = alpha.sum() - 0.5 * ww
        primal = 0.5 * ww + upper @ np.maximum(0.0, 1.0 - Xy @ w)
        res.objective.append(-dual)
        res.gap = (primal - dual) / max(abs(primal), 1e-12)
        res.epochs = epoch
        if res.gap <= tol:
            res.converged = True
            break
    if not res.converged:
        log.warning("SVM stopped after %d epochs with relative gap %.2e", res.epochs, res.gap)
    res.w = w[:-1].copy()
    res.b = float(w[-1])
    return res


# ---------------------------------------------------------------------------
# linear models
# ---------------------------------------------------------------------------


def _check_spans(spans, dim):
    pos = 0
    for name, (a, b) in spans.items():
        if a != pos or b < a:
            raise InvalidInputError(f"span {name!r} does not continue the partition at {pos}")
        pos = b
    if pos != dim:
        raise InvalidInputError(f"spans cover {pos} coordinates, weights have {dim}")


class LinearModel:
    """One-vs-all linear scorer: ``W[c] . standardize(x) + b[c]`` with named coordinate spans."""

    def __init__(self, classes, W, b, spans, standardizer=None):
        self.classes = list(classes)
        self.W = np.asarray(W, dtype=np.float64).reshape(len(self.classes), -1)
        self.b = np.asarray(b, dtype=np.float64).reshape(len(self.classes))
        self.spans = {k: (int(v[0]), int(v[1])) for k, v in spans.items()}
        _check_spans(self.spans, self.W.shape[1])
        if standardizer is not None and len(standardizer) != self.W.shape[1]:
            raise InvalidInputError("standardizer length differs from weight length")
        self.standardizer = standardizer

    @property
    def dim(self):
        return self.W.shape[1]

    def class_index(self, c):
        if isinstance(c, (int, np.integer)):
            return int(c)
        try:
            return self.classes.index(c)
        except ValueError:
            raise InvalidInputError(f"unknown class {c!r}") from None

    def prepare(self, X):
        """Standardize raw features (no-op without a standardizer)."""
        if self.standardizer is None:
            return np.asarray(X, dtype=np.float64)
        return self.standardizer.apply(X)

    def decision(self, X):
        Z = np.asarray(self.prepare(X))
        return Z @ self.W.T + self.b

    def partial_scores(self, X):
        """Per-span dot products, ``{span: (..., C)}``, without the bias."""
        Z = np.asarray(self.prepare(X))
        return {name: Z[..., a:b] @ self.W[:, a:b].T for name, (a, b) in self.spans.items()}

    def to_dict(self, include_standardization=True):
        d = {"version": FORMAT_VERSION, "classes": self.classes,
             "weights": [pack_array(w, F8) for w in self.W], "bias": self.b.tolist(),
             "spans": {k: list(v) for k, v in self.spans.items()}}
        if include_standardization and self.standardizer is not None:
            d["standardization"] = self.standardizer.to_dict()
        return d

    @classmethod
    def from_dict(cls, doc, standardizer=None):
        check_version(doc, "linear model")
        try:
            W = np.array([unpack_array(w, dtype=F8) for w in doc["weights"]])
            if "standardization" in doc:
                standardizer = Standardizer.from_dict(doc["standardization"])
            return cls(doc["classes"], W, doc["bias"], doc["spans"], standardizer)
        except (KeyError, TypeError) as err:
            raise SchemaError(f"malformed linear model: {err}") from err


def split_scores(model, c, first, second):
    """``(eta_1, eta_2, eta_1 + eta_2 + bias)`` for the model's two spans.

    ``first`` and ``second`` are raw feature blocks in span order; the
    standardizer, when present, is applied to their concatenation.
    """
    if len(model.spans) != 2:
        raise InvalidInputError("split_scores needs a two-span model")
    (n1, (a1, b1)), (n2, (a2, b2)) = model.spans.items()
    first = np.asarray(first, dtype=np.float64).ravel()
    second = np.asarray(second, dtype=np.float64).ravel()
    if len(first) != b1 - a1 or len(second) != b2 - a2:
        raise InvalidInputError(f"feature blocks of length {len(first)}, {len(second)} do not match "
                                f"spans {n1}={b1 - a1}, {n2}={b2 - a2}")
    k = model.class_index(c)
    parts = model.partial_scores(np.concatenate([first, second]))
    e1 = float(parts[n1][k])
    e2 = float(parts[n2][k])
    return e1, e2, e1 + e2 + float(model.b[k])


def train_one_vs_all(X, labels, classes, spans, cfg=TrainingConfig(), standardize=True, sample_weight=None):
    """Train one model per class; ``labels`` is ``(n, C)`` with +1/-1 entries.

    A 0 entry leaves that sample out of that class's problem. A class with
    no positive (or no negative) sample is an error.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels).reshape(len(X), len(classes))
    std = Standardizer.fit(X) if standardize else None
    Z = np.asarray(std.apply(X)) if std is not None else X
    sw = None if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    W, b = [], []
    for k, c in enumerate(classes):
        use = labels[:, k] != 0
        try:
            res = train_linear_svm(Z[use], labels[use, k], cfg.svm_c, cfg.seed, cfg.balance, cfg.tol,
                                   cfg.max_epochs, None if sw is None else sw[use])
        except TrainingError as err:
            raise TrainingError(f"class {c!r}: {err}") from err
        W.append(res.w)
        b.append(res.b)
    return LinearModel(classes, W, b, spans, std)


def train_appearance_model(face_features, mouth_features, labels, classes, cfg=TrainingConfig()):
    """One-vs-all model over ``[face; mouth]`` appearance features.

    ``labels`` are class names (or indices) per sample; names outside
    ``classes`` are negatives for every class.
    """
    F = np.asarray(face_features, dtype=np.float64)
    M = np.asarray(mouth_features, dtype=np.float64)
    if len(F) != len(M) or len(F) != len(labels):
        raise InvalidInputError("face, mouth and label counts differ")
    classes = list(classes)
    y = _one_vs_all_labels(labels, classes)
    spans = {"face": (0, F.shape[1]), "mouth": (F.shape[1], F.shape[1] + M.shape[1])}
    return train_one_vs_all(np.hstack([F, M]), y, classes, spans, cfg)


def _one_vs_all_labels(labels, classes):
    """+1 for a sample's own class, -1 elsewhere; labels outside ``classes`` are negative everywhere."""
    classes = list(classes)
    idx = np.array([l if isinstance(l, (int, np.integer)) else (classes.index(l) if l in classes else -1)
                    for l in labels])
    return np.where(idx[:, None] == np.arange(len(classes))[None, :], POSITIVE, NEGATIVE)


# ---------------------------------------------------------------------------
# object-center star model
# ---------------------------------------------------------------------------


def mask_centroid(mask):
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if len(xs) == 0:
        raise InvalidInputError("empty mask has no centroid")
    return float(xs.mean()), float(ys.mean())


@dataclass
class ObjectCenterStar:
    model: star_vote.StarModel
    priors: list


def train_object_center_star(faces, centers, params=star_vote.StarParams()):
    """Joint star model over all object centers, plus leave-one-image-out priors.

    ``faces`` are face crops (or prepared descriptor grids); ``centers`` the
    matching object centers in crop coordinates. ``priors[j]`` is the heat
    map for face ``j`` voted without its own exemplars.
    """
    faces = list(faces)
    centers = list(centers)
    if len(faces) != len(centers):
        raise InvalidInputError("faces and centers differ in length")
    if len(faces) < 2:
        raise TrainingError("leave-one-image-out priors need at least 2 training images")
    grids = [f if isinstance(f, star_vote.DescriptorGrid) else star_vote.prepare_grid(f, params.stride, params.patch)
             for f in faces]
    rounded = [(int(round(x)), int(round(y))) for x, y in centers]
    model = star_vote.train_star(zip(grids, rounded), params)
    priors = []
    for j, g in enumerate(grids):
        loo = model.without_image(j)
        if len(loo) == 0:
            priors.append(star_vote.HeatMap.uniform(g.shape))
        else:
            priors.append(star_vote.vote(loo, g))
    return ObjectCenterStar(model, priors)


def center_in_crop(center, shape):
    x, y = int(round(center[0])), int(round(center[1]))
    return 0 <= x < shape[1] and 0 <= y < shape[0]

