"""Exemplar star model: nearest-neighbor offset voting for a target location.

Training samples descriptor patches near a target point (weighted by local
gradient and distance to the target) and stores each RootSIFT-normalized
descriptor with the integer offset from the patch center to the target.
At test time every dense descriptor finds its nearest stored exemplar and
votes for ``center + offset`` with weight ``exp(-distance / sigma2)``.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from . import imaging
from .errors import EmptySampleError, InvalidInputError, SchemaError, TrainingError
from .serialize import FORMAT_VERSION, check_version, pack_array, unpack_array

log = logging.getLogger(__name__)

SIGMA1 = 10.0
SIGMA2 = 0.1
K_F = 100
STRIDE = 4
PATCH = 16
SMOOTH_SIGMA = 2.0


@dataclass(frozen=True)
class StarParams:
    sigma1: float = SIGMA1
    sigma2: float = SIGMA2
    k_f: int = K_F
    stride: int = STRIDE
    patch: int = PATCH
    smooth_sigma: float = SMOOTH_SIGMA
    approx_eps: float = 0.0
    seed: int = 0
    search: str = "auto"


def params_to_dict(p):
    return {"sigma1": p.sigma1, "sigma2": p.sigma2, "k_f": p.k_f, "stride": p.stride,
            "patch": p.patch, "smooth_sigma": p.smooth_sigma, "approx_eps": p.approx_eps,
            "seed": p.seed, "search": p.search}


def params_from_dict(doc):
    return StarParams(
        sigma1=float(doc["sigma1"]), sigma2=float(doc["sigma2"]), k_f=int(doc["k_f"]),
        stride=int(doc.get("stride", STRIDE)), patch=int(doc.get("patch", PATCH)),
        smooth_sigma=float(doc.get("smooth_sigma", SMOOTH_SIGMA)),
        approx_eps=float(doc.get("approx_eps", 0.0)), seed=int(doc.get("seed", 0)),
        search=str(doc.get("search", "auto")),
    )


@dataclass(frozen=True)
class DescriptorGrid:
    """Root-normalized dense descriptors of one image plus center gradients."""

    descriptors: np.ndarray
    centers: np.ndarray
    gradient: np.ndarray
    shape: tuple


def prepare_grid(img, stride=STRIDE, patch=PATCH):
    img = imaging.as_gray(img)
    dense = imaging.dense_descriptors(img, stride, patch)
    g = imaging.gradient_magnitude(img)
    grad = g[dense.centers[:, 1], dense.centers[:, 0]]
    desc = imaging.normalize_root(dense.values).astype(np.float32)
    return DescriptorGrid(desc, dense.centers, grad, img.shape)


@dataclass(frozen=True)
class Exemplars:
    descriptors: np.ndarray  # (n, 128) float32, root-normalized
    offsets: np.ndarray  # (n, 2) int, target - patch center


def sampling_weights(grid, target, sigma1=SIGMA1):
    """``w_u = G_u * exp(-||u - target|| / sigma1)`` for every grid center ``u``."""
    d = np.hypot(grid.centers[:, 0] - target[0], grid.centers[:, 1] - target[1])
    return grid.gradient * np.exp(-d / sigma1)


def sample_from_grid(grid, target, k_f=K_F, sigma1=SIGMA1, rng=None):
    """Weighted sampling without replacement via exponential race keys."""
    h, w = grid.shape
    tx, ty = target
    if not (0 <= tx <= w - 1 and 0 <= ty <= h - 1):
        raise InvalidInputError(f"target {target} outside {w}x{h} image")
    if k_f < 1 or k_f > len(grid.centers):
        raise InvalidInputError(f"k_f={k_f} must be in [1, {len(grid.centers)}]")
    rng = np.random.default_rng(rng)
    weights = sampling_weights(grid, target, sigma1)
    positive = weights > 0
    if not positive.any():
        raise EmptySampleError("all sampling weights are zero")
    keys = np.full(len(weights), np.inf)
    e = rng.exponential(size=len(weights))
    keys[positive] = e[positive] / weights[positive]
    k = min(k_f, int(positive.sum()))
    chosen = np.sort(np.argsort(keys, kind="stable")[:k])
    t = np.rint(np.asarray(target, dtype=np.float64)).astype(np.int64)
    offsets = t[None, :] - grid.centers[chosen]
    return Exemplars(grid.descriptors[chosen], offsets)


def sample_training_patches(img, target, k_f=K_F, sigma1=SIGMA1, rng_seed=0,
                            stride=STRIDE, patch=PATCH):
    grid = prepare_grid(img, stride, patch)
    return sample_from_grid(grid, target, k_f, sigma1, rng_seed)


class NearestNeighborIndex:
    """Nearest-neighbor search over descriptors returning ``(id, distance)`` pairs.

    ``method="kdtree"`` searches a kd-tree; ``eps>0`` then returns a
    neighbor within a factor ``1 + eps`` of the true nearest distance.
    ``method="brute"`` is an exact blocked scan using matrix products.
    ``"auto"`` picks the scan for exact queries in 32 or more dimensions,
    where kd-trees visit almost every leaf anyway, and the tree otherwise.
    Exact modes agree with a linear scan; ties resolve to the lowest id.
    """

    BLOCK = 256

    def __init__(self, data, eps=0.0, method="auto"):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or len(data) == 0:
            raise InvalidInputError("index needs a non-empty (n, d) array")
        if method not in ("auto", "kdtree", "brute"):
            raise InvalidInputError(f"unknown search method {method!r}")
        if method == "auto":
            method = "brute" if eps == 0 and data.shape[1] >= 32 else "kdtree"
        if method == "brute" and eps != 0:
            raise InvalidInputError("the brute-force scan is exact; use method='kdtree' with eps > 0")
        self.data = data
        self.eps = float(eps)
        self.method = method
        self._tree = cKDTree(data) if method == "kdtree" else None
        self._sq = np.einsum("ij,ij->i", data, data) if method == "brute" else None

    def __len__(self):
        return len(self.data)

    def query(self, points):
        """Nearest neighbor of each row of ``points``."""
        q = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if q.shape[1] != self.data.shape[1]:
            raise InvalidInputError(f"query dimension {q.shape[1]} != index dimension {self.data.shape[1]}")
        if self.method == "brute":
            return self._query_brute(q)
        return self._query_tree(q)

    def _query_brute(self, q):
        ids = np.empty(len(q), dtype=np.int64)
        best = np.empty(len(q))
        for a in range(0, len(q), self.BLOCK):
            blk = q[a:a + self.BLOCK]
            d2 = self._sq[None, :] - 2.0 * (blk @ self.data.T) + np.einsum("ij,ij->i", blk, blk)[:, None]
            lo = d2.min(axis=1)
            # expansion rounding is far below this slack; survivors are re-measured exactly
            slack = 1e-9 * (1.0 + np.abs(lo))
            near = d2 <= (lo + slack)[:, None]
            first = near.argmax(axis=1)
            ids[a:a + len(blk)] = first
            best[a:a + len(blk)] = np.linalg.norm(self.data[first] - blk, axis=1)
            for i in np.flatnonzero(near.sum(axis=1) > 1):
                cand = np.flatnonzero(near[i])
                dc = np.linalg.norm(self.data[cand] - blk[i], axis=1)
                m = dc.min()
                ids[a + i] = cand[dc == m].min()
                best[a + i] = m
        return ids, best

    def _query_tree(self, q):
        k = min(len(self.data), 4)
        _, idx = self._tree.query(q, k=k, eps=self.eps)
        idx = idx.reshape(len(q), k)
        # distances recomputed directly so ties compare exactly
        d = np.linalg.norm(self.data[idx] - q[:, None, :], axis=2)
        best = d.min(axis=1)
        tied = d == best[:, None]
        cand = np.where(tied, idx, np.iinfo(np.int64).max)
        ids = cand.min(axis=1)
        full = tied.all(axis=1) & (k < len(self.data))
        for i in np.nonzero(full)[0]:
            near = self._tree.query_ball_point(q[i], best[i] * (1 + 1e-12) + 1e-300)
            near = np.asarray(near, dtype=np.int64)
            dn = np.linalg.norm(self.data[near] - q[i], axis=1)
            ids[i] = near[dn == dn.min()].min()
            best[i] = dn.min()
        return ids, best


def nn_query(index, descriptor):
    ids, d = index.query(descriptor)
    return int(ids[0]), float(d[0])


@dataclass
class HeatMap:
    """Per-pixel mass summing to 1; ``fallback`` marks a uniform map used when no vote landed."""

    mass: np.ndarray
    fallback: bool = False

    def argmax(self):
        y, x = np.unravel_index(np.argmax(self.mass), self.mass.shape)
        return int(x), int(y)

    @classmethod
    def normalized(cls, values):
        v = np.asarray(values, dtype=np.float64)
        total = v.sum()
        if not np.isfinite(total) or total <= 0:
            return cls.uniform(v.shape)
        return cls(v / total)

    @classmethod
    def uniform(cls, shape):
        return cls(np.full(shape, 1.0 / (shape[0] * shape[1])), fallback=True)


class StarModel:
    """Trained exemplar set with its nearest-neighbor index.

    ``image_ids`` records which training image each exemplar came from so
    that leave-one-image-out models can be derived.
    """

    def __init__(self, descriptors, offsets, image_ids, params=StarParams()):
        self.descriptors = np.asarray(descriptors, dtype=np.float32).reshape(-1, imaging.DESCRIPTOR_SIZE)
        self.offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, 2)
        self.image_ids = np.asarray(image_ids, dtype=np.int64).reshape(-1)
        if not (len(self.descriptors) == len(self.offsets) == len(self.image_ids)):
            raise InvalidInputError("exemplar arrays differ in length")
        self.params = params
        self._index = None
        for a in (self.descriptors, self.offsets, self.image_ids):
            a.flags.writeable = False

    def __len__(self):
        return len(self.descriptors)

    @property
    def index(self):
        if self._index is None:
            self._index = NearestNeighborIndex(self.descriptors, self.params.approx_eps, self.params.search)
        return self._index

    def without_image(self, image_id):
        keep = self.image_ids != image_id
        return StarModel(self.descriptors[keep], self.offsets[keep], self.image_ids[keep], self.params)

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            **params_to_dict(self.params),
            "exemplars": [
                {"descriptor": pack_array(d), "dx": int(o[0]), "dy": int(o[1]), "image": int(i)}
                for d, o, i in zip(self.descriptors, self.offsets, self.image_ids)
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        check_version(doc, "star model")
        try:
            params = params_from_dict(doc)
            ex = doc["exemplars"]
            desc = np.array([unpack_array(e["descriptor"]) for e in ex], dtype=np.float32)
            offs = np.array([[e["dx"], e["dy"]] for e in ex], dtype=np.int64)
            ids = np.array([e.get("image", 0) for e in ex], dtype=np.int64)
        except (KeyError, TypeError, ValueError) as err:
            raise SchemaError(f"malformed star model: {err}") from err
        return cls(desc, offs, ids, params)


def train_star(samples, params=StarParams()):
    """Train a star model from ``(image_or_grid, target)`` pairs.

    Images whose sampling weights are all zero are skipped with a warning.
    Each image ``j`` samples with its own generator seeded by
    ``(params.seed, j)`` so removing an image leaves the others unchanged.
    """
    samples = list(samples)
    if not samples:
        raise TrainingError("need at least one training image")
    descs, offs, ids = [], [], []
    for j, (img, target) in enumerate(samples):
        grid = img if isinstance(img, DescriptorGrid) else prepare_grid(img, params.stride, params.patch)
        try:
            ex = sample_from_grid(grid, target, params.k_f, params.sigma1,
                                  np.random.default_rng([params.seed, j]))
        except EmptySampleError:
            log.warning("training image %d has no usable patches; skipped", j)
            continue
        descs.append(ex.descriptors)
        offs.append(ex.offsets)
        ids.append(np.full(len(ex.offsets), j))
    if not descs:
        raise TrainingError("no training image produced exemplars")
    return StarModel(np.concatenate(descs), np.concatenate(offs), np.concatenate(ids), params)


def vote_counts(model, img_or_grid):
    """Un-normalized, unsmoothed vote accumulation over the image grid."""
    if len(model) == 0:
        raise InvalidInputError("empty star model")
    p = model.params
    grid = img_or_grid if isinstance(img_or_grid, DescriptorGrid) else prepare_grid(img_or_grid, p.stride, p.patch)
    h, w = grid.shape
    acc = np.zeros((h, w))
    usable = np.any(grid.descriptors != 0, axis=1)
    if not usable.any():
        return acc
    q = grid.descriptors[usable].astype(np.float64)
    ids, dist = model.index.query(q)
    weights = np.exp(-dist / p.sigma2)
    pos = grid.centers[usable] + model.offsets[ids]
    inside = (pos[:, 0] >= 0) & (pos[:, 0] < w) & (pos[:, 1] >= 0) & (pos[:, 1] < h)
    np.add.at(acc, (pos[inside, 1], pos[inside, 0]), weights[inside])
    return acc


def vote(model, img_or_grid, smooth_sigma=None):
    """Heat map of the target location predicted by ``model`` on an image."""
    acc = vote_counts(model, img_or_grid)
    sigma = model.params.smooth_sigma if smooth_sigma is None else smooth_sigma
    if sigma > 0 and acc.any():
        acc = gaussian_filter(acc, sigma, mode="constant", truncate=4.0)
    return HeatMap.normalized(acc)
