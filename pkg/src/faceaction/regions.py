"""Candidate action-object regions and their object features.

The pool combines segments from a pluggable segmenter with quadrangles
spanned by pairs of nearly parallel line segments (thin elongated objects
such as straws and cigarettes are often missed by segmentation). Regions
are filtered by area and described by an occupancy grid, a shape histogram
of the mask, moment-ellipse statistics and an appearance vector.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.segmentation import felzenszwalb

from . import imaging
from .errors import InvalidInputError, PluginError, SchemaError
from .serialize import FORMAT_VERSION, check_version, dump_json, load_json, pack_array, unpack_array

MIN_AREA = 30
MAX_AREA_FRACTION = 0.5
OCCUPANCY_CELLS = 7
SHAPE_SIZE = 64
SHAPE_CELLS = 8
HOG_BINS = 9

SEGMENT_SCALES = (40.0, 120.0, 360.0)


# ---------------------------------------------------------------------------
# segmentation proposals
# ---------------------------------------------------------------------------


class GraphSegmenter:
    """Greedy graph-merge segmentation at several granularities.

    Returns the union of segments over all scales, with exact duplicates
    removed.
    """

    def __init__(self, scales=SEGMENT_SCALES, sigma=0.2, min_size=8):
        self.scales = tuple(scales)
        self.sigma = sigma
        self.min_size = min_size

    def __call__(self, img):
        labels = [felzenszwalb(img, scale=s, sigma=self.sigma, min_size=self.min_size)
                  for s in self.scales]
        return [m for lab in labels for m in masks_from_labels(lab)]


def masks_from_labels(labels):
    labels = np.asarray(labels)
    return [labels == v for v in np.unique(labels)]


def unique_masks(masks):
    seen = set()
    out = []
    for m in masks:
        key = np.packbits(m).tobytes()
        if key not in seen:
            seen.add(key)
            out.append(m)
    return out


def propose_segments(face_crop, segmenter=None):
    """Segments of the crop as boolean masks.

    ``segmenter`` is any callable mapping an image to a label image or a
    list of masks; the default is :class:`GraphSegmenter`.
    """
    face_crop = imaging.as_gray(face_crop)
    segmenter = segmenter or GraphSegmenter()
    try:
        out = segmenter(face_crop)
    except Exception as err:
        raise PluginError(segmenter, err) from err
    if isinstance(out, np.ndarray) and out.ndim == 2 and out.dtype != bool:
        masks = masks_from_labels(out)
    else:
        masks = [np.asarray(m, dtype=bool) for m in out]
    for m in masks:
        if m.shape != face_crop.shape:
            raise PluginError(segmenter, f"mask shape {m.shape} != image shape {face_crop.shape}")
    return unique_masks(masks)


# ---------------------------------------------------------------------------
# parallel line segments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LineSegment:
    p0: np.ndarray
    p1: np.ndarray
    n_pixels: int

    @property
    def direction(self):
        d = self.p1 - self.p0
        return d / np.linalg.norm(d)

    @property
    def length(self):
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def midpoint(self):
        return (self.p0 + self.p1) / 2.0


def _fit_segment(xs, ys):
    pts = np.stack([xs, ys], axis=1).astype(np.float64)
    c = pts.mean(axis=0)
    cov = np.cov((pts - c).T, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    d = evecs[:, 1]
    if d[0] < 0 or (d[0] == 0 and d[1] < 0):
        d = -d
    t = (pts - c) @ d
    resid = np.sqrt(max(evals[0], 0.0))
    return LineSegment(c + t.min() * d, c + t.max() * d, len(pts)), resid


def _edge_map(img, smooth, threshold):
    g = ndimage.gaussian_filter(img, smooth)
    gy, gx = np.gradient(g)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    # non-maximum suppression along the quantized gradient direction
    q = np.rint(theta / (np.pi / 4)).astype(int) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    pad = np.pad(mag, 1)
    h, w = mag.shape
    keep = mag > threshold
    nms = np.zeros_like(keep)
    for k, (dy, dx) in offsets.items():
        fwd = pad[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        bwd = pad[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        nms |= (q == k) & (mag >= fwd) & (mag >= bwd)
    return keep & nms, theta


def detect_line_segments(img, min_length=8.0, max_residual=1.0, smooth=0.8, threshold=0.03):
    """Straight segments from edge pixels linked by adjacency and orientation.

    Edge pixels (non-maximum-suppressed gradient magnitude) are grouped into
    8-connected components of similar gradient orientation, using two
    interleaved sets of 22.5-degree orientation bins. Each component is fit
    by total least squares; elongated, thin fits are kept.
    """
    img = imaging.as_gray(img)
    edges, theta = _edge_map(img, smooth, threshold)
    n_bins = 8
    width = np.pi / n_bins
    comps = []
    for shift in (0.0, 0.5):
        b = np.floor(np.mod(theta / width + shift, n_bins)).astype(int)
        for k in range(n_bins):
            lab, n = ndimage.label(edges & (b == k), structure=np.ones((3, 3)))
            if n == 0:
                continue
            for sl_i, sl in enumerate(ndimage.find_objects(lab), start=1):
                ys, xs = np.nonzero(lab[sl] == sl_i)
                if len(xs) >= min_length:
                    comps.append((xs + sl[1].start, ys + sl[0].start))
    comps.sort(key=lambda c: (-len(c[0]), int(c[1].min()), int(c[0].min())))
    claimed = np.zeros(img.shape, dtype=bool)
    segments = []
    for xs, ys in comps:
        if claimed[ys, xs].mean() >= 0.5:
            continue
        seg, resid = _fit_segment(xs, ys)
        if seg.length + 1 < min_length or resid > max_residual:
            continue
        # the fitted line must run across the gradient, i.e. along the edge
        normal = np.array([np.cos(theta[ys, xs]).mean(), np.sin(theta[ys, xs]).mean()])
        if abs(np.dot(seg.direction, normal / (np.linalg.norm(normal) + 1e-12))) > np.sin(np.radians(30)):
            continue
        claimed[ys, xs] = True
        segments.append(seg)
    return _merge_flanks(segments)


def _angle_between(a, b):
    c = abs(float(np.dot(a.direction, b.direction)))
    return np.degrees(np.arccos(min(1.0, c)))


def _gap(a, b):
    n = np.array([-a.direction[1], a.direction[0]])
    return abs(float(np.dot(b.midpoint - a.midpoint, n)))


def _overlap_fraction(a, b):
    d = a.direction
    ta = sorted([0.0, float(np.dot(a.p1 - a.p0, d))])
    tb = sorted([float(np.dot(b.p0 - a.p0, d)), float(np.dot(b.p1 - a.p0, d))])
    inter = min(ta[1], tb[1]) - max(ta[0], tb[0])
    shorter = min(a.length, b.length)
    return max(inter, 0.0) / shorter if shorter > 0 else 0.0


def _merge_flanks(segments, max_gap=2.5, max_angle=5.0):
    """Merge the two edge flanks of a thin line into one center segment."""
    segments = list(segments)
    merged = True
    while merged:
        merged = False
        for i in range(len(segments)):
            for j in range(i + 1, len(segments)):
                a, b = segments[i], segments[j]
                if (_angle_between(a, b) <= max_angle and _gap(a, b) < max_gap
                        and _overlap_fraction(a, b) >= 0.5):
                    if np.dot(a.direction, b.direction) < 0:
                        b = LineSegment(b.p1, b.p0, b.n_pixels)
                    seg = LineSegment((a.p0 + b.p0) / 2, (a.p1 + b.p1) / 2, a.n_pixels + b.n_pixels)
                    segments[i] = seg
                    del segments[j]
                    merged = True
                    break
            if merged:
                break
    return segments


def parallel_pairs(segments, max_angle=5.0, gap_range=(2.0, 24.0), min_overlap=0.5):
    pairs = []
    for i in range(len(segments)):
        for j in range(i + 1, len(segments)):
            a, b = segments[i], segments[j]
            if _angle_between(a, b) > max_angle:
                continue
            gap = 0.5 * (_gap(a, b) + _gap(b, a))
            if not gap_range[0] <= gap <= gap_range[1]:
                continue
            if _overlap_fraction(a, b) < min_overlap:
                continue
            pairs.append((a, b))
    return pairs


def propose_parallel_quads(face_crop, max_angle=5.0, gap_range=(2.0, 24.0), min_overlap=0.5,
                           min_length=8.0):
    """Filled quadrangles spanned by pairs of nearly parallel line segments."""
    face_crop = imaging.as_gray(face_crop)
    segments = detect_line_segments(face_crop, min_length=min_length)
    masks = []
    for a, b in parallel_pairs(segments, max_angle, gap_range, min_overlap):
        b0, b1 = (b.p0, b.p1) if np.dot(a.direction, b.direction) >= 0 else (b.p1, b.p0)
        quad = np.array([a.p0, a.p1, b1, b0])
        m = imaging.rasterize_polygon(quad, face_crop.shape)
        if m.any():
            masks.append(m)
    return unique_masks(masks)


# ---------------------------------------------------------------------------
# pool
# ---------------------------------------------------------------------------


@dataclass
class RegionPool:
    """Filtered candidate regions with their origin (segmentation, parallel-contour, ground-truth)."""

    masks: list = field(default_factory=list)
    provenance: list = field(default_factory=list)

    def __len__(self):
        return len(self.masks)

    def add(self, mask, origin):
        self.masks.append(mask)
        self.provenance.append(origin)


def filter_pool(regions, crop_area, provenance=None, min_area=MIN_AREA, max_fraction=MAX_AREA_FRACTION):
    """Keep regions with ``min_area <= area <= max_fraction * crop_area``."""
    if isinstance(regions, RegionPool):
        provenance = regions.provenance
        regions = regions.masks
    if provenance is None:
        provenance = ["segmentation"] * len(regions)
    pool = RegionPool()
    for m, p in zip(regions, provenance):
        a = int(np.count_nonzero(m))
        if min_area <= a <= max_fraction * crop_area:
            pool.add(m, p)
    return pool


def build_pool(face_crop, segmenter=None, parallel=True):
    segs = propose_segments(face_crop, segmenter)
    prov = ["segmentation"] * len(segs)
    if parallel:
        quads = propose_parallel_quads(face_crop)
        segs = segs + quads
        prov = prov + ["parallel-contour"] * len(quads)
    keys = set()
    masks, origins = [], []
    for m, p in zip(segs, prov):
        k = np.packbits(m).tobytes()
        if k not in keys:
            keys.add(k)
            masks.append(m)
            origins.append(p)
    return filter_pool(masks, face_crop.size, origins)


def overlap_score(a, b):
    """Intersection over union of two masks; two empty masks score 0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise InvalidInputError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


# ---------------------------------------------------------------------------
# object features
# ---------------------------------------------------------------------------


def _area_weights(n_in, n_out):
    """(n_out, n_in) matrix averaging input pixels into ``n_out`` equal bins."""
    edges = np.linspace(0, n_in, n_out + 1)
    lo = np.arange(n_in)
    hi = lo + 1
    overlap = np.clip(np.minimum(hi[None, :], edges[1:, None]) - np.maximum(lo[None, :], edges[:-1, None]), 0, None)
    return overlap / (n_in / n_out)


def occupancy(mask, cells=OCCUPANCY_CELLS):
    """Area-averaged ``cells x cells`` occupancy of a mask, values in [0, 1]."""
    m = np.asarray(mask, dtype=np.float64)
    h, w = m.shape
    return _area_weights(h, cells) @ m @ _area_weights(w, cells).T


def shape_histogram(mask, size=SHAPE_SIZE, cells=SHAPE_CELLS, bins=HOG_BINS):
    x0, y0, x1, y1 = imaging.mask_bbox(mask)
    sub = np.asarray(mask[y0:y1 + 1, x0:x1 + 1], dtype=np.float64)
    return imaging.block_gradient_histogram(imaging.resize_bilinear(sub, size, size), cells, cells, bins)


class PyramidAppearance:
    """Baseline appearance descriptor.

    The input is resized to ``size x size``; block gradient histograms at
    1x1, 2x2 and 4x4 cells are concatenated with a normalized intensity
    histogram.
    """

    def __init__(self, size=48, levels=(1, 2, 4), bins=HOG_BINS, intensity_bins=16):
        self.size = size
        self.levels = tuple(levels)
        self.bins = bins
        self.intensity_bins = intensity_bins
        self.dim = sum(l * l for l in self.levels) * bins + intensity_bins

    def __call__(self, img):
        img = np.asarray(img, dtype=np.float64)
        if img.size == 0:
            raise InvalidInputError("empty appearance window")
        g = imaging.resize_bilinear(img, self.size, self.size)
        votes = imaging.orientation_votes(g, self.bins)
        parts = [imaging.block_normalize(imaging.cell_histograms(votes, g.shape, l, l, self.bins)).ravel()
                 for l in self.levels]
        hist, _ = np.histogram(g, bins=self.intensity_bins, range=(0.0, 1.0))
        parts.append(hist / g.size)
        return np.concatenate(parts)


def embedding_key(img):
    """Content key of an image window: SHA-1 of its shape and 8-bit pixels."""
    a = np.asarray(img, dtype=np.float64)
    q = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    h = hashlib.sha1(f"{a.shape[0]}x{a.shape[1]}:".encode())
    h.update(q.tobytes())
    return h.hexdigest()


class EmbeddingAppearance:
    """Appearance plugin backed by precomputed vectors (for example CNN features).

    Vectors are looked up by :func:`embedding_key` of the window; a window
    without an entry is an error.
    """

    def __init__(self, vectors):
        self.vectors = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in vectors.items()}
        dims = {len(v) for v in self.vectors.values()}
        if len(dims) != 1:
            raise InvalidInputError("embeddings must be non-empty and share one length")
        self.dim = dims.pop()

    def __call__(self, img):
        key = embedding_key(img)
        try:
            return self.vectors[key]
        except KeyError:
            raise InvalidInputError(f"no embedding for window {key}") from None

    def save(self, path):
        dump_json(path, {"version": FORMAT_VERSION, "dim": self.dim,
                         "vectors": {k: pack_array(v) for k, v in self.vectors.items()}})

    @classmethod
    def load(cls, path):
        doc = load_json(path)
        check_version(doc, "embedding file")
        try:
            return cls({k: unpack_array(v) for k, v in doc["vectors"].items()})
        except (KeyError, TypeError, ValueError, AttributeError) as err:
            raise SchemaError(f"malformed embedding file: {err}") from err


def appearance_dim(appearance):
    dim = getattr(appearance, "dim", None)
    if dim is None:
        dim = len(appearance(np.zeros((8, 8))))
    return int(dim)


@dataclass
class ObjectFeatures:
    vector: np.ndarray
    spans: dict

    def span(self, name):
        a, b = self.spans[name]
        return self.vector[a:b]


def object_layout(appearance_length):
    names = [("occupancy", OCCUPANCY_CELLS ** 2),
             ("shape_hog", SHAPE_CELLS * SHAPE_CELLS * HOG_BINS),
             ("ellipse", 5),
             ("appearance", appearance_length)]
    spans, start = {}, 0
    for n, k in names:
        spans[n] = (start, start + k)
        start += k
    return spans


def object_features(mask, face_crop, appearance=None):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InvalidInputError("empty region")
    appearance = appearance or PyramidAppearance()
    x0, y0, x1, y1 = imaging.mask_bbox(mask)
    try:
        app = np.asarray(appearance(np.asarray(face_crop)[y0:y1 + 1, x0:x1 + 1]), dtype=np.float64)
    except Exception as err:
        raise PluginError(appearance, err) from err
    parts = [occupancy(mask).ravel(), shape_histogram(mask),
             imaging.ellipse_stats(mask).as_vector(), app]
    return ObjectFeatures(np.concatenate(parts), object_layout(len(app)))
