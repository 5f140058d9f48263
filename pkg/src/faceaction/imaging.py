"""Pixel-level primitives shared by the rest of the package.

Images are 2-D float64 arrays with values in [0, 1], indexed ``img[y, x]``.
Integer coordinates name pixels: pixel ``(x, y)`` is ``img[y, x]``.
Region masks are boolean arrays of the same shape as their parent image.
"""

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import InvalidInputError
from .serialize import atomic_write_bytes

DESCRIPTOR_CELLS = 4
DESCRIPTOR_BINS = 8
DESCRIPTOR_SIZE = DESCRIPTOR_CELLS * DESCRIPTOR_CELLS * DESCRIPTOR_BINS

FACE_SIZE = 96
INFLATE_FACTOR = 1.5
LUMA = (0.299, 0.587, 0.114)


def as_gray(img):
    """Validate ``img`` as a grayscale image and return it as float64."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"expected a 2-D image, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("image contains non-finite values")
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise InvalidInputError("image values must lie in [0, 1]")
    return a


def load_gray(path):
    """Read an 8-bit PNG/PGM file as a [0, 1] grayscale image."""
    with Image.open(path) as im:
        if im.mode in ("L", "P", "RGB", "RGBA", "LA", "1"):
            if im.mode in ("L", "1"):
                return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        else:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.clip(rgb @ np.array(LUMA), 0.0, 1.0)


def save_png(path, pixels):
    """Write a uint8 gray ``(h, w)`` or RGB ``(h, w, 3)`` array as PNG, atomically."""
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def to_uint8(img):
    return np.clip(np.rint(as_gray(img) * 255.0), 0, 255).astype(np.uint8)


def save_gray(path, img):
    save_png(path, to_uint8(img))


# ---------------------------------------------------------------------------
# gradients and descriptors
# ---------------------------------------------------------------------------


def gradients(img):
    """Central-difference gradients ``(gx, gy)``; borders use one-sided differences."""
    img = as_gray(img)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise InvalidInputError(f"image must be at least 3x3, got {img.shape}")
    gy, gx = np.gradient(img)
    return gx, gy


def gradient_magnitude(img):
    gx, gy = gradients(img)
    return np.hypot(gx, gy)


@dataclass(frozen=True)
class DenseDescriptors:
    """Descriptors on a regular grid.

    ``values`` has shape (n, 128); ``centers`` holds integer ``(x, y)`` rows.
    ``grid_shape`` is ``(rows, cols)`` of the grid, in row-major order.
    """

    values: np.ndarray
    centers: np.ndarray
    grid_shape: tuple

    def __len__(self):
        return len(self.values)


def grid_positions(length, stride, patch):
    """Patch centers along one axis: multiples of ``stride`` whose patch fits."""
    half = patch // 2
    first = -(-half // stride) * stride
    return np.arange(first, length - (patch - half) + 1, stride)


def _gaussian_window(patch):
    sigma = patch / 2.0
    r = np.arange(patch) - (patch - 1) / 2.0
    g = np.exp(-0.5 * (r / sigma) ** 2)
    return np.outer(g, g)


def dense_descriptors(img, stride=4, patch=16):
    """Dense 4x4-cell, 8-bin gradient orientation histograms.

    Each descriptor covers pixels ``c - patch//2 .. c + patch - patch//2 - 1``
    around its center ``c`` on both axes. Orientations are signed over
    [0, 2*pi) with linear interpolation between the two nearest bins, and
    magnitudes are weighted by a Gaussian with sigma = patch / 2.
    """
    img = as_gray(img)
    h, w = img.shape
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    if patch < DESCRIPTOR_CELLS or patch % DESCRIPTOR_CELLS:
        raise InvalidInputError(f"patch must be a positive multiple of {DESCRIPTOR_CELLS}")
    if patch > min(w, h):
        raise InvalidInputError(f"patch {patch} larger than image {w}x{h}")

    lo, hi, w_lo, w_hi = orientation_votes(img, DESCRIPTOR_BINS, signed=True)
    pix = np.arange(h * w) * DESCRIPTOR_BINS
    planes = np.bincount(pix + lo, w_lo, h * w * DESCRIPTOR_BINS)
    planes += np.bincount(pix + hi, w_hi, h * w * DESCRIPTOR_BINS)
    planes = planes.reshape(h, w, DESCRIPTOR_BINS)

    xs = grid_positions(w, stride, patch)
    ys = grid_positions(h, stride, patch)
    half = patch // 2
    windows = np.lib.stride_tricks.sliding_window_view(planes, (patch, patch), axis=(0, 1))
    # windows: (h-p+1, w-p+1, bins, p, p), indexed by top-left corner
    sel = windows[(ys - half)[:, None], (xs - half)[None, :]]
    sel = sel * _gaussian_window(patch)
    cell = patch // DESCRIPTOR_CELLS
    sel = sel.reshape(len(ys), len(xs), DESCRIPTOR_BINS, DESCRIPTOR_CELLS, cell, DESCRIPTOR_CELLS, cell)
    hist = sel.sum(axis=(4, 6))  # (ny, nx, bins, cy, cx)
    hist = hist.transpose(0, 1, 3, 4, 2).reshape(len(ys) * len(xs), DESCRIPTOR_SIZE)
    cy, cx = np.meshgrid(ys, xs, indexing="ij")
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
    return DenseDescriptors(np.ascontiguousarray(hist), centers, (len(ys), len(xs)))


def normalize_root(values):
    """RootSIFT: L1-normalize each row, then take elementwise square roots.

    All-zero rows stay zero. Accepts a single descriptor or an (n, d) array.
    """
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 0):
        raise InvalidInputError("descriptor values must be nonnegative")
    total = v.sum(axis=-1, keepdims=True)
    out = np.divide(v, total, out=np.zeros_like(v), where=total > 0)
    return np.sqrt(out)


def orientation_votes(img, bins, signed=False):
    """Per-pixel soft orientation binning of gradient magnitude.

    Returns flat arrays ``(lo, hi, w_lo, w_hi)``: the two nearest bins of
    each pixel and the magnitude shares given to them. Signed orientations
    span [0, 2*pi) with bin edges at multiples of the bin width; unsigned
    ones span [0, pi) with bin centers at half-bin offsets.
    """
    gx, gy = gradients(img)
    mag = np.hypot(gx, gy).ravel()
    if signed:
        t = np.mod(np.arctan2(gy, gx), 2 * np.pi).ravel() * (bins / (2 * np.pi))
    else:
        t = np.mod(np.arctan2(gy, gx), np.pi).ravel() * (bins / np.pi) - 0.5
    lo = np.floor(t).astype(np.int64)
    frac = t - lo
    lo %= bins
    hi = (lo + 1) % bins
    return lo, hi, mag * (1 - frac), mag * frac


def _cell_edges(length, n):
    return np.rint(np.linspace(0, length, n + 1)).astype(np.int64)


def cell_histograms(votes, shape, cells_x, cells_y, bins):
    """Sum orientation votes into a ``(cells_y, cells_x, bins)`` grid."""
    h, w = shape
    lo, hi, w_lo, w_hi = votes
    cy = np.searchsorted(_cell_edges(h, cells_y), np.arange(h), side="right") - 1
    cx = np.searchsorted(_cell_edges(w, cells_x), np.arange(w), side="right") - 1
    cell = (cy[:, None] * cells_x + cx[None, :]).ravel() * bins
    n = cells_x * cells_y * bins
    hist = np.bincount(cell + lo, w_lo, n) + np.bincount(cell + hi, w_hi, n)
    return hist.reshape(cells_y, cells_x, bins)


def block_normalize(hist, clip=0.2, eps=1e-6):
    """L2-normalize, clip and renormalize non-overlapping 2x2 cell blocks."""
    cells_y, cells_x, _ = hist.shape
    out = np.zeros_like(hist)
    for by in range(0, cells_y, 2):
        for bx in range(0, cells_x, 2):
            block = hist[by:by + 2, bx:bx + 2]
            v = block / np.sqrt(np.sum(block ** 2) + eps ** 2)
            v = np.minimum(v, clip)
            out[by:by + 2, bx:bx + 2] = v / np.sqrt(np.sum(v ** 2) + eps ** 2)
    return out


def block_gradient_histogram(img, cells_x=8, cells_y=8, bins=9, clip=0.2):
    """HOG-style feature: unsigned orientation histograms per cell.

    Cells partition the image at rounded boundaries. Cells are grouped into
    non-overlapping 2x2 blocks (a trailing odd row/column forms a smaller
    block); each block is L2-normalized, clipped at ``clip`` and renormalized.
    Returns a vector of length ``cells_y * cells_x * bins`` in (row, col, bin)
    order.
    """
    img = as_gray(img)
    h, w = img.shape
    if cells_x < 1 or cells_y < 1 or bins < 1:
        raise InvalidInputError("cell and bin counts must be >= 1")
    if cells_x > w or cells_y > h:
        raise InvalidInputError(f"{cells_x}x{cells_y} cells do not fit a {w}x{h} image")
    votes = orientation_votes(img, bins)
    return block_normalize(cell_histograms(votes, img.shape, cells_x, cells_y, bins), clip).ravel()


# ---------------------------------------------------------------------------
# resampling and crops
# ---------------------------------------------------------------------------


def _interp_axis(n_in, n_out):
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = pos - i0
    return i0, i1, f


def resize_bilinear(img, w, h):
    """Bilinear resampling with corner-aligned sample positions."""
    a = np.asarray(img, dtype=np.float64)
    if w < 1 or h < 1:
        raise InvalidInputError("output size must be at least 1x1")
    hin, win = a.shape
    if (hin, win) == (h, w):
        return a.copy()
    x0, x1, fx = _interp_axis(win, w)
    y0, y1, fy = _interp_axis(hin, h)
    rows = a[y0] * (1 - fy)[:, None] + a[y1] * fy[:, None]
    out = rows[:, x0] * (1 - fx) + rows[:, x1] * fx
    return np.clip(out, a.min(), a.max())


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle ``[x0, x1) x [y0, y1)`` in pixel coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def center(self):
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def to_list(self):
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, v):
        return cls(*(float(c) for c in v))

    def mask(self, shape):
        """Pixels whose coordinates fall inside the half-open box."""
        h, w = shape
        xs = np.arange(w)
        ys = np.arange(h)
        mx = (xs >= self.x0) & (xs < self.x1)
        my = (ys >= self.y0) & (ys < self.y1)
        return my[:, None] & mx[None, :]


@dataclass(frozen=True)
class AffineMap:
    """Axis-aligned map from crop coordinates to source coordinates."""

    scale_x: float
    scale_y: float
    offset_x: float
    offset_y: float

    def to_source(self, pts):
        p = np.asarray(pts, dtype=np.float64)
        return np.stack([p[..., 0] * self.scale_x + self.offset_x,
                         p[..., 1] * self.scale_y + self.offset_y], axis=-1)

    def to_crop(self, pts):
        p = np.asarray(pts, dtype=np.float64)
        return np.stack([(p[..., 0] - self.offset_x) / self.scale_x,
                         (p[..., 1] - self.offset_y) / self.scale_y], axis=-1)

    def box_to_crop(self, box):
        (x0, y0), (x1, y1) = self.to_crop([[box.x0, box.y0], [box.x1, box.y1]])
        return Box(x0, y0, x1, y1)

    def then_resize(self, n_in_x, n_in_y, n_out_x, n_out_y):
        """Compose with a corner-aligned resize of the crop."""
        sx = (n_in_x - 1) / (n_out_x - 1) if n_out_x > 1 else 1.0
        sy = (n_in_y - 1) / (n_out_y - 1) if n_out_y > 1 else 1.0
        return AffineMap(self.scale_x * sx, self.scale_y * sy, self.offset_x, self.offset_y)

    def to_list(self):
        return [self.scale_x, self.scale_y, self.offset_x, self.offset_y]

    @classmethod
    def from_list(cls, v):
        return cls(*(float(c) for c in v))


def crop_padded(img, x0, y0, w, h):
    """Crop ``w x h`` pixels starting at integer ``(x0, y0)``; outside is zero."""
    a = np.asarray(img, dtype=np.float64)
    out = np.zeros((h, w))
    H, W = a.shape
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + w, W), min(y0 + h, H)
    if sx0 < sx1 and sy0 < sy1:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = a[sy0:sy1, sx0:sx1]
    return out


def crop_inflated(img, box, factor=INFLATE_FACTOR):
    """Crop centered on ``box`` with sides scaled by ``factor``.

    Returns the crop and the :class:`AffineMap` from crop to image
    coordinates. Pixels outside the image are zero.
    """
    img = as_gray(img)
    if factor <= 0:
        raise InvalidInputError("factor must be positive")
    if box.width <= 0 or box.height <= 0:
        raise InvalidInputError(f"degenerate box {box}")
    cx, cy = box.center
    H, W = img.shape
    if not (0 <= cx <= W and 0 <= cy <= H):
        raise InvalidInputError("box center lies outside the image")
    nw = max(1, int(round(factor * box.width)))
    nh = max(1, int(round(factor * box.height)))
    ox = int(round(cx - nw / 2.0))
    oy = int(round(cy - nh / 2.0))
    return crop_padded(img, ox, oy, nw, nh), AffineMap(1.0, 1.0, float(ox), float(oy))


def normalized_face_crop(img, box, factor=INFLATE_FACTOR, size=FACE_SIZE):
    """Inflated face crop resized to ``size x size``, with its crop->image map."""
    crop, amap = crop_inflated(img, box, factor)
    h, w = crop.shape
    return resize_bilinear(crop, size, size), amap.then_resize(w, h, size, size)


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


def rasterize_polygon(vertices, shape):
    """Even-odd fill of a polygon, testing pixel coordinates.

    Pixels lying exactly on the polygon boundary are included.
    """
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise InvalidInputError("polygon needs at least 3 (x, y) vertices")
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    x_lo = max(int(np.floor(v[:, 0].min())), 0)
    x_hi = min(int(np.ceil(v[:, 0].max())), w - 1)
    y_lo = max(int(np.floor(v[:, 1].min())), 0)
    y_hi = min(int(np.ceil(v[:, 1].max())), h - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return mask
    py, px = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1].astype(np.float64)
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    a = v
    b = np.roll(v, -1, axis=0)
    for (ax, ay), (bx, by) in zip(a, b):
        crosses = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = ax + (py - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (px < xint)
        dx, dy = bx - ax, by - ay
        seg2 = dx * dx + dy * dy
        if seg2 == 0:
            on_edge |= (np.abs(px - ax) < 1e-9) & (np.abs(py - ay) < 1e-9)
            continue
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / seg2, 0.0, 1.0)
        d2 = (px - ax - t * dx) ** 2 + (py - ay - t * dy) ** 2
        on_edge |= d2 < 1e-12
    mask[y_lo:y_hi + 1, x_lo:x_hi + 1] = inside | on_edge
    return mask


def mask_bbox(mask):
    """Inclusive bounding box ``(x0, y0, x1, y1)`` of the foreground pixels."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise InvalidInputError("empty mask has no bounding box")
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


@dataclass(frozen=True)
class EllipseStats:
    major_axis: float
    minor_axis: float
    area: int
    eccentricity: float
    orientation: float

    def as_vector(self):
        return np.array([self.major_axis, self.minor_axis, float(self.area),
                         self.eccentricity, self.orientation])


def ellipse_stats(mask):
    """Moment-equivalent ellipse of a region mask.

    Each pixel is treated as a unit square, so 1/12 is added to the variance
    on both axes; this also keeps single-pixel masks well defined. Axis
    lengths are ``4 * sqrt(eigenvalue)`` (full lengths for a uniform
    ellipse); orientation is the principal-axis angle in (-pi/2, pi/2] with
    x to the right and y down.
    """
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    n = len(xs)
    if n == 0:
        raise InvalidInputError("empty mask")
    xs = xs.astype(np.float64)
    ys = ys.astype(np.float64)
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    cxx = np.mean(dx * dx) + 1.0 / 12
    cyy = np.mean(dy * dy) + 1.0 / 12
    cxy = np.mean(dx * dy)
    half_diff = (cxx - cyy) / 2.0
    root = np.hypot(half_diff, cxy)
    mid = (cxx + cyy) / 2.0
    l1 = mid + root
    l2 = max(mid - root, 0.0)
    major = 4.0 * np.sqrt(l1)
    minor = 4.0 * np.sqrt(l2)
    ecc = np.sqrt(max(0.0, 1.0 - (minor / major) ** 2))
    orientation = 0.5 * np.arctan2(2.0 * cxy, cxx - cyy)
    if orientation <= -np.pi / 2:
        orientation += np.pi
    return EllipseStats(float(major), float(minor), n, float(ecc), float(orientation))
