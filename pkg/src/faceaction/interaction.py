"""Face-object interaction features of a candidate region.

All inputs share the normalized face-crop frame: region masks, landmarks,
the (non-inflated) face box mapped into the crop, and two heat maps, the
predicted object location and a saliency map.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import imaging, star_vote
from .errors import InvalidInputError, PluginError
from .landmarks import N_LANDMARKS
from .star_vote import HeatMap

N_RADIAL = 5
N_ANGULAR = 8
R_MAX = float(imaging.FACE_SIZE)


def location_prior(star, face_crop):
    """Predicted object-center map; a plain star-model vote on the crop."""
    return star_vote.vote(star, face_crop)


def center_prior_saliency(face_crop, blur=4.0):
    """Blurred gradient magnitude under a centered Gaussian window (sigma = crop/2)."""
    g = gaussian_filter(imaging.gradient_magnitude(face_crop), blur)
    h, w = g.shape
    ys = (np.arange(h) - (h - 1) / 2.0) / (h / 2.0)
    xs = (np.arange(w) - (w - 1) / 2.0) / (w / 2.0)
    window = np.exp(-0.5 * (ys[:, None] ** 2 + xs[None, :] ** 2))
    # a flat image still gets the center prior
    return (g + 1e-12) * window


def saliency_prior(face_crop, saliency=None):
    face_crop = imaging.as_gray(face_crop)
    saliency = saliency or center_prior_saliency
    try:
        m = np.asarray(saliency(face_crop), dtype=np.float64)
    except Exception as err:
        raise PluginError(saliency, err) from err
    if m.shape != face_crop.shape:
        raise PluginError(saliency, f"map shape {m.shape} != image shape {face_crop.shape}")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise PluginError(saliency, "saliency map must be finite and nonnegative")
    return HeatMap.normalized(m)


def _pixels(mask):
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if len(xs) == 0:
        raise InvalidInputError("empty region")
    return np.stack([xs, ys], axis=1).astype(np.float64)


def landmark_distances(mask, landmarks):
    """``[min_0, max_0, min_1, max_1, ...]`` pixel distances from the region to each landmark."""
    pix = _pixels(mask)
    pts = getattr(landmarks, "points", landmarks)
    d = np.linalg.norm(pix[:, None, :] - np.asarray(pts)[None, :, :], axis=2)
    return np.stack([d.min(axis=0), d.max(axis=0)], axis=1).ravel()


def _logpolar_from_offsets(dx, dy, n_radial, n_angular, r_max):
    r = np.hypot(dx, dy)
    keep = r <= r_max
    edges = np.geomspace(1.0, r_max, n_radial + 1)
    rb = np.clip(np.searchsorted(edges, r[keep], side="right") - 1, 0, n_radial - 1)
    ang = np.mod(np.arctan2(dy[keep], dx[keep]), 2 * np.pi)
    ab = np.minimum((ang * (n_angular / (2 * np.pi))).astype(np.int64), n_angular - 1)
    counts = np.bincount(rb * n_angular + ab, minlength=n_radial * n_angular)
    return counts.reshape(n_radial, n_angular).astype(np.float64)


def logpolar_coverage(mask, p, n_radial=N_RADIAL, n_angular=N_ANGULAR, r_max=R_MAX):
    """Region pixel counts in log-polar cells around ``p``.

    Radial edges are log-spaced from 1 to ``r_max`` (closer pixels join the
    innermost ring); angular cells split [0, 2*pi) evenly. Pixels farther
    than ``r_max`` are not counted. Returns an ``(n_radial, n_angular)`` array.
    """
    if n_radial < 1 or n_angular < 1 or r_max <= 1:
        raise InvalidInputError("need n_radial, n_angular >= 1 and r_max > 1")
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    return _logpolar_from_offsets(xs - p[0], ys - p[1], n_radial, n_angular, r_max)


def face_overlaps(mask, face_box):
    """``(|r & F| / |F|, |r & F| / |r|, |r & F| / |r | F|)`` for the face box ``F``."""
    r = np.asarray(mask, dtype=bool)
    f = face_box.mask(r.shape)
    inter = np.count_nonzero(r & f)
    nf = np.count_nonzero(f)
    nr = np.count_nonzero(r)
    union = np.count_nonzero(r | f)
    return np.array([inter / nf if nf else 0.0, inter / nr if nr else 0.0,
                     inter / union if union else 0.0])


def interaction_layout(n_radial=N_RADIAL, n_angular=N_ANGULAR):
    names = [("loc_mass", 1), ("sal_mass", 1), ("distances", 2 * N_LANDMARKS),
             ("logpolar", N_LANDMARKS * n_radial * n_angular), ("overlaps", 3)]
    spans, start = {}, 0
    for n, k in names:
        spans[n] = (start, start + k)
        start += k
    return spans


@dataclass
class InteractionFeatures:
    vector: np.ndarray
    spans: dict

    def span(self, name):
        a, b = self.spans[name]
        return self.vector[a:b]


def interaction_features(mask, landmarks, face_box, loc, sal,
                         n_radial=N_RADIAL, n_angular=N_ANGULAR, r_max=R_MAX):
    mask = np.asarray(mask, dtype=bool)
    pix = _pixels(mask)
    pts = np.asarray(getattr(landmarks, "points", landmarks), dtype=np.float64)
    ys = pix[:, 1].astype(np.int64)
    xs = pix[:, 0].astype(np.int64)
    loc_mass = loc.mass[ys, xs].mean()
    sal_mass = sal.mass[ys, xs].mean()
    d = np.linalg.norm(pix[:, None, :] - pts[None, :, :], axis=2)
    dist = np.stack([d.min(axis=0), d.max(axis=0)], axis=1).ravel()
    lp = [_logpolar_from_offsets(pix[:, 0] - p[0], pix[:, 1] - p[1], n_radial, n_angular, r_max).ravel()
          for p in pts]
    vec = np.concatenate([[loc_mass, sal_mass], dist, *lp, face_overlaps(mask, face_box)])
    return InteractionFeatures(vec, interaction_layout(n_radial, n_angular))
