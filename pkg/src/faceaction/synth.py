"""Synthetic face-action images with full annotations.

Each image shows a parametric face (elliptical head, eyes, nose, mouth) on
a textured background, an action object (a bar) leaving the mouth at a
class-specific angle, and one distractor bar away from the face. Records
carry the face box, the seven landmarks, and the object polygon.
"""

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import imaging
from .dataset import AnnotationRecord, FaceAnnotation, save_dataset
from .landmarks import LandmarkSet

IMAGE_SIZE = 160
FACE_SCORE = 5.0
CLASS_NAMES = ("drinking", "smoking", "blowing_bubbles", "brushing_teeth")


@dataclass(frozen=True)
class ObjectPose:
    """Action-object placement relative to the mouth, in face-size units."""

    angle_deg: float
    start: float = 0.05
    length: tuple = (0.5, 0.65)
    width: tuple = (0.10, 0.14)
    angle_jitter_deg: float = 8.0

    def centroid_band(self):
        """(min, max) centroid distance from the mouth, in face-size units."""
        return (self.start + self.length[0] / 2, self.start + self.length[1] / 2)


CLASS_POSES = (ObjectPose(0.0), ObjectPose(60.0), ObjectPose(120.0), ObjectPose(180.0))

# face-frame landmark layout (x right, y down), in face-size units
LANDMARK_LAYOUT = np.array([
    [-0.20, -0.12],  # left eye center
    [0.20, -0.12],  # right eye center
    [-0.15, 0.25],  # mouth left corner
    [0.15, 0.25],  # mouth right corner
    [0.00, 0.25],  # mouth center
    [0.00, 0.07],  # nose tip
    [0.00, 0.47],  # chin
])
FACE_ROTATION_DEG = 8.0


def class_names(n):
    if n <= len(CLASS_NAMES):
        return list(CLASS_NAMES[:n])
    return list(CLASS_NAMES) + [f"class_{k}" for k in range(len(CLASS_NAMES), n)]


def class_pose(k):
    if k < len(CLASS_POSES):
        return CLASS_POSES[k]
    return ObjectPose((k * 137.5) % 360.0)


def _rot(deg):
    t = math.radians(deg)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def _ellipse(shape, center, a, b, angle_deg=0.0):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r = _rot(-angle_deg)
    dx, dy = xx - center[0], yy - center[1]
    u = r[0, 0] * dx + r[0, 1] * dy
    v = r[1, 0] * dx + r[1, 1] * dy
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def bar_polygon(start, angle_deg, length, width):
    d = np.array([math.cos(math.radians(angle_deg)), math.sin(math.radians(angle_deg))])
    n = np.array([-d[1], d[0]])
    p0 = np.asarray(start, dtype=np.float64)
    p1 = p0 + length * d
    hw = width / 2.0
    return np.array([p0 + hw * n, p1 + hw * n, p1 - hw * n, p0 - hw * n])


def render_sample(rng, class_index, size=IMAGE_SIZE):
    """Render one image; returns ``(image, face annotation, person box)``."""
    shape = (size, size)
    bg = gaussian_filter(rng.random(shape), 3.0)
    bg = (bg - bg.min()) / max(bg.max() - bg.min(), 1e-9)
    img = 0.25 + 0.2 * bg

    s = rng.uniform(56, 68)
    cx = size / 2 + rng.uniform(-6, 6)
    cy = size * 0.45 + rng.uniform(-6, 6)
    rot = rng.uniform(-FACE_ROTATION_DEG, FACE_ROTATION_DEG)
    R = _rot(rot)
    center = np.array([cx, cy])
    layout = LANDMARK_LAYOUT + rng.uniform(-0.02, 0.02, LANDMARK_LAYOUT.shape)
    layout[4] = (layout[2] + layout[3]) / 2 + [0.0, rng.uniform(-0.01, 0.01)]
    pts = center + (layout * s) @ R.T

    head = _ellipse(shape, center, 0.42 * s, 0.5 * s, rot)
    img[head] = 0.68 + 0.04 * rng.random()
    for eye in pts[:2]:
        img[_ellipse(shape, eye, 0.07 * s, 0.045 * s, rot)] = 0.15
    img[_ellipse(shape, pts[5], 0.035 * s, 0.05 * s, rot)] = 0.5
    mouth_half = np.linalg.norm(pts[3] - pts[2]) / 2
    img[_ellipse(shape, pts[4], mouth_half, 0.045 * s, rot)] = 0.22

    pose = class_pose(class_index)
    angle = pose.angle_deg + rot + rng.uniform(-pose.angle_jitter_deg, pose.angle_jitter_deg)
    direction = np.array([math.cos(math.radians(angle)), math.sin(math.radians(angle))])
    length = rng.uniform(*pose.length) * s
    width = rng.uniform(*pose.width) * s
    start = pts[4] + pose.start * s * direction
    poly = bar_polygon(start, angle, length, width)
    obj_value = rng.uniform(0.03, 0.12) if rng.random() < 0.5 else rng.uniform(0.9, 0.98)
    obj_mask = imaging.rasterize_polygon(poly, shape)
    img[obj_mask] = obj_value

    # distractor bar away from the face
    for _ in range(100):
        dc = rng.uniform(0.1 * size, 0.9 * size, 2)
        if np.linalg.norm(dc - center) > 0.95 * s:
            break
    d_angle = rng.uniform(0, 180)
    d_len = rng.uniform(0.35, 0.55) * s
    d_dir = np.array([math.cos(math.radians(d_angle)), math.sin(math.radians(d_angle))])
    d_poly = bar_polygon(dc - d_dir * d_len / 2, d_angle, d_len, rng.uniform(0.08, 0.14) * s)
    d_mask = imaging.rasterize_polygon(d_poly, shape) & ~head & ~obj_mask
    img[d_mask] = rng.uniform(0.03, 0.12) if rng.random() < 0.5 else rng.uniform(0.9, 0.98)

    img = np.clip(img + rng.normal(0, 0.01, shape), 0.0, 1.0)

    ix = np.clip(np.rint(pts).astype(int), 0, size - 1)
    dont_care = obj_mask[ix[:, 1], ix[:, 0]]
    box = imaging.Box(cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2)
    face = FaceAnnotation(box=box, landmarks=LandmarkSet(pts, dont_care), score=FACE_SCORE,
                          object_polygon=poly.tolist())
    person = imaging.Box(max(0.0, cx - 1.2 * s), max(0.0, cy - 0.9 * s), float(size), float(size))
    return img, face, person


def synth_generate(out_dir, n_classes=4, per_class=30, seed=0, prefix="img", manifest="manifest.jsonl"):
    """Write ``n_classes * per_class`` images and a manifest under ``out_dir``.

    Returns the manifest path. Output is byte-for-byte reproducible for a
    fixed seed.
    """
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    names = class_names(n_classes)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(per_class):
        for k in range(n_classes):
            img, face, person = render_sample(rng, k)
            rid = f"{prefix}_{i * n_classes + k:05d}"
            rel = os.path.join("images", rid + ".png")
            imaging.save_gray(os.path.join(out_dir, rel), img)
            records.append(AnnotationRecord(rid, rel, names[k], person, [face]))
    path = os.path.join(out_dir, manifest)
    save_dataset(path, records, names)
    return path
