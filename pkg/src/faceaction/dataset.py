"""Annotation records and JSON-lines manifests.

A manifest starts with a header line ``{"version": 1, ...}`` followed by one
record per line. Coordinates are source-image pixels with the origin at the
top-left; image paths are relative to the manifest's directory.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import imaging
from .errors import SchemaError
from .landmarks import LANDMARK_NAMES, LandmarkSet
from .serialize import FORMAT_VERSION, atomic_write_text


@dataclass
class FaceAnnotation:
    box: imaging.Box
    landmarks: LandmarkSet
    score: float = None
    object_polygon: list = None
    hand_boxes: list = field(default_factory=list)

    def to_dict(self):
        d = {"box": self.box.to_list(), "landmarks": self.landmarks.to_dict()}
        if self.score is not None:
            d["score"] = self.score
        if self.object_polygon is not None:
            d["object_polygon"] = [list(map(float, p)) for p in self.object_polygon]
        if self.hand_boxes:
            d["hand_boxes"] = [b.to_list() for b in self.hand_boxes]
        return d

    @classmethod
    def from_dict(cls, d):
        box = _box(d.get("box"), "face box")
        lm = d.get("landmarks")
        if not isinstance(lm, dict):
            raise SchemaError("face landmarks must be an object keyed by landmark name")
        if len(lm) != len(LANDMARK_NAMES) or set(lm) != set(LANDMARK_NAMES):
            raise SchemaError(f"face needs exactly the {len(LANDMARK_NAMES)} landmarks "
                              f"{list(LANDMARK_NAMES)}, got {len(lm)}")
        try:
            landmarks = LandmarkSet.from_dict(lm)
        except (KeyError, TypeError, ValueError) as err:
            raise SchemaError(f"bad landmark entry: {err}") from err
        poly = d.get("object_polygon")
        if poly is not None:
            try:
                poly = [[float(x), float(y)] for x, y in poly]
            except (TypeError, ValueError) as err:
                raise SchemaError(f"bad object polygon: {err}") from err
            if len(poly) < 3:
                raise SchemaError("object polygon needs at least 3 vertices")
        score = d.get("score")
        hands = [_box(b, "hand box") for b in d.get("hand_boxes", [])]
        return cls(box, landmarks, None if score is None else float(score), poly, hands)


@dataclass
class AnnotationRecord:
    id: str
    image: str
    label: str
    person_box: imaging.Box
    faces: list

    def to_dict(self):
        return {"id": self.id, "image": self.image, "label": self.label,
                "person_box": self.person_box.to_list(),
                "faces": [f.to_dict() for f in self.faces]}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise SchemaError("record must be a JSON object")
        for key in ("id", "image", "label", "person_box", "faces"):
            if key not in d:
                raise SchemaError(f"missing field {key!r}")
        faces = d["faces"]
        if not isinstance(faces, list):
            raise SchemaError("faces must be a list")
        return cls(str(d["id"]), str(d["image"]), str(d["label"]),
                   _box(d["person_box"], "person box"),
                   [FaceAnnotation.from_dict(f) for f in faces])

    @property
    def face(self):
        """The annotated face of the acting person (the first one)."""
        return self.faces[0] if self.faces else None


def _box(v, what):
    try:
        if len(v) != 4:
            raise ValueError("need 4 numbers")
        b = imaging.Box.from_list(v)
    except (TypeError, ValueError) as err:
        raise SchemaError(f"bad {what}: {err}") from err
    if b.width <= 0 or b.height <= 0:
        raise SchemaError(f"degenerate {what} {v}")
    return b


@dataclass
class Dataset:
    records: list
    root: str = "."
    classes: list = None

    def __post_init__(self):
        if self.classes is None:
            self.classes = sorted({r.label for r in self.records})

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def image_path(self, record):
        return os.path.join(self.root, record.image)

    def load_image(self, record):
        return imaging.load_gray(self.image_path(record))


def load_dataset(path, check_images=True):
    """Read and validate a manifest; schema errors name the record index."""
    root = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, encoding="utf-8") as f:
            lines = [ln for ln in f.read().splitlines() if ln.strip()]
    except OSError as err:
        raise SchemaError(f"cannot read manifest {path}: {err}") from err
    classes = None
    if lines:
        try:
            first = json.loads(lines[0])
        except json.JSONDecodeError as err:
            raise SchemaError(f"malformed JSON on line 1: {err}") from err
        if isinstance(first, dict) and "version" in first and "id" not in first:
            if first["version"] != FORMAT_VERSION:
                raise SchemaError(f"unsupported manifest version {first['version']!r}")
            classes = first.get("classes")
            lines = lines[1:]
    records = []
    for i, line in enumerate(lines):
        try:
            rec = AnnotationRecord.from_dict(json.loads(line))
        except json.JSONDecodeError as err:
            raise SchemaError(f"malformed JSON: {err}", index=i) from err
        except SchemaError as err:
            raise SchemaError(str(err), index=i) from err
        if check_images and not os.path.exists(os.path.join(root, rec.image)):
            raise SchemaError(f"missing image {rec.image}", index=i)
        records.append(rec)
    return Dataset(records, root, classes)


def save_dataset(path, records, classes=None):
    header = {"version": FORMAT_VERSION}
    if classes is not None:
        header["classes"] = list(classes)
    lines = [json.dumps(header)] + [json.dumps(r.to_dict()) for r in records]
    atomic_write_text(path, "\n".join(lines) + "\n")


def polygon_mask(polygon, amap, shape):
    """Rasterize a source-coordinate polygon into the frame of a crop."""
    verts = amap.to_crop(np.asarray(polygon, dtype=np.float64))
    return imaging.rasterize_polygon(verts, shape)
