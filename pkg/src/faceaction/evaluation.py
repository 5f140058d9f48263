"""Average precision, landmark-error curves and the score/report file formats."""

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import imaging
from .errors import InvalidInputError, SchemaError
from .serialize import FORMAT_VERSION, atomic_write_text, check_version, dump_json, load_json

DEFAULT_THRESHOLDS = tuple(float(t) for t in range(0, 21)) + (math.inf,)


def average_precision(scores, labels=None):
    """Mean precision at the rank of each positive.

    Accepts ``(score, is_positive)`` pairs or two parallel sequences.
    Sorting is by descending score; ties keep input order, so ``-inf``
    scores always rank last.
    """
    if labels is None:
        pairs = list(scores)
        s = np.array([p[0] for p in pairs], dtype=np.float64)
        y = np.array([bool(p[1]) for p in pairs])
    else:
        s = np.asarray(scores, dtype=np.float64)
        y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise InvalidInputError("scores and labels differ in length")
    if np.isnan(s).any():
        raise InvalidInputError("scores contain NaN")
    if not y.any():
        raise InvalidInputError("average precision is undefined without positives")
    order = np.argsort(-s, kind="stable")
    ranked = y[order]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    # exact rational mean, rounded once
    total = sum(Fraction(int(h), int(r)) for h, r in zip(hits[ranked], ranks[ranked]))
    return float(total / int(hits[-1]))


def landmark_error(pred, truth, box=None, size=imaging.FACE_SIZE, factor=imaging.INFLATE_FACTOR):
    """Mean distance over landmarks not marked don't-care.

    With ``box`` (the source face box) errors are rescaled to the
    normalized crop frame; otherwise they are in the points' own units.
    Returns NaN when every landmark is don't-care.
    """
    p = np.asarray(getattr(pred, "points", pred), dtype=np.float64)
    t = np.asarray(getattr(truth, "points", truth), dtype=np.float64)
    care = ~np.asarray(getattr(truth, "dont_care", np.zeros(len(t), dtype=bool)))
    if not care.any():
        return math.nan
    d = np.linalg.norm(p - t, axis=1)[care].mean()
    if box is not None:
        d *= size / (factor * max(box.width, box.height))
    return float(d)


def error_curve(errors, thresholds=DEFAULT_THRESHOLDS):
    """``[(threshold, fraction of errors <= threshold)]``; NaN errors are ignored."""
    e = np.asarray([x for x in errors if not math.isnan(x)], dtype=np.float64)
    ts = sorted(float(t) for t in thresholds)
    if len(e) == 0:
        return [(t, 0.0) for t in ts]
    return [(t, float(np.mean(e <= t))) for t in ts]


@dataclass
class EvalReport:
    average_precision: dict
    mean_ap: float
    ranked: dict = field(default_factory=dict)
    landmark_curve: list = field(default_factory=list)
    skipped_classes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "average_precision": self.average_precision,
            "mean_ap": self.mean_ap,
            "ranked": {c: [[i, _json_float(s)] for i, s in v] for c, v in self.ranked.items()},
            "landmark_curve": [[_json_float(t), f] for t, f in self.landmark_curve],
            "skipped_classes": self.skipped_classes,
        }

    def save(self, path):
        dump_json(path, self.to_dict())


def _json_float(x):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def evaluate(rows, dataset, landmark_predictions=None, thresholds=DEFAULT_THRESHOLDS):
    """Per-class AP from ``(image_id, class, score)`` rows against a dataset.

    Images absent from ``rows`` score ``-inf``. Classes with no positive
    image are reported in ``skipped_classes``. ``landmark_predictions``
    maps image ids to predicted source-frame landmarks.
    """
    table = {}
    for image_id, c, s in rows:
        table[(str(image_id), str(c))] = float(s)
    ids = [r.id for r in dataset.records]
    labels = [r.label for r in dataset.records]
    aps, ranked, skipped = {}, {}, []
    for c in dataset.classes:
        s = np.array([table.get((i, c), -math.inf) for i in ids])
        y = np.array([l == c for l in labels])
        order = np.argsort(-s, kind="stable")
        ranked[c] = [(ids[k], float(s[k])) for k in order]
        if not y.any():
            skipped.append(c)
            continue
        aps[c] = average_precision(s, y)
    mean_ap = float(np.mean(list(aps.values()))) if aps else math.nan
    curve = []
    if landmark_predictions is not None:
        errs = []
        for rec in dataset.records:
            if rec.id in landmark_predictions and rec.face is not None:
                errs.append(landmark_error(landmark_predictions[rec.id], rec.face.landmarks, rec.face.box))
        curve = error_curve(errs, thresholds)
    return EvalReport(aps, mean_ap, ranked, curve, skipped)


# ---------------------------------------------------------------------------
# scores CSV
# ---------------------------------------------------------------------------


SCORE_COLUMNS = ("image_id", "class", "score")


def format_scores(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["version", FORMAT_VERSION])
    w.writerow(SCORE_COLUMNS)
    for image_id, c, s in rows:
        w.writerow([image_id, c, repr(float(s))])
    return buf.getvalue()


def write_scores(path, rows):
    atomic_write_text(path, format_scores(rows))


def read_scores(path):
    try:
        with open(path, encoding="utf-8", newline="") as f:
            lines = list(csv.reader(f))
    except OSError as err:
        raise SchemaError(f"cannot read scores {path}: {err}") from err
    if len(lines) < 2 or lines[0][:1] != ["version"]:
        raise SchemaError("scores file must start with a version row")
    version = lines[0][1] if len(lines[0]) > 1 else None
    check_version({"version": int(version) if version and version.isdigit() else version}, "scores file")
    if tuple(lines[1]) != SCORE_COLUMNS:
        raise SchemaError(f"scores header must be {','.join(SCORE_COLUMNS)}")
    rows = []
    for i, row in enumerate(lines[2:]):
        if len(row) != 3:
            raise SchemaError(f"expected 3 columns, got {len(row)}", index=i)
        try:
            rows.append((row[0], row[1], float(row[2])))
        except ValueError as err:
            raise SchemaError(f"bad score {row[2]!r}", index=i) from err
    return rows


def load_report(path):
    doc = load_json(path)
    check_version(doc, "report")
    return doc
