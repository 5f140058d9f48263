import numpy as np
import pytest

from faceaction import landmarks, synth
from faceaction.star_vote import HeatMap

# every heat map built during the session, checked by the acceptance suite
HEATMAP_SUMS = {"count": 0, "max_deviation": 0.0}
ACCEPTANCE_LINES = []

_heatmap_init = HeatMap.__init__


def _recording_init(self, *args, **kwargs):
    _heatmap_init(self, *args, **kwargs)
    HEATMAP_SUMS["count"] += 1
    dev = abs(float(np.sum(self.mass)) - 1.0)
    HEATMAP_SUMS["max_deviation"] = max(HEATMAP_SUMS["max_deviation"], dev)


HeatMap.__init__ = _recording_init


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
        terminalreporter.write_line(
            f"heat maps built this session: {HEATMAP_SUMS['count']}, "
            f"max |sum - 1| = {HEATMAP_SUMS['max_deviation']:.2e}")


def synthetic_faces(n, seed=0):
    """Annotated faces rendered by the synthetic generator, cycling over classes."""
    rng = np.random.default_rng(seed)
    faces = []
    for i in range(n):
        img, face, _ = synth.render_sample(rng, i % 4)
        faces.append(landmarks.AnnotatedFace(img, face.box, face.score, face.landmarks))
    return faces


@pytest.fixture(scope="session")
def faces60():
    return synthetic_faces(60, seed=7)


@pytest.fixture(scope="session")
def corpus60(faces60):
    return landmarks.build_corpus(faces60)


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    """Synthetic train (4 x 5) and test (4 x 2) datasets plus a trained bundle."""
    from faceaction import dataset, pipeline

    root = tmp_path_factory.mktemp("synth")
    train_manifest = synth.synth_generate(str(root / "train"), 4, 5, seed=1, prefix="tr")
    test_manifest = synth.synth_generate(str(root / "test"), 4, 2, seed=2, prefix="te")
    train = dataset.load_dataset(train_manifest)
    test = dataset.load_dataset(test_manifest)
    bundle = pipeline.train_pipeline(train)
    bundle_path = str(root / "bundle.json")
    bundle.save(bundle_path)
    return {"root": root, "train": train, "test": test, "bundle": bundle, "bundle_path": bundle_path,
            "train_manifest": train_manifest, "test_manifest": test_manifest}
