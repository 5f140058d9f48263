import os
import stat

import numpy as np
import pytest

from faceaction import serialize
from faceaction.errors import SchemaError


def test_pack_round_trip_f4():
    a = np.random.default_rng(0).random(17).astype(np.float32)
    np.testing.assert_array_equal(serialize.unpack_array(serialize.pack_array(a)), a)


def test_pack_round_trip_f8_shape():
    a = np.random.default_rng(1).random((3, 4))
    b = serialize.unpack_array(serialize.pack_array(a, "<f8"), (3, 4), "<f8")
    np.testing.assert_array_equal(a, b)


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "x.txt"
    serialize.atomic_write_text(str(p), "one")
    serialize.atomic_write_text(str(p), "two")
    assert p.read_text() == "two"
    assert [f.name for f in tmp_path.iterdir()] == ["x.txt"]


def test_atomic_write_mode_follows_umask(tmp_path):
    p = tmp_path / "y.json"
    serialize.dump_json(str(p), {"version": 1})
    mode = stat.S_IMODE(os.stat(p).st_mode)
    assert mode == 0o666 & ~serialize._UMASK


def test_check_version():
    serialize.check_version({"version": serialize.FORMAT_VERSION}, "thing")
    with pytest.raises(SchemaError, match="thing"):
        serialize.check_version({"version": 0}, "thing")
