"""Helpers for the versioned JSON formats (base64 arrays, atomic writes)."""

import base64
import json
import os
import tempfile

import numpy as np

from .errors import SchemaError

FORMAT_VERSION = 1

_UMASK = os.umask(0)
os.umask(_UMASK)


def pack_array(a, dtype="<f4"):
    """Encode an array as base64 of little-endian values (float32 by default)."""
    return base64.b64encode(np.asarray(a, dtype=dtype).tobytes()).decode("ascii")


def unpack_array(s, shape=None, dtype="<f4"):
    a = np.frombuffer(base64.b64decode(s), dtype=dtype).astype(np.dtype(dtype).newbyteorder("="))
    if shape is not None:
        a = a.reshape(shape)
    return a


def check_version(doc, kind):
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported {kind} version {version!r}")


def atomic_write_bytes(path, data):
    """Write ``data`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(path, doc):
    atomic_write_text(path, json.dumps(doc))


def load_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)
