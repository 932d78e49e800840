"""Versioned single-file checkpoint container.

A checkpoint is an .npz holding float32 parameter blobs plus a JSON header
(format version, model kind tag, config, training metadata). The header is
stored as a unicode array under a reserved key. Writes are atomic
(tmp file + rename) so a crash never leaves a torn checkpoint behind.
"""

import io
import json
import os
import tempfile
import zipfile

import numpy as np
from numpy.lib import format as npy_format

FORMAT_VERSION = 1
_HEADER_KEY = "__header__"

# fixed zip entry timestamp so equal contents give equal bytes
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_npz_canonical(fh, payload: dict):
    """np.load-compatible npz with sorted keys and a fixed timestamp."""
    with zipfile.ZipFile(fh, "w", zipfile.ZIP_STORED) as zf:
        for key in sorted(payload):
            buf = io.BytesIO()
            npy_format.write_array(buf, np.asarray(payload[key]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(key + ".npy", date_time=_ZIP_EPOCH), buf.getvalue())


def save_checkpoint(path, kind: str, header: dict, arrays: dict):
    """Write arrays + header to path; header must be JSON-serializable."""
    full_header = {"format_version": FORMAT_VERSION, "kind": kind}
    full_header.update(header)
    payload = {_HEADER_KEY: np.array(json.dumps(full_header))}
    for key, arr in arrays.items():
        if key == _HEADER_KEY:
            raise ValueError(f"array name {key!r} is reserved")
        payload[key] = np.asarray(arr)
    path = os.fspath(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            _write_npz_canonical(fh, payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, expect_kind=None):
    """Read (header, arrays). Raises on version or kind mismatch."""
    with np.load(path, allow_pickle=False) as npz:
        if _HEADER_KEY not in npz:
            raise ValueError(f"{path}: not a checkpoint (missing header)")
        header = json.loads(str(npz[_HEADER_KEY][()]))
        arrays = {k: npz[k] for k in npz.files if k != _HEADER_KEY}
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise ValueError(f"{path}: checkpoint kind {header.get('kind')!r}, expected {expect_kind!r}")
    return header, arrays
