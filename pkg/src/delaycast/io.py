"""Header + raw-blob persistence.

Every array artifact is two files: ``<stem>.json`` (metadata) and
``<stem>.f64`` (little-endian float64, C order). The header records the
array shape and the SHA-256 of the blob.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError

BLOB_SUFFIX = ".f64"


def stem_of(path):
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", BLOB_SUFFIX) else p


def with_ext(stem, ext):
    """``stem`` + ``ext``; unlike ``with_suffix`` it keeps dots inside the name."""
    stem = Path(stem)
    return stem.with_name(stem.name + ext)


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_bundle(path, header, array):
    """Write ``array`` and ``header``; return the header path."""
    stem = stem_of(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(array, dtype="<f8")
    blob = arr.tobytes(order="C")
    header = dict(header)
    header.update(dtype="f64le", shape=list(arr.shape), sha256=sha256_bytes(blob),
                  blob=stem.name + BLOB_SUFFIX)
    with_ext(stem, BLOB_SUFFIX).write_bytes(blob)
    hpath = with_ext(stem, ".json")
    hpath.write_text(json.dumps(header, indent=2, sort_keys=True))
    return hpath


def read_bundle(path):
    """Return ``(header, array)``; raises on truncation or checksum mismatch."""
    stem = stem_of(path)
    hpath = with_ext(stem, ".json")
    try:
        header = json.loads(hpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read header {hpath}: {exc}") from exc
    if header.get("dtype") != "f64le":
        raise FormatError(f"unsupported dtype {header.get('dtype')!r}")
    blob = (hpath.parent / header.get("blob", stem.name + BLOB_SUFFIX)).read_bytes()
    shape = tuple(header["shape"])
    if len(blob) != 8 * int(np.prod(shape, dtype=np.int64)):
        raise ChecksumError(f"{hpath}: blob has {len(blob)} bytes, expected shape {shape}")
    if "sha256" in header and sha256_bytes(blob) != header["sha256"]:
        raise ChecksumError(f"{hpath}: SHA-256 mismatch")
    arr = np.frombuffer(blob, dtype="<f8").reshape(shape).astype(np.float64)
    return header, arr


def companion_files(header_path):
    """The header plus the binary file it points to (bundles and weight files)."""
    hpath = Path(header_path)
    header = json.loads(hpath.read_text())
    blob = header.get("blob") or header.get("weights_file")
    return [hpath] + ([hpath.parent / blob] if blob else [])
