"""Tensor archive: a length-prefixed JSON header followed by raw little-endian payloads.

Layout::

    u64 little-endian   header length N in bytes
    N bytes             UTF-8 JSON object
    ...                 payload

The header maps each tensor name to ``{"dtype": "f32"|"f64", "shape": [...],
"byte_offset": int, "byte_length": int}``; offsets count from the first payload
byte. An optional ``"__metadata__"`` entry holds a flat string→string map.
"""
import json
import struct

import numpy as np

METADATA_KEY = "__metadata__"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class ArchiveError(Exception):
    pass


class TruncatedArchiveError(ArchiveError):
    pass


class MissingTensorError(ArchiveError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"archive has no tensor named {self.name!r}"


class ShapeMismatchError(ArchiveError):
    def __init__(self, name, expected, found):
        super().__init__(f"tensor {name!r}: expected shape {tuple(expected)}, archive has {tuple(found)}")
        self.name = name


class UnexpectedTensorError(ArchiveError):
    pass


def save_archive(path, tensors, metadata=None):
    header = {}
    if metadata:
        header[METADATA_KEY] = {str(k): str(v) for k, v in metadata.items()}
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = "f64" if arr.dtype.kind == "f" and arr.dtype.itemsize == 8 else "f32"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        header[name] = {"dtype": code, "shape": list(arr.shape),
                        "byte_offset": offset, "byte_length": len(raw)}
        blobs.append(raw)
        offset += len(raw)
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)


def read_header(path):
    with open(path, "rb") as fh:
        prefix = fh.read(8)
        if len(prefix) < 8:
            raise TruncatedArchiveError(f"{path}: missing header length prefix")
        (n,) = struct.unpack("<Q", prefix)
        head = fh.read(n)
    if len(head) < n:
        raise TruncatedArchiveError(f"{path}: header declares {n} bytes, file has {len(head)}")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: unreadable header: {exc}") from exc
    return header, 8 + n


def load_archive(path):
    """Return ``(tensors, metadata)`` with tensors as native-endian numpy arrays."""
    header, start = read_header(path)
    with open(path, "rb") as fh:
        fh.seek(start)
        payload = fh.read()
    metadata = header.pop(METADATA_KEY, {})
    tensors = {}
    for name, info in header.items():
        try:
            dtype = _DTYPES[info["dtype"]]
        except KeyError as exc:
            raise ArchiveError(f"tensor {name!r}: unsupported dtype {info.get('dtype')!r}") from exc
        shape = tuple(int(s) for s in info["shape"])
        lo, length = int(info["byte_offset"]), int(info["byte_length"])
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if length != expected:
            raise ArchiveError(f"tensor {name!r}: byte_length {length} != {expected} for shape {shape}")
        if lo + length > len(payload):
            raise TruncatedArchiveError(
                f"tensor {name!r} needs payload bytes [{lo}, {lo + length}), only {len(payload)} present")
        arr = np.frombuffer(payload, dtype=dtype, count=expected // dtype.itemsize, offset=lo)
        tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True).reshape(shape)
    return tensors, metadata


def validate(tensors, expected_shapes, allow_extra=False):
    """Check an archive's contents against ``name -> shape``; raise the specific error."""
    for name, shape in expected_shapes.items():
        if name not in tensors:
            raise MissingTensorError(name)
        if tuple(tensors[name].shape) != tuple(shape):
            raise ShapeMismatchError(name, shape, tensors[name].shape)
    if not allow_extra:
        extra = sorted(set(tensors) - set(expected_shapes))
        if extra:
            raise UnexpectedTensorError(f"archive has unexpected tensors: {extra[:5]}")
