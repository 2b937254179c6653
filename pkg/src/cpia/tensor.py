"""Dense CHW tensors and the single-file tensor archive.

Tensors are plain ``numpy`` arrays of dtype float32 shaped ``(C, H, W)``,
stored channel-major then row-major (C order). The archive layout is::

    b"CPIA\\0ARC"                      8-byte magic
    u32 little-endian                  manifest byte length
    manifest                           UTF-8 JSON array of
                                       {name, shape, dtype: "f32", offset, length}
    blob region                        concatenated little-endian f32 payloads

Blob offsets are relative to the start of the blob region and 16-byte
aligned. The manifest is padded with trailing spaces so the blob region
itself starts on a 16-byte boundary of the file.
"""

from __future__ import annotations

import json
import struct
from collections.abc import Iterator, Mapping
from pathlib import Path

import numpy as np

from .exceptions import ArchiveError, ShapeError

MAGIC = b"CPIA\0ARC"
ALIGNMENT = 16
_LE_F32 = np.dtype("<f4")

__all__ = [
    "MAGIC",
    "TensorArchive",
    "as_chw",
    "flat_index",
    "hadamard",
    "import_npy",
    "load_tensor",
    "save_tensor",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float32)
    a.flags.writeable = False
    return a


def as_chw(y, name: str = "tensor") -> np.ndarray:
    """Validate ``y`` as a finite rank-3 float32 tensor.

    A leading batch axis of size 1 is squeezed. Returns a C-contiguous
    float32 array (a copy only when needed).
    """
    a = np.asarray(y)
    if a.ndim == 4 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 3:
        raise ShapeError(f"{name}: expected rank-3 (C, H, W) tensor, got shape {a.shape}")
    if min(a.shape) < 1:
        raise ShapeError(f"{name}: empty dimension in shape {a.shape}")
    if not np.issubdtype(a.dtype, np.floating) and not np.issubdtype(a.dtype, np.integer) \
            and a.dtype != np.bool_:
        raise ShapeError(f"{name}: unsupported dtype {a.dtype}")
    a = np.ascontiguousarray(a, dtype=np.float32)
    if not np.isfinite(a).all():
        raise ShapeError(f"{name}: non-finite values")
    return a


def flat_index(c: int, h: int, w: int, shape: tuple[int, int, int]) -> int:
    """Row-major offset of pixel ``(c, h, w)`` in a tensor of ``shape``."""
    C, H, W = shape
    if not (0 <= c < C and 0 <= h < H and 0 <= w < W):
        raise IndexError(f"pixel {(c, h, w)} out of range for shape {shape}")
    return (c * H + h) * W + w


def hadamard(a, b) -> np.ndarray:
    """Elementwise product of two tensors of equal shape."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shape mismatch {a.shape} vs {b.shape}")
    return a * b


class TensorArchive(Mapping):
    """Ordered name -> float32 array collection with bit-exact file I/O.

    Arrays of any rank may be stored (network weights are rank 1 or 4);
    :func:`load_tensor` adds the CHW contract on top.
    """

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None):
        self._tensors: dict[str, np.ndarray] = {}
        for name, arr in (tensors or {}).items():
            self.add(name, arr)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise ArchiveError(f"missing name {name!r} in archive") from None

    def __contains__(self, name) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        body = ", ".join(f"{k}:{tuple(v.shape)}" for k, v in self._tensors.items())
        return f"TensorArchive({body})"

    def add(self, name: str, arr) -> "TensorArchive":
        if not isinstance(name, str) or not name:
            raise ArchiveError("tensor names must be non-empty strings")
        if name in self._tensors:
            raise ArchiveError(f"duplicate name {name!r}")
        a = np.asarray(arr)
        if a.dtype != np.float32:
            if not (np.issubdtype(a.dtype, np.floating) or np.issubdtype(a.dtype, np.integer)
                    or a.dtype == np.bool_):
                raise ArchiveError(f"{name!r}: unsupported dtype {a.dtype}")
            a = a.astype(np.float32)
        self._tensors[name] = _frozen(a)
        return self

    # serialization

    def to_bytes(self) -> bytes:
        entries = []
        blobs = []
        offset = 0
        for name, arr in self._tensors.items():
            payload = arr.astype(_LE_F32, copy=False).tobytes(order="C")
            pad = (-offset) % ALIGNMENT
            if pad:
                blobs.append(b"\0" * pad)
                offset += pad
            entries.append({"name": name, "shape": list(arr.shape), "dtype": "f32",
                            "offset": offset, "length": len(payload)})
            blobs.append(payload)
            offset += len(payload)
        manifest = json.dumps(entries, separators=(",", ":")).encode("utf-8")
        head = len(MAGIC) + 4
        manifest += b" " * ((-(head + len(manifest))) % ALIGNMENT)
        return MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(blobs)

    @classmethod
    def from_bytes(cls, data: bytes) -> "TensorArchive":
        head = len(MAGIC) + 4
        if len(data) < head or data[: len(MAGIC)] != MAGIC:
            raise ArchiveError("bad magic: not a tensor archive")
        (mlen,) = struct.unpack_from("<I", data, len(MAGIC))
        if head + mlen > len(data):
            raise ArchiveError("truncated manifest")
        try:
            entries = json.loads(data[head: head + mlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ArchiveError(f"unparseable manifest: {exc}") from None
        if not isinstance(entries, list):
            raise ArchiveError("manifest must be a JSON array")
        blob = memoryview(data)[head + mlen:]
        out = cls()
        for e in entries:
            try:
                name, shape, dtype = e["name"], tuple(int(s) for s in e["shape"]), e["dtype"]
                offset, length = int(e["offset"]), int(e["length"])
            except (KeyError, TypeError, ValueError):
                raise ArchiveError(f"malformed manifest entry {e!r}") from None
            if dtype != "f32":
                raise ArchiveError(f"{name!r}: dtype mismatch, expected f32 got {dtype!r}")
            if any(s < 0 for s in shape):
                raise ArchiveError(f"{name!r}: negative dimension in {shape}")
            expected = 4 * int(np.prod(shape, dtype=np.int64))
            if offset < 0 or offset % ALIGNMENT:
                raise ArchiveError(f"{name!r}: misaligned offset {offset}")
            if length < expected or offset + length > len(blob):
                raise ArchiveError(f"{name!r}: truncated blob")
            if length != expected:
                raise ArchiveError(f"{name!r}: shape mismatch, {length} bytes for shape {shape}")
            arr = np.frombuffer(blob[offset: offset + length], dtype=_LE_F32).reshape(shape)
            if name in out:
                raise ArchiveError(f"duplicate name {name!r}")
            out._tensors[name] = _frozen(arr.astype(np.float32))
        return out

    def write(self, path) -> Path:
        path = Path(path)
        try:
            path.write_bytes(self.to_bytes())
        except OSError as exc:
            raise ArchiveError(f"cannot write archive {path}: {exc}") from exc
        return path

    @classmethod
    def read(cls, path) -> "TensorArchive":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise ArchiveError(f"cannot read archive {path}: {exc}") from exc
        return cls.from_bytes(data)


def load_tensor(archive: TensorArchive, name: str) -> np.ndarray:
    """Fetch ``name`` from ``archive`` as a read-only CHW tensor."""
    arr = archive[name]
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 3:
        raise ArchiveError(f"{name!r}: shape mismatch, expected rank 3, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ArchiveError(f"{name!r}: non-finite values")
    return _frozen(arr)


def save_tensor(t, archive: TensorArchive, name: str) -> TensorArchive:
    """Store ``t`` under ``name``; the archive is returned for chaining."""
    return archive.add(name, as_chw(t, name))


def import_npy(path) -> np.ndarray:
    """Read a single-array ``.npy`` file as a CHW tensor."""
    try:
        arr = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ArchiveError(f"cannot read npy file {path}: {exc}") from exc
    return _frozen(as_chw(arr, str(path)))
