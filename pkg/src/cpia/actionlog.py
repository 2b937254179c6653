"""Replayable record of stroke actions, stored as NDJSON.

Line 1 is a header ``{shape, params, stop, y_checksum, version}``, then one
line per action ``{seq, c, h, w, y_value, penetrated, extended}``, and a
final ``{stop_reason}`` line. ``y_checksum`` is the FNV-1a 64-bit hash of the
raw little-endian float32 bytes of the activation, as 16 hex digits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .exceptions import ChecksumError, ReplayError
from .tensor import as_chw

LOG_VERSION = 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def tensor_checksum(y) -> str:
    y = as_chw(y, "y")
    return f"{fnv1a64(y.astype('<f4').tobytes(order='C')):016x}"


@dataclass(frozen=True)
class StrokeAction:
    seq: int
    pixel: tuple[int, int, int]
    penetrated: tuple[int, ...]
    extended: tuple[tuple[int, int, int], ...]
    y_value: float

    def to_json(self) -> dict[str, Any]:
        c, h, w = self.pixel
        return {"seq": self.seq, "c": c, "h": h, "w": w, "y_value": self.y_value,
                "penetrated": list(self.penetrated),
                "extended": [list(p) for p in self.extended]}

    @classmethod
    def from_json(cls, doc: dict) -> "StrokeAction":
        try:
            return cls(seq=int(doc["seq"]), pixel=(int(doc["c"]), int(doc["h"]), int(doc["w"])),
                       penetrated=tuple(int(c) for c in doc["penetrated"]),
                       extended=tuple((int(a), int(b), int(d)) for a, b, d in doc["extended"]),
                       y_value=float(doc["y_value"]))
        except (KeyError, TypeError, ValueError):
            raise ReplayError(f"malformed action record {doc!r}") from None


@dataclass
class ActionLog:
    shape: tuple[int, int, int]
    params: dict[str, Any]
    stop: dict[str, Any]
    y_checksum: str
    actions: list[StrokeAction] = field(default_factory=list)
    stop_reason: str | None = None
    version: int = LOG_VERSION

    def __len__(self) -> int:
        return len(self.actions)

    def header(self) -> dict[str, Any]:
        return {"shape": list(self.shape), "params": self.params, "stop": self.stop,
                "y_checksum": self.y_checksum, "version": self.version}

    def to_ndjson(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(a.to_json(), sort_keys=True) for a in self.actions]
        lines.append(json.dumps({"stop_reason": self.stop_reason}))
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_ndjson())
        return path

    @classmethod
    def from_ndjson(cls, text: str) -> "ActionLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ReplayError("empty action log")
        try:
            docs = [json.loads(ln) for ln in lines]
        except json.JSONDecodeError as exc:
            raise ReplayError(f"action log line does not parse: {exc}") from None
        head = docs[0]
        try:
            log = cls(shape=tuple(int(s) for s in head["shape"]), params=head["params"],
                      stop=head["stop"], y_checksum=str(head["y_checksum"]),
                      version=int(head.get("version", LOG_VERSION)))
        except (KeyError, TypeError, ValueError):
            raise ReplayError("malformed action log header") from None
        body = docs[1:]
        if body and set(body[-1]) == {"stop_reason"}:
            log.stop_reason = body[-1]["stop_reason"]
            body = body[:-1]
        log.actions = [StrokeAction.from_json(d) for d in body]
        return log

    @classmethod
    def read(cls, path) -> "ActionLog":
        return cls.from_ndjson(Path(path).read_text())


def replay(shape, log: ActionLog, y=None) -> np.ndarray:
    """Rebuild the mask a log describes, starting from all zeros.

    When ``y`` is given its checksum must match the log header. Raises
    :class:`ReplayError` on out-of-range pixels, non-contiguous sequence
    numbers or an action that turns on an already-on pixel.
    """
    shape = tuple(int(s) for s in shape)
    if tuple(log.shape) != shape:
        raise ReplayError(f"log shape {tuple(log.shape)} != {shape}")
    if y is not None:
        y = as_chw(y, "y")
        if y.shape != shape:
            raise ReplayError(f"activation shape {y.shape} != log shape {shape}")
        if tensor_checksum(y) != log.y_checksum:
            raise ChecksumError("checksum mismatch: log was not produced from this activation")
    C, H, W = shape
    mask = np.zeros(shape, dtype=bool)
    for n, action in enumerate(log.actions):
        if action.seq != n:
            raise ReplayError(f"action seq {action.seq} at position {n}")
        for c, h, w in action.extended:
            if not (0 <= c < C and 0 <= h < H and 0 <= w < W):
                raise ReplayError(f"action {n}: out-of-range pixel {(c, h, w)}")
            if mask[c, h, w]:
                raise ReplayError(f"action {n}: pixel {(c, h, w)} already on")
            mask[c, h, w] = True
    return mask
