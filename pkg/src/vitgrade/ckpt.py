"""PTF: the portable tensor-file container for checkpoints.

Layout: 4-byte magic "PTF1", an unsigned 64-bit little-endian header
length, a UTF-8 JSON header
``{"tensors": {name: {"dtype": "f32", "shape": [...], "offset": int}},
"meta": {...}}`` and a payload of row-major little-endian float32 data at
the stated offsets (relative to the payload start).

Tensors are laid out in lexicographic name order and the header JSON is
canonical (sorted keys, no whitespace), so identical ParamSets produce
byte-identical files. Headers are fully validated before any payload is
read.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DuplicateNameError,
    HeaderError,
    OverlappingTensorsError,
    TruncatedPayloadError,
)
from .model.config import ModelConfig, param_schema
from .model.params import ParamSet

MAGIC = b"PTF1"
_DTYPE = np.dtype("<f4")


def save(params: ParamSet, meta: dict, path) -> None:
    names = sorted(params)
    tensors = {}
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype=_DTYPE)
        tensors[name] = {"dtype": "f32", "shape": list(arr.shape), "offset": offset}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": tensors, "meta": meta},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def _reject_duplicate_keys(pairs):
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise DuplicateNameError(f"duplicate name in header: {key!r}")
        seen.add(key)
    return dict(pairs)


def load(path) -> tuple[ParamSet, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    header_len = int.from_bytes(raw[4:12], "little")
    if 12 + header_len > len(raw):
        raise TruncatedPayloadError(f"{path}: header extends past end of file")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"),
                            object_pairs_hook=_reject_duplicate_keys)
    except DuplicateNameError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"{path}: malformed header ({exc})")
    if not isinstance(header, dict) or "tensors" not in header:
        raise HeaderError(f"{path}: header missing 'tensors'")
    tensors = header["tensors"]
    meta = header.get("meta", {})

    payload = raw[12 + header_len:]
    extents = []
    for name, info in tensors.items():
        try:
            dtype = info["dtype"]
            shape = tuple(int(s) for s in info["shape"])
            offset = int(info["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise HeaderError(f"{path}: bad tensor entry for {name!r} ({exc})")
        if dtype != "f32":
            raise HeaderError(f"{path}: unsupported dtype {dtype!r} for {name!r}")
        if offset < 0 or any(s < 0 for s in shape):
            raise HeaderError(f"{path}: negative offset/shape for {name!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if offset + nbytes > len(payload):
            raise TruncatedPayloadError(
                f"{path}: tensor {name!r} ends at {offset + nbytes}, "
                f"payload has {len(payload)} bytes")
        extents.append((offset, offset + nbytes, name))

    extents.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(extents, extents[1:]):
        if e0 > s1:
            raise OverlappingTensorsError(f"{path}: {n0!r} overlaps {n1!r}")

    params: ParamSet = {}
    for name, info in tensors.items():
        shape = tuple(int(s) for s in info["shape"])
        offset = int(info["offset"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=offset)
        params[name] = arr.reshape(shape).copy()
    return params, meta


@dataclass
class NameReport:
    missing: list[str] = field(default_factory=list)
    unexpected: list[str] = field(default_factory=list)
    shape_mismatches: list[tuple[str, tuple, tuple]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.missing or self.unexpected or self.shape_mismatches)

    def describe(self) -> str:
        if self.ok:
            return "ok"
        parts = []
        if self.missing:
            parts.append("missing: " + ", ".join(self.missing))
        if self.unexpected:
            parts.append("unexpected: " + ", ".join(self.unexpected))
        for name, want, got in self.shape_mismatches:
            parts.append(f"shape mismatch {name}: expected {want}, found {got}")
        return "; ".join(parts)


def validate_names(params: ParamSet, config: ModelConfig) -> NameReport:
    """Compare a ParamSet's names/shapes against the canonical schema."""
    schema = param_schema(config)
    report = NameReport(
        missing=sorted(set(schema) - set(params)),
        unexpected=sorted(set(params) - set(schema)),
    )
    for name in sorted(set(schema) & set(params)):
        want = schema[name]
        got = tuple(params[name].shape)
        if want != got:
            report.shape_mismatches.append((name, want, got))
    return report
