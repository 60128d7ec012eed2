"""Checkpoint containers, token streams, activation dumps, and matrix roles.

All on-disk formats are little-endian and fully specified here:

* Checkpoint container: an 8-byte unsigned LE header length, then a UTF-8
  JSON header mapping tensor name -> {"dtype": "F32"|"F64", "shape": [...],
  "data_offsets": [begin, end]} with offsets relative to the end of the
  header, then the raw row-major payload.  An optional "__metadata__" object
  carries string-to-string metadata.  Writes are canonical: tensors sorted
  by name, offsets contiguous and ascending, so a given map always produces
  identical bytes.
* Token stream: magic b"TOKS", u32 version (currently 1), u32 vocab_size,
  u64 count, then count u32 token ids.
* Activation dump: a checkpoint container whose tensor names follow
  "act/<layer_id>/<batch_index>", binary32 payloads, 2-D values shaped
  [tokens_in_batch, embedding_dim].

Non-finite values are rejected at load time; everything downstream assumes
finite entries.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError

_DTYPE_TO_NUMPY = {"F32": np.dtype("<f4"), "F64": np.dtype("<f8")}
_NUMPY_TO_DTYPE = {np.dtype(np.float32): "F32", np.dtype(np.float64): "F64"}

_TOKEN_MAGIC = b"TOKS"
_TOKEN_VERSION = 1


class RoleKind(str, Enum):
    """Functional role of a weight matrix inside a transformer block."""

    QUERY = "query"
    KEY = "key"
    VALUE = "value"
    ATTN_OUTPUT = "attn_output"
    UP = "up"
    DOWN = "down"
    GATE = "gate"
    EMBEDDING = "embedding"
    OTHER = "other"


@dataclass(frozen=True)
class MatrixRole:
    kind: RoleKind
    block: int | None = None
    step: int | None = None


# Substring table applied in order, first match wins.  Attention-output
# patterns must precede the generic down-projection patterns because names
# like "attention.output.dense" contain both.
DEFAULT_ROLE_RULES: tuple[tuple[str, RoleKind], ...] = (
    ("q_proj", RoleKind.QUERY),
    ("query", RoleKind.QUERY),
    ("k_proj", RoleKind.KEY),
    ("v_proj", RoleKind.VALUE),
    ("attn.out", RoleKind.ATTN_OUTPUT),
    ("attention.output", RoleKind.ATTN_OUTPUT),
    ("attention.dense", RoleKind.ATTN_OUTPUT),
    ("o_proj", RoleKind.ATTN_OUTPUT),
    ("out_proj", RoleKind.ATTN_OUTPUT),
    ("key", RoleKind.KEY),
    ("value", RoleKind.VALUE),
    ("up_proj", RoleKind.UP),
    ("dense_h_to_4h", RoleKind.UP),
    ("intermediate.dense", RoleKind.UP),
    ("fc_in", RoleKind.UP),
    ("down_proj", RoleKind.DOWN),
    ("dense_4h_to_h", RoleKind.DOWN),
    ("output.dense", RoleKind.DOWN),
    ("fc_out", RoleKind.DOWN),
    ("gate_proj", RoleKind.GATE),
    ("embed", RoleKind.EMBEDDING),
    ("wte", RoleKind.EMBEDDING),
    ("wpe", RoleKind.EMBEDDING),
)

_BLOCK_RE = re.compile(r"(?:^|\.)(?:blocks|layers|layer|h)\.(\d+)(?=\.|$)")


def classify_role(name: str, rules: Sequence[tuple[str, RoleKind]] | None = None) -> MatrixRole:
    """Classify a tensor name into a MatrixRole.

    Total and deterministic: the first matching substring rule decides the
    kind (falling back to OTHER), and the block index is the first decimal
    integer following a "blocks."/"layers."/"layer."/"h." segment.
    """
    if rules is None:
        rules = DEFAULT_ROLE_RULES
    kind = RoleKind.OTHER
    for needle, candidate in rules:
        if needle in name:
            kind = RoleKind(candidate)
            break
    block: int | None = None
    m = _BLOCK_RE.search(name)
    if m:
        block = int(m.group(1))
    return MatrixRole(kind=kind, block=block)


def load_role_rules(path: str | Path) -> tuple[tuple[str, RoleKind], ...]:
    """Load a user-supplied substring table: {"rules": [["q_proj", "query"], ...]}."""
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    rules = obj["rules"] if isinstance(obj, dict) else obj
    out = []
    for needle, kind in rules:
        out.append((str(needle), RoleKind(kind)))
    return tuple(out)


@dataclass
class TensorMap:
    """Named dense tensors plus free-form string metadata."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_items(cls, items: Iterable[tuple[str, np.ndarray]], metadata: dict[str, str] | None = None) -> "TensorMap":
        entries: dict[str, np.ndarray] = {}
        for name, arr in items:
            if name in entries:
                raise ValueError(f"duplicate tensor name {name!r}")
            entries[name] = arr
        return cls(entries=entries, metadata=dict(metadata or {}))

    def step(self) -> int | None:
        raw = self.metadata.get("step")
        return int(raw) if raw is not None else None


def maps_equal(a: TensorMap, b: TensorMap) -> bool:
    if a.metadata != b.metadata or set(a.entries) != set(b.entries):
        return False
    for name, arr in a.entries.items():
        other = b.entries[name]
        if arr.dtype != other.dtype or arr.shape != other.shape:
            return False
        if not np.array_equal(arr, other):
            return False
    return True


def _validate_tensor(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _NUMPY_TO_DTYPE:
        raise ValueError(f"tensor {name!r} has unsupported dtype {arr.dtype}; only binary32/binary64 are stored")
    if arr.ndim < 1 or any(d < 1 for d in arr.shape):
        raise ValueError(f"tensor {name!r} must have positive dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in tensor {name!r}")
    return arr


def write_checkpoint(tmap: TensorMap, path: str | Path) -> None:
    """Write a canonical container: sorted names, contiguous ascending offsets."""
    if not tmap.entries:
        raise ValueError("empty map")
    names = sorted(tmap.entries)
    arrays = {name: _validate_tensor(name, tmap.entries[name]) for name in names}
    header: dict[str, object] = {}
    if tmap.metadata:
        for k, v in tmap.metadata.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise ValueError("metadata must map strings to strings")
        header["__metadata__"] = dict(sorted(tmap.metadata.items()))
    offset = 0
    for name in names:
        arr = arrays[name]
        nbytes = arr.size * arr.itemsize
        header[name] = {
            "dtype": _NUMPY_TO_DTYPE[arr.dtype],
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + nbytes],
        }
        offset += nbytes
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for name in names:
            arr = arrays[name]
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))


def read_checkpoint(path: str | Path) -> TensorMap:
    """Read a container and validate shapes, offsets, and finiteness."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError("truncated header: file shorter than the 8-byte length prefix")
    (header_len,) = struct.unpack("<Q", raw[:8])
    if 8 + header_len > len(raw):
        raise FormatError(f"truncated header: declared header length {header_len} exceeds file size {len(raw)}")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("malformed JSON header: expected an object")
    payload = raw[8 + header_len :]

    metadata_obj = header.pop("__metadata__", {})
    if not isinstance(metadata_obj, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata_obj.items()
    ):
        raise FormatError("__metadata__ must be an object of strings")

    spans: list[tuple[int, int, str]] = []
    entries: dict[str, np.ndarray] = {}
    for name, info in header.items():
        if not isinstance(info, dict):
            raise FormatError(f"malformed entry for tensor {name!r}")
        try:
            dtype_str = info["dtype"]
            shape = info["shape"]
            begin, end = info["data_offsets"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed entry for tensor {name!r}: {exc}") from exc
        if dtype_str not in _DTYPE_TO_NUMPY:
            raise FormatError(f"tensor {name!r} has unsupported dtype {dtype_str!r}")
        if not isinstance(shape, list) or not shape or not all(isinstance(d, int) and d >= 1 for d in shape):
            raise FormatError(f"tensor {name!r} has invalid shape {shape!r}")
        if not (isinstance(begin, int) and isinstance(end, int) and 0 <= begin <= end <= len(payload)):
            raise FormatError(f"tensor {name!r} has invalid data offsets [{begin}, {end})")
        dtype = _DTYPE_TO_NUMPY[dtype_str]
        expected = math.prod(shape) * dtype.itemsize
        if end - begin != expected:
            raise FormatError(
                f"size mismatch for tensor {name!r}: shape {shape} {dtype_str} requires {expected} bytes, got {end - begin}"
            )
        spans.append((begin, end, name))
        arr = np.frombuffer(payload[begin:end], dtype=dtype).reshape(shape)
        arr = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"non-finite values in tensor {name!r}")
        entries[name] = arr

    spans.sort()
    cursor = 0
    for begin, end, name in spans:
        if begin != cursor:
            raise FormatError(f"overlapping or non-contiguous data offsets at tensor {name!r}")
        cursor = end
    if cursor != len(payload):
        raise FormatError("overlapping or non-contiguous data offsets: payload not fully covered")
    return TensorMap(entries=entries, metadata=dict(metadata_obj))


@dataclass
class TokenStream:
    vocab_size: int
    tokens: np.ndarray  # uint32

    def __post_init__(self) -> None:
        self.tokens = np.asarray(self.tokens, dtype=np.uint32)
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if self.tokens.size and int(self.tokens.max()) >= self.vocab_size:
            raise ValueError(f"token id {int(self.tokens.max())} >= vocab_size {self.vocab_size}")

    def __len__(self) -> int:
        return int(self.tokens.size)


def write_tokens(stream: TokenStream, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(_TOKEN_MAGIC)
        f.write(struct.pack("<I", _TOKEN_VERSION))
        f.write(struct.pack("<I", stream.vocab_size))
        f.write(struct.pack("<Q", len(stream)))
        f.write(stream.tokens.astype("<u4", copy=False).tobytes())


def read_tokens(path: str | Path) -> TokenStream:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 20:
        raise FormatError("truncated token stream header")
    if raw[:4] != _TOKEN_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != _TOKEN_VERSION:
        raise FormatError(f"unsupported token stream version {version}")
    (vocab_size,) = struct.unpack("<I", raw[8:12])
    (count,) = struct.unpack("<Q", raw[12:20])
    expected = 20 + 4 * count
    if len(raw) < expected:
        raise FormatError(f"truncated token payload: need {expected} bytes, have {len(raw)}")
    tokens = np.frombuffer(raw[20:expected], dtype="<u4").astype(np.uint32, copy=True)
    if tokens.size and int(tokens.max()) >= vocab_size:
        raise FormatError(f"token id {int(tokens.max())} >= vocab_size {vocab_size}")
    return TokenStream(vocab_size=vocab_size, tokens=tokens)


@dataclass
class ActivationBatch:
    layer_id: str
    values: np.ndarray  # [tokens_in_batch, embedding_dim]


def write_activations(batches: Sequence[ActivationBatch], path: str | Path, metadata: dict[str, str] | None = None) -> None:
    """Persist activation batches as an "act/<layer_id>/<batch_index>" container."""
    counters: dict[str, int] = {}
    entries: dict[str, np.ndarray] = {}
    for batch in batches:
        idx = counters.get(batch.layer_id, 0)
        counters[batch.layer_id] = idx + 1
        values = np.asarray(batch.values, dtype=np.float32)
        if values.ndim != 2:
            raise ValueError(f"activation batch for {batch.layer_id!r} must be 2-D")
        entries[f"act/{batch.layer_id}/{idx}"] = values
    write_checkpoint(TensorMap(entries=entries, metadata=dict(metadata or {})), path)


def read_activations(path: str | Path) -> list[ActivationBatch]:
    """Read activation batches grouped by layer_id and ordered by batch index."""
    tmap = read_checkpoint(path)
    parsed: dict[str, list[tuple[int, np.ndarray]]] = {}
    for name, arr in tmap.entries.items():
        parts = name.split("/")
        if len(parts) != 3 or parts[0] != "act" or not parts[2].isdigit():
            raise FormatError(f"malformed activation tensor name {name!r}; expected act/<layer_id>/<batch_index>")
        if arr.ndim != 2:
            raise FormatError(f"activation tensor {name!r} must be 2-D, got shape {arr.shape}")
        parsed.setdefault(parts[1], []).append((int(parts[2]), arr))
    batches: list[ActivationBatch] = []
    for layer_id in sorted(parsed):
        items = sorted(parsed[layer_id], key=lambda pair: pair[0])
        dims = {arr.shape[1] for _, arr in items}
        if len(dims) > 1:
            raise FormatError(f"dimension mismatch for layer {layer_id!r}: embedding dims {sorted(dims)}")
        batches.extend(ActivationBatch(layer_id=layer_id, values=arr) for _, arr in items)
    return batches


def activations_by_layer(batches: Iterable[ActivationBatch]) -> dict[str, list[ActivationBatch]]:
    out: dict[str, list[ActivationBatch]] = {}
    for batch in batches:
        out.setdefault(batch.layer_id, []).append(batch)
    return out
