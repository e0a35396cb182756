"""Named-tensor checkpoints in a bit-exact binary container.

Container layout (format ``GMRG1``):

    magic ``GMRG1`` (5 bytes)
    header length L as little-endian u64
    L bytes of UTF-8 JSON:
        {"metadata": {str: str, ...},
         "tensors": [{"name": str, "dtype": "f32", "shape": [int, ...],
                      "offset": int, "nbytes": int}, ...]}
    packed little-endian f32 data, no padding

Tensors are listed lexicographically by name and offsets are relative to
the end of the header. Saving is deterministic: identical maps produce
byte-identical files (sorted JSON keys, canonical tensor order).
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    BadMagic,
    CorruptHeader,
    DataError,
    IncompatibleCheckpoints,
    NonFiniteValue,
    TruncatedData,
    UnknownName,
)

MAGIC = b"GMRG1"
DTYPE_TAG = "f32"
_HEADER_LEN_BYTES = 8


def _as_tensor(name: str, value) -> np.ndarray:
    # np.array with order="C" keeps 0-d shapes; ascontiguousarray would not.
    arr = np.array(value, dtype=np.float32, order="C", copy=True)
    arr.setflags(write=False)
    if not name:
        raise ValueError("tensor names must be nonempty")
    return arr


class TensorMap:
    """Ordered name -> float32 tensor map; iteration is lexicographic by name.

    Immutable after construction; safe to share across threads.
    """

    def __init__(self, entries: Mapping[str, object] | None = None,
                 metadata: Mapping[str, str] | None = None):
        items = {} if entries is None else dict(entries)
        self._entries: dict[str, np.ndarray] = {
            name: _as_tensor(name, value) for name, value in sorted(items.items())
        }
        self._metadata: dict[str, str] = {}
        for key, value in (metadata or {}).items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise ValueError("metadata must map str to str")
            self._metadata[key] = value

    @property
    def metadata(self) -> dict[str, str]:
        return dict(self._metadata)

    def names(self) -> list[str]:
        return list(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._entries[name]
        except KeyError:
            raise UnknownName(f"no tensor named {name!r}") from None

    def items(self) -> Iterable[tuple[str, np.ndarray]]:
        return self._entries.items()

    def total_elements(self) -> int:
        return sum(arr.size for arr in self._entries.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(arr).all() for arr in self._entries.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        if self.names() != other.names() or self._metadata != other._metadata:
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for (_, a), (_, b) in zip(self.items(), other.items())
        )

    def __repr__(self) -> str:
        return f"TensorMap({len(self)} tensors, {self.total_elements()} elements)"

    def replace(self, updates: Mapping[str, object]) -> "TensorMap":
        """Return a copy with the given entries replaced or added."""
        merged = dict(self._entries)
        merged.update(updates)
        return TensorMap(merged, self._metadata)


class Mismatch(NamedTuple):
    name: str
    kind: str  # missing | shape | dtype
    details: str


@dataclass
class CompatReport:
    compatible: bool
    mismatches: list[Mismatch] = field(default_factory=list)


def validate_compat(maps: Sequence[TensorMap]) -> CompatReport:
    """Check that all maps share identical name sets and shapes."""
    if not maps:
        raise ValueError("validate_compat requires at least one map")
    all_names = sorted(set().union(*(set(m.names()) for m in maps)))
    mismatches: list[Mismatch] = []
    for name in all_names:
        absent = [i for i, m in enumerate(maps) if name not in m]
        if absent:
            mismatches.append(Mismatch(name, "missing", f"absent from inputs {absent}"))
            continue
        shapes = [m[name].shape for m in maps]
        if len(set(shapes)) > 1:
            mismatches.append(Mismatch(name, "shape", f"shapes {shapes}"))
    return CompatReport(compatible=not mismatches, mismatches=mismatches)


def require_compat(maps: Sequence[TensorMap], context: str = "merge") -> None:
    report = validate_compat(maps)
    if not report.compatible:
        first = report.mismatches[0]
        raise IncompatibleCheckpoints(
            f"{context}: {len(report.mismatches)} mismatched tensors "
            f"(first: {first.name} [{first.kind}] {first.details})"
        )


def subset(tmap: TensorMap, names: Iterable[str]) -> TensorMap:
    """Return a map containing exactly the requested entries."""
    wanted = set(names)
    missing = wanted - set(tmap.names())
    if missing:
        raise UnknownName(f"names not in map: {sorted(missing)}")
    return TensorMap({n: tmap[n] for n in wanted}, tmap.metadata)


def save_checkpoint(tmap: TensorMap, path: str | Path) -> None:
    """Write the map to `path`; byte output is a pure function of the map."""
    descriptors = []
    offset = 0
    for name, arr in tmap.items():
        nbytes = arr.size * 4
        descriptors.append(
            {
                "name": name,
                "dtype": DTYPE_TAG,
                "shape": [int(d) for d in arr.shape],
                "offset": offset,
                "nbytes": nbytes,
            }
        )
        offset += nbytes
    header = json.dumps(
        {"metadata": tmap.metadata, "tensors": descriptors},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
    ).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<Q", len(header)))
        handle.write(header)
        for _, arr in tmap.items():
            handle.write(arr.astype("<f4", copy=False).tobytes(order="C"))


def _parse_header(raw: bytes) -> tuple[dict, int]:
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}")
    body = len(MAGIC) + _HEADER_LEN_BYTES
    if len(raw) < body:
        raise CorruptHeader("file too short for header length field")
    (header_len,) = struct.unpack("<Q", raw[len(MAGIC):body])
    if len(raw) < body + header_len:
        raise CorruptHeader("declared header length exceeds file size")
    try:
        header = json.loads(raw[body:body + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise CorruptHeader("header must be a JSON object")
    return header, body + header_len


def load_checkpoint(path: str | Path, allow_nonfinite: bool = False) -> TensorMap:
    """Read a checkpoint, validating structure and (by default) finiteness."""
    raw = Path(path).read_bytes()
    try:
        return _load_from_bytes(raw, allow_nonfinite)
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def _load_from_bytes(raw: bytes, allow_nonfinite: bool) -> TensorMap:
    header, data_start = _parse_header(raw)

    descriptors = header.get("tensors")
    if not isinstance(descriptors, list):
        raise CorruptHeader("header missing 'tensors' list")
    metadata = header.get("metadata", {})
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise CorruptHeader("'metadata' must map strings to strings")

    entries: dict[str, np.ndarray] = {}
    expected_offset = 0
    previous_name: str | None = None
    for desc in descriptors:
        if not isinstance(desc, dict):
            raise CorruptHeader("tensor descriptor must be an object")
        try:
            name = desc["name"]
            dtype = desc["dtype"]
            shape = desc["shape"]
            offset = desc["offset"]
            nbytes = desc["nbytes"]
        except KeyError as exc:
            raise CorruptHeader(f"tensor descriptor missing key {exc}") from exc
        if not isinstance(name, str) or not name:
            raise CorruptHeader("tensor names must be nonempty strings")
        if previous_name is not None and name <= previous_name:
            raise CorruptHeader("tensors must be listed in strict lexicographic order")
        previous_name = name
        if dtype != DTYPE_TAG:
            raise CorruptHeader(f"unsupported dtype {dtype!r} for {name!r}")
        if not isinstance(shape, list) or not all(
            isinstance(d, int) and d >= 0 for d in shape
        ):
            raise CorruptHeader(f"bad shape for {name!r}: {shape!r}")
        size = math.prod(shape)
        if nbytes != size * 4:
            raise CorruptHeader(f"nbytes {nbytes} inconsistent with shape of {name!r}")
        if offset != expected_offset:
            raise CorruptHeader(
                f"tensor {name!r} at offset {offset}, expected {expected_offset} "
                "(data must be packed without overlap or padding)"
            )
        expected_offset += nbytes
        start = data_start + offset
        if start + nbytes > len(raw):
            raise TruncatedData(
                f"tensor {name!r} needs bytes up to {start + nbytes}, file has {len(raw)}"
            )
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=start)
        arr = arr.astype(np.float32).reshape(shape)
        if not allow_nonfinite and not np.isfinite(arr).all():
            raise NonFiniteValue(f"tensor {name!r} contains NaN or Inf")
        entries[name] = arr

    if data_start + expected_offset != len(raw):
        raise CorruptHeader(
            f"{len(raw) - data_start - expected_offset} unexpected trailing bytes"
        )
    return TensorMap(entries, metadata)


def file_checksum(path: str | Path) -> str:
    """SHA-256 of the file bytes, hex encoded."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def to_json_dump(tmap: TensorMap) -> str:
    """Export as a plain JSON tensor dump {"name": nested lists, ...}."""
    payload = {name: arr.tolist() for name, arr in tmap.items()}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def from_json_dump(text: str) -> TensorMap:
    """Import a plain JSON tensor dump produced by `to_json_dump` or by hand."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptHeader(f"tensor dump is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise CorruptHeader("tensor dump must be a JSON object")
    return TensorMap(payload)
