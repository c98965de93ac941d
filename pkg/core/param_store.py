import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from core.errors import CheckpointFormatError, IncompatibleError

logger = logging.getLogger(__name__)

MAGIC = b"RATA"
VERSION = 1
_PREAMBLE = struct.Struct("<4sBI")  # magic, version, header length
SECTIONS = ("featurizer", "classifier")


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def stable_digest(obj) -> str:
    """sha256 of the canonical JSON of `obj`, first 16 hex chars"""
    return hashlib.sha256(_canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def hparams_digest(config: BaseModel) -> str:
    return stable_digest(config.model_dump(mode="json"))


@dataclass(frozen=True)
class ParamBlock:
    """One named parameter array, float64, read-only"""

    name: str
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(int(d) for d in self.values.shape)

    @property
    def size(self) -> int:
        return int(self.values.size)

    def with_values(self, values: np.ndarray) -> "ParamBlock":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise IncompatibleError(f"block '{self.name}': shape {values.shape} != {self.values.shape}")
        return ParamBlock(self.name, values)

    def bit_equal(self, other: "ParamBlock") -> bool:
        return (self.name == other.name and self.shape == other.shape
                and self.values.tobytes() == other.values.tobytes())


@dataclass(frozen=True)
class LineageEntry:
    task_id: str
    digest: str


@dataclass(frozen=True)
class Lineage:
    root: str
    chain: Tuple[LineageEntry, ...] = ()
    # (parent digest, lambda) pairs of the latest merge, if any
    sources: Tuple[Tuple[str, float], ...] = ()

    def extend(self, task_id: str, digest: str) -> "Lineage":
        return Lineage(self.root, self.chain + (LineageEntry(task_id, digest),))

    def to_payload(self) -> Dict:
        payload = {"root": self.root, "chain": [[e.task_id, e.digest] for e in self.chain]}
        if self.sources:
            payload["sources"] = [[d, lam] for d, lam in self.sources]
        return payload

    @classmethod
    def from_payload(cls, payload: Dict) -> "Lineage":
        chain = tuple(LineageEntry(str(t), str(d)) for t, d in payload.get("chain", []))
        sources = tuple((str(d), float(lam)) for d, lam in payload.get("sources", []))
        return cls(str(payload["root"]), chain, sources)

    def digest(self) -> str:
        return stable_digest(self.to_payload())

    def extends(self, parent: "Lineage") -> bool:
        """True if this lineage is `parent` plus appended entries"""
        n = len(parent.chain)
        return self.root == parent.root and self.chain[:n] == parent.chain


@dataclass(frozen=True)
class Checkpoint:
    """theta = (w, phi): featurizer blocks phi, classifier blocks w, lineage and step"""

    featurizer: Tuple[ParamBlock, ...]
    classifier: Tuple[ParamBlock, ...]
    lineage: Lineage = field(default_factory=lambda: Lineage("scratch"))
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "featurizer", tuple(self.featurizer))
        object.__setattr__(self, "classifier", tuple(self.classifier))
        names = [b.name for b in self.blocks()]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise IncompatibleError(f"duplicate block names: {dupes}")
        if self.step < 0:
            raise CheckpointFormatError(f"negative step {self.step}")

    def blocks(self) -> Iterator[ParamBlock]:
        yield from self.featurizer
        yield from self.classifier

    def sections(self) -> Iterator[Tuple[str, Tuple[ParamBlock, ...]]]:
        yield "featurizer", self.featurizer
        yield "classifier", self.classifier

    def block(self, name: str) -> ParamBlock:
        for b in self.blocks():
            if b.name == name:
                return b
        raise KeyError(name)

    def flat(self) -> np.ndarray:
        """All values concatenated, featurizer first, in block order"""
        parts = [b.values.ravel() for b in self.blocks()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def num_params(self) -> int:
        return sum(b.size for b in self.blocks())

    def with_classifier(self, classifier: Sequence[ParamBlock]) -> "Checkpoint":
        return replace(self, classifier=tuple(classifier))

    def with_lineage(self, lineage: Lineage, step: Optional[int] = None) -> "Checkpoint":
        return replace(self, lineage=lineage, step=self.step if step is None else step)

    def map_values(self, fn) -> "Checkpoint":
        """Apply fn(name, values) -> values to every block"""
        return replace(
            self,
            featurizer=tuple(b.with_values(fn(b.name, b.values)) for b in self.featurizer),
            classifier=tuple(b.with_values(fn(b.name, b.values)) for b in self.classifier),
        )

    def bit_equal(self, other: "Checkpoint", include_metadata: bool = True) -> bool:
        if len(self.featurizer) != len(other.featurizer) or len(self.classifier) != len(other.classifier):
            return False
        same = all(a.bit_equal(b) for a, b in zip(self.blocks(), other.blocks()))
        if include_metadata:
            same = same and self.lineage == other.lineage and self.step == other.step
        return same


def _signature(blocks: Sequence[ParamBlock]) -> Dict[str, Tuple[int, ...]]:
    return {b.name: b.shape for b in blocks}


def validate_compatible(a: Checkpoint, b: Checkpoint) -> bool:
    """Same block names and per-name shapes in both sections"""
    return (_signature(a.featurizer) == _signature(b.featurizer)
            and _signature(a.classifier) == _signature(b.classifier))


def require_compatible(models: Sequence[Checkpoint]):
    for i, m in enumerate(models[1:], start=1):
        if not validate_compatible(models[0], m):
            raise IncompatibleError(f"checkpoint {i} is incompatible with checkpoint 0")


def param_distance(a: Checkpoint, b: Checkpoint) -> float:
    """Euclidean norm of a - b over every block"""
    require_compatible([a, b])
    total = 0.0
    for section, blocks in a.sections():
        other = {blk.name: blk for blk in getattr(b, section)}
        for blk in blocks:
            diff = blk.values - other[blk.name].values
            total += float(np.dot(diff.ravel(), diff.ravel()))
    return float(np.sqrt(total))


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]):
    """Write ckpt in the RATA v1 format (little-endian, float64 payload)"""
    entries: List[Dict] = []
    payload: List[np.ndarray] = []
    offset = 0
    for section, blocks in ckpt.sections():
        for b in blocks:
            if not np.all(np.isfinite(b.values)):
                raise CheckpointFormatError(f"non-finite parameter in block '{b.name}'")
            entries.append({"section": section, "name": b.name, "shape": list(b.shape),
                            "offset": offset, "count": b.size})
            payload.append(b.values.ravel().astype("<f8"))
            offset += b.size

    header = _canonical_json({"blocks": entries, "lineage": ckpt.lineage.to_payload(), "step": ckpt.step})
    header_bytes = header.encode("utf-8")
    body = np.concatenate(payload).tobytes() if payload else b""

    path = Path(path)
    with open(path, "wb") as f:
        f.write(_PREAMBLE.pack(MAGIC, VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(body)
    logger.debug("saved checkpoint %s (%d floats)", path, offset)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    data = Path(path).read_bytes()
    return decode_checkpoint(data)


def _header_field(header: Dict, key: str, kind):
    if key not in header:
        raise CheckpointFormatError(f"header is missing '{key}'")
    value = header[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise CheckpointFormatError(f"header field '{key}' has type {type(value).__name__}")
    return value


def _block_entry(entry) -> Tuple[str, str, Tuple[int, ...], int, int]:
    if not isinstance(entry, dict):
        raise CheckpointFormatError(f"block entry must be an object, got {type(entry).__name__}")
    try:
        section, name = str(entry["section"]), str(entry["name"])
        shape = tuple(int(d) for d in entry["shape"])
        count, offset = int(entry["count"]), int(entry["offset"])
    except KeyError as e:
        raise CheckpointFormatError(f"block entry is missing {e}")
    except (TypeError, ValueError) as e:
        raise CheckpointFormatError(f"malformed block entry: {e}")
    if any(d < 0 for d in shape):
        raise CheckpointFormatError(f"negative dimension in shape {shape} of block '{name}'")
    if offset < 0 or count < 0:
        raise CheckpointFormatError(f"negative offset or count in block '{name}'")
    if count != int(np.prod(shape, dtype=np.int64)):
        raise CheckpointFormatError(f"shape/length mismatch for block '{name}'")
    if section not in SECTIONS:
        raise CheckpointFormatError(f"unknown section '{section}'")
    return section, name, shape, count, offset


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _PREAMBLE.size or data[:4] != MAGIC:
        raise CheckpointFormatError("bad magic")
    _, version, header_len = _PREAMBLE.unpack_from(data)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}")
    start = _PREAMBLE.size + header_len
    if len(data) < start:
        raise CheckpointFormatError("truncated header")
    try:
        header = json.loads(data[_PREAMBLE.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"unreadable header: {e}")
    if not isinstance(header, dict):
        raise CheckpointFormatError(f"header must be a JSON object, got {type(header).__name__}")
    entries = _header_field(header, "blocks", list)
    lineage = _header_field(header, "lineage", dict)
    step = _header_field(header, "step", int)

    body = data[start:]
    if len(body) % 8:
        raise CheckpointFormatError("truncated payload")
    available = len(body) // 8
    floats = np.frombuffer(body, dtype="<f8")

    required = 0
    sections: Dict[str, List[ParamBlock]] = {s: [] for s in SECTIONS}
    for entry in entries:
        section, name, shape, count, offset = _block_entry(entry)
        required = max(required, offset + count)
        if offset + count > available:
            raise CheckpointFormatError(
                f"truncated payload: block '{name}' needs {offset + count} floats, file has {available}")
        values = floats[offset:offset + count].astype(np.float64).reshape(shape)
        sections[section].append(ParamBlock(name, values))
    if required != available:
        raise CheckpointFormatError(f"payload length mismatch: header covers {required} floats, file has {available}")

    try:
        lineage = Lineage.from_payload(lineage)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"malformed lineage: {e}")
    try:
        ckpt = Checkpoint(
            featurizer=tuple(sections["featurizer"]),
            classifier=tuple(sections["classifier"]),
            lineage=lineage,
            step=step,
        )
    except IncompatibleError as e:
        raise CheckpointFormatError(str(e))
    for b in ckpt.blocks():
        if not np.all(np.isfinite(b.values)):
            raise CheckpointFormatError(f"non-finite parameter in block '{b.name}'")
    return ckpt
