"""Binary feature files, JSON-Lines manifests and model checkpoints.

All on-disk numbers are little-endian regardless of host byte order.

Feature file (``MFH1``)::

    "MFH1" | u32 rows | u32 cols | rows*cols float32, row-major

Checkpoint (``MFC1``)::

    "MFC1" | u32 count | count x (u16 name_len | name | u8 ndim | ndim x u32 | float32 data)

The first checkpoint entry, ``__config__``, holds the model configuration as
UTF-8 JSON zero-padded to a multiple of four bytes and stored as a 1-D
entry whose single dimension is the padded byte length.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np

from .errors import (
    BadMagicError,
    CheckpointError,
    EmptyFeatureError,
    FeatureFileError,
    ManifestError,
    MissingParameterError,
    ParameterShapeError,
    TruncatedPayloadError,
)
from .model import MfhcaModel, ModelConfig

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"MFH1"
CHECKPOINT_MAGIC = b"MFC1"
CONFIG_ENTRY = "__config__"

LABELS: tuple[str, ...] = ("neutral", "sad", "happy", "angry")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}

_FLOAT = np.dtype("<f4")
_FEATURE_HEADER = struct.Struct("<4sII")


# -- feature files -----------------------------------------------------------


def write_feature_file(path: str | Path, seq: np.ndarray) -> None:
    matrix = np.asarray(seq)
    if matrix.ndim != 2:
        raise FeatureFileError(f"{path}: feature sequence must be T×D, got {matrix.shape}")
    rows, cols = matrix.shape
    if rows == 0:
        raise EmptyFeatureError(f"{path}: feature sequence has zero rows")
    if not np.all(np.isfinite(matrix)):
        raise FeatureFileError(f"{path}: feature sequence contains NaN/Inf")
    with open(path, "wb") as f:
        f.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, rows, cols))
        f.write(np.ascontiguousarray(matrix, dtype=_FLOAT).tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    """Read an MFH1 matrix as native-order float32."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise FeatureFileError(f"{path}: {e}") from e
    if raw[:4] != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(raw) < _FEATURE_HEADER.size:
        raise TruncatedPayloadError(f"{path}: header is {len(raw)} bytes, expected 12")
    _, rows, cols = _FEATURE_HEADER.unpack_from(raw)
    if rows == 0:
        raise EmptyFeatureError(f"{path}: feature file has zero rows")
    expected = _FEATURE_HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise TruncatedPayloadError(
            f"{path}: {len(raw)} bytes on disk, header {rows}x{cols} needs {expected}"
        )
    data = np.frombuffer(raw, dtype=_FLOAT, offset=_FEATURE_HEADER.size).reshape(rows, cols)
    matrix = data.astype(np.float32)
    if not np.all(np.isfinite(matrix)):
        raise FeatureFileError(f"{path}: feature file contains NaN/Inf")
    return matrix


# -- manifests ---------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    speaker_id: str
    session: str
    label: str
    wav_path: str
    feature_path: str

    @property
    def label_index(self) -> int:
        return LABEL_INDEX[self.label]

    def to_dict(self) -> dict[str, str]:
        return asdict(self)


_MANIFEST_FIELDS = tuple(ManifestEntry.__dataclass_fields__)


def _entry_from_line(obj: Any, lineno: int) -> ManifestEntry:
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: expected a JSON object")
    missing = [k for k in _MANIFEST_FIELDS if k not in obj]
    if missing:
        raise ManifestError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    values = {k: obj[k] for k in _MANIFEST_FIELDS}
    for key, value in values.items():
        if not isinstance(value, str):
            raise ManifestError(f"line {lineno}: field {key} must be a string")
    label = values["label"]
    if label == "excited":
        raise ManifestError(
            f"line {lineno}: label 'excited' is not a class; merge it into 'happy' "
            "before building the manifest"
        )
    if label not in LABEL_INDEX:
        raise ManifestError(
            f"line {lineno}: unknown label {label!r} (expected one of {', '.join(LABELS)})"
        )
    for key in ("utterance_id", "wav_path", "feature_path"):
        if not values[key]:
            raise ManifestError(f"line {lineno}: {key} must be non-empty")
    return ManifestEntry(**values)


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse and validate a JSON-Lines manifest. Blank lines are ignored."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"{path}: {e}") from e

    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}: line {lineno}: malformed JSON ({e.msg})") from e
        try:
            entry = _entry_from_line(obj, lineno)
        except ManifestError as e:
            raise ManifestError(f"{path}: {e}") from e
        if entry.utterance_id in seen:
            raise ManifestError(
                f"{path}: line {lineno}: duplicate utterance_id {entry.utterance_id!r} "
                f"(first on line {seen[entry.utterance_id]})"
            )
        seen[entry.utterance_id] = lineno
        entries.append(entry)
    logger.debug("loaded %d manifest entries from %s", len(entries), path)
    return entries


def save_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry.to_dict()) + "\n")


def resolve_path(entry_path: str, base_dir: str | Path) -> Path:
    """Manifest paths are relative to the manifest's directory unless absolute."""
    p = Path(entry_path)
    return p if p.is_absolute() else Path(base_dir) / p


# -- checkpoints -------------------------------------------------------------


def _write_entry(f: BinaryIO, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<B", array.ndim))
    f.write(struct.pack(f"<{array.ndim}I", *array.shape))
    f.write(np.ascontiguousarray(array, dtype=_FLOAT).tobytes())


def _config_payload(config: ModelConfig) -> bytes:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return blob + b"\0" * (-len(blob) % 4)


def save_checkpoint(path: str | Path, model: MfhcaModel) -> None:
    state = model.state_dict()
    config_blob = _config_payload(model.config)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(state) + 1))
        # ndim 1, dim = byte length of the padded JSON
        encoded = CONFIG_ENTRY.encode("utf-8")
        f.write(struct.pack("<H", len(encoded)) + encoded)
        f.write(struct.pack("<BI", 1, len(config_blob)))
        f.write(config_blob)
        for name, array in state.items():
            _write_entry(f, name, array)
    logger.debug("saved %d tensors to %s", len(state), path)


class _Reader:
    def __init__(self, raw: bytes, path: Path) -> None:
        self.raw = raw
        self.path = path
        self.offset = 0

    def take(self, fmt: str) -> tuple[Any, ...]:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte {self.offset}")
        values = struct.unpack_from(fmt, self.raw, self.offset)
        self.offset += size
        return values

    def take_bytes(self, n: int) -> bytes:
        if self.offset + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte {self.offset}")
        chunk = self.raw[self.offset : self.offset + n]
        self.offset += n
        return chunk


def read_checkpoint(path: str | Path) -> tuple[dict[str, Any] | None, dict[str, np.ndarray]]:
    """Return the stored config dict (if any) and the named float32 tensors."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"{path}: {e}") from e
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    reader = _Reader(raw, path)
    reader.offset = 4
    (count,) = reader.take("<I")
    config: dict[str, Any] | None = None
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.take("<H")
        try:
            name = reader.take_bytes(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(
                f"{path}: tensor name is not UTF-8 at offset {reader.offset}"
            ) from e
        (ndim,) = reader.take("<B")
        dims = reader.take(f"<{ndim}I") if ndim else ()
        if name == CONFIG_ENTRY:
            if ndim != 1:
                raise CheckpointError(f"{path}: configuration entry must be 1-D, got ndim {ndim}")
            blob = reader.take_bytes(dims[0])
            try:
                config = json.loads(blob.rstrip(b"\0").decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise CheckpointError(f"{path}: corrupt configuration entry") from e
            continue
        count_values = int(np.prod(dims, dtype=np.int64))
        data = reader.take_bytes(4 * count_values)
        tensors[name] = np.frombuffer(data, dtype=_FLOAT).reshape(dims).astype(np.float32)
    if reader.offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - reader.offset} trailing bytes")
    return config, tensors


def load_state(model: MfhcaModel, tensors: dict[str, np.ndarray], source: str = "") -> None:
    """Copy checkpoint tensors into ``model`` after checking names and shapes."""
    expected = model.state_dict()
    for name, array in expected.items():
        if name not in tensors:
            raise MissingParameterError(f"{source}: checkpoint lacks parameter {name!r}")
        if tensors[name].shape != array.shape:
            raise ParameterShapeError(
                f"{source}: parameter {name!r} has shape {tensors[name].shape}, "
                f"model configuration expects {array.shape}"
            )
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise CheckpointError(f"{source}: unexpected tensors {', '.join(extra)}")
    model.load_state_dict(tensors)


def load_checkpoint(path: str | Path, config: ModelConfig | None = None) -> MfhcaModel:
    """Rebuild a model from a checkpoint, using its stored configuration unless given one."""
    stored, tensors = read_checkpoint(path)
    if config is None:
        if stored is None:
            raise CheckpointError(f"{path}: no stored configuration; pass one explicitly")
        try:
            config = ModelConfig.from_dict(stored)
        except (KeyError, TypeError) as e:
            raise CheckpointError(f"{path}: stored configuration is invalid: {e}") from e
    model = MfhcaModel(config)
    load_state(model, tensors, str(path))
    model.eval()
    return model
