"""Data ingestion and results persistence.

IDX is the big-endian binary format MNIST ships in: a 4-byte magic
(0x00000803 for image files, 0x00000801 for label files), one 4-byte
big-endian count per dimension, then the raw uint8 payload.  ``.gz`` files
are decompressed transparently.  Images come back unit-scaled to [0, 1].

Results go to a CSV (RFC-4180 style, '.' decimal separator, header row)
plus a JSON sidecar with the config hash and provenance; the CSV bytes are a
pure function of the table contents, so identical configs reproduce
identical files.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset
from .exceptions import BadMagic, CountMismatch, ParseError, TruncatedFile

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _read_be32(buf: bytes, offset: int, path) -> int:
    if offset + 4 > len(buf):
        raise TruncatedFile(f"{path}: header ends at byte {len(buf)}")
    return struct.unpack(">I", buf[offset:offset + 4])[0]


def load_idx_images(path) -> np.ndarray:
    """Images from an IDX file as float64 arrays in [0, 1], shape (n, H, W)."""
    buf = _read_bytes(path)
    magic = _read_be32(buf, 0, path)
    if magic != IMAGE_MAGIC:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
    count = _read_be32(buf, 4, path)
    rows = _read_be32(buf, 8, path)
    cols = _read_be32(buf, 12, path)
    payload = buf[16:]
    expected = count * rows * cols
    if len(payload) < expected:
        raise TruncatedFile(
            f"{path}: payload {len(payload)} bytes, header promises {expected}"
        )
    pixels = np.frombuffer(payload[:expected], dtype=np.uint8)
    return pixels.reshape(count, rows, cols).astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    """Labels from an IDX file as an int array of shape (n,)."""
    buf = _read_bytes(path)
    magic = _read_be32(buf, 0, path)
    if magic != LABEL_MAGIC:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
    count = _read_be32(buf, 4, path)
    payload = buf[8:]
    if len(payload) < count:
        raise TruncatedFile(
            f"{path}: payload {len(payload)} bytes, header promises {count}"
        )
    return np.frombuffer(payload[:count], dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Load a matching image/label IDX pair; counts must agree."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(
            f"{images.shape[0]} images vs {labels.shape[0]} labels"
        )
    return images, labels


def load_csv_dataset(path) -> LabeledDataset:
    """Numeric CSV with a header row; the final column is the label."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(header) < 2:
            raise ParseError(f"{path}: need at least one feature column")
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise ParseError(
                    f"{path}: line {lineno}: {len(record)} cells, "
                    f"expected {len(header)}"
                )
            try:
                rows.append([float(cell) for cell in record])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    return LabeledDataset(arr[:, :-1], arr[:, -1])


def config_hash(experiment: str, parameters: dict) -> str:
    """Reproducible hash of a canonicalised experiment config."""
    canon = json.dumps({"experiment": experiment, "parameters": parameters},
                       sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


@dataclass
class ResultsTable:
    """Ordered rows conforming to a fixed schema, plus run metadata."""

    schema: list[str]
    rows: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def append(self, row: dict):
        missing = set(self.schema) - set(row)
        extra = set(row) - set(self.schema)
        if missing or extra:
            raise ValueError(f"row does not conform to schema: "
                             f"missing={sorted(missing)}, extra={sorted(extra)}")
        self.rows.append(row)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(self.schema)
            for row in self.rows:
                writer.writerow([_format_cell(row[col]) for col in self.schema])

    def write_sidecar(self, path):
        with open(path, "w") as f:
            json.dump(self.metadata, f, indent=2, sort_keys=True)
            f.write("\n")
