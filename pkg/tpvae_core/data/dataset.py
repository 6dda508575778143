"""
Embedding datasets: the labeled feature vectors episodes are drawn from.

Features come either from the synthetic Gaussian-mixture generator or from
pre-extracted backbone features stored as FSE1 binary or CSV files.
"""

import csv
import hashlib
import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np

from ..errors import DimensionError, ParseError
from ..utils.numerics import RngStream, StreamPurpose

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FSE1_MAGIC = b"FSE1"
FSE1_VERSION = 1
# magic, version, class_count, dim, record_count
FSE1_HEADER = struct.Struct("<4sIIIQ")

FORMATS = ("fse1", "csv")


@dataclass(frozen=True, eq=False)
class EmbeddingDataset:
    """
    Labeled feature vectors grouped by class.

    Attributes:
        dim: Feature dimension shared by every vector
        class_ids: Class identifiers in first-appearance order
        features: One read-only (n_c, dim) float64 matrix per class
    """

    dim: int
    class_ids: Tuple[int, ...]
    features: Tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        if self.dim <= 0:
            raise DimensionError(f"dataset dimension must be positive, got {self.dim}")
        if len(self.class_ids) != len(self.features):
            raise DimensionError("class_ids and features differ in length")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("class ids must be unique")
        frozen = []
        for class_id, block in zip(self.class_ids, self.features):
            block = np.array(block, dtype=np.float64)
            if block.ndim != 2 or block.shape[1] != self.dim:
                raise DimensionError(f"class {class_id}: features have shape {block.shape}, expected (n, {self.dim})")
            if block.shape[0] == 0:
                raise ValueError(f"class {class_id} has no features")
            if not np.all(np.isfinite(block)):
                raise ValueError(f"class {class_id} has non-finite features")
            block.flags.writeable = False
            frozen.append(block)
        object.__setattr__(self, "features", tuple(frozen))
        object.__setattr__(self, "_index", {cid: i for i, cid in enumerate(self.class_ids)})

    @classmethod
    def from_records(cls, labels: Sequence[int], vectors: np.ndarray) -> "EmbeddingDataset":
        """Group flat (label, vector) records by class, keeping first-appearance order."""
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionError(f"records must form a 2-D matrix, got shape {vectors.shape}")
        labels = [int(label) for label in labels]
        groups: Dict[int, List[int]] = {}
        for row, label in enumerate(labels):
            groups.setdefault(label, []).append(row)
        class_ids = tuple(groups)
        features = tuple(vectors[groups[cid]] for cid in class_ids)
        return cls(dim=vectors.shape[1], class_ids=class_ids, features=features)

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    @property
    def num_records(self) -> int:
        return sum(block.shape[0] for block in self.features)

    def class_features(self, class_id: int) -> np.ndarray:
        return self.features[self._index[class_id]]

    def class_sizes(self) -> Dict[int, int]:
        return {cid: block.shape[0] for cid, block in zip(self.class_ids, self.features)}

    def iter_records(self) -> Iterator[Tuple[int, np.ndarray]]:
        for class_id, block in zip(self.class_ids, self.features):
            for vector in block:
                yield class_id, vector

    def fingerprint(self) -> str:
        """SHA-256 over dimension, class ids and float64 content."""
        digest = hashlib.sha256()
        digest.update(struct.pack("<I", self.dim))
        for class_id, block in zip(self.class_ids, self.features):
            digest.update(struct.pack("<IQ", class_id, block.shape[0]))
            digest.update(np.ascontiguousarray(block, dtype="<f8").tobytes())
        return digest.hexdigest()

    def equals(self, other: "EmbeddingDataset") -> bool:
        """Bitwise equality of ids, order and feature values."""
        if self.dim != other.dim or self.class_ids != other.class_ids:
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.features, other.features)
        )


@dataclass(frozen=True)
class SynthSpec:
    """
    Gaussian-mixture generator settings.

    Attributes:
        num_classes: Number of classes (>= 2)
        dim: Feature dimension
        per_class: Vectors drawn per class
        separation: Typical distance between class means, in units of the
            within-class standard deviation
        seed: Generator seed
    """

    num_classes: int
    dim: int
    per_class: int
    separation: float
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.per_class <= 0:
            raise ValueError(f"per_class must be positive, got {self.per_class}")
        if not self.separation >= 0:
            raise ValueError(f"separation must be non-negative, got {self.separation}")


def gen_synthetic(spec: SynthSpec) -> EmbeddingDataset:
    """
    Generate an isotropic Gaussian mixture.

    Class means have uniformly random directions and radius
    separation / sqrt(2), so in high dimension their pairwise distances
    concentrate near ``separation``. Within-class noise is unit-variance.
    Values are rounded to float32 precision so they survive an FSE1 round trip.
    """
    rng = RngStream(spec.seed, 0).child(StreamPurpose.SYNTHETIC)
    directions = rng.standard_normal((spec.num_classes, spec.dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    means = directions / norms * (spec.separation / math.sqrt(2.0))

    features = []
    for k in range(spec.num_classes):
        block = means[k] + rng.standard_normal((spec.per_class, spec.dim))
        features.append(block.astype(np.float32).astype(np.float64))

    logger.info(
        f"Generated synthetic dataset: {spec.num_classes} classes x {spec.per_class} vectors, "
        f"dim {spec.dim}, separation {spec.separation}"
    )
    return EmbeddingDataset(dim=spec.dim, class_ids=tuple(range(spec.num_classes)), features=tuple(features))


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("class_id", "<u4"), ("features", "<f4", (dim,))])


def encode_fse1(ds: EmbeddingDataset) -> bytes:
    """Serialize a dataset to FSE1 bytes (features stored as float32)."""
    records = np.empty(ds.num_records, dtype=_record_dtype(ds.dim))
    row = 0
    for class_id, block in zip(ds.class_ids, ds.features):
        n = block.shape[0]
        records["class_id"][row:row + n] = class_id
        records["features"][row:row + n] = block.astype(np.float32)
        row += n
    header = FSE1_HEADER.pack(FSE1_MAGIC, FSE1_VERSION, ds.num_classes, ds.dim, ds.num_records)
    return header + records.tobytes()


def decode_fse1(data: bytes) -> EmbeddingDataset:
    """
    Parse FSE1 bytes.

    Raises:
        ParseError: naming the byte offset of the first problem found
    """
    if len(data) < 4 or data[:4] != FSE1_MAGIC:
        raise ParseError(f"bad magic {data[:4]!r}, expected {FSE1_MAGIC!r}", offset=0)
    if len(data) < FSE1_HEADER.size:
        raise ParseError("truncated header", offset=len(data))
    _, version, class_count, dim, record_count = FSE1_HEADER.unpack_from(data, 0)
    if version != FSE1_VERSION:
        raise ParseError(f"unsupported version {version}", offset=4)
    if dim == 0:
        raise ParseError("dimension must be positive", offset=12)
    if record_count == 0:
        raise ParseError("file holds no records", offset=16)

    body = len(data) - FSE1_HEADER.size
    record_size = 4 + 4 * dim
    if body < record_size:
        raise ParseError(f"dimension {dim} implies {record_size}-byte records, file body holds {body} bytes", offset=12)
    try:
        dtype = _record_dtype(dim)
    except ValueError as e:
        raise ParseError(f"unsupported dimension {dim}: {e}", offset=12)
    expected = record_count * dtype.itemsize
    if body < expected:
        complete = body // dtype.itemsize
        raise ParseError(
            f"truncated file: {complete} of {record_count} records present",
            offset=FSE1_HEADER.size + complete * dtype.itemsize,
        )
    if body > expected:
        raise ParseError("trailing bytes after last record", offset=FSE1_HEADER.size + expected)

    records = np.frombuffer(data, dtype=dtype, count=record_count, offset=FSE1_HEADER.size)
    vectors = records["features"].astype(np.float64)
    bad = np.flatnonzero(~np.all(np.isfinite(vectors), axis=1))
    if bad.size:
        raise ParseError("non-finite feature value", offset=FSE1_HEADER.size + int(bad[0]) * dtype.itemsize + 4)
    labels = records["class_id"].tolist()
    distinct = len(set(labels))
    if distinct != class_count:
        raise ParseError(f"header declares {class_count} classes, records hold {distinct}", offset=8)
    return EmbeddingDataset.from_records(labels, vectors)


def _format_float(x: float) -> str:
    # repr gives the shortest string that round-trips
    return repr(float(x))


def write_csv(ds: EmbeddingDataset, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["class_id"] + [f"f{j}" for j in range(ds.dim)])
        for class_id, vector in ds.iter_records():
            writer.writerow([class_id] + [_format_float(x) for x in vector])


def read_csv(path: PathLike) -> EmbeddingDataset:
    """
    Parse a CSV embedding file; the header row is optional.

    Raises:
        ParseError: naming the 1-based line of the first problem found
    """
    labels: List[int] = []
    vectors: List[List[float]] = []
    dim = None
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"invalid UTF-8: {e.reason}", line=raw.count(b"\n", 0, e.start) + 1)
    with io.StringIO(text, newline="") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if line_no == 1 and row[0].strip() == "class_id":
                dim = len(row) - 1
                if dim <= 0:
                    raise ParseError("header declares no feature columns", line=line_no)
                continue
            if dim is None:
                dim = len(row) - 1
                if dim <= 0:
                    raise ParseError("row has no feature columns", line=line_no)
            if len(row) != dim + 1:
                raise ParseError(f"ragged row: {len(row) - 1} features, expected {dim}", line=line_no)
            try:
                class_id = int(row[0])
            except ValueError:
                raise ParseError(f"class_id {row[0]!r} is not an integer", line=line_no)
            if class_id < 0 or class_id > 0xFFFFFFFF:
                raise ParseError(f"class_id {class_id} out of range", line=line_no)
            try:
                vector = [float(cell) for cell in row[1:]]
            except ValueError as e:
                raise ParseError(f"bad feature value: {e}", line=line_no)
            if not all(math.isfinite(x) for x in vector):
                raise ParseError("non-finite feature value", line=line_no)
            labels.append(class_id)
            vectors.append(vector)
    if not vectors:
        raise ParseError("file holds no records", line=1)
    return EmbeddingDataset.from_records(labels, np.array(vectors, dtype=np.float64))


def detect_format(path: PathLike) -> str:
    return "csv" if str(path).lower().endswith(".csv") else "fse1"


def load_dataset(path: PathLike, format: str = None) -> EmbeddingDataset:
    """
    Load an embedding dataset from disk.

    Args:
        path: File to read
        format: 'fse1' or 'csv'; detected from the extension when omitted

    Returns:
        The parsed dataset
    """
    format = format or detect_format(path)
    if format not in FORMATS:
        raise ValueError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    if format == "csv":
        ds = read_csv(path)
    else:
        ds = decode_fse1(Path(path).read_bytes())
    logger.info(f"Loaded {format} dataset {path}: {ds.num_classes} classes, {ds.num_records} records, dim {ds.dim}")
    return ds


def save_dataset(ds: EmbeddingDataset, path: PathLike, format: str = None) -> None:
    format = format or detect_format(path)
    if format not in FORMATS:
        raise ValueError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    if format == "csv":
        write_csv(ds, path)
    else:
        Path(path).write_bytes(encode_fse1(ds))
    logger.info(f"Wrote {format} dataset to {path}")


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
