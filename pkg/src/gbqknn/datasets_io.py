"""Dataset ingestion, quantization to the encodable range, synthetic blobs."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import DataError
from .granular_ball import LabeledPoint

log = logging.getLogger(__name__)

Column = Union[int, str]


@dataclass
class DatasetSpec:
    """Where a dataset comes from and which columns hold what.

    Columns are given by header name or zero-based position. With
    ``feature_columns`` empty, every column except the label is a feature.
    """

    source: str
    label_column: Column = -1
    feature_columns: list[Column] = field(default_factory=list)
    has_header: bool = True
    bounds: Optional[list[tuple[float, float]]] = None


@dataclass(frozen=True)
class Record:
    features: tuple[float, ...]
    label: str


def _resolve(col: Column, header: Optional[list[str]], width: int, line: int) -> int:
    if isinstance(col, str) and not col.lstrip("-").isdigit():
        if header is None or col not in header:
            raise DataError(f"unknown column {col!r}")
        return header.index(col)
    pos = int(col)
    if pos < 0:
        pos += width
    if not 0 <= pos < width:
        raise DataError(f"unknown column {col!r} (line {line} has {width} columns)")
    return pos


def load_csv(path: Union[str, Path], spec: Optional[DatasetSpec] = None) -> list[Record]:
    """Parse a comma-separated file into feature/label records."""
    path = Path(path)
    spec = spec or DatasetSpec(str(path))
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    records: list[Record] = []
    with handle:
        reader = csv.reader(handle)
        header = None
        label_pos = feature_pos = None
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            row = [c.strip() for c in row]
            if spec.has_header and header is None:
                header = row
                continue
            if label_pos is None:
                width = len(header) if header else len(row)
                label_pos = _resolve(spec.label_column, header, width, line)
                if spec.feature_columns:
                    feature_pos = [_resolve(c, header, width, line) for c in spec.feature_columns]
                else:
                    feature_pos = [i for i in range(width) if i != label_pos]
                if label_pos in feature_pos:
                    raise DataError("label column is also listed as a feature")
                if not feature_pos:
                    raise DataError("no feature columns")
            expected = len(header) if header else (max(feature_pos + [label_pos]) + 1)
            if len(row) < expected:
                raise DataError(f"line {line}: expected {expected} columns, got {len(row)}")
            values = []
            for pos in feature_pos:
                try:
                    values.append(float(row[pos]))
                except ValueError:
                    name = header[pos] if header else str(pos)
                    raise DataError(
                        f"line {line}, column {name!r}: non-numeric feature {row[pos]!r}"
                    ) from None
            records.append(Record(tuple(values), row[label_pos]))
    return records


def label_mapping(labels: Iterable[str]) -> list[str]:
    """Sorted distinct labels; numeric labels sort numerically."""
    distinct = set(labels)

    def key(s: str):
        try:
            return (0, float(s), s)
        except ValueError:
            return (1, 0.0, s)

    return sorted(distinct, key=key)


@dataclass
class Quantizer:
    """Maps raw feature values linearly onto ``[0, 2**bits - 1]``."""

    bits: int
    bounds: list[tuple[float, float]]
    clamped: int = 0

    @classmethod
    def fit(cls, rows: np.ndarray, bits: int) -> Quantizer:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise DataError("cannot fit bounds on an empty dataset")
        return cls(bits, [(float(lo), float(hi)) for lo, hi in zip(rows.min(0), rows.max(0))])

    def __post_init__(self) -> None:
        if self.bits < 1:
            raise DataError("bits must be positive")
        self.bounds = [(float(lo), float(hi)) for lo, hi in self.bounds]

    def check_explicit(self) -> None:
        for j, (lo, hi) in enumerate(self.bounds):
            if not lo < hi:
                raise DataError(f"feature {j}: bounds need min < max, got ({lo}, {hi})")

    def transform(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[1] != len(self.bounds):
            raise DataError(f"expected {len(self.bounds)} features, got {rows.shape[1]}")
        top = 2**self.bits - 1
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        span = hi - lo
        constant = span == 0
        scaled = (rows - lo) / np.where(constant, 1.0, span) * top
        scaled[:, constant] = 0.0
        q = np.rint(scaled)
        outside = ((rows < lo) | (rows > hi)) & ~constant
        n_out = int(outside.sum())
        if n_out:
            self.clamped += n_out
            log.warning("clamped %d feature values outside the quantization bounds", n_out)
        return np.clip(q, 0, top).astype(np.int64)


def quantize_dataset(
    records: Sequence[Record],
    bits: int,
    bounds: Optional[Union[Quantizer, Sequence[tuple[float, float]]]] = None,
    labels: Optional[Sequence[str]] = None,
) -> tuple[list[LabeledPoint], Quantizer, list[str]]:
    """Quantize records into labeled integer points.

    `bounds` may be explicit per-feature ``(min, max)`` pairs, a fitted
    :class:`Quantizer`, or ``None`` to compute them from the records. Labels
    are mapped to their position in `labels` (default: sorted distinct).
    Returns the points, the quantizer used and the label list.
    """
    if isinstance(bounds, Quantizer):
        quantizer = bounds
    elif bounds is None:
        if not records:
            raise DataError("cannot compute bounds of an empty dataset")
        quantizer = Quantizer.fit(np.asarray([r.features for r in records]), bits)
    else:
        quantizer = Quantizer(bits, list(bounds))
        quantizer.check_explicit()
    labels = list(labels) if labels is not None else label_mapping(r.label for r in records)
    index = {lab: i for i, lab in enumerate(labels)}
    if not records:
        return [], quantizer, labels
    q = quantizer.transform(np.asarray([r.features for r in records]))
    points = []
    for row, rec in zip(q, records):
        if rec.label not in index:
            raise DataError(f"unknown label {rec.label!r}")
        points.append(LabeledPoint(tuple(row.tolist()), index[rec.label]))
    return points, quantizer, labels


def make_blobs(
    n_per_class: int,
    classes: int,
    d: int,
    separation: float,
    spread: float,
    seed: int,
) -> list[Record]:
    """Isotropic Gaussian clusters, one per class, pairwise `separation` apart.

    With ``classes <= d`` the centers sit on scaled unit axes; otherwise they
    are laid out on a line, so every pair is at least `separation` apart.
    """
    if n_per_class < 1 or classes < 1 or d < 1:
        raise DataError("n_per_class, classes and d must be positive")
    if separation < 0 or spread <= 0:
        raise DataError("separation must be >= 0 and spread > 0")
    rng = np.random.default_rng(seed)
    centers = np.zeros((classes, d))
    for c in range(classes):
        if classes <= d:
            centers[c, c] = separation / np.sqrt(2.0)
        else:
            centers[c, 0] = separation * c
    records = []
    for c in range(classes):
        pts = centers[c] + spread * rng.standard_normal((n_per_class, d))
        records.extend(Record(tuple(p.tolist()), str(c)) for p in pts)
    order = rng.permutation(len(records))
    return [records[i] for i in order]


def train_test_split(
    items: Sequence, test_fraction: float, seed: int
) -> tuple[list, list]:
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(items))
    cut = int(round(len(items) * (1.0 - test_fraction)))
    return [items[i] for i in order[:cut]], [items[i] for i in order[cut:]]


def write_records(path: Union[str, Path], rows: Iterable[dict], header: dict) -> None:
    """Line-delimited JSON: one header object, then one object per record."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_records(path: Union[str, Path]) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DataError(f"{path}: empty record file")
    try:
        header = json.loads(lines[0])["header"]
        rows = [json.loads(line) for line in lines[1:] if line.strip()]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed record file: {exc}") from exc
    return header, rows


def points_to_rows(points: Sequence[LabeledPoint]) -> list[dict]:
    return [{"features": list(p.features), "label": p.label} for p in points]


def rows_to_points(rows: Sequence[dict]) -> list[LabeledPoint]:
    try:
        return [LabeledPoint(tuple(r["features"]), r["label"]) for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed point record: {exc}") from exc
