"""Label set, sample containers and the on-disk formats shared by every stage.

Class vectors and matrices always use the alphabetical code order held in
``CLASS_CODES``: A, C, D, F, H, N, S, U.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class EmofuseError(Exception):
    """Base class for all toolkit errors."""


class UnknownLabel(EmofuseError, ValueError):
    def __init__(self, text):
        super().__init__(f"unknown emotion label {text!r}")
        self.text = text


class LabelX(EmofuseError, ValueError):
    """A no-consensus label appeared where a class label is required."""


class DimensionMismatch(EmofuseError, ValueError):
    pass


class FeatureFormatError(EmofuseError):
    pass


class BadMagic(FeatureFormatError):
    pass


class TruncatedRecord(FeatureFormatError):
    def __init__(self, index, detail=""):
        msg = f"record {index} is truncated"
        super().__init__(f"{msg}: {detail}" if detail else msg)
        self.index = index


class NonFiniteValue(FeatureFormatError, ValueError):
    def __init__(self, index, sample_id=None):
        where = f"record {index}" + (f" ({sample_id})" if sample_id is not None else "")
        super().__init__(f"non-finite feature value in {where}")
        self.index = index


class CsvFormatError(EmofuseError, ValueError):
    pass


class EmotionLabel(str, Enum):
    ANGER = "A"
    CONTEMPT = "C"
    DISGUST = "D"
    FEAR = "F"
    HAPPINESS = "H"
    NEUTRAL = "N"
    SADNESS = "S"
    SURPRISE = "U"
    NO_CONSENSUS = "X"

    @property
    def code(self) -> str:
        return self.value

    @property
    def index(self) -> int:
        """Position in the canonical class order; X has none."""
        if self is EmotionLabel.NO_CONSENSUS:
            raise LabelX("X has no class index")
        return CLASS_INDEX[self]

    @property
    def display_name(self) -> str:
        return f"{self.name.capitalize()} ({self.value})"

    def __str__(self) -> str:
        return self.value


CLASSES: tuple[EmotionLabel, ...] = (
    EmotionLabel.ANGER,
    EmotionLabel.CONTEMPT,
    EmotionLabel.DISGUST,
    EmotionLabel.FEAR,
    EmotionLabel.HAPPINESS,
    EmotionLabel.NEUTRAL,
    EmotionLabel.SADNESS,
    EmotionLabel.SURPRISE,
)
CLASS_CODES: tuple[str, ...] = tuple(c.value for c in CLASSES)
CLASS_INDEX: dict[EmotionLabel, int] = {c: i for i, c in enumerate(CLASSES)}
NUM_CLASSES = len(CLASSES)
X = EmotionLabel.NO_CONSENSUS


@dataclass(frozen=True)
class LabelSet:
    classes: tuple[EmotionLabel, ...] = CLASSES

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def codes(self) -> list[str]:
        return [c.value for c in self.classes]


LABEL_SET = LabelSet()


def parse_label(text) -> EmotionLabel:
    """Map a single-letter code (any case) to its label."""
    if isinstance(text, EmotionLabel):
        return text
    if isinstance(text, str):
        try:
            return EmotionLabel(text.strip().upper())
        except ValueError:
            pass
    raise UnknownLabel(text)


def label_code(label: EmotionLabel) -> str:
    return label.value


def class_index(label) -> int:
    """Canonical index of a label given as an EmotionLabel, code or int."""
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        if not 0 <= int(label) < NUM_CLASSES:
            raise UnknownLabel(label)
        return int(label)
    return parse_label(label).index


@dataclass(frozen=True)
class AnnotationRecord:
    sample_id: str
    annotator_id: str
    vote: EmotionLabel

    def __post_init__(self):
        if not self.sample_id or not self.annotator_id:
            raise ValueError("sample_id and annotator_id must be non-empty")
        vote = parse_label(self.vote)
        if vote is X:
            raise LabelX(f"X is not a valid vote (sample {self.sample_id})")
        object.__setattr__(self, "vote", vote)


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """One encoder stream for one sample: a T x D matrix of finite reals."""

    sample_id: str
    frames: np.ndarray

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64, ndmin=2)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise DimensionMismatch(
                f"{self.sample_id}: frames must be T x D with T, D >= 1, got {frames.shape}"
            )
        if not np.all(np.isfinite(frames)):
            raise ValueError(f"{self.sample_id}: non-finite feature value")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return self.sample_id == other.sample_id and np.array_equal(self.frames, other.frames)


@dataclass(frozen=True, eq=False)
class SampleRecord:
    sample_id: str
    streams: tuple[FeatureSequence, ...]
    label: EmotionLabel | None = None

    def __post_init__(self):
        streams = tuple(self.streams)
        if not streams:
            raise ValueError(f"{self.sample_id}: at least one stream required")
        for s in streams:
            if s.sample_id != self.sample_id:
                raise ValueError(
                    f"stream id {s.sample_id!r} does not match sample {self.sample_id!r}"
                )
        object.__setattr__(self, "streams", streams)
        if self.label is not None:
            object.__setattr__(self, "label", parse_label(self.label))

    @property
    def stream_dims(self) -> tuple[int, ...]:
        return tuple(s.D for s in self.streams)


@dataclass(frozen=True)
class PosteriorVector:
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        check_posterior(p)
        object.__setattr__(self, "probs", p)


def check_posterior(p: np.ndarray, tol: float = 1e-9) -> None:
    if p.shape != (NUM_CLASSES,):
        raise DimensionMismatch(f"posterior must have {NUM_CLASSES} entries, got {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("posterior entries must lie in [0, 1]")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"posterior sums to {p.sum()!r}, not 1")


def assemble_samples(
    streams: Sequence[Sequence[FeatureSequence]],
    labels: Mapping[str, EmotionLabel] | None = None,
) -> list[SampleRecord]:
    """Zip per-stream containers into samples, in the first container's order."""
    if not streams:
        raise ValueError("at least one feature stream is required")
    first = streams[0]
    lookups = []
    for k, stream in enumerate(streams[1:], start=2):
        by_id = {s.sample_id: s for s in stream}
        if len(by_id) != len(first) or any(s.sample_id not in by_id for s in first):
            raise ValueError(f"feature stream {k} does not cover the same sample ids as stream 1")
        lookups.append(by_id)
    out = []
    for seq in first:
        label = None
        if labels is not None:
            label = labels.get(seq.sample_id)
        out.append(
            SampleRecord(seq.sample_id, (seq, *(lk[seq.sample_id] for lk in lookups)), label)
        )
    return out


# ---------------------------------------------------------------------------
# feature container
# ---------------------------------------------------------------------------

MAGIC = b"EMF1"
_HEADER = struct.Struct("<4sI")
_ID_LEN = struct.Struct("<H")
_SHAPE = struct.Struct("<II")


def container_size(records: Iterable[FeatureSequence]) -> int:
    size = _HEADER.size
    for r in records:
        size += _ID_LEN.size + len(r.sample_id.encode("utf-8")) + _SHAPE.size + 4 * r.T * r.D
    return size


def encode_feature_container(records: Sequence[FeatureSequence]) -> bytes:
    chunks = [_HEADER.pack(MAGIC, len(records))]
    for i, r in enumerate(records):
        with np.errstate(over="ignore"):
            data = np.ascontiguousarray(r.frames, dtype="<f4")
        if not np.all(np.isfinite(data)):
            # also catches float64 values that overflow float32
            raise NonFiniteValue(i, r.sample_id)
        sid = r.sample_id.encode("utf-8")
        if len(sid) > 0xFFFF:
            raise FeatureFormatError(f"record {i}: sample id longer than 65535 bytes")
        chunks.append(_ID_LEN.pack(len(sid)))
        chunks.append(sid)
        chunks.append(_SHAPE.pack(*data.shape))
        chunks.append(data.tobytes())
    return b"".join(chunks)


def decode_feature_container(buf: bytes) -> list[FeatureSequence]:
    if len(buf) < _HEADER.size:
        raise BadMagic("file too short for header")
    magic, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {magic!r}")
    pos = _HEADER.size
    out = []
    for i in range(count):
        try:
            (id_len,) = _ID_LEN.unpack_from(buf, pos)
            pos += _ID_LEN.size
            if pos + id_len > len(buf):
                raise TruncatedRecord(i, "sample id")
            sid = buf[pos : pos + id_len].decode("utf-8")
            pos += id_len
            t, d = _SHAPE.unpack_from(buf, pos)
            pos += _SHAPE.size
        except struct.error as exc:
            raise TruncatedRecord(i, str(exc)) from None
        nbytes = 4 * t * d
        if pos + nbytes > len(buf):
            raise TruncatedRecord(i, f"expected {nbytes} value bytes")
        if t == 0 or d == 0:
            raise FeatureFormatError(f"record {i}: empty matrix ({t} x {d})")
        values = np.frombuffer(buf, dtype="<f4", count=t * d, offset=pos).reshape(t, d)
        pos += nbytes
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue(i, sid)
        out.append(FeatureSequence(sid, values.astype(np.float64)))
    if pos != len(buf):
        raise FeatureFormatError(f"{len(buf) - pos} trailing bytes after {count} records")
    return out


def write_feature_container(records: Sequence[FeatureSequence], path) -> int:
    """Write records to ``path``; returns the number of bytes written."""
    data = encode_feature_container(records)
    Path(path).write_bytes(data)
    return len(data)


def read_feature_container(path) -> list[FeatureSequence]:
    return decode_feature_container(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------

PREDICTION_HEADER = ["sample_id", *(f"p{c}" for c in CLASS_CODES), "pred"]


def _read_rows(path, required: Sequence[str]) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise CsvFormatError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_annotations(path) -> list[AnnotationRecord]:
    rows = _read_rows(path, ["sample_id", "annotator_id", "label"])
    out, seen = [], set()
    for n, row in enumerate(rows, start=2):
        key = (row["sample_id"], row["annotator_id"])
        if key in seen:
            raise CsvFormatError(f"{path}:{n}: duplicate annotation for {key}")
        seen.add(key)
        out.append(AnnotationRecord(row["sample_id"], row["annotator_id"], parse_label(row["label"])))
    return out


def write_annotations(records: Iterable[AnnotationRecord], path) -> None:
    write_csv(
        path,
        ["sample_id", "annotator_id", "label"],
        ((r.sample_id, r.annotator_id, r.vote.value) for r in records),
    )


def read_labels(path) -> dict[str, EmotionLabel]:
    """Read a ``sample_id,label`` CSV; extra columns are ignored."""
    rows = _read_rows(path, ["sample_id", "label"])
    out: dict[str, EmotionLabel] = {}
    for n, row in enumerate(rows, start=2):
        if row["sample_id"] in out:
            raise CsvFormatError(f"{path}:{n}: duplicate sample id {row['sample_id']!r}")
        out[row["sample_id"]] = parse_label(row["label"])
    return out


def write_labels(labels: Mapping[str, EmotionLabel] | Iterable[tuple[str, EmotionLabel]], path) -> None:
    items = labels.items() if isinstance(labels, Mapping) else labels
    write_csv(path, ["sample_id", "label"], ((sid, parse_label(lab).value) for sid, lab in items))


def write_predictions(predictions: Iterable[tuple[str, np.ndarray]], path) -> None:
    rows = []
    for sid, probs in predictions:
        probs = np.asarray(probs, dtype=np.float64)
        pred = CLASS_CODES[int(np.argmax(probs))]
        rows.append([sid, *(f"{p:.6f}" for p in probs), pred])
    write_csv(path, PREDICTION_HEADER, rows)


def read_predictions(path) -> dict[str, tuple[np.ndarray, EmotionLabel]]:
    """Return ``sample_id -> (probabilities, predicted label)`` in file order."""
    rows = _read_rows(path, PREDICTION_HEADER)
    out = {}
    for n, row in enumerate(rows, start=2):
        sid = row["sample_id"]
        if sid in out:
            raise CsvFormatError(f"{path}:{n}: duplicate sample id {sid!r}")
        try:
            probs = np.array([float(row[f"p{c}"]) for c in CLASS_CODES])
        except ValueError as exc:
            raise CsvFormatError(f"{path}:{n}: {exc}") from None
        if not all(math.isfinite(v) for v in probs):
            raise CsvFormatError(f"{path}:{n}: non-finite probability")
        out[sid] = (probs, parse_label(row["pred"]))
    return out
