"""Seeded synthetic corpora: Gaussian class clusters plus noisy annotators."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .consensus import majority_consensus
from .core import (
    CLASSES,
    NUM_CLASSES,
    AnnotationRecord,
    FeatureSequence,
    SampleRecord,
    X,
    write_annotations,
    write_feature_container,
    write_labels,
)


@dataclass(frozen=True)
class SyntheticSpec:
    per_class_count: int = 100
    heldout_per_class: int = 50
    feature_dim: int = 16
    second_dim: int = 8
    streams: int = 2
    t_min: int = 5
    t_max: int = 20
    separation: float = 3.0
    noise: float = 1.0
    annotators: int = 12
    votes_per_sample: int = 5
    error_rate: float = 0.3
    seed: int = 42

    def __post_init__(self):
        for name in ("per_class_count", "heldout_per_class", "feature_dim", "second_dim",
                     "streams", "t_min", "annotators", "votes_per_sample"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.t_max < self.t_min:
            raise ValueError("t_max must be >= t_min")
        if self.votes_per_sample > self.annotators:
            raise ValueError("votes_per_sample cannot exceed the annotator count")
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError("error_rate must be in [0, 1]")
        if self.separation < 0 or self.noise < 0:
            raise ValueError("separation and noise must be non-negative")

    def stream_dims(self) -> tuple[int, ...]:
        return tuple(self.feature_dim if s == 0 else self.second_dim for s in range(self.streams))


def class_means(dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """8 unit-norm directions scaled by ``separation``; orthogonal when dim >= 8."""
    g = rng.standard_normal((max(dim, NUM_CLASSES), NUM_CLASSES))
    if dim >= NUM_CLASSES:
        q, _ = np.linalg.qr(g[:dim])
        dirs = q.T
    else:
        dirs = g[:dim].T
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return separation * dirs


@dataclass
class SyntheticCorpus:
    train: list[SampleRecord]
    dev: list[SampleRecord]
    test: list[SampleRecord]
    annotations: list[AnnotationRecord]
    original_consensus: dict


def _split(prefix, per_class, means, spec, rng) -> list[SampleRecord]:
    samples = []
    n = 0
    for c, label in enumerate(CLASSES):
        for _ in range(per_class):
            sid = f"{prefix}_{n:05d}"
            n += 1
            streams = []
            for mu in means:
                t = int(rng.integers(spec.t_min, spec.t_max + 1))
                frames = mu[c] + spec.noise * rng.standard_normal((t, mu.shape[1]))
                # stored as float32 on disk; keep in-memory values identical
                streams.append(FeatureSequence(sid, frames.astype(np.float32).astype(np.float64)))
            samples.append(SampleRecord(sid, tuple(streams), label))
    order = rng.permutation(len(samples))
    return [samples[i] for i in order]


def _annotate(samples, spec, rng) -> list[AnnotationRecord]:
    pool = [f"ann{a:03d}" for a in range(spec.annotators)]
    out = []
    for s in sorted(samples, key=lambda r: r.sample_id):
        who = rng.choice(spec.annotators, size=spec.votes_per_sample, replace=False)
        for a in sorted(who):
            truth = s.label.index
            if rng.random() < spec.error_rate:
                wrong = int(rng.integers(NUM_CLASSES - 1))
                vote = CLASSES[wrong + (wrong >= truth)]
            else:
                vote = s.label
            out.append(AnnotationRecord(s.sample_id, pool[a], vote))
    return out


def generate(spec: SyntheticSpec) -> SyntheticCorpus:
    rng = np.random.default_rng(spec.seed)
    means = [class_means(d, spec.separation, rng) for d in spec.stream_dims()]
    train = _split("train", spec.per_class_count, means, spec, rng)
    dev = _split("dev", spec.heldout_per_class, means, spec, rng)
    test = _split("test", spec.heldout_per_class, means, spec, rng)
    annotations = _annotate(train, spec, rng)
    votes: dict[str, list] = {}
    for a in annotations:
        votes.setdefault(a.sample_id, []).append(a.vote)
    # the "official" consensus: plain plurality, any tie is X
    original = {sid: majority_consensus(v, neutral_drop_tie=False) for sid, v in sorted(votes.items())}
    return SyntheticCorpus(train, dev, test, annotations, original)


def write_corpus(corpus: SyntheticCorpus, out_dir) -> list[Path]:
    """Write containers and CSVs; returns the written paths in a fixed order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for split, samples in (("train", corpus.train), ("dev", corpus.dev), ("test", corpus.test)):
        n_streams = len(samples[0].streams)
        for s in range(n_streams):
            path = out_dir / f"{split}_s{s + 1}.emf"
            write_feature_container([r.streams[s] for r in samples], path)
            written.append(path)
        path = out_dir / f"{split}_truth.csv"
        write_labels(sorted((r.sample_id, r.label) for r in samples), path)
        written.append(path)
    path = out_dir / "annotations.csv"
    write_annotations(corpus.annotations, path)
    written.append(path)
    path = out_dir / "train_consensus.csv"
    write_labels(corpus.original_consensus, path)
    written.append(path)
    path = out_dir / "train_labels.csv"
    write_labels({k: v for k, v in corpus.original_consensus.items() if v is not X}, path)
    written.append(path)
    return written
