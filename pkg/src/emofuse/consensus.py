"""Consensus recomputation from per-annotator votes.

Annotators are scored by how often they agree with the original consensus;
those scoring under the threshold are dropped and every sample is
re-aggregated once over the surviving votes.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .core import (
    CLASSES,
    AnnotationRecord,
    EmofuseError,
    EmotionLabel,
    LabelX,
    X,
    parse_label,
)

NEUTRAL = EmotionLabel.NEUTRAL


class EmptyVotes(EmofuseError, ValueError):
    pass


class MissingConsensus(EmofuseError, KeyError):
    def __init__(self, sample_id):
        super().__init__(f"no original consensus for sample {sample_id!r}")
        self.sample_id = sample_id


class DuplicateAnnotation(EmofuseError, ValueError):
    pass


@dataclass(frozen=True)
class ConsensusConfig:
    evaluator_threshold: float = 0.5
    neutral_drop_tie: bool = True

    def __post_init__(self):
        if not 0.0 <= self.evaluator_threshold <= 1.0:
            raise ValueError(f"evaluator_threshold must be in [0, 1], got {self.evaluator_threshold}")


@dataclass(frozen=True)
class ConsensusResult:
    sample_id: str
    label: EmotionLabel
    source: str  # "original" | "recomputed"
    vote_histogram: dict[EmotionLabel, int] = field(default_factory=dict)
    original: EmotionLabel | None = None


def majority_consensus(votes: Iterable[EmotionLabel], neutral_drop_tie: bool = True) -> EmotionLabel:
    """Modal label of ``votes``.

    A tie between N and exactly one other label resolves to the other label
    when ``neutral_drop_tie`` is set; every other tie yields X.
    """
    counts = Counter(parse_label(v) for v in votes)
    if not counts:
        raise EmptyVotes("cannot take the consensus of zero votes")
    if X in counts:
        raise LabelX("X is not a valid vote")
    top = max(counts.values())
    tied = [lab for lab, n in counts.items() if n == top]
    if len(tied) == 1:
        return tied[0]
    if neutral_drop_tie and len(tied) == 2 and NEUTRAL in tied:
        return tied[0] if tied[1] is NEUTRAL else tied[1]
    return X


def evaluator_scores(
    annotations: Sequence[AnnotationRecord], consensus: Mapping[str, EmotionLabel]
) -> dict[str, float]:
    """Fraction of each annotator's countable votes that match the consensus.

    Votes on samples whose consensus is X are not countable. Annotators with
    no countable votes score 1.0.
    """
    matched: dict[str, int] = defaultdict(int)
    countable: dict[str, int] = defaultdict(int)
    for rec in annotations:
        if rec.sample_id not in consensus:
            raise MissingConsensus(rec.sample_id)
        ref = consensus[rec.sample_id]
        countable.setdefault(rec.annotator_id, 0)
        if ref is X:
            continue
        countable[rec.annotator_id] += 1
        matched[rec.annotator_id] += rec.vote is ref
    return {
        a: (matched[a] / n if n else 1.0) for a, n in sorted(countable.items())
    }


def _check_unique(annotations: Sequence[AnnotationRecord]) -> None:
    seen = set()
    for rec in annotations:
        key = (rec.sample_id, rec.annotator_id)
        if key in seen:
            raise DuplicateAnnotation(f"annotator {rec.annotator_id!r} voted twice on {rec.sample_id!r}")
        seen.add(key)


def recompute_consensus(
    annotations: Sequence[AnnotationRecord],
    original_consensus: Mapping[str, EmotionLabel],
    config: ConsensusConfig = ConsensusConfig(),
) -> list[ConsensusResult]:
    """Single filter-and-reaggregate pass; results are sorted by sample id."""
    _check_unique(annotations)
    original = {sid: parse_label(lab) for sid, lab in original_consensus.items()}
    scores = evaluator_scores(annotations, original)
    kept = {a for a, s in scores.items() if s >= config.evaluator_threshold}

    surviving: dict[str, list[EmotionLabel]] = defaultdict(list)
    for rec in annotations:
        if rec.annotator_id in kept:
            surviving[rec.sample_id].append(rec.vote)

    results = []
    for sid in sorted(original):
        votes = surviving.get(sid, [])
        label = majority_consensus(votes, config.neutral_drop_tie) if votes else X
        hist = Counter(votes)
        results.append(
            ConsensusResult(
                sample_id=sid,
                label=label,
                source="recomputed" if label is not original[sid] else "original",
                vote_histogram={lab: hist[lab] for lab in CLASSES if hist[lab]},
                original=original[sid],
            )
        )
    return results


def augmented_labels(
    original_consensus: Mapping[str, EmotionLabel], results: Iterable[ConsensusResult]
) -> dict[str, EmotionLabel]:
    """Training labels after augmentation.

    Originally labeled samples keep their label; samples that were X and
    received a class label from recomputation are added. Changed non-X labels
    are not applied.
    """
    out = {sid: parse_label(lab) for sid, lab in original_consensus.items() if parse_label(lab) is not X}
    for r in results:
        if parse_label(original_consensus[r.sample_id]) is X and r.label is not X:
            out[r.sample_id] = r.label
    return dict(sorted(out.items()))


def label_counts(labels: Iterable[EmotionLabel]) -> dict[EmotionLabel, int]:
    counts = Counter(parse_label(lab) for lab in labels)
    return {c: counts[c] for c in CLASSES}


def augmentation_report(
    before: Mapping[EmotionLabel, int],
    after: Mapping[EmotionLabel, int],
    before_title: str = "Train",
    after_title: str = "Train Augmented",
) -> str:
    """Per-class count table before/after augmentation with a totals row."""
    before = {parse_label(k): int(v) for k, v in before.items()}
    after = {parse_label(k): int(v) for k, v in after.items()}
    missing = [c.value for c in CLASSES if c not in before or c not in after]
    if missing:
        raise ValueError(f"count maps must cover every class; missing {', '.join(missing)}")
    order = sorted(CLASSES, key=lambda c: (-before[c], CLASSES.index(c)))
    header = ("Emotion Class", before_title, after_title, "Delta")
    rows = [(c.value, str(before[c]), str(after[c]), f"{after[c] - before[c]:+d}") for c in order]
    tb, ta = sum(before[c] for c in CLASSES), sum(after[c] for c in CLASSES)
    total = ("Total", str(tb), str(ta), f"{ta - tb:+d}")
    widths = [max(len(r[i]) for r in [header, *rows, total]) for i in range(4)]

    def fmt(r):
        return " | ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths)))

    rule = "-+-".join("-" * w for w in widths)
    lines = [fmt(header), rule, *(fmt(r) for r in rows), rule.replace("-", "="), fmt(total)]
    return "\n".join(lines) + "\n"
