"""Score-level fusion: concatenated sub-system posteriors into a linear SVM.

The SVM is one-vs-rest over the 8 classes. Each binary problem minimizes

    (1/n) sum_i max(0, 1 - y_i (w.x_i + b)) + ||w||^2 / (2 C n)

by full-batch sub-gradient descent on standardized inputs with a fixed
iteration budget, keeping the lowest-objective iterate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .core import CLASS_CODES, CLASSES, NUM_CLASSES, DimensionMismatch, EmofuseError, EmotionLabel, class_index
from .losses import softmax

MODEL_FORMAT = "emofuse-svm-fusion"
# rounding of 6-decimal CSV posteriors can shift a block sum by up to 4e-6
READ_TOLERANCE = 1e-5


class SampleMismatch(EmofuseError, ValueError):
    pass


class InvalidPosterior(EmofuseError, ValueError):
    pass


class DegenerateLabels(EmofuseError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FusionVector:
    sample_id: str
    values: np.ndarray
    source_order: tuple[str, ...]


@dataclass(eq=False)
class SvmFusionModel:
    weights: np.ndarray  # (8, dim)
    biases: np.ndarray  # (8,)
    mean: np.ndarray
    scale: np.ndarray
    C: float = 1.0
    seed: int = 0
    iterations: int = 2000
    source_order: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": __version__,
            "label_order": list(CLASS_CODES),
            "C": self.C,
            "seed": self.seed,
            "iterations": self.iterations,
            "source_order": list(self.source_order),
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SvmFusionModel":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise EmofuseError(f"not an SVM fusion model file (format={doc.get('format')!r})")
        if doc["label_order"] != list(CLASS_CODES):
            raise EmofuseError("model label order differs from the canonical order")
        return cls(
            weights=np.array(doc["weights"], dtype=np.float64),
            biases=np.array(doc["biases"], dtype=np.float64),
            mean=np.array(doc["mean"], dtype=np.float64),
            scale=np.array(doc["scale"], dtype=np.float64),
            C=float(doc["C"]),
            seed=int(doc["seed"]),
            iterations=int(doc["iterations"]),
            source_order=tuple(doc["source_order"]),
            metadata=doc.get("metadata", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SvmFusionModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _validated_block(sid, name, probs, tol) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (NUM_CLASSES,):
        raise InvalidPosterior(f"{name}: sample {sid} has {p.size} probabilities, expected {NUM_CLASSES}")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1) > tol:
        raise InvalidPosterior(f"{name}: sample {sid} is not a probability vector (sum {p.sum():.8f})")
    return p / p.sum()


def build_fusion_vectors(
    predictions: Sequence[Mapping[str, np.ndarray]],
    names: Sequence[str] | None = None,
    tol: float = READ_TOLERANCE,
) -> list[FusionVector]:
    """Concatenate per-sub-system posteriors, in the given order, per sample.

    ``predictions`` holds one ``sample_id -> posterior`` mapping per
    sub-system (a ``(posterior, label)`` tuple value is accepted too). Blocks
    are renormalized after validation; output is sorted by sample id.
    """
    if not predictions:
        raise ValueError("at least one prediction set is required")
    names = tuple(names) if names is not None else tuple(f"system{i}" for i in range(len(predictions)))
    if len(names) != len(predictions):
        raise ValueError("one name per prediction set required")
    ids = set(predictions[0])
    for name, preds in zip(names[1:], predictions[1:]):
        other = set(preds)
        if other != ids:
            diff = sorted(ids.symmetric_difference(other))
            raise SampleMismatch(f"{name}: sample ids differ from {names[0]} (e.g. {diff[0]!r})")
    out = []
    for sid in sorted(ids):
        blocks = []
        for name, preds in zip(names, predictions):
            value = preds[sid]
            if isinstance(value, tuple):
                value = value[0]
            blocks.append(_validated_block(sid, name, value, tol))
        out.append(FusionVector(sid, np.concatenate(blocks), names))
    return out


def _matrix(vectors) -> np.ndarray:
    if len(vectors) and isinstance(vectors[0], FusionVector):
        return np.stack([v.values for v in vectors])
    return np.atleast_2d(np.asarray(vectors, dtype=np.float64))


def standardize_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


def hinge_objective(W, b, Xs, Y, C) -> np.ndarray:
    """Per-class regularized hinge objective; ``Y`` is n x 8 in {-1, +1}."""
    n = Xs.shape[0]
    margins = Y * (Xs @ W.T + b)
    return np.maximum(0.0, 1.0 - margins).mean(axis=0) + (W * W).sum(axis=1) / (2 * C * n)


def train_svm(
    vectors,
    labels: Sequence,
    C: float = 1.0,
    seed: int = 0,
    iterations: int = 2000,
    step: float = 1.0,
) -> SvmFusionModel:
    """Fit 8 one-vs-rest linear SVMs.

    Descent is deterministic full-batch from a zero start, so ``seed`` only
    tags the model.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    X = _matrix(vectors)
    y = np.array([class_index(v) for v in labels], dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} vectors vs {y.shape[0]} labels")
    if len(np.unique(y)) < 2:
        raise DegenerateLabels("fusion training needs at least two distinct classes")
    source_order = vectors[0].source_order if isinstance(vectors[0], FusionVector) else ()

    mean, scale = standardize_fit(X)
    Xs = (X - mean) / scale
    n, dim = Xs.shape
    Y = np.where(y[:, None] == np.arange(NUM_CLASSES), 1.0, -1.0)

    W = np.zeros((NUM_CLASSES, dim))
    b = np.zeros(NUM_CLASSES)
    best_W, best_b = W.copy(), b.copy()
    best_obj = hinge_objective(W, b, Xs, Y, C)
    for t in range(iterations):
        active = (Y * (Xs @ W.T + b) < 1.0) * Y  # n x 8
        gW = -(active.T @ Xs) / n + W / (C * n)
        gb = -active.sum(axis=0) / n
        eta = step / np.sqrt(t + 1.0)
        W = W - eta * gW
        b = b - eta * gb
        obj = hinge_objective(W, b, Xs, Y, C)
        better = obj < best_obj
        best_W[better], best_b[better], best_obj[better] = W[better], b[better], obj[better]

    return SvmFusionModel(
        weights=best_W,
        biases=best_b,
        mean=mean,
        scale=scale,
        C=float(C),
        seed=int(seed),
        iterations=int(iterations),
        source_order=tuple(source_order),
        metadata={"objective": [float(v) for v in best_obj]},
    )


def decision_scores(model: SvmFusionModel, vectors) -> np.ndarray:
    X = _matrix(vectors)
    if X.shape[1] != model.dim:
        raise DimensionMismatch(f"vectors have dimension {X.shape[1]}, model expects {model.dim}")
    return ((X - model.mean) / model.scale) @ model.weights.T + model.biases


def svm_predict(model: SvmFusionModel, vectors) -> list[tuple[str | None, EmotionLabel, np.ndarray]]:
    """Argmax over the 8 decision scores; ties go to the earlier class."""
    scores = decision_scores(model, vectors)
    ids = [v.sample_id if isinstance(v, FusionVector) else None for v in vectors]
    return [(sid, CLASSES[int(np.argmax(s))], s) for sid, s in zip(ids, scores)]


def pseudo_posteriors(scores: np.ndarray) -> np.ndarray:
    """Softmax of decision scores, for writing fused predictions in CSV form.

    These are not calibrated probabilities; their argmax is the SVM decision.
    """
    return softmax(scores)
