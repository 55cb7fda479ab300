"""Linear classification head over pooled feature streams.

Each stream is pooled independently (mean or attention), the pooled vectors
are concatenated and mapped to 8 logits by one linear layer. Training uses
Adam with separate learning rates for the head and the attention vectors,
and a NewBob schedule driven by dev Macro-F1.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .core import CLASS_CODES, NUM_CLASSES, DimensionMismatch, EmofuseError, LabelX, SampleRecord, X
from .evaluation import confusion_matrix, macro_f1
from .losses import JeffreysParams, loss_and_grad, softmax
from .pooling import POOLING_KINDS, attention_pool, attention_pool_backward

log = logging.getLogger(__name__)

MODEL_FORMAT = "emofuse-linear-head"


class EmptyDataset(EmofuseError, ValueError):
    pass


class ShapeMismatch(EmofuseError, ValueError):
    pass


@dataclass(frozen=True)
class NewBobConfig:
    improvement_threshold: float = 0.0025
    anneal_factor: float = 0.5
    patience: int = 5
    enabled: bool = True

    def __post_init__(self):
        if not 0 < self.anneal_factor < 1:
            raise ValueError("anneal_factor must be in (0, 1)")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "nll"
    jeffreys: JeffreysParams = field(default_factory=JeffreysParams)
    pooling: str = "mean"
    batch_size: int = 16
    max_epochs: int = 10
    learning_rate_head: float = 1e-4
    learning_rate_pooling: float = 1e-5
    newbob: NewBobConfig = field(default_factory=NewBobConfig)
    seed: int = 42

    def __post_init__(self):
        if self.loss not in ("nll", "jeffreys"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.pooling not in POOLING_KINDS:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.learning_rate_head <= 0 or self.learning_rate_pooling <= 0:
            raise ValueError("learning rates must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["jeffreys"] = JeffreysParams(**d.get("jeffreys", {}))
        d["newbob"] = NewBobConfig(**d.get("newbob", {}))
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# Sub-system presets. C/D/E expect two feature streams; E differs from D only
# in the label file it is trained on.
PRESETS: dict[str, TrainConfig] = {
    "A": TrainConfig(loss="nll", pooling="mean", newbob=NewBobConfig(enabled=False)),
    "B": TrainConfig(loss="jeffreys", pooling="mean", newbob=NewBobConfig(enabled=False)),
    "C": TrainConfig(loss="nll", pooling="mean", newbob=NewBobConfig(enabled=False)),
    "D": TrainConfig(loss="nll", pooling="attention"),
    "E": TrainConfig(loss="nll", pooling="attention"),
}


@dataclass(eq=False)
class LinearHeadModel:
    weights: np.ndarray  # (8, Dtot)
    bias: np.ndarray  # (8,)
    pooling: str
    stream_dims: tuple[int, ...]
    attention: list[np.ndarray] | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def total_dim(self) -> int:
        return int(sum(self.stream_dims))

    def params(self) -> dict[str, np.ndarray]:
        out = {"weights": self.weights, "bias": self.bias}
        for s, u in enumerate(self.attention or []):
            out[f"attention.{s}"] = u
        return out

    def copy(self) -> "LinearHeadModel":
        return copy.deepcopy(self)

    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": __version__,
            "label_order": list(CLASS_CODES),
            "pooling": self.pooling,
            "stream_dims": list(self.stream_dims),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "attention": None if self.attention is None else [u.tolist() for u in self.attention],
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LinearHeadModel":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise EmofuseError(f"not a linear head model file (format={doc.get('format')!r})")
        if doc["label_order"] != list(CLASS_CODES):
            raise EmofuseError(f"model label order {doc['label_order']} differs from {list(CLASS_CODES)}")
        stream_dims = tuple(int(d) for d in doc["stream_dims"])
        weights = np.array(doc["weights"], dtype=np.float64).reshape(NUM_CLASSES, sum(stream_dims))
        att = doc["attention"]
        return cls(
            weights=weights,
            bias=np.array(doc["bias"], dtype=np.float64),
            pooling=doc["pooling"],
            stream_dims=stream_dims,
            attention=None if att is None else [np.array(u, dtype=np.float64) for u in att],
            metadata=doc.get("metadata", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LinearHeadModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def init_model(stream_dims, pooling: str = "mean", seed: int = 0) -> LinearHeadModel:
    """Uniform(-1, 1)/sqrt(Dtot) weights, zero bias, zero attention vectors."""
    dims = (int(stream_dims),) if np.isscalar(stream_dims) else tuple(int(d) for d in stream_dims)
    if not dims or min(dims) < 1:
        raise ValueError(f"stream dimensions must be >= 1, got {dims}")
    if pooling not in POOLING_KINDS:
        raise ValueError(f"unknown pooling {pooling!r}")
    dtot = sum(dims)
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-1.0, 1.0, size=(NUM_CLASSES, dtot)) / np.sqrt(dtot)
    attention = [np.zeros(d) for d in dims] if pooling == "attention" else None
    return LinearHeadModel(
        weights=weights,
        bias=np.zeros(NUM_CLASSES),
        pooling=pooling,
        stream_dims=dims,
        attention=attention,
        metadata={"seed": int(seed)},
    )


# ---------------------------------------------------------------------------
# optimizer and scheduler
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, lr) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; returns new params and state.

    ``lr`` may be a float or a per-parameter mapping.
    """
    if params.keys() != grads.keys():
        raise ShapeMismatch(f"parameter keys {sorted(params)} vs gradient keys {sorted(grads)}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        p = np.asarray(p, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        rate = lr[name] if isinstance(lr, dict) else lr
        new_params[name] = p - rate * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, replace(state, m=new_m, v=new_v, step=t)


@dataclass(frozen=True)
class NewBobState:
    lr: float
    prev_metric: float | None = None
    consecutive_anneals: int = 0
    stop: bool = False


def newbob_update(
    state: NewBobState, metric: float, config: NewBobConfig = NewBobConfig()
) -> tuple[NewBobState, float]:
    """Anneal the rate when the relative improvement falls under the threshold.

    The first observation only records the metric. ``stop`` is raised once
    consecutive anneals exceed ``patience``.
    """
    if not 0.0 <= metric <= 1.0:
        raise ValueError(f"validation metric must be in [0, 1], got {metric}")
    if state.prev_metric is None:
        return replace(state, prev_metric=metric), state.lr
    improvement = (metric - state.prev_metric) / max(state.prev_metric, 1e-9)
    if improvement < config.improvement_threshold:
        lr = state.lr * config.anneal_factor
        anneals = state.consecutive_anneals + 1
    else:
        lr = state.lr
        anneals = 0
    new = NewBobState(lr=lr, prev_metric=metric, consecutive_anneals=anneals, stop=anneals > config.patience)
    return new, lr


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _check_dims(model: LinearHeadModel, samples: Sequence[SampleRecord]) -> None:
    for s in samples:
        if s.stream_dims != model.stream_dims:
            raise DimensionMismatch(
                f"sample {s.sample_id} has stream dims {s.stream_dims}, model expects {model.stream_dims}"
            )


def pool_sample(model: LinearHeadModel, sample: SampleRecord) -> np.ndarray:
    if model.pooling == "mean":
        return np.concatenate([s.frames.mean(axis=0) for s in sample.streams])
    return np.concatenate([attention_pool(s.frames, u)[0] for s, u in zip(sample.streams, model.attention)])


def pooled_features(model: LinearHeadModel, samples: Sequence[SampleRecord]) -> np.ndarray:
    if not samples:
        return np.zeros((0, model.total_dim))
    return np.stack([pool_sample(model, s) for s in samples])


def logits(model: LinearHeadModel, pooled: np.ndarray) -> np.ndarray:
    return pooled @ model.weights.T + model.bias


def batch_loss_and_grads(
    model: LinearHeadModel,
    samples: Sequence[SampleRecord],
    targets: np.ndarray,
    config: TrainConfig,
    pooled: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its gradient for every model parameter.

    ``pooled`` may carry precomputed mean-pooled features.
    """
    if pooled is None:
        pooled = pooled_features(model, samples)
    z = logits(model, pooled)
    losses, dz = loss_and_grad(z, targets, config.loss, config.jeffreys)
    n = len(targets)
    dz = dz / n
    grads = {"weights": dz.T @ pooled, "bias": dz.sum(axis=0)}
    if model.pooling == "attention":
        dpooled = dz @ model.weights
        offsets = np.cumsum((0, *model.stream_dims))
        for s, u in enumerate(model.attention):
            gu = np.zeros_like(u)
            for i, sample in enumerate(samples):
                upstream = dpooled[i, offsets[s] : offsets[s + 1]]
                gu += attention_pool_backward(sample.streams[s].frames, u, upstream)[1]
            grads[f"attention.{s}"] = gu
    return float(losses.mean()), grads


def set_params(model: LinearHeadModel, params: dict[str, np.ndarray]) -> None:
    model.weights = params["weights"]
    model.bias = params["bias"]
    if model.attention is not None:
        model.attention = [params[f"attention.{s}"] for s in range(len(model.attention))]


# ---------------------------------------------------------------------------
# training / inference
# ---------------------------------------------------------------------------


def _targets(samples: Sequence[SampleRecord], what: str) -> np.ndarray:
    out = np.empty(len(samples), dtype=np.int64)
    for i, s in enumerate(samples):
        if s.label is None:
            raise LabelX(f"{what} sample {s.sample_id} has no label")
        if s.label is X:
            raise LabelX(f"{what} sample {s.sample_id} is labeled X")
        out[i] = s.label.index
    return out


def _dev_macro_f1(model: LinearHeadModel, dev: Sequence[SampleRecord], dev_targets, dev_pooled=None) -> float:
    pooled = dev_pooled if dev_pooled is not None else pooled_features(model, dev)
    preds = np.argmax(logits(model, pooled), axis=1)
    return macro_f1(confusion_matrix(dev_targets, preds))


def train(
    dataset: Sequence[SampleRecord],
    dev: Sequence[SampleRecord],
    config: TrainConfig = TrainConfig(),
) -> tuple[LinearHeadModel, list[dict]]:
    """Mini-batch training; returns the best-dev-Macro-F1 model and per-epoch history."""
    if not dataset:
        raise EmptyDataset("training set is empty")
    if not dev:
        raise EmptyDataset("dev set is empty")
    targets = _targets(dataset, "training")
    dev_targets = _targets(dev, "dev")
    dims = dataset[0].stream_dims
    model = init_model(dims, config.pooling, config.seed)
    model.metadata = {"seed": config.seed, "config": config.to_dict(), "config_hash": config.digest()}
    _check_dims(model, dataset)
    _check_dims(model, dev)

    # mean pooling has no parameters, so pooled features are fixed
    static = config.pooling == "mean"
    train_pooled = pooled_features(model, dataset) if static else None
    dev_pooled = pooled_features(model, dev) if static else None

    rng = np.random.default_rng([config.seed, 1])
    state = AdamState()
    lr_head, lr_pool = config.learning_rate_head, config.learning_rate_pooling
    sched = NewBobState(lr=lr_head)
    best, best_f1 = model.copy(), -1.0
    history: list[dict] = []
    n = len(dataset)

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [dataset[i] for i in idx]
            loss, grads = batch_loss_and_grads(
                model, batch, targets[idx], config, None if train_pooled is None else train_pooled[idx]
            )
            batch_losses.append(loss)
            rates = {k: (lr_head if k in ("weights", "bias") else lr_pool) for k in grads}
            params, state = adam_step(model.params(), grads, state, rates)
            set_params(model, params)

        dev_f1 = _dev_macro_f1(model, dev, dev_targets, dev_pooled)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(batch_losses)),
                "dev_macro_f1": dev_f1,
                "lr_head": lr_head,
                "lr_pooling": lr_pool,
            }
        )
        log.info("epoch %d loss %.5f dev macro-F1 %.4f lr %.3g", epoch, history[-1]["train_loss"], dev_f1, lr_head)
        if dev_f1 > best_f1:
            best, best_f1 = model.copy(), dev_f1
        if config.newbob.enabled:
            sched, new_lr = newbob_update(sched, dev_f1, config.newbob)
            if new_lr < lr_head:
                lr_head, lr_pool = new_lr, lr_pool * config.newbob.anneal_factor
            if sched.stop:
                log.info("NewBob patience exhausted after epoch %d", epoch)
                break

    best.metadata = dict(model.metadata, best_dev_macro_f1=best_f1 if history else None)
    return best, history


def predict(model: LinearHeadModel, samples: Sequence[SampleRecord]) -> list[tuple[str, np.ndarray]]:
    _check_dims(model, samples)
    probs = softmax(logits(model, pooled_features(model, samples)))
    return [(s.sample_id, p) for s, p in zip(samples, probs)]
