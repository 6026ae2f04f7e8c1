"""Metrics, linear probes on frozen encoders, and run records."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import MultimodalBatch, Splits, minibatches
from .model import Encoder, ModelParams, cross_entropy, encoder_forward, forward, loss_grad_logits
from .numkit import ContractError

TRACE_HEADER = ["step", "loss", "rho_a", "k_a", "k_v"]


def accuracy(logits, labels) -> float:
    """Top-1 accuracy; ``argmax`` picks the lowest index on ties."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ContractError("accuracy of an empty batch")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def average_precision(scores, positives) -> float:
    """Precision averaged over the ranks of the positives, no interpolation.

    Equal scores keep their original sample order.
    """
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    hits = np.asarray(positives, dtype=bool)[order]
    if not hits.any():
        raise ContractError("no positives")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(scores, labels) -> float:
    """Macro mAP over classes that have at least one positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise ContractError("scores must be (n, M) with M >= 2")
    aps = [average_precision(scores[:, c], labels == c)
           for c in range(scores.shape[1]) if np.any(labels == c)]
    if not aps:
        raise ContractError("no class has a positive sample")
    return float(np.mean(aps))


def evaluate(params: ModelParams, batch: MultimodalBatch) -> dict:
    logits = forward(params, batch.x_a, batch.x_v).logits
    return {
        "loss": cross_entropy(logits, batch.labels),
        "acc": accuracy(logits, batch.labels),
        "map": mean_average_precision(logits, batch.labels),
    }


@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 1e-2
    epochs: int = 30
    batch_size: int = 16
    standardize: bool = True


def linear_probe(encoder: Optional[Encoder], splits: Splits, modality: str, rng: np.random.Generator,
                 cfg: ProbeConfig = ProbeConfig()) -> float:
    """Fit a fresh linear classifier on frozen features; return test accuracy.

    ``encoder=None`` probes the raw inputs. The encoder is only read.
    """
    def feats(b: MultimodalBatch) -> np.ndarray:
        x = b.x_a if modality == "a" else b.x_v
        return x if encoder is None else encoder_forward(encoder, x)[0]

    if modality not in ("a", "v"):
        raise ContractError(f"unknown modality {modality!r}")
    z_train, z_test = feats(splits.train), feats(splits.test)
    if cfg.standardize:
        mu, sd = z_train.mean(axis=0), z_train.std(axis=0)
        sd[sd == 0] = 1.0
        z_train, z_test = (z_train - mu) / sd, (z_test - mu) / sd
    y = splits.train.labels
    w = np.zeros((splits.n_classes, z_train.shape[1]))
    b = np.zeros(splits.n_classes)
    for _ in range(cfg.epochs):
        for idx in minibatches(len(y), cfg.batch_size, rng):
            g = loss_grad_logits(z_train[idx] @ w.T + b, y[idx])
            w -= cfg.learning_rate * (g.T @ z_train[idx]) / len(idx)
            b -= cfg.learning_rate * g.mean(axis=0)
    return accuracy(z_test @ w.T + b, splits.test.labels)


def summarize_ratio_trace(trace) -> tuple[float, float, float]:
    """(mean, max, mean over the last 10% of steps) of a ratio trace."""
    t = np.asarray(trace, dtype=np.float64)
    if t.size == 0:
        raise ContractError("empty trace")
    window = max(1, int(np.ceil(0.1 * t.size)))
    return float(t.mean()), float(t.max()), float(t[-window:].mean())


@dataclass
class RunRecord:
    config: dict
    seed: int
    epochs: list[dict] = field(default_factory=list)
    trace: dict[str, list] = field(default_factory=lambda: {k: [] for k in TRACE_HEADER})
    final: dict = field(default_factory=dict)

    def metrics_view(self) -> dict:
        """Everything except the config snapshot."""
        return {"seed": self.seed, "epochs": self.epochs, "trace": self.trace, "final": self.final}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        d = json.loads(text)
        return cls(d["config"], d["seed"], d["epochs"], d["trace"], d["final"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def write_trace_csv(path, record: RunRecord) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for row in zip(*(record.trace[k] for k in TRACE_HEADER)):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def read_trace_csv(path) -> dict[str, list]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRACE_HEADER:
        raise ContractError(f"{path}: bad trace header")
    out: dict[str, list] = {k: [] for k in TRACE_HEADER}
    for row in rows[1:]:
        out["step"].append(int(row[0]))
        for k, v in zip(TRACE_HEADER[1:], row[1:]):
            out[k].append(float(v))
    return out
