"""Category relation transfer through per-class soft labels learned on the source domain."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

LOG_FLOOR = 1e-12


@dataclass
class SoftLabelBank:
    q: np.ndarray  # (K, K); row k is the soft label of class k
    epoch_stamp: int = 0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        K = self.q.shape[0]
        if self.q.shape != (K, K):
            raise ValueError(f"soft-label bank must be K x K, got {self.q.shape}")
        if np.any(self.q < 0) or np.any(self.q > 1) or not np.allclose(self.q.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("every soft label must be a probability vector")

    @property
    def n_classes(self) -> int:
        return self.q.shape[0]

    @classmethod
    def uniform(cls, K: int) -> "SoftLabelBank":
        return cls(np.full((K, K), 1.0 / K))

    def to_json(self) -> str:
        return json.dumps({"epoch_stamp": self.epoch_stamp, "q": self.q.tolist()})

    @classmethod
    def from_json(cls, s: str) -> "SoftLabelBank":
        d = json.loads(s)
        return cls(np.array(d["q"]), int(d["epoch_stamp"]))


@torch.no_grad()
def compute_soft_labels(
    source_common_features: torch.Tensor,
    source_labels,
    classifier,
    n_classes: int,
    temperature: float = 1.0,
    epoch_stamp: int = 0,
) -> SoftLabelBank:
    """Average classifier softmax over each class's source samples."""
    y = torch.as_tensor(np.asarray(source_labels), dtype=torch.long)
    probs = F.softmax(classifier(source_common_features) / temperature, dim=1).double()
    q = np.zeros((n_classes, n_classes))
    for k in range(n_classes):
        sel = y == k
        if not bool(sel.any()):
            raise ValueError(f"class {k} has no source samples; cannot build its soft label")
        q[k] = probs[sel].mean(dim=0).numpy()
    q /= q.sum(axis=1, keepdims=True)
    return SoftLabelBank(q, epoch_stamp)


def _check_labels(labels: torch.Tensor, K: int) -> None:
    if labels.numel() and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels out of range [0, {K})")


def soft_loss(target_logits: torch.Tensor, target_labels, bank: SoftLabelBank) -> torch.Tensor:
    """``-mean_i q[y_i] . log softmax(logits_i)``; the bank is a constant."""
    labels = torch.as_tensor(np.asarray(target_labels), dtype=torch.long)
    _check_labels(labels, bank.n_classes)
    q = torch.as_tensor(bank.q, dtype=target_logits.dtype)[labels]
    log_p = torch.log(torch.clamp(F.softmax(target_logits, dim=1), min=LOG_FLOOR))
    return -(q * log_p).sum(dim=1).mean()


def crkt_loss(target_logits: torch.Tensor, target_labels, bank: SoftLabelBank, alpha: float) -> torch.Tensor:
    """``(1 - alpha) * CE + alpha * soft_loss``, with ``alpha`` in [0, 1)."""
    if not (0.0 <= alpha < 1.0):
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    labels = torch.as_tensor(np.asarray(target_labels), dtype=torch.long)
    _check_labels(labels, target_logits.shape[1])
    ce = F.cross_entropy(target_logits, labels)
    if alpha == 0.0:
        return ce
    return (1.0 - alpha) * ce + alpha * soft_loss(target_logits, labels, bank)
