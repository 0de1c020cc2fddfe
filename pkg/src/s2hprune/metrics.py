"""Evaluation metrics: accuracy, FLOPs ratio and soft/hard gap measures.

Gap measures act on softmaxed rows and use natural logs.  They take raw
logits; pass ``log(q)`` to compare against a fixed distribution ``q``.
"""

from dataclasses import asdict, dataclass

import numpy as np


def _values(x):
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def _probs(logits):
    z = _values(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _xlogy_ratio(p, q):
    # p * log(p / q) with 0 * log 0 = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = p * (np.log(p) - np.log(q))
    return np.where(p > 0, t, 0.0)


def js_divergence(p_logits, q_logits):
    """Mean Jensen-Shannon divergence between softmaxed rows."""
    p, q = _probs(p_logits), _probs(q_logits)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    js = 0.5 * _xlogy_ratio(p, m).sum(-1) + 0.5 * _xlogy_ratio(q, m).sum(-1)
    return float(np.mean(np.maximum(js, 0.0)))


def l2_gap(p_logits, q_logits):
    """Mean Euclidean distance between softmaxed rows."""
    p, q = _probs(p_logits), _probs(q_logits)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    return float(np.mean(np.linalg.norm(p - q, axis=-1)))


def top1_accuracy(logits, labels):
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    pred = np.argmax(_values(logits), axis=-1)
    return float(np.mean(pred == np.asarray(labels)))


def flops_ratio(g, mode="hard"):
    return g.flops_ratio(mode)


@dataclass
class GapReport:
    js: float
    l2: float
    soft_top1: float
    hard_top1: float
    n: int
    full_top1: float = None
    supervision: str = "soft"
    flops_hard: float = None
    flops_soft: float = None

    def to_dict(self):
        return asdict(self)
