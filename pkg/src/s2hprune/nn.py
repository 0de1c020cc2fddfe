"""Layers and losses for the soft and hard networks."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor


@dataclass
class LinearLayer:
    weight: Tensor  # [C_out, C_in]
    bias: Tensor  # [C_out]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"linear layer: weight {self.weight.shape} / bias {self.bias.shape}")

    @property
    def out_features(self):
        return self.weight.shape[0]

    @property
    def in_features(self):
        return self.weight.shape[1]


@dataclass
class ConvLayer:
    weight: Tensor  # [C_out, C_in, kh, kw]
    bias: Tensor  # [C_out]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"conv layer: weight {self.weight.shape} / bias {self.bias.shape}")
        if self.stride not in (1, 2) or self.padding < 0:
            raise DimensionError("conv layer: stride must be 1 or 2 and padding >= 0")

    def output_hw(self, h, w):
        kh, kw = self.weight.shape[2:]
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise DimensionError(f"conv layer: no valid output for input {h}x{w}")
        return ho, wo


def _check_scale(out_scale, n):
    if out_scale is not None and tuple(out_scale.shape) != (n,):
        raise DimensionError(f"out_scale has shape {out_scale.shape}, expected ({n},)")


def linear_forward(layer, x, out_scale=None):
    """``x @ W.T + b``, each output channel optionally scaled.

    The scale multiplies the whole channel (weight row and bias), so a
    zero entry silences that channel exactly.
    """
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != layer.in_features:
        raise DimensionError(
            f"linear: input {x.shape} does not match in_features={layer.in_features}")
    _check_scale(out_scale, layer.out_features)
    y = ad.add(ad.matmul(x, ad.transpose(layer.weight)), layer.bias)
    if out_scale is not None:
        y = ad.mul(y, out_scale)
    return y


def conv2d_forward(layer, x, out_scale=None):
    """Cross-correlation plus bias, with the same channel scaling as linear."""
    x = ad.as_tensor(x)
    if x.ndim != 4 or x.shape[1] != layer.weight.shape[1]:
        raise DimensionError(
            f"conv: input {x.shape} does not match C_in={layer.weight.shape[1]}")
    c_out = layer.weight.shape[0]
    _check_scale(out_scale, c_out)
    y = ad.conv2d(x, layer.weight, stride=layer.stride, padding=layer.padding)
    y = ad.add(y, ad.reshape(layer.bias, (1, c_out, 1, 1)))
    if out_scale is not None:
        y = ad.mul(y, ad.reshape(out_scale, (1, c_out, 1, 1)))
    return y


@dataclass(frozen=True)
class SmoothedLabels:
    num_classes: int
    smoothing: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.smoothing < 1.0:
            raise ContractError(f"label smoothing must lie in [0, 1), got {self.smoothing}")

    def targets(self, labels):
        labels = np.asarray(labels, dtype=np.intp)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ContractError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{labels.min()}, {labels.max()}]")
        q = np.full((labels.size, self.num_classes), self.smoothing / self.num_classes,
                    dtype=ad.get_default_dtype())
        q[np.arange(labels.size), labels] += 1.0 - self.smoothing
        return q


def cross_entropy(logits, labels, smoothing=0.0):
    """Batch-mean cross-entropy against (optionally smoothed) one-hot labels."""
    logits = ad.as_tensor(logits)
    q = SmoothedLabels(logits.shape[-1], smoothing).targets(labels)
    return soft_cross_entropy(logits, q)


def soft_cross_entropy(logits, q):
    ll = ad.log_softmax(logits)
    return ad.scale(ad.mean(ad.sum(ad.mul(ll, q), axis=-1)), -1.0)


def kl_gap(teacher_logits, student_logits, temperature=1.0):
    """Batch mean of KL(softmax(teacher) || softmax(student)), natural log.

    Gradient reaches whichever argument is still on the tape; detach one
    side to steer it.
    """
    t, s = ad.as_tensor(teacher_logits), ad.as_tensor(student_logits)
    if t.shape != s.shape:
        raise DimensionError(f"kl_gap: {t.shape} vs {s.shape}")
    if temperature != 1.0:
        t = ad.scale(t, 1.0 / temperature)
        s = ad.scale(s, 1.0 / temperature)
    lt = ad.log_softmax(t)
    ls = ad.log_softmax(s)
    p = ad.exp(lt)
    return ad.mean(ad.sum(ad.mul(p, ad.sub(lt, ls)), axis=-1))


def gap_measure(y_hard, y_soft, direction="soft_teacher", temperature=1.0):
    """G(y_h, y_s).  By default the soft output is the teacher distribution."""
    if direction == "soft_teacher":
        return kl_gap(y_soft, y_hard, temperature)
    if direction == "hard_teacher":
        return kl_gap(y_hard, y_soft, temperature)
    raise ValueError(f"unknown gap direction {direction!r}")
