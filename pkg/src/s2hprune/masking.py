"""Channel masks: logits u -> retention probabilities w -> threshold -> binary mask.

``softmax(u)[k]`` is the probability of keeping exactly the first ``k``
channels, so the probability that channel ``i`` survives is the suffix sum
of that distribution from ``i`` onward.  Masks therefore always keep a
prefix of channels.
"""

import numpy as np

from . import autodiff as ad


def relax_mask(u):
    """Per-channel retention probabilities, non-increasing with w[0] == 1."""
    return ad.suffix_sum(ad.softmax(u))


def binarize_mask(w):
    """Threshold ``t = mean(w)``; keep channels with ``w >= t``.

    Returns ``(t, mask)`` where ``mask`` is a boolean prefix vector.
    """
    wv = w.values if isinstance(w, ad.Tensor) else np.asarray(w, dtype=float)
    t = float(np.mean(wv))
    return t, wv >= t


def soft_channel_count(u):
    """Expected number of kept channels, ``sum_k softmax(u)_k * k``."""
    p = ad.softmax(u)
    ks = np.arange(1, p.shape[-1] + 1, dtype=p.values.dtype)
    return ad.sum(ad.mul(p, ks))


class GroupMask:
    """Shared mask state for one dependency group.

    Fixed groups (network input, classifier output) always keep every channel
    and their logits are never optimised.  ``force_prefix`` pins the mask to a
    binary prefix regardless of ``u``; ``release`` undoes it.
    """

    def __init__(self, group_id, channels, fixed=False, u=None):
        if channels < 1:
            raise ValueError(f"group {group_id!r} needs at least one channel")
        self.group_id = group_id
        self.channels = int(channels)
        self.fixed = bool(fixed)
        init = np.zeros(self.channels) if u is None else np.asarray(u, dtype=float)
        if init.shape != (self.channels,):
            raise ValueError(f"group {group_id!r}: u has shape {init.shape}")
        self.u = ad.Tensor(init, requires_grad=not self.fixed, name=f"mask.{group_id}")
        self.forced = None
        self.w = None
        self.t = None
        self.m_hat = None
        self.refresh()

    @property
    def trainable(self):
        return not self.fixed and self.forced is None

    def force_prefix(self, keep):
        if not 1 <= keep <= self.channels:
            raise ValueError(f"group {self.group_id!r}: prefix length {keep} out of range")
        self.forced = np.arange(self.channels) < keep
        self.refresh()

    def release(self):
        self.forced = None
        self.refresh()

    def refresh(self):
        """Recompute w (on the active tape), t and the binary mask from u."""
        if self.fixed:
            self.w = ad.Tensor(np.ones(self.channels))
            self.t = 1.0
            self.m_hat = np.ones(self.channels, dtype=bool)
        elif self.forced is not None:
            self.w = ad.Tensor(self.forced.astype(float))
            self.t, self.m_hat = binarize_mask(self.w)
        else:
            self.w = relax_mask(self.u)
            self.t, self.m_hat = binarize_mask(self.w)
        self.kept = np.flatnonzero(self.m_hat)
        return self

    @property
    def hard_count(self):
        return int(self.m_hat.sum())

    def soft_count(self):
        """Differentiable channel count; a constant for fixed/forced groups."""
        if self.fixed:
            return ad.Tensor(float(self.channels))
        if self.forced is not None:
            return ad.Tensor(float(self.forced.sum()))
        return soft_channel_count(self.u)

    def __repr__(self):
        kind = "fixed" if self.fixed else ("forced" if self.forced is not None else "learned")
        return f"GroupMask({self.group_id!r}, C={self.channels}, keep={self.hard_count}, {kind})"
