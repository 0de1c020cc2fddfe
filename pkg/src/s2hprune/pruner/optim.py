"""SGD with momentum and per-epoch learning-rate schedules."""

import math

import numpy as np


class ScheduleError(ValueError):
    pass


def sgd_momentum_step(param, grad, velocity, lr, momentum=0.0, weight_decay=0.0):
    """One SGD step; returns ``(new_param, new_velocity)``.

    v <- momentum * v + (grad + weight_decay * param);  param <- param - lr * v
    """
    d = grad + weight_decay * param if weight_decay else grad
    v = d if velocity is None else momentum * velocity + d
    return param - lr * v, v


class SGD:
    """Shared optimizer for weights and mask logits; state keyed by leaf name."""

    def __init__(self, momentum=0.9):
        self.momentum = momentum
        self.velocity = {}

    def step(self, param, grad, lr, weight_decay=0.0):
        new, v = sgd_momentum_step(param.values, grad, self.velocity.get(param.name),
                                   lr, self.momentum, weight_decay)
        self.velocity[param.name] = v
        param.values = new

    def state_arrays(self):
        return {f"momentum.{k}": v for k, v in sorted(self.velocity.items())}

    def load_state_arrays(self, arrays):
        self.velocity = {k[len("momentum."):]: np.array(v) for k, v in arrays.items()
                         if k.startswith("momentum.")}


def lr_schedule(kind, epoch, total, base_lr, milestones=(), factors=()):
    """Learning rate for ``epoch`` (0-based) out of ``total``.

    cosine: base * 0.5 * (1 + cos(pi * epoch / total)).
    step: base * factors[j] for the last milestone ``j`` with epoch >= milestones[j].
    """
    if not 0 <= epoch <= total:
        raise ScheduleError(f"epoch {epoch} outside [0, {total}]")
    if kind == "cosine":
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total))
    if kind == "step":
        validate_milestones(milestones, factors, total)
        lr = base_lr
        for m, f in zip(milestones, factors):
            if epoch >= m:
                lr = base_lr * f
        return lr
    if kind == "constant":
        return base_lr
    raise ScheduleError(f"unknown schedule {kind!r}")


def validate_milestones(milestones, factors, total):
    if len(milestones) != len(factors):
        raise ScheduleError("milestones and factors differ in length")
    if any(b <= a for a, b in zip(milestones, milestones[1:])):
        raise ScheduleError("milestones must be strictly increasing")
    if any(not 0 < m <= total for m in milestones):
        raise ScheduleError(f"milestones must lie in (0, {total}]")
    if any(f <= 0 for f in factors):
        raise ScheduleError("factors must be positive")
