"""Training loops: pruning runs in every mode, plus a plain supervised baseline."""

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from .. import autodiff as ad
from ..data import batch_iter
from ..graph import InfeasibleError, ModelGraph, export_compact
from ..metrics import GapReport, js_divergence, l2_gap, top1_accuracy
from ..nn import SmoothedLabels, cross_entropy
from .config import ConfigError
from .optim import SGD, lr_schedule
from .step import apply_updates, prune_step, resource_penalty

log = logging.getLogger(__name__)

EVAL_BATCH = 1024


@dataclass
class TrajectoryRecord:
    epoch: int
    soft_top1: float
    hard_top1: float
    flops_hard: float
    flops_soft: float
    js_gap: float
    l2_gap: float
    resource_penalty: float
    lr: float

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]


@dataclass
class RunResult:
    graph: ModelGraph
    compact: object
    trajectory: list
    report: GapReport


def _batched_forward(g, x, mode):
    outs = []
    for s in range(0, len(x), EVAL_BATCH):
        outs.append(g.forward(x[s:s + EVAL_BATCH], mode).values)
    return np.concatenate(outs, axis=0)


def evaluate(g, ds, mode="s2h", smoothing=0.1, T=None):
    """Accuracies and gap between the hard network and its direct supervision.

    The supervision is the soft network (s2h, soft_only, finetune), the
    smoothed labels (alt1) or the unmasked network (alt2).
    """
    with ad.no_grad():
        g.refresh_masks()
        soft = _batched_forward(g, ds.features, "soft")
        hard = _batched_forward(g, ds.features, "hard")
        full = _batched_forward(g, ds.features, "full")
        r = float(resource_penalty(g, T).values) if T is not None else None
    if mode == "alt1":
        q = SmoothedLabels(ds.num_classes, smoothing).targets(ds.labels)
        ref, sup = np.log(q), "smoothed_labels"
    elif mode == "alt2":
        ref, sup = full, "full"
    else:
        ref, sup = soft, "soft"
    rep = GapReport(
        js=js_divergence(ref, hard), l2=l2_gap(ref, hard),
        soft_top1=top1_accuracy(soft, ds.labels), hard_top1=top1_accuracy(hard, ds.labels),
        n=len(ds), full_top1=top1_accuracy(full, ds.labels), supervision=sup,
        flops_hard=g.flops_ratio("hard"), flops_soft=g.flops_ratio("soft"))
    return rep, r


def check_feasible(g, T):
    lo = g.min_flops_ratio()
    if lo > T:
        raise ConfigError(
            f"target T={T} is infeasible: one channel per prunable group already gives "
            f"ratio {lo:.6f}", "$.prune.T")


class Pruner:
    """Stateful pruning run: graph, optimizer, epoch counter and trajectory."""

    def __init__(self, graph, cfg, train, val):
        check_feasible(graph, cfg.T)
        self.graph = graph
        self.cfg = cfg
        self.train = train
        self.val = val
        self.optimizer = SGD(cfg.momentum)
        self.epoch = 0
        self.trajectory = []
        self.step_losses = []
        self.record_losses = False

    @property
    def base_lr(self):
        if self.cfg.mode == "finetune":
            return self.cfg.lr * self.cfg.finetune_lr_scale
        return self.cfg.lr

    def lr_at(self, epoch):
        return lr_schedule(self.cfg.scheduler, epoch, self.cfg.epochs, self.base_lr,
                           self.cfg.milestones, self.cfg.factors)

    def train_epoch(self):
        cfg = self.cfg
        lr = self.lr_at(self.epoch)
        for xb, yb in batch_iter(self.train, cfg.batch_size, cfg.seed, self.epoch):
            res = prune_step(self.graph, xb, yb, cfg)
            apply_updates(self.graph, res.bundle, cfg, self.optimizer, lr)
            if self.record_losses:
                self.step_losses.append(res.losses)
        rep, r = evaluate(self.graph, self.val, cfg.mode, cfg.smoothing, cfg.T)
        rec = TrajectoryRecord(self.epoch, rep.soft_top1, rep.hard_top1, rep.flops_hard,
                               rep.flops_soft, rep.js, rep.l2, r, lr)
        self.trajectory.append(rec)
        self.epoch += 1
        log.debug("epoch %d: %s", rec.epoch, asdict(rec))
        return rec

    def run(self, until=None, on_epoch=None):
        until = self.cfg.epochs if until is None else min(until, self.cfg.epochs)
        while self.epoch < until:
            rec = self.train_epoch()
            if on_epoch is not None:
                on_epoch(self, rec)
        return self.trajectory

    def report(self):
        return evaluate(self.graph, self.val, self.cfg.mode, self.cfg.smoothing, self.cfg.T)[0]


def run_experiment(cfg, model_spec, splits, graph=None, on_epoch=None):
    """Run one configured pruning job end to end."""
    if graph is None:
        graph = ModelGraph(model_spec, seed=cfg.seed)
    pruner = Pruner(graph, cfg, splits.train, splits.val)
    pruner.run(on_epoch=on_epoch)
    compact = export_compact(graph)
    return RunResult(graph, compact, pruner.trajectory, pruner.report())


class SupervisedTrainer:
    """Plain SGD on the unmasked network; the random-architecture baseline."""

    def __init__(self, graph, cfg, train, val):
        self.graph = graph
        self.cfg = cfg
        self.train = train
        self.val = val
        self.optimizer = SGD(cfg.momentum)
        self.epoch = 0
        self.trajectory = []
        self.step_losses = []

    def train_epoch(self):
        cfg = self.cfg
        lr = lr_schedule(cfg.scheduler, self.epoch, cfg.epochs, cfg.lr, cfg.milestones, cfg.factors)
        theta = self.graph.parameters()
        for xb, yb in batch_iter(self.train, cfg.batch_size, cfg.seed, self.epoch):
            ad.new_tape()
            loss = cross_entropy(self.graph.forward(xb, "full"), yb, cfg.smoothing)
            grads = ad.backward(loss, theta)
            for t in theta:
                self.optimizer.step(t, grads[t], lr, cfg.weight_decay)
            self.step_losses.append({"l": float(loss.values)})
        with ad.no_grad():
            acc = top1_accuracy(_batched_forward(self.graph, self.val.features, "full"),
                                self.val.labels)
        ratio = self.graph.flops_ratio("full")
        rec = TrajectoryRecord(self.epoch, acc, acc, ratio, ratio, 0.0, 0.0, 0.0, lr)
        self.trajectory.append(rec)
        self.epoch += 1
        return rec

    def run(self):
        while self.epoch < self.cfg.epochs:
            self.train_epoch()
        return self.trajectory


__all__ = ["EVAL_BATCH", "InfeasibleError", "Pruner", "RunResult", "SupervisedTrainer",
           "TrajectoryRecord", "check_feasible", "evaluate", "run_experiment"]
