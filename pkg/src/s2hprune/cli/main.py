"""Command-line entry point: ``s2hprune <prune|eval|export|random-baseline>``.

Every failure exits nonzero and prints one line to stderr of the form
``s2hprune:error:<kind>: <message>``.
"""

import argparse
import hashlib
import json
import logging
import os
import sys

from ..data import FormatError, gen_synthetic, load_csv, load_idx, Splits
from ..autodiff import DimensionError, NumericError
from ..graph import (
    Diagnostic,
    InfeasibleError,
    ModelError,
    ModelGraph,
    export_compact,
    random_prefix_masks,
)
from ..pruner import ConfigError, Pruner, StepError, SupervisedTrainer, evaluate
from .checkpoint import (
    CheckpointError,
    atomic_write,
    graph_arrays,
    load_checkpoint,
    load_graph_state,
    restore_trainer,
    save_checkpoint,
    save_trainer,
)
from .config import parse_config
from .trajectory import log_trajectory

log = logging.getLogger("s2hprune")

EXIT_CODES = {"config": 2, "checkpoint": 3, "infeasible": 4, "data": 5, "model": 6,
              "numeric": 7, "io": 8}


def build_splits(data, seed):
    kind = data["kind"]
    if kind == "synthetic":
        return gen_synthetic(data["generator"], data["n"], data["num_classes"], data["noise"],
                             data.get("seed", seed), centers_per_class=data["centers_per_class"])
    k = data.get("num_classes")
    if kind == "idx":
        return Splits(load_idx(data["train_images"], data["train_labels"], "train", k),
                      load_idx(data["val_images"], data["val_labels"], "val", k))
    return Splits(load_csv(data["train"], "train", k), load_csv(data["val"], "val", k))


def check_compatible(graph, splits):
    """The data must match the model's input shape and class count."""
    diags = []
    feat = tuple(splits.train.features.shape[1:])
    if feat != graph.input_shape:
        diags.append(Diagnostic("input", "shape",
                                f"data features have shape {feat}, model expects {graph.input_shape}"))
    k = max(splits.train.num_classes, splits.val.num_classes)
    if k > graph.num_classes:
        diags.append(Diagnostic(graph.output_node, "shape",
                                f"data has {k} classes, model outputs {graph.num_classes}"))
    if diags:
        raise ModelError(diags)


def output_dir(cfg):
    d = os.environ.get("S2HPRUNE_OUT") or cfg.output["dir"]
    os.makedirs(d, exist_ok=True)
    return d


def write_json(path, obj):
    atomic_write(path, (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode())


def file_sha256(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def _report_dict(rep, graph, cfg):
    d = rep.to_dict()
    d.update({"mode": cfg.mode, "T": cfg.T, "masks": graph.mask_summary()})
    return d


def cmd_prune(args, cfg):
    run_cfg = cfg.run_config(args.seed)
    out = output_dir(cfg)
    splits = build_splits(cfg.data, run_cfg.seed)
    graph = ModelGraph(cfg.model_spec, seed=run_cfg.seed)
    check_compatible(graph, splits)
    if run_cfg.mode == "finetune":
        src = load_checkpoint(run_cfg.source_checkpoint, expected_model_hash=graph.hash)
        load_graph_state(graph, src)
    pruner = Pruner(graph, run_cfg, splits.train, splits.val)
    echo = cfg.to_dict()
    echo["seed"] = run_cfg.seed
    if args.resume:
        ckpt = load_checkpoint(args.resume, expected_model_hash=graph.hash)
        if ckpt.header["config"] != echo:
            raise CheckpointError(f"{args.resume}: saved config differs from {cfg.source}")
        restore_trainer(pruner, ckpt)
    every = args.checkpoint_every if args.checkpoint_every is not None else cfg.train["checkpoint_every"]
    csv_path = os.path.join(out, "trajectory.csv")

    def on_epoch(p, rec):
        log.info("epoch %d hard_top1=%.4f flops_hard=%.4f flops_soft=%.4f",
                 rec.epoch, rec.hard_top1, rec.flops_hard, rec.flops_soft)
        log_trajectory(p.trajectory, csv_path)
        if every and p.epoch % every == 0 and p.epoch < run_cfg.epochs:
            save_trainer(p, os.path.join(out, f"epoch_{p.epoch:04d}.ckpt"), config=echo)

    pruner.run(on_epoch=on_epoch)
    log_trajectory(pruner.trajectory, csv_path)
    final = os.path.join(out, "final.ckpt")
    save_trainer(pruner, final, config=echo)
    report = _report_dict(pruner.report(), graph, run_cfg)
    write_json(os.path.join(out, "gap_report.json"), report)
    print(json.dumps({"checkpoint": final, "trajectory": csv_path, **report}, sort_keys=True))


def _load_for_eval(args, cfg, out):
    path = args.checkpoint or os.path.join(out, "final.ckpt")
    graph = ModelGraph(cfg.model_spec, seed=cfg.seed)
    ckpt = load_checkpoint(path, expected_model_hash=graph.hash)
    load_graph_state(graph, ckpt)
    return path, graph, ckpt


def cmd_eval(args, cfg):
    run_cfg = cfg.run_config(args.seed)
    out = output_dir(cfg)
    path, graph, _ = _load_for_eval(args, cfg, out)
    splits = build_splits(cfg.data, run_cfg.seed)
    check_compatible(graph, splits)
    rep, r = evaluate(graph, splits.val, run_cfg.mode, run_cfg.smoothing, run_cfg.T)
    report = _report_dict(rep, graph, run_cfg)
    report["resource_penalty"] = r
    report["checkpoint"] = path
    write_json(os.path.join(out, "eval_report.json"), report)
    print(json.dumps(report, sort_keys=True))


def cmd_export(args, cfg):
    out = output_dir(cfg)
    path, graph, ckpt = _load_for_eval(args, cfg, out)
    compact = export_compact(graph, source_checkpoint_hash=file_sha256(path))
    target = os.path.join(out, "compact.ckpt")
    header = {"kind": "compact", "model_hash": compact.graph.hash, "model_spec": compact.graph.spec,
              "epoch": ckpt.epoch, "config": ckpt.header["config"], "rng": ckpt.header["rng"],
              "trajectory": [], "extra": {"provenance": compact.provenance}}
    save_checkpoint(target, header, graph_arrays(compact.graph))
    result = {"compact_checkpoint": target, "flops_compact": compact.flops(),
              "flops_hard_source": graph.compute_flops("hard"),
              "flops_ratio": graph.flops_ratio("hard"), "masks": compact.provenance["masks"]}
    print(json.dumps(result, sort_keys=True))


def cmd_random_baseline(args, cfg):
    run_cfg = cfg.run_config(args.seed)
    out = output_dir(cfg)
    splits = build_splits(cfg.data, run_cfg.seed)
    source = ModelGraph(cfg.model_spec, seed=run_cfg.seed)
    check_compatible(source, splits)
    masks = random_prefix_masks(source, run_cfg.T, cfg.random_baseline["tol"], run_cfg.seed,
                                cfg.random_baseline["max_attempts"])
    source.force_prefix_lengths(masks)
    ratio = source.flops_ratio("hard")
    compact_spec = export_compact(source).graph.spec
    graph = ModelGraph(compact_spec, seed=run_cfg.seed)
    trainer = SupervisedTrainer(graph, run_cfg, splits.train, splits.val)
    trainer.run()
    csv_path = os.path.join(out, "trajectory.csv")
    log_trajectory(trainer.trajectory, csv_path)
    echo = cfg.to_dict()
    echo["seed"] = run_cfg.seed
    save_trainer(trainer, os.path.join(out, "baseline.ckpt"), kind="supervised", config=echo,
                 extra={"masks": masks, "flops_ratio": ratio})
    result = {"masks": masks, "flops_ratio": ratio, "T": run_cfg.T,
              "val_top1": trainer.trajectory[-1].hard_top1}
    write_json(os.path.join(out, "random_baseline.json"), result)
    print(json.dumps(result, sort_keys=True))


COMMANDS = {"prune": cmd_prune, "eval": cmd_eval, "export": cmd_export,
            "random-baseline": cmd_random_baseline}


def build_parser():
    p = argparse.ArgumentParser(prog="s2hprune", description="Soft-to-hard structural pruning")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--resume", help="checkpoint to resume a prune run from")
    p.add_argument("--checkpoint", help="checkpoint for eval/export (default: <out>/final.ckpt)")
    p.add_argument("--checkpoint-every", type=int, help="save a checkpoint every N epochs")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    return p


def _fail(kind, exc):
    msg = " ".join(str(exc).split())
    print(f"s2hprune:error:{kind}: {msg}", file=sys.stderr)
    return EXIT_CODES[kind]


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail("config", exc)
    except CheckpointError as exc:
        return _fail("checkpoint", exc)
    except InfeasibleError as exc:
        return _fail("infeasible", exc)
    except FormatError as exc:
        return _fail("data", exc)
    except (ModelError, DimensionError) as exc:
        return _fail("model", exc)
    except (StepError, NumericError) as exc:
        return _fail("numeric", exc)
    except OSError as exc:
        return _fail("io", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
