"""Run configuration files: strict JSON schema, defaults and cross-field checks.

A config file looks like::

    {
      "model": {"mlp": [2, 32, 32, 3]},
      "data": {"kind": "synthetic", "generator": "blobs", "n": 3000,
               "num_classes": 3, "noise": 0.3, "centers_per_class": 3},
      "prune": {"mode": "s2h", "T": 0.35},
      "train": {"epochs": 200, "lr": 0.05},
      "output": {"dir": "runs/blobs"},
      "seed": 0
    }

``model`` is either ``{"mlp": widths}`` or a full graph description (see
:mod:`s2hprune.graph`).  Unknown keys are rejected with a suggestion.
"""

import copy
import difflib
import json
from dataclasses import dataclass, field

import jsonschema

from ..graph import mlp_spec
from ..pruner.config import ConfigError, PruneRunConfig, Toggles
from ..pruner.optim import ScheduleError, validate_milestones

TOGGLE_KEYS = ("g_L_theta", "g_G_hard_theta", "g_G_soft_theta", "g_L_u", "g_G_u")

PRUNE_DEFAULTS = {
    "mode": "s2h",
    "beta_coef": 0.5,
    "gamma_coef": 5.0,
    "rho_coef": 5.0,
    "toggles": {"g_L_theta": True, "g_G_hard_theta": True, "g_G_soft_theta": False,
                "g_L_u": True, "g_G_u": True},
    "label_smoothing": None,
    "gap_direction": "soft_teacher",
    "gap_temperature": 1.0,
    "balance_reference": "raw",
    "balance_norm": "global",
    "u_weight_decay": 0.0,
    "u_lr_mult": 1.0,
    "finetune_lr_scale": 0.1,
    "source_checkpoint": None,
    "record_soft_theta": False,
}

TRAIN_DEFAULTS = {
    "lr": 0.05,
    "momentum": 0.9,
    "weight_decay": 3e-4,
    "scheduler": "cosine",
    "milestones": [],
    "factors": [],
    "epochs": 10,
    "batch_size": 64,
    "checkpoint_every": 0,
}

SYNTHETIC_DEFAULTS = {"generator": "blobs", "n": 3000, "num_classes": 3, "noise": 0.3,
                      "centers_per_class": 1, "seed": 0}

OUTPUT_DEFAULTS = {"dir": "runs/default"}

BASELINE_DEFAULTS = {"tol": 0.01, "max_attempts": 100_000}

# common misspellings and synonyms -> canonical key
ALIASES = {
    "flop_target": "T", "flops_target": "T", "target": "T", "target_flops": "T",
    "flops": "T", "budget": "T", "t": "T",
    "beta": "beta_coef", "gamma": "gamma_coef", "rho": "rho_coef",
    "learning_rate": "lr", "wd": "weight_decay", "num_epochs": "epochs",
    "schedule": "scheduler", "bs": "batch_size", "smoothing": "label_smoothing",
    "output_dir": "dir", "out": "dir",
}

_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_int_pos = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "data", "prune"],
    "properties": {
        "model": {"type": "object"},
        "data": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["synthetic", "idx", "csv"]}},
        },
        "prune": {
            "type": "object",
            "additionalProperties": False,
            "required": ["T"],
            "properties": {
                "mode": {"enum": ["s2h", "alt1", "alt2", "soft_only", "finetune"]},
                "T": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "beta_coef": _nonneg,
                "gamma_coef": _nonneg,
                "rho_coef": _nonneg,
                "toggles": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: {"type": "boolean"} for k in TOGGLE_KEYS},
                },
                "label_smoothing": {"type": ["number", "null"], "minimum": 0, "exclusiveMaximum": 1},
                "gap_direction": {"enum": ["soft_teacher", "hard_teacher"]},
                "gap_temperature": {"type": "number", "exclusiveMinimum": 0},
                "balance_reference": {"enum": ["raw", "scaled"]},
                "balance_norm": {"enum": ["global", "per_group"]},
                "u_weight_decay": _nonneg,
                "u_lr_mult": _nonneg,
                "finetune_lr_scale": {"type": "number", "exclusiveMinimum": 0},
                "source_checkpoint": {"type": ["string", "null"]},
                "record_soft_theta": {"type": "boolean"},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": _nonneg,
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "weight_decay": _nonneg,
                "scheduler": {"enum": ["cosine", "step", "constant"]},
                "milestones": {"type": "array", "items": {"type": "integer"}},
                "factors": {"type": "array", "items": _num},
                "epochs": _int_pos,
                "batch_size": _int_pos,
                "checkpoint_every": {"type": "integer", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
        "random_baseline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol": _nonneg, "max_attempts": _int_pos},
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

DATA_SCHEMAS = {
    "synthetic": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "kind": {"const": "synthetic"},
            "generator": {"enum": ["blobs", "spirals"]},
            "n": _int_pos,
            "num_classes": {"type": "integer", "minimum": 2},
            "noise": _nonneg,
            "centers_per_class": _int_pos,
            "seed": {"type": "integer", "minimum": 0},
        },
    },
    "idx": {
        "type": "object",
        "additionalProperties": False,
        "required": ["train_images", "train_labels", "val_images", "val_labels"],
        "properties": {
            "kind": {"const": "idx"},
            "train_images": {"type": "string"}, "train_labels": {"type": "string"},
            "val_images": {"type": "string"}, "val_labels": {"type": "string"},
            "num_classes": {"type": "integer", "minimum": 2},
        },
    },
    "csv": {
        "type": "object",
        "additionalProperties": False,
        "required": ["train", "val"],
        "properties": {
            "kind": {"const": "csv"},
            "train": {"type": "string"}, "val": {"type": "string"},
            "num_classes": {"type": "integer", "minimum": 2},
        },
    },
}

MLP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mlp"],
    "properties": {
        "mlp": {"type": "array", "minItems": 2, "items": {"type": "integer", "minimum": 1}},
        "fixed_hidden": {"type": "boolean"},
    },
}


def _json_path(parts):
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _suggest(key, allowed):
    if key in ALIASES and ALIASES[key] in allowed:
        return ALIASES[key]
    close = difflib.get_close_matches(key, sorted(allowed), n=1, cutoff=0.6)
    return close[0] if close else None


def _check(instance, schema, prefix=()):
    validator = jsonschema.Draft202012Validator(schema)
    # unknown keys first: a misspelt key usually also causes a "required" error
    errors = sorted(validator.iter_errors(instance),
                    key=lambda e: (e.validator != "additionalProperties",
                                   [str(p) for p in e.absolute_path], e.message))
    if not errors:
        return
    err = errors[0]
    path = _json_path(list(prefix) + list(err.absolute_path))
    if err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(set(err.instance) - allowed)
        key = extra[0]
        hint = _suggest(key, allowed)
        msg = f"unknown key {key!r}" + (f"; did you mean {hint!r}?" if hint else "")
        raise ConfigError(msg, f"{path}.{key}")
    raise ConfigError(err.message, path)


@dataclass
class RunConfigFile:
    """A validated run configuration with every default filled in."""
    model: dict
    data: dict
    prune: dict
    train: dict
    output: dict
    random_baseline: dict
    seed: int = 0
    source: str = None
    model_spec: dict = field(default=None, repr=False)

    def run_config(self, seed=None):
        """The :class:`PruneRunConfig` for this file (optionally with another seed)."""
        p = dict(self.prune)
        toggles = Toggles(**p.pop("toggles"))
        t = {k: v for k, v in self.train.items() if k != "checkpoint_every"}
        return PruneRunConfig(toggles=toggles, seed=self.seed if seed is None else seed, **p, **t)

    def to_dict(self):
        return {"model": copy.deepcopy(self.model), "data": dict(self.data),
                "prune": copy.deepcopy(self.prune), "train": copy.deepcopy(self.train),
                "output": dict(self.output), "random_baseline": dict(self.random_baseline),
                "seed": self.seed}


def resolve_model(model):
    if "mlp" in model:
        _check(model, MLP_SCHEMA, ("model",))
        return mlp_spec(model["mlp"], fixed_hidden=model.get("fixed_hidden", False))
    missing = [k for k in ("input", "groups", "layers", "output") if k not in model]
    if missing:
        raise ConfigError(f"model needs 'mlp' or a graph with {missing}", "$.model")
    return copy.deepcopy(model)


def config_from_dict(raw, source=None):
    """Validate a parsed config document and apply defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", "$")
    _check(raw, SCHEMA)
    kind = raw["data"]["kind"]
    _check(raw["data"], DATA_SCHEMAS[kind], ("data",))

    data = dict(raw["data"])
    if kind == "synthetic":
        data = {**SYNTHETIC_DEFAULTS, **data}
    prune = copy.deepcopy(PRUNE_DEFAULTS)
    for k, v in raw["prune"].items():
        if k == "toggles":
            prune["toggles"].update(v)
        else:
            prune[k] = v
    train = {**copy.deepcopy(TRAIN_DEFAULTS), **copy.deepcopy(raw.get("train", {}))}
    output = {**OUTPUT_DEFAULTS, **raw.get("output", {})}
    baseline = {**BASELINE_DEFAULTS, **raw.get("random_baseline", {})}

    if train["scheduler"] == "step":
        try:
            validate_milestones(train["milestones"], train["factors"], train["epochs"])
        except ScheduleError as exc:
            raise ConfigError(str(exc), "$.train.milestones") from None

    cfg = RunConfigFile(copy.deepcopy(raw["model"]), data, prune, train, output, baseline,
                        raw.get("seed", 0), source)
    cfg.model_spec = resolve_model(cfg.model)
    cfg.run_config()  # cross-field checks (mode/source_checkpoint, ranges)
    return cfg


def parse_config(path):
    """Read and validate a JSON config file."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", "$") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "$") from None
    return config_from_dict(raw, source=str(path))


__all__ = ["ALIASES", "ConfigError", "PRUNE_DEFAULTS", "RunConfigFile", "SCHEMA",
           "TRAIN_DEFAULTS", "config_from_dict", "parse_config", "resolve_model"]
