"""Dependency-grouped model graphs with full, soft and hard forward passes.

A model is described by a JSON-compatible dict::

    {
      "input": {"shape": [2], "group": "in"},
      "groups": {"in": {"channels": 2, "fixed": true},
                 "h1": {"channels": 32},
                 "out": {"channels": 3, "fixed": true}},
      "layers": [
        {"id": "fc1", "kind": "linear", "inputs": ["input"], "group": "h1"},
        {"id": "act1", "kind": "relu", "inputs": ["fc1"]},
        {"id": "fc2", "kind": "linear", "inputs": ["act1"], "group": "out"}
      ],
      "output": "fc2"
    }

Every linear/conv layer writes into a group; layers in one group share a
single mask.  ``relu`` and ``flatten`` inherit their input's group and
``add`` requires both inputs to carry the same group.
"""

import copy
import graphlib
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .masking import GroupMask
from .nn import ConvLayer, LinearLayer, conv2d_forward, linear_forward

WIDTH_KINDS = ("linear", "conv")
KINDS = WIDTH_KINDS + ("relu", "add", "flatten")
MODES = ("full", "soft", "hard")


@dataclass
class Diagnostic:
    node: str
    rule: str
    message: str

    def __str__(self):
        return f"[{self.rule}] {self.node}: {self.message}"


class ModelError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class InfeasibleError(RuntimeError):
    """No mask assignment meets the requested FLOPs ratio."""

    def __init__(self, message, closest=None):
        super().__init__(message)
        self.closest = closest


def spec_hash(spec):
    """SHA-256 of the canonical JSON encoding of a model spec."""
    blob = json.dumps(spec, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def mlp_spec(widths, fixed_hidden=False):
    """Spec for a ReLU MLP; one group per hidden layer."""
    if len(widths) < 2:
        raise ValueError("an MLP needs at least input and output widths")
    groups = {"in": {"channels": widths[0], "fixed": True}}
    layers = []
    prev = "input"
    for i, width in enumerate(widths[1:], start=1):
        last = i == len(widths) - 1
        gid = "out" if last else f"h{i}"
        groups[gid] = {"channels": width, "fixed": True} if last or fixed_hidden else {"channels": width}
        layers.append({"id": f"fc{i}", "kind": "linear", "inputs": [prev], "group": gid})
        prev = f"fc{i}"
        if not last:
            layers.append({"id": f"relu{i}", "kind": "relu", "inputs": [prev]})
            prev = f"relu{i}"
    return {"input": {"shape": [widths[0]], "group": "in"}, "groups": groups,
            "layers": layers, "output": prev}


@dataclass
class _Layout:
    """Activation layout: channel group plus spatial extent per channel."""
    group: str
    hw: tuple = None  # (H, W) for 4-D activations
    per_channel: int = 1  # features per channel after flatten


def validate_model(spec):
    """Check a model spec; returns a list of :class:`Diagnostic` (empty = ok)."""
    diags, _, _ = _analyse(spec)
    return diags


def _analyse(spec):
    diags = []
    groups = spec.get("groups", {})
    inp = spec.get("input", {})
    layers = spec.get("layers", [])
    by_id = {}
    for node in layers:
        nid = node.get("id")
        if nid in by_id or nid == "input":
            diags.append(Diagnostic(str(nid), "duplicate-id", "node id used more than once"))
        by_id[nid] = node
        if node.get("kind") not in KINDS:
            diags.append(Diagnostic(str(nid), "unknown-kind", f"kind {node.get('kind')!r}"))

    in_group = inp.get("group")
    if in_group not in groups:
        diags.append(Diagnostic("input", "unknown-group", f"group {in_group!r} is not declared"))
    elif not groups[in_group].get("fixed", False):
        diags.append(Diagnostic("input", "fixed-io", "the input group must be fixed"))

    ts = graphlib.TopologicalSorter()
    for nid, node in by_id.items():
        ins = node.get("inputs", [])
        for src in ins:
            if src != "input" and src not in by_id:
                diags.append(Diagnostic(nid, "dag", f"input {src!r} does not exist"))
        ts.add(nid, *[s for s in ins if s in by_id])
    try:
        order = list(ts.static_order())
    except graphlib.CycleError as exc:
        diags.append(Diagnostic(str(exc.args[1][0]), "dag", "cycle detected"))
        return diags, [], {}
    if diags:
        return diags, [], {}

    layouts = {}
    shape = list(inp.get("shape", []))
    if len(shape) == 1:
        layouts["input"] = _Layout(in_group)
    elif len(shape) == 3:
        layouts["input"] = _Layout(in_group, hw=(shape[1], shape[2]))
    else:
        diags.append(Diagnostic("input", "shape", f"input shape {shape} must be [C] or [C,H,W]"))
        return diags, [], {}
    if groups[in_group]["channels"] != shape[0]:
        diags.append(Diagnostic("input", "shape", "input channels differ from the input group"))

    for nid in order:
        node = by_id[nid]
        kind = node["kind"]
        ins = node.get("inputs", [])
        want = 2 if kind == "add" else 1
        if len(ins) != want:
            diags.append(Diagnostic(nid, "arity", f"{kind} takes {want} input(s), got {len(ins)}"))
            continue
        if any(s not in layouts for s in ins):
            continue  # upstream error already reported
        src = layouts[ins[0]]
        if kind in WIDTH_KINDS:
            gid = node.get("group")
            if gid not in groups:
                diags.append(Diagnostic(nid, "unknown-group", f"group {gid!r} is not declared"))
                continue
            c_in = groups[src.group]["channels"]
            if kind == "linear":
                if src.hw is not None:
                    diags.append(Diagnostic(nid, "shape", "linear needs a flat input; add a flatten node"))
                    continue
                declared = node.get("in_channels")
                if declared is not None and declared != c_in * src.per_channel:
                    diags.append(Diagnostic(
                        nid, "shape",
                        f"in_channels={declared} but producer group {src.group!r} "
                        f"provides {c_in * src.per_channel}"))
                    continue
                layouts[nid] = _Layout(gid)
            else:
                if src.hw is None:
                    diags.append(Diagnostic(nid, "shape", "conv needs a [C,H,W] input"))
                    continue
                declared = node.get("in_channels")
                if declared is not None and declared != c_in:
                    diags.append(Diagnostic(
                        nid, "shape",
                        f"in_channels={declared} but producer group {src.group!r} has {c_in}"))
                    continue
                k = node.get("kernel", 3)
                kh, kw = (k, k) if isinstance(k, int) else tuple(k)
                stride, pad = node.get("stride", 1), node.get("padding", 0)
                if stride not in (1, 2) or pad < 0 or kh < 1 or kw < 1:
                    diags.append(Diagnostic(nid, "shape", "invalid kernel/stride/padding"))
                    continue
                ho = (src.hw[0] + 2 * pad - kh) // stride + 1
                wo = (src.hw[1] + 2 * pad - kw) // stride + 1
                if ho < 1 or wo < 1:
                    diags.append(Diagnostic(nid, "shape", "kernel larger than padded input"))
                    continue
                layouts[nid] = _Layout(gid, hw=(ho, wo))
        elif kind == "relu":
            layouts[nid] = src
        elif kind == "flatten":
            if src.hw is None:
                diags.append(Diagnostic(nid, "shape", "flatten needs a [C,H,W] input"))
                continue
            layouts[nid] = _Layout(src.group, per_channel=src.hw[0] * src.hw[1])
        elif kind == "add":
            other = layouts[ins[1]]
            if other.group != src.group:
                diags.append(Diagnostic(
                    nid, "group-mismatch",
                    f"add inputs carry groups {src.group!r} and {other.group!r}"))
                continue
            if (other.hw, other.per_channel) != (src.hw, src.per_channel):
                diags.append(Diagnostic(nid, "shape", "add inputs have different spatial shapes"))
                continue
            layouts[nid] = src

    out = spec.get("output")
    if out not in by_id:
        diags.append(Diagnostic(str(out), "output", "output node does not exist"))
    elif out in layouts:
        og = layouts[out].group
        if layouts[out].hw is not None:
            diags.append(Diagnostic(out, "shape", "output must be flat logits"))
        if not groups[og].get("fixed", False):
            diags.append(Diagnostic(out, "fixed-io", "the output group must be fixed"))
    return diags, order, layouts


class ModelGraph:
    """A validated, parameterised model with one :class:`GroupMask` per group."""

    def __init__(self, spec, seed=0, params=None):
        diags, order, layouts = _analyse(spec)
        if diags:
            raise ModelError(diags)
        self.spec = copy.deepcopy(spec)
        self.hash = spec_hash(self.spec)
        by_id = {n["id"]: n for n in spec["layers"]}
        self.order = [by_id[i] for i in order]
        self.layouts = layouts
        self.input_group = spec["input"]["group"]
        self.output_node = spec["output"]
        self.output_group = layouts[self.output_node].group
        self.num_classes = spec["groups"][self.output_group]["channels"]
        self.input_shape = tuple(spec["input"]["shape"])
        # sorted so that specs with equal hashes behave identically
        self.groups = {gid: GroupMask(gid, spec["groups"][gid]["channels"],
                                      spec["groups"][gid].get("fixed", False))
                       for gid in sorted(spec["groups"])}
        self.layers = {}
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5EED])))
        for node in self.order:
            if node["kind"] not in WIDTH_KINDS:
                continue
            nid = node["id"]
            c_out = self._channels(node["group"])
            src = layouts[node["inputs"][0]]
            c_in = self._channels(src.group) * src.per_channel
            if node["kind"] == "linear":
                wshape = (c_out, c_in)
            else:
                kh, kw = self._kernel(node)
                wshape = (c_out, c_in, kh, kw)
            fan_in = int(np.prod(wshape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            wv = rng.uniform(-bound, bound, size=wshape)
            bv = rng.uniform(-bound, bound, size=c_out)
            if params is not None:
                wv = params[f"{nid}.weight"]
                bv = params[f"{nid}.bias"]
            weight = ad.Tensor(wv, requires_grad=True, name=f"{nid}.weight")
            bias = ad.Tensor(bv, requires_grad=True, name=f"{nid}.bias")
            if node["kind"] == "linear":
                self.layers[nid] = LinearLayer(weight, bias)
            else:
                self.layers[nid] = ConvLayer(weight, bias, node.get("stride", 1), node.get("padding", 0))

    def _channels(self, gid):
        return self.groups[gid].channels

    @staticmethod
    def _kernel(node):
        k = node.get("kernel", 3)
        return (k, k) if isinstance(k, int) else tuple(k)

    # -- parameters ---------------------------------------------------------

    def parameters(self):
        """Network weights (theta) in declaration order."""
        out = []
        for node in self.order:
            layer = self.layers.get(node["id"])
            if layer is not None:
                out.extend([layer.weight, layer.bias])
        return out

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def mask_parameters(self):
        """Mask logits u of groups that are currently optimised."""
        return [g.u for g in self.groups.values() if g.trainable]

    def all_mask_logits(self):
        return [(f"mask.{gid}", g.u) for gid, g in self.groups.items()]

    def refresh_masks(self):
        for g in self.groups.values():
            g.refresh()

    def prunable_groups(self):
        return [gid for gid, g in self.groups.items() if not g.fixed]

    def mask_summary(self):
        return {gid: g.hard_count for gid, g in self.groups.items()}

    # -- forward ------------------------------------------------------------

    def _in_index(self, node):
        src = self.layouts[node["inputs"][0]]
        kept = self.groups[src.group].kept
        if src.per_channel == 1:
            return kept
        s = src.per_channel
        return (kept[:, None] * s + np.arange(s)[None, :]).ravel()

    def forward(self, x, mode="full"):
        """Run the network.

        ``soft`` scales every prunable layer's outputs by its group's w;
        ``hard`` physically restricts weights to the kept channels (the mask
        is a constant, so only surviving weights receive gradient).
        """
        if mode not in MODES:
            raise ValueError(f"unknown forward mode {mode!r}")
        x = ad.as_tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ad.DimensionError(f"input {x.shape} does not match {self.input_shape}")
        acts = {"input": x}
        for node in self.order:
            nid, kind = node["id"], node["kind"]
            ins = [acts[s] for s in node["inputs"]]
            if kind in WIDTH_KINDS:
                acts[nid] = self._width_forward(node, ins[0], mode)
            elif kind == "relu":
                acts[nid] = ad.relu(ins[0])
            elif kind == "add":
                acts[nid] = ad.add(ins[0], ins[1])
            elif kind == "flatten":
                acts[nid] = ad.reshape(ins[0], (ins[0].shape[0], -1))
        return acts[self.output_node]

    def _width_forward(self, node, x, mode):
        layer = self.layers[node["id"]]
        group = self.groups[node["group"]]
        if mode == "hard":
            out_idx = group.kept
            in_idx = self._in_index(node)
            weight, bias = layer.weight, layer.bias
            if out_idx.size != group.channels:
                weight = ad.take(weight, out_idx, 0)
                bias = ad.take(bias, out_idx, 0)
            if in_idx.size != layer.weight.shape[1]:
                weight = ad.take(weight, in_idx, 1)
            if isinstance(layer, LinearLayer):
                return linear_forward(LinearLayer(weight, bias), x)
            return conv2d_forward(ConvLayer(weight, bias, layer.stride, layer.padding), x)
        scale = group.w if (mode == "soft" and not group.fixed) else None
        if isinstance(layer, LinearLayer):
            return linear_forward(layer, x, scale)
        return conv2d_forward(layer, x, scale)

    def forward_soft(self, x):
        return self.forward(x, "soft")

    def forward_hard(self, x):
        return self.forward(x, "hard")

    # -- FLOPs --------------------------------------------------------------

    def _layer_terms(self):
        """(out group, in group, multiplier) per width-bearing layer."""
        terms = []
        for node in self.order:
            if node["kind"] not in WIDTH_KINDS:
                continue
            src = self.layouts[node["inputs"][0]]
            if node["kind"] == "linear":
                mult = src.per_channel
            else:
                kh, kw = self._kernel(node)
                ho, wo = self.layouts[node["id"]].hw
                mult = kh * kw * ho * wo
            terms.append((node["group"], src.group, mult))
        return terms

    def flops_from_counts(self, counts):
        """Integer MAC count given kept-channel counts per group."""
        total = 0
        for g_out, g_in, mult in self._layer_terms():
            total += counts[g_out] * counts[g_in] * mult
        return total

    def compute_flops(self, mode="full"):
        """Multiply-accumulates per sample, bias excluded.

        ``soft`` returns a differentiable Tensor built from the expected
        channel counts of both endpoints of every layer.
        """
        if mode == "full":
            return self.flops_from_counts({gid: g.channels for gid, g in self.groups.items()})
        if mode == "hard":
            return self.flops_from_counts({gid: g.hard_count for gid, g in self.groups.items()})
        if mode != "soft":
            raise ValueError(f"unknown FLOPs mode {mode!r}")
        counts = {gid: g.soft_count() for gid, g in self.groups.items()}
        total = None
        for g_out, g_in, mult in self._layer_terms():
            term = ad.scale(ad.mul(counts[g_out], counts[g_in]), float(mult))
            total = term if total is None else ad.add(total, term)
        return total

    def flops_ratio(self, mode="hard"):
        full = self.compute_flops("full")
        if mode == "soft":
            with ad.no_grad():
                return float(self.compute_flops("soft").values) / full
        return self.compute_flops(mode) / full

    # -- masks --------------------------------------------------------------

    def force_prefix_lengths(self, lengths):
        for gid, keep in lengths.items():
            self.groups[gid].force_prefix(int(keep))

    def release_masks(self):
        for g in self.groups.values():
            if g.forced is not None:
                g.release()

    def min_flops_ratio(self):
        counts = {gid: (g.channels if g.fixed else 1) for gid, g in self.groups.items()}
        return self.flops_from_counts(counts) / self.compute_flops("full")


@dataclass
class CompactModel:
    """Physically sliced hard network plus provenance."""
    graph: ModelGraph
    provenance: dict = field(default_factory=dict)

    def forward(self, x):
        return self.graph.forward(x, "full")

    def flops(self):
        return self.graph.compute_flops("full")


def export_compact(g, source_checkpoint_hash=None):
    """Slice every layer to its groups' kept channels."""
    spec = copy.deepcopy(g.spec)
    for gid, grp in g.groups.items():
        spec["groups"][gid]["channels"] = grp.hard_count
    if len(spec["input"]["shape"]) >= 1:
        spec["input"]["shape"][0] = g.groups[g.input_group].hard_count
    for node in spec["layers"]:
        node.pop("in_channels", None)
    params = {}
    for node in g.order:
        if node["kind"] not in WIDTH_KINDS:
            continue
        nid = node["id"]
        layer = g.layers[nid]
        out_idx = g.groups[node["group"]].kept
        in_idx = g._in_index(node)
        wv = layer.weight.values[out_idx][:, in_idx]
        params[f"{nid}.weight"] = np.array(wv, copy=True)
        params[f"{nid}.bias"] = np.array(layer.bias.values[out_idx], copy=True)
    compact = ModelGraph(spec, params=params)
    provenance = {
        "source_model_hash": g.hash,
        "source_checkpoint_hash": source_checkpoint_hash,
        "masks": {gid: grp.hard_count for gid, grp in g.groups.items()},
    }
    return CompactModel(compact, provenance)


def random_prefix_masks(g, target, tol, seed, max_attempts=100_000):
    """Rejection-sample kept-prefix lengths until the hard ratio is within tol of target."""
    if not 0.0 < target <= 1.0:
        raise ValueError(f"target ratio must lie in (0, 1], got {target}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xBA5E])))
    full = g.compute_flops("full")
    prunable = g.prunable_groups()
    counts = {gid: grp.channels for gid, grp in g.groups.items()}
    best = None
    for _ in range(max_attempts):
        for gid in prunable:
            counts[gid] = int(rng.integers(1, g.groups[gid].channels + 1))
        ratio = g.flops_from_counts(counts) / full
        err = abs(ratio - target)
        if best is None or err < best[0]:
            best = (err, ratio, {gid: counts[gid] for gid in prunable})
        if err <= tol:
            return {gid: counts[gid] for gid in prunable}
    raise InfeasibleError(
        f"no prefix assignment within {tol} of ratio {target} after {max_attempts} "
        f"attempts; closest ratio {best[1]:.6f}", closest=best[2])
