"""Checkpoint container: JSON header plus raw little-endian float64 blobs.

Layout::

    b"S2HCKPT\\n"          8-byte magic
    uint64 LE             header length in bytes
    header                UTF-8 JSON, sorted keys, compact separators
    payload               float64 LE arrays in the order of header["entries"]

Each entry records ``name``, ``shape`` and byte ``offset`` into the payload.
Writes go to a temporary file in the target directory and are renamed into
place, so a reader never sees a half-written checkpoint.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ..pruner.trainer import TrajectoryRecord

MAGIC = b"S2HCKPT\n"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


class CheckpointError(RuntimeError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointHashError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    header: dict
    arrays: dict = field(default_factory=dict)

    @property
    def epoch(self):
        return self.header["epoch"]

    @property
    def model_hash(self):
        return self.header["model_hash"]

    def trajectory(self):
        return [TrajectoryRecord(**r) for r in self.header.get("trajectory", [])]


def encode_checkpoint(header, arrays):
    """Serialise ``header`` (without entries) and named arrays to bytes."""
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header["entries"] = entries
    header["payload_bytes"] = offset
    hb = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=True).encode()
    return MAGIC + _LEN.pack(len(hb)) + hb + b"".join(blobs)


def decode_checkpoint(raw, source="<bytes>"):
    if len(raw) < len(MAGIC) + _LEN.size:
        if raw[:len(MAGIC)] != MAGIC[:len(raw)]:
            raise CheckpointFormatError(f"{source}: not a checkpoint (bad magic)")
        raise CheckpointTruncatedError(f"{source}: truncated before header length")
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{source}: not a checkpoint (bad magic)")
    (hlen,) = _LEN.unpack_from(raw, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if len(raw) < start + hlen:
        raise CheckpointTruncatedError(f"{source}: truncated header ({len(raw) - start} of {hlen} bytes)")
    try:
        header = json.loads(raw[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{source}: corrupt header: {exc}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{source}: format version {version} unsupported (expected {FORMAT_VERSION})")
    payload = raw[start + hlen:]
    need = header.get("payload_bytes", 0)
    if len(payload) < need:
        raise CheckpointTruncatedError(f"{source}: truncated payload ({len(payload)} of {need} bytes)")
    if len(payload) > need:
        raise CheckpointFormatError(f"{source}: {len(payload) - need} trailing bytes")
    arrays = {}
    for e in header["entries"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        a = np.frombuffer(payload, dtype="<f8", count=n, offset=e["offset"])
        arrays[e["name"]] = a.astype(np.float64).reshape(e["shape"])
    return Checkpoint(header, arrays)


def atomic_write(path, data):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, header, arrays):
    atomic_write(path, encode_checkpoint(header, arrays))


def load_checkpoint(path, expected_model_hash=None):
    """Read a checkpoint; refuse it if its model hash differs from ``expected_model_hash``."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    ckpt = decode_checkpoint(raw, source=str(path))
    if expected_model_hash is not None and ckpt.model_hash != expected_model_hash:
        raise CheckpointHashError(
            f"{path}: checkpoint model hash {ckpt.model_hash} does not match live model "
            f"hash {expected_model_hash}")
    return ckpt


# -- model and trainer state -------------------------------------------------

def graph_arrays(graph):
    out = {name: p.values for name, p in graph.named_parameters()}
    out.update({name: u.values for name, u in graph.all_mask_logits()})
    return out


def trainer_header(trainer, kind, config=None, extra=None):
    g = trainer.graph
    cfg = trainer.cfg
    return {
        "kind": kind,
        "model_hash": g.hash,
        "model_spec": g.spec,
        "epoch": trainer.epoch,
        "config": config if config is not None else cfg.to_dict(),
        "rng": {"generator": "philox", "seed": cfg.seed, "next_epoch": trainer.epoch},
        "trajectory": [vars(r) for r in trainer.trajectory],
        "extra": extra or {},
    }


def save_trainer(trainer, path, kind="prune", config=None, extra=None):
    """Checkpoint a :class:`Pruner` or :class:`SupervisedTrainer` mid-run."""
    arrays = graph_arrays(trainer.graph)
    arrays.update(trainer.optimizer.state_arrays())
    save_checkpoint(path, trainer_header(trainer, kind, config, extra), arrays)


def load_graph_state(graph, ckpt, masks=True):
    """Copy weights (and mask logits) from ``ckpt`` into ``graph``."""
    if ckpt.model_hash != graph.hash:
        raise CheckpointHashError(
            f"checkpoint model hash {ckpt.model_hash} does not match live model hash {graph.hash}")
    for name, p in graph.named_parameters():
        p.values = ckpt.arrays[name].copy()
    if masks:
        for name, u in graph.all_mask_logits():
            u.values = ckpt.arrays[name].copy()
    graph.refresh_masks()


def restore_trainer(trainer, ckpt):
    """Resume ``trainer`` exactly where ``ckpt`` left off."""
    load_graph_state(trainer.graph, ckpt)
    trainer.optimizer.load_state_arrays(
        {k: v for k, v in ckpt.arrays.items() if k.startswith("momentum.")})
    trainer.epoch = ckpt.epoch
    trainer.trajectory = ckpt.trajectory()
    return trainer


__all__ = ["Checkpoint", "CheckpointError", "CheckpointFormatError", "CheckpointHashError",
           "CheckpointTruncatedError", "CheckpointVersionError", "FORMAT_VERSION", "MAGIC",
           "atomic_write", "decode_checkpoint", "encode_checkpoint", "graph_arrays",
           "load_checkpoint", "load_graph_state", "restore_trainer", "save_checkpoint",
           "save_trainer"]
