"""Full network: decoupler feeding two disjoint temporal branches and their
decision heads, plus the binary checkpoint format used by every stage.

Parameter naming is load-bearing for staged training: everything lives under
one of the prefixes decoupler., temporal.tar., temporal.jam., head.tar.,
head.jam., and the trainer freezes or updates by prefix.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .decoupler import Decoupler, DecouplerConfig
from .heads import HeadConfig, JammingHead, TargetHead
from .temporal import TemporalConfig, TemporalEncoder
from .tensor import Tensor

CKPT_MAGIC = b"JHN1"

PREFIXES = ("decoupler.", "temporal.tar.", "temporal.jam.", "head.tar.", "head.jam.")


@dataclass(frozen=True)
class ModelConfig:
    decoupler: DecouplerConfig = field(default_factory=DecouplerConfig)
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    use_stat_filter: bool = True

    def validate(self):
        self.decoupler.validate()
        self.temporal.validate()
        self.head.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            decoupler=DecouplerConfig(**d["decoupler"]),
            temporal=TemporalConfig(**d["temporal"]),
            head=HeadConfig(**d["head"]),
            use_stat_filter=bool(d["use_stat_filter"]))


def config_hash(cfg: ModelConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


class _Pair(nn.Module):
    def __init__(self, tar: nn.Module, jam: nn.Module):
        super().__init__()
        self.tar = tar
        self.jam = jam


@dataclass
class ModelOutput:
    t_hat: Tensor        # reconstructed target profile [B, T]
    i_hat: Tensor        # reconstructed jamming profile [B, T]
    aux: dict
    f_tar: Tensor        # pooled target-branch feature [B, H]
    f_jam: Tensor
    open_feat: Tensor    # input to the target head's final layer [B, hidden]
    tar_logits: Tensor
    tar_probs: Tensor
    jam_logits: Tensor
    jam_probs: Tensor


class JointHRRPNet(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.decoupler = Decoupler(cfg.decoupler, rng)
        self.temporal = _Pair(TemporalEncoder(cfg.temporal, rng),
                              TemporalEncoder(cfg.temporal, rng))
        self.head = _Pair(TargetHead(cfg.temporal.h, cfg.head, rng),
                          JammingHead(cfg.temporal.h, cfg.head, rng))

    def forward(self, x: Tensor, rng: np.random.Generator = None,
                branches: tuple = ("tar", "jam")) -> ModelOutput:
        """Run the decoupler and the requested downstream branches.

        Dropping a branch skips real work (staged training never reads the
        other branch's outputs); its ModelOutput fields come back None.
        Dropout rng consumption is unaffected because a frozen branch runs
        in eval mode and never draws.
        """
        if self.cfg.use_stat_filter:
            t_hat, i_hat, aux = self.decoupler.forward(x)
        else:
            t_hat, i_hat = self.decoupler.forward_unfiltered(x)
            aux = {}
        B, Tn = t_hat.shape
        f_tar = open_feat = tar_logits = tar_probs = None
        f_jam = jam_logits = jam_probs = None
        if "tar" in branches:
            f_tar = self.temporal.tar.forward(T.reshape(t_hat, (B, 1, Tn)), rng)
            open_feat = self.head.tar.features(f_tar)
            tar_logits = self.head.tar.fc2.forward(open_feat)
            tar_probs = T.softmax(tar_logits, axis=-1)
        if "jam" in branches:
            f_jam = self.temporal.jam.forward(T.reshape(i_hat, (B, 1, Tn)), rng)
            jam_logits, jam_probs = self.head.jam.forward(f_jam, rng)
        return ModelOutput(t_hat, i_hat, aux, f_tar, f_jam, open_feat,
                           tar_logits, tar_probs, jam_logits, jam_probs)


def build_model(cfg: ModelConfig, seed: int) -> JointHRRPNet:
    """Deterministic construction: one init stream per seed."""
    return JointHRRPNet(cfg, np.random.default_rng([seed, 7]))


# -------------------------------------------------------------- checkpoints --

def save_checkpoint(path, model: JointHRRPNet, meta: dict = None,
                    extra_arrays: dict = None):
    """Binary checkpoint: magic, JSON header, raw little-endian payloads.

    extra_arrays carries optimizer state and similar non-model tensors; they
    round-trip but never touch the module registry.
    """
    state = model.state_dict()
    if extra_arrays:
        clash = set(extra_arrays) & set(state)
        if clash:
            raise ValueError(f"extra array names collide with model state: {sorted(clash)}")
        state = {**state, **{k: np.asarray(v) for k, v in extra_arrays.items()}}
    names = sorted(state)
    entries = []
    for n in names:
        a = np.asarray(state[n])
        entries.append({"name": n, "shape": list(a.shape), "dtype": a.dtype.str})
    header = {
        "format_version": 1,
        "config": model.cfg.to_dict(),
        "config_hash": config_hash(model.cfg),
        "meta": meta or {},
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            a = np.asarray(state[n])
            f.write(a.astype(a.dtype.newbyteorder("<")).tobytes())


def read_checkpoint(path):
    """Returns (header dict, {name: array})."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hlen].decode())
    if header.get("format_version") != 1:
        raise ValueError(f"unsupported checkpoint format_version {header.get('format_version')}")
    off = 8 + hlen
    arrays = {}
    for e in header["tensors"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 1
        nbytes = count * dt.itemsize
        if off + nbytes > len(raw):
            raise ValueError("checkpoint truncated")
        arrays[e["name"]] = np.frombuffer(raw[off:off + nbytes], dtype=dt).reshape(e["shape"]).copy()
        off += nbytes
    if off != len(raw):
        raise ValueError("checkpoint has trailing bytes")
    return header, arrays


def load_checkpoint(path, model: JointHRRPNet):
    """Loads model tensors from path; returns (meta, extra_arrays).

    Rejects architecture mismatches up front, quoting both config hashes.
    """
    header, arrays = read_checkpoint(path)
    want = config_hash(model.cfg)
    got = header["config_hash"]
    if got != want:
        raise ValueError(
            f"checkpoint/architecture mismatch: checkpoint config hash {got}, "
            f"model config hash {want}")
    names = set(n for n, _ in model.named_parameters()) | set(n for n, _ in model.named_buffers())
    model.load_state_dict({n: arrays[n] for n in names})
    extra = {n: a for n, a in arrays.items() if n not in names}
    return header["meta"], extra
