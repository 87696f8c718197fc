"""Staged optimization: prefix-based freezing, AdamW with decoupled decay,
cosine annealing, fresh training mixtures every epoch, early stopping, and
best/last checkpoints.

Stage ownership: the decoupling stage trains everything under decoupler.
(the shared stem lives there and is frozen afterwards); the target and
jamming stages each train one temporal branch plus its head; joint trains
all parameters. Frozen modules also run in eval mode so their normalization
buffers stay bit-identical through a stage.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds
from . import tensor as T
from .decoupler import decoupling_loss, si_snr
from .heads import bce_loss, ce_loss
from .model import JointHRRPNet, load_checkpoint, save_checkpoint
from .tensor import Tensor

log = logging.getLogger(__name__)

STAGES = ("decouple", "target", "jamming", "joint")


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "decouple"
    lr_max: float = 3e-3
    lr_min: float = 1e-6
    epochs: int = 100
    patience: int = 20
    seed: int = 42
    batch: int = 32
    lam_dec: float = 1.0
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)

    def validate(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}; one of {STAGES}")
        if not self.lr_max > self.lr_min > 0:
            raise ValueError("need lr_max > lr_min > 0")
        if not 1 <= self.patience <= self.epochs:
            raise ValueError("need 1 <= patience <= epochs")
        if self.batch < 1:
            raise ValueError("batch must be positive")
        if self.lam_dec < 0:
            raise ValueError("lam_dec must be non-negative")
        return self


@dataclass(frozen=True)
class StageMask:
    trainable: tuple
    frozen: tuple


_ALL = ("decoupler.", "temporal.tar.", "head.tar.", "temporal.jam.", "head.jam.")


def stage_masks(stage: str) -> StageMask:
    table = {
        "decouple": ("decoupler.",),
        "target": ("temporal.tar.", "head.tar."),
        "jamming": ("temporal.jam.", "head.jam."),
        "joint": _ALL,
    }
    if stage not in table:
        raise ValueError(f"unknown stage {stage!r}")
    on = table[stage]
    return StageMask(trainable=on, frozen=tuple(p for p in _ALL if p not in on))


def _prefix_modules(model: JointHRRPNet) -> dict:
    return {
        "decoupler.": model.decoupler,
        "temporal.tar.": model.temporal.tar,
        "head.tar.": model.head.tar,
        "temporal.jam.": model.temporal.jam,
        "head.jam.": model.head.jam,
    }


def apply_stage(model: JointHRRPNet, mask: StageMask) -> list:
    """Set train/eval and requires_grad per prefix; returns the trainable
    (name, param) pairs in registry order."""
    mods = _prefix_modules(model)
    for p in mask.trainable:
        mods[p].train().set_requires_grad(True)
    for p in mask.frozen:
        mods[p].eval().set_requires_grad(False)
    return [(n, p) for n, p in model.named_parameters()
            if any(n.startswith(pref) for pref in mask.trainable)]


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    e = min(epoch, cfg.epochs)
    span = cfg.lr_max - cfg.lr_min
    return cfg.lr_min + 0.5 * span * (1.0 + np.cos(np.pi * e / cfg.epochs))


class AdamW:
    """Decoupled weight decay applied before the adaptive step; a step with
    any non-finite gradient is skipped whole and counted."""

    def __init__(self, named_params, betas=(0.9, 0.999), weight_decay=1e-4,
                 eps=1e-8):
        self.named_params = list(named_params)
        self.b1, self.b2 = betas
        self.wd = weight_decay
        self.eps = eps
        self.t = 0
        self.skipped = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self, lr: float) -> bool:
        grads = {}
        for n, p in self.named_params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                self.skipped += 1
                log.warning("non-finite gradient in %s; step %d skipped", n, self.t)
                return False
            grads[n] = g
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n, p in self.named_params:
            g = grads[n]
            if self.wd:
                p.data -= lr * self.wd * p.data
            m = self.m[n]
            v = self.v[n]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def state_arrays(self) -> dict:
        out = {"opt.t": np.array(self.t, dtype=np.int64),
               "opt.skipped": np.array(self.skipped, dtype=np.int64)}
        for n in self.m:
            out[f"opt.m.{n}"] = self.m[n]
            out[f"opt.v.{n}"] = self.v[n]
        return out

    def load_state_arrays(self, arrays: dict):
        self.t = int(arrays["opt.t"])
        self.skipped = int(arrays["opt.skipped"])
        for n in self.m:
            self.m[n] = arrays[f"opt.m.{n}"].astype(self.m[n].dtype).copy()
            self.v[n] = arrays[f"opt.v.{n}"].astype(self.v[n].dtype).copy()


# ------------------------------------------------------------------- data --

@dataclass
class TrainData:
    bank: list                 # target templates, one per class
    protos_train: list         # (class_id, aspect) pairs resampled every epoch
    val: ds.SampleSet          # fixed validation mixtures
    synth: ds.SynthConfig
    per_epoch: int

    @property
    def c_tar(self) -> int:
        return self.val.c_tar


def build_train_data(c_tar: int, seed: int, synth: ds.SynthConfig = None,
                     per_epoch: int = 512, val_count: int = 128,
                     protos_per_class: int = 40) -> TrainData:
    """Standard data plumbing: template bank, 75/15/10 prototype split,
    and a fixed validation set drawn from the validation prototypes."""
    synth = synth or ds.SynthConfig()
    bank = ds.make_template_bank(c_tar, seed)
    protos = ds.make_prototypes(c_tar, protos_per_class, seed)
    p_train, p_val, _ = ds.split_templates(protos, (0.75, 0.15, 0.10), seed)
    val = ds.synthesize_set(bank, p_val, synth, val_count,
                            _stream_seed(seed, 43), c_tar)
    return TrainData(bank, p_train, val, synth, per_epoch)


def _stream_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def epoch_seed(seed: int, stage: str, epoch: int) -> int:
    """Master seed for one epoch's training mixtures."""
    return _stream_seed(seed, 41, STAGES.index(stage), epoch)


def stage_branches(stage: str) -> tuple:
    """Downstream branches a stage's loss and metric actually read."""
    return {"decouple": (), "target": ("tar",), "jamming": ("jam",),
            "joint": ("tar", "jam")}[stage]


# ------------------------------------------------------------------ loops --

def _stage_loss(stage: str, out, xb, cfg: TrainConfig) -> Tensor:
    t_ref = Tensor(xb["t"])
    i_ref = Tensor(xb["i"])
    if stage == "decouple":
        return decoupling_loss(out.t_hat, out.i_hat, t_ref, i_ref, cfg.lam_dec)
    if stage == "target":
        return ce_loss(out.tar_logits, xb["class_id"])
    if stage == "jamming":
        return bce_loss(out.jam_logits, xb["jam"])
    loss = ce_loss(out.tar_logits, xb["class_id"])
    loss = loss + bce_loss(out.jam_logits, xb["jam"])
    return loss + decoupling_loss(out.t_hat, out.i_hat, t_ref, i_ref, cfg.lam_dec)


def _batches(sset: ds.SampleSet, batch: int, order: np.ndarray):
    for lo in range(0, len(order), batch):
        idx = order[lo:lo + batch]
        yield {
            "x": sset.x[idx][:, None, :],
            "t": sset.t[idx],
            "i": sset.i[idx],
            "class_id": sset.class_id[idx].astype(np.int64),
            "jam": sset.jam_labels[idx].astype(np.float64),
        }


def validate(model: JointHRRPNet, sset: ds.SampleSet, stage: str,
             batch: int = 64) -> float:
    """Stage metric on a fixed set: decouple -> mean SI-SNR over both
    branches; target -> accuracy; jamming -> subset accuracy; joint -> mean
    of the two accuracies."""
    model.eval()
    vals = []
    order = np.arange(sset.count)
    with T.no_grad():
        for xb in _batches(sset, batch, order):
            out = model.forward(Tensor(xb["x"]), branches=stage_branches(stage))
            if stage == "decouple":
                a = si_snr(out.t_hat, Tensor(xb["t"])).data
                b = si_snr(out.i_hat, Tensor(xb["i"])).data
                vals.extend(0.5 * (a + b))
            elif stage == "target":
                vals.extend(out.tar_logits.data.argmax(axis=1) == xb["class_id"])
            elif stage == "jamming":
                pred = out.jam_probs.data > 0.5
                vals.extend(np.all(pred == (xb["jam"] > 0.5), axis=1))
            else:
                acc = out.tar_logits.data.argmax(axis=1) == xb["class_id"]
                sub = np.all((out.jam_probs.data > 0.5) == (xb["jam"] > 0.5), axis=1)
                vals.extend(0.5 * (acc.astype(np.float64) + sub))
    return float(np.mean(vals))


@dataclass
class TrainResult:
    best_path: str
    last_path: str
    history: list = field(default_factory=list)
    best_metric: float = -np.inf
    best_epoch: int = -1
    stopped_early: bool = False
    aborted: bool = False


def _write_history_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "lr", "train_loss", "val_metric"])
        for r in rows:
            w.writerow([r["epoch"], r["lr"], r["train_loss"], r["val_metric"]])


def train_stage(model: JointHRRPNet, data: TrainData, cfg: TrainConfig,
                out_dir: str, resume: bool = False) -> TrainResult:
    """One optimization stage. Synthesizes fresh training mixtures per epoch
    from epoch-derived seeds, validates on the fixed set, keeps best/last
    checkpoints, stops early after `patience` stale epochs, and aborts on a
    non-finite loss leaving the best checkpoint in place."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    best_path = os.path.join(out_dir, f"{cfg.stage}_best.ckpt")
    last_path = os.path.join(out_dir, f"{cfg.stage}_last.ckpt")
    res = TrainResult(best_path=best_path, last_path=last_path)

    mask = stage_masks(cfg.stage)
    trainable = apply_stage(model, mask)
    opt = AdamW(trainable, betas=cfg.betas, weight_decay=cfg.weight_decay)
    start_epoch = 0

    if resume and os.path.exists(last_path):
        meta, extra = load_checkpoint(last_path, model)
        opt.load_state_arrays(extra)
        start_epoch = int(meta["epoch"]) + 1
        res.best_metric = float(meta["best_metric"])
        res.best_epoch = int(meta["best_epoch"])
        res.history = list(meta["history"])
        log.info("resuming %s from epoch %d", cfg.stage, start_epoch)

    stage_idx = STAGES.index(cfg.stage)
    for epoch in range(start_epoch, cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        train_set = ds.synthesize_set(data.bank, data.protos_train, data.synth,
                                      data.per_epoch,
                                      epoch_seed(cfg.seed, cfg.stage, epoch),
                                      data.c_tar)
        apply_stage(model, mask)
        order = np.random.default_rng(
            [cfg.seed, 53, stage_idx, epoch]).permutation(train_set.count)
        drop_rng = np.random.default_rng([cfg.seed, 59, stage_idx, epoch])
        losses = []
        diverged = False
        for xb in _batches(train_set, cfg.batch, order):
            out = model.forward(Tensor(xb["x"]), drop_rng,
                                branches=stage_branches(cfg.stage))
            loss = _stage_loss(cfg.stage, out, xb, cfg)
            if not np.isfinite(loss.data):
                diverged = True
                break
            model.zero_grad()
            loss.backward()
            opt.step(lr)
            losses.append(float(loss.data))
        if diverged:
            log.error("non-finite loss in %s epoch %d; aborting stage", cfg.stage, epoch)
            res.aborted = True
            if os.path.exists(best_path):
                load_checkpoint(best_path, model)
            break

        metric = validate(model, data.val, cfg.stage)
        row = {"epoch": epoch, "lr": float(lr),
               "train_loss": float(np.mean(losses)), "val_metric": metric}
        res.history.append(row)
        if metric > res.best_metric:
            res.best_metric = metric
            res.best_epoch = epoch
            save_checkpoint(best_path, model,
                            meta={"stage": cfg.stage, "epoch": epoch, "metric": metric})
        save_checkpoint(last_path, model,
                        meta={"stage": cfg.stage, "epoch": epoch,
                              "best_metric": res.best_metric,
                              "best_epoch": res.best_epoch,
                              "history": res.history},
                        extra_arrays=opt.state_arrays())
        log.info("%s epoch %d lr %.2e loss %.4f metric %.4f",
                 cfg.stage, epoch, lr, row["train_loss"], metric)
        if epoch - res.best_epoch >= cfg.patience:
            res.stopped_early = True
            break

    _write_history_csv(os.path.join(out_dir, f"{cfg.stage}_history.csv"), res.history)
    if os.path.exists(best_path):
        load_checkpoint(best_path, model)
    return res
