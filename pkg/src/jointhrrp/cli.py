"""Command-line entry points: synth, train, eval, sweep, openset,
decouple_viz.

Every command resolves (config file, flag overrides) into one dict, snapshots
it as resolved_config.json in the output directory, and is a pure function of
that snapshot plus its input files; reruns reproduce outputs byte for byte.
Plotting is left to external tools; commands emit CSV/JSON data only.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import evaluator as ev
from . import model as M
from . import signal as sig
from . import trainer as tr
from .tensor import Tensor

STAGE_ORDER = ("decouple", "target", "jamming", "joint")

DEFAULT_CONFIG = {
    "seed": 42,
    "c_tar": 3,
    "out": "runs",
    "count": 1000,
    "synth": dataclasses.asdict(ds.SynthConfig()),
    "model": M.ModelConfig().to_dict(),
    "train": {
        "lr_max": 3e-3, "lr_min": 1e-6, "epochs": 100, "patience": 20,
        "batch": 32, "lam_dec": 1.0, "weight_decay": 1e-4,
        "betas": [0.9, 0.999],
    },
    "data": {"per_epoch": 512, "val_count": 128, "protos_per_class": 40},
    "openset": {"known": 9, "alpha": 3, "threshold": 0.5, "eta": 20,
                "val_count": 200, "test_count": 300},
}


def parse_range(s: str) -> tuple:
    try:
        lo, hi = (float(v) for v in s.split(":"))
    except Exception:
        raise ValueError(f"range must look like LO:HI, got {s!r}")
    if lo > hi:
        raise ValueError(f"range lo {lo} > hi {hi}")
    return (lo, hi)


def _deep_update(base: dict, over: dict) -> dict:
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        with open(args.config) as f:
            _deep_update(cfg, json.load(f))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "c_tar", None) is not None:
        cfg["c_tar"] = args.c_tar
    if getattr(args, "count", None) is not None:
        cfg["count"] = args.count
    if getattr(args, "snr", None):
        cfg["synth"]["snr_db"] = list(parse_range(args.snr))
    if getattr(args, "sjr", None):
        cfg["synth"]["sjr_db"] = list(parse_range(args.sjr))
    cfg["model"]["head"]["c_tar"] = cfg["c_tar"]
    # fail early, naming the offending field
    synth_config(cfg).validate()
    model_config(cfg).validate()
    return cfg


def synth_config(cfg: dict) -> ds.SynthConfig:
    d = dict(cfg["synth"])
    wf = sig.RadarWaveformSpec(**d.pop("wf"))
    return ds.SynthConfig(wf=wf, **{k: tuple(v) if isinstance(v, list) else v
                                    for k, v in d.items()})


def model_config(cfg: dict) -> M.ModelConfig:
    return M.ModelConfig.from_dict(cfg["model"])


def train_config(cfg: dict, stage: str) -> tr.TrainConfig:
    t = cfg["train"]
    return tr.TrainConfig(stage=stage, lr_max=t["lr_max"], lr_min=t["lr_min"],
                          epochs=t["epochs"], patience=t["patience"],
                          seed=cfg["seed"], batch=t["batch"],
                          lam_dec=t["lam_dec"], weight_decay=t["weight_decay"],
                          betas=tuple(t["betas"]))


def write_resolved(cfg: dict, out_dir: str, command: str):
    os.makedirs(out_dir, exist_ok=True)
    snap = {"command": command, **cfg}
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as f:
        json.dump(snap, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_model(cfg: dict, ckpt: str) -> M.JointHRRPNet:
    net = M.build_model(model_config(cfg), cfg["seed"])
    M.load_checkpoint(ckpt, net)
    return net


def _test_set(cfg: dict, count: int) -> ds.SampleSet:
    """Fixed test mixtures from the held-out prototype split."""
    c_tar = cfg["c_tar"]
    seed = cfg["seed"]
    bank = ds.make_template_bank(c_tar, seed)
    protos = ds.make_prototypes(c_tar, cfg["data"]["protos_per_class"], seed)
    _, _, p_test = ds.split_templates(protos, (0.75, 0.15, 0.10), seed)
    return ds.synthesize_set(bank, p_test, synth_config(cfg), count,
                             tr._stream_seed(seed, 47), c_tar)


# --------------------------------------------------------------- commands --

def cmd_synth(cfg: dict) -> int:
    out = cfg["out"]
    write_resolved(cfg, out, "synth")
    c_tar = cfg["c_tar"]
    bank = ds.make_template_bank(c_tar, cfg["seed"])
    protos = ds.make_prototypes(c_tar, cfg["data"]["protos_per_class"], cfg["seed"])
    sset = ds.synthesize_set(bank, protos, synth_config(cfg), cfg["count"],
                             tr._stream_seed(cfg["seed"], 37), c_tar)
    ds.export_dataset(sset, out)
    hist = ds.jam_histogram(sset.jam_labels)
    cooc, flagged = ds.cooccurrence_matrix(sset.jam_labels)
    with open(os.path.join(out, "stats.json"), "w") as f:
        json.dump({"count": int(sset.count),
                   "jam_histogram": hist.tolist(),
                   "combinations_seen": int(np.count_nonzero(hist)),
                   "cooccurrence_flagged_types": [int(i) for i in flagged]},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out, "cooccurrence.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([""] + list(ds.JAM_ORDER))
        for name, row in zip(ds.JAM_ORDER, cooc):
            w.writerow([name] + [f"{v:.6f}" for v in row])
    print(f"synth: wrote {sset.count} samples to {out}")
    return 0


def cmd_train(cfg: dict, stage: str, resume: bool, from_scratch: bool) -> int:
    out = cfg["out"]
    write_resolved(cfg, out, "train")
    net = M.build_model(model_config(cfg), cfg["seed"])
    idx = STAGE_ORDER.index(stage)
    if idx > 0 and not from_scratch:
        prior = STAGE_ORDER[idx - 1]
        prior_ckpt = os.path.join(out, f"{prior}_best.ckpt")
        if not os.path.exists(prior_ckpt):
            print(f"error: stage {stage!r} needs {prior_ckpt} from the "
                  f"{prior!r} stage first; train that stage or pass "
                  f"--from-scratch", file=sys.stderr)
            return 2
        M.load_checkpoint(prior_ckpt, net)
    data = tr.build_train_data(cfg["c_tar"], cfg["seed"], synth_config(cfg),
                               per_epoch=cfg["data"]["per_epoch"],
                               val_count=cfg["data"]["val_count"],
                               protos_per_class=cfg["data"]["protos_per_class"])
    res = tr.train_stage(net, data, train_config(cfg, stage), out, resume=resume)
    status = "aborted" if res.aborted else "done"
    print(f"train[{stage}]: {status}, best metric {res.best_metric:.4f} "
          f"at epoch {res.best_epoch} ({len(res.history)} epochs)")
    return 1 if res.aborted else 0


def _prediction_rows(net: M.JointHRRPNet, sset: ds.SampleSet):
    o = ev.model_outputs(net, sset)
    preds = o["tar_logits"].argmax(axis=1)
    for i in range(sset.count):
        yield {
            "index": i,
            "class_true": int(sset.class_id[i]),
            "class_pred": int(preds[i]),
            **{f"jam_prob_{n}": float(o["jam_probs"][i, j])
               for j, n in enumerate(ds.JAM_ORDER)},
            **{f"jam_true_{n}": int(sset.jam_labels[i, j])
               for j, n in enumerate(ds.JAM_ORDER)},
            "snr_db": float(sset.snr[i]),
            "sjr_db": float(sset.sjr[i]),
        }


def cmd_eval(cfg: dict, ckpt: str, data_path: str) -> int:
    out = cfg["out"]
    write_resolved(cfg, out, "eval")
    net = _load_model(cfg, ckpt)
    sset = ds.import_dataset(data_path) if data_path else _test_set(cfg, cfg["count"])
    report = ev.evaluate_model(net, sset)
    with open(os.path.join(out, "report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out, "confusion.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["truth\\pred"] + list(range(sset.c_tar)))
        for c, row in enumerate(report["target"]["confusion"]):
            w.writerow([c] + row)
    rows = list(_prediction_rows(net, sset))
    with open(os.path.join(out, "predictions.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"eval: accuracy {report['target']['accuracy']:.4f}, "
          f"subset {report['jamming']['subset_accuracy']:.4f}")
    return 0


def cmd_sweep(cfg: dict, ckpt: str, axis: str, points: str, points2: str,
              fixed: float) -> int:
    out = cfg["out"]
    write_resolved(cfg, out, "sweep")
    net = _load_model(cfg, ckpt)
    c_tar = cfg["c_tar"]
    bank = ds.make_template_bank(c_tar, cfg["seed"])
    protos = ds.make_prototypes(c_tar, cfg["data"]["protos_per_class"], cfg["seed"])
    _, _, p_test = ds.split_templates(protos, (0.75, 0.15, 0.10), cfg["seed"])
    pts = [float(v) for v in points.split(",")]
    if axis == "grid":
        if not points2:
            raise ValueError("grid sweep needs --points2 for the SJR axis")
        pts = (pts, [float(v) for v in points2.split(",")])
    rows = ev.sweep(net, bank, p_test, synth_config(cfg), c_tar, axis, pts,
                    count=cfg["count"], seed=cfg["seed"], fixed_other=fixed)
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"sweep[{axis}]: {len(rows)} points -> {out}/sweep.csv")
    return 0


def cmd_openset(cfg: dict, ckpt: str) -> int:
    out = cfg["out"]
    oc = cfg["openset"]
    total = cfg["c_tar"]
    if not 0 < oc["known"] < total:
        raise ValueError(f"openset needs 0 < known < c_tar, got known="
                         f"{oc['known']} with c_tar={total}")
    # the checkpoint was trained on the known-class prefix; size the head to it
    cfg["model"]["head"]["c_tar"] = oc["known"]
    write_resolved(cfg, out, "openset")
    net = _load_model(cfg, ckpt)
    rep = ev.open_set_experiment(net, synth_config(cfg), cfg["seed"],
                                 known=oc["known"], total=total,
                                 val_count=oc["val_count"],
                                 test_count=oc["test_count"],
                                 alpha=oc["alpha"], threshold=oc["threshold"],
                                 eta=oc["eta"])
    with open(os.path.join(out, "openset_scores.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "is_unknown", "rejected", "unknown_prob"])
        for i in range(len(rep["rejected"])):
            w.writerow([i, int(rep["is_unknown"][i]), int(rep["rejected"][i]),
                        f"{rep['probs'][i, -1]:.8f}"])
    summary = {k: rep[k] for k in
               ("auroc", "known_acceptance_rate", "unknown_rejection_rate",
                "counts", "tails", "tail_flags")}
    with open(os.path.join(out, "openset.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"openset: AUROC {rep['auroc']:.4f}, "
          f"acceptance {rep['known_acceptance_rate']:.4f}")
    return 0


VIZ_SERIES = ("x_mix", "t_hat", "i_hat", "t_clean", "i_clean", "sum_hat")


def cmd_decouple_viz(cfg: dict, ckpt: str) -> int:
    out = cfg["out"]
    write_resolved(cfg, out, "decouple_viz")
    net = _load_model(cfg, ckpt)
    sset = _test_set(cfg, cfg["count"])
    o = ev.model_outputs(net, sset)
    with open(os.path.join(out, "decouple_viz.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample", "series"] + [f"bin_{i}" for i in range(ds.WINDOW_LEN)])
        for i in range(sset.count):
            series = {
                "x_mix": sset.x[i], "t_hat": o["t_hat"][i], "i_hat": o["i_hat"][i],
                "t_clean": sset.t[i], "i_clean": sset.i[i],
                "sum_hat": o["t_hat"][i] + o["i_hat"][i],
            }
            for name in VIZ_SERIES:
                w.writerow([i, name] + [f"{v:.7e}" for v in series[name]])
    with open(os.path.join(out, "decouple_viz_sc.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample", "sc_tar", "sc_jam", "leakage"])
        for i in range(sset.count):
            w.writerow([i,
                        f"{ev.structural_correlation(o['t_hat'][i], sset.t[i]):.6f}",
                        f"{ev.structural_correlation(o['i_hat'][i], sset.i[i]):.6f}",
                        f"{ev.leakage(o['t_hat'][i], o['i_hat'][i]):.6f}"])
    print(f"decouple_viz: {sset.count} samples x {len(VIZ_SERIES)} series -> {out}")
    return 0


# ----------------------------------------------------------------- parsing --

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="jointhrrp",
        description="Composite-jamming HRRP synthesis, training, and evaluation")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, ckpt=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (default 42)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--c-tar", dest="c_tar", type=int, help="target class count")
        p.add_argument("--count", type=int, help="sample count")
        p.add_argument("--snr", help="SNR range LO:HI in dB")
        p.add_argument("--sjr", help="SJR range LO:HI in dB")
        if ckpt:
            p.add_argument("--ckpt", required=True, help="model checkpoint")

    common(sub.add_parser("synth", help="write a dataset + statistics"))

    p = sub.add_parser("train", help="run one training stage")
    common(p)
    p.add_argument("--stage", required=True, choices=STAGE_ORDER)
    p.add_argument("--resume", action="store_true",
                   help="continue from this stage's last checkpoint")
    p.add_argument("--from-scratch", action="store_true",
                   help="skip the prior-stage checkpoint requirement")

    p = sub.add_parser("eval", help="metrics report on a dataset")
    common(p, ckpt=True)
    p.add_argument("--data", help="dataset directory (default: synthesize a test set)")

    p = sub.add_parser("sweep", help="accuracy curves over SNR/SJR")
    common(p, ckpt=True)
    p.add_argument("--axis", required=True, choices=("snr", "sjr", "grid"))
    p.add_argument("--points", required=True, help="comma-separated values")
    p.add_argument("--points2", help="second axis values for grid mode")
    p.add_argument("--fixed", type=float, help="pin the other axis to this value")

    p = sub.add_parser("openset", help="OpenMax open-set evaluation")
    common(p, ckpt=True)
    p.add_argument("--known", type=int, help="known-class count (prefix of classes)")

    p = sub.add_parser("decouple_viz", help="per-sample reconstruction dump")
    common(p, ckpt=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.stage, args.resume, args.from_scratch)
        if args.command == "eval":
            return cmd_eval(cfg, args.ckpt, args.data)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.ckpt, args.axis, args.points,
                             args.points2, args.fixed)
        if args.command == "openset":
            if args.known is not None:
                cfg["openset"]["known"] = args.known
            return cmd_openset(cfg, args.ckpt)
        if args.command == "decouple_viz":
            return cmd_decouple_viz(cfg, args.ckpt)
        raise AssertionError(args.command)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
