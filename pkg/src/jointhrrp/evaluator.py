"""Evaluation: closed-set and multi-label metrics, reconstruction
diagnostics (leakage, structural correlation, SI-SNR), robustness sweeps,
and the OpenMax open-set protocol with Weibull tails.

Undefined quantities (all-zero reconstructions, zero-variance profiles,
single-class AUROC inputs) come back as NaN plus a missing-count in the
aggregate report instead of raising.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import dataset as ds
from . import tensor as T
from .decoupler import si_snr
from .model import JointHRRPNet
from .tensor import Tensor


# ----------------------------------------------------------------- metrics --

def closed_set_metrics(preds: np.ndarray, truths: np.ndarray, c_tar: int) -> dict:
    """Confusion matrix (rows = truth), per-class accuracy, and macro
    precision/recall/F1 over classes that actually appear."""
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if preds.shape != truths.shape or preds.ndim != 1:
        raise ValueError("preds and truths must be matching 1-d arrays")
    conf = np.zeros((c_tar, c_tar), dtype=np.int64)
    np.add.at(conf, (truths, preds), 1)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    diag = np.diag(conf).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = diag / support
        precision = diag / predicted
    f1 = np.zeros(c_tar)
    for c in range(c_tar):
        p, r = precision[c], recall[c]
        if np.isfinite(p) and np.isfinite(r) and (p + r) > 0:
            f1[c] = 2 * p * r / (p + r)
    present = support > 0
    empty = [int(c) for c in range(c_tar) if not present[c]]
    prec_m = np.where(np.isfinite(precision), precision, 0.0)
    return {
        "accuracy": float((preds == truths).mean()),
        "per_class_accuracy": [float(r) if present[c] else float("nan")
                               for c, r in enumerate(recall)],
        "macro_precision": float(prec_m[present].mean()),
        "macro_recall": float(recall[present].mean()),
        "macro_f1": float(f1[present].mean()),
        "confusion": conf.tolist(),
        "empty_classes": empty,
    }


def multilabel_metrics(probs: np.ndarray, truths: np.ndarray,
                       threshold: float = 0.5) -> dict:
    """Subset accuracy, element-wise accuracy, and macro scores over the
    four jamming labels."""
    probs = np.asarray(probs, dtype=np.float64)
    truths = np.asarray(truths) > 0.5
    if probs.shape != truths.shape or probs.ndim != 2:
        raise ValueError("probs and truths must be matching [N, L] arrays")
    preds = probs > threshold
    match = preds == truths
    n_lab = probs.shape[1]
    per_p, per_r, per_f = [], [], []
    for j in range(n_lab):
        tp = float(np.sum(preds[:, j] & truths[:, j]))
        fp = float(np.sum(preds[:, j] & ~truths[:, j]))
        fn = float(np.sum(~preds[:, j] & truths[:, j]))
        p = tp / (tp + fp) if tp + fp > 0 else 0.0
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        per_p.append(p)
        per_r.append(r)
        per_f.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    return {
        "subset_accuracy": float(match.all(axis=1).mean()),
        "element_accuracy": float(match.mean()),
        "per_label_accuracy": [float(m) for m in match.mean(axis=0)],
        "macro_precision": float(np.mean(per_p)),
        "macro_recall": float(np.mean(per_r)),
        "macro_f1": float(np.mean(per_f)),
    }


def leakage(t_hat: np.ndarray, i_hat: np.ndarray) -> float:
    """mean|t*i| / sqrt(mean t^2 * mean i^2); NaN when either side is silent."""
    t = np.asarray(t_hat, dtype=np.float64)
    i = np.asarray(i_hat, dtype=np.float64)
    if t.shape != i.shape or t.ndim != 1:
        raise ValueError("expected matching 1-d arrays")
    et = np.mean(t * t)
    ei = np.mean(i * i)
    if et == 0.0 or ei == 0.0:
        return float("nan")
    return float(np.mean(np.abs(t * i)) / np.sqrt(et * ei))


def structural_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson r over range bins; NaN for zero-variance input."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("expected matching 1-d arrays")
    da = a - a.mean()
    db = b - b.mean()
    va = np.sum(da * da)
    vb = np.sum(db * db)
    if va == 0.0 or vb == 0.0:
        return float("nan")
    return float(np.sum(da * db) / np.sqrt(va * vb))


# ---------------------------------------------------------------- reports --

def model_outputs(model: JointHRRPNet, sset: ds.SampleSet, batch: int = 64):
    """Eval-mode forward over a sample set; returns stacked numpy outputs."""
    model.eval()
    outs = {"tar_logits": [], "jam_probs": [], "t_hat": [], "i_hat": [],
            "open_feat": [], "si_tar": [], "si_jam": []}
    with T.no_grad():
        for lo in range(0, sset.count, batch):
            sl = slice(lo, lo + batch)
            out = model.forward(Tensor(sset.x[sl][:, None, :]))
            outs["tar_logits"].append(out.tar_logits.data.copy())
            outs["jam_probs"].append(out.jam_probs.data.copy())
            outs["t_hat"].append(out.t_hat.data.copy())
            outs["i_hat"].append(out.i_hat.data.copy())
            outs["open_feat"].append(out.open_feat.data.copy())
            outs["si_tar"].append(si_snr(out.t_hat, Tensor(sset.t[sl])).data.copy())
            outs["si_jam"].append(si_snr(out.i_hat, Tensor(sset.i[sl])).data.copy())
    return {k: np.concatenate(v) for k, v in outs.items()}


def evaluate_model(model: JointHRRPNet, sset: ds.SampleSet,
                   batch: int = 64) -> dict:
    """Full metrics report on a labelled sample set."""
    o = model_outputs(model, sset, batch)
    preds = o["tar_logits"].argmax(axis=1)
    leaks = np.array([leakage(t, i) for t, i in zip(o["t_hat"], o["i_hat"])])
    sc_t = np.array([structural_correlation(th, tc)
                     for th, tc in zip(o["t_hat"], sset.t)])
    sc_j = np.array([structural_correlation(ih, ic)
                     for ih, ic in zip(o["i_hat"], sset.i)])
    return {
        "count": int(sset.count),
        "target": closed_set_metrics(preds, sset.class_id.astype(np.int64), sset.c_tar),
        "jamming": multilabel_metrics(o["jam_probs"], sset.jam_labels),
        "decoupling": {
            "mean_si_snr_tar": float(o["si_tar"].mean()),
            "mean_si_snr_jam": float(o["si_jam"].mean()),
            "mean_si_snr": float(0.5 * (o["si_tar"].mean() + o["si_jam"].mean())),
            "mean_leakage": float(np.nanmean(leaks)) if np.any(np.isfinite(leaks)) else float("nan"),
            "leakage_missing": int(np.sum(~np.isfinite(leaks))),
            "mean_sc_tar": float(np.nanmean(sc_t)) if np.any(np.isfinite(sc_t)) else float("nan"),
            "mean_sc_jam": float(np.nanmean(sc_j)) if np.any(np.isfinite(sc_j)) else float("nan"),
            "sc_missing": int(np.sum(~np.isfinite(sc_t)) + np.sum(~np.isfinite(sc_j))),
        },
    }


# ------------------------------------------------------------------ sweeps --

_AXES = {"snr": 0, "sjr": 1, "grid": 2}


def _point_seed(seed: int, tag: str, i: int, j: int = 0) -> int:
    h = np.random.SeedSequence([seed, 71, _AXES[tag], i, j])
    return int(h.generate_state(1, np.uint64)[0])


def sweep(model: JointHRRPNet, bank: list, protos: list, synth: ds.SynthConfig,
          c_tar: int, axis: str, points, count: int = 64, seed: int = 0,
          fixed_other: float = None) -> list:
    """Accuracy curves over SNR, SJR, or their grid.

    1-d sweeps pin the swept quantity to each point (degenerate range) and
    optionally pin the other axis to fixed_other; grid mode crosses the two
    point lists given as (snr_points, sjr_points). Every grid point gets a
    fixed-seed test batch, so repeated calls reproduce exactly.
    """
    if axis not in ("snr", "sjr", "grid"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    if axis == "grid":
        snr_pts, sjr_pts = points
        pairs = [(s, j, i, k) for i, s in enumerate(snr_pts)
                 for k, j in enumerate(sjr_pts)]
    elif axis == "snr":
        other = (fixed_other, fixed_other) if fixed_other is not None else synth.sjr_db
        pairs = [(p, other, i, 0) for i, p in enumerate(points)]
    else:
        other = (fixed_other, fixed_other) if fixed_other is not None else synth.snr_db
        pairs = [(other, p, i, 0) for i, p in enumerate(points)]

    rows = []
    for snr_v, sjr_v, i, k in pairs:
        snr_rng = (snr_v, snr_v) if np.isscalar(snr_v) else tuple(snr_v)
        sjr_rng = (sjr_v, sjr_v) if np.isscalar(sjr_v) else tuple(sjr_v)
        cfg = dataclasses.replace(synth, snr_db=snr_rng, sjr_db=sjr_rng)
        sset = ds.synthesize_set(bank, protos, cfg, count,
                                 _point_seed(seed, axis, i, k), c_tar)
        o = model_outputs(model, sset)
        preds = o["tar_logits"].argmax(axis=1)
        jam = multilabel_metrics(o["jam_probs"], sset.jam_labels)
        rows.append({
            "snr_lo": snr_rng[0], "snr_hi": snr_rng[1],
            "sjr_lo": sjr_rng[0], "sjr_hi": sjr_rng[1],
            "target_accuracy": float((preds == sset.class_id).mean()),
            "subset_accuracy": jam["subset_accuracy"],
        })
    return rows


# ---------------------------------------------------------------- open set --

@dataclass
class ClassTail:
    centroid: np.ndarray
    median_eu: float
    kappa: float
    lam: float
    eta: int
    n_fit: int


@dataclass
class WeibullTailModel:
    tails: dict = field(default_factory=dict)   # class -> ClassTail
    flags: dict = field(default_factory=dict)   # class -> reason excluded


def fit_weibull(x: np.ndarray) -> tuple:
    """Two-parameter Weibull MLE (location fixed at 0); returns (kappa, lam)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need a 1-d sample of at least 2 points")
    if np.any(x <= 0):
        raise ValueError("Weibull support is strictly positive")
    kappa, _, lam = stats.weibull_min.fit(x, floc=0)
    return float(kappa), float(lam)


def weibull_cdf(d: float, kappa: float, lam: float) -> float:
    if d <= 0:
        return 0.0
    return float(-np.expm1(-((d / lam) ** kappa)))


def _combined_distances(features: np.ndarray, centroid: np.ndarray,
                        median_eu: float) -> np.ndarray:
    eu = np.linalg.norm(features - centroid, axis=1)
    nc = np.linalg.norm(centroid)
    nf = np.linalg.norm(features, axis=1)
    denom = np.where(nf * nc > 0, nf * nc, 1.0)
    cos_d = 1.0 - (features @ centroid) / denom
    return eu / median_eu + cos_d


def fit_weibull_tails(val_features: np.ndarray, val_preds: np.ndarray,
                      val_truths: np.ndarray, eta: int = 20) -> WeibullTailModel:
    """Per-class tail fit on correctly classified validation samples: centroid,
    median-normalized combined distance, Weibull MLE on the eta largest."""
    feats = np.asarray(val_features, dtype=np.float64)
    preds = np.asarray(val_preds)
    truths = np.asarray(val_truths)
    model = WeibullTailModel()
    for c in np.unique(truths):
        c = int(c)
        sel = (truths == c) & (preds == truths)
        n = int(sel.sum())
        if n < eta:
            model.flags[c] = f"only {n} correct samples, need {eta}"
            continue
        fc = feats[sel]
        centroid = fc.mean(axis=0)
        eu = np.linalg.norm(fc - centroid, axis=1)
        med = float(np.median(eu))
        if med == 0.0:
            model.flags[c] = "degenerate: all features identical"
            continue
        d = _combined_distances(fc, centroid, med)
        tail = np.sort(d)[-eta:]
        if tail[-1] <= 0:
            model.flags[c] = "degenerate: zero tail distances"
            continue
        tail = np.clip(tail, 1e-12, None)
        kappa, lam = fit_weibull(tail)
        model.tails[c] = ClassTail(centroid, med, kappa, lam, eta, n)
    return model


def openmax_recalibrate(logits: np.ndarray, feature: np.ndarray,
                        tails: WeibullTailModel, alpha: int = 3,
                        threshold: float = 0.5) -> tuple:
    """Shave the top-alpha logits by rank-weighted Weibull CDFs of the
    feature's class distances; shaved mass becomes an unknown pseudo-class.

    Returns (probs over C+1 with unknown last, rejected flag).
    """
    z = np.asarray(logits, dtype=np.float64)
    f = np.asarray(feature, dtype=np.float64)
    c = z.shape[0]
    a = min(alpha, c)
    order = np.argsort(z)[::-1]
    zhat = z.copy()
    unknown = 0.0
    for rank, ci in enumerate(order[:a], start=1):
        tail = tails.tails.get(int(ci))
        if tail is None:
            continue  # class without a tail fit stays unrecalibrated
        d = _combined_distances(f[None, :], tail.centroid, tail.median_eu)[0]
        w = (a - rank + 1) / a
        shave = w * weibull_cdf(d, tail.kappa, tail.lam)
        zhat[ci] = z[ci] * (1.0 - shave)
        unknown += z[ci] * shave
    aug = np.concatenate([zhat, [unknown]])
    aug = aug - aug.max()
    probs = np.exp(aug)
    probs /= probs.sum()
    rejected = bool(probs[-1] >= probs[:-1].max() or probs[:-1].max() < threshold)
    return probs, rejected


def openmax_batch(logits: np.ndarray, features: np.ndarray,
                  tails: WeibullTailModel, alpha: int = 3,
                  threshold: float = 0.5) -> tuple:
    """Vector helper: returns (probs [N, C+1], rejected [N])."""
    probs, rej = [], []
    for z, f in zip(logits, features):
        p, r = openmax_recalibrate(z, f, tails, alpha, threshold)
        probs.append(p)
        rej.append(r)
    return np.array(probs), np.array(rej)


def auroc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mann-Whitney AUROC: probability a positive outranks a negative,
    ties averaged; NaN when one side is empty."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = stats.rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def open_set_experiment(model: JointHRRPNet, synth: ds.SynthConfig, seed: int,
                        known: int, total: int, val_count: int = 200,
                        test_count: int = 300, alpha: int = 3,
                        threshold: float = 0.5, eta: int = 20) -> dict:
    """Weibull tails from known-class validation mixtures, then OpenMax over
    a mixed known/unknown test set.

    The template bank draws classes sequentially from one stream, so the
    first `known` templates of the `total`-class bank are exactly the
    training templates; the model must have been trained with c_tar ==
    known. Unknown-ness is scored by the OpenMax unknown probability.
    """
    if not 0 < known < total:
        raise ValueError("need 0 < known < total classes")
    if model.cfg.head.c_tar != known:
        raise ValueError(
            f"model has {model.cfg.head.c_tar} classes, expected {known} known")
    bank = ds.make_template_bank(total, seed)
    val_protos = ds.make_prototypes(known, max(1, val_count // known), _stream_seed2(seed, 83))
    val = ds.synthesize_set(bank[:known], val_protos, synth, val_count,
                            _stream_seed2(seed, 89), known)
    ov = model_outputs(model, val)
    tails = fit_weibull_tails(ov["open_feat"], ov["tar_logits"].argmax(axis=1),
                              val.class_id.astype(np.int64), eta)

    test_protos = ds.make_prototypes(total, max(1, test_count // total), _stream_seed2(seed, 97))
    test = ds.synthesize_set(bank, test_protos, synth, test_count,
                             _stream_seed2(seed, 101), total)
    ot = model_outputs(model, test)
    probs, rejected = openmax_batch(ot["tar_logits"], ot["open_feat"], tails,
                                    alpha, threshold)
    is_unknown = test.class_id.astype(np.int64) >= known
    return {
        "auroc": auroc(probs[:, -1], is_unknown),
        "known_acceptance_rate": float(np.mean(~rejected[~is_unknown])),
        "unknown_rejection_rate": float(np.mean(rejected[is_unknown])),
        "counts": {"known": int(np.sum(~is_unknown)), "unknown": int(np.sum(is_unknown))},
        "tails": {
            int(c): {"kappa": t.kappa, "lam": t.lam, "eta": t.eta,
                     "n_fit": t.n_fit, "median_eu": t.median_eu}
            for c, t in tails.tails.items()},
        "tail_flags": {int(c): r for c, r in tails.flags.items()},
        "probs": probs,
        "rejected": rejected,
        "is_unknown": is_unknown,
    }


def _stream_seed2(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])
