"""Sample composition, labels, splits, statistics, and dataset persistence.

Mixing convention: every component is synthesized as a complex time series
on the 1024-sample window grid; the jamming components are complex-summed and
pulse-compressed once into a single composite jamming profile, the target
echo is compressed separately, and the final superposition x = t + i + n is
linear in the real magnitude-profile domain. Energies are rescaled exactly,
so measured SNR/SJR reproduce the requested values to float rounding.

Per-sample randomness is derived from a single u64 seed:
  default_rng([seed, 1]) drives, in this order: center shift, aspect jitter,
  SNR, SJR, subset index, then per present type (candi, isrj, smsp, ncj):
  amplitude, range, velocity, type-specific parameters.
  default_rng([seed, 2]) drives the noise draw alone, so the noise vector
  can be replayed from the stored seed without re-running the rest.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import signal as sig
from .signal import (CandISpec, ComplexSeries, ISRJSpec, NCJSpec, RadarWaveformSpec,
                     SMSPSpec, TargetTemplateSpec)

JAM_ORDER = ("candi", "isrj", "smsp", "ncj")
JAM_BIT = {name: i for i, name in enumerate(JAM_ORDER)}

FORMAT_VERSION = 1
WINDOW_LEN = 1024


@dataclass
class LabelVector:
    target_part: np.ndarray  # u8, one-hot length c_tar
    jam_part: np.ndarray     # u8, multi-hot length 4

    def __post_init__(self):
        self.target_part = np.asarray(self.target_part, dtype=np.uint8)
        self.jam_part = np.asarray(self.jam_part, dtype=np.uint8)
        if int(self.target_part.sum()) != 1:
            raise ValueError("target part must be one-hot")
        if self.jam_part.size != 4 or int(self.jam_part.sum()) < 1:
            raise ValueError("jam part must be multi-hot length 4, at least one set")

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.target_part, self.jam_part])


@dataclass(frozen=True)
class SceneSpec:
    """Bookkeeping: suppression-like (ncj) vs deception-like component counts."""
    num_sup: int
    num_dec: int
    snr_db: float
    sjr_db: float

    def __post_init__(self):
        if not 1 <= self.num_sup + self.num_dec <= 4:
            raise ValueError("component count must be in [1, 4]")

    @staticmethod
    def from_jam_set(jam_set, snr_db: float, sjr_db: float) -> "SceneSpec":
        sup = 1 if "ncj" in jam_set else 0
        return SceneSpec(sup, len(jam_set) - sup, snr_db, sjr_db)


@dataclass
class CompositeSample:
    x_mix: np.ndarray
    t_clean: np.ndarray
    i_clean: np.ndarray
    label: LabelVector
    snr_db: float
    sjr_db: float
    class_id: int
    jam_set: tuple
    seed: int

    def __post_init__(self):
        for name in ("x_mix", "t_clean", "i_clean"):
            v = getattr(self, name)
            if v.shape != (WINDOW_LEN,):
                raise ValueError(f"{name} must have length {WINDOW_LEN}")
            if not np.isfinite(v).all():
                raise ValueError(f"{name} has non-finite entries")
        expect = make_label(self.class_id, self.jam_set, self.label.target_part.size)
        if not np.array_equal(expect.vector, self.label.vector):
            raise ValueError("label inconsistent with meta")

    @property
    def jam_mask(self) -> int:
        return int(sum(1 << JAM_BIT[j] for j in self.jam_set))


def sample_jamming_subset(rng: np.random.Generator) -> tuple:
    """Uniform draw over the 15 non-empty subsets of the four jamming types."""
    idx = int(rng.integers(1, 16))
    return tuple(name for name in JAM_ORDER if idx >> JAM_BIT[name] & 1)


def make_label(class_id: int, jam_set, c_tar: int) -> LabelVector:
    if not 0 <= class_id < c_tar:
        raise ValueError(f"class_id {class_id} outside [0, {c_tar})")
    if not jam_set:
        raise ValueError("jam_set must be non-empty")
    tp = np.zeros(c_tar, dtype=np.uint8)
    tp[class_id] = 1
    jp = np.zeros(4, dtype=np.uint8)
    for j in jam_set:
        jp[JAM_BIT[j]] = 1
    return LabelVector(tp, jp)


def decode_label(label: LabelVector) -> tuple:
    class_id = int(np.argmax(label.target_part))
    jam_set = tuple(name for name in JAM_ORDER if label.jam_part[JAM_BIT[name]])
    return class_id, jam_set


def compose_sample(t: np.ndarray, jam_components: list, snr_db: float, sjr_db: float,
                   rng: np.random.Generator, *, class_id: int = 0,
                   jam_set=("candi",), seed: int = 0, c_tar: int = 3) -> CompositeSample:
    """Rescale jamming and noise to exact SJR/SNR energies and superpose.

    The composite is peak-normalized; t_clean and i_clean carry the same
    factor so x_mix = t_clean + i_clean + n holds exactly.
    """
    t = np.asarray(t, dtype=np.float64)
    e_tar = sig.energy(t)
    if e_tar <= 0.0:
        raise ValueError("target profile has zero energy")
    i_raw = np.zeros(WINDOW_LEN, dtype=np.float64)
    for comp in jam_components:
        i_raw = i_raw + np.asarray(comp, dtype=np.float64)
    e_raw = sig.energy(i_raw)
    if e_raw <= 0.0:
        raise ValueError("composite jamming has zero energy")
    i_scaled = i_raw * np.sqrt(e_tar * 10.0 ** (-sjr_db / 10.0) / e_raw)
    u = np.abs(sig.awgn(WINDOW_LEN, 1.0, rng).samples)
    n_scaled = u * np.sqrt(e_tar * 10.0 ** (-snr_db / 10.0) / sig.energy(u))
    g = 1.0 / np.max(t + i_scaled + n_scaled)
    t_clean = g * t
    i_clean = g * i_scaled
    x_mix = t_clean + i_clean + g * n_scaled
    label = make_label(class_id, jam_set, c_tar)
    return CompositeSample(x_mix, t_clean, i_clean, label, snr_db, sjr_db,
                           class_id, tuple(jam_set), seed)


def replay_noise(sample: CompositeSample) -> np.ndarray:
    """Reproduce the scaled, normalized noise vector from the stored seed."""
    rng = np.random.default_rng([sample.seed, 2])
    u = np.abs(sig.awgn(WINDOW_LEN, 1.0, rng).samples)
    e_tar = sig.energy(sample.t_clean)
    return u * np.sqrt(e_tar * 10.0 ** (-sample.snr_db / 10.0) / sig.energy(u))


# --------------------------------------------------------------- templates --

TARGET_CENTER_M = 2800.0
TARGET_SPAN_M = 120.0


def make_template_bank(c_tar: int, seed: int,
                       aspect_jitter: float = 0.01) -> list:
    """Fixed point-scatterer layouts, one per class: 4-8 scatterers around a
    common center, amplitudes in [0.5, 1]."""
    if not 2 <= c_tar <= 12:
        raise ValueError("c_tar must be in [2, 12]")
    rng = np.random.default_rng([seed, 17])
    bank = []
    for k in range(c_tar):
        n_scat = int(rng.integers(4, 9))
        offsets = np.sort(rng.uniform(-TARGET_SPAN_M, TARGET_SPAN_M, n_scat))
        amps = rng.uniform(0.5, 1.0, n_scat)
        bank.append(TargetTemplateSpec(
            class_id=k,
            scatterer_positions=tuple(TARGET_CENTER_M + offsets),
            scatterer_amplitudes=tuple(amps),
            aspect_jitter=aspect_jitter))
    for a in range(c_tar):
        for b in range(a + 1, c_tar):
            if bank[a].scatterer_positions == bank[b].scatterer_positions:
                raise RuntimeError("degenerate template bank: identical layouts")
    return bank


def make_prototypes(c_tar: int, per_class: int, seed: int) -> list:
    """(class_id, aspect) pairs; aspects uniform in [-pi/6, pi/6]."""
    rng = np.random.default_rng([seed, 23])
    protos = []
    for k in range(c_tar):
        for _ in range(per_class):
            protos.append((k, float(rng.uniform(-np.pi / 6, np.pi / 6))))
    return protos


def split_templates(templates: list, ratios: tuple, seed: int) -> tuple:
    """Disjoint (train, val, test) partition with exact floor-based counts."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    n = len(templates)
    if n < 3:
        raise ValueError("fewer templates than partitions")
    n_val = int(np.floor(ratios[1] * n))
    n_test = int(np.floor(ratios[2] * n))
    n_train = n - n_val - n_test
    order = np.random.default_rng([seed, 31]).permutation(n)
    train = [templates[i] for i in order[:n_train]]
    val = [templates[i] for i in order[n_train:n_train + n_val]]
    test = [templates[i] for i in order[n_train + n_val:]]
    return train, val, test


# -------------------------------------------------------------- synthesis --

@dataclass(frozen=True)
class SynthConfig:
    wf: RadarWaveformSpec = RadarWaveformSpec()
    snr_db: tuple = (-10.0, 15.0)
    sjr_db: tuple = (-10.0, 0.0)
    center_shift_m: float = 150.0
    jam_range_m: tuple = (1500.0, 5000.0)
    jam_velocity_mps: tuple = (100.0, 600.0)
    jam_amplitude: tuple = (0.8, 1.2)

    def validate(self):
        for name in ("snr_db", "sjr_db", "jam_range_m", "jam_velocity_mps", "jam_amplitude"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lo {lo} > hi {hi}")
        return self


def draw_jamming_spec(kind: str, rng: np.random.Generator, cfg: SynthConfig):
    """Draw one jamming component's parameters inside the documented ranges."""
    wf = cfg.wf
    amp = float(rng.uniform(*cfg.jam_amplitude))
    rng_m = float(rng.uniform(*cfg.jam_range_m))
    vel = float(rng.uniform(*cfg.jam_velocity_mps))
    delay = 2.0 * rng_m / sig.C_LIGHT
    dopp = sig.velocity_to_doppler(vel)
    if kind == "candi":
        period = rng.uniform(0.5e-6, 1.5e-6)
        n_c = max(1, int(round(wf.pulse_width / period)))
        n_r = int(rng.integers(2, 6))
        return CandISpec(n_c=n_c, n_r=n_r, amplitude=amp, delay=delay, doppler=dopp)
    if kind == "isrj":
        p = int(rng.integers(2, 6))
        q = int(rng.integers(1, 3))
        t_i = wf.pulse_width / (p * (q + 1))
        return ISRJSpec(p=p, q=q, t_i=t_i, duty=1.0 / (q + 1), amplitude=amp,
                        delay=delay, doppler=dopp)
    if kind == "smsp":
        m_s = int(rng.integers(2, 5))
        df = float(rng.uniform(1e6, 3e6))
        freqs = tuple((np.arange(m_s) - (m_s - 1) / 2.0) * df)
        slopes = (m_s * wf.bandwidth / wf.pulse_width,) * m_s
        return SMSPSpec(m_s=m_s, freqs=freqs, slopes=slopes, amplitude=amp,
                        delay=delay, doppler=dopp)
    if kind == "ncj":
        klen = int(rng.integers(8, 65))
        kseed = int(rng.integers(0, 2 ** 63))
        return NCJSpec(kernel_len=klen, kernel_seed=kseed, amplitude=amp,
                       delay=delay, doppler=dopp)
    raise ValueError(f"unknown jamming kind {kind!r}")


def _gen_component(kind: str, spec, pulse: ComplexSeries, wf: RadarWaveformSpec):
    if kind == "candi":
        return sig.gen_candi(pulse, spec)
    if kind == "isrj":
        return sig.gen_isrj(pulse, spec, max_len=WINDOW_LEN)
    if kind == "smsp":
        return sig.gen_smsp(spec, wf)
    if kind == "ncj":
        return sig.gen_ncj(pulse, spec)
    raise ValueError(kind)


def synth_jamming_window(jam_set, specs: dict, pulse: ComplexSeries,
                         wf: RadarWaveformSpec) -> np.ndarray:
    """Complex window-grid sum of the placed jamming components.

    Each placed component is normalized to unit time-domain energy before its
    Table-range amplitude applies, so no single mechanism dominates the
    composite by construction.
    """
    total = np.zeros(WINDOW_LEN, dtype=np.complex128)
    for kind in JAM_ORDER:
        if kind not in jam_set:
            continue
        spec = specs[kind]
        raw = _gen_component(kind, spec, pulse, wf)
        d = int(round(spec.delay * wf.sample_rate))
        placed = sig.place_component(raw, d, spec.doppler, WINDOW_LEN)
        e = sig.energy(placed)
        if e > 0.0:
            placed = placed * (spec.amplitude / np.sqrt(e))
        total += placed
    return total


def synthesize_sample(bank: list, proto: tuple, cfg: SynthConfig, seed: int,
                      c_tar: int) -> CompositeSample:
    """One composite sample from (class, aspect) under the documented draw order."""
    class_id, aspect = proto
    wf = cfg.wf
    pulse = sig.lfm_pulse(wf)
    rng = np.random.default_rng([seed, 1])
    shift = float(rng.uniform(-cfg.center_shift_m, cfg.center_shift_m))
    tmpl = bank[class_id]
    shifted = dataclasses.replace(
        tmpl, scatterer_positions=tuple(p + shift for p in tmpl.scatterer_positions))
    echo = sig.synth_target_echo(shifted, aspect, wf, rng, WINDOW_LEN)
    t_prof = sig.compress_to_profile(echo, pulse)
    snr = float(rng.uniform(*cfg.snr_db))
    sjr = float(rng.uniform(*cfg.sjr_db))
    jam_set = sample_jamming_subset(rng)
    specs = {kind: draw_jamming_spec(kind, rng, cfg)
             for kind in JAM_ORDER if kind in jam_set}
    jam_window = synth_jamming_window(jam_set, specs, pulse, wf)
    i_prof = sig.compress_to_profile(ComplexSeries(jam_window, wf.sample_rate), pulse)
    noise_rng = np.random.default_rng([seed, 2])
    return compose_sample(t_prof, [i_prof], snr, sjr, noise_rng,
                          class_id=class_id, jam_set=jam_set, seed=seed,
                          c_tar=c_tar)


@dataclass
class SampleSet:
    x: np.ndarray        # [N,1024] f32
    t: np.ndarray
    i: np.ndarray
    labels: np.ndarray   # [N, c_tar+4] u8
    class_id: np.ndarray
    jam_mask: np.ndarray
    snr: np.ndarray
    sjr: np.ndarray
    seed: np.ndarray     # u64
    c_tar: int

    @property
    def count(self) -> int:
        return self.x.shape[0]

    @property
    def jam_labels(self) -> np.ndarray:
        return self.labels[:, self.c_tar:]


def sample_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, np.uint64)[0])


def _n_workers() -> int:
    try:
        return max(1, int(os.environ.get("JHN_THREADS", "1")))
    except ValueError:
        return 1


def synthesize_set(bank: list, protos: list, cfg: SynthConfig, count: int,
                   master_seed: int, c_tar: int) -> SampleSet:
    """Compose ``count`` samples cycling the prototypes; deterministic in
    master_seed regardless of worker count (per-sample seeds)."""
    x = np.zeros((count, WINDOW_LEN), dtype=np.float32)
    t = np.zeros_like(x)
    i_arr = np.zeros_like(x)
    labels = np.zeros((count, c_tar + 4), dtype=np.uint8)
    class_id = np.zeros(count, dtype=np.uint16)
    jam_mask = np.zeros(count, dtype=np.uint8)
    snr = np.zeros(count, dtype=np.float32)
    sjr = np.zeros(count, dtype=np.float32)
    seeds = np.zeros(count, dtype=np.uint64)

    def fill(idx: int):
        s = sample_seed(master_seed, idx)
        samp = synthesize_sample(bank, protos[idx % len(protos)], cfg, s, c_tar)
        x[idx] = samp.x_mix
        t[idx] = samp.t_clean
        i_arr[idx] = samp.i_clean
        labels[idx] = samp.label.vector
        class_id[idx] = samp.class_id
        jam_mask[idx] = samp.jam_mask
        snr[idx] = samp.snr_db
        sjr[idx] = samp.sjr_db
        seeds[idx] = s

    workers = _n_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(count)))
    else:
        for idx in range(count):
            fill(idx)
    return SampleSet(x, t, i_arr, labels, class_id, jam_mask, snr, sjr, seeds, c_tar)


# -------------------------------------------------------------- statistics --

def jam_histogram(jam_labels: np.ndarray) -> np.ndarray:
    """Counts over subset bitmasks 0..15 (index = mask; 0 stays empty)."""
    jam_labels = np.asarray(jam_labels)
    masks = (jam_labels.astype(np.int64) << np.arange(4)).sum(axis=1)
    return np.bincount(masks, minlength=16)


def cooccurrence_matrix(jam_labels: np.ndarray) -> tuple:
    """Pairwise Pearson correlation of the four indicator columns.

    Returns (4x4 matrix, flags) where flags lists zero-variance columns;
    their off-diagonal entries are defined as 0, diagonal stays 1.
    """
    jl = np.asarray(jam_labels, dtype=np.float64)
    if jl.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    centered = jl - jl.mean(axis=0)
    var = (centered ** 2).mean(axis=0)
    flags = [int(k) for k in np.nonzero(var == 0.0)[0]]
    mat = np.eye(4)
    for a in range(4):
        for b in range(a + 1, 4):
            if var[a] == 0.0 or var[b] == 0.0:
                r = 0.0
            else:
                r = float((centered[:, a] * centered[:, b]).mean()
                          / np.sqrt(var[a] * var[b]))
            mat[a, b] = mat[b, a] = r
    return mat, flags


# -------------------------------------------------------------- file format --

def _record_dtype(c_tar: int) -> np.dtype:
    return np.dtype([
        ("x_mix", "<f4", (WINDOW_LEN,)),
        ("t_clean", "<f4", (WINDOW_LEN,)),
        ("i_clean", "<f4", (WINDOW_LEN,)),
        ("label", "u1", (c_tar + 4,)),
        ("snr", "<f4"),
        ("sjr", "<f4"),
        ("class_id", "<u2"),
        ("jam_mask", "u1"),
        ("seed", "<u8"),
    ])


def export_dataset(samples, path: str):
    """Write manifest.json + data.bin. ``samples`` is a SampleSet or a list
    of CompositeSample."""
    if isinstance(samples, SampleSet):
        ds = samples
    else:
        c_tar = samples[0].label.target_part.size
        ds = SampleSet(
            x=np.stack([s.x_mix for s in samples]).astype(np.float32),
            t=np.stack([s.t_clean for s in samples]).astype(np.float32),
            i=np.stack([s.i_clean for s in samples]).astype(np.float32),
            labels=np.stack([s.label.vector for s in samples]),
            class_id=np.array([s.class_id for s in samples], dtype=np.uint16),
            jam_mask=np.array([s.jam_mask for s in samples], dtype=np.uint8),
            snr=np.array([s.snr_db for s in samples], dtype=np.float32),
            sjr=np.array([s.sjr_db for s in samples], dtype=np.float32),
            seed=np.array([s.seed for s in samples], dtype=np.uint64),
            c_tar=c_tar)
    rec = np.zeros(ds.count, dtype=_record_dtype(ds.c_tar))
    rec["x_mix"] = ds.x
    rec["t_clean"] = ds.t
    rec["i_clean"] = ds.i
    rec["label"] = ds.labels
    rec["snr"] = ds.snr
    rec["sjr"] = ds.sjr
    rec["class_id"] = ds.class_id
    rec["jam_mask"] = ds.jam_mask
    rec["seed"] = ds.seed
    payload = rec.tobytes()
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "data.bin"), "wb") as f:
        f.write(payload)
    manifest = {
        "format_version": FORMAT_VERSION,
        "c_tar": ds.c_tar,
        "c_jam": 4,
        "length": WINDOW_LEN,
        "count": ds.count,
        "dtype": "f32le",
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def import_dataset(path: str) -> SampleSet:
    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {manifest.get('format_version')}")
    with open(os.path.join(path, "data.bin"), "rb") as f:
        payload = f.read()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest["checksum"]:
        raise ValueError("checksum failure: data.bin does not match manifest")
    c_tar = manifest["c_tar"]
    dtype = _record_dtype(c_tar)
    if len(payload) != manifest["count"] * dtype.itemsize:
        raise ValueError(
            f"truncated payload: {len(payload)} bytes for {manifest['count']} records")
    rec = np.frombuffer(payload, dtype=dtype)
    return SampleSet(
        x=rec["x_mix"].copy(), t=rec["t_clean"].copy(), i=rec["i_clean"].copy(),
        labels=rec["label"].copy(), class_id=rec["class_id"].copy(),
        jam_mask=rec["jam_mask"].copy(), snr=rec["snr"].copy(), sjr=rec["sjr"].copy(),
        seed=rec["seed"].copy(), c_tar=c_tar)
