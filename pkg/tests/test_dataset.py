"""Dataset pipeline tests: subset statistics, exact-energy composition,
labels, splits, synthesis determinism, and the binary file format.

Oracles here are literal enumerations or per-element loops, written before
the implementation and kept independent of it.
"""

import json
import math
import os

import numpy as np
import pytest

import jointhrrp.dataset as ds
import jointhrrp.signal as sig


# ------------------------------------------------------------- oracles --

def oracle_pearson(a, b):
    """Textbook sample correlation, scalar loops."""
    n = len(a)
    am = sum(a) / n
    bm = sum(b) / n
    num = sum((x - am) * (y - bm) for x, y in zip(a, b))
    da = math.sqrt(sum((x - am) ** 2 for x in a))
    db = math.sqrt(sum((y - bm) ** 2 for y in b))
    return num / (da * db)


def enumerate_subsets():
    """All 15 non-empty subsets as a 15x4 indicator matrix."""
    rows = []
    for mask in range(1, 16):
        rows.append([(mask >> b) & 1 for b in range(4)])
    return np.array(rows, dtype=np.uint8)


def test_enumerated_offdiagonal_correlation_is_minus_one_fourteenth():
    m = enumerate_subsets()
    for a in range(4):
        for b in range(a + 1, 4):
            r = oracle_pearson(m[:, a].tolist(), m[:, b].tolist())
            assert abs(r - (-1.0 / 14.0)) < 1e-12


# ------------------------------------------------------- subset sampling --

def test_subset_marginals_and_coverage():
    rng = np.random.default_rng(7)
    n = 30000
    counts = np.zeros(4)
    seen = set()
    for _ in range(n):
        s = ds.sample_jamming_subset(rng)
        seen.add(s)
        for name in s:
            counts[ds.JAM_BIT[name]] += 1
    marg = counts / n
    assert np.all(np.abs(marg - 8.0 / 15.0) < 0.02)
    assert len(seen) == 15


def test_sampled_cooccurrence_matches_enumeration():
    rng = np.random.default_rng(11)
    n = 200000
    idx = rng.integers(1, 16, size=n)
    labels = ((idx[:, None] >> np.arange(4)) & 1).astype(np.uint8)
    mat, flags = ds.cooccurrence_matrix(labels)
    assert flags == []
    assert np.all(np.diag(mat) == 1.0)
    off = mat[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off - (-1.0 / 14.0)) < 0.012)


def test_cooccurrence_against_oracle_small():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 2, size=(50, 4)).astype(np.uint8)
    # guard against a constant column in this draw
    labels[0] = [1, 0, 1, 0]
    labels[1] = [0, 1, 0, 1]
    mat, flags = ds.cooccurrence_matrix(labels)
    assert flags == []
    for a in range(4):
        for b in range(4):
            if a == b:
                assert mat[a, b] == 1.0
            else:
                r = oracle_pearson(labels[:, a].tolist(), labels[:, b].tolist())
                assert abs(mat[a, b] - r) < 1e-12


def test_cooccurrence_zero_variance_flagged():
    labels = np.array([[1, 0, 0, 1], [1, 1, 0, 0], [1, 0, 1, 0]], dtype=np.uint8)
    mat, flags = ds.cooccurrence_matrix(labels)
    assert flags == [0]
    assert mat[0, 1] == 0.0 and mat[1, 0] == 0.0
    assert mat[0, 0] == 1.0


def test_cooccurrence_rejects_single_sample():
    with pytest.raises(ValueError):
        ds.cooccurrence_matrix(np.array([[1, 0, 0, 0]], dtype=np.uint8))


def test_jam_histogram_hand_example():
    labels = np.array([[1, 0, 0, 0], [1, 1, 0, 0], [0, 0, 0, 1]], dtype=np.uint8)
    h = ds.jam_histogram(labels)
    assert h[1] == 1 and h[3] == 1 and h[8] == 1
    assert h.sum() == 3 and h[0] == 0


# ---------------------------------------------------------------- labels --

def test_label_roundtrip_bijection():
    c_tar = 5
    for class_id in range(c_tar):
        for mask in range(1, 16):
            jam_set = tuple(n for n in ds.JAM_ORDER if mask >> ds.JAM_BIT[n] & 1)
            lab = ds.make_label(class_id, jam_set, c_tar)
            got_c, got_j = ds.decode_label(lab)
            assert got_c == class_id and got_j == jam_set
            assert lab.vector.shape == (c_tar + 4,)


def test_label_validation():
    with pytest.raises(ValueError):
        ds.make_label(5, ("candi",), 5)
    with pytest.raises(ValueError):
        ds.make_label(-1, ("candi",), 5)
    with pytest.raises(ValueError):
        ds.make_label(0, (), 5)
    with pytest.raises(ValueError):
        ds.LabelVector(np.array([1, 1, 0]), np.array([1, 0, 0, 0]))


def test_scene_spec_counts():
    s = ds.SceneSpec.from_jam_set(("candi", "ncj"), 5.0, -3.0)
    assert s.num_sup == 1 and s.num_dec == 1
    s = ds.SceneSpec.from_jam_set(("candi", "isrj", "smsp"), 0.0, 0.0)
    assert s.num_sup == 0 and s.num_dec == 3
    with pytest.raises(ValueError):
        ds.SceneSpec(0, 0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ds.SceneSpec(2, 3, 0.0, 0.0)


# ----------------------------------------------------------- composition --

def _toy_profiles(rng):
    t = np.zeros(ds.WINDOW_LEN)
    t[300:320] = rng.uniform(0.5, 2.0, 20)
    j1 = np.zeros(ds.WINDOW_LEN)
    j1[250:700] = rng.uniform(0.0, 1.0, 450)
    j2 = np.zeros(ds.WINDOW_LEN)
    j2[400:500] = rng.uniform(0.0, 3.0, 100)
    return t, j1, j2


def test_compose_exact_energies_and_additivity():
    rng = np.random.default_rng(19)
    t, j1, j2 = _toy_profiles(rng)
    snr, sjr = 3.7, -4.2
    noise_rng = np.random.default_rng([99, 2])
    s = ds.compose_sample(t, [j1, j2], snr, sjr, noise_rng,
                          class_id=1, jam_set=("candi", "ncj"), seed=99, c_tar=3)
    meas_sjr = 10 * np.log10(sig.energy(s.t_clean) / sig.energy(s.i_clean))
    assert abs(meas_sjr - sjr) < 1e-6
    n = s.x_mix - s.t_clean - s.i_clean
    meas_snr = 10 * np.log10(sig.energy(s.t_clean) / sig.energy(n))
    assert abs(meas_snr - snr) < 1e-6
    assert abs(np.max(s.x_mix) - 1.0) < 1e-12
    assert np.all(s.x_mix >= 0)
    # replay: the noise vector is recoverable from (seed, t_clean, snr)
    replayed = ds.replay_noise(s)
    assert np.max(np.abs(n - replayed)) < 1e-9 * max(1.0, np.max(np.abs(n)))


def test_compose_jamming_scaled_relative_not_absolute():
    rng = np.random.default_rng(21)
    t, j1, j2 = _toy_profiles(rng)
    noise_rng = np.random.default_rng([5, 2])
    s = ds.compose_sample(t, [j1, 2.0 * j2], 10.0, -2.0, noise_rng, seed=5)
    # composite jamming is the plain sum rescaled as a whole
    raw = j1 + 2.0 * j2
    scaled = raw * np.sqrt(sig.energy(s.t_clean) * 10 ** 0.2 / (sig.energy(raw)))
    assert np.allclose(s.i_clean, scaled, rtol=1e-9, atol=0)


def test_compose_rejects_zero_energy():
    z = np.zeros(ds.WINDOW_LEN)
    t = np.zeros(ds.WINDOW_LEN)
    t[10] = 1.0
    rng = np.random.default_rng(1)
    with pytest.raises(ValueError):
        ds.compose_sample(z, [t], 0.0, 0.0, rng)
    with pytest.raises(ValueError):
        ds.compose_sample(t, [z], 0.0, 0.0, rng)


def test_composite_sample_validates_length_and_label():
    t = np.zeros(100)
    with pytest.raises(ValueError):
        ds.CompositeSample(t, t, t, ds.make_label(0, ("candi",), 3),
                           0.0, 0.0, 0, ("candi",), 0)


# ------------------------------------------------------------- templates --

def test_template_bank_deterministic_and_in_range():
    a = ds.make_template_bank(6, seed=42)
    b = ds.make_template_bank(6, seed=42)
    assert len(a) == 6
    for ta, tb in zip(a, b):
        assert ta.scatterer_positions == tb.scatterer_positions
        assert ta.scatterer_amplitudes == tb.scatterer_amplitudes
    for k, t in enumerate(a):
        assert t.class_id == k
        assert 4 <= len(t.scatterer_positions) <= 8
        for p in t.scatterer_positions:
            assert abs(p - ds.TARGET_CENTER_M) <= ds.TARGET_SPAN_M
        for amp in t.scatterer_amplitudes:
            assert 0.5 <= amp <= 1.0
    c = ds.make_template_bank(6, seed=43)
    assert any(x.scatterer_positions != y.scatterer_positions for x, y in zip(a, c))


def test_template_bank_bounds():
    with pytest.raises(ValueError):
        ds.make_template_bank(1, seed=0)
    with pytest.raises(ValueError):
        ds.make_template_bank(13, seed=0)


def test_prototypes_cover_all_classes():
    protos = ds.make_prototypes(4, 10, seed=3)
    assert len(protos) == 40
    assert sorted({c for c, _ in protos}) == [0, 1, 2, 3]
    for _, a in protos:
        assert -np.pi / 6 <= a <= np.pi / 6


def test_split_counts_disjoint_deterministic():
    items = list(range(100))
    tr, va, te = ds.split_templates(items, (0.75, 0.15, 0.10), seed=5)
    assert (len(tr), len(va), len(te)) == (75, 15, 10)
    assert sorted(tr + va + te) == items
    tr2, va2, te2 = ds.split_templates(items, (0.75, 0.15, 0.10), seed=5)
    assert tr == tr2 and va == va2 and te == te2
    tr3, _, _ = ds.split_templates(items, (0.75, 0.15, 0.10), seed=6)
    assert tr3 != tr


def test_split_validation():
    with pytest.raises(ValueError):
        ds.split_templates(list(range(10)), (0.5, 0.3, 0.3), seed=0)
    with pytest.raises(ValueError):
        ds.split_templates([1, 2], (0.75, 0.15, 0.10), seed=0)


# ------------------------------------------------------- parameter draws --

def test_jamming_parameter_ranges():
    cfg = ds.SynthConfig().validate()
    rng = np.random.default_rng(13)
    wf = cfg.wf
    d_lo = 2 * cfg.jam_range_m[0] / sig.C_LIGHT
    d_hi = 2 * cfg.jam_range_m[1] / sig.C_LIGHT
    for _ in range(300):
        for kind in ds.JAM_ORDER:
            spec = ds.draw_jamming_spec(kind, rng, cfg)
            assert 0.8 <= spec.amplitude <= 1.2
            assert d_lo <= spec.delay <= d_hi
            f_lo = sig.velocity_to_doppler(cfg.jam_velocity_mps[0])
            f_hi = sig.velocity_to_doppler(cfg.jam_velocity_mps[1])
            assert f_lo <= spec.doppler <= f_hi
            if kind == "candi":
                assert 7 <= spec.n_c <= 20
                assert 2 <= spec.n_r <= 5
            elif kind == "isrj":
                assert 2 <= spec.p <= 5 and 1 <= spec.q <= 2
                assert spec.duty in (0.5, 1.0 / 3.0)
                assert abs(spec.t_i - wf.pulse_width / (spec.p * (spec.q + 1))) < 1e-15
            elif kind == "smsp":
                assert spec.m_s in (2, 3, 4)
                assert all(s == spec.m_s * wf.bandwidth / wf.pulse_width
                           for s in spec.slopes)
                steps = np.diff(spec.freqs)
                assert np.all(steps >= 1e6 - 1e-6) and np.all(steps <= 3e6 + 1e-6)
                assert abs(np.mean(spec.freqs)) < 1e-6
            else:
                assert 8 <= spec.kernel_len <= 64


def test_synth_config_validation():
    with pytest.raises(ValueError):
        ds.SynthConfig(snr_db=(5.0, -5.0)).validate()


# --------------------------------------------------------- set synthesis --

def _small_set(master_seed=7, count=12, c_tar=3):
    bank = ds.make_template_bank(c_tar, seed=1)
    protos = ds.make_prototypes(c_tar, 4, seed=2)
    cfg = ds.SynthConfig(snr_db=(0.0, 10.0), sjr_db=(-5.0, 0.0))
    return ds.synthesize_set(bank, protos, cfg, count, master_seed, c_tar)


def test_synthesize_sample_consistency():
    bank = ds.make_template_bank(3, seed=1)
    cfg = ds.SynthConfig(snr_db=(0.0, 10.0), sjr_db=(-5.0, 0.0))
    s = ds.synthesize_sample(bank, (2, 0.1), cfg, seed=123, c_tar=3)
    assert s.class_id == 2
    assert s.seed == 123
    got_c, got_j = ds.decode_label(s.label)
    assert got_c == 2 and got_j == s.jam_set
    assert 0.0 <= s.snr_db <= 10.0 and -5.0 <= s.sjr_db <= 0.0
    meas = 10 * np.log10(sig.energy(s.t_clean) / sig.energy(s.i_clean))
    assert abs(meas - s.sjr_db) < 1e-6
    n = s.x_mix - s.t_clean - s.i_clean
    rep = ds.replay_noise(s)
    assert np.max(np.abs(n - rep)) < 1e-9


def test_synthesize_set_deterministic():
    a = _small_set()
    b = _small_set()
    for f in ("x", "t", "i", "labels", "class_id", "jam_mask", "snr", "sjr", "seed"):
        assert np.array_equal(getattr(a, f), getattr(b, f)), f


def test_synthesize_set_thread_invariant(monkeypatch):
    a = _small_set()
    monkeypatch.setenv("JHN_THREADS", "3")
    b = _small_set()
    for f in ("x", "t", "i", "labels", "seed"):
        assert np.array_equal(getattr(a, f), getattr(b, f)), f


def test_synthesize_set_shapes_and_types():
    s = _small_set(count=10, c_tar=4)
    assert s.x.shape == (10, 1024) and s.x.dtype == np.float32
    assert s.labels.shape == (10, 8) and s.labels.dtype == np.uint8
    assert s.seed.dtype == np.uint64
    assert s.count == 10
    assert s.jam_labels.shape == (10, 4)
    assert np.all(s.jam_labels.sum(axis=1) >= 1)
    # mask agrees with label columns
    for r in range(10):
        mask = int(sum(int(s.jam_labels[r, b]) << b for b in range(4)))
        assert mask == s.jam_mask[r]


def test_sample_seed_stable():
    assert ds.sample_seed(42, 0) == ds.sample_seed(42, 0)
    assert ds.sample_seed(42, 0) != ds.sample_seed(42, 1)
    assert 0 <= ds.sample_seed(42, 5) < 2 ** 64


# ------------------------------------------------------------ file format --

def test_export_import_roundtrip(tmp_path):
    s = _small_set(count=9)
    p = str(tmp_path / "set")
    ds.export_dataset(s, p)
    r = ds.import_dataset(p)
    for f in ("x", "t", "i", "labels", "class_id", "jam_mask", "snr", "sjr", "seed"):
        assert np.array_equal(getattr(s, f), getattr(r, f)), f
    assert r.c_tar == s.c_tar
    # re-export of the imported set is byte-identical
    p2 = str(tmp_path / "set2")
    ds.export_dataset(r, p2)
    b1 = open(os.path.join(p, "data.bin"), "rb").read()
    b2 = open(os.path.join(p2, "data.bin"), "rb").read()
    assert b1 == b2


def test_export_list_of_samples(tmp_path):
    bank = ds.make_template_bank(3, seed=1)
    cfg = ds.SynthConfig()
    samples = [ds.synthesize_sample(bank, (k % 3, 0.0), cfg, seed=100 + k, c_tar=3)
               for k in range(4)]
    p = str(tmp_path / "lst")
    ds.export_dataset(samples, p)
    r = ds.import_dataset(p)
    assert r.count == 4
    assert np.array_equal(r.x[2], samples[2].x_mix.astype(np.float32))
    assert r.class_id[1] == samples[1].class_id


def test_import_detects_corruption(tmp_path):
    s = _small_set(count=5)
    p = str(tmp_path / "c")
    ds.export_dataset(s, p)
    raw = bytearray(open(os.path.join(p, "data.bin"), "rb").read())
    raw[100] ^= 0xFF
    open(os.path.join(p, "data.bin"), "wb").write(bytes(raw))
    with pytest.raises(ValueError, match="checksum"):
        ds.import_dataset(p)


def test_import_detects_bad_version(tmp_path):
    s = _small_set(count=3)
    p = str(tmp_path / "v")
    ds.export_dataset(s, p)
    mpath = os.path.join(p, "manifest.json")
    m = json.load(open(mpath))
    m["format_version"] = 99
    json.dump(m, open(mpath, "w"))
    with pytest.raises(ValueError, match="format_version"):
        ds.import_dataset(p)


def test_import_detects_truncation(tmp_path):
    import hashlib
    s = _small_set(count=4)
    p = str(tmp_path / "t")
    ds.export_dataset(s, p)
    dpath = os.path.join(p, "data.bin")
    raw = open(dpath, "rb").read()[:-8]
    open(dpath, "wb").write(raw)
    mpath = os.path.join(p, "manifest.json")
    m = json.load(open(mpath))
    m["checksum"] = hashlib.sha256(raw).hexdigest()
    json.dump(m, open(mpath, "w"))
    with pytest.raises(ValueError, match="truncated"):
        ds.import_dataset(p)


def test_record_layout_is_packed_little_endian():
    dt = ds._record_dtype(3)
    expect = 3 * 1024 * 4 + (3 + 4) + 4 + 4 + 2 + 1 + 8
    assert dt.itemsize == expect
