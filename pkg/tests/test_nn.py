"""Layer and module mechanics: registration, state dicts, freezing, and the
residual SE block construction check (identity-configured block doubles a
positive input)."""

import numpy as np
import pytest

import jointhrrp.nn as nn
import jointhrrp.tensor as T
from jointhrrp.tensor import Tensor


def rng():
    return np.random.default_rng(0)


def test_parameter_registration_and_names():
    m = nn.ConvBNReLU(2, 3, 3, rng())
    names = dict(m.named_parameters())
    assert set(names) == {"conv.w", "conv.b", "bn.gamma", "bn.beta"}
    bufs = dict(m.named_buffers())
    assert set(bufs) == {"bn.running_mean", "bn.running_var"}
    assert len(list(m.parameters())) == 4


def test_state_dict_roundtrip():
    a = nn.ResSEBlock(3, 5, 3, rng())
    b = nn.ResSEBlock(3, 5, 3, np.random.default_rng(1))
    sd = a.state_dict()
    b.load_state_dict(sd)
    for (na, pa), (nb, pb) in zip(sorted(a.named_parameters()),
                                  sorted(b.named_parameters())):
        assert na == nb
        assert np.array_equal(pa.data, pb.data)
    for (na, ba), (nb, bb) in zip(sorted(a.named_buffers()),
                                  sorted(b.named_buffers())):
        assert np.array_equal(ba, bb)


def test_load_state_dict_shape_mismatch():
    a = nn.Linear(4, 3, rng())
    b = nn.Linear(4, 2, rng())
    with pytest.raises(ValueError):
        a.load_state_dict(b.state_dict())


def test_load_state_dict_missing_key():
    a = nn.Linear(4, 3, rng())
    sd = a.state_dict()
    del sd["w"]
    with pytest.raises(KeyError):
        a.load_state_dict(sd)


def test_train_eval_propagates():
    m = nn.ResSEBlock(2, 2, 3, rng())
    assert all(sub.training for sub in m.modules())
    m.eval()
    assert all(not sub.training for sub in m.modules())
    m.train()
    assert all(sub.training for sub in m.modules())


def test_set_requires_grad_freezes_graph():
    m = nn.Conv1d(2, 2, 3, rng())
    x = Tensor(np.random.default_rng(2).uniform(-1, 1, (1, 2, 8)), requires_grad=False)
    m.set_requires_grad(False)
    out = m.forward(x)
    assert out._bwd is None and not out.requires_grad
    m.set_requires_grad(True)
    out = m.forward(x)
    assert out._bwd is not None


def test_zero_grad_clears():
    m = nn.Linear(3, 2, rng())
    x = Tensor(np.ones((2, 3), dtype=np.float32))
    T.tsum(m.forward(x)).backward()
    assert m.w.grad is not None
    m.zero_grad()
    assert m.w.grad is None and (m.b is None or m.b.grad is None)


def test_kaiming_bound():
    w = nn._kaiming_uniform(rng(), (64, 3, 5), fan_in=15)
    bound = 1.0 / np.sqrt(15)
    assert np.all(np.abs(w) <= bound)
    assert np.max(np.abs(w)) > 0.8 * bound


def test_conv_layer_matches_op():
    g = rng()
    m = nn.Conv1d(2, 4, 5, g, stride=2, padding="same")
    x = Tensor(np.random.default_rng(3).uniform(-1, 1, (2, 2, 16)).astype(np.float32))
    got = m.forward(x).data
    want = T.conv1d(x, m.w, m.b, 2, "same").data
    assert np.array_equal(got, want)


def test_conv_transpose_layer_validates_geometry():
    with pytest.raises(ValueError):
        nn.ConvTranspose1d(2, 2, 5, rng(), stride=2, padding=1)


def test_linear_no_bias():
    m = nn.Linear(3, 2, rng(), bias=False)
    assert m.b is None
    assert dict(m.named_parameters()).keys() == {"w"}


def test_segate_formula():
    g = rng()
    m = nn.SEGate(4, g)
    x = np.random.default_rng(4).uniform(-1, 1, (2, 4, 6)).astype(np.float32)
    got = m.forward(Tensor(x)).data
    s = x.mean(axis=2)
    h = np.maximum(s @ m.fc1.w.data.T + m.fc1.b.data, 0)
    gate = 1.0 / (1.0 + np.exp(-(h @ m.fc2.w.data.T + m.fc2.b.data)))
    want = x * gate[:, :, None]
    assert np.allclose(got, want, atol=1e-6)


def _identity_convbnrelu(blk, ch, k):
    w = np.zeros((ch, ch, k), dtype=np.float32)
    for c in range(ch):
        w[c, c, k // 2] = 1.0
    blk.conv.w.data[...] = w
    blk.conv.b.data[...] = 0.0
    blk.bn.gamma.data[...] = 1.0
    blk.bn.beta.data[...] = 0.0
    blk.bn.running_mean[...] = 0.0
    blk.bn.running_var[...] = 1.0 - blk.bn.eps


def test_resse_identity_configuration_doubles_input():
    """With convs set to delta kernels, BN in eval mode normalizing to the
    identity, and the SE gate saturated at 1, the block returns 2x a
    positive input; this pins the residual wiring and missing post-add
    activation."""
    ch, k = 3, 3
    m = nn.ResSEBlock(ch, ch, k, rng())
    assert m.proj is None
    _identity_convbnrelu(m.c1, ch, k)
    _identity_convbnrelu(m.c2, ch, k)
    w3 = np.zeros((ch, ch, k), dtype=np.float32)
    for c in range(ch):
        w3[c, c, k // 2] = 1.0
    m.c3.w.data[...] = w3
    m.c3.b.data[...] = 0.0
    m.bn3.gamma.data[...] = 1.0
    m.bn3.beta.data[...] = 0.0
    m.bn3.running_mean[...] = 0.0
    m.bn3.running_var[...] = 1.0 - m.bn3.eps
    m.se.fc1.w.data[...] = 0.0
    m.se.fc1.b.data[...] = 0.0
    m.se.fc2.w.data[...] = 0.0
    m.se.fc2.b.data[...] = 30.0  # sigmoid(30) == 1 to float precision
    m.eval()
    x = np.random.default_rng(5).uniform(0.5, 1.5, (2, ch, 10)).astype(np.float32)
    out = m.forward(Tensor(x)).data
    assert np.max(np.abs(out - 2.0 * x)) < 1e-5


def test_resse_projection_shortcut_when_channels_differ():
    m = nn.ResSEBlock(2, 5, 3, rng())
    assert m.proj is not None
    x = Tensor(np.random.default_rng(6).uniform(-1, 1, (1, 2, 8)).astype(np.float32))
    out = m.forward(x)
    assert out.shape == (1, 5, 8)


def test_batchnorm_buffers_update_only_in_train():
    m = nn.BatchNorm1d(2)
    x = Tensor(np.random.default_rng(7).uniform(1.0, 2.0, (4, 2, 6)).astype(np.float32))
    rm0 = m.running_mean.copy()
    m.eval()
    m.forward(x)
    assert np.array_equal(m.running_mean, rm0)
    m.train()
    m.forward(x)
    assert not np.array_equal(m.running_mean, rm0)


def test_to_dtype_roundtrip():
    m = nn.Linear(3, 2, rng())
    m.to_dtype(np.float64)
    assert m.w.data.dtype == np.float64
    x = Tensor(np.ones((1, 3), dtype=np.float64))
    assert m.forward(x).data.dtype == np.float64
