import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikegraph.errors import ConfigError, ContractError, DimensionError
from spikegraph.graph import selection_matrix
from spikegraph.mwtf import (Classifier, WaveletBranch, fuse_level, pad_temporal, pad_temporal_backward,
                             padded_length, resolve_levels, tatf_aggregate, topo_neighbors)
from spikegraph.numerics import Parameter, finite_diff_check, linear_upsample


def frames(t):
    return np.arange(float(t)).reshape(t, 1, 1)


def test_pad_examples():
    assert np.array_equal(pad_temporal(frames(16)), frames(16))
    assert pad_temporal(frames(12)).ravel().tolist() == list(range(12)) + [0, 1, 2, 3]
    assert pad_temporal(frames(1)).shape[0] == 1


@given(st.integers(1, 70))
def test_padded_length_is_power_of_two(t):
    n = padded_length(t)
    assert n >= t and n & (n - 1) == 0 and n < 2 * t + 1
    g = np.random.default_rng(t).normal(size=(n, 1, 2))
    x = np.random.default_rng(t + 1).normal(size=(t, 1, 2))
    # adjoint identity <pad(x), g> == <x, pad^T(g)>
    assert abs(np.sum(pad_temporal(x) * g) - np.sum(x * pad_temporal_backward(g, t))) < 1e-9


def test_tatf_examples():
    s = np.array([2.0, 4.0, 6.0]).reshape(1, 1, 3)
    topology = np.array([[0.0, 0.0, 0.0], [0.9, 0.0, 0.0], [0.1, 0.0, 0.0]])
    assert topo_neighbors(topology, 2)[0].tolist() == [0, 1]
    assert tatf_aggregate(s, topology, 2)[0, 0, 0] == 3.0
    uniform = np.ones((3, 3))
    assert np.allclose(tatf_aggregate(s, uniform, 3), 4.0)
    const = np.full((2, 2, 3), 5.0)
    assert np.array_equal(tatf_aggregate(const, np.random.default_rng(0).uniform(size=(3, 3)), 2), const)
    with pytest.raises(ContractError):
        tatf_aggregate(s, uniform, 4)


@settings(max_examples=40)
@given(st.integers(1, 7), st.integers(0, 2 ** 16))
def test_tatf_bookkeeping_identity(v, seed):
    rng = np.random.default_rng(seed)
    k = 1 + seed % v
    topology = rng.uniform(size=(v, v))
    s = rng.normal(size=(3, 2, v))
    agg = tatf_aggregate(s, topology, k)
    counts = selection_matrix(topo_neighbors(topology, k), v).sum(axis=1)
    np.testing.assert_allclose(agg.sum(axis=-1) * k, (s * counts).sum(axis=-1), atol=1e-9)


def test_fuse_examples():
    one, three = np.ones((1, 1, 1)), np.full((1, 1, 1), 3.0)
    assert np.array_equal(fuse_level(one, three, 0.0), one)
    assert abs(fuse_level(one, three, 0.1).item() - 1.3) < 1e-15
    assert not fuse_level(np.zeros(2), np.zeros(2), 0.1).any()
    with pytest.raises(DimensionError):
        fuse_level(np.zeros(2), np.zeros(3), 0.1)


def test_resolve_levels():
    assert resolve_levels("auto", 16) == 4
    assert resolve_levels(3, 12) == 3
    with pytest.raises(ConfigError):
        resolve_levels(5, 16)


def make_branch(c=16, m=4, levels=3, seed=0, dtype=np.float64):
    return WaveletBranch(c, c_mid=8, groups=4, m=m, levels=levels, k_topo=3,
                         rng=np.random.default_rng(seed), dtype=dtype)


def test_downsample_shapes_and_zero():
    branch = make_branch(dtype=np.float32)
    x = np.random.default_rng(1).integers(0, 2, size=(2, 8, 16, 5)).astype(np.float32)
    assert branch.downsample(x).shape == (2, 8, 4, 5)
    assert not branch.forward(np.zeros((2, 8, 16, 5), np.float32), Parameter(np.eye(5)[None])).any()
    default = WaveletBranch(256)
    assert (default.down_group.weight.shape[0], default.down_conv.weight.shape[0]) == (64, 8)


def test_single_level_is_upsampled_scaling():
    branch = make_branch(levels=1)
    x = np.random.default_rng(2).normal(size=(1, 6, 4, 5))
    topology = np.random.default_rng(3).uniform(size=(5, 5))
    out = branch.fuse(x, topology)
    padded = pad_temporal(x)
    s1 = np.einsum("rc,...tcv->...trv", branch.bank.lam0, padded[..., 0::2, :, :]) \
        + np.einsum("rc,...tcv->...trv", branch.bank.lam1, padded[..., 1::2, :, :])
    np.testing.assert_allclose(out, linear_upsample(s1, 6), atol=1e-12)


def test_linear_chain_gradient():
    branch = make_branch()
    topology = np.random.default_rng(4).uniform(size=(5, 5))
    x = np.random.default_rng(5).normal(size=(2, 12, 4, 5))
    branch.lam.value = np.array(0.3)
    err = finite_diff_check(lambda a: branch.fuse(a, topology), branch.fuse_backward, [x], params=[branch.lam])
    assert err < 1e-6


def test_x_hat_invariant_under_joint_relabeling():
    branch = make_branch(seed=6)
    branch.eval()
    rng = np.random.default_rng(7)
    spikes = rng.integers(0, 2, size=(2, 8, 16, 5)).astype(float)
    pa = Parameter(rng.normal(size=(3, 5, 5)))
    perm = [3, 1, 4, 0, 2]
    x_hat = branch.forward(spikes, pa)
    x_hat_p = branch.forward(spikes[..., perm], Parameter(pa.value[:, perm][:, :, perm]))
    np.testing.assert_allclose(x_hat_p, x_hat, atol=1e-12)
    assert x_hat.shape == (2, 16)


def test_topology_changes_only_low_frequency_path():
    branch = make_branch(levels=2)
    x = np.random.default_rng(8).normal(size=(1, 8, 4, 5))
    a = branch.fuse(x, np.eye(5))
    branch.lam.value = np.array(0.0)
    b = branch.fuse(x, np.eye(5))
    c = branch.fuse(x, np.random.default_rng(9).uniform(size=(5, 5)))
    assert not np.allclose(a, b)
    np.testing.assert_allclose(b, c, atol=1e-12)


def test_classifier_examples():
    clf = Classifier(2, 2)
    clf.fc_weight.value = np.eye(2, dtype=np.float32)
    clf.fc_bias.value = np.zeros(2, np.float32)
    spikes = np.zeros((1, 1, 2, 1), np.float32)
    spikes[0, 0, 0, 0] = 1.0
    x_hat = np.array([[0.0, 1.0]], np.float32)
    assert clf.forward(spikes, x_hat).ravel().tolist() == [1.0, 1.0]
    clf.beta.value = np.array(0.0, np.float32)
    assert clf.forward(spikes, x_hat).ravel().tolist() == [1.0, 0.0]
    assert not clf.forward(np.zeros_like(spikes), np.zeros_like(x_hat)).any()
    with pytest.raises(ConfigError):
        Classifier(2, 0)


def test_classifier_gradient():
    rng = np.random.default_rng(10)
    clf = Classifier(4, 3, rng=rng, dtype=np.float64)
    clf.eval()
    spikes = rng.normal(size=(2, 3, 4, 5))
    x_hat = rng.normal(size=(2, 4))
    params = [clf.fc_weight, clf.fc_bias, clf.beta]
    assert finite_diff_check(clf.forward, clf.backward, [spikes, x_hat], params=params) < 1e-6

