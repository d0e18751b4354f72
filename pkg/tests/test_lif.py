import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spikegraph.errors import ConfigError, DimensionError, NumericalError
from spikegraph.lif import LIF, LifParams, lif_sequence, lif_sequence_backward, lif_step, surrogate_grad

P = LifParams(tau=2.0, v_rest=0.0, r=1.0, v_th=1.0)


def one(x):
    return np.full((1, 1), x, dtype=np.float64)


def test_quiescent_step():
    v, s, _ = lif_step(one(0.0), one(0.0), P)
    assert v.item() == 0.0 and s.item() == 0.0


def test_single_step_spike_and_reset():
    v, s, charged = lif_step(one(0.0), one(3.0), P)
    assert charged.item() == 1.5
    assert s.item() == 1.0 and v.item() == 0.0


def test_subthreshold_trace():
    v = one(0.0)
    trace = []
    for _ in range(3):
        v, s, _ = lif_step(v, one(0.6), P)
        assert s.item() == 0.0
        trace.append(v.item())
    np.testing.assert_allclose(trace, [0.3, 0.45, 0.525], rtol=0, atol=1e-15)
    for _ in range(60):
        v, s, _ = lif_step(v, one(0.6), P)
        assert s.item() == 0.0
    assert abs(v.item() - 0.6) < 1e-12


def test_dyadic_trace_is_bit_exact():
    # I = 5/8 keeps every intermediate value a short binary fraction
    v = one(0.0)
    trace = []
    for _ in range(3):
        v, s, _ = lif_step(v, one(0.625), P)
        trace.append(v.item())
    assert trace == [0.3125, 0.46875, 0.546875]


def test_sequence_examples():
    assert not lif_sequence(np.zeros((5, 2, 3)), P).any()
    assert lif_sequence(np.full((6, 2, 3), 3.0), P).all()
    g = np.random.default_rng(0).normal(size=(1, 2, 3))
    v, s, _ = lif_step(np.zeros((2, 3)), g[0], P)
    assert np.array_equal(lif_sequence(g, P)[0], s)


def test_step_errors():
    with pytest.raises(DimensionError):
        lif_step(np.zeros((2, 2)), np.zeros((2, 3)), P)
    with pytest.raises(NumericalError):
        lif_step(one(0.0), one(np.nan), P)
    with pytest.raises(ConfigError):
        LifParams(tau=0.0)
    with pytest.raises(ConfigError):
        LifParams(v_th=0.0, v_rest=0.0)


def test_surrogate_examples():
    assert surrogate_grad(0.0, 1.0) == 1.0
    assert surrogate_grad(5.0, 1.0) == 0.0
    assert surrogate_grad(0.2, 0.5) == 2.0
    with pytest.raises(ConfigError):
        surrogate_grad(0.0, 0.0)


@given(arrays(np.float64, (4, 2, 3), elements=st.floats(-5, 5)))
def test_sequence_binary_and_reset(g):
    spikes, charged = lif_sequence(g, P, return_trace=True)
    assert set(np.unique(spikes)) <= {0.0, 1.0}
    assert 0.0 <= spikes.mean() <= 1.0
    v = np.zeros((2, 3))
    for t in range(4):
        v, s, _ = lif_step(v, g[t], P)
        assert np.all(v[s > 0] == P.v_rest)


@given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3)),
       arrays(np.float64, (2, 3), elements=st.floats(-3, 3)),
       arrays(np.float64, (2, 3), elements=st.floats(0, 3)))
def test_monotone_in_input(v0, i0, extra):
    _, s_lo, _ = lif_step(v0, i0, P)
    _, s_hi, _ = lif_step(v0, i0 + extra, P)
    assert np.all(s_hi >= s_lo)


def test_backward_matches_hand_unrolled_two_steps():
    params = LifParams(tau=2.0, v_rest=0.0, r=1.0, v_th=1.0, surrogate_width=1.0)
    g = np.array([0.75, 1.25]).reshape(2, 1, 1)
    spikes, charged = lif_sequence(g, params, return_trace=True)
    # u0 = 0.375 -> no spike; u1 = 0.375 + (-0.375 + 1.25) / 2 = 0.8125 -> no spike
    assert charged.ravel().tolist() == [0.375, 0.8125]
    assert not spikes.any()
    up = np.array([0.25, -0.5]).reshape(2, 1, 1)
    got = lif_sequence_backward(up, spikes, charged, params).ravel()
    h0 = 0.0  # |0.375 - 1| > 1/2
    h1 = 1.0  # |0.8125 - 1| <= 1/2
    # du/dg = r/tau = 1/2; du1/du0 = (1 - 1/tau)(1 - s0) = 1/2
    dg1 = -0.5 * h1 * 0.5
    dg0 = (0.25 * h0 + (-0.5) * h1 * 0.5) * 0.5
    assert got.tolist() == [dg0, dg1]


def test_backward_detaches_reset():
    g = np.array([3.0, 1.4]).reshape(2, 1, 1)
    spikes, charged = lif_sequence(g, P, return_trace=True)
    assert spikes.ravel().tolist() == [1.0, 0.0]
    up = np.array([0.0, 1.0]).reshape(2, 1, 1)
    got = lif_sequence_backward(up, spikes, charged, P).ravel()
    # step 0 spiked, so the carry into step 1 is cut
    assert got[0] == 0.0


def test_module_records_rate():
    sn = LIF(P)
    out = sn.forward(np.full((4, 2, 5), 3.0))
    assert sn.last_rate == 1.0 and out.shape == (4, 2, 5)
