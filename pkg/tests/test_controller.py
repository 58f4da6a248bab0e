import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ami import controller as ctl
from ami import tensor as tt
from ami.tensor import Tensor

# Measured open rate of a Gumbel-perturbed gate at logit 0, tau 1. A single
# Gumbel draw is not symmetric: P(g > 0) = 1 - exp(-1).
GUMBEL_OPEN_RATE = 1.0 - math.exp(-1.0)


def test_aggregate_examples():
    v = np.arange(4.0)
    R = Tensor(np.tile(v, (1, 6, 1)))  # M=3, L=2, every token equals v
    np.testing.assert_array_equal(ctl.aggregate_features(R, 3).data[0], np.tile(v, (3, 1)))
    u, w = np.array([1.0, 3.0]), np.array([5.0, -1.0])
    np.testing.assert_array_equal(ctl.aggregate_features(Tensor(np.stack([u, w])[None]), 1).data[0, 0],
                                  (u + w) / 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(1, 5))
def test_aggregate_matches_block_means(seed, M, L):
    R = np.random.default_rng(seed).normal(size=(2, M * L, 3))
    out = ctl.aggregate_features(Tensor(R), M).data
    for m in range(M):
        np.testing.assert_allclose(out[:, m], R[:, m * L:(m + 1) * L].mean(axis=1), rtol=1e-12, atol=1e-15)


def test_aggregate_rejects_ragged_blocks():
    with pytest.raises(ValueError, match="divisible"):
        ctl.aggregate_features(Tensor(np.zeros((1, 7, 2))), 3)


def test_open_rate_at_zero_logit_is_measured():
    rng = np.random.default_rng(0)
    d = ctl.gumbel_sigmoid_sample(Tensor(np.zeros((1000, 100))), 1.0, rng)
    rate = d.p_hard.mean()
    assert abs(rate - GUMBEL_OPEN_RATE) < 0.01
    assert abs(rate - 0.5) > 0.1  # the logistic-difference construction would give 0.5


def test_large_logits_saturate():
    rng = np.random.default_rng(1)
    d = ctl.gumbel_sigmoid_sample(Tensor(np.full((50, 3), 1e3)), 0.7, rng)
    assert d.p_hard.all()
    assert np.all(d.p_soft.data == 1.0)


def test_low_temperature_concentrates():
    z = Tensor(np.array([[0.5]]))
    d = ctl.gumbel_sigmoid_sample(z, 0.01, None, noise=np.zeros((1, 1)))
    assert 1.0 - d.p_soft.data[0, 0] == pytest.approx(math.exp(-50), rel=1e-6)


def test_temperature_must_be_positive():
    with pytest.raises(ValueError, match="temperature"):
        ctl.gumbel_sigmoid_sample(Tensor(np.zeros((1, 1))), 0.0, np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 3.0), st.booleans())
def test_hard_gate_is_thresholded_soft_gate(seed, tau, training):
    rng = np.random.default_rng(seed)
    d = ctl.gumbel_sigmoid_sample(Tensor(rng.normal(0, 3, (4, 5))), tau, rng, training=training)
    np.testing.assert_array_equal(d.p_hard, (d.p_soft.data > 0.5).astype(float))
    np.testing.assert_array_equal(d.gate.data, d.p_hard)
    assert set(np.unique(d.gate.data)) <= {0.0, 1.0}


def test_inference_is_noise_free_and_deterministic():
    z = np.random.default_rng(2).normal(size=(3, 4))
    a = ctl.gumbel_sigmoid_sample(Tensor(z), 0.5, np.random.default_rng(0), training=False)
    b = ctl.gumbel_sigmoid_sample(Tensor(z), 0.5, np.random.default_rng(99), training=False)
    np.testing.assert_allclose(a.p_soft.data, 1 / (1 + np.exp(-z)), rtol=1e-14)
    np.testing.assert_array_equal(a.p_soft.data, b.p_soft.data)
    np.testing.assert_array_equal(a.p_hard, b.p_hard)


def test_exact_half_closes_the_gate():
    d = ctl.gumbel_sigmoid_sample(Tensor(np.zeros((1, 1))), 1.0, None, training=False)
    assert d.p_soft.data[0, 0] == 0.5 and d.p_hard[0, 0] == 0.0


def test_noise_formula():
    u = np.random.default_rng(3).random((5,))
    g = ctl.gumbel_noise((5,), np.random.default_rng(3))
    np.testing.assert_array_equal(g, -np.log(-np.log(u + 1e-10) + 1e-10))


@pytest.mark.parametrize("seed", range(5))
def test_straight_through_gradient_equals_soft_gradient(seed):
    rng = np.random.default_rng(seed)
    z0 = rng.normal(size=(4, 3))
    noise = ctl.gumbel_noise((4, 3), rng)
    w = rng.normal(size=(4, 3))

    # linear downstream: the ST gradient is exactly the soft one
    z = Tensor(z0.copy(), requires_grad=True)
    d = ctl.gumbel_sigmoid_sample(z, 0.7, None, noise=noise)
    tt.backward(tt.tsum(d.gate * w))
    z2 = Tensor(z0.copy(), requires_grad=True)
    d2 = ctl.gumbel_sigmoid_sample(z2, 0.7, None, noise=noise)
    tt.backward(tt.tsum(d2.p_soft * w))
    assert z.grad.tobytes() == z2.grad.tobytes()
    s = d2.p_soft.data
    np.testing.assert_allclose(z.grad, w * s * (1 - s) / 0.7, rtol=1e-12)


def test_straight_through_matches_finite_differences_of_soft_path():
    rng = np.random.default_rng(6)
    noise = ctl.gumbel_noise((2, 3), rng)
    z = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    w = rng.normal(size=(2, 3))
    tt.backward(tt.tsum(ctl.gumbel_sigmoid_sample(z, 0.5, None, noise=noise).gate * w))
    st_grad = z.grad.copy()
    z.grad = None
    err = tt.finite_diff_check(lambda: tt.tsum(ctl.gumbel_sigmoid_sample(z, 0.5, None, noise=noise).p_soft * w), z)
    assert err <= 1e-6
    tt.backward(tt.tsum(ctl.gumbel_sigmoid_sample(z, 0.5, None, noise=noise).p_soft * w))
    np.testing.assert_array_equal(st_grad, z.grad)


def test_fixed_and_open_gates():
    o = ctl.open_gates(2, 3)
    assert o.p_hard.tolist() == [[1, 1, 1]] * 2
    f = ctl.fixed_gates(np.array([[True, False]]))
    assert f.p_hard.tolist() == [[1.0, 0.0]]


def test_gate_net_outputs_one_logit_per_modality():
    rng = np.random.default_rng(7)
    net = ctl.GateNet(8, 16, 3, rng, init_bias=2.0)
    out = net(Tensor(rng.normal(size=(5, 3 * 4, 8))))
    assert out.shape == (5, 3)
    assert np.all(net.modality_bias.data == 2.0)


def test_gate_net_modalities_have_separate_readouts():
    rng = np.random.default_rng(8)
    net = ctl.GateNet(4, 6, 2, rng)
    R = Tensor(np.ones((1, 4, 4)))  # both modalities see identical features
    net.readout.data[1] = 0.0
    out = net(R).data[0]
    assert out[1] == net.modality_bias.data[1]
    assert out[0] != out[1]


def test_temperature_schedule():
    assert ctl.temperature_at(0, 101, 1.0, 0.5) == 1.0
    assert ctl.temperature_at(100, 101, 1.0, 0.5) == 0.5
    assert ctl.temperature_at(50, 101, 1.0, 0.5) == pytest.approx(0.75)
    assert ctl.temperature_at(500, 101, 1.0, 0.5) == 0.5
