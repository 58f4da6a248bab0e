import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ami import tensor as tt
from ami.tensor import ShapeError, Tensor, backward, finite_diff_check


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def positive_leaf(rng, *shape):
    return Tensor(rng.uniform(0.5, 2.0, shape), requires_grad=True)


# one entry per registered backward rule: (builder of inputs, scalar loss)
def _weights(rng, shape):
    return rng.normal(size=shape)


UNARY = {
    "neg": lambda a: -a,
    "exp": tt.exp,
    "tanh": tt.tanh,
    "sigmoid": tt.sigmoid,
    "softplus": tt.softplus,
    "gelu": tt.gelu,
    "square": lambda a: a * a,
    "pow3": lambda a: tt.power(a, 3.0),
    "softmax": lambda a: tt.softmax(a, axis=-1),
    "log_softmax": lambda a: tt.log_softmax(a, axis=-1),
    "layer_norm": lambda a: tt.layer_norm(a),
    "transpose": lambda a: tt.transpose(a),
    "reshape": lambda a: tt.reshape(a, (-1,)),
    "slice": lambda a: a[1:, ::2],
    "fancy_index": lambda a: a[np.array([0, 2, 0]), np.array([1, 1, 1])],
    "sum_axis": lambda a: tt.tsum(a, axis=0),
    "mean_axis": lambda a: tt.mean(a, axis=1, keepdims=True),
    "squared_l2": lambda a: tt.squared_l2(a),
    "l2_normalize": lambda a: tt.l2_normalize(a),
    "broadcast_to": lambda a: tt.broadcast_to(tt.reshape(a[0], (1, -1)), (3, a.shape[1])),
    "masked_fill": lambda a: tt.masked_fill(a, np.eye(*a.shape, dtype=bool), -3.0),
    "where": lambda a: tt.where(a.data > 0, a * 2.0, tt.exp(a)),
}

POSITIVE = {
    "log": tt.log,
    "sqrt": tt.sqrt,
    "reciprocal": lambda a: 1.0 / a,
    "abs": tt.abs,  # inputs kept away from the kink at 0
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("seed", range(3))
def test_unary_rule_matches_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    a = leaf(rng, 3, 4)
    w = _weights(rng, UNARY[name](a).shape)
    err = finite_diff_check(lambda: tt.tsum(UNARY[name](a) * w), a)
    assert err <= 1e-4


@pytest.mark.parametrize("name", sorted(POSITIVE))
def test_positive_domain_rules(name):
    rng = np.random.default_rng(1)
    a = positive_leaf(rng, 3, 4)
    w = _weights(rng, (3, 4))
    assert finite_diff_check(lambda: tt.tsum(POSITIVE[name](a) * w), a) <= 1e-4


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_broadcasting_rules(op):
    rng = np.random.default_rng(2)
    a = leaf(rng, 2, 3, 4)
    b = positive_leaf(rng, 3, 1)
    fn = getattr(tt, op)
    w = _weights(rng, (2, 3, 4))
    for x in (a, b):
        assert finite_diff_check(lambda: tt.tsum(fn(a, b) * w), x) <= 1e-4


def test_matmul_batched_and_broadcast_rules():
    rng = np.random.default_rng(3)
    a = leaf(rng, 2, 3, 4)
    b = leaf(rng, 4, 5)
    c = leaf(rng, 2, 5, 2)
    w = _weights(rng, (2, 3, 2))
    f = lambda: tt.tsum(tt.matmul(tt.matmul(a, b), c) * w)
    for x in (a, b, c):
        assert finite_diff_check(f, x) <= 1e-4


def test_concat_stack_rules():
    rng = np.random.default_rng(4)
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 5)
    w = _weights(rng, (2, 8))
    assert finite_diff_check(lambda: tt.tsum(tt.concat([a, b], axis=1) * w), b) <= 1e-4
    c = leaf(rng, 2, 3)
    w2 = _weights(rng, (2, 2, 3))
    assert finite_diff_check(lambda: tt.tsum(tt.stack([a, c], axis=1) * w2), c) <= 1e-4


def test_attention_rule_with_mask():
    rng = np.random.default_rng(5)
    q, k, v = leaf(rng, 2, 3, 4), leaf(rng, 2, 5, 4), leaf(rng, 2, 5, 4)
    mask = rng.random((3, 5)) < 0.3
    mask[:, 0] = False
    w = _weights(rng, (2, 3, 4))
    f = lambda: tt.tsum(tt.scaled_dot_product_attention(q, k, v, mask) * w)
    for x in (q, k, v):
        assert finite_diff_check(f, x) <= 1e-4


def test_conv_embedding_cosine_rules():
    rng = np.random.default_rng(6)
    x = leaf(rng, 2, 3, 8)
    W = leaf(rng, 5, 3, 4)
    bias = leaf(rng, 5)
    wt = _weights(rng, (2, 2, 5))
    f = lambda: tt.tsum(tt.conv1d_patch(x, W, bias) * wt)
    for t in (x, W, bias):
        assert finite_diff_check(f, t) <= 1e-4
    E = leaf(rng, 6, 3)
    we = _weights(rng, (4, 3))
    assert finite_diff_check(lambda: tt.tsum(tt.embedding(E, [0, 5, 0, 2]) * we), E) <= 1e-4
    a, b = leaf(rng, 4, 6), leaf(rng, 4, 6)
    wc = _weights(rng, (4,))
    for t in (a, b):
        assert finite_diff_check(lambda: tt.tsum(tt.cosine_similarity(a, b) * wc), t) <= 1e-4


def test_straight_through_routes_gradient_to_soft_branch():
    soft = Tensor(np.array([0.2, 0.7]), requires_grad=True)
    hard = (soft.data > 0.5).astype(float)
    out = tt.straight_through(hard, soft)
    np.testing.assert_array_equal(out.data, hard)
    tt.backward(tt.tsum(out * np.array([3.0, -1.0])))
    np.testing.assert_array_equal(soft.grad, [3.0, -1.0])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 4), d=st.integers(2, 5))
def test_three_layer_composite_against_finite_differences(seed, n, d):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(n, d)))
    W1, W2, W3 = leaf(rng, d, 6), leaf(rng, 6, 6), leaf(rng, 6, 3)

    def f():
        h = tt.tanh(tt.matmul(x, W1))
        h = tt.gelu(tt.layer_norm(tt.matmul(h, W2)))
        return tt.mean(tt.log_softmax(tt.matmul(h, W3), axis=-1) * -1.0)

    # saturated tanh units give near-zero entries where difference round-off
    # dominates; those are held to an absolute bound instead
    for W in (W1, W2, W3):
        W1.grad = W2.grad = W3.grad = None
        g = backward(f())[W].copy()
        big = [i for i in np.ndindex(*W.shape) if abs(g[i]) >= 1e-3]
        small = [i for i in np.ndindex(*W.shape) if abs(g[i]) < 1e-3]
        if big:
            assert finite_diff_check(f, W, indices=big) <= 1e-4
        for i in small:
            orig = W.data[i]
            W.data[i] = orig + 1e-5
            fp = f().item()
            W.data[i] = orig - 1e-5
            fm = f().item()
            W.data[i] = orig
            assert abs((fp - fm) / 2e-5 - g[i]) <= 1e-8


# -- forward values ---------------------------------------------------------------

def test_documented_forward_values():
    np.testing.assert_array_equal(tt.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(np.eye(2))).data,
                                  [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(tt.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    assert tt.sigmoid(Tensor(0.0)).item() == 0.5


def test_sum_gives_ones_gradient():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4)), requires_grad=True)
    tt.backward(tt.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_sigmoid_at_zero_weights():
    x = np.array([1.5, -2.0, 0.25])
    w = Tensor(np.zeros(3), requires_grad=True)
    tt.backward(tt.sigmoid(tt.tsum(w * x)))
    np.testing.assert_allclose(w.grad, 0.25 * x, rtol=0, atol=1e-15)


def test_half_squared_norm_check_is_exact():
    x = Tensor(np.random.default_rng(1).normal(size=5), requires_grad=True)
    assert finite_diff_check(lambda: tt.tsum(x * x) * 0.5, x) < 1e-9


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(1e-3, 1e3))
def test_softmax_rows_sum_to_one(seed, scale):
    x = np.random.default_rng(seed).normal(0, scale, (4, 7))
    s = tt.softmax(Tensor(x)).data
    assert np.all(np.abs(s.sum(axis=-1) - 1.0) <= 1e-12)
    assert np.all(np.isfinite(s))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(1e-2, 1e3), shift=st.floats(-1e3, 1e3))
def test_layer_norm_moments(seed, scale, shift):
    x = np.random.default_rng(seed).normal(shift, scale, (5, 16))
    y = tt.layer_norm(Tensor(x)).data
    v = x.var(axis=-1)
    assert np.all(np.abs(y.mean(axis=-1)) <= 1e-10)
    # eps shrinks the output variance to v / (v + eps)
    np.testing.assert_allclose(y.var(axis=-1), v / (v + tt.LN_EPS), rtol=1e-10)
    unit = v >= 1e-2
    assert np.all(np.abs(y.var(axis=-1)[unit] - 1.0) <= 1e-6)


def test_attention_examples():
    rng = np.random.default_rng(7)
    q = rng.normal(size=(2, 3, 5, 4))
    v = rng.normal(size=(2, 3, 1, 4))
    out, w = tt.scaled_dot_product_attention(q, rng.normal(size=(2, 3, 1, 4)), v, return_weights=True)
    np.testing.assert_array_equal(w.data, np.ones((2, 3, 5, 1)))
    np.testing.assert_allclose(out.data, np.broadcast_to(v, out.shape), rtol=0, atol=1e-15)

    x = rng.normal(size=(1, 2, 6, 4))
    _, w = tt.scaled_dot_product_attention(x, x, x, return_weights=True)
    assert np.all(np.abs(w.data.sum(-1) - 1.0) <= 1e-12)

    Q = np.array([[1.0, 0.0], [0.5, -1.0]])
    K = np.array([[0.0, 2.0], [1.0, 1.0]])
    V = np.array([[1.0, 2.0], [3.0, -1.0]])
    s = Q @ K.T / np.sqrt(2)
    expect = np.exp(s) / np.exp(s).sum(axis=1, keepdims=True) @ V
    np.testing.assert_allclose(tt.scaled_dot_product_attention(Q, K, V).data, expect, rtol=1e-13)


def test_attention_mask_blocks_positions():
    rng = np.random.default_rng(8)
    q, k, v = (rng.normal(size=(3, 4)) for _ in range(3))
    mask = np.array([[False, True, True], [False, False, True], [True, False, False]])
    _, w = tt.scaled_dot_product_attention(q, k[:3], v[:3], mask, return_weights=True)
    assert np.all(w.data[mask] < 1e-300)


def test_attention_rejects_empty_keys():
    with pytest.raises(ShapeError, match="zero-length"):
        tt.scaled_dot_product_attention(np.ones((2, 4)), np.ones((0, 4)), np.ones((0, 4)))


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(4, 5\)"):
        tt.matmul(np.ones((2, 3)), np.ones((4, 5)))
    with pytest.raises(ShapeError, match="add"):
        tt.add(np.ones((2, 3)), np.ones((4,)))
    with pytest.raises(ShapeError, match="conv1d"):
        tt.conv1d_patch(np.ones((1, 2, 9)), np.ones((3, 2, 4)))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        tt.backward(x * 2.0)


def test_log_is_guarded_at_zero():
    x = Tensor(np.zeros(2), requires_grad=True)
    y = tt.log(x)
    assert np.all(np.isfinite(y.data))
    tt.backward(tt.tsum(y))
    assert np.all(np.isfinite(x.grad))


def test_gradients_accumulate_and_are_deterministic():
    def run():
        rng = np.random.default_rng(11)
        W = leaf(rng, 4, 4)
        x = rng.normal(size=(3, 4))
        tt.backward(tt.mean(tt.tanh(tt.matmul(x, W)) ** 2))
        return W, x

    (W1, x), (W2, _) = run(), run()
    assert W1.grad.tobytes() == W2.grad.tobytes()
    first = W1.grad.copy()
    tt.backward(tt.mean(tt.tanh(tt.matmul(x, W1)) ** 2))
    np.testing.assert_allclose(W1.grad, 2 * first)


def test_shared_subexpression_visited_once():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    z = y + y  # y feeds two paths
    tt.backward(tt.tsum(z))
    np.testing.assert_array_equal(x.grad, [8.0])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with tt.no_grad():
        y = tt.exp(x)
    assert not y.requires_grad


def test_dropout_train_only():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones((100, 100)))
    assert tt.dropout(x, 0.5, rng, training=False) is x
    y = tt.dropout(x, 0.5, rng, training=True).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
