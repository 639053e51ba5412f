import numpy as np
import pytest

from cyclecomplete import autodiff as ad

from helpers import assert_grads_close, numeric_grad


def test_matmul_identity():
    M = np.arange(9.0).reshape(3, 3)
    out = ad.forward_op("matmul", ad.constant(np.eye(3)), ad.constant(M))
    assert np.array_equal(out.data, M)


def test_sum_of_squares_hand_value():
    out = ad.forward_op("sum", ad.forward_op("square", ad.constant([1.0, 2.0, 3.0])))
    assert out.item() == 14.0


def test_max_over_axis_records_argmax():
    node = ad.forward_op("max-over-axis", ad.constant([[1.0, 5.0], [7.0, 2.0]]), axis=0)
    assert np.array_equal(node.data, [7.0, 5.0])
    assert np.array_equal(node.argmax, [1, 0])


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ad.ShapeError, match="matmul") as e:
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))
    assert "(2, 3)" in str(e.value)
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(ad.constant(np.ones(3)), ad.constant(np.ones(4)))


def test_non_finite_result_raises():
    with pytest.raises(ad.NonFiniteError):
        ad.constant([np.inf, 1.0])
    with pytest.raises(ad.NonFiniteError, match="sqrt"):
        ad.sqrt(ad.constant([-1.0]))


def test_backward_sum_of_squares():
    x = ad.variable([1.0, -2.0])
    g = ad.backward(ad.sum_(ad.square(x)))
    assert np.array_equal(g.wrt(x), [2.0, -4.0])


def test_backward_requires_scalar_loss():
    x = ad.variable([1.0, 2.0])
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.square(x))


def test_backward_deterministic_on_repeat():
    rng = np.random.default_rng(0)
    W = ad.variable(rng.normal(size=(4, 3)))
    x = ad.constant(rng.normal(size=(5, 4)))

    def run():
        return ad.backward(ad.mean(ad.matmul(x, W))).wrt(W)

    a, b = run(), run()
    assert np.array_equal(a, b)


def test_unreachable_parameter_gets_zero_gradient():
    used = ad.Parameter("used", np.ones(3), ad.ParamGroup.TRANSFER)
    unused = ad.Parameter("unused", np.ones(3), ad.ParamGroup.TRANSFER)
    g = ad.backward(ad.sum_(ad.square(used)), wrt=[used, unused])
    assert np.array_equal(g.wrt(unused), np.zeros(3))
    assert g.reached(used) and not g.reached(unused)


def test_backward_linearity_over_losses():
    rng = np.random.default_rng(1)
    x = ad.variable(rng.normal(size=6))

    def la():
        return ad.sum_(ad.square(x))

    def lb():
        return ad.mean(ad.tanh(x))

    ga = ad.backward(la()).wrt(x)
    gb = ad.backward(lb()).wrt(x)
    gsum = ad.backward(ad.add(la(), lb())).wrt(x)
    assert np.allclose(gsum, ga + gb, rtol=0, atol=1e-15)


def test_tape_replay_bit_identical():
    rng = np.random.default_rng(2)
    w = ad.variable(rng.normal(size=(3, 4)))
    x = ad.constant(rng.normal(size=(2, 3)))

    def forward():
        return ad.sum_(ad.sigmoid(ad.matmul(x, w)))

    assert forward().item() == forward().item()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_composite_expression_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    W1 = ad.variable(rng.normal(size=(3, 5)) * 0.7)
    b1 = ad.variable(rng.normal(size=5) * 0.3)
    W2 = ad.variable(rng.normal(size=(5, 2)) * 0.7)
    x = ad.constant(rng.normal(size=(4, 3)))

    def build():
        h = ad.leaky_relu(ad.add(ad.matmul(x, W1), b1))
        h = ad.tanh(ad.matmul(h, W2))
        left = ad.slice_last(h, 0, 1)
        both = ad.concat_last(ad.square(left), ad.sigmoid(h))
        return ad.add(ad.mean(both), ad.scalar_mul(ad.sum_(ad.sqrt(ad.square(W2))), 0.01))

    g = ad.backward(build())
    for leaf, name in ((W1, "W1"), (b1, "b1"), (W2, "W2")):
        assert_grads_close(g.wrt(leaf), numeric_grad(build, leaf), label=name)


def test_reduction_ops_with_axis_match_finite_differences():
    rng = np.random.default_rng(3)
    x = ad.variable(rng.normal(size=(3, 4, 2)))

    def build():
        pooled = ad.max_axis(x, axis=1)
        return ad.sum_(ad.square(ad.mean(pooled, axis=0)))

    assert_grads_close(ad.backward(build()).wrt(x), numeric_grad(build, x), label="pool")


def test_broadcast_and_l2_norm_rows_gradients():
    rng = np.random.default_rng(4)
    v = ad.variable(rng.normal(size=(3, 4)) + 2.0)  # away from the norm kink at 0

    def build():
        wide = ad.broadcast_to(ad.sum_(v, axis=0), (2, 4))
        return ad.add(ad.mean(wide), ad.sum_(ad.l2_norm_rows(v)))

    assert_grads_close(ad.backward(build()).wrt(v), numeric_grad(build, v), label="l2rows")


def test_forward_op_rejects_unknown_kind():
    with pytest.raises(ValueError, match="unknown op kind"):
        ad.forward_op("fft", ad.constant([1.0]))


def test_leaky_relu_slope_at_zero_takes_negative_side():
    x = ad.variable([0.0, 1.0, -1.0])
    g = ad.backward(ad.sum_(ad.leaky_relu(x))).wrt(x)
    assert np.array_equal(g, [0.2, 1.0, 0.2])


# ---------------------------------------------------------------------------
# analytic input-gradient of critic stacks


def _stack_from(weights):
    return [(W, b, act) for (W, b, act) in weights]


def test_linear_critic_input_gradient_is_weight_vector():
    w = ad.constant(np.array([[2.0], [0.0], [0.0]]))
    stack = [(w, None, "identity")]
    x = ad.constant(np.zeros((4, 3)))
    g = ad.critic_input_gradient(stack, x)
    assert np.array_equal(g.data, np.tile([2.0, 0.0, 0.0], (4, 1)))
    norms = ad.l2_norm_rows(g)
    assert np.allclose(norms.data, 2.0)


def test_unit_norm_linear_critic_gives_zero_penalty():
    w = ad.constant(np.array([[0.6], [0.8], [0.0]]))
    x = ad.constant(np.random.default_rng(0).normal(size=(5, 3)))
    g = ad.critic_input_gradient([(w, None, "identity")], x)
    penalty = ad.mean(ad.square(ad.sub(ad.l2_norm_rows(g), ad.constant(1.0))))
    assert abs(penalty.item()) < 1e-12


def test_critic_input_gradient_matches_finite_differences_on_input():
    rng = np.random.default_rng(5)
    W1 = ad.constant(rng.normal(size=(3, 6)))
    b1 = ad.constant(rng.normal(size=6))
    W2 = ad.constant(rng.normal(size=(6, 1)))
    b2 = ad.constant(rng.normal(size=1))
    stack = [(W1, b1, "leaky_relu"), (W2, b2, "identity")]
    x = ad.variable(rng.normal(size=(1, 3)))

    def score():
        h = ad.leaky_relu(ad.add(ad.matmul(x, W1), b1))
        return ad.sum_(ad.add(ad.matmul(h, W2), b2))

    analytic = ad.critic_input_gradient(stack, x).data[0]
    assert_grads_close(analytic, numeric_grad(score, x)[0], label="input-grad")


def test_penalty_gradient_wrt_weights_matches_finite_differences():
    rng = np.random.default_rng(6)
    W1 = ad.variable(rng.normal(size=(3, 6)))
    b1 = ad.variable(rng.normal(size=6))
    W2 = ad.variable(rng.normal(size=(6, 1)))
    x = ad.constant(rng.normal(size=(4, 3)))

    def build():
        g = ad.critic_input_gradient([(W1, b1, "leaky_relu"), (W2, None, "identity")], x)
        return ad.mean(ad.square(ad.sub(ad.l2_norm_rows(g), ad.constant(1.0))))

    grads = ad.backward(build())
    for leaf, name in ((W1, "W1"), (W2, "W2")):
        assert_grads_close(grads.wrt(leaf), numeric_grad(build, leaf), label=name)
    # Bias moves only the masks, whose derivative is zero almost everywhere.
    assert np.allclose(grads.wrt(b1), 0.0)


def test_critic_input_gradient_rejects_unsupported_activation():
    w = ad.constant(np.ones((3, 1)))
    with pytest.raises(ad.UnsupportedLayerError):
        ad.critic_input_gradient([(w, None, "tanh")], ad.constant(np.ones((2, 3))))
