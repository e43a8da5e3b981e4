import math

import numpy as np
import pytest

from synchrowave import nn
from synchrowave.nn import (
    AdamState,
    LearnableLineParams,
    MlpModel,
    Workspace,
    adam_step,
    backward,
    forward,
    grad_check,
    init_model,
    inverse_softplus,
    softplus,
)

# tanh(tanh(0.5)) evaluated with mpmath at 30 digits.
TANH_TANH_HALF = 0.43180818059509617737


def test_default_parameter_count():
    expected = 2 * 32 + 32 + 32 * 32 + 32 + 32 * 1 + 1
    assert expected == 1185
    assert nn.param_count(nn.DEFAULT_SHAPE) == expected
    assert init_model(0).n_params == expected


def test_layer_views_share_storage():
    m = MlpModel((2, 3, 1))
    (W1, b1), (W2, b2) = m.layers()
    W1[0, 1] = 4.0
    b2[0] = -1.0
    assert m.params[1] == 4.0
    assert m.params[-1] == -1.0


def test_wrong_parameter_length():
    with pytest.raises(ValueError, match="expected"):
        MlpModel((2, 3, 1), np.zeros(5))


def test_zero_model_outputs_zero():
    x = np.random.default_rng(0).normal(size=(7, 2))
    assert np.all(forward(MlpModel(), x) == 0.0)


def test_output_bias_only():
    m = MlpModel()
    m.layers()[-1][1][0] = 0.7
    assert np.all(forward(m, np.random.default_rng(1).normal(size=(5, 2))) == 0.7)


def test_unit_width_composition():
    m = MlpModel((2, 1, 1, 1))
    for W, b in m.layers():
        W[...] = 1.0
    out = forward(m, np.array([[0.5, 0.0]]))
    assert out[0] == pytest.approx(TANH_TANH_HALF, rel=1e-15)


def test_input_shape_checked():
    with pytest.raises(ValueError, match="inputs"):
        forward(MlpModel(), np.zeros((4, 3)))


def test_backward_zero_model_single_point():
    m = MlpModel()
    out, cache = forward(m, np.array([[0.0, 0.0]]), cache=True)
    target = 1.25
    g = backward(m, cache, 2.0 * (out - target))
    grads = m.layers(g)
    assert grads[-1][1][0] == 2.0 * (0.0 - target)
    for W, _ in grads[:-1]:
        assert np.all(W == 0.0)


def test_constant_loss_has_zero_gradient():
    m = init_model(3)
    _, cache = forward(m, np.ones((4, 2)), cache=True)
    assert np.all(backward(m, cache, np.zeros(4)) == 0.0)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    m = init_model(5)
    m.params += rng.normal(0, 0.1, m.n_params)
    x = rng.normal(size=(20, 2))
    y = rng.normal(size=20)

    def loss(p):
        return float(np.mean((forward(m, x, p) - y) ** 2))

    def grad(p):
        out, cache = forward(m, x, p, cache=True)
        return backward(m, cache, 2.0 * (out - y) / len(y), p)

    assert grad_check(loss, grad, m.params) < 1e-6


def test_non_finite_gradient_names_tensor():
    m = init_model(0)
    _, cache = forward(m, np.ones((2, 2)), cache=True)
    with pytest.raises(nn.NumericError, match=r"non-finite gradient in (W|b)\d"):
        with np.errstate(invalid="ignore"):
            backward(m, cache, np.array([np.inf, 0.0]))


def test_workspace_matches_generic_path():
    rng = np.random.default_rng(2)
    m = init_model(2)
    x = rng.normal(size=(30, 2))
    gout = rng.normal(size=30)
    ws = Workspace(m, x)
    out = ws.forward(m.params)
    ref, cache = forward(m, x, cache=True)
    assert np.allclose(out, ref, rtol=1e-14, atol=1e-15)
    assert np.allclose(ws.backward(gout), backward(m, cache, gout), rtol=1e-12, atol=1e-15)


def test_forward_many_matches_loop():
    rng = np.random.default_rng(4)
    m = init_model(4)
    x = rng.normal(size=(9, 2))
    stack = m.params + rng.normal(0, 0.05, size=(3, m.n_params))
    many = nn.forward_many(m, x, stack)
    for row, p in zip(many, stack):
        assert np.allclose(row, forward(m, x, p), rtol=1e-13, atol=1e-15)


def test_init_deterministic_and_seed_dependent():
    a, b, c = init_model(11), init_model(11), init_model(12)
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, c.params)
    for W, bias in a.layers():
        assert np.all(bias == 0.0)
        limit = math.sqrt(6.0 / sum(W.shape))
        assert np.max(np.abs(W)) <= limit


def test_adam_zero_gradient():
    st = AdamState(3)
    p = np.array([1.0, -2.0, 3.0])
    out = adam_step(st, p, np.zeros(3))
    assert np.array_equal(out, p) and st.step == 1


def test_adam_first_step_is_sign():
    st = AdamState(4)
    g = np.array([3.0, -0.01, 1e3, -7.0])
    out = adam_step(st, np.zeros(4), g)
    assert np.allclose(out, -1e-3 * np.sign(g), rtol=1e-6)


def test_adam_two_steps_monotone():
    st = AdamState(1)
    p0 = np.array([0.5])
    p1 = adam_step(st, p0, np.array([2.0]))
    p2 = adam_step(st, p1, np.array([2.0]))
    assert p2[0] < p1[0] < p0[0]


def test_adam_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        adam_step(AdamState(2), np.zeros(3), np.zeros(3))


def test_softplus_values():
    assert softplus(0.0) == pytest.approx(math.log(2.0), rel=1e-15)
    assert softplus(100.0) == pytest.approx(100.0, rel=1e-12)
    assert abs(inverse_softplus(0.6931471805)) < 1e-9
    assert softplus(-50.0) > 0.0


def test_inverse_softplus_rejects_non_positive():
    with pytest.raises(ValueError):
        inverse_softplus(0.0)
    with pytest.raises(ValueError):
        inverse_softplus(-1.0)


def test_learnable_line_params_round_trip():
    lp = LearnableLineParams.from_values(5.0, 1e-3)
    assert lp.R == pytest.approx(5.0, rel=1e-12)
    assert lp.L == pytest.approx(1e-3, rel=1e-12)
    dR, dL = lp.chain()
    h = 1e-6
    up = LearnableLineParams(lp.theta_R + h, lp.theta_L + h)
    dn = LearnableLineParams(lp.theta_R - h, lp.theta_L - h)
    assert dR == pytest.approx((up.R - dn.R) / (2 * h), rel=1e-8)
    assert dL == pytest.approx((up.L - dn.L) / (2 * h), rel=1e-8)


def test_grad_check_quadratic_exact():
    # Linear one-parameter model w*x with squared loss.
    x, y = 1.7, 0.4
    loss = lambda w: float((w[0] * x - y) ** 2)
    grad = lambda w: np.array([2.0 * (w[0] * x - y) * x])
    assert grad_check(loss, grad, np.array([0.9])) < 1e-10


def test_grad_check_second_order_convergence():
    # A smooth non-polynomial loss; the central difference error falls like eps^2.
    loss = lambda w: float(np.sum(np.sin(w) * np.exp(w / 3)))
    grad = lambda w: np.cos(w) * np.exp(w / 3) + np.sin(w) * np.exp(w / 3) / 3
    x = np.array([0.3, 1.1, -0.8])
    coarse = grad_check(loss, grad, x, 1e-3)
    fine = grad_check(loss, grad, x, 1e-5)
    assert fine < coarse / 100


def test_grad_check_batched_agrees():
    loss = lambda w: float(np.sum(w**3))
    losses = lambda ws: np.sum(ws**3, axis=1)
    grad = lambda w: 3 * w**2
    x = np.array([0.5, -1.0, 2.0])
    assert grad_check(losses, grad, x, batched=True) == pytest.approx(grad_check(loss, grad, x), abs=1e-12)
