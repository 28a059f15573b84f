import math

import numpy as np
import pytest

from causaltext import tensor as T
from causaltext.tensor import AdamState, Node, adam_step, grad_check


def test_affine_forward_hand_value():
    x = Node([[1.0, 0.0]])
    w = Node([[2.0], [3.0]])
    b = Node([1.0])
    out = T.affine(x, w, b)
    assert out.values.tolist() == [[3.0]]


def test_affine_identity_passthrough():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3))
    out = T.affine(Node(x), Node(np.eye(3)), Node(np.zeros(3)))
    np.testing.assert_array_equal(out.values, x)


def test_affine_weight_gradient_is_xT_ones():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(3, 2))
    b = np.zeros(2)
    leaves = {"w": Node(w)}
    out = T.sum_all(T.affine(Node(x), leaves["w"], Node(b)))
    out.backward()
    expected = x.T @ np.ones((5, 2))
    np.testing.assert_allclose(leaves["w"].grad, expected, rtol=1e-12)
    # and the same thing via finite differences
    report = grad_check(lambda lv: T.sum_all(T.affine(Node(x), lv["w"], Node(b))), {"w": w})
    assert report.passed


def test_affine_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        T.affine(Node(np.ones((2, 3))), Node(np.ones((4, 2))), Node(np.ones(2)))


def test_sigmoid_softmax_symmetry_points():
    assert T.sigmoid(Node(np.zeros(1))).values[0] == 0.5
    np.testing.assert_allclose(T.softmax_rows(Node([[0.0, 0.0, 0.0]])).values, [[1 / 3] * 3])


def test_bce_at_zero_logit_is_log2():
    out = T.bce_with_logits(Node(np.zeros(1)), np.ones(1))
    assert math.isclose(out.values[0], math.log(2.0), rel_tol=1e-12)


def test_bce_rejects_nonbinary_target():
    with pytest.raises(ValueError, match="outside"):
        T.bce_with_logits(Node(np.zeros(1)), np.array([0.5]))


def test_bce_stable_for_large_logits():
    out = T.bce_with_logits(Node(np.array([500.0, -500.0])), np.array([1.0, 0.0]))
    assert np.all(np.isfinite(out.values))
    np.testing.assert_allclose(out.values, [0.0, 0.0], atol=1e-12)


def test_softmax_rows_on_simplex():
    rng = np.random.default_rng(2)
    s = T.softmax_rows(Node(rng.normal(size=(6, 5)) * 30)).values
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), np.ones(6), atol=1e-9)


def test_reparam_zero_noise_recovers_mu():
    mu = np.array([[0.3, -1.2]])
    out = T.reparam_with_noise(Node(mu), Node(np.full((1, 2), 1e-12)), np.zeros((1, 2)))
    np.testing.assert_allclose(out.values, mu)


def test_reparam_sample_deterministic_given_seed():
    mu = Node(np.zeros((2, 3)))
    sigma = Node(np.ones((2, 3)))
    a = T.reparam_sample(mu, sigma, np.random.default_rng(7)).values
    b = T.reparam_sample(Node(np.zeros((2, 3))), Node(np.ones((2, 3))), np.random.default_rng(7)).values
    np.testing.assert_array_equal(a, b)


def test_reparam_rejects_nonpositive_sigma():
    with pytest.raises(ValueError, match="sigma"):
        T.reparam_with_noise(Node(np.zeros((1, 2))), Node(np.array([[1.0, 0.0]])), np.zeros((1, 2)))


def test_reparam_mu_gradient_is_identity():
    # d(sum r)/d(mu) = 1 elementwise, by finite differences
    eps = np.random.default_rng(3).standard_normal((2, 2))
    report = grad_check(
        lambda lv: T.sum_all(T.reparam_with_noise(lv["mu"], Node(np.ones((2, 2))), eps)),
        {"mu": np.zeros((2, 2))},
    )
    assert report.passed and report.max_rel_error < 1e-6


def test_adam_zero_gradient_fixed_point():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_single_step_hand_value():
    # bias-corrected first step with g=1: update is lr * 1 / (1 + eps)
    params = {"w": np.zeros(1)}
    adam_step(params, {"w": np.ones(1)}, AdamState(lr=0.1))
    assert math.isclose(params["w"][0], -0.1, rel_tol=1e-7)


def test_adam_descends_against_constant_gradient():
    params = {"w": np.zeros(1)}
    state = AdamState(lr=0.05)
    for _ in range(50):
        adam_step(params, {"w": np.array([2.5])}, state)
    assert params["w"][0] < 0


def test_adam_rejects_nonfinite_gradient():
    with pytest.raises(ValueError, match="non-finite gradient"):
        adam_step({"w": np.zeros(1)}, {"w": np.array([np.nan])}, AdamState())


def test_grad_check_quadratic_is_exact():
    report = grad_check(
        lambda lv: (0.5 * T.sum_all(T.square(lv["theta"]))),
        {"theta": np.array([0.7, -1.3, 2.0])},
    )
    assert report.passed
    assert report.max_rel_error < 1e-8


def test_grad_check_flags_relu_kink_at_zero():
    report = grad_check(lambda lv: T.sum_all(T.relu(lv["x"])), {"x": np.array([0.0, 1.0])})
    result = report.results["x"]
    assert result.n_flagged == 1  # the coordinate sitting on the kink
    assert report.passed  # the smooth coordinate still passes


def test_grad_check_catches_wrong_backward_rule():
    def broken_double(a):
        out = Node(2.0 * a.values, (a,))

        def backward(grad):
            a.grad += grad * 3.0  # wrong on purpose

        out._backward = backward
        return out

    report = grad_check(lambda lv: T.sum_all(broken_double(lv["x"])), {"x": np.ones(2)})
    assert not report.passed


def test_every_registered_rule_passes_randomized_checks():
    for name, report in T.standard_op_checks(seed=11, instances=3):
        assert report.passed, f"{name}: max rel error {report.max_rel_error}"


def test_forward_and_gradients_bit_identical_across_runs():
    def run():
        rng = np.random.default_rng(42)
        x = Node(rng.normal(size=(3, 4)))
        w = Node(rng.normal(size=(4, 2)))
        out = T.mean_all(T.square(T.softmax_rows(T.matmul(x, w))))
        out.backward()
        return out.values.copy(), w.grad.copy()

    v1, g1 = run()
    v2, g2 = run()
    assert np.array_equal(v1, v2)
    assert np.array_equal(g1, g2)


def test_bow_loglik_zero_probability_token_raises():
    mix = Node(np.array([[0.0, 1.0]]))
    with pytest.raises(ValueError, match="zero-probability token"):
        T.bow_loglik(mix, np.array([[1.0, 0.0]]))


def test_bow_loglik_empty_row_is_zero():
    mix = T.softmax_rows(Node(np.zeros((1, 3))))
    out = T.bow_loglik(mix, np.zeros((1, 3)))
    assert out.values[0] == 0.0


def test_apply_op_dispatch():
    out = T.apply_op("sigmoid", Node(np.zeros(2)))
    np.testing.assert_allclose(out.values, [0.5, 0.5])
    out = T.apply_op("binary-cross-entropy", Node(np.zeros(1)), np.ones(1))
    assert math.isclose(out.values[0], math.log(2.0), rel_tol=1e-12)
    with pytest.raises(ValueError, match="unknown op kind"):
        T.apply_op("tanh", Node(np.zeros(1)))
