"""
Tests for the reverse-mode differentiation engine and the Adam optimizer.

Covers:
- forward values of the primitives (softmax, cross-entropy, matmul)
- gradient accumulation across fan-out and across backward calls
- finite-difference agreement for the selection + classifier composite
- Adam bias correction, masking and per-parameter state
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from app.autodiff import Adam, Tensor, adam_step, backward, cross_entropy, matmul, mean, mul, softmax, sum_
from app.autodiff.gradcheck import gradient_check
from app.layers import Classifier, ConditionalSelectionLayer, IndependentSelectionLayer
from app.models.errors import DimensionError, MissingGradientError, ParameterError, SelectionError
from app.utils.topology_utils import CommGraph, CommTopology, NodeLayout, build_distance_matrix


class TestPrimitives:
    """Forward values of the primitives."""

    def test_softmax_uniform(self):
        out = softmax(Tensor([0.0, 0.0, 0.0]), tau=1.0)
        np.testing.assert_allclose(out.values, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_softmax_low_temperature_approaches_argmax(self):
        out = softmax(Tensor([1.0, 0.0]), tau=0.01)
        assert out.values[0] > 1 - 1e-12

    def test_softmax_survives_masked_magnitudes(self):
        out = softmax(Tensor([-1e9, 30.0, -30.0]), tau=0.1)
        assert np.all(np.isfinite(out.values))
        assert out.values[0] == 0.0

    def test_softmax_rejects_nonpositive_temperature(self):
        with pytest.raises(ParameterError):
            softmax(Tensor([0.0, 1.0]), tau=0.0)

    @settings(max_examples=50, deadline=None)
    @given(
        logits=arrays(np.float64, (3, 5), elements=st.floats(-30, 30)),
        tau=st.sampled_from([0.05, 0.5, 1.0, 10.0]),
    )
    def test_softmax_rows_on_simplex(self, logits, tau):
        out = softmax(Tensor(logits), tau=tau).values
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_cross_entropy_confident_and_wrong(self):
        right = cross_entropy(Tensor([[10.0, -10.0]]), np.array([0])).item()
        wrong = cross_entropy(Tensor([[-10.0, 10.0]]), np.array([0])).item()
        assert right == pytest.approx(0.0, abs=1e-8)
        assert wrong == pytest.approx(20.0, abs=1e-6)

    def test_cross_entropy_label_out_of_range(self):
        with pytest.raises(DimensionError):
            cross_entropy(Tensor([[0.0, 1.0]]), np.array([2]))

    def test_matmul_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError) as exc:
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        assert exc.value.shapes == ((2, 3), (2, 3))

    def test_add_broadcast_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones(3)) + Tensor(np.ones(4))


class TestBackward:
    """Gradient bookkeeping of the tape."""

    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        backward(mul(x, x))
        assert float(x.grad) == pytest.approx(6.0)

    def test_fan_out_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        y = mul(x, x)
        backward(y + y + x)
        assert float(x.grad) == pytest.approx(4 * 2.0 + 1.0)

    def test_leaf_gradients_accumulate_across_calls(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(sum_(x))
        backward(sum_(x))
        np.testing.assert_allclose(x.grad, [2.0, 2.0])

    def test_constant_gets_no_gradient(self):
        x = Tensor(3.0, requires_grad=True)
        c = Tensor(5.0)
        backward(mul(x, c))
        assert c.grad is None

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(SelectionError):
            backward(mul(x, 2.0))

    def test_softmax_dot_product_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.normal(size=5), requires_grad=True, name="a")
        w = rng.normal(size=5)
        errors = gradient_check(lambda: sum_(mul(softmax(a, tau=0.7), w)), [a])
        assert errors["a"] < 1e-4

    def test_mean_over_axis(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(sum_(mean(x, axis=0)))
        np.testing.assert_allclose(x.grad, np.full((2, 3), 0.5))


def _square_topology(threshold: float) -> CommTopology:
    layout = NodeLayout(coords=np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]]))
    return CommTopology(build_distance_matrix(layout), CommGraph.line(3), threshold)


class TestCompositeGradients:
    """Selection layer + classifier + cross-entropy against central differences."""

    @pytest.mark.parametrize("seed", range(25))
    def test_independent_composite(self, seed):
        rng = np.random.default_rng(seed)
        n, m, l, b = 5, 2, 3, 4
        layer = IndependentSelectionLayer(n, m, rng=rng, logits=rng.normal(size=(m, n)))
        classifier = Classifier(m, l, 3, hidden_width=4, rng=rng)
        X = rng.normal(size=(b, n, l))
        y = rng.integers(0, 3, size=b)
        noise = np.random.default_rng(seed + 100).gumbel(size=(2, b, m, n))

        def loss():
            features = layer.forward(X, tau=1.0, rng=rng, n_rounds=2, noise=noise)
            return cross_entropy(classifier.forward(features), y)

        errors = gradient_check(loss, layer.parameters() + classifier.parameters())
        assert max(errors.values()) < 1e-4, errors

    @pytest.mark.parametrize("seed", range(25))
    def test_conditional_composite_with_masked_entries(self, seed):
        rng = np.random.default_rng(seed)
        topology = _square_topology(0.75)
        mask, net = topology.masks(), topology.net
        n, l, b = 5, 2, 3
        layer = ConditionalSelectionLayer(
            mask, net,
            root_logits=rng.normal(size=n),
            cond_logits={v: rng.normal(size=(n, n)) for v in (1, 2)},
        )
        classifier = Classifier(3, l, 2, hidden_width=4, rng=rng)
        X = rng.normal(size=(b, n, l))
        y = rng.integers(0, 2, size=b)
        noise_rng = np.random.default_rng(seed + 100)
        noise = {0: noise_rng.gumbel(size=(2, b, n)),
                 1: noise_rng.gumbel(size=(2, b, n, n)),
                 2: noise_rng.gumbel(size=(2, b, n, n))}

        def loss():
            features = layer.forward(X, tau=1.0, rng=rng, n_rounds=2, noise=noise)
            return cross_entropy(classifier.forward(features), y)

        errors = gradient_check(loss, layer.parameters() + classifier.parameters())
        assert max(errors.values()) < 1e-4, errors

        for v, param in layer.cond_logits.items():
            assert np.all(param.grad[~mask.cond_masks[v]] == 0.0)
        assert np.all(layer.root_logits.grad[~mask.root_mask] == 0.0)


class TestAdam:
    """Bias-corrected Adam with per-parameter state."""

    def test_first_step_moves_by_lr(self):
        x = Tensor(1.0, requires_grad=True)
        x.grad = np.array(1.0)
        adam_step([x], lr=0.1)
        assert float(x.values) == pytest.approx(0.9, abs=1e-6)

    def test_zero_gradient_leaves_parameter(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        for _ in range(5):
            x.grad = np.zeros(2)
            adam_step([x], lr=0.1)
        np.testing.assert_array_equal(x.values, [1.0, -2.0])

    def test_missing_gradient_names_parameter(self):
        x = Tensor(1.0, requires_grad=True, name="weights")
        with pytest.raises(MissingGradientError, match="weights"):
            adam_step([x], lr=0.1)

    def test_nonpositive_lr(self):
        x = Tensor(1.0, requires_grad=True)
        x.grad = np.array(1.0)
        with pytest.raises(ParameterError):
            adam_step([x], lr=0.0)

    def test_trainable_mask_freezes_entries(self):
        x = Tensor([1.0, 1.0], requires_grad=True)
        x.trainable_mask = np.array([True, False])
        x.grad = np.array([1.0, 1.0])
        adam_step([x], lr=0.1)
        assert x.values[0] == pytest.approx(0.9, abs=1e-6)
        assert x.values[1] == 1.0

    def test_state_not_shared(self):
        a = Tensor(0.0, requires_grad=True)
        b = Tensor(0.0, requires_grad=True)
        a.grad = np.array(1.0)
        adam_step([a], lr=0.1)
        a.grad, b.grad = np.array(1.0), np.array(-1.0)
        adam_step([a, b], lr=0.1)
        assert a.optimizer_state["step"] == 2
        assert b.optimizer_state["step"] == 1
        assert float(b.values) == pytest.approx(0.1, abs=1e-6)

    def test_groups_use_their_own_rates(self):
        a = Tensor(0.0, requires_grad=True)
        b = Tensor(0.0, requires_grad=True)
        optimizer = Adam([{"params": [a], "lr": 0.1}, {"params": [b], "lr": 0.01}])
        a.grad, b.grad = np.array(1.0), np.array(1.0)
        optimizer.step()
        assert float(a.values) == pytest.approx(-0.1, abs=1e-6)
        assert float(b.values) == pytest.approx(-0.01, abs=1e-6)

    def test_converges_on_quadratic(self):
        target = np.array([1.0, -2.0, 0.5])
        x = Tensor(np.zeros(3), requires_grad=True)
        optimizer = Adam([x], lr=0.05)
        for _ in range(500):
            optimizer.zero_grad()
            diff = x - target
            backward(sum_(mul(diff, diff)))
            optimizer.step()
        assert np.max(np.abs(x.values - target)) < 0.1
