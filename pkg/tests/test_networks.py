"""
Tests for the state networks, input gradients, Adam helpers and checkpoints.
"""
import pytest
import numpy as np
import torch

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.models.checkpoint import CheckpointError, check_compatible, load_checkpoint, save_checkpoint
from src.models.networks import (
    DTYPE,
    Activation,
    CostateNetwork,
    NetworkSpec,
    NetworkTriple,
    NonFiniteParameterError,
    OutputTransform,
    PolicyNetwork,
    StateNetwork,
    StateNormalizer,
    ValueNetwork,
    costate_jacobian,
    count_parameters,
    describe,
    forward,
    grad_input,
    grad_params,
    parameter_vector,
    value_hessian,
)
from src.models.optim import AdamConfig, adam_step, make_adam


STATES = np.array([[0.0, 1.0, 0.4], [0.5, 0.7, 0.3], [1.2, 1.6, 0.55]])


@pytest.fixture
def normalizer(baseline_market):
    return StateNormalizer.from_market(baseline_market)


def linear_net(normalizer, weight, bias=None, transform=OutputTransform.IDENTITY, cls=StateNetwork):
    """Single affine layer with the given weights."""
    weight = torch.as_tensor(weight, dtype=DTYPE)
    spec = NetworkSpec(output_dim=weight.shape[0], hidden_layers=0, output_transform=transform)
    net = cls(spec, normalizer)
    layer = net.body[0]
    with torch.no_grad():
        layer.weight.copy_(weight)
        if bias is not None:
            layer.bias.copy_(torch.as_tensor(bias, dtype=DTYPE))
    return net


def tensors(states):
    s = torch.as_tensor(states, dtype=DTYPE)
    return s[:, 0], s[:, 1], s[:, 2]


class TestNormalizer:
    """Tests for StateNormalizer."""

    def test_reference_point(self, normalizer, baseline_market):
        out = normalizer(*tensors([[0.0, 1.0, baseline_market.y_bar]]))
        np.testing.assert_allclose(out.numpy(), [[0.0, 1.0, 0.0]])

    def test_factor_scale(self, normalizer, baseline_market):
        assert normalizer.y_scale == pytest.approx(3.0 * baseline_market.y_stationary_sd)
        assert normalizer.w_scale == pytest.approx(0.9)


class TestInitialization:
    """Tests for the zero-initialized output layer."""

    def test_value_network_starts_at_minus_one(self, normalizer, small_spec):
        net = ValueNetwork(ValueNetwork.spec_for(1.5, small_spec), normalizer)
        np.testing.assert_allclose(forward(net, STATES), -1.0)

    def test_value_sign_follows_risk_aversion(self, normalizer, small_spec):
        net = ValueNetwork(ValueNetwork.spec_for(0.5, small_spec), normalizer)
        np.testing.assert_allclose(forward(net, STATES), 1.0)

    def test_policy_starts_at_offset_consumption(self, normalizer, small_spec):
        net = PolicyNetwork(PolicyNetwork.spec_for(5, small_spec), normalizer, c_offset=0.05)
        raw_pi, raw_c = net.as_policy()(0.3, STATES[:, 1], STATES[:, 2])
        np.testing.assert_array_equal(raw_pi, 0.0)
        np.testing.assert_allclose(raw_c, 0.05 * STATES[:, 1])

    def test_seed_controls_hidden_layers(self, normalizer, small_spec):
        a = StateNetwork(small_spec, normalizer, seed=1)
        b = StateNetwork(small_spec, normalizer, seed=1)
        c = StateNetwork(small_spec, normalizer, seed=2)
        assert torch.equal(parameter_vector(a), parameter_vector(b))
        assert not torch.equal(parameter_vector(a), parameter_vector(c))

    def test_triple_members_get_distinct_seeds(self, normalizer, small_spec):
        triple = NetworkTriple.build(small_spec, normalizer, d=5, R=1.5, c_offset=0.05, seed=0)
        w_value = triple.value.body[0].weight
        w_costate = triple.costate.body[0].weight
        assert not torch.equal(w_value, w_costate)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            NetworkSpec(hidden_width=0)
        with pytest.raises(ValueError):
            NetworkSpec(input_dim=2)


class TestForward:
    """Tests for forward evaluation."""

    def test_identity_layer_returns_normalized_input(self, normalizer):
        net = linear_net(normalizer, np.eye(3))
        expected = normalizer(*tensors(STATES)).numpy()
        np.testing.assert_allclose(forward(net, STATES), expected)

    def test_matches_numpy_reference(self, normalizer):
        spec = NetworkSpec(output_dim=2, hidden_layers=2, hidden_width=4, activation=Activation.SOFTPLUS)
        net = StateNetwork(spec, normalizer, seed=5)
        rng = np.random.default_rng(0)
        with torch.no_grad():
            net.body[-1].weight.copy_(torch.as_tensor(rng.normal(size=(2, 4)), dtype=DTYPE))
        x = normalizer(*tensors(STATES)).numpy()
        linears = [m for m in net.body if isinstance(m, torch.nn.Linear)]
        for layer in linears[:-1]:
            x = np.logaddexp(0.0, x @ layer.weight.detach().numpy().T + layer.bias.detach().numpy())
        last = linears[-1]
        expected = x @ last.weight.detach().numpy().T + last.bias.detach().numpy()
        np.testing.assert_allclose(forward(net, STATES), expected, atol=1e-12)

    def test_single_state(self, normalizer, small_spec):
        net = ValueNetwork(ValueNetwork.spec_for(1.5, small_spec), normalizer)
        assert forward(net, STATES[0]).shape == (1,)

    def test_non_finite_parameters_raise(self, normalizer, small_spec):
        net = StateNetwork(small_spec, normalizer)
        with torch.no_grad():
            net.body[0].weight[0, 0] = float("nan")
        with pytest.raises(NonFiniteParameterError, match="body.0.weight"):
            forward(net, STATES)


class TestGradients:
    """Tests for parameter and input gradients."""

    def test_grad_params_of_linear_sum(self, normalizer):
        net = linear_net(normalizer, np.eye(3))
        t, W, Y = tensors(STATES)
        loss = net(t, W, Y).sum()
        g_weight, g_bias = grad_params(loss, net)
        np.testing.assert_allclose(g_bias.numpy(), [3.0, 3.0, 3.0])
        column_sums = normalizer(t, W, Y).sum(dim=0).numpy()
        np.testing.assert_allclose(g_weight.numpy(), np.tile(column_sums, (3, 1)))

    def test_grad_params_unused_network_is_zero(self, normalizer, small_spec):
        used = StateNetwork(small_spec, normalizer)
        unused = StateNetwork(small_spec, normalizer)
        loss = (used(*tensors(STATES)) ** 2).sum() / 2
        grads = grad_params(loss, unused)
        assert len(grads) == len(list(unused.parameters()))
        assert all(torch.count_nonzero(g) == 0 for g in grads)

    def test_grad_input_of_constant_network(self, normalizer, small_spec):
        net = ValueNetwork(ValueNetwork.spec_for(1.5, small_spec), normalizer)
        np.testing.assert_allclose(grad_input(net, STATES), 0.0, atol=1e-15)

    def test_grad_input_of_exponential_value(self, normalizer):
        a = 0.3
        net = linear_net(normalizer, [[0.0, a, 0.0]], transform=OutputTransform.NEGATIVE_EXPONENTIAL, cls=ValueNetwork)
        W = STATES[:, 1]
        h = a * (W - normalizer.W_min) / normalizer.w_scale
        grad = grad_input(net, STATES)
        np.testing.assert_allclose(grad[:, 0], -np.exp(h) * a / normalizer.w_scale)
        np.testing.assert_allclose(grad[:, 1], 0.0, atol=1e-15)

    def test_costate_jacobian_of_linear_map(self, normalizer):
        A = np.array([[0.1, 0.2, -0.3], [0.0, 0.5, 0.7]])
        net = linear_net(normalizer, A, cls=CostateNetwork)
        jac = costate_jacobian(net, *tensors(STATES)).numpy()
        expected = np.array([
            [A[0, 1] / normalizer.w_scale, A[0, 2] / normalizer.y_scale],
            [A[1, 1] / normalizer.w_scale, A[1, 2] / normalizer.y_scale],
        ])
        assert jac.shape == (3, 2, 2)
        np.testing.assert_allclose(jac, np.broadcast_to(expected, (3, 2, 2)))

    def test_value_hessian_of_exponential_value(self, normalizer):
        a, b = 0.3, -0.2
        net = linear_net(
            normalizer, [[0.0, a, b]], transform=OutputTransform.NEGATIVE_EXPONENTIAL, cls=ValueNetwork
        )
        t, W, Y = tensors(STATES)
        hess = value_hessian(net, t, W, Y).numpy()
        V = forward(net, STATES)
        da, db = a / normalizer.w_scale, b / normalizer.y_scale
        np.testing.assert_allclose(hess[:, 0, 0], V * da * da)
        np.testing.assert_allclose(hess[:, 0, 1], V * da * db)
        np.testing.assert_allclose(hess[:, 1, 0], hess[:, 0, 1])
        np.testing.assert_allclose(hess[:, 1, 1], V * db * db)


class TestAdam:
    """Tests for the Adam helpers."""

    def test_first_step_moves_by_learning_rate(self):
        x = torch.nn.Parameter(torch.tensor([1.0, -2.0], dtype=DTYPE))
        opt = make_adam([x], 0.01, AdamConfig())
        adam_step([x], [torch.tensor([2.0, -0.5], dtype=DTYPE)], opt)
        np.testing.assert_allclose(x.detach().numpy(), [0.99, -1.99], atol=1e-8)

    def test_zero_gradient_leaves_parameters(self):
        x = torch.nn.Parameter(torch.tensor([1.0], dtype=DTYPE))
        opt = make_adam([x], 0.01, AdamConfig())
        adam_step([x], [torch.zeros(1, dtype=DTYPE)], opt)
        assert float(x) == 1.0

    def test_minimizes_quadratic(self):
        x = torch.nn.Parameter(torch.tensor([1.0], dtype=DTYPE))
        opt = make_adam([x], 0.1, AdamConfig())
        for _ in range(200):
            adam_step([x], [x.detach().clone()], opt)
        assert abs(float(x)) < 0.1

    def test_rejects_mismatched_gradients(self):
        x = torch.nn.Parameter(torch.zeros(2, dtype=DTYPE))
        opt = make_adam([x], 0.01, AdamConfig())
        with pytest.raises(ValueError, match="shape"):
            adam_step([x], [torch.zeros(3, dtype=DTYPE)], opt)
        with pytest.raises(ValueError, match="gradients"):
            adam_step([x], [], opt)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AdamConfig(lr_value=0.0)
        with pytest.raises(ValueError):
            AdamConfig(beta2=1.0)
        assert AdamConfig().lr_for("policy") == 5e-4


class TestCheckpoint:
    """Tests for checkpoint save, load and compatibility checks."""

    def test_save_and_load_restores_outputs(self, tmp_path, normalizer, small_spec):
        triple = NetworkTriple.build(small_spec, normalizer, d=5, R=1.5, c_offset=0.05, seed=3)
        with torch.no_grad():
            triple.value.body[-1].bias.fill_(0.25)
        path = save_checkpoint(tmp_path / "ckpt" / "final.pt", triple, {"iteration": 7})

        loaded, meta = load_checkpoint(path)
        assert meta["iteration"] == 7
        assert meta["optimizer_states"] == {}
        assert loaded.policy.c_offset == 0.05
        for name, net in triple.nets().items():
            np.testing.assert_array_equal(forward(loaded.nets()[name], STATES), forward(net, STATES))

    def test_market_normalizer_round_trip(self, tmp_path, baseline_market, small_spec):
        normalizer = StateNormalizer.from_market(baseline_market)
        assert all(type(v) is float for v in normalizer.to_dict().values())
        triple = NetworkTriple.build(small_spec, normalizer, d=5, R=1.5, c_offset=0.125, seed=1)
        params = list(triple.value.parameters())
        triple.optimizers["value"] = make_adam(params, 1e-3, AdamConfig())
        adam_step(params, [torch.ones_like(p) for p in params], triple.optimizers["value"])

        loaded, meta = load_checkpoint(save_checkpoint(tmp_path / "final.pt", triple, {"seed": 0}))
        assert loaded.value.normalizer == normalizer
        assert set(meta["optimizer_states"]) == {"value"}
        np.testing.assert_array_equal(forward(loaded.value, STATES), forward(triple.value, STATES))

    def test_numpy_fields_become_floats(self):
        normalizer = StateNormalizer(T=np.float64(1.5), W_min=0.1, y_bar=np.float32(0.5), y_scale=np.float64(0.3))
        assert all(type(v) is float for v in normalizer.to_dict().values())

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "absent.pt")

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "broken.pt"
        path.write_text("not a checkpoint")
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(path)

    def test_incompatible_architecture(self, normalizer, small_spec):
        triple = NetworkTriple.build(small_spec, normalizer, d=5, R=1.5, c_offset=0.05)
        wider = NetworkTriple.build(NetworkSpec(hidden_layers=1, hidden_width=16), normalizer, d=5, R=1.5, c_offset=0.05)
        check_compatible(triple, describe(triple))
        with pytest.raises(CheckpointError, match="do not match"):
            check_compatible(triple, describe(wider))

    def test_parameter_count(self, normalizer, small_spec):
        net = ValueNetwork(ValueNetwork.spec_for(1.5, small_spec), normalizer)
        assert count_parameters(net) == 3 * 8 + 8 + 8 + 1
        assert parameter_vector(net).shape == (41,)
