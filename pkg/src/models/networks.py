"""
Value, costate and policy networks over the state (t, W, Y).

All networks run in float64 and normalize their inputs inside forward, so
autograd input-gradients come out in the units of the raw state.
"""
import logging
from dataclasses import dataclass, asdict, field
from enum import Enum
from typing import Any, Dict, List, Tuple

import numpy as np
import torch
import torch.nn as nn

from src.market.params import MarketParams

logger = logging.getLogger(__name__)

DTYPE = torch.float64


class Activation(str, Enum):
    SOFTPLUS = "softplus"
    RELU = "relu"
    IDENTITY = "identity"


class OutputTransform(str, Enum):
    IDENTITY = "identity"
    NEGATIVE_EXPONENTIAL = "negative-exponential"
    POSITIVE_EXPONENTIAL = "positive-exponential"
    RAW_CONTROL = "raw-control"


class NonFiniteParameterError(RuntimeError):
    """Raised when a network holds NaN or infinite parameters."""


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of one state network."""
    output_dim: int = 1
    input_dim: int = 3
    hidden_layers: int = 3
    hidden_width: int = 128
    activation: Activation = Activation.SOFTPLUS
    output_transform: OutputTransform = OutputTransform.IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "output_transform", OutputTransform(self.output_transform))
        if self.input_dim != 3:
            raise ValueError("state networks take (t, W, Y) inputs")
        if self.hidden_layers < 0 or self.hidden_width < 1 or self.output_dim < 1:
            raise ValueError(f"invalid network shape: {self}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["activation"] = self.activation.value
        data["output_transform"] = self.output_transform.value
        return data


@dataclass(frozen=True)
class StateNormalizer:
    """
    Fixed affine input map: t/T, (W - W_min)/(1 - W_min), (Y - y_bar)/y_scale.
    """
    T: float
    W_min: float
    y_bar: float
    y_scale: float

    def __post_init__(self):
        # Checkpoint payloads hold plain Python floats only
        for name in ("T", "W_min", "y_bar", "y_scale"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def from_market(cls, p: MarketParams) -> "StateNormalizer":
        return cls(T=p.T, W_min=p.W_min, y_bar=p.y_bar, y_scale=float(3.0 * p.y_stationary_sd))

    @property
    def w_scale(self) -> float:
        return 1.0 - self.W_min

    def __call__(self, t: torch.Tensor, W: torch.Tensor, Y: torch.Tensor) -> torch.Tensor:
        return torch.stack(
            [t / self.T, (W - self.W_min) / self.w_scale, (Y - self.y_bar) / self.y_scale], dim=-1
        )

    def to_dict(self) -> Dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}


def _activation(kind: Activation) -> nn.Module:
    if kind == Activation.SOFTPLUS:
        return nn.Softplus()
    if kind == Activation.RELU:
        return nn.ReLU()
    return nn.Identity()


class StateNetwork(nn.Module):
    """
    Feedforward network on normalized (t, W, Y).

    Hidden layers use uniform fan-in initialization; the final layer starts
    at zero so the initial head output is identically 0.
    """

    def __init__(self, spec: NetworkSpec, normalizer: StateNormalizer, seed: int = 0):
        super().__init__()
        self.spec = spec
        self.normalizer = normalizer

        widths = [spec.input_dim] + [spec.hidden_width] * spec.hidden_layers + [spec.output_dim]
        layers: List[nn.Module] = []
        for i in range(len(widths) - 1):
            layers.append(nn.Linear(widths[i], widths[i + 1], dtype=DTYPE))
            if i < len(widths) - 2:
                layers.append(_activation(spec.activation))
        self.body = nn.Sequential(*layers)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        generator = torch.Generator().manual_seed(int(seed))
        linears = [m for m in self.body if isinstance(m, nn.Linear)]
        with torch.no_grad():
            for layer in linears[:-1]:
                bound = 1.0 / np.sqrt(layer.in_features)
                layer.weight.copy_((torch.rand(layer.weight.shape, generator=generator, dtype=DTYPE) * 2 - 1) * bound)
                layer.bias.copy_((torch.rand(layer.bias.shape, generator=generator, dtype=DTYPE) * 2 - 1) * bound)
            linears[-1].weight.zero_()
            linears[-1].bias.zero_()

    def head(self, t: torch.Tensor, W: torch.Tensor, Y: torch.Tensor) -> torch.Tensor:
        """Untransformed output h, shape (M, output_dim)."""
        return self.body(self.normalizer(t, W, Y))

    def forward(self, t: torch.Tensor, W: torch.Tensor, Y: torch.Tensor) -> torch.Tensor:
        h = self.head(t, W, Y)
        transform = self.spec.output_transform
        if transform == OutputTransform.NEGATIVE_EXPONENTIAL:
            return -torch.exp(h[..., 0])
        if transform == OutputTransform.POSITIVE_EXPONENTIAL:
            return torch.exp(h[..., 0])
        return h

    def check_finite(self) -> None:
        for name, param in self.named_parameters():
            if not torch.isfinite(param).all():
                raise NonFiniteParameterError(f"non-finite values in parameter {name}")


class ValueNetwork(StateNetwork):
    """Scalar value V_theta; the sign transform enforces (1 - R) V > 0."""

    @staticmethod
    def spec_for(R: float, base: NetworkSpec) -> NetworkSpec:
        transform = (
            OutputTransform.NEGATIVE_EXPONENTIAL if R > 1 else OutputTransform.POSITIVE_EXPONENTIAL
        )
        return NetworkSpec(
            output_dim=1,
            hidden_layers=base.hidden_layers,
            hidden_width=base.hidden_width,
            activation=base.activation,
            output_transform=transform,
        )


class CostateNetwork(StateNetwork):
    """Costate lambda_eta = (p_W, p_Y)."""

    @staticmethod
    def spec_for(base: NetworkSpec) -> NetworkSpec:
        return NetworkSpec(
            output_dim=2,
            hidden_layers=base.hidden_layers,
            hidden_width=base.hidden_width,
            activation=base.activation,
            output_transform=OutputTransform.IDENTITY,
        )


class PolicyNetwork(StateNetwork):
    """
    Raw controls: pi_raw = h[:d] and c_raw = W (c_offset + h[d]).

    With the zero-initialized head the initial raw policy is pi = 0 and
    c = c_offset W.
    """

    def __init__(self, spec: NetworkSpec, normalizer: StateNormalizer, c_offset: float, seed: int = 0):
        super().__init__(spec, normalizer, seed)
        self.c_offset = float(c_offset)

    @staticmethod
    def spec_for(d: int, base: NetworkSpec) -> NetworkSpec:
        return NetworkSpec(
            output_dim=d + 1,
            hidden_layers=base.hidden_layers,
            hidden_width=base.hidden_width,
            activation=base.activation,
            output_transform=OutputTransform.RAW_CONTROL,
        )

    @property
    def d(self) -> int:
        return self.spec.output_dim - 1

    def raw_controls(
        self, t: torch.Tensor, W: torch.Tensor, Y: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        h = self.head(t, W, Y)
        return h[..., : self.d], W * (self.c_offset + h[..., self.d])

    def as_policy(self):
        """Numpy policy callable for the simulator."""

        def policy(t: float, W: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            W_t = torch.as_tensor(W, dtype=DTYPE)
            with torch.no_grad():
                raw_pi, raw_c = self.raw_controls(
                    torch.full_like(W_t, float(t)), W_t, torch.as_tensor(Y, dtype=DTYPE)
                )
            return raw_pi.numpy(), raw_c.numpy()

        return policy


@dataclass
class NetworkTriple:
    """Value, costate and policy networks with their optimizers."""
    value: ValueNetwork
    costate: CostateNetwork
    policy: PolicyNetwork
    optimizers: Dict[str, torch.optim.Optimizer] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        base_spec: NetworkSpec,
        normalizer: StateNormalizer,
        d: int,
        R: float,
        c_offset: float,
        seed: int = 0,
    ) -> "NetworkTriple":
        """Fresh networks; each net gets its own sub-seed."""
        return cls(
            value=ValueNetwork(ValueNetwork.spec_for(R, base_spec), normalizer, seed=3 * seed),
            costate=CostateNetwork(CostateNetwork.spec_for(base_spec), normalizer, seed=3 * seed + 1),
            policy=PolicyNetwork(PolicyNetwork.spec_for(d, base_spec), normalizer, c_offset, seed=3 * seed + 2),
        )

    def nets(self) -> Dict[str, StateNetwork]:
        return {"value": self.value, "costate": self.costate, "policy": self.policy}

    def load_state_from(self, other: "NetworkTriple") -> None:
        """Copy parameters from another triple with identical architecture."""
        for name, net in self.nets().items():
            net.load_state_dict(other.nets()[name].state_dict())

    def check_finite(self) -> None:
        for net in self.nets().values():
            net.check_finite()


def _columns(states) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    s = torch.as_tensor(np.asarray(states, dtype=float), dtype=DTYPE)
    s = s.reshape(-1, 3)
    return s[:, 0], s[:, 1], s[:, 2]


def forward(net: StateNetwork, states) -> np.ndarray:
    """
    Evaluate a network on raw states.

    Args:
        net: Any state network
        states: Array of shape (M, 3) or (3,) with columns (t, W, Y)

    Returns:
        Network output as a numpy array

    Raises:
        NonFiniteParameterError: if the network parameters are not finite
    """
    net.check_finite()
    t, W, Y = _columns(states)
    with torch.no_grad():
        out = net(t, W, Y)
    return out.numpy()


def grad_params(loss: torch.Tensor, net: nn.Module, create_graph: bool = False) -> List[torch.Tensor]:
    """Reverse-mode gradient of a scalar loss with respect to every parameter of net."""
    params = list(net.parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True, create_graph=create_graph)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def state_gradient(
    net: StateNetwork,
    t: torch.Tensor,
    W: torch.Tensor,
    Y: torch.Tensor,
    create_graph: bool = False,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Scalar network output and its gradient in raw (t, W, Y).

    Returns:
        Tuple of (output (M,), gradient (M, 3))
    """
    inputs = torch.stack([t, W, Y], dim=-1).detach().requires_grad_(True)
    out = net(inputs[:, 0], inputs[:, 1], inputs[:, 2])
    (grad,) = torch.autograd.grad(out.sum(), inputs, create_graph=create_graph)
    return out, grad


def grad_input(value_net: StateNetwork, states) -> np.ndarray:
    """
    (dV/dW, dV/dY) of the value network at raw states.

    Returns:
        Array of shape (M, 2)
    """
    t, W, Y = _columns(states)
    _, grad = state_gradient(value_net, t, W, Y)
    return grad[:, 1:].detach().numpy()


def costate_jacobian(
    costate_net: StateNetwork, t: torch.Tensor, W: torch.Tensor, Y: torch.Tensor
) -> torch.Tensor:
    """
    Jacobian d lambda_i / d x_j for x = (W, Y), detached.

    Returns:
        Tensor of shape (M, 2, 2)
    """
    inputs = torch.stack([t, W, Y], dim=-1).detach().requires_grad_(True)
    out = costate_net(inputs[:, 0], inputs[:, 1], inputs[:, 2])
    rows = []
    for i in range(2):
        (g,) = torch.autograd.grad(out[:, i].sum(), inputs, retain_graph=i == 0)
        rows.append(g[:, 1:])
    return torch.stack(rows, dim=1).detach()


def parameter_vector(net: nn.Module) -> torch.Tensor:
    """All parameters flattened into one detached vector."""
    return torch.cat([p.detach().reshape(-1) for p in net.parameters()])


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def describe(triple: NetworkTriple) -> Dict[str, Any]:
    """Architecture summary for manifests and checkpoints."""
    return {name: net.spec.to_dict() for name, net in triple.nets().items()}


def value_hessian(
    value_net: StateNetwork, t: torch.Tensor, W: torch.Tensor, Y: torch.Tensor
) -> torch.Tensor:
    """
    Hessian of V_theta in (W, Y), detached.

    Returns:
        Tensor of shape (M, 2, 2)
    """
    inputs = torch.stack([t, W, Y], dim=-1).detach().requires_grad_(True)
    out = value_net(inputs[:, 0], inputs[:, 1], inputs[:, 2])
    (grad,) = torch.autograd.grad(out.sum(), inputs, create_graph=True)
    rows = []
    for i in (1, 2):
        (g,) = torch.autograd.grad(grad[:, i].sum(), inputs, retain_graph=i == 1)
        rows.append(g[:, 1:])
    return torch.stack(rows, dim=1).detach()
