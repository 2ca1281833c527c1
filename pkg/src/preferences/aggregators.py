"""
Torch aggregators used by the trainer and the policy evaluator.
"""
import math
from abc import ABC, abstractmethod
from enum import Enum

import torch

from src.preferences.utility import EZParams, _ez_marginal, _ez_value, _power_utility


class AggregatorKind(str, Enum):
    """Recursion used for the value process."""
    EPSTEIN_ZIN = "epstein-zin"
    DISCOUNTED_CRRA = "discounted-crra"


class Aggregator(ABC):
    """Running and terminal terms of a backward value recursion."""

    def __init__(self, ez: EZParams):
        self.ez = ez

    @property
    def R(self) -> float:
        return self.ez.R

    @abstractmethod
    def flow(self, t: torch.Tensor, c: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        """Running term f(t, c, v)."""

    @abstractmethod
    def flow_dc(self, t: torch.Tensor, c: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        """Derivative of the running term in c."""

    @abstractmethod
    def terminal(self, T: float, W: torch.Tensor) -> torch.Tensor:
        """Terminal value at horizon T."""

    def admissible(self, c: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        """Boolean mask of points inside the aggregator domain."""
        return c > 0


class EpsteinZinAggregator(Aggregator):
    """Undiscounted Epstein-Zin recursion with bequest kappa U(W)."""

    def flow(self, t, c, v):
        return _ez_value(c, v, self.ez)

    def flow_dc(self, t, c, v):
        return _ez_marginal(c, v, self.ez)

    def terminal(self, T, W):
        return self.ez.kappa_bequest * _power_utility(W, self.ez.R)

    def admissible(self, c, v):
        return (c > 0) & ((1.0 - self.ez.R) * v > 0)


class DiscountedCRRAAggregator(Aggregator):
    """Time-additive CRRA objective with explicit e^(-delta t) discounting."""

    def flow(self, t, c, v):
        return torch.exp(-self.ez.delta * t) * _power_utility(c, self.ez.R)

    def flow_dc(self, t, c, v):
        return torch.exp(-self.ez.delta * t) * c ** (-self.ez.R)

    def terminal(self, T, W):
        return math.exp(-self.ez.delta * T) * self.ez.kappa_bequest * _power_utility(W, self.ez.R)


def make_aggregator(kind: AggregatorKind, ez: EZParams) -> Aggregator:
    """Build the aggregator for a configured recursion kind."""
    kind = AggregatorKind(kind)
    if kind == AggregatorKind.EPSTEIN_ZIN:
        return EpsteinZinAggregator(ez)
    return DiscountedCRRAAggregator(ez)
