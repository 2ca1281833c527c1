"""
Network checkpoints: specs, normalizer, parameters and Adam state.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import torch

from src.models.networks import (
    CostateNetwork,
    NetworkSpec,
    NetworkTriple,
    PolicyNetwork,
    StateNormalizer,
    ValueNetwork,
    describe,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


def save_checkpoint(path: Path, triple: NetworkTriple, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write networks, optimizer states and metadata with torch.save."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "specs": describe(triple),
        "normalizer": triple.value.normalizer.to_dict(),
        "c_offset": triple.policy.c_offset,
        "state_dicts": {name: net.state_dict() for name, net in triple.nets().items()},
        "optimizers": {name: opt.state_dict() for name, opt in triple.optimizers.items()},
        "metadata": metadata or {},
    }
    torch.save(payload, path)
    logger.info(f"Checkpoint saved to {path}")
    return path


def load_checkpoint(path: Path) -> Tuple[NetworkTriple, Dict[str, Any]]:
    """
    Rebuild a network triple from a checkpoint.

    Optimizer states are returned in the metadata under "optimizer_states" so
    the trainer can restore them after creating its optimizers.

    Raises:
        CheckpointError: if the file is missing or malformed
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {payload.get('format_version')}, expected {FORMAT_VERSION}"
        )

    specs = {name: NetworkSpec(**spec) for name, spec in payload["specs"].items()}
    normalizer = StateNormalizer(**payload["normalizer"])
    triple = NetworkTriple(
        value=ValueNetwork(specs["value"], normalizer),
        costate=CostateNetwork(specs["costate"], normalizer),
        policy=PolicyNetwork(specs["policy"], normalizer, payload["c_offset"]),
    )
    for name, net in triple.nets().items():
        net.load_state_dict(payload["state_dicts"][name])

    metadata = dict(payload.get("metadata", {}))
    metadata["optimizer_states"] = payload.get("optimizers", {})
    return triple, metadata


def check_compatible(triple: NetworkTriple, expected: Dict[str, Dict[str, Any]]) -> None:
    """
    Raise CheckpointError unless the triple's architecture matches the expected specs.
    """
    found = describe(triple)
    if found != expected:
        raise CheckpointError(
            "checkpoint networks do not match the configuration\n"
            f"  checkpoint: {found}\n"
            f"  expected:   {expected}"
        )
