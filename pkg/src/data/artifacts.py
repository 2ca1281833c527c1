"""
Run artifacts: CSV and JSON files, checksums and per-type column schemas.
"""
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SCHEMA_DIR = "schemas"

# Column documentation per artifact type; "{i}" marks per-asset columns
ARTIFACT_SCHEMAS: Dict[str, Dict[str, str]] = {
    "training_log": {
        "iteration": "0-based iteration index",
        "L_val": "mean squared one-step value residual",
        "L_adj": "mean squared costate mismatch",
        "J_act": "actor objective (batch mean Hamiltonian)",
        "portfolio_binding_rate": "share of steps where the portfolio projection moved the raw weights",
        "consumption_binding_rate": "share of steps where the consumption clamp was active",
        "floor_hit_rate": "share of steps where the wealth floor was applied",
        "mean_relative_projection_distance": "mean ||pi - pi_raw|| / (||pi_raw|| + 1e-8)",
        "mean_applied_infeasibility": "mean distance of applied controls from the admissible set",
        "domain_exclusions": "points excluded from the value loss (aggregator domain)",
        "nonfinite_controls": "raw control entries replaced by 0",
    },
    "timing": {
        "iteration": "0-based iteration index",
        "wall_clock_s": "wall-clock seconds spent in the iteration",
    },
    "paths": {
        "path": "path index",
        "step": "time step index",
        "t": "time",
        "W": "wealth",
        "Y": "long-run-risk factor",
        "pi_{i}": "applied weight of asset i",
        "c": "applied consumption",
        "raw_pi_{i}": "raw policy weight of asset i",
        "raw_c": "raw policy consumption",
        "portfolio_active": "portfolio projection active",
        "consumption_active": "consumption clamp active",
        "floor_hit": "wealth floor applied after the step",
    },
    "surfaces": {
        "t": "evaluation time",
        "W": "wealth",
        "Y": "factor level",
        "asset": "asset number (1-based)",
        "pi_ez": "learned feasible weight",
        "pi_myopic": "myopic feasible weight",
        "pi_hedge": "pi_ez - pi_myopic",
        "dpi_dY": "central finite difference of pi_ez in Y",
    },
    "hedging_by_asset": {
        "asset": "asset number (1-based)",
        "mean_abs_hedge": "grid mean of |pi_hedge|",
        "rank": "1 for the largest mean |pi_hedge|",
    },
    "hedging_by_wealth": {
        "W": "wealth",
        "asset": "asset number (1-based)",
        "mean_abs_hedge": "mean |pi_hedge| over factor levels",
    },
    "characteristics": {
        "asset": "asset number (1-based)",
        "mu_bar": "unconditional expected return",
        "sigma": "volatility",
        "rho": "correlation with the factor shock",
        "beta_lrr": "long-run-risk beta",
        "sharpe": "Sharpe ratio at Y = y_bar",
        "mean_abs_hedge": "grid mean of |pi_hedge|",
        "rank": "hedging rank",
    },
    "regression": {
        "characteristic": "regressor",
        "slope": "OLS slope",
        "intercept": "OLS intercept",
        "bootstrap_se": "bootstrap standard error of the slope",
        "t_stat": "slope / bootstrap_se",
        "r_squared": "coefficient of determination",
        "n": "observations",
        "replications": "bootstrap replications",
    },
    "mean_wealth": {
        "policy": "policy name",
        "t": "time",
        "mean_W": "cross-path mean wealth",
        "near_floor_share": "share of paths within 1.25 W_min",
    },
    "terminal_wealth": {
        "policy": "policy name",
        "mean": "mean terminal wealth",
        "sd": "standard deviation",
        "skewness": "bias-corrected skewness",
        "excess_kurtosis": "bias-corrected excess kurtosis",
        "q05": "5% quantile",
        "q50": "median",
        "q95": "95% quantile",
        "n_paths": "paths",
    },
    "welfare": {
        "policy": "policy name",
        "seed": "training seed",
        "ez_value_at_start": "Epstein-Zin value at (0, W0, y_bar)",
        "ez_certainty_equivalent": "((1-R) V0)^(1/(1-R))",
        "crra_certainty_equivalent": "u^-1(J0 / A(T))",
    },
    "validation_grid": {
        "t": "time",
        "W": "wealth",
        "pi_learned": "learned risky share",
        "pi_merton": "Merton risky share",
        "c_ratio_learned": "learned consumption-wealth ratio",
        "c_ratio_merton": "Merton consumption-wealth ratio",
    },
    "hjb_residual": {
        "t": "time",
        "W": "wealth",
        "residual": "HJB generator applied to the learned value and policy",
    },
    "seed_summary": {
        "metric": "summary quantity",
        "mean": "mean across seeds",
        "sd": "standard deviation across seeds",
        "n": "seeds",
    },
    "ablation_summary": {
        "ablation": "training variant",
    },
}


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json_atomic(path: Path, data: Any) -> Path:
    """Write JSON through a temporary file and os.replace."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")
    os.replace(tmp, path)
    return path


def schema_for(kind: str, columns: List[str]) -> Dict[str, Any]:
    """Column documentation for the columns actually present in a frame."""
    docs = ARTIFACT_SCHEMAS.get(kind, {})
    described = []
    for column in columns:
        text = docs.get(column)
        if text is None:
            for pattern, pattern_text in docs.items():
                prefix = pattern.split("{i}")[0]
                if "{i}" in pattern and column.startswith(prefix) and column[len(prefix):].isdigit():
                    text = pattern_text.replace("asset i", f"asset {column[len(prefix):]}")
                    break
        described.append({"name": column, "description": text or ""})
    return {"artifact": kind, "columns": described}


class ArtifactWriter:
    """
    Writes the files of one run directory and keeps their inventory.

    Every CSV gets a schema file for its artifact type under schemas/.
    """

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.files: List[Path] = []

    def _register(self, path: Path) -> Path:
        if path not in self.files:
            self.files.append(path)
        return path

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def write_csv(self, name: str, frame: pd.DataFrame, kind: Optional[str] = None) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
        logger.debug(f"Wrote {path} ({len(frame)} rows)")
        self._register(path)
        if kind is not None:
            self.write_schema(kind, list(frame.columns))
        return path

    def write_schema(self, kind: str, columns: List[str]) -> Path:
        path = self.path(f"{SCHEMA_DIR}/{kind}.schema.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        write_json_atomic(path, schema_for(kind, columns))
        return self._register(path)

    def write_json(self, name: str, data: Any) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_json_atomic(path, data)
        return self._register(path)

    def write_text(self, name: str, text: str) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        return self._register(path)

    def register(self, path: Path) -> Path:
        """Add a file written elsewhere (e.g. a checkpoint) to the inventory."""
        return self._register(Path(path))

    def inventory(self) -> List[Dict[str, Any]]:
        """Relative path, size and sha256 of every registered file."""
        return [
            {
                "path": str(p.relative_to(self.run_dir)),
                "bytes": p.stat().st_size,
                "sha256": sha256_file(p),
            }
            for p in self.files
        ]


def verify_inventory(run_dir: Path, inventory: List[Dict[str, Any]]) -> List[str]:
    """Paths whose file is missing or whose checksum differs."""
    bad = []
    for entry in inventory:
        path = Path(run_dir) / entry["path"]
        if not path.exists() or sha256_file(path) != entry["sha256"]:
            bad.append(entry["path"])
    return bad
