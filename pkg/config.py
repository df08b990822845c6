"""
Configuration management for the neuro_rbm toolkit.

This module handles loading configuration settings from ``config.json``,
merging them over built-in defaults, and handing typed sections to the
modules that consume them.
"""
import copy
import json
from pathlib import Path
from typing import Any, Dict, Optional

from errors import InvalidParameterError
from logging_config import get_logger, set_console_level

logger = get_logger(__name__)

DEFAULT_CONFIG: Dict[str, Any] = {
    "logging": {
        "level": "INFO",
    },
    "rbm": {
        "enumeration_cap": 24,
    },
    "sampler": {
        "s": 50,
        "T_S": 8,
        "V_th": 79,
        "M": 9,
        "L": 49,
        "V_sat": None,
        "leak_prob_mode": "half",
        "mse_domain_factor": 6,
        "mse_reduction": "mean",
    },
    "training": {
        "learning_rate": 0.01,
        "epochs": 30,
        "batch_size": 100,
        "n_persistent_chains": 20,
        "weight_init_std": 0.01,
    },
    "ais": {
        "n_intermediate": 1000,
        "n_runs": 100,
    },
    "occlusion": {
        "fraction": 0.35,
        "geometry": "contiguous-block",
    },
    "compiler": {
        "T_A": 32,
        "C_minus": -32,
        "strategy": "s1_2",
        "central_weight": None,
        "s2": True,
        "s3": True,
        "chip_cores": 4096,
    },
    "experiments": {
        "out_dir": "runs",
        "seed": 0,
        "threads": 1,
        "n_samples": 50,
    },
    "figures": {
        "fig4_trials": 10000,
        "fig4_step": 5,
        "fig8_models": 100,
        "fig8_s_values": [1, 2, 5, 10, 15, 20, 30, 50, 75, 100],
        "fig9_models": 5,
        "fig9_runs": 5,
        "fig9_samples": 100000,
        "fig13_T_A": 4,
        "fig13_max_weight": 20,
        "table2_T_A": 32,
        "fig7_patch_sizes": [4, 8, 12, 16, 20, 28],
        "fig7_epochs": 30,
        "fig7_train_images": 5000,
        "fig7_test_images": 1000,
        "fig15_levels": [0.1, 0.25, 0.35, 0.5],
        "fig15_images": 200,
    },
}


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(config_path: Optional[str] = "config.json") -> Dict[str, Any]:
    """
    Load configuration from a JSON file, falling back to defaults if needed.

    Args
    ----
    config_path: Path to the JSON file; ``None`` returns the defaults

    Returns
    -------
    Configuration dict with every default section present

    Raises
    ------
    InvalidParameterError: the file exists but is not valid JSON
    """
    if config_path is None:
        return copy.deepcopy(DEFAULT_CONFIG)

    path = Path(config_path)
    if not path.exists():
        logger.warning(f"Config file {path} not found, using defaults")
        return copy.deepcopy(DEFAULT_CONFIG)

    try:
        with open(path, "r", encoding="utf-8") as f:
            user_config = json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidParameterError(f"Invalid JSON in config file {path}: {e}") from e

    if not isinstance(user_config, dict):
        raise InvalidParameterError(f"Config file {path} must contain a JSON object")

    config = _deep_merge(DEFAULT_CONFIG, user_config)
    set_console_level(config["logging"].get("level"))
    logger.debug(f"Loaded configuration from {path}")
    return config


def section(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    """Return one configuration section, defaulting to the built-in values."""
    if name not in DEFAULT_CONFIG:
        raise InvalidParameterError(f"Unknown configuration section: {name}")
    return dict(config.get(name) or DEFAULT_CONFIG[name])
