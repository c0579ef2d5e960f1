#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Configuration settings for the OMC-RL experiment runner."""

import copy
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import coloredlogs
import yaml

# Application metadata
APP_NAME = "OMC-RL"
"""Name of the application."""

VERSION = "v1.1.0"
"""Current version of the application."""

PROG_NAME = "omcrl"
"""Command name shown in usage and error messages."""

# Configuration file
CONFIG_FILE = "config.yaml"
"""Default path of the YAML run configuration."""

# Default configuration
DEFAULT_CONFIG: Dict[str, Any] = {
    "seed": 0,
    "output_dir": "output",
    "logging": {
        "level": "INFO",
        "verbose": False,
    },
    "arena": {
        "preset": "empty",
        "width": 6.0,
        "height": 6.0,
        "obstacles": [],
        "random_obstacles": 4,
        "obstacle_radius": [0.3, 0.6],
        "goal_radius": 0.5,
        "agent_radius": 0.2,
        "min_start_goal_distance": 2.0,
        "dt": 0.1,
        "max_speed": [1.0, 1.0, 1.5],
        "max_steps": 5000,
        "progress_reward": "cumulative",
        "image_size": 64,
        "fov_deg": 82.6,
        "max_range": 8.0,
        "near": 0.5,
        "beacon_radius": 0.25,
    },
    "corpus": {
        "episodes": 500,
        "policy_mix": {"random": 0.5, "scripted": 0.5},
        "max_episode_frames": 64,
    },
    "upstream": {
        "mode": "masked",
        "frame_stack": 3,
        "seq_len": 8,
        "latent_dim": 64,
        "ffn_mult": 4,
        "transformer_blocks": 2,
        "mask_prob": 0.5,
        "temperature": 0.07,
        "momentum": 0.05,
        "crop_size": 56,
        "independent_crops": True,
        "batch_size": 8,
        "steps": 20000,
        "lr_encoder": 1e-3,
        "lr_projection": 1e-3,
        "lr_transformer": 2e-3,
        "warmup_steps": 6000,
        "use_projection": True,
        "similarity": "cosine",
        "dual_transformer": False,
        "curl_consecutive": False,
        "curl_frame_gap": 1,
        "eval_interval": 1000,
        "eval_batches": 4,
    },
    "policy": {
        "hidden": 256,
    },
    "rl": {
        "clip": 0.2,
        "gae_lambda": 0.95,
        "gamma": 0.99,
        "horizon": 128,
        "epochs": 3,
        "batch_size": 1024,
        "buffer_size": 10240,
        "lr": 3e-4,
        "value_coef": 1.0,
        "total_steps": 200000,
        "n_envs": 4,
        "normalize_advantages": True,
        "grad_chunk": 128,
    },
    "decay": {
        "kind": "linear",
        "alpha0": 0.95,
        "horizon": 10000,
        "exp_factor": 0.95,
        "exp_interval": 1000,
        "beta": 1.0,
    },
    "distill": {
        "use_oracle": True,
        "kl_estimator": "closed_form",
        "kl_samples": 16,
        "encoder_hash": None,
    },
    "eval": {
        "episodes": 200,
        "success_radius": 0.5,
        "workers": 1,
        "policy": "student",
        "shortest_paths": None,
    },
}
"""Default configuration settings (published values where given, desk-scale values otherwise)."""

# Valid options for configuration
VALID_LOGGING_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
"""List of valid logging levels: DEBUG (10), INFO (20), WARNING (30), ERROR (40), CRITICAL (50)."""

VALID_CHOICES = {
    "arena.preset": ("empty", "four_obstacles", "random", "custom"),
    "arena.progress_reward": ("cumulative", "incremental"),
    "upstream.mode": ("masked", "curl"),
    "upstream.similarity": ("cosine", "bilinear"),
    "decay.kind": ("linear", "exponential", "fixed"),
    "distill.kl_estimator": ("closed_form", "monte_carlo"),
    "eval.policy": ("student", "oracle", "scripted"),
}
"""Enumerated string settings."""

# (low, high, low_inclusive, high_inclusive); None means unbounded
VALID_RANGES = {
    "arena.width": (0.0, None, False, True),
    "arena.height": (0.0, None, False, True),
    "arena.random_obstacles": (0, None, True, True),
    "arena.goal_radius": (0.0, None, False, True),
    "arena.agent_radius": (0.0, None, False, True),
    "arena.min_start_goal_distance": (0.0, None, True, True),
    "arena.dt": (0.0, None, False, True),
    "arena.max_steps": (1, None, True, True),
    "arena.image_size": (7, None, True, True),
    "arena.fov_deg": (0.0, 180.0, False, False),
    "arena.max_range": (0.0, None, False, True),
    "arena.near": (0.0, None, False, True),
    "arena.beacon_radius": (0.0, None, False, True),
    "corpus.episodes": (1, None, True, True),
    "corpus.max_episode_frames": (2, None, True, True),
    "upstream.frame_stack": (1, None, True, True),
    "upstream.seq_len": (1, None, True, True),
    "upstream.latent_dim": (2, None, True, True),
    "upstream.ffn_mult": (1, None, True, True),
    "upstream.transformer_blocks": (1, None, True, True),
    "upstream.mask_prob": (0.0, 1.0, True, True),
    "upstream.temperature": (0.0, None, False, True),
    "upstream.momentum": (0.0, 1.0, True, True),
    "upstream.crop_size": (7, None, True, True),
    "upstream.batch_size": (1, None, True, True),
    "upstream.steps": (0, None, True, True),
    "upstream.lr_encoder": (0.0, None, True, True),
    "upstream.lr_projection": (0.0, None, True, True),
    "upstream.lr_transformer": (0.0, None, True, True),
    "upstream.warmup_steps": (1, None, True, True),
    "upstream.curl_frame_gap": (1, None, True, True),
    "upstream.eval_interval": (1, None, True, True),
    "upstream.eval_batches": (1, None, True, True),
    "policy.hidden": (1, None, True, True),
    "rl.clip": (0.0, None, False, True),
    "rl.gae_lambda": (0.0, 1.0, False, True),
    "rl.gamma": (0.0, 1.0, False, True),
    "rl.horizon": (1, None, True, True),
    "rl.epochs": (1, None, True, True),
    "rl.batch_size": (1, None, True, True),
    "rl.buffer_size": (1, None, True, True),
    "rl.lr": (0.0, None, True, True),
    "rl.value_coef": (0.0, None, True, True),
    "rl.total_steps": (1, None, True, True),
    "rl.n_envs": (1, None, True, True),
    "rl.grad_chunk": (1, None, True, True),
    "decay.alpha0": (0.0, 1.0, True, True),
    "decay.horizon": (1, None, True, True),
    "decay.exp_factor": (0.0, 1.0, False, True),
    "decay.exp_interval": (1, None, True, True),
    "decay.beta": (0.0, None, True, True),
    "distill.kl_samples": (1, None, True, True),
    "eval.episodes": (1, None, True, True),
    "eval.success_radius": (0.0, None, False, True),
    "eval.workers": (1, None, True, True),
}
"""Numeric ranges validated at load time."""

NULLABLE_KEYS = {"distill.encoder_hash", "eval.shortest_paths"}
"""Settings whose default is None and which accept a string."""

# Logging configuration
LOG_FOLDER = "logs"
"""Sub-directory of the run output directory where logs are stored."""

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

app_logger = logging.getLogger("app")
app_logger.addHandler(logging.NullHandler())
app_logger.setLevel(logging.INFO)

debug_logger = logging.getLogger("debug")
debug_logger.addHandler(logging.NullHandler())
debug_logger.setLevel(logging.DEBUG)  # Debug logger always logs at DEBUG level
debug_logger.propagate = False

_file_handlers: Dict[str, logging.Handler] = {}


def _config_error(message: str):
    from core.errors import ConfigError
    return ConfigError(message)


def configure_logging(output_dir: str, logging_level: str = "INFO", verbose: bool = False, console: bool = True) -> None:
    """Attach app.log/debug.log handlers under ``output_dir`` and set levels.

    Args:
        output_dir: Run output directory; logs go to ``<output_dir>/logs``.
        logging_level: The logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
        verbose: Whether verbose logging is enabled (writes to debug.log).
        console: Whether to mirror the app log on the terminal.
    """
    log_dir = Path(output_dir) / LOG_FOLDER
    log_dir.mkdir(parents=True, exist_ok=True)

    for key, logger in (("app", app_logger), ("debug", debug_logger)):
        old = _file_handlers.pop(key, None)
        if old is not None:
            logger.removeHandler(old)
            old.close()
        handler = logging.FileHandler(log_dir / f"{key}.log", encoding="utf-8")
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        _file_handlers[key] = handler
        logger.addHandler(handler)

    if console:
        coloredlogs.install(level=logging_level, logger=app_logger, fmt="%(asctime)s %(levelname)s %(message)s")
    update_logging(logging_level, verbose)


def update_logging(logging_level: str, verbose: bool) -> None:
    """Update logging configuration based on logging_level and verbose settings.

    Args:
        logging_level: The logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
        verbose: Whether verbose logging is enabled (writes to debug.log).
    """
    app_logger.setLevel(getattr(logging, logging_level))

    debug_handler = _file_handlers.get("debug")
    if debug_handler is None:
        return
    # Enable/disable debug logger based on verbose
    if verbose and debug_handler not in debug_logger.handlers:
        debug_logger.addHandler(debug_handler)
    elif not verbose and debug_handler in debug_logger.handlers:
        debug_logger.removeHandler(debug_handler)


def _merge(defaults: Dict[str, Any], overrides: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        dotted = f"{prefix}{key}"
        if key not in defaults:
            raise _config_error(f"unknown configuration key: {dotted}")
        if isinstance(defaults[key], dict) and key != "policy_mix":
            if not isinstance(value, dict):
                raise _config_error(f"configuration section {dotted} must be a mapping")
            merged[key] = _merge(defaults[key], value, prefix=f"{dotted}.")
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _check_type(dotted: str, value: Any, default: Any) -> None:
    if dotted in NULLABLE_KEYS:
        if value is not None and not isinstance(value, str):
            raise _config_error(f"{dotted} must be a string or null, got {value!r}")
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise _config_error(f"{dotted} has invalid type: {value!r}")


def _check_range(dotted: str, value: float) -> None:
    low, high, low_inclusive, high_inclusive = VALID_RANGES[dotted]
    if low is not None and (value < low or (value == low and not low_inclusive)):
        raise _config_error(f"{dotted}={value} is below its valid range")
    if high is not None and (value > high or (value == high and not high_inclusive)):
        raise _config_error(f"{dotted}={value} is above its valid range")


def validate_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """Validate the configuration and return a corrected version if necessary.

    Unknown keys, wrong types and out-of-range numbers raise ``ConfigError``; the
    soft logging settings fall back to their defaults with a warning.

    Args:
        config: The configuration dictionary to validate.

    Returns:
        A validated configuration dictionary.
    """
    validated_config = _merge(DEFAULT_CONFIG, config)

    # Validate logging_level
    logging_section = validated_config["logging"]
    if logging_section.get("level") not in VALID_LOGGING_LEVELS:
        app_logger.warning(
            f"Invalid logging.level: {logging_section.get('level')}. Using default: {DEFAULT_CONFIG['logging']['level']}"
        )
        logging_section["level"] = DEFAULT_CONFIG["logging"]["level"]

    # Validate verbose
    if not isinstance(logging_section.get("verbose"), bool):
        app_logger.warning(
            f"Invalid logging.verbose value: {logging_section.get('verbose')}. Using default: {DEFAULT_CONFIG['logging']['verbose']}"
        )
        logging_section["verbose"] = DEFAULT_CONFIG["logging"]["verbose"]

    _check_type("seed", validated_config["seed"], DEFAULT_CONFIG["seed"])
    if not validated_config["output_dir"] or not isinstance(validated_config["output_dir"], str):
        raise _config_error(f"invalid output_dir: {validated_config['output_dir']!r}")

    for section, defaults in DEFAULT_CONFIG.items():
        if not isinstance(defaults, dict) or section == "logging":
            continue
        for key, default in defaults.items():
            dotted = f"{section}.{key}"
            value = validated_config[section][key]
            _check_type(dotted, value, default)
            if dotted in VALID_RANGES:
                _check_range(dotted, value)
            if dotted in VALID_CHOICES and value not in VALID_CHOICES[dotted]:
                raise _config_error(f"{dotted}={value!r} is not one of {VALID_CHOICES[dotted]}")

    _validate_cross_field(validated_config)
    return validated_config


def _validate_cross_field(config: Dict[str, Any]) -> None:
    arena, upstream, rl = config["arena"], config["upstream"], config["rl"]
    if upstream["latent_dim"] % 2:
        raise _config_error(f"upstream.latent_dim must be even for positional encodings, got {upstream['latent_dim']}")
    if upstream["crop_size"] > arena["image_size"]:
        raise _config_error(f"upstream.crop_size {upstream['crop_size']} exceeds arena.image_size {arena['image_size']}")
    if len(arena["max_speed"]) != 3 or any(not isinstance(v, (int, float)) or v <= 0 for v in arena["max_speed"]):
        raise _config_error(f"arena.max_speed must be three positive numbers, got {arena['max_speed']}")
    low, high = (arena["obstacle_radius"] + [None, None])[:2]
    if len(arena["obstacle_radius"]) != 2 or not 0 < low <= high:
        raise _config_error(f"arena.obstacle_radius must be [min, max] with 0 < min <= max, got {arena['obstacle_radius']}")
    for obstacle in arena["obstacles"]:
        if not isinstance(obstacle, list) or len(obstacle) != 3 or obstacle[2] <= 0:
            raise _config_error(f"arena.obstacles entries must be [x, y, radius], got {obstacle!r}")
    if arena["preset"] == "custom" and not arena["obstacles"]:
        app_logger.warning("arena.preset is custom but arena.obstacles is empty; the arena will be empty")

    mix = config["corpus"]["policy_mix"]
    if not mix or set(mix) - {"random", "scripted"} or any(w < 0 for w in mix.values()):
        raise _config_error(f"corpus.policy_mix must weight 'random'/'scripted', got {mix}")
    if abs(sum(mix.values()) - 1.0) > 1e-9:
        raise _config_error(f"corpus.policy_mix weights must sum to 1, got {sum(mix.values())}")
    if config["corpus"]["max_episode_frames"] < upstream["seq_len"] + upstream["frame_stack"]:
        raise _config_error("corpus.max_episode_frames must be at least upstream.seq_len + upstream.frame_stack")
    if rl["batch_size"] > rl["buffer_size"]:
        raise _config_error(f"rl.batch_size {rl['batch_size']} exceeds rl.buffer_size {rl['buffer_size']}")


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """Load configuration from a YAML (or JSON) file, creating it with defaults if it doesn't exist.

    Args:
        path: Config file path (default: ``config.yaml``).

    Returns:
        A dictionary with validated configuration settings.
    """
    abs_config_path = os.path.abspath(path or CONFIG_FILE)
    app_logger.debug(f"Attempting to load config from: {abs_config_path}")
    if not os.path.exists(abs_config_path):
        app_logger.debug("Config file not found, creating with defaults")
        save_config(DEFAULT_CONFIG, abs_config_path)
        app_logger.info(f"Created default configuration file: {abs_config_path}")

    try:
        with open(abs_config_path, "r", encoding="utf-8") as file:
            raw = yaml.safe_load(file) or {}
    except yaml.YAMLError as e:
        raise _config_error(f"cannot parse {abs_config_path}: {e}") from e
    if not isinstance(raw, dict):
        raise _config_error(f"{abs_config_path} must contain a mapping at top level")
    debug_logger.debug(f"Loaded raw config: {raw}")
    config = validate_config(raw)
    update_logging(config["logging"]["level"], config["logging"]["verbose"])
    return config


def save_config(config: Dict[str, Any], path: str) -> None:
    """Save configuration as YAML.

    Args:
        config: The configuration to write.
        path: Destination file.
    """
    abs_path = os.path.abspath(path)
    app_logger.debug(f"Saving config to: {abs_path}")
    Path(abs_path).parent.mkdir(parents=True, exist_ok=True)
    with open(abs_path, "w", encoding="utf-8") as file:
        yaml.safe_dump(config, file, sort_keys=True, default_flow_style=False)
    debug_logger.debug(f"Successfully saved config to: {abs_path}")


def apply_overrides(
        config: Dict[str, Any],
        seed: Optional[int] = None,
        mask_prob: Optional[float] = None,
        decay: Optional[str] = None,
        no_oracle: bool = False,
        no_projection: bool = False,
        curl_mode: bool = False,
        out: Optional[str] = None,
) -> Dict[str, Any]:
    """Apply command-line flags on top of a loaded configuration and re-validate.

    Args:
        config: A validated configuration.
        seed: ``--seed``.
        mask_prob: ``--mask-prob``.
        decay: ``--decay`` (``linear``, ``exp`` or ``fixed``).
        no_oracle: ``--no-oracle``.
        no_projection: ``--no-projection``.
        curl_mode: ``--curl-mode``.
        out: ``--out``.

    Returns:
        A new validated configuration.
    """
    updated = copy.deepcopy(config)
    if seed is not None:
        updated["seed"] = seed
    if mask_prob is not None:
        updated["upstream"]["mask_prob"] = mask_prob
    if decay is not None:
        updated["decay"]["kind"] = {"exp": "exponential"}.get(decay, decay)
    if no_oracle:
        updated["distill"]["use_oracle"] = False
    if no_projection:
        updated["upstream"]["use_projection"] = False
    if curl_mode:
        updated["upstream"]["mode"] = "curl"
    if out is not None:
        updated["output_dir"] = out
    return validate_config(updated)


def model_config_hash(config: Dict[str, Any]) -> str:
    """SHA-256 over the settings that determine parameter shapes."""
    arena, upstream = config["arena"], config["upstream"]
    shaping = {
        "image_size": arena["image_size"],
        "frame_stack": upstream["frame_stack"],
        "latent_dim": upstream["latent_dim"],
        "crop_size": upstream["crop_size"],
        "transformer_blocks": upstream["transformer_blocks"],
        "ffn_mult": upstream["ffn_mult"],
        "use_projection": upstream["use_projection"],
        "similarity": upstream["similarity"],
        "hidden": config["policy"]["hidden"],
    }
    return hashlib.sha256(json.dumps(shaping, sort_keys=True).encode("utf-8")).hexdigest()
