"""Flat ``section.key = value`` experiment configuration."""

from __future__ import annotations

from pathlib import Path

from .envs.grid import GridEnvSpec, load_builtin, load_gridspec
from .exceptions import ConfigurationError, GridParseError

ENVS = ("four_rooms", "maze")
ALGOS = ("mfppo", "fp", "bp")

# Per-environment training defaults.
ENV_DEFAULTS = {
    "four_rooms": {
        "algo.alpha": 0.5,
        "algo.eps_iteration": 0.01,
        "nn.hidden": (32, 32),
        "nn.lr": 1e-3,
        "train.episodes": 20,
        "train.batch_size": 200,
        "train.minibatches": 5,
    },
    "maze": {
        "algo.alpha": 0.6,
        "algo.eps_iteration": 0.05,
        "nn.hidden": (64, 64),
        "nn.lr": 6e-4,
        "train.episodes": 200,
        "train.batch_size": 500,
        "train.minibatches": 4,
    },
}

COMMON_DEFAULTS = {
    "env.name": "four_rooms",
    "env.discount_mode": "discounted",
    "env.c_pos": None,
    "env.c_move": None,
    "env.c_pop": None,
    "env.crowd_eps": None,
    "algo.name": "mfppo",
    "train.iterations": None,
    "train.gamma": None,
    "train.seed": 0,
    "train.checkpoint_every": 10,
}

MFPPO_DEFAULTS = {
    "algo.alpha": 0.5,
    "algo.eps_episode": 0.2,
    "algo.eps_iteration": 0.01,
    "nn.hidden": (32, 32),
    "nn.lr": 1e-3,
    "nn.adam_beta1": 0.9,
    "nn.adam_beta2": 0.999,
    "nn.adam_eps": 1e-8,
    "train.episodes": 20,
    "train.epochs": 5,
    "train.batch_size": 200,
    "train.minibatches": 5,
    "train.normalize_advantages": False,
    "train.entropy_coef": 0.0,
    "train.max_grad_norm": 0.0,
}

VALID_KEYS = tuple(sorted({**COMMON_DEFAULTS, **MFPPO_DEFAULTS}))

INT_KEYS = {
    "train.iterations",
    "train.seed",
    "train.checkpoint_every",
    "train.episodes",
    "train.epochs",
    "train.batch_size",
    "train.minibatches",
}
BOOL_KEYS = {"train.normalize_advantages"}
STR_KEYS = {"env.name", "env.discount_mode", "algo.name"}
TUPLE_KEYS = {"nn.hidden"}


def parse_value(key: str, raw):
    """Coerce a raw string (or already typed value) to the type ``key`` expects."""
    if key not in VALID_KEYS:
        raise ConfigurationError(
            f"unknown config key {key!r}; valid keys: {', '.join(VALID_KEYS)}"
        )
    if not isinstance(raw, str):
        return tuple(raw) if key in TUPLE_KEYS else raw
    raw = raw.strip()
    try:
        if key in STR_KEYS:
            return raw
        if key in TUPLE_KEYS:
            return tuple(int(v) for v in raw.replace(" ", "").strip("()").split(",") if v)
        if key in BOOL_KEYS:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if key in INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value {raw!r} for {key}") from None


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, source="<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split(";", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key in out:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(key, value)
    return out


def load_config(path) -> dict:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def dump_config(config: dict) -> str:
    return "".join(f"{key} = {format_value(config[key])}\n" for key in sorted(config))


def merge_overrides(*layers) -> dict:
    """Combine override dicts; the same key with two different values is an error."""
    merged = {}
    for layer in layers:
        for key, value in layer.items():
            if key in merged and merged[key] != value:
                raise ConfigurationError(
                    f"conflicting values for {key}: {format_value(merged[key])} "
                    f"vs {format_value(value)}"
                )
            merged[key] = value
    return merged


def load_env(name: str) -> GridEnvSpec:
    """Built-in environment by name, otherwise a wall-map file path."""
    if name in ENVS:
        return load_builtin(name)
    try:
        return load_gridspec(Path(name).read_text())
    except OSError as exc:
        raise ConfigurationError(
            f"env.name must be one of {ENVS} or a readable wall-map file, got {name!r}"
        ) from exc
    except GridParseError as exc:
        raise ConfigurationError(f"{name}: {exc}") from exc


def resolve(overrides: dict) -> dict:
    """Fill in every effective value for a run.

    ``env.name`` picks the defaults: the built-in names select their own
    hyperparameters, any other value is read as a wall-map path and uses the
    four-rooms hyperparameters. Reward coefficients and the discount default
    to the environment file's header. Keys that only apply to MF-PPO are
    rejected for the exact baselines.
    """
    overrides = {k: parse_value(k, v) for k, v in overrides.items()}
    env = overrides.get("env.name", COMMON_DEFAULTS["env.name"])
    algo = overrides.get("algo.name", COMMON_DEFAULTS["algo.name"])
    if algo not in ALGOS:
        raise ConfigurationError(f"algo.name must be one of {ALGOS}, got {algo!r}")
    spec = load_env(env)

    config = dict(COMMON_DEFAULTS)
    if algo == "mfppo":
        config.update(MFPPO_DEFAULTS)
        config.update(ENV_DEFAULTS.get(env, ENV_DEFAULTS["four_rooms"]))
    else:
        extra = sorted(k for k in overrides if k in MFPPO_DEFAULTS)
        if extra:
            raise ConfigurationError(f"keys {extra} only apply to algo.name = mfppo")
    c_pos, c_move, c_pop = spec.reward_coeffs
    config.update(
        {
            "env.c_pos": c_pos,
            "env.c_move": c_move,
            "env.c_pop": c_pop,
            "env.crowd_eps": spec.crowd_eps,
            "train.gamma": spec.gamma,
            "train.iterations": 100 if algo == "mfppo" else 200,
        }
    )
    config.update(overrides)
    if config["train.iterations"] < 1 or config["train.checkpoint_every"] < 1:
        raise ConfigurationError("train.iterations and train.checkpoint_every must be >= 1")
    if config["env.discount_mode"] not in ("discounted", "undiscounted"):
        raise ConfigurationError("env.discount_mode must be discounted or undiscounted")
    return config
