"""Built-in grid environments and the wall-map text format."""

from .grid import (
    ACTION_NAMES,
    DOWN,
    LEFT,
    MOVES,
    RIGHT,
    STAY,
    UP,
    GridEnvSpec,
    load_builtin,
    build_four_rooms,
    build_maze,
    encode_observation,
    load_gridspec,
    make_model,
    observation_table,
    reachable_from,
    reward,
    serialize_gridspec,
)

__all__ = [
    "ACTION_NAMES",
    "DOWN",
    "LEFT",
    "MOVES",
    "RIGHT",
    "STAY",
    "UP",
    "GridEnvSpec",
    "load_builtin",
    "build_four_rooms",
    "build_maze",
    "encode_observation",
    "load_gridspec",
    "make_model",
    "observation_table",
    "reachable_from",
    "reward",
    "serialize_gridspec",
]
