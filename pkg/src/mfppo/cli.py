"""Command-line experiment runner: ``run``, ``sweep`` and ``report``."""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import nn
from .baseline import iterate_fictitious_play
from .config import (
    dump_config,
    format_value,
    load_config,
    load_env,
    merge_overrides,
    parse_value,
    resolve,
)
from .core import NORM_TOL, exploitability
from .envs.grid import GridEnvSpec, make_model
from .exceptions import ConfigurationError, MfgError
from .trainer import TrainerConfig, init_state, run_iteration

log = logging.getLogger("mfppo")

CSV_COLUMNS = (
    "iteration",
    "env_steps",
    "exploitability",
    "mean_return",
    "actor_loss",
    "critic_loss",
)
SWEEP_KEYS = {
    "alpha": "algo.alpha",
    "eps_episode": "algo.eps_episode",
    "eps_iteration": "algo.eps_iteration",
    "seed": "train.seed",
}
SPARK = "▁▂▃▄▅▆▇█"


# --- running one experiment -------------------------------------------------


def build_env(config: dict):
    spec = load_env(config["env.name"])
    spec = replace(
        spec,
        reward_coeffs=(config["env.c_pos"], config["env.c_move"], config["env.c_pop"]),
        crowd_eps=config["env.crowd_eps"],
        gamma=config["train.gamma"],
    )
    return spec, make_model(spec, config["env.discount_mode"])


def trainer_config(config: dict) -> TrainerConfig:
    return TrainerConfig(
        iterations=config["train.iterations"],
        episodes=config["train.episodes"],
        epochs=config["train.epochs"],
        batch_size=config["train.batch_size"],
        minibatches=config["train.minibatches"],
        alpha=config["algo.alpha"],
        eps_episode=config["algo.eps_episode"],
        eps_iteration=config["algo.eps_iteration"],
        gamma=config["train.gamma"],
        lr=config["nn.lr"],
        hidden=config["nn.hidden"],
        adam_beta1=config["nn.adam_beta1"],
        adam_beta2=config["nn.adam_beta2"],
        adam_eps=config["nn.adam_eps"],
        normalize_advantages=config["train.normalize_advantages"],
        entropy_coef=config["train.entropy_coef"],
        max_grad_norm=config["train.max_grad_norm"],
        seed=config["train.seed"],
    )


def write_flow_grid(path, spec: GridEnvSpec, dist: np.ndarray) -> None:
    """One ``height x width`` block of population mass per time step; walls read 0."""
    sums = dist.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > NORM_TOL):
        raise MfgError(f"flow rows do not sum to 1 (worst {sums[np.argmax(np.abs(sums - 1))]!r})")
    rows, cols = np.nonzero(~spec.walls)
    blocks = []
    for mu in dist:
        grid = np.zeros((spec.height, spec.width))
        grid[rows, cols] = mu
        blocks.append("\n".join(" ".join(repr(float(x)) for x in row) for row in grid))
    Path(path).write_text("\n\n".join(blocks) + "\n")


def read_flow_grid(path) -> list:
    """Parse a grid dump back into a list of ``(height, width)`` arrays."""
    text = Path(path).read_text().strip()
    return [np.array([[float(x) for x in line.split()] for line in block.splitlines()])
            for block in text.split("\n\n")]


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def prepare_output(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigurationError(f"output directory {out} is not writable: {exc}") from None


def run_experiment(config: dict, out) -> list:
    """Execute one resolved configuration, writing every artifact into ``out``.

    Returns the CSV rows as dictionaries.
    """
    out = Path(out)
    prepare_output(out)
    (out / "config.resolved").write_text(dump_config(config))
    spec, model = build_env(config)
    iterations = config["train.iterations"]
    every = config["train.checkpoint_every"]
    rows = []

    def checkpoint(k):
        return k % every == 0 or k == iterations

    with open(out / "exploitability.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)

        def emit(row, flow_dist, k):
            rows.append(row)
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
            fh.flush()
            if checkpoint(k):
                write_flow_grid(out / f"flow_{k:04d}.grid", spec, flow_dist)

        if config["algo.name"] == "mfppo":
            tconfig = trainer_config(config)
            state = init_state(model, tconfig)
            for k in range(1, iterations + 1):
                rep = run_iteration(state, model, tconfig)
                row = dict(
                    iteration=k,
                    env_steps=rep.env_steps,
                    exploitability=rep.exploitability,
                    mean_return=rep.mean_return,
                    actor_loss=rep.actor_loss,
                    critic_loss=rep.critic_loss,
                )
                emit(row, rep.flow.dist, k)
                if checkpoint(k):
                    nn.save_params(out / f"actor_{k:04d}.ckpt", state.actor)
                    nn.save_params(out / f"critic_{k:04d}.ckpt", state.critic)
                log.info("iteration %d exploitability %.4f", k, rep.exploitability)
        else:
            averaging = "uniform" if config["algo.name"] == "fp" else "full-replacement"
            for k, (policy, _) in enumerate(iterate_fictitious_play(model, iterations, averaging), 1):
                rep = exploitability(model, policy)
                row = dict(
                    iteration=k,
                    env_steps=0,
                    exploitability=rep.value,
                    mean_return=rep.policy_return,
                    actor_loss=float("nan"),
                    critic_loss=float("nan"),
                )
                emit(row, rep.flow.dist, k)
                if checkpoint(k):
                    np.save(out / f"policy_{k:04d}.npy", policy.probs)
                log.info("iteration %d exploitability %.4f", k, rep.value)
    return rows


# --- sweeps and reports -----------------------------------------------------


def parse_grid(specs) -> dict:
    grid = {}
    for item in specs:
        key, sep, values = item.partition("=")
        key = key.strip()
        if not sep or not values.strip():
            raise ConfigurationError(f"bad grid entry {item!r}; expected name=v1,v2,...")
        full = SWEEP_KEYS.get(key, key)
        if full not in SWEEP_KEYS.values():
            raise ConfigurationError(
                f"cannot sweep {key!r}; choose from {', '.join(SWEEP_KEYS)}"
            )
        if full in grid:
            raise ConfigurationError(f"{key} given twice in the grid")
        grid[full] = [parse_value(full, v) for v in values.split(",") if v.strip()]
    if not grid or any(not v for v in grid.values()):
        raise ConfigurationError("sweep grid is empty")
    return grid


def _short(key):
    return next((k for k, v in SWEEP_KEYS.items() if v == key), key)


def grid_points(base: dict, grid: dict):
    keys = list(grid)
    for values in itertools.product(*(grid[k] for k in keys)):
        point = dict(zip(keys, values))
        name = "__".join(f"{_short(k)}={format_value(v)}" for k, v in point.items())
        yield name, point, resolve({**base, **point})


def _run_point(args):
    config, out = args
    rows = run_experiment(config, out)
    values = [r["exploitability"] for r in rows]
    return values[-1], min(values)


def run_sweep(base: dict, grid: dict, out, jobs: int = 1) -> Path:
    out = Path(out)
    prepare_output(out)
    clash = sorted(set(base) & set(grid))
    if clash:
        raise ConfigurationError(f"keys {clash} are both fixed and swept")
    points = list(grid_points(base, grid))
    tasks = [(config, out / name) for name, _, config in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, tasks))
    else:
        results = [_run_point(t) for t in tasks]
    keys = list(grid)
    with open(out / "sweep_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run", *(_short(k) for k in keys), "final_exploitability", "best_exploitability"])
        for (name, point, _), (final, best) in zip(points, results):
            writer.writerow([name, *(format_value(point[k]) for k in keys), _fmt(final), _fmt(best)])
    return out / "sweep_summary.csv"


def sparkline(values, width=40) -> str:
    values = np.asarray(values, dtype=float)
    if len(values) > width:
        idx = np.linspace(0, len(values) - 1, width).round().astype(int)
        values = values[idx]
    lo, hi = values.min(), values.max()
    if hi == lo:
        return SPARK[0] * len(values)
    levels = ((values - lo) / (hi - lo) * (len(SPARK) - 1)).round().astype(int)
    return "".join(SPARK[i] for i in levels)


def load_run(path: Path):
    config = load_config(path / "config.resolved")
    with open(path / "exploitability.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "exploitability" not in rows[0]:
        raise ValueError("exploitability.csv has no data")
    return config, np.array([float(r["exploitability"]) for r in rows])


def expand_result_dirs(paths) -> list:
    """Result directories themselves, or the run subdirectories of a sweep directory."""
    out = []
    for p in map(Path, paths):
        if p.is_dir() and not (p / "config.resolved").exists():
            subs = sorted(d for d in p.iterdir() if (d / "config.resolved").exists())
            out.extend(subs or [p])
        else:
            out.append(p)
    return out


def build_report(paths) -> tuple:
    """Markdown table of final exploitability per configuration, seeds aggregated.

    Returns ``(markdown, skipped)``; ``skipped`` lists unreadable directories.
    """
    groups = {}
    skipped = []
    for path in expand_result_dirs(paths):
        try:
            config, curve = load_run(path)
        except (OSError, ValueError, ConfigurationError, KeyError) as exc:
            log.warning("skipping %s: %s", path, exc)
            skipped.append(path)
            continue
        key = tuple(sorted((k, format_value(v)) for k, v in config.items() if k != "train.seed"))
        groups.setdefault(key, []).append(curve)
    if not groups:
        return None, skipped

    keys = [dict(k) for k in groups]
    shared = set.intersection(*(set(cfg) for cfg in keys))
    varying = sorted(k for k in shared if len({cfg[k] for cfg in keys}) > 1)
    shown = ["env.name", "algo.name"] + [k for k in varying if k not in ("env.name", "algo.name")]
    lines = [
        "| " + " | ".join(shown) + " | seeds | final exploitability (mean ± std) | best | curve |",
        "|" + "---|" * (len(shown) + 4),
    ]
    for cfg, curves in zip(keys, groups.values()):
        finals = np.array([c[-1] for c in curves])
        best = min(c.min() for c in curves)
        length = min(len(c) for c in curves)
        mean_curve = np.mean([c[:length] for c in curves], axis=0)
        cells = [cfg.get(k, "") for k in shown]
        lines.append(
            "| " + " | ".join(cells)
            + f" | {len(curves)} | {finals.mean():.4g} ± {finals.std():.4g} | {best:.4g} | "
            + f"`{sparkline(mean_curve)}` |"
        )
    return "\n".join(lines) + "\n", skipped


# --- argument handling ------------------------------------------------------


def _set_pairs(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        layer = {key.strip(): parse_value(key.strip(), value)}
        out = merge_overrides(out, layer)
    return out


def overrides_from_args(args) -> dict:
    base = load_config(args.config) if args.config else {}
    flags = {}
    if args.env is not None:
        flags["env.name"] = args.env
    if args.algo is not None:
        flags["algo.name"] = args.algo
    if args.seed is not None:
        flags["train.seed"] = args.seed
    if args.iterations is not None:
        flags["train.iterations"] = args.iterations
    if args.episodes is not None:
        flags["train.episodes"] = args.episodes
    cli = merge_overrides(flags, _set_pairs(args.set))
    return {**base, **cli}


def _add_run_options(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--env", help="four_rooms, maze or a wall-map file")
    p.add_argument("--algo", choices=("mfppo", "fp", "bp"))
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="repeatable override")


def make_parser():
    parser = argparse.ArgumentParser(prog="mfppo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    _add_run_options(p)
    p.add_argument("--out", help="results directory")

    p = sub.add_parser("sweep", help="run a grid of experiments")
    _add_run_options(p)
    p.add_argument("--grid", action="append", default=[], metavar="NAME=V1,V2",
                   help="alpha, eps_episode, eps_iteration or seed values (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("report", help="summarize result directories as markdown")
    p.add_argument("dirs", nargs="*")
    p.add_argument("--output", help="write the markdown here instead of stdout")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        if args.command == "run":
            config = resolve(overrides_from_args(args))
            out = args.out or (
                f"results/{Path(config['env.name']).stem}_{config['algo.name']}"
                f"_seed{config['train.seed']}"
            )
            rows = run_experiment(config, out)
            print(f"{out}: final exploitability {rows[-1]['exploitability']:.6g}")
        elif args.command == "sweep":
            grid = parse_grid(args.grid)
            summary = run_sweep(overrides_from_args(args), grid, args.out, args.jobs)
            print(summary)
        else:
            if not args.dirs:
                raise ConfigurationError("report needs at least one results directory")
            text, skipped = build_report(args.dirs)
            if text is None:
                print("error: no readable results directories", file=sys.stderr)
                return 1
            if args.output:
                Path(args.output).write_text(text)
            else:
                sys.stdout.write(text)
    except MfgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
