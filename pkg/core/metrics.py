#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Navigation metrics (NE, OS, SR, SPL, CR, TTS) and deterministic evaluation runs."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import app_logger, debug_logger
from core.csvlog import CsvLog, read_csv
from core.errors import ConfigError, ContractError
from core.navsim import CAUSE_COLLISION, CAUSE_GOAL, ArenaSettings, NavEnv

EVAL_SEED_OFFSET = 1_000_003
NO_SUCCESS = "--"

Policy = Callable[[NavEnv], np.ndarray]


@dataclass
class EpisodeRecord:
    """Outcome and trajectory of one evaluation episode."""
    episode: int
    seed: int
    positions: np.ndarray
    headings: np.ndarray
    commands: np.ndarray
    rewards: np.ndarray
    goal: np.ndarray
    cause: str
    optimal_length: float

    @property
    def steps(self) -> int:
        return int(self.commands.shape[0])

    @property
    def success(self) -> bool:
        return self.cause == CAUSE_GOAL

    @property
    def collided(self) -> bool:
        return self.cause == CAUSE_COLLISION

    @property
    def path_length(self) -> float:
        if self.positions.shape[0] < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.positions, axis=0), axis=1)))

    @property
    def terminal_distance(self) -> float:
        return float(np.linalg.norm(self.positions[-1] - self.goal))

    @property
    def min_distance(self) -> float:
        return float(np.min(np.linalg.norm(self.positions - self.goal, axis=1)))

    @property
    def episode_return(self) -> float:
        return float(np.sum(self.rewards))


@dataclass
class MetricsReport:
    ne: float
    os: float
    sr: float
    spl: float
    cr: float
    tts: Optional[float]
    episodes: int

    def tts_text(self) -> str:
        return NO_SUCCESS if self.tts is None else f"{self.tts:.1f}"

    def row(self, policy: str) -> Dict[str, object]:
        return {"policy": policy, "episodes": self.episodes, "ne": self.ne, "os": self.os, "sr": self.sr,
                "spl": self.spl, "cr": self.cr, "tts": self.tts_text()}

    def table(self, policy: str) -> str:
        header = f"{'Policy':<10} {'NE':>7} {'OS(%)':>7} {'SR(%)':>7} {'SPL':>6} {'CR(%)':>7} {'TTS':>7}"
        line = (f"{policy:<10} {self.ne:>7.3f} {self.os:>7.1f} {self.sr:>7.1f} {self.spl:>6.3f} "
                f"{self.cr:>7.1f} {self.tts_text():>7}")
        return f"{header}\n{line}"


def _require(records: Sequence[EpisodeRecord]) -> None:
    if not records:
        raise ContractError("metrics need at least one episode record")


def spl(records: Sequence[EpisodeRecord]) -> float:
    """Success weighted by path length: mean of ``1[success]·ℓ/max(d, ℓ)``."""
    _require(records)
    total = 0.0
    for r in records:
        if r.success:
            total += r.optimal_length / max(r.path_length, r.optimal_length)
    return total / len(records)


def oracle_success(records: Sequence[EpisodeRecord], epsilon: float = 0.5) -> float:
    """Percentage of episodes that succeeded or came within ``epsilon`` of the goal at any point."""
    _require(records)
    return 100.0 * sum(r.success or r.min_distance <= epsilon for r in records) / len(records)


def navigation_error(records: Sequence[EpisodeRecord]) -> float:
    _require(records)
    return float(np.mean([r.terminal_distance for r in records]))


def success_rate(records: Sequence[EpisodeRecord]) -> float:
    _require(records)
    return 100.0 * sum(r.success for r in records) / len(records)


def collision_rate(records: Sequence[EpisodeRecord]) -> float:
    _require(records)
    return 100.0 * sum(r.collided for r in records) / len(records)


def tts(records: Sequence[EpisodeRecord]) -> Optional[float]:
    """Mean step count of successful episodes; None when nothing succeeded."""
    _require(records)
    steps = [r.steps for r in records if r.success]
    return float(np.mean(steps)) if steps else None


def summarize(records: Sequence[EpisodeRecord], epsilon: float = 0.5) -> MetricsReport:
    return MetricsReport(
        ne=navigation_error(records),
        os=oracle_success(records, epsilon),
        sr=success_rate(records),
        spl=spl(records),
        cr=collision_rate(records),
        tts=tts(records),
        episodes=len(records),
    )


def run_episode(settings: ArenaSettings, frame_stack: int, policy: Policy, episode: int, seed: int,
                optimal_length: Optional[float] = None) -> EpisodeRecord:
    """Run one episode to termination with a deterministic policy."""
    env = NavEnv(settings, frame_stack, seed)
    state, _, _ = env.reset(seed=seed)
    positions, headings, commands, rewards = [state.position.copy()], [state.heading], [], []
    cause = "none"
    while not env.done:
        state, outcome = env.step(policy(env))
        positions.append(state.position.copy())
        headings.append(state.heading)
        commands.append(np.array([state.velocity[0], state.velocity[1], state.yaw_rate]))
        rewards.append(outcome.reward)
        cause = outcome.cause
    straight = float(np.linalg.norm(env.arena.goal - positions[0]))
    return EpisodeRecord(
        episode=episode,
        seed=seed,
        positions=np.asarray(positions),
        headings=np.asarray(headings),
        commands=np.asarray(commands).reshape(-1, 3),
        rewards=np.asarray(rewards),
        goal=env.arena.goal.copy(),
        cause=cause,
        optimal_length=straight if optimal_length is None else optimal_length,
    )


def load_shortest_paths(path) -> Dict[int, float]:
    """Externally computed optimal path lengths from a CSV with ``episode,length`` columns."""
    if not Path(path).exists():
        raise ConfigError(f"eval.shortest_paths file not found: {path}")
    _, _, rows = read_csv(path)
    lengths = {int(row["episode"]): float(row["length"]) for row in rows}
    if any(v <= 0 for v in lengths.values()):
        raise ConfigError("shortest path lengths must be positive")
    return lengths


def evaluate(policy: Policy, settings: ArenaSettings, frame_stack: int, episodes: int, seed: int,
             success_radius: float = 0.5, workers: int = 1, shortest_paths: Optional[Dict[int, float]] = None,
             on_progress: Optional[Callable[[int, int], None]] = None) -> Tuple[MetricsReport, List[EpisodeRecord]]:
    """Evaluate a deterministic policy on ``episodes`` seeded episodes.

    Episode ``k`` is reset with seed ``seed + EVAL_SEED_OFFSET + k`` so that training-time
    and stand-alone evaluations see the same arenas.

    Args:
        policy: Maps an environment to the command to execute.
        settings: Arena settings.
        frame_stack: Frames per observation stack.
        episodes: Number of episodes.
        seed: Run seed.
        success_radius: OS threshold ε.
        workers: Parallel episode workers (aggregation is order-independent).
        shortest_paths: Optional per-episode optimal lengths replacing the straight line.
        on_progress: Called with (done, episodes).

    Returns:
        The report and the per-episode records in episode order.
    """
    shortest_paths = shortest_paths or {}
    base = seed + EVAL_SEED_OFFSET

    def one(k: int) -> EpisodeRecord:
        return run_episode(settings, frame_stack, policy, k, base + k, shortest_paths.get(k))

    records: List[EpisodeRecord] = []
    with tqdm(total=episodes, desc="eval", unit="ep", leave=False) as bar:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for record in pool.map(one, range(episodes)):
                    records.append(record)
                    bar.update(1)
                    if on_progress:
                        on_progress(len(records), episodes)
        else:
            for k in range(episodes):
                records.append(one(k))
                bar.update(1)
                if on_progress:
                    on_progress(len(records), episodes)
    records.sort(key=lambda r: r.episode)
    report = summarize(records, success_radius)
    debug_logger.debug(f"Evaluation over {episodes} episodes: {report}")
    app_logger.info(f"Evaluation: SR={report.sr:.1f}% SPL={report.spl:.3f} CR={report.cr:.1f}% TTS={report.tts_text()}")
    return report, records


def write_evaluation(directory, name: str, policy_name: str, report: MetricsReport,
                     records: Sequence[EpisodeRecord]) -> Dict[str, Path]:
    """Write ``<name>_episodes.csv``, ``<name>_report.csv`` and ``<name>_trajectories.csv``."""
    directory = Path(directory)
    paths = {
        "episodes": directory / f"{name}_episodes.csv",
        "report": directory / f"{name}_report.csv",
        "trajectories": directory / f"{name}_trajectories.csv",
    }
    with CsvLog(paths["episodes"], "episodes") as log:
        for r in records:
            log.write({"episode": r.episode, "seed": r.seed, "cause": r.cause, "steps": r.steps,
                       "return": r.episode_return, "path_length": r.path_length,
                       "optimal_length": r.optimal_length, "terminal_distance": r.terminal_distance,
                       "min_distance": r.min_distance})
    with CsvLog(paths["report"], "report") as log:
        log.write(report.row(policy_name))
    with CsvLog(paths["trajectories"], "trajectories") as log:
        for r in records:
            for t in range(r.steps):
                log.write({"episode": r.episode, "step": t + 1, "x": r.positions[t + 1, 0], "y": r.positions[t + 1, 1],
                           "heading": r.headings[t + 1], "v_x": r.commands[t, 0], "v_y": r.commands[t, 1],
                           "omega_z": r.commands[t, 2], "reward": r.rewards[t],
                           "cause": r.cause if t == r.steps - 1 else "none"})
    return paths


def run_evaluation(config: Dict, policy: Policy, directory, name: str, policy_name: str,
                   on_progress: Optional[Callable[[int, int], None]] = None) -> MetricsReport:
    """Evaluate ``policy`` with the ``eval`` section of ``config`` and write the CSV triple."""
    section = config["eval"]
    shortest = load_shortest_paths(section["shortest_paths"]) if section["shortest_paths"] else None
    report, records = evaluate(
        policy,
        ArenaSettings.from_config(config["arena"]),
        config["upstream"]["frame_stack"],
        section["episodes"],
        config["seed"],
        success_radius=section["success_radius"],
        workers=section["workers"],
        shortest_paths=shortest,
        on_progress=on_progress,
    )
    Path(directory).mkdir(parents=True, exist_ok=True)
    write_evaluation(directory, name, policy_name, report, records)
    return report
