#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Offline frame corpus: collection from simulator rollouts, storage, sampling and corruption."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import app_logger, debug_logger
from core.errors import ConfigError, IntegrityError, PrerequisiteError
from core.navsim import ArenaSettings, NavEnv, random_action, scripted_action

INDEX_FILE = "index.json"
CORPUS_VERSION = 1

KIND_KEPT = 0
KIND_ZEROED = 1
KIND_SWAPPED = 2
KIND_NAMES = {KIND_KEPT: "kept", KIND_ZEROED: "zeroed", KIND_SWAPPED: "swapped"}
ZERO_PROB = 0.8
SWAP_PROB = 0.1


@dataclass
class Episode:
    """Chronological RGB frames of one rollout (uint8, N×3×H×W) and the policy that generated it."""
    frames: np.ndarray
    policy: str
    seed: int

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class MaskedSequence:
    """T frame stacks with their mask, corrupted copy and per-position corruption record."""
    originals: np.ndarray
    mask: np.ndarray
    corrupted: np.ndarray
    kinds: np.ndarray
    swap_sources: np.ndarray
    source_index: np.ndarray

    def kind_labels(self) -> List[str]:
        labels = []
        for i, kind in enumerate(self.kinds):
            label = KIND_NAMES[int(kind)]
            labels.append(f"{label}({int(self.swap_sources[i])})" if kind == KIND_SWAPPED else label)
        return labels


class SequenceCorpus:
    """Immutable list of episodes addressed by global frame-stack index."""

    def __init__(self, episodes: Sequence[Episode], frame_stack: int) -> None:
        self.episodes = list(episodes)
        self.frame_stack = frame_stack
        # a stack at time t needs frames t-L+1 .. t of the same episode
        counts = [max(0, len(e) - frame_stack + 1) for e in self.episodes]
        self._offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def num_stacks(self) -> int:
        return int(self._offsets[-1])

    @property
    def image_size(self) -> int:
        return int(self.episodes[0].frames.shape[-1])

    def locate(self, index: int) -> Tuple[int, int]:
        """Global stack index → (episode, time of the newest frame)."""
        episode = int(np.searchsorted(self._offsets, index, side="right") - 1)
        return episode, int(index - self._offsets[episode] + self.frame_stack - 1)

    def global_index(self, episode: int, t: int) -> int:
        return int(self._offsets[episode] + t - (self.frame_stack - 1))

    def stack(self, episode: int, t: int) -> np.ndarray:
        """(3·L)×H×W float stack in [0, 1] ending at frame ``t``."""
        frames = self.episodes[episode].frames[t - self.frame_stack + 1:t + 1]
        return frames.reshape(-1, *frames.shape[2:]).astype(np.float64) / 255.0

    def stack_at(self, index: int) -> np.ndarray:
        return self.stack(*self.locate(index))

    def sample_sequence(self, length: int, rng: np.random.Generator, gap: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """``length`` consecutive stacks (``gap`` frames apart) from one random episode.

        Returns:
            The T×C×H×W stacks and their global indices.
        """
        span = (length - 1) * gap + 1
        eligible = [i for i, e in enumerate(self.episodes) if len(e) - self.frame_stack + 1 >= span]
        if not eligible:
            raise ConfigError(f"no corpus episode is long enough for {length} stacks with gap {gap}")
        episode = eligible[int(rng.integers(len(eligible)))]
        first = int(rng.integers(self.frame_stack - 1, len(self.episodes[episode]) - span + 1))
        times = first + gap * np.arange(length)
        stacks = np.stack([self.stack(episode, int(t)) for t in times])
        return stacks, np.array([self.global_index(episode, int(t)) for t in times])

    def sample_stacks(self, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """``count`` independently drawn stacks from anywhere in the corpus."""
        indices = rng.integers(self.num_stacks, size=count)
        return np.stack([self.stack_at(int(i)) for i in indices]), indices

    def policy_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for episode in self.episodes:
            counts[episode.policy] = counts.get(episode.policy, 0) + 1
        return counts

    # ------------------------------------------------------------------ persistence

    def save(self, directory, meta: Optional[Dict] = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, episode in enumerate(self.episodes):
            name = f"episode_{i:05d}.npy"
            np.save(directory / name, episode.frames, allow_pickle=False)
            entries.append({"id": i, "file": name, "frames": len(episode), "policy": episode.policy, "seed": episode.seed})
        index = {
            "version": CORPUS_VERSION,
            "frame_stack": self.frame_stack,
            "image_size": self.image_size,
            "episodes": entries,
            "meta": meta or {},
        }
        with open(directory / INDEX_FILE, "w", encoding="utf-8") as handle:
            json.dump(index, handle, indent=2, sort_keys=True)
        app_logger.info(f"Saved corpus of {len(self)} episodes ({self.num_stacks} stacks) to {directory}")
        return directory

    @classmethod
    def load(cls, directory, frame_stack: Optional[int] = None) -> "SequenceCorpus":
        directory = Path(directory)
        index_path = directory / INDEX_FILE
        if not index_path.exists():
            raise PrerequisiteError(f"corpus index not found at {index_path}", "collect")
        with open(index_path, "r", encoding="utf-8") as handle:
            index = json.load(handle)
        if index.get("version") != CORPUS_VERSION:
            raise IntegrityError(f"corpus index version {index.get('version')} is not supported")
        if frame_stack is not None and frame_stack != index["frame_stack"]:
            raise ConfigError(f"corpus was collected with frame_stack={index['frame_stack']}, config asks {frame_stack}")
        episodes = []
        for entry in index["episodes"]:
            frames = np.load(directory / entry["file"], mmap_mode="r", allow_pickle=False)
            if frames.shape[0] != entry["frames"]:
                raise IntegrityError(f"{entry['file']}: {frames.shape[0]} frames on disk, index says {entry['frames']}")
            episodes.append(Episode(frames, entry["policy"], entry["seed"]))
        debug_logger.debug(f"Loaded corpus index with {len(episodes)} episodes from {directory}")
        return cls(episodes, index["frame_stack"])


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def collect_corpus(
        settings: ArenaSettings,
        policy_mix: Dict[str, float],
        episodes: int,
        seed: int,
        frame_stack: int,
        seq_len: int,
        max_frames: int = 64,
        on_progress: Optional[Callable[[int, int], None]] = None,
) -> SequenceCorpus:
    """Roll out random and scripted policies and keep episodes of at least T+L frames.

    Args:
        settings: Arena settings.
        policy_mix: Probability of each generating policy (``random``/``scripted``).
        episodes: Number of episodes to keep.
        seed: Run seed; episode ``k`` uses reset seed ``seed + k``.
        frame_stack: Frames per stack (L).
        seq_len: Stacks per training sequence (T).
        max_frames: Recording cap per episode.
        on_progress: Called with (kept, requested) after every kept episode.

    Returns:
        The collected corpus.
    """
    rng = np.random.default_rng(seed)
    env = NavEnv(settings, frame_stack, seed)
    names = sorted(policy_mix)
    weights = np.array([policy_mix[n] for n in names], dtype=np.float64)
    minimum = seq_len + frame_stack
    kept: List[Episode] = []
    discarded = 0
    attempt = 0
    with tqdm(total=episodes, desc="collect", unit="ep", leave=False) as bar:
        while len(kept) < episodes:
            if attempt >= 20 * episodes:
                raise ConfigError(f"only {len(kept)} of {episodes} episodes reached {minimum} frames; "
                                  f"raise corpus.max_episode_frames or arena.max_steps")
            policy = names[int(rng.choice(len(names), p=weights))]
            episode_seed = seed + attempt
            attempt += 1
            env.reset(seed=episode_seed)
            frames = [to_uint8(env.latest_rgb())]
            while not env.done and len(frames) < max_frames:
                if policy == "scripted":
                    action = scripted_action(env.state, env.arena, settings)
                else:
                    action = random_action(env.rng, settings)
                env.step(action)
                frames.append(to_uint8(env.latest_rgb()))
            if len(frames) < minimum:
                discarded += 1
                app_logger.warning(f"Discarding {policy} episode (seed {episode_seed}): {len(frames)} frames < {minimum}")
                continue
            kept.append(Episode(np.stack(frames), policy, episode_seed))
            bar.update(1)
            if on_progress:
                on_progress(len(kept), episodes)
    debug_logger.debug(f"Corpus collection kept {len(kept)} episodes, discarded {discarded}")
    return SequenceCorpus(kept, frame_stack)


# --------------------------------------------------------------------------- masking

def sample_mask(length: int, mask_prob: float, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Bernoulli(``mask_prob``) mask of ``length`` entries (1 = masked)."""
    return (rng.random(length) < mask_prob).astype(np.int64)


def sample_corruption_kinds(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-position kind: masked positions are zeroed/swapped/kept with probability 0.8/0.1/0.1."""
    draws = rng.random(mask.shape)
    kinds = np.where(draws < ZERO_PROB, KIND_ZEROED, np.where(draws < ZERO_PROB + SWAP_PROB, KIND_SWAPPED, KIND_KEPT))
    return np.where(mask.astype(bool), kinds, KIND_KEPT)


def _substitute_index(corpus: SequenceCorpus, original: np.ndarray, source: int,
                      rng: np.random.Generator) -> Optional[int]:
    """Random stack index other than the query's own; None when every stack equals the original."""
    if source >= 0:
        j = int(rng.integers(corpus.num_stacks - 1))
        return j + int(j >= source)
    # unknown origin: the own stack is recognised by content
    for _ in range(32):
        j = int(rng.integers(corpus.num_stacks))
        if not np.array_equal(corpus.stack_at(j), original):
            return j
    others = [j for j in range(corpus.num_stacks) if not np.array_equal(corpus.stack_at(j), original)]
    return int(rng.choice(others)) if others else None


def corrupt(originals: np.ndarray, mask: np.ndarray, corpus: SequenceCorpus, rng: np.random.Generator,
            source_index: Optional[np.ndarray] = None) -> MaskedSequence:
    """Apply the masked-position corruption to one sequence of stacks.

    Args:
        originals: T×C×H×W clean stacks.
        mask: T-entry 0/1 mask.
        corpus: Source of substitute stacks.
        rng: Random stream.
        source_index: Global corpus index of each original (excluded as its own substitute).

    Returns:
        The masked sequence; unmasked positions are copies of the originals.
    """
    length = originals.shape[0]
    source_index = np.full(length, -1) if source_index is None else np.asarray(source_index)
    kinds = sample_corruption_kinds(mask, rng)
    if np.any(kinds == KIND_SWAPPED) and corpus.num_stacks < 2:
        app_logger.warning("Corpus has fewer than 2 stacks; swapped positions fall back to zeroing")
        kinds = np.where(kinds == KIND_SWAPPED, KIND_ZEROED, kinds)

    corrupted = originals.copy()
    swap_sources = np.full(length, -1, dtype=np.int64)
    for i in range(length):
        if kinds[i] == KIND_ZEROED:
            corrupted[i] = 0.0
        elif kinds[i] == KIND_SWAPPED:
            j = _substitute_index(corpus, originals[i], int(source_index[i]), rng)
            if j is None:
                kinds[i] = KIND_ZEROED
                corrupted[i] = 0.0
                continue
            swap_sources[i] = j
            corrupted[i] = corpus.stack_at(j)
    return MaskedSequence(originals, mask.copy(), corrupted, kinds, swap_sources, source_index)
