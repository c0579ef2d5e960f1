#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""PPO machinery shared by the oracle and student trainers."""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from config import app_logger, debug_logger
from core import autodiff as ad
from core.autodiff import DiffTensor, no_grad
from core.errors import ContractError, NumericError, OmcrlError
from core.navsim import NavEnv
from core.nn import GaussianAction, ParamSet

Observation = Dict[str, np.ndarray]


class ActorCritic(Protocol):
    """What rollout collection and the PPO loss need from a policy."""
    params: ParamSet

    def observe(self, env: NavEnv) -> Observation:
        ...

    def forward(self, obs: Observation) -> Tuple[GaussianAction, DiffTensor]:
        ...


@dataclass(frozen=True)
class PpoHyper:
    clip: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    horizon: int = 128
    epochs: int = 3
    batch_size: int = 1024
    buffer_size: int = 10240
    value_coef: float = 1.0
    normalize_advantages: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.gae_lambda <= 1.0:
            raise ContractError(f"GAE lambda must lie in (0, 1], got {self.gae_lambda}")
        if not 0.0 < self.gamma <= 1.0:
            raise ContractError(f"discount must lie in (0, 1], got {self.gamma}")
        if self.clip <= 0.0:
            raise ContractError(f"clip range must be positive, got {self.clip}")

    @classmethod
    def from_config(cls, rl: Dict[str, Any]) -> "PpoHyper":
        return cls(**{name: rl[name] for name in cls.__dataclass_fields__})


@dataclass
class TrajectoryBatch:
    """Flat transition storage in collection order, split into per-environment segments."""
    observations: Dict[str, np.ndarray]
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    next_values: np.ndarray
    segment_ends: np.ndarray
    env_steps: np.ndarray
    alphas: np.ndarray
    teacher_mean: np.ndarray
    teacher_log_std: np.ndarray
    teacher_mask: np.ndarray
    privileged: Dict[str, np.ndarray] = field(default_factory=dict)
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None
    episode_returns: List[float] = field(default_factory=list)
    episode_causes: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.rewards.shape[0]

    def observation_slice(self, indices) -> Observation:
        return {key: values[indices] for key, values in self.observations.items()}


def stack_observations(records: Sequence[Observation]) -> Observation:
    return {key: np.stack([r[key] for r in records]) for key in records[0]}


def _single(obs: Observation) -> Observation:
    return {key: value[None] for key, value in obs.items()}


def collect_rollouts(
        envs: Sequence[NavEnv],
        policy: ActorCritic,
        steps: int,
        horizon: int,
        rng: np.random.Generator,
        teacher: Optional[ActorCritic] = None,
        alpha_at: Optional[Callable[[int], float]] = None,
        step_offset: int = 0,
        on_step: Optional[Callable[[int], None]] = None,
) -> TrajectoryBatch:
    """Collect exactly ``steps`` transitions, cycling through ``envs`` one segment at a time.

    Each segment runs up to ``horizon`` steps in one environment; episodes that end
    inside a segment are reset in place. The value of the state following the last
    transition of a segment is recorded as its bootstrap value.

    Args:
        envs: Environments (interleaved deterministically by index).
        policy: Behaviour policy.
        steps: Buffer size.
        horizon: Segment length.
        rng: Action-sampling stream.
        teacher: Privileged policy whose distribution is recorded when ``alpha_at`` is positive.
        alpha_at: Distillation weight as a function of the global environment step.
        step_offset: Global environment step of the first transition.
        on_step: Called with the number of transitions collected so far.

    Returns:
        The filled batch (advantages not yet computed).
    """
    records: List[Observation] = []
    privileged: List[Observation] = []
    actions, log_probs, rewards, values, dones = [], [], [], [], []
    next_values, segment_ends, env_steps, alphas = [], [], [], []
    teacher_mean, teacher_log_std, teacher_mask = [], [], []
    returns_so_far = [0.0] * len(envs)
    batch_returns: List[float] = []
    batch_causes: List[str] = []

    env_index = 0
    while len(rewards) < steps:
        slot = env_index
        env = envs[slot]
        env_index = (slot + 1) % len(envs)
        if env.done:
            env.reset()
            returns_so_far[slot] = 0.0
        segment = min(horizon, steps - len(rewards))
        for k in range(segment):
            global_step = step_offset + len(rewards)
            obs = policy.observe(env)
            with no_grad():
                dist, value = policy.forward(_single(obs))
            action = dist.sample(rng)[0]
            log_prob = float(dist.log_prob(action[None]).values[0])

            alpha = float(alpha_at(global_step)) if alpha_at is not None else 0.0
            if teacher is not None and alpha > 0.0:
                teacher_obs = teacher.observe(env)
                with no_grad():
                    teacher_dist, _ = teacher.forward(_single(teacher_obs))
                teacher_mean.append(teacher_dist.mean.values[0])
                teacher_log_std.append(teacher_dist.log_std.values.copy())
                teacher_mask.append(True)
                privileged.append(teacher_obs)
            else:
                teacher_mean.append(np.zeros(3))
                teacher_log_std.append(np.zeros(3))
                teacher_mask.append(False)
                if teacher is not None:
                    privileged.append(teacher.observe(env))

            try:
                _, outcome = env.step(action)
            except OmcrlError:
                app_logger.error(
                    f"Environment {slot} failed at episode step {env.state.steps}: "
                    f"position={env.state.position.tolist()}, heading={env.state.heading}, action={action.tolist()}",
                    exc_info=True,
                )
                raise

            records.append(obs)
            actions.append(action)
            log_probs.append(log_prob)
            rewards.append(outcome.reward)
            values.append(float(value.values[0]))
            dones.append(outcome.terminal)
            env_steps.append(global_step)
            alphas.append(alpha)
            next_values.append(0.0)
            segment_ends.append(False)
            returns_so_far[slot] += outcome.reward
            if outcome.terminal:
                batch_returns.append(returns_so_far[slot])
                batch_causes.append(outcome.cause)
                returns_so_far[slot] = 0.0
                if k < segment - 1:
                    env.reset()
            if on_step:
                on_step(len(rewards))

        segment_ends[-1] = True
        if not dones[-1]:
            with no_grad():
                _, bootstrap = policy.forward(_single(policy.observe(env)))
            next_values[-1] = float(bootstrap.values[0])

    values_arr = np.asarray(values)
    dones_arr = np.asarray(dones, dtype=bool)
    ends_arr = np.asarray(segment_ends, dtype=bool)
    next_arr = np.asarray(next_values)
    inner = ~ends_arr & ~dones_arr
    next_arr[:-1][inner[:-1]] = values_arr[1:][inner[:-1]]

    batch = TrajectoryBatch(
        observations=stack_observations(records),
        actions=np.asarray(actions),
        log_probs=np.asarray(log_probs),
        rewards=np.asarray(rewards),
        values=values_arr,
        dones=dones_arr,
        next_values=next_arr,
        segment_ends=ends_arr,
        env_steps=np.asarray(env_steps, dtype=np.int64),
        alphas=np.asarray(alphas),
        teacher_mean=np.asarray(teacher_mean),
        teacher_log_std=np.asarray(teacher_log_std),
        teacher_mask=np.asarray(teacher_mask, dtype=bool),
        privileged=stack_observations(privileged) if privileged else {},
        episode_returns=batch_returns,
        episode_causes=batch_causes,
    )
    debug_logger.debug(f"Collected {len(batch)} transitions, {len(batch_returns)} finished episodes")
    return batch


def compute_gae(batch: TrajectoryBatch, gamma: float, lam: float) -> None:
    """Fill ``advantages`` and ``returns`` segment by segment (the accumulator resets at segment ends)."""
    n = len(batch)
    advantages = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if batch.segment_ends[t]:
            running = 0.0
        not_done = 0.0 if batch.dones[t] else 1.0
        delta = batch.rewards[t] + gamma * batch.next_values[t] * not_done - batch.values[t]
        running = delta + gamma * lam * not_done * running
        advantages[t] = running
    batch.advantages = advantages
    batch.returns = advantages + batch.values


def advantage_normalize(advantages: np.ndarray) -> np.ndarray:
    """``(Â − mean) / (std + 1e-8)`` over the update batch."""
    advantages = np.asarray(advantages, dtype=np.float64)
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


def clipped_surrogate(ratio, advantages, clip: float) -> DiffTensor:
    """Per-sample ``min(r·Â, clip(r, 1−ε, 1+ε)·Â)``."""
    ratio = ratio if isinstance(ratio, DiffTensor) else DiffTensor(ratio)
    adv = DiffTensor(np.asarray(advantages, dtype=np.float64))
    return ad.minimum(ad.mul(ratio, adv), ad.mul(ad.clip(ratio, 1.0 - clip, 1.0 + clip), adv))


def ppo_loss(
        dist: GaussianAction,
        values: DiffTensor,
        actions: np.ndarray,
        old_log_probs: np.ndarray,
        advantages: np.ndarray,
        returns: np.ndarray,
        clip: float,
        value_coef: float = 1.0,
        weights: Optional[np.ndarray] = None,
        denominator: Optional[int] = None,
        step_index: Optional[np.ndarray] = None,
) -> Tuple[DiffTensor, Dict[str, float]]:
    """Clipped surrogate plus unclipped squared value error (no entropy bonus).

    Args:
        dist: Current policy distribution for the rows.
        values: Current value estimates for the rows.
        actions: Behaviour actions (pre-clamp).
        old_log_probs: Behaviour log-probabilities.
        advantages: Advantage estimates.
        returns: Value targets.
        clip: Clip range ε.
        value_coef: Weight of the value term.
        weights: Optional per-row weight applied to both terms.
        denominator: Divisor of the per-row sums (defaults to the row count); lets a
            minibatch be processed in chunks with accumulated gradients.
        step_index: Environment steps of the rows, named in the error for non-finite ratios.

    Returns:
        The loss and a dict with the surrogate and value-loss parts (as values).
    """
    count = actions.shape[0]
    denominator = denominator or count
    weights = np.ones(count) if weights is None else np.asarray(weights, dtype=np.float64)
    ratio = ad.exp(ad.sub(dist.log_prob(actions), DiffTensor(old_log_probs)))
    bad = ~np.isfinite(ratio.values)
    if np.any(bad):
        where = int(np.flatnonzero(bad)[0])
        label = int(step_index[where]) if step_index is not None else where
        raise NumericError(f"non-finite probability ratio at step {label}")

    clipped = clipped_surrogate(ratio, advantages, clip)
    surrogate = ad.mul(ad.sum(ad.mul(clipped, DiffTensor(weights))), -1.0 / denominator)
    error = ad.sub(values, DiffTensor(returns))
    squared = ad.mul(error, error)
    value_loss = ad.mul(ad.sum(ad.mul(squared, DiffTensor(weights))), 1.0 / denominator)
    loss = ad.add(surrogate, ad.mul(value_loss, value_coef))
    # unweighted parts, additive over chunks of one minibatch
    stats = {
        "surrogate": -float(np.sum(clipped.values)) / denominator,
        "value_loss": float(np.sum(squared.values)) / denominator,
    }
    stats["l_rl"] = stats["surrogate"] + value_coef * stats["value_loss"]
    return loss, stats


def minibatches(size: int, batch_size: int, epochs: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Shuffled minibatch indices: every transition appears exactly once per epoch."""
    for _ in range(epochs):
        order = rng.permutation(size)
        for start in range(0, size, batch_size):
            yield order[start:start + batch_size]


def chunks(indices: np.ndarray, chunk_size: int) -> Iterator[np.ndarray]:
    for start in range(0, len(indices), chunk_size):
        yield indices[start:start + chunk_size]
