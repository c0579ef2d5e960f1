#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Downstream stage: oracle PPO on privileged state and the distilled student trainer."""

import math
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from humanfriendly import format_timespan
from tqdm import tqdm

from config import app_logger, debug_logger, model_config_hash
from core import autodiff as ad
from core import nn
from core.autodiff import DiffTensor, Tape, no_grad
from core.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from core.contrastive import center_crop, encoder_digest
from core.csvlog import CsvLog
from core.errors import ConfigError, ContractError, NumericError
from core.metrics import run_evaluation
from core.navsim import PRIVILEGED_VECTOR_DIM, STUDENT_VECTOR_DIM, ArenaSettings, NavEnv
from core.nn import GaussianAction, ParamSet
from core.optim import Adam, LrSchedule
from core.ppo import (Observation, PpoHyper, TrajectoryBatch, advantage_normalize, chunks, collect_rollouts,
                      compute_gae, minibatches, ppo_loss)

TRAIN_STREAM = 1
MC_STREAM = 2


# --------------------------------------------------------------------------- distillation weight

@dataclass(frozen=True)
class DecaySchedule:
    kind: str = "linear"
    alpha0: float = 0.95
    horizon: int = 10000
    exp_factor: float = 0.95
    exp_interval: int = 1000
    beta: float = 1.0

    @classmethod
    def from_config(cls, decay: Dict[str, Any]) -> "DecaySchedule":
        return cls(**decay)


def alpha(step: int, schedule: DecaySchedule) -> float:
    """Distillation weight at a global environment step.

    Args:
        step: Environment step (≥ 0).
        schedule: Decay kind and constants.

    Returns:
        ``linear``: α₀·max(0, 1 − step/horizon); ``fixed``: α₀; ``exponential``: α₀·f^⌊step/interval⌋.
    """
    if step < 0:
        raise ContractError(f"alpha queried at negative step {step}")
    if schedule.kind == "linear":
        return schedule.alpha0 * max(0.0, 1.0 - step / schedule.horizon)
    if schedule.kind == "fixed":
        return schedule.alpha0
    if schedule.kind == "exponential":
        return schedule.alpha0 * schedule.exp_factor ** (step // schedule.exp_interval)
    raise ConfigError(f"unknown decay kind: {schedule.kind}")


# --------------------------------------------------------------------------- KL terms

def _rows(x: DiffTensor) -> Tuple[DiffTensor, bool]:
    if x.ndim == 1:
        return ad.reshape(x, (1, x.shape[0])), True
    return x, False


def kl_gaussian(p: GaussianAction, q: GaussianAction) -> DiffTensor:
    """Closed-form ``KL(p ‖ q)`` per row for diagonal Gaussians; ``p`` (the teacher) is a constant.

    ``q`` has one mean row per sample and a shared log-std vector; ``p`` may carry
    per-row or shared parameters.
    """
    q_mean, squeeze = _rows(q.mean)
    width = q_mean.shape[1]
    p_mean = np.broadcast_to(np.asarray(p.mean.values, dtype=np.float64), q_mean.shape)
    p_log_std = np.broadcast_to(np.asarray(p.log_std.values, dtype=np.float64), q_mean.shape)
    diff = ad.sub(DiffTensor(p_mean), q_mean)
    numerator = ad.add(ad.mul(diff, diff), DiffTensor(np.exp(2.0 * p_log_std)))
    inv_two_var = ad.mul(ad.exp(ad.mul(q.log_std, -2.0)), 0.5)
    per_row = ad.sum(ad.mul_row(numerator, inv_two_var), axis=-1)
    per_row = ad.add(per_row, ad.sum(q.log_std))
    per_row = ad.sub(per_row, DiffTensor(p_log_std.sum(axis=-1) + 0.5 * width))
    return ad.reshape(per_row, ()) if squeeze else per_row


def _gaussian_log_density(x: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (x - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std, axis=-1) - 0.5 * x.shape[-1] * math.log(2.0 * math.pi)


def kl_monte_carlo(p: GaussianAction, q: GaussianAction, samples: int, rng: np.random.Generator) -> DiffTensor:
    """Sample estimate of ``KL(p ‖ q)`` per row from ``samples`` draws of ``p``."""
    q_mean, squeeze = _rows(q.mean)
    rows, width = q_mean.shape
    p_mean = np.broadcast_to(np.asarray(p.mean.values, dtype=np.float64), q_mean.shape)
    p_log_std = np.broadcast_to(np.asarray(p.log_std.values, dtype=np.float64), q_mean.shape)
    draws = p_mean[:, None, :] + np.exp(p_log_std)[:, None, :] * rng.standard_normal((rows, samples, width))
    log_p = _gaussian_log_density(draws, p_mean[:, None, :], p_log_std[:, None, :]).reshape(-1)
    repeated = GaussianAction(ad.take(q_mean, np.repeat(np.arange(rows), samples)), q.log_std)
    log_q = repeated.log_prob(draws.reshape(-1, width))
    per_row = ad.mean(ad.reshape(ad.sub(DiffTensor(log_p), log_q), (rows, samples)), axis=1)
    return ad.reshape(per_row, ()) if squeeze else per_row


def combine_losses(l_rl, kl, alpha_value: float, beta: float):
    """``(1 − α)·L_rl + α·β·KL``."""
    return (1.0 - alpha_value) * l_rl + alpha_value * beta * kl


def student_loss(
        dist: GaussianAction,
        values: DiffTensor,
        batch: TrajectoryBatch,
        indices: np.ndarray,
        advantages: np.ndarray,
        hyper: PpoHyper,
        beta: float = 1.0,
        estimator: str = "closed_form",
        kl_samples: int = 16,
        rng: Optional[np.random.Generator] = None,
        denominator: Optional[int] = None,
) -> Tuple[DiffTensor, Dict[str, float]]:
    """PPO loss weighted by ``1 − α`` plus ``α·β``-weighted KL to the recorded teacher, per sample.

    With a uniform α this is exactly ``(1 − α)·L_rl + α·β·mean KL``. Rows with α = 0
    never read teacher parameters.

    Raises:
        ContractError: A row has α > 0 but no recorded teacher distribution.
    """
    denominator = denominator or len(indices)
    alphas = batch.alphas[indices]
    positive = alphas > 0.0
    if np.any(positive & ~batch.teacher_mask[indices]):
        raise ContractError("distillation weight is positive but teacher parameters are missing")
    loss, stats = ppo_loss(
        dist, values, batch.actions[indices], batch.log_probs[indices], advantages[indices],
        batch.returns[indices], hyper.clip, hyper.value_coef, weights=1.0 - alphas,
        denominator=denominator, step_index=batch.env_steps[indices],
    )
    stats["kl"] = 0.0
    stats["kl_rows"] = 0
    if np.any(positive):
        selected = np.flatnonzero(positive)
        rows = indices[selected]
        teacher = GaussianAction(DiffTensor(batch.teacher_mean[rows]), DiffTensor(batch.teacher_log_std[rows]))
        student = GaussianAction(ad.take(dist.mean, selected), dist.log_std)
        if estimator == "monte_carlo":
            kl_rows = kl_monte_carlo(teacher, student, kl_samples, rng or np.random.default_rng(0))
        else:
            kl_rows = kl_gaussian(teacher, student)
        weighted = ad.sum(ad.mul(kl_rows, DiffTensor(alphas[selected])))
        loss = ad.add(loss, ad.mul(weighted, beta / denominator))
        stats["kl"] = float(np.sum(kl_rows.values))
        stats["kl_rows"] = int(selected.size)
    return loss, stats


# --------------------------------------------------------------------------- policies

def _single(obs: Observation) -> Observation:
    return {key: value[None] for key, value in obs.items()}


class OraclePolicy:
    """Privileged teacher: depth-stack encoder fused with velocity, orientation and relative positions."""

    def __init__(self, params: ParamSet, image_size: int) -> None:
        self.params = params
        self.image_size = image_size
        self.encoder = params.scope("encoder")
        self.actor = params.scope("actor")
        self.critic = params.scope("critic")

    @classmethod
    def initialize(cls, config: Dict[str, Any], rng: np.random.Generator) -> "OraclePolicy":
        size = config["arena"]["image_size"]
        d = config["upstream"]["latent_dim"]
        hidden = config["policy"]["hidden"]
        encoder = nn.init_encoder(rng, config["upstream"]["frame_stack"], size, d)
        actor = nn.init_actor(rng, d + PRIVILEGED_VECTOR_DIM, hidden)
        critic = nn.init_critic(rng, d + PRIVILEGED_VECTOR_DIM, hidden)
        params = ParamSet().merged("encoder", encoder).merged("actor", actor).merged("critic", critic)
        return cls(params, size)

    @classmethod
    def from_checkpoint(cls, config: Dict[str, Any], checkpoint: Checkpoint) -> "OraclePolicy":
        policy = cls.initialize(config, np.random.default_rng(0))
        policy.params.load_state(checkpoint.state())
        return policy

    def observe(self, env: NavEnv) -> Observation:
        privileged = env.privileged()
        return {"depth": privileged.depth_profiles.copy(), "state": privileged.vector()}

    def forward(self, obs: Observation) -> Tuple[GaussianAction, DiffTensor]:
        depth = np.repeat(obs["depth"][:, :, None, :], self.image_size, axis=2)
        latent = nn.encoder_forward(self.encoder, depth)
        features = ad.concat([latent, DiffTensor(obs["state"])], axis=1)
        return nn.policy_forward(self.actor, features), nn.value_forward(self.critic, features)

    def act(self, env: NavEnv) -> np.ndarray:
        with no_grad():
            dist, _ = self.forward(_single(self.observe(env)))
        return dist.mode()[0]

    def frozen_sets(self) -> List[ParamSet]:
        return []


class StudentPolicy:
    """Deployment policy over ``(φ(f_θ(h_t)), v_t, ω_t, θ_t, Δp_t^g)`` with a frozen upstream encoder."""

    def __init__(self, encoder: ParamSet, projection: Optional[ParamSet], heads: ParamSet, crop_size: int) -> None:
        self.encoder = encoder.freeze()
        self.projection = projection.freeze() if projection is not None else None
        self.params = heads
        self.crop_size = crop_size
        self.actor = heads.scope("actor")
        self.critic = heads.scope("critic")

    @classmethod
    def initialize(cls, config: Dict[str, Any], encoder: ParamSet, projection: Optional[ParamSet],
                   rng: np.random.Generator) -> "StudentPolicy":
        in_dim = config["upstream"]["latent_dim"] + STUDENT_VECTOR_DIM
        hidden = config["policy"]["hidden"]
        heads = ParamSet().merged("actor", nn.init_actor(rng, in_dim, hidden)).merged(
            "critic", nn.init_critic(rng, in_dim, hidden))
        return cls(encoder, projection, heads, config["upstream"]["crop_size"])

    @classmethod
    def from_checkpoint(cls, config: Dict[str, Any], encoder: ParamSet, projection: Optional[ParamSet],
                        checkpoint: Checkpoint) -> "StudentPolicy":
        policy = cls.initialize(config, encoder, projection, np.random.default_rng(0))
        recorded = checkpoint.meta.get("encoder_digest")
        if recorded is not None and recorded != policy.encoder_digest():
            raise ConfigError("student checkpoint was trained on top of a different upstream encoder")
        policy.params.load_state(checkpoint.state())
        return policy

    def latent(self, rgb_stack: np.ndarray) -> np.ndarray:
        # frames quantised like the stored corpus
        pixels = np.rint(center_crop(rgb_stack, self.crop_size) * 255.0) / 255.0
        with no_grad():
            return nn.projection_forward(self.projection, nn.encoder_forward(self.encoder, pixels)).values

    def observe(self, env: NavEnv) -> Observation:
        return {"obs": np.concatenate([self.latent(env.rgb_stack()), env.student_vector()])}

    def forward(self, obs: Observation) -> Tuple[GaussianAction, DiffTensor]:
        features = DiffTensor(obs["obs"])
        return nn.policy_forward(self.actor, features), nn.value_forward(self.critic, features)

    def act(self, env: NavEnv) -> np.ndarray:
        with no_grad():
            dist, _ = self.forward(_single(self.observe(env)))
        return dist.mode()[0]

    def frozen_sets(self) -> List[ParamSet]:
        return [s for s in (self.encoder, self.projection) if s is not None]

    def encoder_digest(self) -> str:
        return encoder_digest(self.encoder, self.projection)


def load_encoder(config: Dict[str, Any], encoder_checkpoint: Checkpoint,
                 projection_checkpoint: Optional[Checkpoint]) -> Tuple[ParamSet, Optional[ParamSet]]:
    """Rebuild the frozen upstream encoder (and projection) and check its identity.

    Raises:
        ConfigError: The checkpoints disagree with each other or with ``distill.encoder_hash``.
    """
    upstream = config["upstream"]
    rng = np.random.default_rng(0)
    encoder = nn.init_encoder(rng, 3 * upstream["frame_stack"], upstream["crop_size"], upstream["latent_dim"])
    encoder.load_state(encoder_checkpoint.state())
    projection = None
    if encoder_checkpoint.meta.get("use_projection", True):
        if projection_checkpoint is None:
            raise ConfigError("encoder was pretrained with a projection head but no projection checkpoint was given")
        projection = nn.init_projection(rng, upstream["latent_dim"])
        projection.load_state(projection_checkpoint.state())
    digest = encoder_digest(encoder, projection)
    recorded = encoder_checkpoint.meta.get("encoder_digest")
    if recorded is not None and recorded != digest:
        raise ConfigError("encoder and projection checkpoints come from different pretraining runs")
    expected = config["distill"]["encoder_hash"]
    if expected is not None and expected != digest:
        raise ConfigError(f"encoder hash {digest[:12]} does not match distill.encoder_hash {expected[:12]}")
    return encoder.freeze(), projection.freeze() if projection is not None else None


# --------------------------------------------------------------------------- trainers

class PpoTrainer:
    """PPO loop over a pool of environments; subclasses define the loss and the CSV row."""

    schema = "teach"
    component = "oracle"

    def __init__(self, config: Dict[str, Any], policy, output_dir=None) -> None:
        self.config = config
        rl = config["rl"]
        self.hyper = PpoHyper.from_config(rl)
        self.policy = policy
        self.settings = ArenaSettings.from_config(config["arena"])
        self.frame_stack = config["upstream"]["frame_stack"]
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.rng = np.random.default_rng([config["seed"], TRAIN_STREAM])
        self.envs = [NavEnv(self.settings, self.frame_stack, config["seed"] + i) for i in range(rl["n_envs"])]
        self.schedule = LrSchedule("linear-decay", rl["lr"], total_steps=rl["total_steps"])
        self.optimizer = Adam(policy.params, self.schedule, label=self.component)
        self.grad_chunk = rl["grad_chunk"]
        self.env_steps = 0
        self.updates = 0

    def teacher(self):
        return None

    def alpha_at(self, step: int) -> float:
        return 0.0

    def loss(self, dist, values, batch: TrajectoryBatch, indices: np.ndarray, advantages: np.ndarray,
             denominator: int) -> Tuple[DiffTensor, Dict[str, float]]:
        return ppo_loss(
            dist, values, batch.actions[indices], batch.log_probs[indices], advantages[indices],
            batch.returns[indices], self.hyper.clip, self.hyper.value_coef,
            denominator=denominator, step_index=batch.env_steps[indices],
        )

    def check_isolation(self, tape: Tape) -> None:
        """Frozen and teacher parameters must never be recorded on the update tape."""
        sets = list(self.policy.frozen_sets())
        teacher = self.teacher()
        if teacher is not None:
            sets.append(teacher.params)
        for params in sets:
            for name, tensor in params.items():
                if tape.contains(tensor):
                    raise ContractError(f"frozen parameter {name} was recorded on the update tape")

    def collect(self, steps: int) -> TrajectoryBatch:
        teacher = self.teacher()
        return collect_rollouts(self.envs, self.policy, steps, self.hyper.horizon, self.rng,
                                teacher=teacher, alpha_at=self.alpha_at if teacher is not None else None,
                                step_offset=self.env_steps)

    def update(self, batch: TrajectoryBatch) -> Dict[str, float]:
        """GAE, optional advantage normalisation, then ``epochs`` passes of shuffled minibatches."""
        compute_gae(batch, self.hyper.gamma, self.hyper.gae_lambda)
        advantages = advantage_normalize(batch.advantages) if self.hyper.normalize_advantages else batch.advantages
        lr = self.schedule(self.env_steps)
        totals: Dict[str, float] = defaultdict(float)
        count = 0
        for indices in minibatches(len(batch), self.hyper.batch_size, self.hyper.epochs, self.rng):
            for chunk in chunks(indices, self.grad_chunk):
                with Tape() as tape:
                    dist, values = self.policy.forward(batch.observation_slice(chunk))
                    loss, stats = self.loss(dist, values, batch, chunk, advantages, denominator=len(indices))
                    self.check_isolation(tape)
                    tape.backward(loss)
                stats["total"] = loss.item()
                for key, value in stats.items():
                    totals[key] += value
            self.optimizer.step(lr)
            count += 1
        averaged = {key: value / count for key, value in totals.items()}
        averaged["lr"] = lr
        return averaged

    def row(self, batch: TrajectoryBatch, stats: Dict[str, float]) -> Dict[str, Any]:
        mean_return = float(np.mean(batch.episode_returns)) if batch.episode_returns else None
        return {"env_step": self.env_steps, "update": self.updates, "return": mean_return,
                "surrogate": stats["surrogate"], "value_loss": stats["value_loss"], "lr": stats["lr"]}

    def checkpoint(self, config_hash: str) -> Checkpoint:
        return Checkpoint(self.component, self.policy.params.state(), config_hash, self.env_steps,
                          self.rng.bit_generator.state, self.checkpoint_meta())

    def checkpoint_meta(self) -> Dict[str, Any]:
        return {"env_steps": self.env_steps, "updates": self.updates}

    def train(self, total_steps: Optional[int] = None, on_progress: Optional[Callable[[int, int], None]] = None,
              stop_flag: Optional[Callable[[], bool]] = None) -> List[Dict[str, Any]]:
        """Alternate rollout collection and PPO updates until ``total_steps`` environment steps.

        A non-finite update restores the parameters from before it, writes them as
        ``<component>_last_good.ckpt`` and re-raises.
        """
        total = total_steps or self.config["rl"]["total_steps"]
        history: List[Dict[str, Any]] = []
        log = CsvLog(self.output_dir / f"{self.schema}.csv", self.schema) if self.output_dir else None
        started = time.monotonic()
        try:
            with tqdm(total=total, desc=self.schema, unit="step", leave=False) as bar:
                while self.env_steps < total:
                    if stop_flag and stop_flag():
                        app_logger.info(f"{self.component} training stopped at env step {self.env_steps}")
                        break
                    batch = self.collect(min(self.hyper.buffer_size, total - self.env_steps))
                    snapshot = self.policy.params.state()
                    try:
                        stats = self.update(batch)
                    except NumericError:
                        self.policy.params.load_state(snapshot)
                        if self.output_dir:
                            path = save_checkpoint(self.output_dir / f"{self.component}_last_good.ckpt",
                                                   self.checkpoint(model_config_hash(self.config)))
                            app_logger.error(f"Training diverged; last good parameters kept in {path}")
                        raise
                    self.env_steps += len(batch)
                    self.updates += 1
                    row = self.row(batch, stats)
                    history.append(row)
                    if log:
                        log.write(row)
                    bar.update(len(batch))
                    debug_logger.debug(f"{self.component} update {self.updates}: {row}")
                    if on_progress:
                        on_progress(self.env_steps, total)
        finally:
            if log:
                log.close()
        app_logger.info(f"{self.component} training: {self.env_steps} env steps, {self.updates} updates in "
                        f"{format_timespan(time.monotonic() - started)}")
        return history


class OracleTrainer(PpoTrainer):
    schema = "teach"
    component = "oracle"


class StudentTrainer(PpoTrainer):
    """PPO plus annealed KL toward a frozen oracle recorded at collection time."""

    schema = "distill"
    component = "student"

    def __init__(self, config: Dict[str, Any], policy: StudentPolicy, oracle: Optional[OraclePolicy],
                 output_dir=None, encoder_files: Optional[Dict[str, str]] = None) -> None:
        super().__init__(config, policy, output_dir)
        distill = config["distill"]
        self.use_oracle = distill["use_oracle"]
        if self.use_oracle and oracle is None:
            raise ContractError("oracle guidance is enabled but no oracle policy was given")
        self.oracle = oracle if self.use_oracle else None
        if self.oracle is not None:
            self.oracle.params.freeze()
        self.decay = DecaySchedule.from_config(config["decay"])
        self.estimator = distill["kl_estimator"]
        self.kl_samples = distill["kl_samples"]
        self.kl_rng = np.random.default_rng([config["seed"], MC_STREAM])
        self.encoder_files = encoder_files or {}
        self.initial_digest = policy.encoder_digest()

    def teacher(self):
        return self.oracle

    def alpha_at(self, step: int) -> float:
        return alpha(step, self.decay) if self.use_oracle else 0.0

    def loss(self, dist, values, batch, indices, advantages, denominator):
        return student_loss(dist, values, batch, indices, advantages, self.hyper, self.decay.beta,
                            self.estimator, self.kl_samples, self.kl_rng, denominator)

    def update(self, batch: TrajectoryBatch) -> Dict[str, float]:
        stats = super().update(batch)
        if self.policy.encoder_digest() != self.initial_digest:
            raise ContractError("frozen encoder parameters changed during a student update")
        kl_rows = stats.get("kl_rows", 0.0)
        stats["kl_mean"] = stats["kl"] / kl_rows if kl_rows else 0.0
        return stats

    def row(self, batch: TrajectoryBatch, stats: Dict[str, float]) -> Dict[str, Any]:
        mean_return = float(np.mean(batch.episode_returns)) if batch.episode_returns else None
        return {"env_step": self.env_steps, "update": self.updates, "alpha": float(np.mean(batch.alphas)),
                "return": mean_return, "l_rl": stats["l_rl"], "kl": stats["kl_mean"], "total": stats["total"],
                "lr": stats["lr"]}

    def checkpoint_meta(self) -> Dict[str, Any]:
        meta = super().checkpoint_meta()
        meta.update({
            "encoder_digest": self.initial_digest,
            "use_projection": self.policy.projection is not None,
            "use_oracle": self.use_oracle,
            "decay": self.decay.kind,
        })
        meta.update(self.encoder_files)
        return meta


# --------------------------------------------------------------------------- stage entry points

ORACLE_FILE = "oracle.ckpt"
STUDENT_FILE = "student.ckpt"


def train_oracle(config: Dict[str, Any], output_dir, on_progress: Optional[Callable[[int, int], None]] = None,
                 stop_flag: Optional[Callable[[], bool]] = None, final_eval: bool = True) -> Dict[str, Any]:
    """Train the privileged oracle, save it and evaluate the reloaded checkpoint.

    Returns:
        Checkpoint path, training history, env step count and the evaluation report (or None).
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_hash = model_config_hash(config)
    policy = OraclePolicy.initialize(config, np.random.default_rng(config["seed"]))
    trainer = OracleTrainer(config, policy, out)
    history = trainer.train(on_progress=on_progress, stop_flag=stop_flag)
    path = save_checkpoint(out / ORACLE_FILE, trainer.checkpoint(config_hash))
    app_logger.info(f"Oracle checkpoint written to {path}")

    report = None
    if final_eval:
        reloaded = OraclePolicy.from_checkpoint(config, load_checkpoint(path, config_hash, component="oracle"))
        report = run_evaluation(config, reloaded.act, out, "teach_eval", "oracle")
    return {"checkpoint": path, "history": history, "env_steps": trainer.env_steps, "report": report}


def train_student(config: Dict[str, Any], output_dir, encoder_checkpoint: Checkpoint,
                  projection_checkpoint: Optional[Checkpoint], oracle_checkpoint: Optional[Checkpoint],
                  encoder_files: Optional[Dict[str, str]] = None,
                  on_progress: Optional[Callable[[int, int], None]] = None,
                  stop_flag: Optional[Callable[[], bool]] = None, final_eval: bool = True) -> Dict[str, Any]:
    """Distil the oracle into the image-based student over a frozen upstream encoder.

    Args:
        config: Validated configuration.
        output_dir: Directory for ``distill.csv``, the checkpoint and the evaluation CSVs.
        encoder_checkpoint: Pretrained encoder.
        projection_checkpoint: Pretrained projection head (None for the projection ablation).
        oracle_checkpoint: Trained oracle; required unless ``distill.use_oracle`` is false.
        encoder_files: Upstream file names recorded in the student checkpoint.
        on_progress: Called with (env_steps, total_steps) after every update.
        stop_flag: Polled before every rollout.
        final_eval: Evaluate the reloaded student checkpoint.

    Returns:
        Checkpoint path, training history, env step count and the evaluation report (or None).
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_hash = model_config_hash(config)
    encoder, projection = load_encoder(config, encoder_checkpoint, projection_checkpoint)
    oracle = None
    if config["distill"]["use_oracle"]:
        if oracle_checkpoint is None:
            raise ConfigError("oracle guidance is enabled but no oracle checkpoint is available")
        oracle = OraclePolicy.from_checkpoint(config, oracle_checkpoint)
    else:
        app_logger.info("Oracle guidance disabled: training the student with the RL loss only")

    policy = StudentPolicy.initialize(config, encoder, projection, np.random.default_rng(config["seed"]))
    trainer = StudentTrainer(config, policy, oracle, out, encoder_files)
    history = trainer.train(on_progress=on_progress, stop_flag=stop_flag)
    if policy.encoder_digest() != trainer.initial_digest:
        raise ContractError("frozen encoder changed during student training")
    path = save_checkpoint(out / STUDENT_FILE, trainer.checkpoint(config_hash))
    app_logger.info(f"Student checkpoint written to {path}")

    report = None
    if final_eval:
        reloaded = StudentPolicy.from_checkpoint(config, encoder, projection,
                                                 load_checkpoint(path, config_hash, component="student"))
        report = run_evaluation(config, reloaded.act, out, "distill_eval", "student")
    return {"checkpoint": path, "history": history, "env_steps": trainer.env_steps, "report": report}
