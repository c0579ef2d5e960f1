#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Upstream stage: masked contrastive pretraining of the frame encoder.

A batch of frame-stack sequences is corrupted at Bernoulli-masked positions and
pushed through encoder, projection and Transformer (query branch). The clean
sequence goes through the momentum key copies of encoder and projection (key
branch, never recorded on a tape). InfoNCE over the masked positions pulls each
reconstructed token toward the key of its own clean stack. The ``curl`` mode
drops masking and the Transformer and contrasts two crops of single stacks.
"""

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from humanfriendly import format_timespan
from tqdm import tqdm

from config import app_logger, debug_logger
from core import autodiff as ad
from core import nn
from core.autodiff import DiffTensor, Tape, no_grad
from core.checkpoint import Checkpoint, save_checkpoint
from core.corpus import SequenceCorpus, corrupt, sample_mask
from core.csvlog import CsvLog
from core.errors import ContractError, DimensionError, NumericError
from core.nn import ParamSet
from core.optim import Adam, LrSchedule


# --------------------------------------------------------------------------- crops

def random_offsets(count: int, image_size: int, crop_size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, image_size - crop_size + 1, size=(count, 2))


def crop_at(stacks: np.ndarray, offsets: np.ndarray, crop_size: int) -> np.ndarray:
    """Crop each N×C×H×W stack at its own (top, left) offset."""
    out = np.empty(stacks.shape[:2] + (crop_size, crop_size))
    for i, (top, left) in enumerate(offsets):
        out[i] = stacks[i, :, top:top + crop_size, left:left + crop_size]
    return out


def center_crop(stack: np.ndarray, crop_size: int) -> np.ndarray:
    """Deterministic centre crop of a C×H×W (or N×C×H×W) array."""
    size = stack.shape[-1]
    top = (size - crop_size) // 2
    return stack[..., top:top + crop_size, top:top + crop_size]


# --------------------------------------------------------------------------- objectives

def _unit_keys(keys: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(keys, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise NumericError("zero-norm key vector, cosine similarity undefined")
    return keys / norms


def similarity_logits(queries: DiffTensor, keys: np.ndarray, temperature: float,
                      bilinear: Optional[DiffTensor] = None) -> DiffTensor:
    """T×T logits: cosine similarity over τ, or ``q W kᵀ`` when a bilinear weight is given."""
    if temperature <= 0.0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    if bilinear is not None:
        return ad.matmul(ad.matmul(queries, bilinear), DiffTensor(keys.T))
    unit_q = ad.normalize_rows(queries)
    return ad.mul(ad.matmul(unit_q, DiffTensor(_unit_keys(keys).T)), 1.0 / temperature)


def _masked_log_likelihood(queries: DiffTensor, keys: np.ndarray, mask: np.ndarray, temperature: float,
                           bilinear: Optional[DiffTensor]) -> Optional[DiffTensor]:
    positions = np.flatnonzero(mask)
    if positions.size == 0:
        return None
    if queries.shape != keys.shape:
        raise DimensionError(f"queries {queries.shape} and keys {keys.shape} are not index-aligned")
    log_probs = ad.log_softmax(similarity_logits(queries, keys, temperature, bilinear), axis=-1)
    return ad.sum(ad.take(log_probs, (positions, positions)))


def masked_infonce(queries, keys: np.ndarray, mask: np.ndarray, temperature: float,
                   bilinear: Optional[DiffTensor] = None) -> DiffTensor:
    """InfoNCE averaged over the masked positions of one T×d sequence.

    Keys are plain arrays (stop-gradient). With no masked position the loss is 0
    and carries no gradient.
    """
    queries = queries if isinstance(queries, DiffTensor) else DiffTensor(queries)
    total = _masked_log_likelihood(queries, np.asarray(keys, dtype=np.float64), np.asarray(mask), temperature, bilinear)
    if total is None:
        return DiffTensor(0.0)
    return ad.mul(total, -1.0 / int(np.sum(mask)))


def batch_masked_infonce(queries: DiffTensor, keys: np.ndarray, masks: np.ndarray, temperature: float,
                         bilinear: Optional[DiffTensor] = None) -> Tuple[DiffTensor, int]:
    """Masked InfoNCE over B sequences (B×T×d), divided by the total masked count."""
    count = int(np.sum(masks))
    if count == 0:
        return DiffTensor(0.0), 0
    terms = []
    for b in range(queries.shape[0]):
        term = _masked_log_likelihood(ad.take(queries, b), keys[b], masks[b], temperature, bilinear)
        if term is not None:
            terms.append(ad.reshape(term, (1,)))
    total = ad.sum(ad.concat(terms)) if len(terms) > 1 else ad.reshape(terms[0], ())
    return ad.mul(total, -1.0 / count), count


def retrieval_accuracy(queries: np.ndarray, keys: np.ndarray, mask: np.ndarray, temperature: float = 1.0,
                       bilinear: Optional[np.ndarray] = None) -> Optional[float]:
    """Fraction of masked positions whose own key has the highest similarity; None without masked positions."""
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    mask = np.asarray(mask)
    if queries.ndim == 2:
        queries, keys, mask = queries[None], keys[None], mask[None]
    hits, total = 0, 0
    with no_grad():
        for q, k, m in zip(queries, keys, mask):
            positions = np.flatnonzero(m)
            if positions.size == 0:
                continue
            weight = None if bilinear is None else DiffTensor(bilinear)
            logits = similarity_logits(DiffTensor(q), k, temperature, weight).values
            hits += int(np.sum(np.argmax(logits[positions], axis=1) == positions))
            total += positions.size
    return None if total == 0 else hits / total


def representation_drift(clean: np.ndarray, reconstructed: np.ndarray) -> float:
    """Mean Euclidean distance between reconstructed embeddings and their clean references."""
    clean = np.asarray(clean, dtype=np.float64).reshape(-1, np.shape(clean)[-1])
    reconstructed = np.asarray(reconstructed, dtype=np.float64).reshape(clean.shape)
    if clean.shape[0] == 0:
        return 0.0
    return float(np.mean(np.linalg.norm(reconstructed - clean, axis=1)))


def momentum_update(query: ParamSet, key: ParamSet, momentum: float) -> None:
    """``key ← m·query + (1 − m)·key`` for every parameter, in place."""
    if set(query.names()) != set(key.names()):
        raise DimensionError("momentum update between parameter sets with different names")
    for name, target in key.items():
        source = query[name]
        if source.shape != target.shape:
            raise DimensionError(f"momentum update: {name} has shape {source.shape} vs {target.shape}")
        target.values = momentum * source.values + (1.0 - momentum) * target.values


# --------------------------------------------------------------------------- model

@dataclass
class UpstreamModel:
    """Query networks (encoder, projection, Transformer) and their momentum key copies."""
    encoder: ParamSet
    projection: Optional[ParamSet]
    transformer: ParamSet
    bilinear: Optional[ParamSet]
    encoder_key: ParamSet
    projection_key: Optional[ParamSet]
    transformer_key: Optional[ParamSet]

    @classmethod
    def initialize(cls, upstream: Dict[str, Any], rng: np.random.Generator) -> "UpstreamModel":
        d = upstream["latent_dim"]
        encoder = nn.init_encoder(rng, 3 * upstream["frame_stack"], upstream["crop_size"], d)
        projection = nn.init_projection(rng, d) if upstream["use_projection"] else None
        transformer = nn.init_transformer(rng, d, upstream["transformer_blocks"], upstream["ffn_mult"] * d)
        bilinear = None
        if upstream["similarity"] == "bilinear":
            bilinear = ParamSet()
            bilinear.add("w", np.eye(d))
        return cls(
            encoder=encoder,
            projection=projection,
            transformer=transformer,
            bilinear=bilinear,
            encoder_key=encoder.copy().freeze(),
            projection_key=projection.copy().freeze() if projection is not None else None,
            transformer_key=transformer.copy().freeze() if upstream["dual_transformer"] else None,
        )

    def key_sets(self) -> List[Tuple[ParamSet, ParamSet]]:
        pairs = [(self.encoder, self.encoder_key)]
        if self.projection is not None:
            pairs.append((self.projection, self.projection_key))
        if self.transformer_key is not None:
            pairs.append((self.transformer, self.transformer_key))
        return pairs

    def bilinear_weight(self) -> Optional[DiffTensor]:
        return None if self.bilinear is None else self.bilinear["w"]

    def embed(self, crops: np.ndarray) -> DiffTensor:
        """Query-branch ``φ(f_θ(h))`` for N stacks."""
        return nn.projection_forward(self.projection, nn.encoder_forward(self.encoder, crops))

    def embed_keys(self, crops: np.ndarray) -> np.ndarray:
        with no_grad():
            return nn.projection_forward(self.projection_key, nn.encoder_forward(self.encoder_key, crops)).values

    def reconstruct(self, tokens: DiffTensor) -> DiffTensor:
        return nn.transformer_forward(self.transformer, tokens)

    def key_tokens(self, crops: np.ndarray, batch: int, length: int) -> np.ndarray:
        keys = self.embed_keys(crops).reshape(batch, length, -1)
        if self.transformer_key is None:
            return keys
        with no_grad():
            return nn.transformer_forward(self.transformer_key, keys).values


def encoder_digest(encoder: ParamSet, projection: Optional[ParamSet]) -> str:
    """Identity of a frozen upstream encoder (encoder plus projection, as stored)."""
    combined = encoder if projection is None else encoder.merged("projection", projection)
    return combined.digest()


# --------------------------------------------------------------------------- training loop

class Pretrainer:
    """Runs masked (or CURL) pretraining steps over an immutable corpus."""

    def __init__(self, config: Dict[str, Any], corpus: SequenceCorpus, output_dir=None) -> None:
        self.config = config
        self.upstream = config["upstream"]
        self.corpus = corpus
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.rng = np.random.default_rng(config["seed"])
        self.model = UpstreamModel.initialize(self.upstream, self.rng)
        self.steps = 0
        self.updates = 0
        u = self.upstream
        self.optimizers = [
            Adam(self.model.encoder, LrSchedule("constant", u["lr_encoder"]), label="encoder"),
            Adam(self.model.transformer, LrSchedule("warmup-inv-sqrt", u["lr_transformer"], u["warmup_steps"]),
                 label="transformer"),
        ]
        if self.model.projection is not None:
            self.optimizers.append(Adam(self.model.projection, LrSchedule("constant", u["lr_projection"]), label="projection"))
        if self.model.bilinear is not None:
            self.optimizers.append(Adam(self.model.bilinear, LrSchedule("constant", u["lr_encoder"]), label="bilinear"))
        if corpus.frame_stack != u["frame_stack"]:
            raise DimensionError(f"corpus frame stack {corpus.frame_stack} differs from upstream.frame_stack {u['frame_stack']}")

    @property
    def mode(self) -> str:
        return self.upstream["mode"]

    def _crops(self, stacks: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        size, crop = stacks.shape[-1], self.upstream["crop_size"]
        query_offsets = random_offsets(stacks.shape[0], size, crop, self.rng)
        if self.upstream["independent_crops"]:
            key_offsets = random_offsets(stacks.shape[0], size, crop, self.rng)
        else:
            key_offsets = query_offsets
        return query_offsets, key_offsets

    def _assert_keys_off_tape(self, tape: Tape) -> None:
        for _, key in self.model.key_sets():
            for name, tensor in key.items():
                if tape.contains(tensor):
                    raise ContractError(f"key parameter {name} was recorded on a gradient tape")

    def _apply_updates(self, tape: Tape, loss: DiffTensor) -> Dict[str, float]:
        self._assert_keys_off_tape(tape)
        tape.backward(loss)
        rates = {opt.label: opt.step() for opt in self.optimizers}
        for query, key in self.model.key_sets():
            momentum_update(query, key, self.upstream["momentum"])
        self.updates += 1
        return rates

    def _check_loss(self, loss: DiffTensor, indices: np.ndarray) -> None:
        if not np.isfinite(loss.item()):
            app_logger.error(f"Non-finite pretraining loss at step {self.steps}; batch stack indices: {indices.tolist()}")
            raise NumericError(f"non-finite contrastive loss at step {self.steps} (batch indices {indices.tolist()})")

    def sample_masked_batch(self, rng: np.random.Generator):
        u = self.upstream
        originals, corrupted, masks, indices = [], [], [], []
        for _ in range(u["batch_size"]):
            sequence, index = self.corpus.sample_sequence(u["seq_len"], rng)
            masked = corrupt(sequence, sample_mask(u["seq_len"], u["mask_prob"], rng), self.corpus, rng, index)
            originals.append(masked.originals)
            corrupted.append(masked.corrupted)
            masks.append(masked.mask)
            indices.append(index)
        return np.stack(originals), np.stack(corrupted), np.stack(masks), np.stack(indices)

    def step(self) -> Dict[str, Any]:
        """One pretraining step; returns the step log."""
        log = self.curl_step() if self.mode == "curl" else self.masked_step()
        self.steps += 1
        return log

    def masked_step(self) -> Dict[str, Any]:
        u = self.upstream
        batch, length = u["batch_size"], u["seq_len"]
        originals, corrupted, masks, indices = self.sample_masked_batch(self.rng)
        flat_shape = (batch * length,) + originals.shape[2:]
        query_offsets, key_offsets = self._crops(corrupted.reshape(flat_shape))
        if int(masks.sum()) == 0:
            debug_logger.debug(f"Step {self.steps}: no masked positions, update skipped")
            return {"step": self.steps, "mode": "masked", "loss": 0.0, "retrieval_acc": None, "masked": 0}

        crop = u["crop_size"]
        keys = self.model.key_tokens(crop_at(originals.reshape(flat_shape), key_offsets, crop), batch, length)
        with Tape() as tape:
            tokens = ad.reshape(self.model.embed(crop_at(corrupted.reshape(flat_shape), query_offsets, crop)),
                                (batch, length, u["latent_dim"]))
            queries = self.model.reconstruct(tokens)
            loss, count = batch_masked_infonce(queries, keys, masks, u["temperature"], self.model.bilinear_weight())
            self._check_loss(loss, indices)
            rates = self._apply_updates(tape, loss)
        weight = None if self.model.bilinear is None else self.model.bilinear["w"].values
        accuracy = retrieval_accuracy(queries.values, keys, masks, u["temperature"], weight)
        return {
            "step": self.steps, "mode": "masked", "loss": loss.item(), "retrieval_acc": accuracy, "masked": count,
            "lr_encoder": rates.get("encoder"), "lr_transformer": rates.get("transformer"),
        }

    def curl_step(self) -> Dict[str, Any]:
        """Ablation step: two crops of B stacks, plain InfoNCE, no mask and no Transformer."""
        u = self.upstream
        batch = u["batch_size"]
        if u["curl_consecutive"]:
            stacks, indices = self.corpus.sample_sequence(batch, self.rng, gap=u["curl_frame_gap"])
        else:
            stacks, indices = self.corpus.sample_stacks(batch, self.rng)
        query_offsets, key_offsets = self._crops(stacks)
        keys = self.model.embed_keys(crop_at(stacks, key_offsets, u["crop_size"]))
        everything = np.ones(batch, dtype=np.int64)
        with Tape() as tape:
            queries = self.model.embed(crop_at(stacks, query_offsets, u["crop_size"]))
            loss = masked_infonce(queries, keys, everything, u["temperature"], self.model.bilinear_weight())
            self._check_loss(loss, indices)
            rates = self._apply_updates(tape, loss)
        weight = None if self.model.bilinear is None else self.model.bilinear["w"].values
        accuracy = retrieval_accuracy(queries.values, keys, everything, u["temperature"], weight)
        return {
            "step": self.steps, "mode": "curl", "loss": loss.item(), "retrieval_acc": accuracy, "masked": batch,
            "lr_encoder": rates.get("encoder"), "lr_transformer": None,
        }

    def evaluate(self) -> Dict[str, Optional[float]]:
        """Retrieval accuracy and drift on a fixed set of held batches (no parameter change)."""
        u = self.upstream
        rng = np.random.default_rng(self.config["seed"] + 7919)
        weight = None if self.model.bilinear is None else self.model.bilinear["w"].values
        crop = u["crop_size"]
        hits, total, drifts = 0.0, 0, []
        for _ in range(u["eval_batches"]):
            if self.mode == "curl":
                stacks, _ = self.corpus.sample_stacks(u["batch_size"], rng)
                crops = center_crop(stacks, crop)
                with no_grad():
                    queries = self.model.embed(crops).values[None]
                keys = self.model.embed_keys(crops)[None]
                masks = np.ones((1, u["batch_size"]), dtype=np.int64)
            else:
                originals, corrupted, masks, _ = self.sample_masked_batch(rng)
                batch, length = masks.shape
                flat = (batch * length,) + originals.shape[2:]
                keys = self.model.key_tokens(center_crop(originals.reshape(flat), crop), batch, length)
                with no_grad():
                    tokens = ad.reshape(self.model.embed(center_crop(corrupted.reshape(flat), crop)),
                                        (batch, length, u["latent_dim"]))
                    queries = self.model.reconstruct(tokens).values
            accuracy = retrieval_accuracy(queries, keys, masks, u["temperature"], weight)
            selected = masks.astype(bool)
            if accuracy is not None:
                count = int(selected.sum())
                hits += accuracy * count
                total += count
                q, k = queries[selected], keys[selected]
                if self.model.bilinear is None:
                    q, k = _unit_keys(q), _unit_keys(k)
                drifts.append(representation_drift(k, q) * count)
        if total == 0:
            return {"retrieval_acc": None, "drift": None}
        return {"retrieval_acc": hits / total, "drift": float(np.sum(drifts) / total)}

    def checkpoints(self, config_hash: str) -> Dict[str, Checkpoint]:
        """Encoder, projection and Transformer checkpoints of the current query networks."""
        digest = encoder_digest(self.model.encoder, self.model.projection)
        meta = {
            "mode": self.mode,
            "use_projection": self.model.projection is not None,
            "latent_dim": self.upstream["latent_dim"],
            "frame_stack": self.upstream["frame_stack"],
            "crop_size": self.upstream["crop_size"],
            "encoder_digest": digest,
        }
        rng_state = self.rng.bit_generator.state
        out = {"encoder": Checkpoint("encoder", self.model.encoder.state(), config_hash, self.steps, rng_state, meta)}
        if self.model.projection is not None:
            out["projection"] = Checkpoint("projection", self.model.projection.state(), config_hash, self.steps,
                                           rng_state, meta)
        out["transformer"] = Checkpoint("transformer", self.model.transformer.state(), config_hash, self.steps,
                                        rng_state, meta)
        return out

    def run(self, steps: int, config_hash: str, on_progress: Optional[Callable[[int, int], None]] = None,
            stop_flag: Optional[Callable[[], bool]] = None) -> Dict[str, Any]:
        """Run ``steps`` steps, logging to ``pretrain.csv``/``drift.csv`` and writing snapshots.

        Args:
            steps: Number of steps to run.
            config_hash: Model-config hash stored in every checkpoint.
            on_progress: Called with (step, steps) after every step.
            stop_flag: Polled every step; stops early when it returns True.

        Returns:
            Summary with the final evaluation and the drift history.
        """
        out = self.output_dir
        suffix = "" if self.mode == "masked" else "_curl"
        mask_tag = f"_m{self.upstream['mask_prob']:g}" if self.mode == "masked" else ""
        started = time.monotonic()
        history: List[Dict[str, Any]] = []
        log = CsvLog(out / f"pretrain{suffix}{mask_tag}.csv", "pretrain") if out else None
        drift_log = CsvLog(out / f"drift{suffix}{mask_tag}.csv", "drift") if out else None
        try:
            for _ in tqdm(range(steps), desc=f"pretrain[{self.mode}]", unit="step", leave=False):
                if stop_flag and stop_flag():
                    app_logger.info(f"Pretraining stopped at step {self.steps}")
                    break
                entry = self.step()
                if log:
                    log.write(entry)
                if self.steps % self.upstream["eval_interval"] == 0 or self.steps == steps:
                    history.append(self._evaluate_and_snapshot(drift_log, config_hash))
                if on_progress:
                    on_progress(self.steps, steps)
        finally:
            for handle in (log, drift_log):
                if handle:
                    handle.close()
        app_logger.info(f"Pretraining finished {self.steps} steps ({self.updates} updates) in "
                        f"{format_timespan(time.monotonic() - started)}")
        final = history[-1] if history else self.evaluate()
        return {"steps": self.steps, "updates": self.updates, "final": final, "history": history}

    def _evaluate_and_snapshot(self, drift_log: Optional[CsvLog], config_hash: str) -> Dict[str, Any]:
        metrics = self.evaluate()
        snapshot = None
        if self.output_dir is not None:
            tag = "" if self.mode == "masked" else "_curl"
            path = self.output_dir / f"snapshots{tag}" / f"encoder_{self.steps:07d}.ckpt"
            save_checkpoint(path, self.checkpoints(config_hash)["encoder"])
            snapshot = str(path.relative_to(self.output_dir))
        row = {"step": self.steps, "drift": metrics["drift"], "retrieval_acc": metrics["retrieval_acc"], "snapshot": snapshot}
        if drift_log:
            drift_log.write(row)
        app_logger.info(f"Upstream step {self.steps}: retrieval={metrics['retrieval_acc']}, drift={metrics['drift']}")
        return row
