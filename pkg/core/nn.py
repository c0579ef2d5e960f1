#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Network building blocks: CNN encoder, projection head, single-head Transformer, policy heads."""

import hashlib
import math
from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from core import autodiff as ad
from core.autodiff import DiffTensor
from core.errors import ConfigError, ContractError, DimensionError, NumericError

ENCODER_CHANNELS = 32
KERNEL = 3
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
RELU_GAIN = math.sqrt(2.0)
ACTOR_OUT_GAIN = 0.01
ACTION_DIM = 3


class ParamSet:
    """Ordered, named collection of parameter tensors (one network or a bundle of networks)."""

    def __init__(self, tensors: Optional[Dict[str, DiffTensor]] = None) -> None:
        self._tensors: Dict[str, DiffTensor] = dict(tensors or {})

    def __getitem__(self, name: str) -> DiffTensor:
        return self._tensors[name]

    def __setitem__(self, name: str, tensor: DiffTensor) -> None:
        tensor.name = name
        self._tensors[name] = tensor

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self):
        return list(self._tensors)

    def add(self, name: str, values) -> DiffTensor:
        tensor = ad.parameter(values, name=name)
        self._tensors[name] = tensor
        return tensor

    def scope(self, prefix: str) -> "ParamSet":
        """View of the tensors under ``prefix.`` with the prefix stripped (tensors are shared)."""
        head = prefix + "."
        return ParamSet({name[len(head):]: t for name, t in self._tensors.items() if name.startswith(head)})

    def merged(self, prefix: str, other: "ParamSet") -> "ParamSet":
        """New set holding these tensors plus ``other``'s under ``prefix.`` (tensors are shared)."""
        merged = dict(self._tensors)
        merged.update({f"{prefix}.{name}": t for name, t in other.items()})
        return ParamSet(merged)

    def copy(self) -> "ParamSet":
        return ParamSet({name: ad.parameter(t.values.copy(), name=name) for name, t in self._tensors.items()})

    def state(self) -> Dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._tensors.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) - set(state)
        unexpected = set(state) - set(self._tensors)
        if missing or unexpected:
            raise DimensionError(f"parameter names differ: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, tensor in self._tensors.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != tensor.shape:
                raise DimensionError(f"parameter {name}: shape {values.shape} does not match {tensor.shape}")
            tensor.values = np.array(values, dtype=np.float64, order="C")

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.grad = None

    def freeze(self) -> "ParamSet":
        for tensor in self._tensors.values():
            tensor.requires_grad = False
            tensor.grad = None
        return self

    def digest(self) -> str:
        """SHA-256 over names, shapes and float32 values, i.e. what a checkpoint stores."""
        h = hashlib.sha256()
        for name in sorted(self._tensors):
            values = self._tensors[name].values
            h.update(name.encode("utf-8"))
            h.update(str(values.shape).encode("utf-8"))
            h.update(values.astype("<f4").tobytes())
        return h.hexdigest()


def orthogonal(shape: Tuple[int, ...], gain: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal initialisation over the (first axis) × (remaining axes) matrix view."""
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols].reshape(shape)


def linear(x: DiffTensor, weight: DiffTensor, bias: DiffTensor) -> DiffTensor:
    """Row-vector affine map ``x @ W + b``."""
    return ad.add_row(ad.matmul(x, weight), bias)


def _as_rows(x) -> Tuple[DiffTensor, bool]:
    x = x if isinstance(x, DiffTensor) else DiffTensor(x)
    if x.ndim == 1:
        return ad.reshape(x, (1, x.shape[0])), True
    return x, False


def _unrow(x: DiffTensor, squeeze: bool) -> DiffTensor:
    return ad.reshape(x, (x.shape[1],)) if squeeze else x


# --------------------------------------------------------------------------- encoder f_θ

def conv_output_size(image_size: int) -> int:
    after_first = (image_size - KERNEL) // 2 + 1
    return after_first - KERNEL + 1


def init_encoder(rng: np.random.Generator, in_channels: int, image_size: int, latent_dim: int) -> ParamSet:
    """Two 3×3 convolutions (stride 2 then 1) with 32 channels, a linear layer, layernorm and tanh."""
    spatial = conv_output_size(image_size)
    if spatial < 1:
        raise DimensionError(f"image size {image_size} is smaller than the encoder receptive field")
    flat = ENCODER_CHANNELS * spatial * spatial
    params = ParamSet()
    params.add("conv1.weight", orthogonal((ENCODER_CHANNELS, in_channels, KERNEL, KERNEL), RELU_GAIN, rng))
    params.add("conv1.bias", np.zeros(ENCODER_CHANNELS))
    params.add("conv2.weight", orthogonal((ENCODER_CHANNELS, ENCODER_CHANNELS, KERNEL, KERNEL), RELU_GAIN, rng))
    params.add("conv2.bias", np.zeros(ENCODER_CHANNELS))
    params.add("fc.weight", orthogonal((flat, latent_dim), 1.0, rng))
    params.add("fc.bias", np.zeros(latent_dim))
    params.add("ln.gain", np.ones(latent_dim))
    params.add("ln.bias", np.zeros(latent_dim))
    return params


def encoder_forward(params: ParamSet, stack) -> DiffTensor:
    """Map one frame stack (C×H×W) or a batch (N×C×H×W) to latents in (−1, 1)^d."""
    x = stack if isinstance(stack, DiffTensor) else DiffTensor(stack)
    if x.ndim not in (3, 4):
        raise DimensionError(f"encoder expects C×H×W or N×C×H×W input, got shape {x.shape}")
    if x.size and (x.values.min() < 0.0 or x.values.max() > 1.0):
        raise ContractError("encoder input pixels must lie in [0, 1]")
    single = x.ndim == 3
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    h = ad.relu(ad.conv2d(x, params["conv1.weight"], stride=2, bias=params["conv1.bias"]))
    h = ad.relu(ad.conv2d(h, params["conv2.weight"], stride=1, bias=params["conv2.bias"]))
    flat = ad.reshape(h, (h.shape[0], -1))
    if flat.shape[1] != params["fc.weight"].shape[0]:
        raise DimensionError(f"encoder flatten width {flat.shape[1]} does not match fc input {params['fc.weight'].shape[0]}")
    z = ad.tanh(ad.layernorm(linear(flat, params["fc.weight"], params["fc.bias"]), params["ln.gain"], params["ln.bias"]))
    return _unrow(z, single)


# --------------------------------------------------------------------------- projection φ

def init_projection(rng: np.random.Generator, latent_dim: int, hidden_dim: Optional[int] = None) -> ParamSet:
    hidden_dim = hidden_dim or latent_dim
    params = ParamSet()
    params.add("w1", orthogonal((latent_dim, hidden_dim), RELU_GAIN, rng))
    params.add("b1", np.zeros(hidden_dim))
    params.add("w2", orthogonal((hidden_dim, latent_dim), 1.0, rng))
    params.add("b2", np.zeros(latent_dim))
    return params


def projection_forward(params: Optional[ParamSet], z) -> DiffTensor:
    """``W2 · relu(W1 z + b1) + b2`` per row; ``params=None`` is the identity (projection ablation)."""
    rows, squeeze = _as_rows(z)
    if params is None:
        return _unrow(rows, squeeze)
    if rows.shape[1] != params["w1"].shape[0]:
        raise DimensionError(f"projection expects width {params['w1'].shape[0]}, got {rows.shape[1]}")
    hidden = ad.relu(linear(rows, params["w1"], params["b1"]))
    return _unrow(linear(hidden, params["w2"], params["b2"]), squeeze)


# --------------------------------------------------------------------------- Transformer ξ

def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal encodings: sin on even features, cos on odd ones."""
    if dim % 2:
        raise ConfigError(f"positional encoding needs an even width, got {dim}")
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = 1.0 / np.power(10000.0, np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates)
    return table


def init_transformer(rng: np.random.Generator, dim: int, blocks: int, ffn_dim: int) -> ParamSet:
    params = ParamSet()
    for b in range(blocks):
        p = f"block{b}"
        for name in ("wq", "wk", "wv"):
            params.add(f"{p}.{name}", orthogonal((dim, dim), 1.0, rng))
        params.add(f"{p}.ln1.gain", np.ones(dim))
        params.add(f"{p}.ln1.bias", np.zeros(dim))
        params.add(f"{p}.ln2.gain", np.ones(dim))
        params.add(f"{p}.ln2.bias", np.zeros(dim))
        params.add(f"{p}.w1", orthogonal((dim, ffn_dim), RELU_GAIN, rng))
        params.add(f"{p}.b1", np.zeros(ffn_dim))
        params.add(f"{p}.w2", orthogonal((ffn_dim, dim), 1.0, rng))
        params.add(f"{p}.b2", np.zeros(dim))
    params.add("final_ln.gain", np.ones(dim))
    params.add("final_ln.bias", np.zeros(dim))
    return params


def transformer_blocks(params: ParamSet) -> int:
    return len({name.split(".")[0] for name in params if name.startswith("block")})


def attention_weights(block: ParamSet, tokens) -> DiffTensor:
    """Row-softmax of ``q_i·k_j / √d`` over all T positions (no causal mask) for one sequence."""
    x = tokens if isinstance(tokens, DiffTensor) else DiffTensor(tokens)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionError(f"attention expects T×d tokens with T ≥ 1, got shape {x.shape}")
    q = ad.matmul(x, block["wq"])
    k = ad.matmul(x, block["wk"])
    scores = ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(x.shape[1]))
    return ad.softmax(scores, axis=-1)


def _attend(block: ParamSet, x: DiffTensor) -> DiffTensor:
    return ad.matmul(attention_weights(block, x), ad.matmul(x, block["wv"]))


def attention_block(block: ParamSet, tokens) -> DiffTensor:
    """Pre-norm residual self-attention: ``x + Attn(LN1(x))``."""
    x = tokens if isinstance(tokens, DiffTensor) else DiffTensor(tokens)
    normed = ad.layernorm(x, block["ln1.gain"], block["ln1.bias"])
    return ad.add(x, _attend(block, normed))


def ffn_block(block: ParamSet, tokens) -> DiffTensor:
    """Pre-norm residual feed-forward: ``x + W2·relu(W1·LN2(x) + b1) + b2``."""
    x = tokens if isinstance(tokens, DiffTensor) else DiffTensor(tokens)
    normed = ad.layernorm(x, block["ln2.gain"], block["ln2.bias"])
    hidden = ad.relu(linear(normed, block["w1"], block["b1"]))
    return ad.add(x, linear(hidden, block["w2"], block["b2"]))


def transformer_forward(params: ParamSet, tokens, add_positions: bool = True) -> DiffTensor:
    """Refine T×d (or B×T×d) token sequences; width and token count are preserved."""
    x = tokens if isinstance(tokens, DiffTensor) else DiffTensor(tokens)
    batched = x.ndim == 3
    if not batched:
        x = ad.reshape(x, (1,) + x.shape)
    batch, length, dim = x.shape
    if add_positions:
        x = ad.add(x, DiffTensor(np.broadcast_to(positional_encoding(length, dim), (batch, length, dim))))
    flat = ad.reshape(x, (batch * length, dim))
    for b in range(transformer_blocks(params)):
        block = params.scope(f"block{b}")
        normed = ad.layernorm(flat, block["ln1.gain"], block["ln1.bias"])
        attended = [
            _attend(block, ad.take(normed, slice(i * length, (i + 1) * length)))
            for i in range(batch)
        ]
        flat = ad.add(flat, ad.concat(attended, axis=0) if batch > 1 else attended[0])
        flat = ffn_block(block, flat)
    flat = ad.layernorm(flat, params["final_ln.gain"], params["final_ln.bias"])
    out = ad.reshape(flat, (batch, length, dim))
    return out if batched else ad.reshape(out, (length, dim))


# --------------------------------------------------------------------------- policy heads

@dataclass
class GaussianAction:
    """Diagonal Gaussian over (v_x, v_y, ω_z) with a state-independent log-std."""
    mean: DiffTensor
    log_std: DiffTensor

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std.values)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Unclamped sample; callers clamp to the action bounds before execution."""
        return self.mean.values + self.std * rng.standard_normal(self.mean.shape)

    def mode(self) -> np.ndarray:
        return self.mean.values.copy()

    def log_prob(self, actions) -> DiffTensor:
        """Per-row log density of (pre-clamp) actions."""
        mean, squeeze = _as_rows(self.mean)
        actions = np.asarray(actions, dtype=np.float64).reshape(mean.shape)
        scaled = ad.mul_row(ad.sub(DiffTensor(actions), mean), ad.exp(ad.mul(self.log_std, -1.0)))
        quad = ad.sum(ad.mul(scaled, scaled), axis=-1)
        norm = ad.add(ad.sum(self.log_std), 0.5 * mean.shape[1] * math.log(2.0 * math.pi))
        out = ad.sub(ad.mul(quad, -0.5), norm)
        return ad.reshape(out, ()) if squeeze else out

    def entropy(self) -> DiffTensor:
        return ad.add(ad.sum(self.log_std), 0.5 * self.log_std.shape[0] * math.log(2.0 * math.pi * math.e))


def init_mlp_head(rng: np.random.Generator, in_dim: int, out_dim: int, hidden: int, out_gain: float) -> ParamSet:
    """Input layernorm followed by two hidden layers of ``hidden`` ReLU units."""
    params = ParamSet()
    params.add("in_ln.gain", np.ones(in_dim))
    params.add("in_ln.bias", np.zeros(in_dim))
    params.add("fc1.weight", orthogonal((in_dim, hidden), RELU_GAIN, rng))
    params.add("fc1.bias", np.zeros(hidden))
    params.add("fc2.weight", orthogonal((hidden, hidden), RELU_GAIN, rng))
    params.add("fc2.bias", np.zeros(hidden))
    params.add("out.weight", orthogonal((hidden, out_dim), out_gain, rng))
    params.add("out.bias", np.zeros(out_dim))
    return params


def init_actor(rng: np.random.Generator, in_dim: int, hidden: int) -> ParamSet:
    params = init_mlp_head(rng, in_dim, ACTION_DIM, hidden, ACTOR_OUT_GAIN)
    params.add("log_std", np.zeros(ACTION_DIM))
    return params


def init_critic(rng: np.random.Generator, in_dim: int, hidden: int) -> ParamSet:
    return init_mlp_head(rng, in_dim, 1, hidden, 1.0)


def mlp_forward(params: ParamSet, obs: DiffTensor) -> DiffTensor:
    h = ad.layernorm(obs, params["in_ln.gain"], params["in_ln.bias"])
    h = ad.relu(linear(h, params["fc1.weight"], params["fc1.bias"]))
    h = ad.relu(linear(h, params["fc2.weight"], params["fc2.bias"]))
    return linear(h, params["out.weight"], params["out.bias"])


def _check_finite(params: ParamSet, label: str) -> None:
    for name, tensor in params.items():
        if not np.all(np.isfinite(tensor.values)):
            raise NumericError(f"{label}: non-finite values in parameter {name}")


def policy_forward(params: ParamSet, obs) -> GaussianAction:
    """Actor head: observation rows → diagonal Gaussian with log-std clamped to [−5, 2]."""
    _check_finite(params, "policy_forward")
    rows, squeeze = _as_rows(obs)
    mean = mlp_forward(params, rows)
    log_std = ad.clip(params["log_std"], LOG_STD_MIN, LOG_STD_MAX)
    return GaussianAction(_unrow(mean, squeeze), log_std)


def value_forward(params: ParamSet, obs) -> DiffTensor:
    """Critic head: observation rows → one value per row."""
    rows, squeeze = _as_rows(obs)
    values = ad.reshape(mlp_forward(params, rows), (rows.shape[0],))
    return ad.reshape(values, ()) if squeeze else values
