"""Embedding MLP, Adam optimizer state, learning-rate schedule, checkpoints."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import DimensionError, Tensor, add, l2_normalize, matmul, relu


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant decay: lr(epoch) = initial * factor^(epoch // every)."""

    initial_lr: float
    decay_factor: float = 0.1
    decay_every: int = 150

    def __post_init__(self):
        if self.initial_lr <= 0.0 or self.decay_factor <= 0.0:
            raise ValueError("learning rate and decay factor must be positive")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1 epoch")

    def lr_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError(f"epoch must be >= 0, got {epoch}")
        return self.initial_lr * self.decay_factor ** (epoch // self.decay_every)


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    return schedule.lr_at(epoch)


class EmbeddingModel:
    """MLP mapping input vectors to d-dimensional embeddings.

    Hidden layers use ReLU; the final layer is linear, optionally followed
    by row-wise l2 normalization. Weights start uniform in
    [-1/sqrt(fan_in), +1/sqrt(fan_in)] from the seeded generator.
    """

    def __init__(self, layer_sizes, normalize_output: bool = True, seed: int = 0):
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2 or any(n < 1 for n in layer_sizes):
            raise ValueError(f"need at least input and output sizes, got {layer_sizes}")
        self.layer_sizes = layer_sizes
        self.normalize_output = bool(normalize_output)
        self.seed = int(seed)
        rng = np.random.default_rng([0x5EED, self.seed])
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out))))
            self.biases.append(Tensor(rng.uniform(-bound, bound, fan_out)))

    @classmethod
    def default(cls, d_in: int, normalize_output: bool = True, seed: int = 0):
        """The stock architecture: d_in -> 64 -> 32."""
        return cls([d_in, 64, 32], normalize_output=normalize_output, seed=seed)

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, batch: Tensor) -> Tensor:
        """Embed a batch of rows; output is [B x d_out]."""
        if batch.data.ndim != 2 or batch.data.shape[1] != self.d_in:
            raise DimensionError(
                f"batch width {batch.data.shape} does not match input "
                f"dimension {self.d_in}"
            )
        h = batch
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i != last:
                h = relu(h)
        if self.normalize_output:
            h = l2_normalize(h)
        return h

    def embed(self, features: np.ndarray) -> np.ndarray:
        """Tape-free forward over a plain array; rows are embeddings."""
        return self.forward(Tensor(np.atleast_2d(features))).data


@dataclass
class AdamState:
    """Adam moment accumulators; shapes mirror the parameter list."""

    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: EmbeddingModel, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        params = model.parameters()
        return cls(step=0,
                   m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params],
                   beta1=beta1, beta2=beta2, eps=eps)


def adam_step(model: EmbeddingModel, grads, state: AdamState, lr: float) -> None:
    """One Adam update with bias correction; mutates model and state."""
    params = model.parameters()
    if len(grads) != len(params):
        raise DimensionError(
            f"got {len(grads)} gradients for {len(params)} parameters")
    for g, p in zip(grads, params):
        if g.shape != p.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match parameter "
                f"shape {p.data.shape}"
            )
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params = []
    for k, (g, p) in enumerate(zip(grads, params)):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        new_params.append(Tensor(p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)))
    n_layers = len(model.weights)
    model.weights = [new_params[2 * i] for i in range(n_layers)]
    model.biases = [new_params[2 * i + 1] for i in range(n_layers)]


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "metasim-checkpoint-v1"


def save_checkpoint(path, model: EmbeddingModel, state: AdamState | None = None,
                    epoch: int = 0) -> None:
    """Write model weights, optimizer state, epoch and seed; round-trips bit-exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "layer_sizes": model.layer_sizes,
        "normalize_output": model.normalize_output,
        "seed": model.seed,
        "epoch": int(epoch),
        "weights": [w.data.tolist() for w in model.weights],
        "biases": [b.data.tolist() for b in model.biases],
        "adam": None if state is None else {
            "step": state.step,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "m": [m.tolist() for m in state.m],
            "v": [v.tolist() for v in state.v],
        },
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[EmbeddingModel, AdamState | None, int]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    model = EmbeddingModel(doc["layer_sizes"],
                           normalize_output=doc["normalize_output"],
                           seed=doc["seed"])
    model.weights = [Tensor(w) for w in doc["weights"]]
    model.biases = [Tensor(b) for b in doc["biases"]]
    state = None
    if doc["adam"] is not None:
        a = doc["adam"]
        state = AdamState(step=a["step"],
                          m=[np.array(m, dtype=np.float64) for m in a["m"]],
                          v=[np.array(v, dtype=np.float64) for v in a["v"]],
                          beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
    return model, state, doc["epoch"]
