"""Dense MLP forward/backward, softmax cross-entropy and plain SGD.

Parameters live in one flat float64 vector. Each layer occupies a
contiguous block: the weight matrix ``W`` of shape ``(fan_out, fan_in)``
in row-major order followed by the bias ``b`` of length ``fan_out``, so
a layer computes ``z = W @ x + b``.

Inputs may be a single sample (1-D) or a batch of samples (2-D, one row
per sample). Batched calls are defined as a map over rows; ``backward``
on a batch returns the *sum* of the per-row parameter gradients together
with the per-row input gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DataError, NumericError

Activation = Literal["relu", "identity"]


@dataclass(frozen=True)
class LayerSpec:
    fan_in: int
    fan_out: int
    activation: Activation = "identity"

    def __post_init__(self):
        if int(self.fan_in) < 1 or int(self.fan_out) < 1:
            raise ConfigurationError(f"layer widths must be >= 1, got {self.fan_in}->{self.fan_out}")
        if self.activation not in ("relu", "identity"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.fan_in * self.fan_out + self.fan_out


@dataclass
class Tape:
    """Values cached by :func:`forward` for reuse in :func:`backward`."""

    arch: tuple[LayerSpec, ...]
    n_params: int
    inputs: list[np.ndarray]  # post-activation entering each layer
    pre: list[np.ndarray]  # pre-activation z of each layer
    post: list[np.ndarray]  # post-activation of each layer
    batched: bool

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


def check_arch(arch: Sequence[LayerSpec]) -> tuple[LayerSpec, ...]:
    arch = tuple(arch)
    if not arch:
        raise ConfigurationError("architecture must contain at least one layer")
    for prev, nxt in zip(arch, arch[1:]):
        if prev.fan_out != nxt.fan_in:
            raise ConfigurationError(
                f"dimension mismatch: layer emits {prev.fan_out} but next layer expects {nxt.fan_in}"
            )
    return arch


def param_count(arch: Sequence[LayerSpec]) -> int:
    return sum(layer.n_params for layer in arch)


def unpack(params: np.ndarray, arch: Sequence[LayerSpec]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Return ``(W, b)`` views into ``params`` for every layer."""
    if params.ndim != 1 or params.shape[0] != param_count(arch):
        raise ContractError(
            f"parameter vector has shape {params.shape}, architecture needs {param_count(arch)}"
        )
    out = []
    offset = 0
    for layer in arch:
        n_w = layer.fan_in * layer.fan_out
        W = params[offset:offset + n_w].reshape(layer.fan_out, layer.fan_in)
        offset += n_w
        b = params[offset:offset + layer.fan_out]
        offset += layer.fan_out
        out.append((W, b))
    return out


def init_params(arch: Sequence[LayerSpec], seed: int | np.random.Generator) -> np.ndarray:
    """Weights uniform in +-1/sqrt(fan_in), biases zero.

    ``seed`` may also be an existing generator, which is then advanced.
    """
    arch = check_arch(arch)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chunks = []
    for layer in arch:
        bound = 1.0 / np.sqrt(layer.fan_in)
        chunks.append(rng.uniform(-bound, bound, size=layer.fan_in * layer.fan_out))
        chunks.append(np.zeros(layer.fan_out))
    return np.concatenate(chunks).astype(np.float64)


def forward(params: np.ndarray, arch: Sequence[LayerSpec], x) -> tuple[np.ndarray, Tape]:
    arch = tuple(arch)
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != arch[0].fan_in:
        raise ContractError(f"input of shape {x.shape} does not match fan_in {arch[0].fan_in}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite value in network input")
    layers = unpack(params, arch)
    tape = Tape(arch, params.shape[0], [], [], [], batched)
    a = x
    for layer, (W, b) in zip(arch, layers):
        tape.inputs.append(a)
        z = a @ W.T + b
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        tape.pre.append(z)
        tape.post.append(a)
    return a, tape


def backward(params: np.ndarray, arch: Sequence[LayerSpec], tape: Tape, dloss_doutput):
    """Backpropagate ``dloss_doutput`` through the cached forward pass.

    Returns ``(grad, dloss_dinput)``. For a batched tape ``grad`` is the
    sum over rows. The ReLU subgradient at exactly zero is taken as 0.
    """
    arch = tuple(arch)
    if tape.arch != arch or tape.n_params != params.shape[0]:
        raise ContractError("tape was produced by a different architecture or parameter vector")
    delta = np.asarray(dloss_doutput, dtype=np.float64)
    if delta.shape != tape.output.shape:
        raise ContractError(f"output gradient shape {delta.shape} != output shape {tape.output.shape}")
    layers = unpack(params, arch)
    grad = np.empty_like(params)
    offset = params.shape[0]
    for i in range(len(arch) - 1, -1, -1):
        layer = arch[i]
        W, _ = layers[i]
        if layer.activation == "relu":
            delta = delta * (tape.pre[i] > 0.0)
        a_in = tape.inputs[i]
        if tape.batched:
            dW = delta.T @ a_in
            db = delta.sum(axis=0)
        else:
            dW = np.outer(delta, a_in)
            db = delta
        offset -= layer.fan_out
        grad[offset:offset + layer.fan_out] = db
        n_w = layer.fan_in * layer.fan_out
        offset -= n_w
        grad[offset:offset + n_w] = dW.ravel()
        delta = delta @ W
    return grad, delta


def softmax_cross_entropy(logits, y):
    """Cross-entropy of ``softmax(logits)`` against integer label(s) ``y``.

    Returns ``(loss, dloss_dlogits)``; both are per-row for 2-D logits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    k = logits.shape[-1]
    y = np.asarray(y)
    if np.any(y < 0) or np.any(y >= k):
        raise DataError(f"label outside [0, {k - 1}]")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_p = shifted - log_z
    probs = np.exp(log_p)
    if logits.ndim == 1:
        loss = -log_p[int(y)]
        grad = probs.copy()
        grad[int(y)] -= 1.0
        return float(loss), grad
    rows = np.arange(logits.shape[0])
    loss = -log_p[rows, y]
    grad = probs
    grad[rows, y] -= 1.0
    return loss, grad


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if params.shape != grad.shape:
        raise ContractError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if not lr >= 0.0 or not np.isfinite(lr):
        raise ConfigurationError(f"learning rate must be finite and >= 0, got {lr}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    return params - lr * grad


def finite_diff_grad(f: Callable[[np.ndarray], float], params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    params = np.asarray(params, dtype=np.float64)
    grad = np.empty_like(params)
    probe = params.copy()
    for i in range(params.shape[0]):
        orig = probe[i]
        probe[i] = orig + h
        up = f(probe)
        probe[i] = orig - h
        down = f(probe)
        probe[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad
