"""Client behaviours: honest, or one of four message-level attacks.

An attacker still runs correct arithmetic on whatever messages flow;
attacks only rewrite the messages at four interception points:

* labels attached to the activation upload (``label_flip``)
* the activation upload itself (``activation_tamper``)
* the cut gradients received from the AP (``gradient_tamper``)
* the client-side parameters handed to the next clients (``param_swap``)

Validation and verification uploads on the shared set are always sent
untampered: a malicious client wants its cluster to look good.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from . import nn_core
from .errors import ConfigurationError
from .nn_core import LayerSpec
from .split_model import CutGradBatch

Role = Literal["honest", "malicious"]
Attack = Literal["label_flip", "activation_tamper", "gradient_tamper", "param_swap"]
ATTACKS = ("label_flip", "activation_tamper", "gradient_tamper", "param_swap")


def flip_label(y, num_classes: int = 10, shift: int = 3):
    """``(y + shift) mod K``; works on scalars and arrays."""
    y = np.asarray(y)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ValueError(f"label outside [0, {num_classes - 1}]")
    out = (y + shift) % num_classes
    return int(out) if out.ndim == 0 else out


def _row_norms(a: np.ndarray) -> np.ndarray:
    # scale by the row maximum first so tiny or huge entries do not under/overflow when squared
    peak = np.max(np.abs(a), axis=1, keepdims=True)
    safe = np.where(peak > 0, peak, 1.0)
    return peak * np.linalg.norm(a / safe, axis=1, keepdims=True)


def tamper_activation(g, rng: np.random.Generator, mix: float = 0.1, noise_weight: float = 0.9):
    """Mix activations with Gaussian noise rescaled to the activation norm.

    Accepts one vector or a batch of rows. For a batch the noise rows are
    drawn in sample order from ``rng``. Zero-norm rows map to zero.
    """
    g = np.asarray(g, dtype=np.float64)
    rows = np.atleast_2d(g)
    noise = rng.standard_normal(rows.shape)
    g_norm = _row_norms(rows)
    n_norm = _row_norms(noise)
    scaled = np.divide(g_norm, n_norm, out=np.zeros_like(g_norm), where=n_norm > 0) * noise
    out = mix * rows + noise_weight * scaled
    out[g_norm[:, 0] == 0.0] = 0.0
    return out.reshape(g.shape)


def tamper_gradient(cut_grads):
    """Reverse every cut-layer gradient row."""
    if isinstance(cut_grads, CutGradBatch):
        return CutGradBatch(-cut_grads.gradients)
    return -np.asarray(cut_grads, dtype=np.float64)


def swap_params(gamma: np.ndarray, rng: np.random.Generator, client_layers: Sequence[LayerSpec]) -> np.ndarray:
    """Replace the trained client half by a fresh random initialisation."""
    fake = nn_core.init_params(client_layers, rng)
    if fake.shape != gamma.shape:
        raise ConfigurationError("client layers do not match the parameter vector being swapped")
    return fake


@dataclass(frozen=True)
class BehaviorSpec:
    role: Role = "honest"
    attack: Attack | None = None
    shift: int = 3
    num_classes: int = 10
    mix: float = 0.1
    noise_weight: float = 0.9

    def __post_init__(self):
        if self.role == "honest" and self.attack is not None:
            raise ConfigurationError("an honest client cannot carry an attack")
        if self.role == "malicious" and self.attack not in ATTACKS:
            raise ConfigurationError(f"malicious client needs an attack in {ATTACKS}, got {self.attack!r}")
        if self.role not in ("honest", "malicious"):
            raise ConfigurationError(f"unknown role {self.role!r}")

    @classmethod
    def malicious(cls, attack: Attack, **params) -> "BehaviorSpec":
        return cls(role="malicious", attack=attack, **params)

    @property
    def is_malicious(self) -> bool:
        return self.role == "malicious"

    # interception points, applied in exchange order

    def outgoing_labels(self, y):
        if self.attack == "label_flip":
            return flip_label(y, self.num_classes, self.shift)
        return y

    def outgoing_activations(self, acts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.attack == "activation_tamper":
            return tamper_activation(acts, rng, self.mix, self.noise_weight)
        return acts

    def incoming_gradients(self, cut):
        if self.attack == "gradient_tamper":
            return tamper_gradient(cut)
        return cut

    def outgoing_handoff(self, gamma: np.ndarray, rng: np.random.Generator, client_layers) -> np.ndarray:
        """Parameters sent to the next round's first clients."""
        if self.attack == "param_swap":
            return swap_params(gamma, rng, client_layers)
        return gamma


HONEST = BehaviorSpec()
