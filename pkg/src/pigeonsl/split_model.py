"""Cut-layer split of an MLP into a client half and an AP half.

The four-step exchange of one mini-batch is::

    acts, ctape = client_forward(gamma, arch, x, y)       # client -> AP
    losses, atape = ap_forward_loss(phi, arch, acts)
    grad_phi, cut = ap_backward(phi, arch, atape, acts.labels)  # AP -> client
    grad_gamma = client_backward(gamma, arch, ctape, cut)

Cut gradients travel per sample; each side averages its own parameter
gradient over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn_core
from .errors import ConfigurationError, ContractError, NumericError
from .nn_core import LayerSpec, Tape


@dataclass(frozen=True)
class SplitArch:
    client_layers: tuple[LayerSpec, ...]
    ap_layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "client_layers", nn_core.check_arch(self.client_layers))
        object.__setattr__(self, "ap_layers", nn_core.check_arch(self.ap_layers))
        if self.client_layers[-1].fan_out != self.ap_layers[0].fan_in:
            raise ConfigurationError(
                f"cut mismatch: client emits {self.client_layers[-1].fan_out}, "
                f"AP expects {self.ap_layers[0].fan_in}"
            )

    @classmethod
    def from_widths(cls, client: Sequence[int], ap: Sequence[int], hidden="relu"):
        """Build from width lists, e.g. ``([784, 32], [32, 10])``.

        Every layer uses ``hidden`` except the final AP layer (identity).
        """
        client_layers = [LayerSpec(a, b, hidden) for a, b in zip(client, client[1:])]
        ap_pairs = list(zip(ap, ap[1:]))
        ap_layers = [
            LayerSpec(a, b, "identity" if i == len(ap_pairs) - 1 else hidden)
            for i, (a, b) in enumerate(ap_pairs)
        ]
        return cls(tuple(client_layers), tuple(ap_layers))

    @property
    def layers(self) -> tuple[LayerSpec, ...]:
        return self.client_layers + self.ap_layers

    @property
    def input_dim(self) -> int:
        return self.client_layers[0].fan_in

    @property
    def d_c(self) -> int:
        return self.client_layers[-1].fan_out

    @property
    def d_cl(self) -> int:
        return nn_core.param_count(self.client_layers)

    @property
    def d_ap(self) -> int:
        return nn_core.param_count(self.ap_layers)

    @property
    def d(self) -> int:
        return self.d_cl + self.d_ap

    @property
    def num_classes(self) -> int:
        return self.ap_layers[-1].fan_out


@dataclass
class SplitParams:
    gamma: np.ndarray
    phi: np.ndarray

    @classmethod
    def init(cls, arch: SplitArch, seed) -> "SplitParams":
        theta = nn_core.init_params(arch.layers, seed)
        return cls.from_theta(arch, theta)

    @classmethod
    def from_theta(cls, arch: SplitArch, theta: np.ndarray) -> "SplitParams":
        if theta.shape != (arch.d,):
            raise ContractError(f"theta has shape {theta.shape}, expected ({arch.d},)")
        return cls(theta[:arch.d_cl].copy(), theta[arch.d_cl:].copy())

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.gamma, self.phi])

    def copy(self) -> "SplitParams":
        return SplitParams(self.gamma.copy(), self.phi.copy())

    def equals(self, other: "SplitParams") -> bool:
        return np.array_equal(self.gamma, other.gamma) and np.array_equal(self.phi, other.phi)


@dataclass
class ActivationBatch:
    activations: np.ndarray  # (B, d_c)
    labels: np.ndarray  # (B,)
    origin_client: int | None = None

    def __post_init__(self):
        if self.activations.ndim != 2 or self.activations.shape[0] != self.labels.shape[0]:
            raise ContractError("activation rows and labels must pair one-to-one")

    def __len__(self):
        return self.activations.shape[0]


@dataclass
class CutGradBatch:
    gradients: np.ndarray  # (B, d_c)

    def __len__(self):
        return self.gradients.shape[0]


@dataclass
class ParamHandoff:
    gamma: np.ndarray
    sender: int
    recipient: int


def client_forward(gamma, arch: SplitArch, x, y, origin_client=None) -> tuple[ActivationBatch, Tape]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if x.shape[0] == 0:
        raise ContractError("empty batch")
    if x.shape[0] != y.shape[0]:
        raise ContractError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
    acts, tape = nn_core.forward(gamma, arch.client_layers, x)
    return ActivationBatch(acts, y, origin_client), tape


def ap_forward_loss(phi, arch: SplitArch, batch: ActivationBatch) -> tuple[np.ndarray, Tape]:
    acts = batch.activations
    if acts.shape[1] != arch.d_c:
        raise ContractError(f"activation width {acts.shape[1]} != cut width {arch.d_c}")
    if not np.all(np.isfinite(acts)):
        raise NumericError("non-finite activations received at the cut layer")
    logits, tape = nn_core.forward(phi, arch.ap_layers, acts)
    losses, _ = nn_core.softmax_cross_entropy(logits, batch.labels)
    return losses, tape


def ap_backward(phi, arch: SplitArch, tape: Tape, labels) -> tuple[np.ndarray, CutGradBatch]:
    """Batch-mean gradient of ``phi`` plus per-sample cut-layer gradients."""
    labels = np.asarray(labels)
    if labels.shape[0] != tape.output.shape[0]:
        raise ContractError("label count does not match the AP tape")
    _, dlogits = nn_core.softmax_cross_entropy(tape.output, labels)
    grad_sum, cut = nn_core.backward(phi, arch.ap_layers, tape, dlogits)
    return grad_sum / labels.shape[0], CutGradBatch(cut)


def client_backward(gamma, arch: SplitArch, tape: Tape, cut: CutGradBatch) -> np.ndarray:
    n = tape.output.shape[0]
    if cut.gradients.shape != tape.output.shape:
        raise ContractError(
            f"cut gradient shape {cut.gradients.shape} does not answer activations {tape.output.shape}"
        )
    grad_sum, _ = nn_core.backward(gamma, arch.client_layers, tape, cut.gradients)
    return grad_sum / n


def batch_losses(params: SplitParams, arch: SplitArch, x, y) -> np.ndarray:
    """Per-sample losses of the full model, computed through the split path."""
    acts, _ = client_forward(params.gamma, arch, x, y)
    losses, _ = ap_forward_loss(params.phi, arch, acts)
    return losses


def mean_loss(params: SplitParams, arch: SplitArch, x, y) -> float:
    return float(np.mean(batch_losses(params, arch, x, y)))


def full_gradient(params: SplitParams, arch: SplitArch, x, y) -> np.ndarray:
    """Gradient of the batch-mean loss w.r.t. the concatenated ``theta``."""
    acts, ctape = client_forward(params.gamma, arch, x, y)
    _, atape = ap_forward_loss(params.phi, arch, acts)
    g_phi, cut = ap_backward(params.phi, arch, atape, acts.labels)
    g_gamma = client_backward(params.gamma, arch, ctape, cut)
    return np.concatenate([g_gamma, g_phi])


def predict(params: SplitParams, arch: SplitArch, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    acts, _ = nn_core.forward(params.gamma, arch.client_layers, x)
    logits, _ = nn_core.forward(params.phi, arch.ap_layers, acts)
    return logits
