"""Per-round evaluation metrics."""

from __future__ import annotations

import numpy as np

from ..data import Samples
from ..split_model import SplitArch, SplitParams, full_gradient, predict


def test_accuracy(theta: SplitParams, arch: SplitArch, test: Samples) -> float:
    """Fraction of argmax predictions matching the labels (ties -> lowest class)."""
    if len(test) == 0:
        raise ValueError("empty test set")
    pred = np.argmax(predict(theta, arch, test.x), axis=1)
    return float(np.mean(pred == test.y))


def grad_norm_probe(theta: SplitParams, arch: SplitArch, probe: Samples) -> float:
    """Squared norm of the full-batch gradient of the mean loss on ``probe``."""
    if len(probe) == 0:
        raise ValueError("empty probe set")
    g = full_gradient(theta, arch, probe.x, probe.y)
    return float(g @ g)


def moving_average(series, window: int) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average the available prefix."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        seg = x[max(0, i + 1 - window):i + 1]
        out[i] = seg[0] + (seg - seg[0]).mean()  # shifted mean: exact on constant runs
    return out
