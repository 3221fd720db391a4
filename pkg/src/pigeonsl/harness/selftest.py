"""Fast oracle checks runnable from the command line (``pigeonsl selftest``)."""

from __future__ import annotations

import numpy as np

from .. import nn_core
from ..adversary import flip_label, tamper_activation, tamper_gradient
from ..pigeon import all_adversary_sets, has_honest_cluster, partition_clients
from ..split_model import SplitArch, SplitParams, full_gradient, batch_losses
from .config import DatasetSpec, ExperimentConfig
from .runner import overhead_report, run_experiment


def _random_arch(rng) -> SplitArch:
    """A small split MLP: 2-4 layers of width 2-5, cut after a random hidden layer."""
    widths = [int(w) for w in rng.integers(2, 6, size=rng.integers(3, 6))]
    cut = int(rng.integers(1, len(widths) - 1))
    return SplitArch.from_widths(widths[:cut + 1], widths[cut:])


def check_gradients(cases=10, seed=0) -> bool:
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        arch = _random_arch(rng)
        theta = nn_core.init_params(arch.layers, rng) + 0.1 * rng.standard_normal(arch.d)
        x = rng.standard_normal((3, arch.input_dim))
        y = rng.integers(0, arch.num_classes, 3)
        p = SplitParams.from_theta(arch, theta)
        analytic = full_gradient(p, arch, x, y)
        numeric = nn_core.finite_diff_grad(
            lambda th: float(np.mean(batch_losses(SplitParams.from_theta(arch, th), arch, x, y))), theta)
        if not np.all(np.abs(analytic - numeric) <= np.maximum(1e-5 * np.abs(numeric), 1e-8)):
            return False
    return True


def check_pigeonhole(seed=0) -> bool:
    rng = np.random.default_rng(seed)
    for M, N in ((4, 1), (6, 2), (12, 3)):
        for _ in range(10):
            a = partition_clients(M, N, rng)
            if not all(has_honest_cluster(a, adv) for adv in all_adversary_sets(M, N)):
                return False
    return True


def check_attacks(seed=0) -> bool:
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((50, 8))
    ok = [flip_label(y) for y in range(10)] == [(y + 3) % 10 for y in range(10)]
    ok &= np.array_equal(tamper_gradient(tamper_gradient(g)), g)
    out = tamper_activation(g, rng)
    noise_part = (out - 0.1 * g) / 0.9
    ok &= bool(np.allclose(np.linalg.norm(noise_part, axis=1), np.linalg.norm(g, axis=1), rtol=1e-12))
    return bool(ok)


def check_ledger() -> bool:
    for mode in ("vanilla", "pigeon", "pigeon_plus"):
        cfg = ExperimentConfig(
            mode=mode, M=4, N=1, T=2, E=2, B=5, lr=0.1, arch=SplitArch.from_widths([4, 3], [3, 3]),
            dataset=DatasetSpec("blobs", D_m=10, D_o=6, test_n=6, classes=3, dim=4), seed=1)
        result = run_experiment(cfg)
        if any(exp != sim for _, exp, sim in overhead_report(result)):
            return False
    return True


CHECKS = {
    "gradient oracle": check_gradients,
    "pigeonhole property": check_pigeonhole,
    "attack formulas": check_attacks,
    "ledger closed forms": check_ledger,
}


def run_selftest(echo=print) -> bool:
    ok = True
    for name, check in CHECKS.items():
        passed = check()
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'}  {name}")
    return ok
