"""End-to-end experiment execution and the CSV/text outputs."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import data as datamod
from .. import ledger as lk
from ..data import DatasetBundle, Samples
from ..ledger import TrafficLedger
from ..pigeon import SimulationState, run_global_round
from ..protocol import ClientState, run_vanilla_round, stream
from ..split_model import SplitParams, mean_loss
from . import metrics
from .config import DatasetSpec, ExperimentConfig
from .overhead import Overhead, expected_overhead

log = logging.getLogger(__name__)

INIT_STREAM = 3

ROUND_FIELDS = (
    "round", "clusters", "losses", "selected", "selected_honest", "detections", "fallback",
    "adopted_turns", "total_turns", "val_loss", "test_accuracy", "grad_norm_sq",
)


@dataclass
class RoundRecord:
    round: int
    clusters: str
    losses: tuple[float, ...]
    selected: int  # 0 when the round fell back to the previous parameters
    selected_honest: bool
    detections: int
    fallback: bool
    adopted_turns: int
    total_turns: int
    val_loss: float
    test_accuracy: float
    grad_norm_sq: float  # at the parameters entering the round
    traffic: dict[str, int] = field(default_factory=dict, repr=False)

    def row(self) -> list[str]:
        return [
            str(self.round), self.clusters, ";".join(repr(x) for x in self.losses), str(self.selected),
            str(int(self.selected_honest)), str(self.detections), str(int(self.fallback)),
            str(self.adopted_turns), str(self.total_turns), repr(self.val_loss),
            repr(self.test_accuracy), repr(self.grad_norm_sq),
        ]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    theta: SplitParams
    ledger: TrafficLedger
    theta_init: SplitParams

    def accuracies(self) -> np.ndarray:
        return np.array([r.test_accuracy for r in self.records])

    def expected(self) -> Overhead:
        return config_overhead(self.config)


def build_dataset(spec: DatasetSpec, M: int, seed: int) -> DatasetBundle:
    data_seed = seed if spec.seed is None else spec.seed
    held_out = None
    if spec.kind == "blobs":
        n = spec.n or M * spec.D_m + spec.D_o + spec.test_n
        pool = datamod.gen_blobs(spec.classes, spec.dim, n, spec.spread, data_seed)
    elif spec.kind == "idx":
        pool = datamod.load_idx(spec.images, spec.labels)
        if spec.test_images:
            held_out = datamod.load_idx(spec.test_images, spec.test_labels)
    else:
        pool = datamod.load_mnist_subset()
    return datamod.make_bundle(pool, M, spec.D_m, spec.D_o, spec.test_n, data_seed, held_out=held_out)


def training_pool(bundle: DatasetBundle) -> Samples:
    """All client shards together; its mean loss is the D_m-weighted training objective."""
    shards = bundle.client_shards
    return Samples(np.concatenate([s.x for s in shards]), np.concatenate([s.y for s in shards]))


def config_overhead(config: ExperimentConfig, rounds: int | None = None) -> Overhead:
    """Closed-form totals over ``rounds`` (default: all T) global rounds."""
    a = config.arch
    per = expected_overhead(config.mode, config.M, config.cluster_size, config.R,
                            config.E * config.B, config.dataset.D_o, a.d_c, a.d_cl)
    k = config.T if rounds is None else rounds
    return Overhead(*(k * v for v in per))


def initial_params(config: ExperimentConfig) -> SplitParams:
    return SplitParams.init(config.arch, stream(config.seed, INIT_STREAM))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_experiment(config: ExperimentConfig, out_dir=None, bundle: DatasetBundle | None = None,
                   on_round=None) -> ExperimentResult:
    """Run T global rounds and, with ``out_dir``, write rounds/ledger/summary files.

    ``rounds.csv`` is appended and flushed after every round.
    """
    if bundle is None:
        bundle = build_dataset(config.dataset, config.M, config.seed)
    arch = config.arch
    if bundle.shared.dim != arch.input_dim:
        raise ValueError(f"data has {bundle.shared.dim} features, network expects {arch.input_dim}")
    clients = {
        m: ClientState(m, bundle.client_shards[m - 1], config.behavior(m)) for m in range(1, config.M + 1)
    }
    shared, test = bundle.shared, bundle.test
    probe = shared if config.grad_probe == "shared" else training_pool(bundle)
    ledger = TrafficLedger()
    theta0 = initial_params(config)
    state = SimulationState(arch, clients, shared, theta0.copy(), config.N, config.E, config.B,
                            config.lr, config.seed, ledger, eps=config.eps)
    malicious = set(config.malicious)

    out = Path(out_dir) if out_dir is not None else None
    fh = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "rounds.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROUND_FIELDS)

    records = []
    try:
        for t in range(1, config.T + 1):
            theta_t = state.theta
            grad_sq = metrics.grad_norm_probe(theta_t, arch, probe)
            if config.mode == "vanilla":
                theta_next, order = run_vanilla_round(clients, theta_t, arch, config.E, config.B,
                                                      config.lr, seed=config.seed, round_=t, ledger=ledger)
                state.theta, state.t = theta_next, t + 1
                clusters = ",".join(map(str, order))
                members = order
                selected, detections, fallback, turns = 1, 0, False, config.M
            else:
                outcome = run_global_round(state, config.mode)
                clusters = outcome.assignment.describe()
                selected = outcome.selected or 0
                members = outcome.assignment.clusters[selected - 1] if selected else ()
                detections, fallback, turns = len(outcome.detections), outcome.fallback, outcome.turns
            theta_next = state.theta
            val_loss = mean_loss(theta_next, arch, shared.x, shared.y)
            losses = ((val_loss,) if config.mode == "vanilla" else outcome.losses)
            record = RoundRecord(
                round=t, clusters=clusters, losses=losses, selected=selected,
                selected_honest=bool(members) and malicious.isdisjoint(members),
                detections=detections, fallback=fallback, adopted_turns=turns,
                total_turns=ledger.total(lk.CLIENT_TURN, round_=t), val_loss=val_loss,
                test_accuracy=metrics.test_accuracy(theta_next, arch, test), grad_norm_sq=grad_sq,
                traffic={k: ledger.total(k, round_=t) for k in lk.KINDS},
            )
            records.append(record)
            if writer is not None:
                writer.writerow(record.row())
                fh.flush()
            if on_round is not None:
                on_round(record)
            log.info("round %d acc=%.4f val=%.4f selected=%s", t, record.test_accuracy, val_loss, selected)
    finally:
        if fh is not None:
            fh.close()

    result = ExperimentResult(config, records, state.theta, ledger, theta0)
    if out is not None:
        _write_rows(out / "ledger.csv", ("round", "cluster", "kind", "units"), ledger.rows())
        (out / "summary.txt").write_text(summary_text(result))
    return result


def overhead_report(result: ExperimentResult) -> list[tuple[str, int, int]]:
    """(quantity, expected, simulated) for the closed-form totals.

    The table forms assume detection-free rounds; retries after a detected
    tamper are reported on their own rows.
    """
    exp = result.expected()
    led = result.ledger
    rows = [
        ("comm_total", exp.comm_total, led.table_comm()),
        ("compute_total", exp.compute_total, led.table_compute()),
    ]
    if result.config.mode == "pigeon_plus":
        rows += [
            ("reference_comm", exp.reference_comm, led.total(lk.REFERENCE_ACTIVATION)),
            ("reference_compute", exp.reference_compute, led.total(lk.REFERENCE_PASS)),
        ]
    retries = sum(r.detections - r.fallback for r in result.records)
    if retries:
        cfg, a = result.config, result.config.arch
        rows += [
            ("rollback_comm", retries * cfg.R * (a.d_cl + cfg.dataset.D_o * a.d_c),
             led.total(lk.ROLLBACK_HANDOFF, lk.ROLLBACK_VERIFY_ACTIVATION)),
            ("rollback_compute", retries * cfg.R * cfg.dataset.D_o, led.total(lk.ROLLBACK_VERIFY_PASS)),
        ]
    return rows


def summary_text(result: ExperimentResult) -> str:
    cfg = result.config
    recs = result.records
    acc = result.accuracies()
    lines = [
        f"mode: {cfg.mode}",
        f"clients: {cfg.M}  tolerated: {cfg.N}  clusters: {cfg.R}  malicious: {list(cfg.malicious)}",
        f"rounds: {len(recs)}",
    ]
    if recs:
        ma = metrics.moving_average(acc, 10)
        lines += [
            f"final_test_accuracy: {float(acc[-1])!r}",
            f"final_moving_average_10: {float(ma[-1])!r}",
            f"detections: {sum(r.detections for r in recs)}",
            f"fallback_rounds: {sum(r.fallback for r in recs)}",
            f"selected_all_honest_rounds: {sum(r.selected_honest for r in recs)}",
        ]
        hist = Counter(r.selected for r in recs)
        lines.append("selection_histogram: " + " ".join(f"{k}:{hist[k]}" for k in sorted(hist)))
    lines.append("overheads (expected / simulated):")
    for name, exp, sim in overhead_report(result):
        lines.append(f"  {name}: {exp} / {sim} {'ok' if exp == sim else 'MISMATCH'}")
    return "\n".join(lines) + "\n"
