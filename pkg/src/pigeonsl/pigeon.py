"""Pigeonhole cluster selection for split learning.

Each global round the AP splits the M clients into R = N + 1 clusters,
trains every cluster from the same starting parameters, scores each
cluster's result on the shared validation set and keeps the best one.
With at most N malicious clients at least one cluster is all-honest.

The winning cluster's last client then hands its client half to the
first client of every next-round cluster. Each of those re-uploads the
shared-set activations computed with what it received; any difference
from the activations scored at selection time exposes a tampered
handoff, and the AP falls back to the next-best stored candidate.

In ``pigeon_plus`` mode the selected cluster trains R - 1 more times
before the handoff, so M client turns feed the adopted model.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Mapping, NamedTuple, Sequence

import numpy as np

from . import ledger as lk
from .data import Samples
from .errors import ConfigurationError, ContractError, NumericError, RoundFailure
from .ledger import LedgerScope, TrafficLedger
from .protocol import ClientState, client_order, handoff_rng, partition_rng, run_cluster_round
from .split_model import SplitArch, SplitParams, ap_forward_loss, client_forward

log = logging.getLogger(__name__)

Mode = Literal["pigeon", "pigeon_plus"]


@dataclass(frozen=True)
class ClusterAssignment:
    round: int
    clusters: tuple[tuple[int, ...], ...]

    @property
    def R(self) -> int:
        return len(self.clusters)

    @property
    def cluster_size(self) -> int:
        return len(self.clusters[0])

    @property
    def first_clients(self) -> tuple[int, ...]:
        return tuple(c[0] for c in self.clusters)

    @property
    def last_clients(self) -> tuple[int, ...]:
        return tuple(c[-1] for c in self.clusters)

    def describe(self) -> str:
        return "|".join(",".join(map(str, c)) for c in self.clusters)


def partition_clients(M: int, N: int, rng: np.random.Generator, round_: int = 0) -> ClusterAssignment:
    """Random permutation of 1..M cut into N + 1 consecutive equal blocks."""
    if N < 0 or M < 1:
        raise ConfigurationError(f"need M >= 1 and N >= 0, got M={M}, N={N}")
    R = N + 1
    if M % R:
        raise ConfigurationError(f"M={M} clients cannot form {R} equal clusters")
    size = M // R
    order = client_order(M, rng)
    return ClusterAssignment(round_, tuple(order[i * size:(i + 1) * size] for i in range(R)))


def has_honest_cluster(assignment: ClusterAssignment, adversaries: Iterable[int]) -> bool:
    bad = set(adversaries)
    return any(bad.isdisjoint(c) for c in assignment.clusters)


class Evaluation(NamedTuple):
    loss: float
    activations: np.ndarray  # (D_o, d_c) as uploaded by the evaluating client


def evaluate_validation_loss(theta: SplitParams, arch: SplitArch, last_client: ClientState,
                             shared: Samples, ledger: LedgerScope | None = None,
                             reference: bool = False) -> Evaluation:
    """Mean shared-set loss of ``theta``; activations come from ``last_client``.

    The upload is honest whatever the client's behaviour. ``reference``
    books the traffic as a post-subround reference upload instead of a
    selection-time one.
    """
    if len(shared) == 0:
        raise ConfigurationError("shared validation set is empty")
    acts, _ = client_forward(theta.gamma, arch, shared.x, shared.y, last_client.id)
    losses, _ = ap_forward_loss(theta.phi, arch, acts)
    if ledger is not None:
        act_kind, pass_kind = ((lk.REFERENCE_ACTIVATION, lk.REFERENCE_PASS) if reference
                               else (lk.EVAL_ACTIVATION, lk.EVAL_PASS))
        ledger.add(act_kind, len(shared) * arch.d_c)
        ledger.add(pass_kind, len(shared))
    return Evaluation(float(np.mean(losses)), acts.activations)


def select_cluster(losses: Sequence[float]) -> int:
    """1-based argmin over finite losses; ties go to the lowest index."""
    if len(losses) == 0:
        raise ConfigurationError("no clusters to select from")
    best, best_loss = None, math.inf
    for r, loss in enumerate(losses, 1):
        if math.isfinite(loss) and (best is None or loss < best_loss):
            best, best_loss = r, loss
    if best is None:
        raise RoundFailure("every cluster produced a non-finite validation loss")
    return best


@dataclass(frozen=True)
class HandoffCheck:
    flagged: tuple[int, ...]  # first clients whose uploads disagree with the reference
    max_abs_diff: float

    @property
    def ok(self) -> bool:
        return not self.flagged


def verify_handoff(reference: np.ndarray, first_clients_acts: Mapping[int, np.ndarray],
                   eps: float = 0.0) -> HandoffCheck:
    reference = np.asarray(reference)
    flagged = []
    worst = 0.0
    for cid, acts in first_clients_acts.items():
        acts = np.asarray(acts)
        if acts.shape != reference.shape:
            raise ContractError(f"client {cid} uploaded {acts.shape}, reference is {reference.shape}")
        diff = float(np.max(np.abs(acts - reference))) if acts.size else 0.0
        if not diff <= eps:  # NaN counts as a mismatch
            flagged.append(cid)
        worst = max(worst, diff) if math.isfinite(diff) else math.inf
    return HandoffCheck(tuple(flagged), worst)


@dataclass
class DetectionEvent:
    round: int
    cluster: int
    sender: int
    flagged: tuple[int, ...]


@dataclass
class RoundOutcome:
    round: int
    selected: int | None
    losses: tuple[float, ...]
    theta_next: SplitParams
    candidates: list[SplitParams | None]
    references: list[np.ndarray | None]
    last_clients: tuple[int, ...]
    theta_prev: SplitParams
    adopted_turns: list[int]
    assignment: ClusterAssignment | None = None
    detections: list[DetectionEvent] = field(default_factory=list)
    disqualified: frozenset = frozenset()
    fallback: bool = False
    final_loss: float | None = None

    @property
    def turns(self) -> int:
        """Client turns behind the adopted model (0 on fallback)."""
        return 0 if self.selected is None else self.adopted_turns[self.selected - 1]


def rollback_reselect(outcome: RoundOutcome, disqualified: int) -> RoundOutcome:
    """Drop a cluster found tampered and adopt the best remaining candidate.

    With nothing left the round becomes a no-op: the previous global
    parameters are kept.
    """
    gone = outcome.disqualified | {disqualified}
    remaining = [math.nan if r in gone else loss for r, loss in enumerate(outcome.losses, 1)]
    try:
        r = select_cluster(remaining)
    except RoundFailure:
        log.warning("round %s: every candidate disqualified, keeping previous parameters", outcome.round)
        return replace(outcome, selected=None, disqualified=gone, fallback=True,
                       theta_next=outcome.theta_prev.copy(), final_loss=None)
    return replace(outcome, selected=r, disqualified=gone, theta_next=outcome.candidates[r - 1].copy(),
                   final_loss=outcome.losses[r - 1])


@dataclass
class SimulationState:
    arch: SplitArch
    clients: dict[int, ClientState]
    shared: Samples
    theta: SplitParams
    N: int
    E: int
    B: int
    lr: float
    seed: int
    ledger: TrafficLedger = field(default_factory=TrafficLedger)
    eps: float = 0.0
    t: int = 1
    assignment: ClusterAssignment | None = None

    @property
    def M(self) -> int:
        return len(self.clients)

    def partition(self, round_: int) -> ClusterAssignment:
        return partition_clients(self.M, self.N, partition_rng(self.seed, round_), round_)


def run_global_round(state: SimulationState, mode: Mode = "pigeon") -> RoundOutcome:
    """Train, score and select one round, then hand off and verify.

    Advances ``state`` to the next round and returns what happened.
    """
    if mode not in ("pigeon", "pigeon_plus"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    t, arch, ledger = state.t, state.arch, state.ledger
    assignment = state.assignment if state.assignment is not None else state.partition(t)
    if assignment.round != t:
        raise ContractError(f"assignment is for round {assignment.round}, state is at round {t}")
    train = dict(E=state.E, B=state.B, lr=state.lr, seed=state.seed, round_=t, ledger=ledger)

    candidates, references, losses = [], [], []
    for r, members in enumerate(assignment.clusters, 1):
        try:
            theta_r = run_cluster_round(members, state.clients, state.theta, arch,
                                        cluster_index=r, **train)
            ev = evaluate_validation_loss(theta_r, arch, state.clients[members[-1]], state.shared,
                                          ledger.scope(t, r))
        except NumericError as err:
            log.warning("round %d cluster %d diverged and is disqualified: %s", t, r, err)
            theta_r, ev = None, Evaluation(math.nan, None)
        candidates.append(theta_r)
        references.append(ev.activations)
        losses.append(ev.loss)
    selected = select_cluster(losses)
    adopted_turns = [assignment.cluster_size] * assignment.R
    final_loss = losses[selected - 1]

    if mode == "pigeon_plus" and assignment.R > 1:
        members = assignment.clusters[selected - 1]
        theta_sel = candidates[selected - 1]
        for sub in range(1, assignment.R):
            ledger.add(t, selected, lk.HANDOFF, arch.d_cl)  # last client -> first client
            theta_sel = run_cluster_round(members, state.clients, theta_sel, arch,
                                          cluster_index=selected, subround=sub, **train)
        ev = evaluate_validation_loss(theta_sel, arch, state.clients[members[-1]], state.shared,
                                      ledger.scope(t, selected), reference=True)
        candidates[selected - 1] = theta_sel
        references[selected - 1] = ev.activations
        adopted_turns[selected - 1] = assignment.R * assignment.cluster_size
        final_loss = ev.loss

    outcome = RoundOutcome(
        round=t, selected=selected, losses=tuple(losses), theta_next=candidates[selected - 1].copy(),
        candidates=candidates, references=references, last_clients=assignment.last_clients,
        theta_prev=state.theta, adopted_turns=adopted_turns, assignment=assignment,
        final_loss=final_loss,
    )
    next_assignment = state.partition(t + 1)
    outcome = handoff_and_verify(state, outcome, next_assignment)
    state.theta = outcome.theta_next
    state.t = t + 1
    state.assignment = next_assignment
    return outcome


def handoff_and_verify(state: SimulationState, outcome: RoundOutcome,
                       next_assignment: ClusterAssignment) -> RoundOutcome:
    """Deliver the selected client half to next round's first clients and check it."""
    arch, ledger, t, shared = state.arch, state.ledger, outcome.round, state.shared
    kinds = (lk.HANDOFF, lk.VERIFY_ACTIVATION, lk.VERIFY_PASS)
    while outcome.selected is not None:
        r = outcome.selected
        sender = state.clients[outcome.last_clients[r - 1]]
        kept = outcome.candidates[r - 1]
        sent = sender.behavior.outgoing_handoff(kept.gamma, handoff_rng(state.seed, sender.id, t),
                                                arch.client_layers)
        uploads = {}
        for r_next, first in enumerate(next_assignment.first_clients, 1):
            ledger.add(t, r, kinds[0], arch.d_cl)
            acts, _ = client_forward(sent, arch, shared.x, shared.y, first)
            ledger.add(t, r_next, kinds[1], len(shared) * arch.d_c)
            ledger.add(t, r_next, kinds[2], len(shared))
            uploads[first] = acts.activations
        check = verify_handoff(outcome.references[r - 1], uploads, state.eps)
        if check.ok:
            return replace(outcome, theta_next=SplitParams(sent.copy(), kept.phi.copy()))
        log.info("round %d: handoff from client %d (cluster %d) tampered, flagged by %s",
                 t, sender.id, r, check.flagged)
        event = DetectionEvent(t, r, sender.id, check.flagged)
        outcome = rollback_reselect(replace(outcome, detections=outcome.detections + [event]), r)
        kinds = (lk.ROLLBACK_HANDOFF, lk.ROLLBACK_VERIFY_ACTIVATION, lk.ROLLBACK_VERIFY_PASS)
    return outcome


def all_adversary_sets(M: int, max_size: int) -> Iterable[tuple[int, ...]]:
    """Every subset of 1..M with at most ``max_size`` members."""
    for k in range(max_size + 1):
        yield from itertools.combinations(range(1, M + 1), k)
