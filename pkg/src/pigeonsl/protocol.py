"""Sequential split-learning training inside one cluster.

Randomness is split into independent streams derived from the global
seed, so that adding or removing a consumer never shifts another one:

* partition stream, keyed by round
* client-turn stream, keyed by (client, round, subround): mini-batch
  order and activation noise
* handoff stream, keyed by (client, round): parameter-swap draws
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import ledger as lk
from .adversary import HONEST, BehaviorSpec
from .data import Samples
from .errors import ConfigurationError, NumericError
from .ledger import LedgerScope, TrafficLedger
from .nn_core import sgd_step
from .split_model import (
    SplitArch,
    SplitParams,
    ap_backward,
    ap_forward_loss,
    client_backward,
    client_forward,
)

log = logging.getLogger(__name__)

PARTITION_STREAM = 0
TURN_STREAM = 1
HANDOFF_STREAM = 2


def stream(seed: int, purpose: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose, *map(int, keys)]))


def partition_rng(seed: int, round_: int) -> np.random.Generator:
    return stream(seed, PARTITION_STREAM, round_)


def turn_rng(seed: int, client_id: int, round_: int, subround: int = 0) -> np.random.Generator:
    return stream(seed, TURN_STREAM, client_id, round_, subround)


def handoff_rng(seed: int, client_id: int, round_: int) -> np.random.Generator:
    return stream(seed, HANDOFF_STREAM, client_id, round_)


def client_order(M: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform random permutation of client ids 1..M."""
    return tuple(int(i) + 1 for i in rng.permutation(M))


@dataclass
class ClientState:
    id: int
    data: Samples
    behavior: BehaviorSpec = HONEST

    def __len__(self):
        return len(self.data)


@dataclass
class TurnResult:
    theta_out: SplitParams
    ledger_delta: Counter = field(default_factory=Counter)
    batch_losses: list[float] = field(default_factory=list)


def minibatches(rng: np.random.Generator, n: int, E: int, B: int) -> list[np.ndarray]:
    """E batches of B indices, without replacement within each pass over n.

    A pass ends when fewer than B unused indices remain; the remainder is
    dropped and a fresh permutation starts the next pass.
    """
    order = rng.permutation(n)
    pos = 0
    out = []
    for _ in range(E):
        if pos + B > n:
            order = rng.permutation(n)
            pos = 0
        out.append(order[pos:pos + B])
        pos += B
    return out


def run_client_turn(client: ClientState, theta_in: SplitParams, arch: SplitArch, E: int, B: int,
                    lr: float, rng: np.random.Generator, ledger: LedgerScope | None = None,
                    round_=None, cluster=None) -> TurnResult:
    """E mini-batch updates of (gamma, phi) driven by one client's data."""
    if E < 1 or B < 1:
        raise ConfigurationError(f"E and B must be >= 1, got E={E}, B={B}")
    if B > len(client.data):
        raise ConfigurationError(f"batch size {B} exceeds client {client.id}'s {len(client.data)} samples")
    behavior = client.behavior
    gamma, phi = theta_in.gamma, theta_in.phi
    delta = Counter()
    losses = []
    for e, idx in enumerate(minibatches(rng, len(client.data), E, B)):
        x, y = client.data.x[idx], client.data.y[idx]
        try:
            # 1. client forward, upload activations + labels
            acts, ctape = client_forward(gamma, arch, x, y, client.id)
            acts.labels = behavior.outgoing_labels(acts.labels)
            acts.activations = behavior.outgoing_activations(acts.activations, rng)
            # 2. AP forward + loss
            batch_loss, atape = ap_forward_loss(phi, arch, acts)
            # 3. AP backward, download per-sample cut gradients
            g_phi, cut = ap_backward(phi, arch, atape, acts.labels)
            # 4. client backward
            cut = behavior.incoming_gradients(cut)
            g_gamma = client_backward(gamma, arch, ctape, cut)
            gamma = sgd_step(gamma, g_gamma, lr)
            phi = sgd_step(phi, g_phi, lr)
        except NumericError as err:
            raise NumericError(
                f"{err} (round {round_}, cluster {cluster}, client {client.id}, mini-batch {e})"
            ) from err
        delta[lk.TRAIN_ACTIVATION] += B * arch.d_c
        delta[lk.CUT_GRADIENT] += B * arch.d_c
        delta[lk.TRAIN_PASS] += B
        mean = float(np.mean(batch_loss))
        losses.append(mean)
        log.debug("turn round=%s cluster=%s client=%s batch=%d loss=%.6f",
                  round_, cluster, client.id, e, mean)
    delta[lk.CLIENT_TURN] += 1
    if ledger is not None:
        ledger.merge(delta)
    return TurnResult(SplitParams(gamma, phi), delta, losses)


def run_cluster_round(cluster: Sequence[int], clients: Mapping[int, ClientState], theta_start: SplitParams,
                      arch: SplitArch, E: int, B: int, lr: float, *, seed: int, round_: int = 1,
                      cluster_index: int = 1, subround: int = 0,
                      ledger: TrafficLedger | None = None) -> SplitParams:
    """Clients train in order; each starts from its predecessor's final parameters."""
    if not cluster:
        raise ConfigurationError("empty cluster")
    scope = ledger.scope(round_, cluster_index) if ledger is not None else None
    theta = theta_start
    for pos, cid in enumerate(cluster):
        if pos > 0 and scope is not None:
            # gamma handed from the previous client; phi stays at the AP
            scope.add(lk.HANDOFF, arch.d_cl)
        rng = turn_rng(seed, cid, round_, subround)
        theta = run_client_turn(clients[cid], theta, arch, E, B, lr, rng, scope,
                                round_=round_, cluster=cluster_index).theta_out
    return theta


def run_vanilla_round(clients: Mapping[int, ClientState], theta: SplitParams, arch: SplitArch,
                      E: int, B: int, lr: float, *, seed: int, round_: int,
                      ledger: TrafficLedger | None = None) -> tuple[SplitParams, tuple[int, ...]]:
    """One vanilla-SL round over all clients in a fresh random order.

    Ends with the last client handing gamma to the next round's first
    client; that handoff is unverified.
    """
    M = len(clients)
    order = client_order(M, partition_rng(seed, round_))
    theta = run_cluster_round(order, clients, theta, arch, E, B, lr, seed=seed, round_=round_,
                              cluster_index=1, ledger=ledger)
    sender = clients[order[-1]]
    gamma = sender.behavior.outgoing_handoff(theta.gamma, handoff_rng(seed, sender.id, round_),
                                             arch.client_layers)
    if ledger is not None:
        ledger.add(round_, 1, lk.HANDOFF, arch.d_cl)
    return SplitParams(gamma.copy(), theta.phi.copy()), order


def run_vanilla_sl(clients: Mapping[int, ClientState], theta1: SplitParams, arch: SplitArch, T: int,
                   E: int, B: int, lr: float, *, seed: int,
                   ledger: TrafficLedger | None = None) -> list[SplitParams]:
    """Trajectory ``[theta^1, ..., theta^{T+1}]`` of vanilla SL."""
    if len(clients) < 1:
        raise ConfigurationError("need at least one client")
    trajectory = [theta1]
    theta = theta1
    for t in range(1, T + 1):
        theta, _ = run_vanilla_round(clients, theta, arch, E, B, lr, seed=seed, round_=t, ledger=ledger)
        trajectory.append(theta)
    return trajectory
