import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pigeonsl import ledger as lk
from pigeonsl.adversary import BehaviorSpec
from pigeonsl.data import Samples, gen_blobs, make_bundle
from pigeonsl.errors import ConfigurationError, RoundFailure
from pigeonsl.ledger import TrafficLedger
from pigeonsl.nn_core import LayerSpec
from pigeonsl.pigeon import (
    ClusterAssignment,
    RoundOutcome,
    SimulationState,
    all_adversary_sets,
    evaluate_validation_loss,
    has_honest_cluster,
    partition_clients,
    rollback_reselect,
    run_global_round,
    select_cluster,
    verify_handoff,
)
from pigeonsl.protocol import ClientState, run_cluster_round, run_vanilla_round
from pigeonsl.split_model import SplitArch, SplitParams, batch_losses, client_forward

ARCH = SplitArch.from_widths([16, 16], [16, 10])


def make_state(M, N, seed=0, behaviors=None, D_m=60, D_o=40, E=3, B=10, lr=0.1, spread=0.4):
    b = make_bundle(gen_blobs(10, 16, M * D_m + D_o, spread, seed), M, D_m, D_o, 0, seed)
    behaviors = behaviors or {}
    clients = {m: ClientState(m, b.client_shards[m - 1], behaviors.get(m, BehaviorSpec()))
               for m in range(1, M + 1)}
    return SimulationState(ARCH, clients, b.shared, SplitParams.init(ARCH, seed), N=N, E=E, B=B,
                           lr=lr, seed=seed)


def test_partition_examples():
    rng = np.random.default_rng(0)
    a = partition_clients(2, 1, rng)
    assert a.R == 2 and a.cluster_size == 1
    assert sorted(c[0] for c in a.clusters) == [1, 2]
    a = partition_clients(12, 3, rng)
    assert a.R == 4 and all(len(c) == 3 for c in a.clusters)
    with pytest.raises(ConfigurationError):
        partition_clients(10, 2, rng)


def test_assignment_describe():
    a = ClusterAssignment(1, ((3, 1), (2, 4)))
    assert a.describe() == "3,1|2,4"
    assert a.first_clients == (3, 2) and a.last_clients == (1, 4)


def test_validation_loss_uniform_logits_and_ledger():
    arch = SplitArch((LayerSpec(16, 4, "relu"),), (LayerSpec(4, 10, "identity"),))
    theta = SplitParams(SplitParams.init(arch, 0).gamma, np.zeros(arch.d_ap))
    rng = np.random.default_rng(1)
    shared = Samples(rng.standard_normal((3000, 16)), rng.integers(0, 10, 3000))
    ledger = TrafficLedger()
    ev = evaluate_validation_loss(theta, arch, ClientState(5, shared), shared, ledger.scope(1, 2))
    assert ev.loss == pytest.approx(math.log(10), abs=1e-12)
    assert ledger.total(lk.EVAL_ACTIVATION, cluster=2) == 3000 * arch.d_c
    assert ledger.total(lk.EVAL_PASS) == 3000


def test_validation_loss_equals_per_sample_mean():
    state = make_state(2, 1)
    theta = SplitParams.init(ARCH, 4)
    ev = evaluate_validation_loss(theta, ARCH, state.clients[1], state.shared)
    one_by_one = [batch_losses(theta, ARCH, x[None], [y])[0] for x, y in zip(state.shared.x, state.shared.y)]
    assert ev.loss == pytest.approx(np.mean(one_by_one), rel=1e-12)


def test_validation_upload_is_honest_for_attackers():
    state = make_state(2, 1, behaviors={1: BehaviorSpec.malicious("activation_tamper")})
    theta = SplitParams.init(ARCH, 4)
    a = evaluate_validation_loss(theta, ARCH, state.clients[1], state.shared)
    b = evaluate_validation_loss(theta, ARCH, state.clients[2], state.shared)
    assert a.loss == b.loss and np.array_equal(a.activations, b.activations)


def test_select_cluster_examples():
    assert select_cluster((0.5, 0.3, 0.9, 0.4)) == 2
    assert select_cluster((0.3, 0.3)) == 1
    assert select_cluster((math.nan, 0.7)) == 2
    with pytest.raises(RoundFailure):
        select_cluster((math.nan, math.inf))


def test_verify_handoff():
    rng = np.random.default_rng(0)
    arch = ARCH
    gamma = SplitParams.init(arch, 0).gamma
    x = rng.standard_normal((20, 16))
    ref = client_forward(gamma, arch, x, np.zeros(20, dtype=int))[0].activations
    replay = {c: client_forward(gamma, arch, x, np.zeros(20, dtype=int))[0].activations for c in (1, 2, 3)}
    assert verify_handoff(ref, replay).ok
    fake = SplitParams.init(arch, 99).gamma
    replay[2] = client_forward(fake, arch, x, np.zeros(20, dtype=int))[0].activations
    check = verify_handoff(ref, replay)
    assert check.flagged == (2,)
    assert check.max_abs_diff > 0


def _outcome(losses):
    cands = [SplitParams(np.full(2, r), np.full(2, r)) for r in range(1, len(losses) + 1)]
    prev = SplitParams(np.zeros(2), np.zeros(2))
    return RoundOutcome(round=1, selected=select_cluster(losses), losses=tuple(losses), theta_next=cands[0],
                        candidates=cands, references=[None] * len(losses), last_clients=(1, 2),
                        theta_prev=prev, adopted_turns=[1] * len(losses))


def test_rollback_examples():
    out = rollback_reselect(_outcome((0.3, 0.5)), 1)
    assert out.selected == 2 and np.array_equal(out.theta_next.gamma, [2, 2])
    out = rollback_reselect(out, 2)
    assert out.selected is None and out.fallback
    assert out.theta_next.equals(out.theta_prev)


def test_bob_swap_detected_and_alice_adopted():
    # two clients, one cluster each; Bob hands off re-randomised parameters
    state = make_state(2, 1, behaviors={2: BehaviorSpec.malicious("param_swap")})
    seen = 0
    for _ in range(20):
        theta_prev = state.theta
        state_assignment = state.assignment or state.partition(state.t)
        bob_cluster = 1 + [c[0] for c in state_assignment.clusters].index(2)
        out = run_global_round(state)
        if out.detections:
            seen += 1
            assert out.detections[0].sender == 2 and out.detections[0].cluster == bob_cluster
            assert out.selected == 3 - bob_cluster
            alice = out.candidates[out.selected - 1]
            assert state.theta.equals(alice)
            assert not state.theta.equals(theta_prev)
        else:
            assert out.selected != bob_cluster
    assert seen > 0


def test_single_cluster_modes_reduce_to_vanilla():
    for mode in ("pigeon", "pigeon_plus"):
        state = make_state(3, 0, seed=2)
        theta = state.theta
        out = run_global_round(state, mode)
        ref, order = run_vanilla_round(state.clients, theta, ARCH, state.E, state.B, state.lr, seed=2, round_=1)
        assert out.assignment.clusters == (order,)
        assert state.theta.equals(ref)
        assert out.turns == 3


def test_turn_counts():
    state = make_state(12, 3, D_m=20, D_o=10, E=1, B=5)
    out = run_global_round(state, "pigeon_plus")
    assert out.turns == 12
    assert state.ledger.total(lk.CLIENT_TURN) == 4 * 3 + 3 * 3
    state = make_state(12, 3, D_m=20, D_o=10, E=1, B=5)
    assert run_global_round(state, "pigeon").turns == 3


def test_plus_subrounds_extend_selected_cluster():
    state = make_state(4, 1, seed=3)
    theta = state.theta
    out = run_global_round(state, "pigeon_plus")
    members = out.assignment.clusters[out.selected - 1]
    t = run_cluster_round(members, state.clients, theta, ARCH, state.E, state.B, state.lr, seed=3, round_=1)
    t = run_cluster_round(members, state.clients, t, ARCH, state.E, state.B, state.lr, seed=3, round_=1,
                          subround=1)
    assert state.theta.equals(t)


def test_diverging_cluster_is_disqualified():
    state = make_state(4, 1, seed=1, lr=0.1)
    # poison one client's data so its cluster overflows
    bad = state.clients[3]
    state.clients[3] = ClientState(3, Samples(bad.data.x * 1e300, bad.data.y))
    with np.errstate(all="ignore"):
        out = run_global_round(state)
    r_bad = next(r for r, c in enumerate(out.assignment.clusters, 1) if 3 in c)
    assert math.isnan(out.losses[r_bad - 1])
    assert out.selected != r_bad


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_honest_alice_beats_gradient_tampering_bob(seed):
    state = make_state(2, 1, seed=seed, behaviors={2: BehaviorSpec.malicious("gradient_tamper")},
                       D_m=200, D_o=200, E=10, B=20)
    hits = 0
    for _ in range(50):
        out = run_global_round(state)
        hits += out.assignment.clusters[out.selected - 1] == (1,)
    assert hits / 50 >= 0.9


def test_rounds_are_reproducible():
    runs = []
    for _ in range(2):
        state = make_state(4, 1, seed=7, behaviors={1: BehaviorSpec.malicious("activation_tamper")})
        for _ in range(3):
            run_global_round(state, "pigeon_plus")
        runs.append(state.theta)
    assert runs[0].equals(runs[1])


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([(4, 1), (4, 3), (6, 1), (6, 2), (6, 5), (12, 2), (12, 3), (12, 5)]),
       st.integers(0, 2**32 - 1))
def test_pigeonhole_guarantee(mn, seed):
    M, N = mn
    a = partition_clients(M, N, np.random.default_rng(seed))
    assert sorted(c for cl in a.clusters for c in cl) == list(range(1, M + 1))
    assert all(has_honest_cluster(a, adv) for adv in all_adversary_sets(M, N))
