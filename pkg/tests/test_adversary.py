import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pigeonsl import nn_core
from pigeonsl.adversary import (
    HONEST,
    BehaviorSpec,
    flip_label,
    swap_params,
    tamper_activation,
    tamper_gradient,
)
from pigeonsl.errors import ConfigurationError
from pigeonsl.split_model import CutGradBatch, SplitArch


def scaled_norm(v):
    peak = np.max(np.abs(v))
    return 0.0 if peak == 0 else peak * np.linalg.norm(v / peak)


def test_flip_label_examples():
    assert flip_label(5) == 8
    assert flip_label(9) == 2
    assert flip_label(4, shift=0) == 4
    assert [flip_label(y) for y in range(10)] == [(y + 3) % 10 for y in range(10)]
    np.testing.assert_array_equal(flip_label(np.array([0, 7])), [3, 0])
    with pytest.raises(ValueError):
        flip_label(10)


def test_tamper_activation_norm_and_zero():
    rng = np.random.default_rng(0)
    g = np.array([3.0, -4.0, 0.0])
    out = tamper_activation(g, rng)
    noise = (out - 0.1 * g) / 0.9
    assert np.linalg.norm(noise) == pytest.approx(5.0, rel=1e-12)
    assert np.array_equal(tamper_activation(np.zeros(4), rng), np.zeros(4))


def test_tamper_activation_reproducible():
    g = np.random.default_rng(1).standard_normal((5, 3))
    a = tamper_activation(g, np.random.default_rng(9))
    b = tamper_activation(g, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_tamper_activation_second_moment_monte_carlo():
    g = np.array([1.0, -2.0, 0.5, 3.0])
    rng = np.random.default_rng(2)
    draws = tamper_activation(np.tile(g, (100_000, 1)), rng)
    mc = np.mean(np.sum(draws**2, axis=1))
    # cross term vanishes: the noise direction is symmetric
    closed = (0.01 + 0.81) * float(g @ g)
    assert mc == pytest.approx(closed, rel=0.01)


def test_tamper_gradient_examples():
    np.testing.assert_array_equal(tamper_gradient(np.array([[0.2, -0.1]])), [[-0.2, 0.1]])
    np.testing.assert_array_equal(tamper_gradient(np.zeros((1, 3))), np.zeros((1, 3)))
    cut = CutGradBatch(np.array([[1.0, 2.0]]))
    assert isinstance(tamper_gradient(cut), CutGradBatch)
    np.testing.assert_array_equal(tamper_gradient(tamper_gradient(cut)).gradients, cut.gradients)


def test_swap_params_reinitialises():
    arch = SplitArch.from_widths([5, 4], [4, 3])
    gamma = nn_core.init_params(arch.client_layers, 0) + 1.0
    fake = swap_params(gamma, np.random.default_rng(3), arch.client_layers)
    assert fake.shape == gamma.shape
    assert not np.array_equal(fake, gamma)
    with pytest.raises(ConfigurationError):
        swap_params(np.zeros(3), np.random.default_rng(3), arch.client_layers)


def test_behavior_hooks():
    rng = np.random.default_rng(4)
    y = np.array([1, 9])
    acts = rng.standard_normal((2, 3))
    cut = CutGradBatch(rng.standard_normal((2, 3)))
    layers = SplitArch.from_widths([2, 3], [3, 2]).client_layers
    gamma = nn_core.init_params(layers, 1)

    assert HONEST.outgoing_labels(y) is y
    assert HONEST.outgoing_activations(acts, rng) is acts
    assert HONEST.incoming_gradients(cut) is cut
    assert np.array_equal(HONEST.outgoing_handoff(gamma, rng, layers), gamma)

    np.testing.assert_array_equal(BehaviorSpec.malicious("label_flip").outgoing_labels(y), [4, 2])
    assert not np.array_equal(BehaviorSpec.malicious("activation_tamper").outgoing_activations(acts, rng), acts)
    np.testing.assert_array_equal(
        BehaviorSpec.malicious("gradient_tamper").incoming_gradients(cut).gradients, -cut.gradients)
    swapped = BehaviorSpec.malicious("param_swap").outgoing_handoff(gamma, rng, layers)
    assert not np.array_equal(swapped, gamma)
    # each attack touches only its own interception point
    flip = BehaviorSpec.malicious("label_flip")
    assert flip.incoming_gradients(cut) is cut
    assert np.array_equal(flip.outgoing_handoff(gamma, rng, layers), gamma)


def test_behavior_validation():
    with pytest.raises(ConfigurationError):
        BehaviorSpec(attack="label_flip")
    with pytest.raises(ConfigurationError):
        BehaviorSpec(role="malicious")
    with pytest.raises(ConfigurationError):
        BehaviorSpec.malicious("poison")
    assert BehaviorSpec.malicious("param_swap").is_malicious
    assert not HONEST.is_malicious


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e3, 1e3)), st.integers(0, 2**32 - 1))
def test_tampered_noise_matches_activation_norm(g, seed):
    out = tamper_activation(g, np.random.default_rng(seed))
    noise = (out - 0.1 * g) / 0.9
    gn = scaled_norm(g)
    if gn == 0:
        assert np.array_equal(out, np.zeros_like(g))
    else:
        assert abs(scaled_norm(noise) - gn) <= 1e-9 * gn


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-1e6, 1e6)))
def test_tamper_gradient_involution(g):
    assert np.array_equal(tamper_gradient(tamper_gradient(g)), g)


@given(st.integers(0, 9), st.integers(0, 20))
def test_flip_label_is_a_permutation(y, shift):
    table = [flip_label(v, 10, shift) for v in range(10)]
    assert sorted(table) == list(range(10))
    assert flip_label(y, 10, shift) == (y + shift) % 10
