#!/usr/bin/env python3
"""
Tests for the TP-VAE model state: prototypes, posterior, task prior,
decoder and latent sampling.
"""

import sys
import os
import math

import numpy as np
import pytest

# Add the parent directory to the path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from tpvae_core.data.episodes import make_episode
from tpvae_core.errors import DimensionError
from tpvae_core.models.tpvae import (
    DecoderParams,
    PriorMatrix,
    Prototypes,
    decode,
    init_decoder,
    init_prototypes,
    init_state,
    posterior,
    predict,
    sample_latents,
    snapshot_prior,
)
from tpvae_core.utils.numerics import RngStream, sq_dist


def random_episode(seed=0, way=3, shot=2, queries=4, dim=5):
    rng = np.random.default_rng(seed)
    support_labels = np.repeat(np.arange(way), shot)
    query_labels = np.repeat(np.arange(way), queries)
    centers = rng.normal(size=(way, dim)) * 2
    support = centers[support_labels] + rng.normal(size=(way * shot, dim))
    query = centers[query_labels] + rng.normal(size=(way * queries, dim))
    return make_episode(support, support_labels, query, query_labels)


def test_init_prototypes():
    ep = random_episode(shot=1)
    protos = init_prototypes(ep, tau=3.0)
    assert protos.psi.tobytes() == ep.support_features.tobytes(), "1-shot prototypes are the support features"
    assert protos.tau == 3.0

    ep = make_episode([[0.0, 0.0], [2.0, 4.0], [5.0, 5.0], [7.0, 7.0]], [0, 0, 1, 1], [[1.0, 1.0]], [0])
    assert np.array_equal(init_prototypes(ep).psi[0], [1.0, 2.0])

    ep = random_episode(seed=4, shot=5)
    protos = init_prototypes(ep)
    for k in range(ep.way):
        total = np.zeros(ep.dim)
        count = 0
        for feature, label in zip(ep.support_features, ep.support_labels):
            if label == k:
                total += feature
                count += 1
        assert np.allclose(protos.psi[k], total / count, atol=1e-14)
    print("✓ init_prototypes")


def test_prototypes_validation():
    with pytest.raises(DimensionError):
        Prototypes(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        Prototypes(np.zeros((2, 3)), tau=0.0)


def test_posterior_examples():
    protos = Prototypes(np.array([[0.0], [1.0]]), tau=1.0)
    row = posterior(np.array([0.0]), protos)
    assert abs(row[0] - 0.7310585786300049) < 1e-12
    assert abs(row[1] - 0.2689414213699951) < 1e-12

    square = Prototypes(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]), tau=5.0)
    assert np.allclose(posterior(np.zeros(2), square), 0.25, atol=1e-15)

    sharp = Prototypes(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), tau=1e4)
    assert posterior(np.array([0.1, 0.0]), sharp)[0] > 1 - 1e-6

    with pytest.raises(DimensionError):
        posterior(np.zeros(3), protos)
    print("✓ posterior examples")


def test_posterior_properties():
    rng = np.random.default_rng(7)
    for _ in range(50):
        psi = rng.normal(size=(4, 3)) * 3
        z = rng.normal(size=(6, 3)) * 3
        protos = Prototypes(psi, tau=rng.uniform(0.1, 30))
        rows = posterior(z, protos)
        assert np.max(np.abs(rows.sum(axis=1) - 1.0)) < 1e-9

        rescaled = Prototypes(psi, tau=protos.tau * rng.uniform(0.5, 5))
        assert np.array_equal(predict(z, protos), predict(z, rescaled)), "argmax must not depend on tau"

        shift = rng.normal(size=3)
        moved = posterior(z + shift, Prototypes(psi + shift, tau=protos.tau))
        assert np.max(np.abs(moved - rows)) < 1e-12 * max(1.0, protos.tau) * 100


def test_predict_ties_lowest_index():
    protos = Prototypes(np.array([[1.0], [-1.0]]), tau=1.0)
    assert predict(np.array([0.0]), protos).tolist() == [0]


def test_snapshot_prior():
    ep = random_episode(seed=2)
    protos = init_prototypes(ep, tau=2.0)
    prior = snapshot_prior(ep, protos)
    for i, q in enumerate(ep.query_features):
        assert np.allclose(prior.rows[i], posterior(q, protos), atol=1e-15)
    assert not prior.rows.flags.writeable
    assert np.allclose(prior.marginals().sum(), ep.num_query)

    flat = Prototypes(np.zeros((3, ep.dim)), tau=2.0)
    assert np.allclose(snapshot_prior(ep, flat).rows, 1.0 / 3, atol=1e-15)

    with pytest.raises(ValueError):
        PriorMatrix(np.array([[0.7, 0.7]]))


def test_init_decoder():
    a = init_decoder(4, 6, 5, RngStream(3, 0))
    b = init_decoder(4, 6, 5, RngStream(3, 0))
    for name in DecoderParams.NAMES:
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not a.b1.any() and not a.b2.any(), "biases start at zero"
    assert np.max(np.abs(a.W1)) <= 1 / math.sqrt(5)
    assert np.max(np.abs(a.W2)) <= 1 / math.sqrt(6)
    assert (a.d_obs, a.d_hidden, a.d_latent) == (4, 6, 5)
    with pytest.raises(ValueError):
        init_decoder(0, 2, 2, RngStream(0))


def test_decode():
    zero = DecoderParams.zeros_like(init_decoder(3, 4, 3, RngStream(0)))
    assert np.array_equal(decode(zero, np.array([1.0, -2.0, 3.0])), np.zeros(3))

    c = np.array([0.5, -1.5, 2.0])
    const = DecoderParams(W1=np.zeros((4, 3)), b1=np.zeros(4), W2=np.ones((3, 4)), b2=c)
    assert np.array_equal(decode(const, np.array([9.0, 9.0, 9.0])), c)

    theta = init_decoder(4, 5, 4, RngStream(1))
    theta = DecoderParams(theta.W1, np.linspace(-1, 1, 5), theta.W2, np.linspace(0, 1, 4))
    z = np.array([0.3, -0.7, 1.1, 0.05])
    expected = []
    hidden = []
    for h in range(5):
        acc = theta.b1[h]
        for j in range(4):
            acc += theta.W1[h, j] * z[j]
        hidden.append(math.tanh(acc))
    for o in range(4):
        acc = theta.b2[o]
        for h in range(5):
            acc += theta.W2[o, h] * hidden[h]
        expected.append(acc)
    assert np.allclose(decode(theta, z), expected, atol=1e-13)

    batch = np.vstack([z, -z])
    assert decode(theta, batch).shape == (2, 4)
    with pytest.raises(DimensionError):
        decode(theta, np.zeros(3))
    with pytest.raises(DimensionError):
        DecoderParams(W1=np.zeros((4, 3)), b1=np.zeros(3), W2=np.zeros((3, 4)), b2=np.zeros(3))
    print("✓ decode")


def test_sample_latents():
    ep = random_episode(seed=5)
    sets = sample_latents(ep, 0.0, 3, None)
    assert len(sets) == 3
    for lat in sets:
        assert lat.query.tobytes() == ep.query_features.tobytes()
        assert lat.support.tobytes() == ep.support_features.tobytes()

    a = sample_latents(ep, 0.5, 1, RngStream(2, 1))
    b = sample_latents(ep, 0.5, 1, RngStream(2, 1))
    assert np.array_equal(a[0].query, b[0].query)

    single = make_episode([[0.0], [1.0]], [0, 1], [[0.0]] * 10_000, [0] * 10_000)
    draws = sample_latents(single, 1.0, 1, RngStream(8))[0].query[:, 0]
    assert abs(draws.std() - 1.0) < 0.05

    with pytest.raises(ValueError):
        sample_latents(ep, 0.1, 1, None)
    with pytest.raises(ValueError):
        sample_latents(ep, 0.1, 0, RngStream(0))


def test_init_state():
    ep = random_episode(seed=9, dim=4)
    state = init_state(ep, RngStream(1, 0), tau=5.0, sigma_enc=0.0, L=2, d_hidden=7)
    assert state.decoder.d_hidden == 7 and state.decoder.d_latent == 4 and state.decoder.d_obs == 4
    assert state.prior.rows.shape == (ep.num_query, ep.way)
    assert np.array_equal(state.prior.rows, snapshot_prior(ep, init_prototypes(ep, 5.0)).rows)
    assert state.L == 2
    assert sq_dist(state.prototypes.psi[0], init_prototypes(ep).psi[0]) == 0.0


def run_all_tests():
    """Run all model tests."""
    test_init_prototypes()
    test_prototypes_validation()
    test_posterior_examples()
    test_posterior_properties()
    test_predict_ties_lowest_index()
    test_snapshot_prior()
    test_init_decoder()
    test_decode()
    test_sample_latents()
    test_init_state()
    print("\nAll model tests passed.")


if __name__ == "__main__":
    run_all_tests()
