#!/usr/bin/env python3
"""
Tests for the numerics layer: stable softmax, distances, random streams and
the finite-difference oracle.
"""

import sys
import os
import math

import numpy as np
import pytest

# Add the parent directory to the path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from tpvae_core.errors import DimensionError, OracleError
from tpvae_core.utils.numerics import (
    RngStream,
    StreamPurpose,
    as_vec64,
    check_prob_rows,
    entropy,
    finite_diff_grad,
    gaussian_sample,
    log_softmax,
    max_relative_error,
    pairwise_sq_dists,
    softmax,
    sq_dist,
)


def test_log_softmax_examples():
    """Known values, symmetry and the overflow-free dominance limit."""
    out = log_softmax([0.0, 0.0, 0.0])
    assert np.allclose(out, -math.log(3), atol=1e-15), f"Expected -log 3 everywhere, got {out}"

    out = log_softmax([0.0, -1.0])
    assert abs(math.exp(out[0]) - 0.7310585786300049) < 1e-12
    assert abs(math.exp(out[1]) - 0.2689414213699951) < 1e-12

    out = log_softmax([1000.0, 0.0])
    assert np.all(np.isfinite(out)), "log_softmax overflowed"
    assert abs(out[0]) < 1e-12 and abs(out[1] + 1000.0) < 1e-9

    out = log_softmax([1e300, -1e300])
    assert np.all(np.isfinite(out[:1])), "large scores must not overflow"
    print("✓ log_softmax examples")


def test_log_softmax_properties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = rng.uniform(-100, 100, size=rng.integers(1, 12))
        assert abs(np.exp(log_softmax(s)).sum() - 1.0) < 1e-12
        c = rng.uniform(-50, 50)
        assert np.max(np.abs(log_softmax(s + c) - log_softmax(s))) < 1e-12, "shift invariance violated"

    rows = rng.normal(size=(6, 4)) * 30
    probs = softmax(rows, axis=1)
    check_prob_rows(probs)
    print("✓ log_softmax sums to one and is shift invariant")


def test_log_softmax_rejects_empty():
    with pytest.raises(DimensionError):
        log_softmax([])


def test_non_finite_inputs_rejected():
    for bad in ([0.0, float("nan")], [float("inf"), 0.0], [[0.0, 1.0], [float("-inf"), 0.0]]):
        with pytest.raises(ValueError):
            log_softmax(bad, axis=-1)
    with pytest.raises(ValueError):
        softmax([1.0, float("nan")])
    with pytest.raises(ValueError):
        sq_dist([0.0, float("nan")], [0.0, 0.0])
    with pytest.raises(ValueError):
        sq_dist([0.0, 1.0], [float("inf"), 0.0])
    with pytest.raises(DimensionError):
        sq_dist([], [])
    print("✓ NaN and infinite inputs rejected")


def test_sq_dist():
    a = np.array([1.5, -2.0, 3.25])
    assert sq_dist(a, a) == 0.0
    assert sq_dist([0, 0], [3, 4]) == 25.0

    rng = np.random.default_rng(3)
    x, y = rng.normal(size=8), rng.normal(size=8)
    brute = 0.0
    for xi, yi in zip(x, y):
        brute += (xi - yi) ** 2
    assert abs(sq_dist(x, y) - brute) < 1e-12
    assert sq_dist(x, y) == sq_dist(y, x), "sq_dist must be bitwise symmetric"

    with pytest.raises(DimensionError):
        sq_dist([1, 2], [1, 2, 3])
    print("✓ sq_dist")


def test_pairwise_sq_dists_matches_loop():
    rng = np.random.default_rng(5)
    points, centers = rng.normal(size=(7, 4)), rng.normal(size=(3, 4))
    table = pairwise_sq_dists(points, centers)
    assert table.shape == (7, 3)
    for i in range(7):
        for k in range(3):
            assert table[i, k] == sq_dist(points[i], centers[k])
    with pytest.raises(DimensionError):
        pairwise_sq_dists(points, rng.normal(size=(3, 5)))


def test_rng_stream_determinism():
    """Equal keys give equal draws; different ids and purposes differ."""
    a = RngStream(42, 7).standard_normal(16)
    b = RngStream(42, 7).standard_normal(16)
    assert a.tobytes() == b.tobytes(), "identical keys must give identical draws"

    c = RngStream(42, 8).standard_normal(16)
    assert not np.array_equal(a, c), "different stream ids should differ"

    root = RngStream(42, 7)
    d1 = root.child(StreamPurpose.DECODER).standard_normal(4)
    d2 = RngStream(42, 7).child(StreamPurpose.DECODER).standard_normal(4)
    l1 = root.child(StreamPurpose.LATENTS).standard_normal(4)
    assert np.array_equal(d1, d2)
    assert not np.array_equal(d1, l1), "purpose children should be independent"

    picks = RngStream(1).choice(10, 10)
    assert sorted(picks.tolist()) == list(range(10)), "choice must sample without replacement"
    print("✓ RngStream determinism")


def test_rng_stream_masks_negative_seed():
    assert RngStream(-1).seed == (1 << 64) - 1


def test_gaussian_sample():
    mean = np.array([0.1, -0.2, 0.3, 0.4])
    out = gaussian_sample(mean, 0.0, RngStream(0))
    assert out.tobytes() == mean.tobytes(), "sigma 0 must return the mean bitwise"
    assert out is not mean

    x1 = gaussian_sample(mean, 1.0, RngStream(9, 1))
    x2 = gaussian_sample(mean, 1.0, RngStream(9, 1))
    assert np.array_equal(x1, x2)

    draws = gaussian_sample(np.zeros(100_000), 1.0, RngStream(11))
    assert abs(draws.mean()) < 0.02
    assert abs(draws.var() - 1.0) < 0.05

    with pytest.raises(ValueError):
        gaussian_sample(mean, -0.1, RngStream(0))
    print("✓ gaussian_sample")


def test_finite_diff_grad():
    grad = finite_diff_grad(lambda x: float(np.sum(x * x)), np.array([1.0, 2.0]), h=1e-5)
    assert np.max(np.abs(grad - np.array([2.0, 4.0]))) < 1e-8

    grad = finite_diff_grad(lambda x: 3.0, np.array([0.5, -1.0, 2.0]))
    assert np.array_equal(grad, np.zeros(3))

    # Matrix-shaped input keeps its shape
    m = np.arange(6, dtype=float).reshape(2, 3)
    grad = finite_diff_grad(lambda x: float(np.sum(x ** 3)), m)
    assert grad.shape == (2, 3)
    assert np.max(np.abs(grad - 3 * m ** 2)) < 1e-5

    with pytest.raises(OracleError):
        finite_diff_grad(lambda x: float(np.log(x[0])), np.array([0.0]))
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: 0.0, np.array([1.0]), h=0.0)
    print("✓ finite_diff_grad")


def test_helpers():
    assert max_relative_error(np.array([10.0, 0.1]), np.array([10.001, 0.1005])) == pytest.approx(5e-4)
    assert entropy([0.5, 0.5]) == pytest.approx(math.log(2))
    assert entropy([1.0, 0.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        check_prob_rows(np.array([[0.5, 0.6]]))
    with pytest.raises(ValueError):
        as_vec64([1.0, float("nan")])
    with pytest.raises(DimensionError):
        as_vec64([])


def run_all_tests():
    """Run all numerics tests."""
    test_log_softmax_examples()
    test_log_softmax_properties()
    test_log_softmax_rejects_empty()
    test_non_finite_inputs_rejected()
    test_sq_dist()
    test_pairwise_sq_dists_matches_loop()
    test_rng_stream_determinism()
    test_rng_stream_masks_negative_seed()
    test_gaussian_sample()
    test_finite_diff_grad()
    test_helpers()
    print("\nAll numerics tests passed.")


if __name__ == "__main__":
    run_all_tests()
