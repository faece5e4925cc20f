"""
Tests for the numeric core: kernels, activations and seeded streams
"""

import numpy as np
import pytest

from domain_models import ParameterError, ShapeError
from ndcore import Rng, derive_seed, matvec, rng_uniform, sigmoid, tanh_v


def test_matvec_examples():
    v = np.array([3.0, 4.0])
    np.testing.assert_array_equal(matvec(np.eye(2), v), [3.0, 4.0])
    np.testing.assert_array_equal(matvec(np.zeros((2, 2)), v), [0.0, 0.0])
    np.testing.assert_array_equal(matvec(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones(2)), [3.0, 7.0])


def test_matvec_batch_matches_rows():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(3, 4))
    batch = rng.normal(size=(5, 4))
    out = matvec(m, batch)
    assert out.shape == (5, 3)
    for b in range(5):
        np.testing.assert_allclose(out[b], matvec(m, batch[b]), rtol=0, atol=1e-12)


def test_matvec_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as excinfo:
        matvec(np.zeros((2, 3)), np.zeros(2))
    assert "(2, 3)" in str(excinfo.value)
    assert "(2,)" in str(excinfo.value)


def test_matvec_distributes_over_addition():
    rng = np.random.default_rng(1)
    m = rng.uniform(-1, 1, size=(6, 6))
    a, b = rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 6)
    np.testing.assert_allclose(matvec(m, a + b), matvec(m, a) + matvec(m, b), rtol=0, atol=1e-12)


def test_sigmoid_values():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    assert abs(sigmoid(np.array([1e3]))[0] - 1.0) < 1e-12
    assert sigmoid(np.array([-1.0]))[0] == pytest.approx(0.2689414213699951, abs=1e-15)
    assert sigmoid(np.array([-1e3]))[0] >= 0.0


def test_sigmoid_complement_and_tanh_identity():
    x = np.linspace(-20, 20, 401)
    np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(tanh_v(x), 2 * sigmoid(2 * x) - 1, rtol=0, atol=1e-10)


def test_tanh_values():
    assert tanh_v(np.array([0.0]))[0] == 0.0
    assert tanh_v(np.array([1.0]))[0] == pytest.approx(0.7615941559557649, abs=1e-15)
    x = np.array([0.3, 2.0, 7.5])
    np.testing.assert_allclose(tanh_v(-x), -tanh_v(x), rtol=0, atol=1e-15)


def test_rng_uniform_deterministic():
    a = rng_uniform(Rng(42), 0.0, 1.0, 100)
    b = rng_uniform(Rng(42), 0.0, 1.0, 100)
    np.testing.assert_array_equal(a, b)


def test_rng_uniform_mean_and_range():
    draws = rng_uniform(Rng(3), 0.0, 1.0, 10_000)
    assert abs(draws.mean() - 0.5) < 0.02
    narrow = rng_uniform(Rng(4), -1.0, -0.5, 10)
    assert np.all(narrow >= -1.0) and np.all(narrow < -0.5)


def test_rng_uniform_rejects_bad_range():
    with pytest.raises(ParameterError):
        rng_uniform(Rng(0), 1.0, 1.0, 3)
    with pytest.raises(ParameterError):
        rng_uniform(Rng(0), 0.0, 1.0, -1)


def test_derive_seed_is_stable_and_key_sensitive():
    assert derive_seed(42, "LSTM", 25) == derive_seed(42, "LSTM", 25)
    assert derive_seed(42, "LSTM", 25) != derive_seed(42, "LSTM", 50)
    assert 0 <= derive_seed(42) < 2 ** 64


def test_derived_streams_are_independent():
    a = Rng(derive_seed(9, "a")).uniform(0, 1, 5)
    b = Rng(derive_seed(9, "b")).uniform(0, 1, 5)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, Rng(derive_seed(9, "a")).uniform(0, 1, 5))


def test_rng_rejects_out_of_range_seed():
    with pytest.raises(ParameterError):
        Rng(-1)
    with pytest.raises(ParameterError):
        Rng(2 ** 64)
