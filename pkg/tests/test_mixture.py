import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_model
from ppou.basis import PolyBasis
from ppou.mixture import (
    PPOUModel,
    cluster_means,
    e_step,
    e_step_noise,
    latent,
    predict_mean,
    predict_var,
    update_sigma,
    update_sigma_noise,
)
from ppou.nn import DenseNet


def uniform_model(coeffs, sigma2, d=1, degree=None, sigma0_2=0.0, sigma_floor2=1e-12):
    """Basic model whose classifier outputs the uniform partition."""
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    J, K = coeffs.shape
    if degree is None:
        degree = K - 1
    classifier = DenseNet([np.zeros((J, d))], [np.zeros(J)], output_transform="softmax")
    return PPOUModel("basic", classifier, PolyBasis(d, degree), coeffs, np.asarray(sigma2, float),
                     sigma0_2=sigma0_2, sigma_floor2=sigma_floor2)


ARCHS = ["basic", "serial", "parallel"]


def test_latent_basic_is_identity():
    m = uniform_model([[0.0, 1.0]], [1.0])
    x = np.array([[0.3], [-0.7]])
    np.testing.assert_array_equal(latent(m, x), x)


def test_latent_zero_encoder_is_zero():
    rng = np.random.default_rng(0)
    m = random_model(rng, "parallel", d=3)
    for w in m.encoder.weights + m.encoder.biases:
        w[:] = 0
    np.testing.assert_array_equal(latent(m, rng.normal(size=(4, 3))), 0)


def test_latent_serial_matches_encoder_forward():
    rng = np.random.default_rng(1)
    m = random_model(rng, "serial", d=3)
    X = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(latent(m, X), m.encoder(m.standardize(X)))


def test_cluster_means_zero_and_constant():
    m = uniform_model(np.zeros((3, 3)), np.ones(3))
    np.testing.assert_array_equal(cluster_means(m, np.array([[0.2]])), [[0, 0, 0]])
    m = uniform_model([[3.5]], [1.0], degree=0)
    np.testing.assert_array_equal(cluster_means(m, np.array([[0.2], [-0.9]])), [[3.5], [3.5]])


@pytest.mark.parametrize("arch", ARCHS)
def test_cluster_means_dot_product_oracle(arch):
    rng = np.random.default_rng(2)
    m = random_model(rng, arch, d=2, latent_dim=2)
    X = rng.uniform(-1, 1, size=(5, 2))
    U = latent(m, X)
    expected = np.array([[c @ m.basis.eval(u) for c in m.coeffs] for u in U])
    np.testing.assert_allclose(cluster_means(m, X), expected, rtol=1e-13, atol=1e-14)


def test_predict_mean_single_expert_ignores_classifier():
    rng = np.random.default_rng(3)
    m = random_model(rng, "basic", n_partitions=1, d=2)
    X = rng.uniform(-1, 1, size=(8, 2))
    np.testing.assert_allclose(predict_mean(m, X), cluster_means(m, X)[:, 0], rtol=1e-14)
    np.testing.assert_allclose(predict_var(m, X), m.sigma2[0], rtol=1e-12)


def test_symmetric_two_cluster_moments():
    floor = 1e-8
    m = uniform_model([[-1.0], [1.0]], [floor, floor], degree=0, sigma_floor2=floor)
    x = np.array([[0.4]])
    assert predict_mean(m, x)[0] == 0.0
    np.testing.assert_allclose(predict_var(m, x), 1 + floor, rtol=1e-14)


def test_predict_var_adds_background_noise():
    m = uniform_model([[-1.0], [1.0]], [0.2, 0.2], degree=0, sigma0_2=0.05)
    np.testing.assert_allclose(predict_var(m, np.array([[0.0]])), 1.25, rtol=1e-14)


@pytest.mark.parametrize("arch", ARCHS)
def test_partition_of_unity_and_nonnegative_variance(arch):
    rng = np.random.default_rng(4)
    m = random_model(rng, arch, n_partitions=5, d=3)
    X = rng.uniform(-3, 3, size=(300, 3))
    phi = m.partition(X)
    assert np.all(phi >= 0)
    np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(predict_var(m, X) >= -1e-12)


def test_e_step_single_cluster():
    m = uniform_model([[0.0, 1.0]], [0.3])
    r = e_step(m, np.array([[0.1], [0.5]]), np.array([4.0, -2.0]))
    np.testing.assert_array_equal(r.W, [[1.0], [1.0]])


def test_e_step_density_ratio():
    m = uniform_model([[0.0], [1.0]], [1.0, 1.0], degree=0)
    r = e_step(m, np.array([[0.0]]), np.array([1.0]))
    # independent ratio e^{-1/2} : 1
    a = np.exp(-0.5)
    np.testing.assert_allclose(r.W[0], [a / (1 + a), 1 / (1 + a)], rtol=1e-14)
    np.testing.assert_allclose(r.W[0], [0.37754, 0.62246], atol=5e-6)


def test_e_step_halfway_is_symmetric():
    m = uniform_model([[-0.5], [1.5]], [0.7, 0.7], degree=0)
    r = e_step(m, np.array([[0.0]]), np.array([0.5]))
    np.testing.assert_allclose(r.W[0], [0.5, 0.5], rtol=1e-15)


def test_e_step_underflow_falls_back_to_partition():
    m = uniform_model([[0.0], [1.0]], [1e-300, 1e-300], degree=0)
    r = e_step(m, np.array([[0.0]]), np.array([1e300]))
    assert r.fallback_count == 1
    np.testing.assert_array_equal(r.W[0], [0.5, 0.5])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), arch=st.sampled_from(ARCHS))
def test_e_step_rows_sum_to_one(seed, arch):
    rng = np.random.default_rng(seed)
    m = random_model(rng, arch, d=2)
    X = rng.uniform(-1, 1, size=(20, 2))
    y = rng.normal(scale=10, size=20)
    r = e_step(m, X, y)
    assert np.all(r.W >= 0)
    np.testing.assert_allclose(r.W.sum(axis=1), 1.0, atol=1e-9)


def test_e_step_noise_zero_noise_limits():
    rng = np.random.default_rng(5)
    m = random_model(rng, "basic", d=2)
    X, y = rng.uniform(-1, 1, size=(10, 2)), rng.normal(size=10)
    r = e_step_noise(m, X, y)
    np.testing.assert_array_equal(r.b, np.repeat(y[:, None], 3, axis=1))
    np.testing.assert_array_equal(r.B, 0)


def test_e_step_noise_large_noise_limit():
    rng = np.random.default_rng(6)
    m = random_model(rng, "basic", d=2, sigma0_2=1e12)
    m.sigma2 = np.ones(3)
    X, y = rng.uniform(-1, 1, size=(10, 2)), rng.normal(size=10)
    r = e_step_noise(m, X, y)
    np.testing.assert_allclose(r.b, cluster_means(m, X), rtol=0, atol=1e-10)
    np.testing.assert_allclose(r.B, m.sigma2, rtol=0, atol=1e-10)


def test_e_step_noise_plug_in_values():
    m = uniform_model([[0.0]], [1.0], degree=0, sigma0_2=1.0)
    r = e_step_noise(m, np.array([[0.0]]), np.array([2.0]))
    np.testing.assert_allclose(r.b, [[1.0]], rtol=1e-15)
    np.testing.assert_allclose(r.B, [0.5], rtol=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s0=st.floats(0, 1e3))
def test_shrinkage_between_mean_and_target(seed, s0):
    rng = np.random.default_rng(seed)
    m = random_model(rng, "basic", d=2, sigma0_2=s0)
    X, y = rng.uniform(-1, 1, size=(12, 2)), rng.normal(scale=3, size=12)
    r = e_step_noise(m, X, y)
    mu = cluster_means(m, X)
    lo, hi = np.minimum(mu, y[:, None]), np.maximum(mu, y[:, None])
    tol = 1e-12 * (1 + np.abs(hi))
    assert np.all(r.b >= lo - tol) and np.all(r.b <= hi + tol)
    assert np.all(r.B >= 0) and np.all(r.B <= m.sigma2)


def test_convolved_responsibilities_use_total_variance():
    m = uniform_model([[0.0], [1.0]], [1.0, 3.0], degree=0, sigma0_2=1.0)
    X, y = np.array([[0.0]]), np.array([0.8])
    r = e_step_noise(m, X, y, convolved=True)
    var = np.array([2.0, 4.0])
    dens = np.exp(-((0.8 - np.array([0.0, 1.0])) ** 2) / (2 * var)) / np.sqrt(var)
    np.testing.assert_allclose(r.W[0], dens / dens.sum(), rtol=1e-14)


def test_update_sigma_perfect_fit_hits_floor():
    m = uniform_model([[0.0, 2.0]], [1.0], sigma_floor2=1e-9)
    x = np.array([[-0.5], [0.1], [0.7]])
    r = e_step(m, x, 2 * x[:, 0])
    np.testing.assert_array_equal(update_sigma(m, r, x, 2 * x[:, 0]), [1e-9])


def test_update_sigma_mean_of_squares():
    m = uniform_model([[0.0]], [5.0], degree=0)
    x = np.array([[0.0], [1.0]])
    y = np.array([1.0, -1.0])
    np.testing.assert_allclose(update_sigma(m, e_step(m, x, y), x, y), [1.0], rtol=1e-15)


def test_update_sigma_weighted_average_oracle():
    rng = np.random.default_rng(7)
    m = random_model(rng, "basic", d=1)
    X, y = rng.uniform(-1, 1, size=(9, 1)), rng.normal(size=9)
    r = e_step(m, X, y)
    mu = cluster_means(m, X)
    expected = [sum(r.W[n, j] * (y[n] - mu[n, j]) ** 2 for n in range(9)) / r.W[:, j].sum() for j in range(3)]
    np.testing.assert_allclose(update_sigma(m, r, X, y), expected, rtol=1e-13)


def test_update_sigma_empty_cluster_kept():
    m = uniform_model([[0.0], [1.0]], [0.4, 0.9], degree=0)
    from ppou.mixture import Responsibilities

    r = Responsibilities(np.array([[1.0, 0.0], [1.0, 0.0]]))
    new, empty = update_sigma(m, r, np.zeros((2, 1)), np.array([1.0, -1.0]), return_empty=True)
    np.testing.assert_array_equal(empty, [False, True])
    np.testing.assert_array_equal(new, [1.0, 0.9])


def test_update_sigma_noise_single_sample():
    m = uniform_model([[0.0]], [2.0], degree=0, sigma0_2=2.0, sigma_floor2=1e-6)
    from ppou.mixture import Responsibilities

    r = Responsibilities(np.ones((1, 1)), b=np.zeros((1, 1)), B=np.array([0.7]))
    np.testing.assert_allclose(update_sigma_noise(m, r, np.zeros((1, 1)), np.zeros(1)), [0.7], rtol=1e-15)
    r.B = np.array([1e-9])
    np.testing.assert_array_equal(update_sigma_noise(m, r, np.zeros((1, 1)), np.zeros(1)), [1e-6])


def test_update_sigma_noise_oracle():
    rng = np.random.default_rng(8)
    m = random_model(rng, "basic", d=1, sigma0_2=0.3)
    X, y = rng.uniform(-1, 1, size=(9, 1)), rng.normal(size=9)
    r = e_step_noise(m, X, y)
    mu = cluster_means(m, X)
    s2, s0 = m.sigma2, 0.3
    b = mu + s2 / (s2 + s0) * (y[:, None] - mu)
    B = s2 - s2**2 / (s2 + s0)
    np.testing.assert_allclose(r.b, b, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(r.B, B, rtol=1e-13)
    expected = (r.W * ((b - mu) ** 2 + B)).sum(axis=0) / r.W.sum(axis=0)
    np.testing.assert_allclose(update_sigma_noise(m, r, X, y), expected, rtol=1e-12)


def test_update_sigma_noise_requires_fields():
    m = uniform_model([[0.0]], [1.0], degree=0)
    with pytest.raises(ValueError):
        update_sigma_noise(m, e_step(m, np.zeros((1, 1)), np.zeros(1)), np.zeros((1, 1)), np.zeros(1))


def test_noise_variant_reduces_bitwise_at_zero_noise():
    rng = np.random.default_rng(9)
    m = random_model(rng, "serial", d=3)
    X, y = rng.uniform(-1, 1, size=(30, 3)), rng.normal(size=30)
    r0, r1 = e_step(m, X, y), e_step_noise(m, X, y)
    assert r0.W.tobytes() == r1.W.tobytes()
    assert update_sigma(m, r0, X, y).tobytes() == update_sigma_noise(m, r1, X, y).tobytes()


def test_model_rejects_inconsistent_dimensions():
    classifier = DenseNet([np.zeros((2, 1))], [np.zeros(2)], output_transform="softmax")
    with pytest.raises(ValueError):
        PPOUModel("basic", classifier, PolyBasis(1, 2), np.zeros((2, 2)), np.ones(2))
    with pytest.raises(ValueError):
        PPOUModel("basic", classifier, PolyBasis(2, 1), np.zeros((2, 3)), np.ones(2))
    with pytest.raises(ValueError):
        PPOUModel("serial", classifier, PolyBasis(1, 1), np.zeros((2, 2)), np.ones(2))
