import math

import numpy as np
import pytest
from scipy import integrate

from monoculture import mathkit
from monoculture.errors import ConditioningError, DomainError, ValidationError

from oracles import phi2_quad


def test_probit_cdf_examples():
    assert mathkit.probit_cdf(0.0) == 0.5
    x = np.linspace(-8, 8, 33)
    np.testing.assert_allclose(mathkit.probit_cdf(x) + mathkit.probit_cdf(-x), 1.0, atol=1e-15)
    quad, _ = integrate.quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi), -np.inf, 1.959964)
    assert abs(mathkit.probit_cdf(1.959964) - quad) < 1e-12
    assert abs(mathkit.probit_cdf(1.959964) - 0.975) < 1e-6


def test_probit_cdf_rejects_nonfinite():
    with pytest.raises(DomainError):
        mathkit.probit_cdf(np.nan)
    with pytest.raises(DomainError):
        mathkit.probit_cdf([0.0, np.inf])


def test_clamp_prob_bounds():
    out = mathkit.clamp_prob(np.array([0.0, 0.5, 1.0]))
    assert out[0] == 1e-15 and out[2] == 1 - 1e-15 and out[1] == 0.5


def test_phi2_examples():
    assert abs(mathkit.bivariate_normal_cdf(0, 0, 0) - 0.25) < 1e-15
    for x, y in [(-1.3, 0.4), (2.0, 2.0), (0.1, -3.0)]:
        expect = mathkit.probit_cdf(x) * mathkit.probit_cdf(y)
        assert abs(mathkit.bivariate_normal_cdf(x, y, 0.0) - expect) < 1e-15
    exact = 0.25 + math.asin(0.5) / (2 * math.pi)
    assert abs(mathkit.bivariate_normal_cdf(0, 0, 0.5) - exact) < 1e-7
    assert abs(phi2_quad(0.0, 0.0, 0.5) - exact) < 1e-10


def test_phi2_boundary_correlations():
    for x, y in [(0.3, -0.2), (-1.0, 1.5), (2.0, 2.0)]:
        assert abs(mathkit.bivariate_normal_cdf(x, y, 1.0) - mathkit.probit_cdf(min(x, y))) < 1e-12
        lo = max(0.0, mathkit.probit_cdf(x) + mathkit.probit_cdf(y) - 1.0)
        assert abs(mathkit.bivariate_normal_cdf(x, y, -1.0) - lo) < 1e-12


def test_phi2_domain():
    with pytest.raises(DomainError):
        mathkit.bivariate_normal_cdf(0, 0, 1.01)
    with pytest.raises(DomainError):
        mathkit.bivariate_normal_cdf(np.nan, 0, 0.1)


def test_phi2_symmetry_and_monotonicity():
    g = np.linspace(-3, 3, 13)
    x, y = np.meshgrid(g, g, indexing="ij")
    for r in (-0.95, -0.5, 0.0, 0.3, 0.93, 0.99):
        p = mathkit.bivariate_normal_cdf(x, y, r)
        np.testing.assert_allclose(p, p.T, atol=1e-15)
        assert np.all(np.diff(p, axis=0) >= -1e-15)
        assert np.all(np.diff(p, axis=1) >= -1e-15)
    rhos = np.linspace(-0.999, 0.999, 41)
    for a, b in [(0.0, 0.0), (-1.0, 0.7), (1.5, -2.0)]:
        vals = mathkit.bivariate_normal_cdf(a, b, rhos)
        assert np.all(np.diff(vals) >= -1e-15)


def test_phi2_pdf_examples():
    assert abs(mathkit.bivariate_normal_pdf(0, 0, 0) - 1 / (2 * math.pi)) < 1e-15
    assert abs(mathkit.bivariate_normal_pdf(0, 0, 0.5) - 1 / (2 * math.pi * math.sqrt(0.75))) < 1e-15
    h = 1e-4
    fd = (mathkit.bivariate_normal_cdf(0.3, -0.2, 0.4 + h)
          - mathkit.bivariate_normal_cdf(0.3, -0.2, 0.4 - h)) / (2 * h)
    assert abs(fd - mathkit.bivariate_normal_pdf(0.3, -0.2, 0.4)) < 1e-5
    with pytest.raises(DomainError):
        mathkit.bivariate_normal_pdf(0, 0, 1.0)


def test_symmetric_eigen_reconstruction(rng):
    a = rng.normal(size=(6, 6))
    a = a + a.T
    eig = mathkit.symmetric_eigen(a)
    assert np.all(np.diff(eig.eigenvalues) <= 0)
    v = eig.eigenvectors
    assert np.linalg.norm(eig.reconstruct() - a) / np.linalg.norm(a) < 1e-10
    assert np.max(np.abs(v.T @ v - np.eye(6))) < 1e-10
    with pytest.raises(ValidationError):
        mathkit.symmetric_eigen(np.ones((2, 3)))


def test_whiten_identity_is_fixed_point():
    theta = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    white, w, mu = mathkit.whiten(theta)
    np.testing.assert_allclose(white, theta, atol=1e-12)
    np.testing.assert_allclose(w, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(mu, 0.0, atol=1e-15)


@pytest.mark.parametrize("scale", [(2.0, 1.0), None])
def test_whiten_covariance_identity(rng, scale):
    theta = rng.normal(size=(100, 2 if scale else 3))
    if scale:
        theta = theta * np.array(scale)
    white, w, mu = mathkit.whiten(theta)
    c = white - white.mean(axis=0)
    cov = c.T @ c / len(white)
    np.testing.assert_allclose(cov, np.eye(theta.shape[1]), atol=1e-8)
    np.testing.assert_allclose(white.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose((theta - mu) @ w, white, atol=1e-12)


def test_whiten_degenerate():
    with pytest.raises(ConditioningError):
        mathkit.whiten(np.ones((5, 2)))
    with pytest.raises(ValidationError):
        mathkit.whiten(np.ones((1, 2)))


def test_pca_examples(rng):
    u = rng.normal(size=(50, 1))
    frac = mathkit.pca_variance_explained(u @ np.array([[1.0, 2.0, -1.0]]))
    assert abs(frac[0] - 1.0) < 1e-10 and np.all(np.abs(frac[1:]) < 1e-10)
    frac = mathkit.pca_variance_explained(rng.normal(size=(10000, 2)))
    assert np.all(np.abs(frac - 0.5) <= 0.05)
    assert abs(frac.sum() - 1.0) < 1e-10
    with pytest.raises(ValidationError):
        mathkit.pca_variance_explained(np.ones((4, 3)))


def test_rng_reproducible():
    a = mathkit.make_rng(7).random(1_000_000)
    b = mathkit.make_rng(7).random(1_000_000)
    assert np.array_equal(a, b)
    assert mathkit.child_seeds(3, 4) == mathkit.child_seeds(3, 4)
    assert len(set(mathkit.child_seeds(3, 4))) == 4
