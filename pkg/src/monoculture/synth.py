"""Synthetic generators with ground truth, and exact small-instance oracles.

Outcome tables over {0,1}^m are flat arrays of length 2**m indexed
little-endian: model ``j`` is bit ``j`` of the index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy import special

from . import mathkit
from .dataset import CorrectnessMatrix
from .errors import UnsupportedError, ValidationError

MAX_MIXTURE_M = 20
MAX_ENUM_M = 12


def outcome_vectors(m: int) -> np.ndarray:
    """All 2**m outcomes as rows, in table order."""
    idx = np.arange(2**m)
    return ((idx[:, None] >> np.arange(m)[None, :]) & 1).astype(np.int8)


def outcome_index(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    return y @ (1 << np.arange(y.shape[-1], dtype=np.int64))


@dataclass(frozen=True)
class VertexMixture:
    """Mixture of product-Bernoulli laws whose success vectors are cube vertices."""

    points: np.ndarray  # s x m, entries 0/1
    probs: np.ndarray  # s

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int8)
        pr = np.asarray(self.probs, dtype=float)
        if pts.ndim != 2 or pr.shape != (pts.shape[0],):
            raise ValidationError("mixture points and probabilities do not align")
        if pts.shape[1] > MAX_MIXTURE_M:
            raise ValidationError(f"mixtures are limited to m <= {MAX_MIXTURE_M}")
        if pts.shape[0] > 2 ** pts.shape[1]:
            raise ValidationError("more support points than cube vertices")
        if np.any((pts != 0) & (pts != 1)):
            raise ValidationError("support points must be cube vertices")
        if np.any(pr < 0) or abs(pr.sum() - 1.0) > 1e-12:
            raise ValidationError("mixture masses must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", pr)

    @property
    def m(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class IrtNull:
    a: np.ndarray  # n x K
    b: np.ndarray  # n
    theta: np.ndarray  # m x K

    def probabilities(self) -> np.ndarray:
        return special.ndtr(self.a @ self.theta.T + self.b[:, None])


@dataclass(frozen=True)
class CorrelatedProbit:
    """Latent Z_ij = theta_j - difficulty_i + eps_ij with eps_i. ~ N(0, sigma)."""

    theta: np.ndarray  # m
    difficulty: np.ndarray  # n
    sigma: np.ndarray  # m x m

    def means(self) -> np.ndarray:
        return self.theta[None, :] - self.difficulty[:, None]


@dataclass(frozen=True)
class D0Fleet:
    count: int
    mean: float = 0.7
    sd: float = 0.2


Variant = Union[IrtNull, CorrelatedProbit, VertexMixture, D0Fleet]


@dataclass(frozen=True)
class GeneratorSpec:
    variant: Variant
    n: int
    seed: int

    def __post_init__(self):
        v = self.variant
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if isinstance(v, IrtNull):
            a = np.atleast_2d(np.asarray(v.a, float))
            theta = np.asarray(v.theta, float)
            theta = theta[:, None] if theta.ndim == 1 else theta
            if a.shape[0] != self.n or len(v.b) != self.n or a.shape[1] != theta.shape[1]:
                raise ValidationError("irt_null parameter shapes are inconsistent with n and K")
        elif isinstance(v, CorrelatedProbit):
            m = len(v.theta)
            if len(v.difficulty) != self.n or np.shape(v.sigma) != (m, m):
                raise ValidationError("correlated_probit parameter shapes are inconsistent")
            _check_correlation(np.asarray(v.sigma, float))
        elif isinstance(v, D0Fleet):
            if v.count < 1 or v.sd < 0:
                raise ValidationError("d0 fleet needs count >= 1 and sd >= 0")
        elif not isinstance(v, VertexMixture):
            raise ValidationError(f"unknown generator variant {type(v).__name__}")

    @property
    def m(self) -> int:
        v = self.variant
        if isinstance(v, IrtNull):
            return np.asarray(v.theta).shape[0]
        if isinstance(v, CorrelatedProbit):
            return len(v.theta)
        if isinstance(v, VertexMixture):
            return v.m
        return v.count


def _check_correlation(sigma):
    if not np.allclose(sigma, sigma.T, atol=1e-12):
        raise ValidationError("sigma must be symmetric")
    if not np.allclose(np.diag(sigma), 1.0, atol=1e-12):
        raise ValidationError("sigma must have unit diagonal")
    if mathkit.smallest_eigenvalue(sigma) < -1e-10:
        raise ValidationError("sigma is not positive semidefinite")


def psd_sqrt(sigma) -> np.ndarray:
    eig = mathkit.symmetric_eigen(sigma)
    vals = np.clip(eig.eigenvalues, 0.0, None)
    v = eig.eigenvectors
    return (v * np.sqrt(vals)) @ v.T


def uniform_correlation(m: int, rho: float) -> np.ndarray:
    s = np.full((m, m), float(rho))
    np.fill_diagonal(s, 1.0)
    return s


def block_correlation(sizes, within, between=0.0) -> np.ndarray:
    """Block-constant correlation: ``within[g]`` inside group g, ``between`` across."""
    m = int(sum(sizes))
    s = np.full((m, m), float(between))
    start = 0
    for size, rho in zip(sizes, within):
        s[start:start + size, start:start + size] = rho
        start += size
    np.fill_diagonal(s, 1.0)
    return s


def mixture_from_distribution(p) -> VertexMixture:
    """Place mass P(y) on the vertex y (zero-mass vertices are dropped)."""
    p = np.asarray(p, dtype=float).ravel()
    m = int(round(np.log2(p.size)))
    if 2**m != p.size or m < 1:
        raise ValidationError("table length must be a power of two")
    if m > MAX_MIXTURE_M:
        raise ValidationError(f"mixtures are limited to m <= {MAX_MIXTURE_M}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValidationError("table must be nonnegative and sum to 1")
    keep = np.flatnonzero(p > 0)
    return VertexMixture(outcome_vectors(m)[keep], p[keep])


def mixture_table(mix: VertexMixture) -> np.ndarray:
    """Reconstruct P(y) = sum_p H(p) prod_j p_j^y_j (1 - p_j)^(1 - y_j) by enumeration."""
    ys = outcome_vectors(mix.m).astype(bool)
    pts = mix.points.astype(bool)
    # at a vertex the product-Bernoulli likelihood is the indicator [y == point]
    match = np.all(ys[:, None, :] == pts[None, :, :], axis=2)
    return match.astype(float) @ mix.probs


def planted_irt(n, m, dim=1, seed=0, a_mean=0.0, a_sd=1.0, b_sd=1.0, theta_sd=1.0) -> IrtNull:
    rng = mathkit.make_rng(seed)
    return IrtNull(
        rng.normal(a_mean, a_sd, size=(n, dim)),
        rng.normal(0.0, b_sd, size=n),
        rng.normal(0.0, theta_sd, size=(m, dim)),
    )


def _d0_probs(v: D0Fleet, rng) -> np.ndarray:
    return np.clip(rng.normal(v.mean, v.sd, size=v.count), 0.01, 0.99)


def generate(spec: GeneratorSpec, item_prefix="q", model_prefix="m"):
    """Draw a correctness matrix. Returns ``(matrix, truth)``."""
    rng = mathkit.make_rng(spec.seed)
    v = spec.variant
    n = spec.n
    if isinstance(v, IrtNull):
        p = v.probabilities()
        y = (rng.random(p.shape) < p).astype(np.int8)
        truth = {"variant": "irt_null", "a": v.a, "b": v.b, "theta": v.theta}
    elif isinstance(v, CorrelatedProbit):
        sigma = np.asarray(v.sigma, float)
        eps = rng.standard_normal((n, len(v.theta))) @ psd_sqrt(sigma)
        y = (v.means() + eps >= 0).astype(np.int8)
        truth = {"variant": "correlated_probit", "theta": v.theta,
                 "difficulty": v.difficulty, "sigma": sigma}
    elif isinstance(v, VertexMixture):
        draws = rng.choice(len(v.probs), size=n, p=v.probs)
        y = v.points[draws].astype(np.int8)
        truth = {"variant": "vertex_mixture", "points": v.points, "probs": v.probs}
    else:
        p = _d0_probs(v, rng)
        y = (rng.random((n, v.count)) < p[None, :]).astype(np.int8)
        truth = {"variant": "d0_fleet", "p": p, "mean": v.mean, "sd": v.sd}
    m = y.shape[1]
    width_i, width_m = len(str(n - 1)), len(str(m - 1))
    mat = CorrectnessMatrix(
        [f"{item_prefix}{i:0{width_i}d}" for i in range(n)],
        [f"{model_prefix}{j:0{width_m}d}" for j in range(m)],
        y,
    )
    return mat, truth


def exact_joint_distribution(spec: GeneratorSpec) -> np.ndarray:
    """Exact law of one item row (item drawn uniformly), as a 2**m table."""
    m = spec.m
    if m > MAX_ENUM_M:
        raise UnsupportedError(f"exact enumeration is limited to m <= {MAX_ENUM_M}")
    v = spec.variant
    if isinstance(v, VertexMixture):
        return mixture_table(v)
    if isinstance(v, IrtNull):
        return _product_table(v.probabilities())
    if isinstance(v, D0Fleet):
        p = _d0_probs(v, mathkit.make_rng(spec.seed))
        return _product_table(p[None, :])
    sigma = np.asarray(v.sigma, float)
    mu = v.means()
    if np.allclose(sigma, np.eye(m)):
        return _product_table(special.ndtr(mu))
    if m == 2:
        p11 = mathkit.bivariate_normal_cdf(mu[:, 0], mu[:, 1], sigma[0, 1])
        p1 = special.ndtr(mu)
        table = np.empty((mu.shape[0], 4))
        table[:, 3] = p11
        table[:, 1] = p1[:, 0] - p11  # y = (1, 0)
        table[:, 2] = p1[:, 1] - p11  # y = (0, 1)
        table[:, 0] = 1.0 - p1[:, 0] - p1[:, 1] + p11
        return table.mean(axis=0)
    raise UnsupportedError("exact correlated_probit tables need m == 2 or a diagonal sigma")


def _product_table(p: np.ndarray) -> np.ndarray:
    """Average over rows of p (items x m) of the product-Bernoulli table."""
    ys = outcome_vectors(p.shape[1]).astype(float)
    logp = np.log(np.clip(p, 1e-300, None))
    logq = np.log(np.clip(1.0 - p, 1e-300, None))
    # rows: items, cols: outcomes
    ll = logp @ ys.T + logq @ (1.0 - ys).T
    return np.exp(ll).mean(axis=0)


def empirical_table(y) -> np.ndarray:
    y = np.asarray(y)
    counts = np.bincount(outcome_index(y), minlength=2 ** y.shape[1])
    return counts / y.shape[0]


def truth_to_json(truth: dict, path) -> None:
    out = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in truth.items()}
    Path(path).write_text(json.dumps(out, indent=1))
