"""Numeric primitives: normal CDFs, symmetric eigendecomposition, whitening, PCA, RNG."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

from .errors import ConditioningError, DomainError, ValidationError

PROB_FLOOR = 1e-15
WHITEN_FLOOR = 1e-8
RNG_ALGORITHM = "PCG64"

_TWO_PI = 2.0 * np.pi

# Gauss-Legendre nodes mapped to (0, 1) for the Drezner-Wesolowsky integrand.
_GL_X, _GL_W = leggauss(20)


def _require_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise DomainError("input must be finite")


def probit_cdf(x):
    """Standard normal CDF. Accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    _require_finite(x)
    out = special.ndtr(x)
    return out if out.ndim else float(out)


def clamp_prob(p):
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / np.sqrt(_TWO_PI)


def _bvn_upper(h, k, r):
    """P(X > h, Y > k) for a standard bivariate normal with correlation r.

    Vectorised port of Genz's BVNU (Drezner & Wesolowsky 1989 with
    20-point Gauss-Legendre quadrature), accurate to ~1e-15.
    """
    h, k, r = np.broadcast_arrays(
        np.asarray(h, float), np.asarray(k, float), np.asarray(r, float)
    )
    out = np.empty(h.shape)
    low = np.abs(r) < 0.925

    if np.any(low):
        hl, kl, rl = h[low], k[low], r[low]
        hk = hl * kl
        hs = 0.5 * (hl * hl + kl * kl)
        asr = np.arcsin(rl)
        # integrate over both halves of the symmetric node set at once
        sn = np.sin(asr[:, None] * 0.5 * (1.0 + _GL_X[None, :]))
        terms = np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn))
        acc = terms @ _GL_W
        out[low] = acc * asr / (2.0 * _TWO_PI) + special.ndtr(-hl) * special.ndtr(-kl)

    high = ~low
    if np.any(high):
        hh, kh, rh = h[high], k[high].copy(), r[high]
        neg = rh < 0
        kh[neg] = -kh[neg]
        hk = hh * kh
        bvn = np.zeros(hh.shape)
        inner = np.abs(rh) < 1.0
        if np.any(inner):
            hi, ki, ri, hki = hh[inner], kh[inner], rh[inner], hk[inner]
            as_ = (1.0 - ri) * (1.0 + ri)
            a = np.sqrt(as_)
            bs = (hi - ki) ** 2
            c = (4.0 - hki) / 8.0
            d = (12.0 - hki) / 16.0
            asr = -(bs / as_ + hki) / 2.0
            val = np.where(
                asr > -100.0,
                a * np.exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0
                                   + c * d * as_ * as_ / 5.0),
                0.0,
            )
            b = np.sqrt(bs)
            sp = np.sqrt(_TWO_PI) * special.ndtr(-b / a)
            val = val - np.where(
                hki > -100.0,
                np.exp(-hki / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0),
                0.0,
            )
            a = a / 2.0
            xs = (a[:, None] * (1.0 + _GL_X[None, :])) ** 2
            rs = np.sqrt(1.0 - xs)
            asr = -(bs[:, None] / xs + hki[:, None]) / 2.0
            with np.errstate(over="ignore", under="ignore"):
                spx = 1.0 + c[:, None] * xs * (1.0 + d[:, None] * xs)
                ep = np.exp(-hki[:, None] * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                terms = np.where(asr > -100.0, np.exp(asr) * (ep - spx), 0.0)
            val = val + a * (terms @ _GL_W)
            bvn[inner] = -val / _TWO_PI
        pos = rh > 0
        bvn[pos] += special.ndtr(-np.maximum(hh[pos], kh[pos]))
        negm = ~pos
        ge = negm & (hh >= kh)
        bvn[ge] = -bvn[ge]
        lt = negm & (hh < kh)
        span = np.where(hh < 0, special.ndtr(kh) - special.ndtr(hh),
                        special.ndtr(-hh) - special.ndtr(-kh))
        bvn[lt] = span[lt] - bvn[lt]
        out[high] = bvn
    return np.clip(out, 0.0, 1.0)


def bivariate_normal_cdf(x, y, rho):
    """Phi_2(x, y; rho) for the standard bivariate normal. Broadcasts."""
    x, y, rho = (np.asarray(v, dtype=float) for v in (x, y, rho))
    _require_finite(x, y, rho)
    if np.any(np.abs(rho) > 1.0):
        raise DomainError(f"correlation must lie in [-1, 1], got {rho}")
    out = _bvn_upper(-x, -y, rho)
    return out if out.ndim else float(out)


def bivariate_normal_pdf(x, y, rho):
    x, y, rho = (np.asarray(v, dtype=float) for v in (x, y, rho))
    _require_finite(x, y, rho)
    if np.any(np.abs(rho) >= 1.0):
        raise DomainError("density is degenerate for |rho| >= 1")
    det = 1.0 - rho * rho
    q = (x * x - 2.0 * rho * x * y + y * y) / det
    out = np.exp(-0.5 * q) / (_TWO_PI * np.sqrt(det))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SymmetricEigen:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def symmetric_eigen(a) -> SymmetricEigen:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    a = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(a)
    order = np.argsort(vals)[::-1]
    return SymmetricEigen(vals[order], vecs[:, order])


def smallest_eigenvalue(a) -> float:
    return float(symmetric_eigen(a).eigenvalues[-1])


def whiten(theta):
    """Symmetric (ZCA) whitening of the rows of ``theta``.

    Returns ``(white, W, mu)`` with ``white = (theta - mu) @ W``. The
    covariance uses the 1/m normalisation. Eigenvalues below
    ``WHITEN_FLOOR`` are floored before the inverse square root.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.shape[0] < 2:
        raise ValidationError("whiten needs a 2-D array with at least two rows")
    mu = theta.mean(axis=0)
    centered = theta - mu
    cov = centered.T @ centered / theta.shape[0]
    eig = symmetric_eigen(cov)
    vals = eig.eigenvalues
    if vals[0] <= 0 or vals[-1] / vals[0] < 1e-12:
        raise ConditioningError(
            f"covariance is rank deficient (eigenvalues {vals.tolist()})"
        )
    vals = np.maximum(vals, WHITEN_FLOOR)
    vecs = eig.eigenvectors
    w = (vecs / np.sqrt(vals)) @ vecs.T
    return centered @ w, w, mu


def pca_variance_explained(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("PCA needs a 2-D array with at least two rows")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    vals = np.clip(symmetric_eigen(cov).eigenvalues, 0.0, None)
    total = vals.sum()
    if total <= 0:
        raise ValidationError("all columns are constant; variance explained is undefined")
    return vals / total


def make_rng(seed: int) -> np.random.Generator:
    """A PCG64 generator; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def child_seeds(seed: int, count: int) -> list[int]:
    """Deterministically derive independent child seeds."""
    ss = np.random.SeedSequence(int(seed))
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(count)]
