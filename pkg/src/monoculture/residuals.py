"""Debiased residuals and the residual-correlation measure of excess agreement."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import CorrectnessMatrix, write_matrix_csv
from .errors import DegenerateModelError, ValidationError


@dataclass(frozen=True)
class ExcessReport:
    residuals: np.ndarray  # Y - p_hat
    debiased: np.ndarray  # column-centred residuals
    covariance: np.ndarray  # (1/n) R~' R~
    correlation: np.ndarray  # E^-1/2 C E^-1/2
    model_ids: tuple = ()

    @property
    def summaries(self) -> dict:
        return summarize(self.correlation)

    def to_dict(self) -> dict:
        return {"model_ids": list(self.model_ids), "summaries": self.summaries}

    def save(self, directory, prefix="excess") -> dict:
        directory = Path(directory)
        ids = self.model_ids or tuple(str(j) for j in range(self.correlation.shape[0]))
        sigma_path = directory / f"{prefix}_sigma.csv"
        cov_path = directory / f"{prefix}_covariance.csv"
        write_matrix_csv(ids, self.correlation, sigma_path)
        write_matrix_csv(ids, self.covariance, cov_path)
        doc = self.to_dict()
        doc["files"] = {"sigma": sigma_path.name, "covariance": cov_path.name}
        (directory / f"{prefix}.json").write_text(json.dumps(doc, indent=1))
        return doc


def offdiag(mat: np.ndarray) -> np.ndarray:
    """Off-diagonal entries (both triangles), row-major."""
    mat = np.asarray(mat)
    return mat[~np.eye(mat.shape[0], dtype=bool)]


def summarize(sigma: np.ndarray) -> dict:
    vals = np.abs(offdiag(sigma))
    if vals.size == 0:
        return {"abs_mean": 0.0, "abs_max": 0.0, "median_abs": 0.0,
                "offdiag_frobenius": 0.0, "mean": 0.0}
    return {
        "abs_mean": float(vals.mean()),
        "abs_max": float(vals.max()),
        "median_abs": float(np.median(vals)),
        "offdiag_frobenius": float(np.sqrt(np.sum(vals**2))),
        "mean": float(offdiag(sigma).mean()),
    }


def residuals(y, p_hat):
    """Return ``(R, R_debiased)`` with per-model column centring."""
    y = y.as_float() if isinstance(y, CorrectnessMatrix) else np.asarray(y, float)
    p_hat = np.asarray(p_hat, float)
    if y.shape != p_hat.shape:
        raise ValidationError(f"shape mismatch: Y {y.shape} vs p_hat {p_hat.shape}")
    r = y - p_hat
    return r, r - r.mean(axis=0)


def excess_correlation(debiased, residual=None, model_ids=()) -> ExcessReport:
    debiased = np.asarray(debiased, float)
    n, m = debiased.shape
    cov = debiased.T @ debiased / n
    cov = 0.5 * (cov + cov.T)
    var = np.diag(cov).copy()
    # relative guard: centring leaves ~1e-17 noise on columns that are exactly fit
    scale = np.max(np.abs(debiased), axis=0)
    dead = var <= (1e-12 * np.maximum(scale, 1e-300)) ** 2
    if np.any(dead) or np.any(var <= 0):
        j = int(np.flatnonzero(dead | (var <= 0))[0])
        raise DegenerateModelError(model_ids[j] if model_ids else j)
    # outer() is exactly symmetric, so the result is too
    corr = np.clip(cov / np.sqrt(np.outer(var, var)), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return ExcessReport(
        debiased if residual is None else np.asarray(residual, float),
        debiased, cov, corr, tuple(model_ids),
    )


def report(y, p_hat, model_ids=None) -> ExcessReport:
    """Residuals then excess correlation in one call."""
    if model_ids is None and isinstance(y, CorrectnessMatrix):
        model_ids = y.model_ids
    r, rt = residuals(y, p_hat)
    return excess_correlation(rt, residual=r, model_ids=tuple(model_ids or ()))
