"""Two-stage estimate of a low-rank latent correlation matrix.

Stage 1 is a marginal K=1 IRT fit, whose linear predictor is used as the
latent mean ``mu_ij``. Stage 2 holds ``mu`` fixed and fits
``Sigma = V V^T + diag(1 - |v_j|^2)`` so that the bivariate-probit covariances

    C_model[j, l] = mean_i Phi2(mu_ij, mu_il; rho_jl) - m_j m_l

match the empirical covariances of the binary outcomes off the diagonal.
Rows of ``V`` are kept in the unit ball, which keeps Sigma a PSD correlation
matrix.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from . import mathkit
from .dataset import CorrectnessMatrix, write_matrix_csv
from .errors import DomainError, NumericalError, UnsupportedError, ValidationError
from .irt import IrtFit
from .optim import Adam

_RHO_EDGE = 1.0 - 1e-12


@dataclass(frozen=True)
class SigmaConfig:
    embed_dim: int = 1
    learning_rate: float = 0.02
    max_iters: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    item_chunk: int = 8192
    model_block: int = 64
    seed: int = 0
    patience: int = 50
    min_improvement: float = 1e-3  # relative loss drop that resets the patience counter

    def __post_init__(self):
        for name in ("learning_rate", "eps"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValidationError(f"{name} must be finite and positive, got {v}")
        if not 0.0 <= self.min_improvement < 1.0:
            raise ValidationError("min_improvement must lie in [0, 1)")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValidationError(f"{name} must lie in [0, 1), got {v}")
        for name in ("embed_dim", "max_iters", "item_chunk", "model_block", "patience"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")


@dataclass(frozen=True)
class SigmaEstimate:
    V: np.ndarray
    sigma: np.ndarray
    final_loss: float
    trace: tuple
    iterations: int
    model_ids: tuple = ()
    config: SigmaConfig = field(default_factory=SigmaConfig)

    def offdiag_mean(self) -> float:
        m = self.sigma.shape[0]
        return float(self.sigma[~np.eye(m, dtype=bool)].mean())

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "model_ids": list(self.model_ids),
            "V": self.V.tolist(),
            "final_loss": self.final_loss,
            "iterations": self.iterations,
            "loss_trace": list(self.trace),
        }

    def save(self, directory, prefix="sigma_twostage") -> None:
        directory = Path(directory)
        ids = self.model_ids or tuple(str(j) for j in range(self.sigma.shape[0]))
        write_matrix_csv(ids, self.sigma, directory / f"{prefix}.csv")
        (directory / f"{prefix}.json").write_text(json.dumps(self.to_dict(), indent=1))


def implied_sigma(v: np.ndarray) -> np.ndarray:
    s = v @ v.T
    np.fill_diagonal(s, 1.0)
    return 0.5 * (s + s.T)


def project_rows(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1)
    return v / np.maximum(1.0, norms)[:, None]


def latent_means(stage1: IrtFit) -> np.ndarray:
    """Stage-1 linear predictor; Phi of it is the stage-1 p_hat."""
    if stage1.config.accuracy_only or stage1.dim != 1:
        raise UnsupportedError("two-stage estimation needs a full K=1 stage-1 fit")
    return stage1.a @ stage1.theta.T + stage1.b[:, None]


def model_implied_covariance(mu, rho, j, l) -> float:
    mu = np.asarray(mu, float)
    if not abs(rho) <= 1.0:
        raise DomainError(f"correlation must lie in [-1, 1], got {rho}")
    p2 = mathkit.bivariate_normal_cdf(mu[:, j], mu[:, l], rho)
    m = special.ndtr(mu[:, [j, l]]).mean(axis=0)
    return float(np.mean(p2) - m[0] * m[1])


def empirical_covariance(y, j=None, l=None):
    """(1/n) sum Y_j Y_l - Ybar_j Ybar_l, for one pair or as a full matrix."""
    y = y.as_float() if isinstance(y, CorrectnessMatrix) else np.asarray(y, float)
    n = y.shape[0]
    if j is None:
        mean = y.mean(axis=0)
        return y.T @ y / n - np.outer(mean, mean)
    return float(np.mean(y[:, j] * y[:, l]) - y[:, j].mean() * y[:, l].mean())


def _blocks(size, step):
    return [(s, min(s + step, size)) for s in range(0, size, step)]


def pair_moments(mu, rho, item_chunk=8192, model_block=64):
    """Item means of Phi2 and phi2 for every pair, tiled over items and models.

    Returns ``(P2, D2)`` with ``P2[j, l] = mean_i Phi2(mu_ij, mu_il; rho_jl)``
    and ``D2`` the same for the density; only ``j < l`` entries are filled.
    """
    n, m = mu.shape
    p2 = np.zeros((m, m))
    d2 = np.zeros((m, m))
    rho_d = np.clip(rho, -_RHO_EDGE, _RHO_EDGE)
    for j0, j1 in _blocks(m, model_block):
        for l0, l1 in _blocks(m, model_block):
            if l1 <= j0 + 1:
                continue
            jj, ll = np.meshgrid(np.arange(j0, j1), np.arange(l0, l1), indexing="ij")
            keep = jj < ll
            jj, ll = jj[keep], ll[keep]
            r = rho[jj, ll]
            rd = rho_d[jj, ll]
            # per-pair sums accumulate chunk by chunk in item order
            sp = np.zeros(jj.size)
            sd = np.zeros(jj.size)
            for i0, i1 in _blocks(n, item_chunk):
                x, y = mu[i0:i1, jj], mu[i0:i1, ll]
                sp += mathkit._bvn_upper(-x, -y, r[None, :]).sum(axis=0)
                sd += mathkit.bivariate_normal_pdf(x, y, rd[None, :]).sum(axis=0)
            p2[jj, ll] = sp / n
            d2[jj, ll] = sd / n
    return p2, d2


def loss_and_rho_grad(mu, c_emp, rho, item_chunk=8192, model_block=64):
    """Loss over pairs j < l and its gradient with respect to rho (upper triangle)."""
    m = mu.shape[1]
    marg = special.ndtr(mu).mean(axis=0)
    p2, d2 = pair_moments(mu, rho, item_chunk, model_block)
    iu = np.triu_indices(m, 1)
    diff = np.zeros((m, m))
    diff[iu] = p2[iu] - np.outer(marg, marg)[iu] - c_emp[iu]
    loss = float(np.sum(diff[iu] ** 2))
    grad = np.zeros((m, m))
    grad[iu] = 2.0 * diff[iu] * d2[iu]
    return loss, grad


def loss_and_grad(mu, c_emp, v, item_chunk=8192, model_block=64):
    """Loss as a function of V, with gradient G V (G symmetric, zero diagonal)."""
    rho = v @ v.T
    loss, g = loss_and_rho_grad(mu, c_emp, rho, item_chunk, model_block)
    g = g + g.T
    return loss, g @ v


def fit_sigma(y, stage1: IrtFit, cfg: SigmaConfig = SigmaConfig(),
              init: np.ndarray | None = None) -> SigmaEstimate:
    model_ids = y.model_ids if isinstance(y, CorrectnessMatrix) else ()
    yf = y.as_float() if isinstance(y, CorrectnessMatrix) else np.asarray(y, float)
    mu = latent_means(stage1)
    if mu.shape != yf.shape:
        raise ValidationError(f"stage-1 fit has shape {mu.shape}, data has {yf.shape}")
    n, m = yf.shape
    if m < 2:
        raise ValidationError("need at least 2 models")
    c_emp = empirical_covariance(yf)

    if init is None:
        rng = mathkit.make_rng(cfg.seed)
        v = rng.normal(0.0, np.sqrt(1.0 / (10.0 * cfg.embed_dim)), size=(m, cfg.embed_dim))
    else:
        v = np.array(init, float)
        if v.shape != (m, cfg.embed_dim):
            raise ValidationError(f"init must have shape {(m, cfg.embed_dim)}")
    v = project_rows(v)

    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    best_v, best_loss, since = v.copy(), np.inf, 0
    trace = []
    it = 0
    for it in range(cfg.max_iters + 1):
        loss, grad = loss_and_grad(mu, c_emp, v, cfg.item_chunk, cfg.model_block)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite loss or gradient at iteration {it}")
        trace.append(loss)
        if loss < best_loss:
            since = 0 if loss < best_loss * (1.0 - cfg.min_improvement) else since + 1
            best_v, best_loss = v.copy(), loss
        else:
            since += 1
        if since >= cfg.patience:
            break
        if it == cfg.max_iters:
            break
        state = {"V": v}
        opt.step(state, {"V": grad})
        v = project_rows(state["V"])

    sigma = implied_sigma(best_v)
    diag = 1.0 - np.sum(best_v**2, axis=1)
    # diag(1 - |v|^2) is exact by construction; the fill above just avoids round-off
    full = best_v @ best_v.T + np.diag(diag)
    if mathkit.smallest_eigenvalue(0.5 * (full + full.T)) < -1e-10:
        raise NumericalError("implied sigma is not positive semidefinite")
    return SigmaEstimate(best_v, sigma, best_loss, tuple(trace), it, tuple(model_ids), cfg)
