"""Probit IRT null model fitted by penalised joint maximum likelihood.

The model is ``p_ij = Phi(a_i . theta_j + b_i)``. Parameters are fitted by
full-batch Adam ascent on

    sum_ij [Y log p + (1 - Y) log(1 - p)]
        - l2_item (|a|^2 + |b|^2) - l2_ability |theta|^2

with periodic symmetric whitening of ``theta`` (and compensation of ``a`` and
``b`` so that predictions do not move). The iterate with the best penalised
objective is returned.

The ridge terms are not invariant under whitening, which shifts ``theta``
into ``b`` and rescales ``a`` against ``theta``. They are therefore evaluated
in the centred gauge at the best scaling: with ``tbar`` the mean ability,
the intercept penalty applies to ``b + a tbar`` and the factor penalty is
``min_A l2_item |a A|^2 + l2_ability |(theta - tbar) A^-T|^2``, which equals
``2 sqrt(l2_item l2_ability) |a (theta - tbar)^T|_*`` (nuclear norm). On
whitened iterates this is the ridge minimised over rescalings. Whitening
leaves it unchanged, so the best-iterate and stopping rules compare like
with like.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import special

from . import mathkit
from .dataset import CorrectnessMatrix
from .errors import ConditioningError, NumericalError, UnsupportedError, ValidationError
from .optim import Adam

log = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class IrtConfig:
    dim: int = 1
    accuracy_only: bool = False
    l2_item: float | None = None
    l2_ability: float | None = None
    learning_rate: float = 0.05
    max_iters: int = 2000
    whiten_every: int = 25
    tol: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.accuracy_only:
            object.__setattr__(self, "dim", 1)
        if int(self.dim) < 1:
            raise ValidationError("dim must be >= 1 (use accuracy_only for the ability-only null)")
        for name in ("learning_rate", "tol"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValidationError(f"{name} must be finite and positive, got {v}")
        for name in ("l2_item", "l2_ability"):
            v = getattr(self, name)
            if v is not None and (not np.isfinite(v) or v < 0):
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")
        if self.max_iters < 1 or self.whiten_every < 1:
            raise ValidationError("max_iters and whiten_every must be >= 1")

    @classmethod
    def irt05(cls, **kw) -> "IrtConfig":
        """The ability-only null: p_ij = Phi(theta_j)."""
        return cls(accuracy_only=True, **kw)

    def resolved(self, n: int, m: int) -> "IrtConfig":
        default = 1e-3 * n * m / (n + m)
        return replace(
            self,
            l2_item=default if self.l2_item is None else float(self.l2_item),
            l2_ability=default if self.l2_ability is None else float(self.l2_ability),
        )


@dataclass
class IrtParams:
    a: np.ndarray  # n x K
    b: np.ndarray  # n
    theta: np.ndarray  # m x K

    @property
    def dim(self) -> int:
        return self.theta.shape[1]

    def copy(self) -> "IrtParams":
        return IrtParams(self.a.copy(), self.b.copy(), self.theta.copy())

    def linear_predictor(self) -> np.ndarray:
        return self.a @ self.theta.T + self.b[:, None]


@dataclass(frozen=True)
class IrtFit:
    a: np.ndarray
    b: np.ndarray
    theta: np.ndarray
    p_hat: np.ndarray
    final_log_likelihood: float
    penalized_log_likelihood: float
    mse: float
    config: IrtConfig
    item_ids: tuple = ()
    model_ids: tuple = ()
    iterations: int = 0
    trace: tuple = field(default=(), repr=False)

    @property
    def dim(self) -> int:
        return self.theta.shape[1]

    @property
    def params(self) -> IrtParams:
        return IrtParams(self.a.copy(), self.b.copy(), self.theta.copy())

    def difficulty(self) -> np.ndarray:
        """d_i = -b_i, so that larger means harder."""
        return -self.b

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "item_ids": list(self.item_ids),
            "model_ids": list(self.model_ids),
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "theta": self.theta.tolist(),
            "final_log_likelihood": self.final_log_likelihood,
            "penalized_log_likelihood": self.penalized_log_likelihood,
            "mse": self.mse,
            "iterations": self.iterations,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_dict(cls, d: dict) -> "IrtFit":
        a = np.asarray(d["a"], float).reshape(len(d["b"]), -1)
        b = np.asarray(d["b"], float)
        theta = np.asarray(d["theta"], float).reshape(len(d["model_ids"]) or -1, a.shape[1])
        p_hat = mathkit.clamp_prob(special.ndtr(a @ theta.T + b[:, None]))
        return cls(
            a, b, theta, p_hat,
            float(d["final_log_likelihood"]),
            float(d.get("penalized_log_likelihood", d["final_log_likelihood"])),
            float(d["mse"]),
            IrtConfig(**d["config"]),
            tuple(d.get("item_ids", ())),
            tuple(d.get("model_ids", ())),
            int(d.get("iterations", 0)),
        )

    @classmethod
    def load(cls, path) -> "IrtFit":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _factor_penalty(a, theta, lam):
    """``lam * |a theta^T|_*`` and its gradients, via thin QR of both factors."""
    qa, ra = np.linalg.qr(a)
    qt, rt = np.linalg.qr(theta)
    u, sv, vt = np.linalg.svd(ra @ rt.T)
    uv = u @ vt
    return lam * float(sv.sum()), lam * (qa @ (uv @ rt)), lam * (qt @ (uv.T @ ra))


def _objective_and_grad(y_sign, params: IrtParams, cfg: IrtConfig, want_grad=True):
    eta = params.linear_predictor()
    z = y_sign * eta
    log_cdf = special.log_ndtr(z)
    loglik = float(log_cdf.sum())
    if cfg.accuracy_only:
        penalty = cfg.l2_ability * float(np.sum(params.theta**2))
    else:
        lam = 2.0 * np.sqrt(cfg.l2_item * cfg.l2_ability)
        tbar = params.theta.mean(axis=0)
        # rows of the centred-theta gradient already sum to zero, so no chain term
        fac, grad_a, grad_t = _factor_penalty(params.a, params.theta - tbar, lam)
        b0 = params.b + params.a @ tbar
        penalty = fac + cfg.l2_item * float(np.sum(b0**2))
    if not want_grad:
        return loglik, loglik - penalty, None
    # d loglik / d eta = s * phi(eta) / Phi(s * eta), formed in log space
    g = y_sign * np.exp(-0.5 * eta * eta - _LOG_SQRT_2PI - log_cdf)
    if cfg.accuracy_only:
        return loglik, loglik - penalty, {
            "theta": g.T @ params.a - 2.0 * cfg.l2_ability * params.theta}
    gb0 = 2.0 * cfg.l2_item * b0
    grads = {
        "theta": g.T @ params.a - grad_t - (params.a.T @ gb0)[None, :] / params.theta.shape[0],
        "a": g @ params.theta - grad_a - np.outer(gb0, tbar),
        "b": g.sum(axis=1) - gb0,
    }
    return loglik, loglik - penalty, grads


def objective(y, params: IrtParams, cfg: IrtConfig) -> tuple[float, float]:
    """(log-likelihood, penalised log-likelihood) of ``params`` on ``y``."""
    y = np.asarray(y, float)
    cfg = cfg.resolved(*y.shape)
    ll, pen, _ = _objective_and_grad(2.0 * y - 1.0, params, cfg, want_grad=False)
    return ll, pen


def gradient(y, params: IrtParams, cfg: IrtConfig) -> dict:
    y = np.asarray(y, float)
    cfg = cfg.resolved(*y.shape)
    return _objective_and_grad(2.0 * y - 1.0, params, cfg)[2]


def apply_whitening(params: IrtParams) -> IrtParams:
    """Whiten theta and compensate a, b so a_i . theta_j + b_i is unchanged."""
    white, w, mu = mathkit.whiten(params.theta)
    b = params.b + params.a @ mu
    a = params.a @ np.linalg.inv(w)
    return IrtParams(a, b, white)


def initial_params(y: np.ndarray, cfg: IrtConfig, rng: np.random.Generator) -> IrtParams:
    n, m = y.shape
    if cfg.accuracy_only:
        return IrtParams(np.ones((n, 1)), np.zeros(n), rng.normal(0.0, 0.1, size=(m, 1)))
    lo = 1.0 / (2 * m)
    item_mean = np.clip(y.mean(axis=1), lo, 1.0 - lo)
    return IrtParams(
        rng.normal(0.0, 0.1, size=(n, cfg.dim)),
        special.ndtri(item_mean),
        rng.normal(0.0, 0.1, size=(m, cfg.dim)),
    )


def warm_start_embed(fit_k: IrtFit, dim: int | None = None) -> IrtParams:
    """Zero-pad a K-dimensional fit into ``dim`` (default K + 1) dimensions.

    Predictions and the penalised objective are unchanged by the embedding.
    """
    if fit_k.config.accuracy_only:
        raise UnsupportedError("cannot embed the ability-only null into a higher dimension")
    k = fit_k.dim
    dim = k + 1 if dim is None else int(dim)
    if dim < k:
        raise ValidationError(f"cannot embed dimension {k} into {dim}")
    pad = dim - k
    return IrtParams(
        np.hstack([fit_k.a, np.zeros((fit_k.a.shape[0], pad))]),
        fit_k.b.copy(),
        np.hstack([fit_k.theta, np.zeros((fit_k.theta.shape[0], pad))]),
    )


def _jitter_dead_dims(params: IrtParams, rng) -> IrtParams:
    # zero-padded columns sit on a saddle (both gradients vanish); nudge them off it
    dead = np.all(params.theta == 0, axis=0) & np.all(params.a == 0, axis=0)
    if not np.any(dead):
        return params
    p = params.copy()
    k = int(dead.sum())
    p.theta[:, dead] = rng.normal(0.0, 0.1, size=(p.theta.shape[0], k))
    p.a[:, dead] = rng.normal(0.0, 0.1, size=(p.a.shape[0], k))
    return p


def _check_whitening(before: IrtParams, after: IrtParams, it: int):
    diff = np.max(np.abs(special.ndtr(before.linear_predictor())
                         - special.ndtr(after.linear_predictor())))
    if not diff <= 1e-10:
        raise NumericalError(f"whitening moved predictions by {diff:.3g} at iteration {it}")


def _whiten_checked(params: IrtParams, it: int) -> IrtParams:
    try:
        whitened = apply_whitening(params)
    except ConditioningError as exc:
        log.debug("skipping whitening at iteration %d: %s", it, exc)
        return params
    _check_whitening(params, whitened, it)
    return whitened


def fit(y: CorrectnessMatrix | np.ndarray, cfg: IrtConfig = IrtConfig(),
        init: IrtParams | None = None) -> IrtFit:
    if isinstance(y, CorrectnessMatrix):
        item_ids, model_ids, y = y.item_ids, y.model_ids, y.as_float()
    else:
        y = np.asarray(y, float)
        item_ids, model_ids = (), ()
    if y.ndim != 2 or y.shape[0] < 2 or y.shape[1] < 2:
        raise ValidationError(f"need at least 2 items and 2 models, got shape {y.shape}")
    n, m = y.shape
    cfg = cfg.resolved(n, m)
    rng = mathkit.make_rng(cfg.seed)
    y_sign = 2.0 * y - 1.0

    if init is None:
        params = initial_params(y, cfg, rng)
    else:
        if cfg.accuracy_only:
            raise UnsupportedError("warm starts are not supported for the ability-only null")
        if init.a.shape != (n, cfg.dim) or init.theta.shape != (m, cfg.dim):
            raise ValidationError(
                f"initial parameters have dimension {init.dim}, config expects {cfg.dim}"
            )
        params = init.copy()

    opt = Adam(lr=cfg.learning_rate, ascent=True)
    whiten = not cfg.accuracy_only
    best = None
    best_obj = -np.inf
    trace = []
    checkpoint = None
    it = 0
    for it in range(cfg.max_iters + 1):
        if it > 0 and it % cfg.whiten_every == 0:
            if checkpoint is not None and best_obj - checkpoint < cfg.tol * cfg.whiten_every * abs(checkpoint):
                break
            checkpoint = best_obj
            if whiten:
                params = _whiten_checked(params, it)
        loglik, obj, grads = _objective_and_grad(y_sign, params, cfg)
        if not np.isfinite(obj) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericalError(f"non-finite objective or gradient at iteration {it}")
        trace.append(obj)
        if obj > best_obj:
            best_obj, best = obj, params.copy()
        if it == cfg.max_iters:
            break
        if it == 0 and init is not None:
            # leave the embedded point as the first recorded iterate
            params = _jitter_dead_dims(params, rng)
            continue
        state = {"theta": params.theta}
        if not cfg.accuracy_only:
            state.update(a=params.a, b=params.b)
        opt.step(state, grads)
        params = IrtParams(state.get("a", params.a), state.get("b", params.b), state["theta"])

    final_ll, final_obj = objective(y, best, cfg)
    p_hat = mathkit.clamp_prob(special.ndtr(best.linear_predictor()))
    mse = float(np.mean((y - p_hat) ** 2))
    return IrtFit(
        best.a, best.b, best.theta, p_hat, final_ll, final_obj, mse, cfg,
        tuple(item_ids), tuple(model_ids), it, tuple(trace),
    )


def from_params(y: CorrectnessMatrix | np.ndarray, params: IrtParams,
                cfg: IrtConfig = IrtConfig()) -> IrtFit:
    """Wrap fixed parameters as an IrtFit on ``y`` without fitting (plug-in use)."""
    if isinstance(y, CorrectnessMatrix):
        item_ids, model_ids, y = y.item_ids, y.model_ids, y.as_float()
    else:
        y = np.asarray(y, float)
        item_ids, model_ids = (), ()
    params = IrtParams(np.atleast_2d(np.asarray(params.a, float)).reshape(y.shape[0], -1),
                       np.asarray(params.b, float),
                       np.asarray(params.theta, float).reshape(y.shape[1], -1))
    cfg = replace(cfg, dim=params.dim).resolved(*y.shape)
    ll, pen = objective(y, params, cfg)
    p_hat = mathkit.clamp_prob(special.ndtr(params.linear_predictor()))
    return IrtFit(params.a, params.b, params.theta, p_hat, ll, pen,
                  float(np.mean((y - p_hat) ** 2)), cfg, tuple(item_ids), tuple(model_ids))


def predict(f: IrtFit, items=None, models=None) -> np.ndarray:
    n, m = f.a.shape[0], f.theta.shape[0]
    items = np.arange(n) if items is None else np.asarray(items, dtype=int)
    models = np.arange(m) if models is None else np.asarray(models, dtype=int)
    if items.size and (items.min() < 0 or items.max() >= n):
        raise ValidationError(f"item index out of range 0..{n - 1}")
    if models.size and (models.min() < 0 or models.max() >= m):
        raise ValidationError(f"model index out of range 0..{m - 1}")
    eta = f.a[items] @ f.theta[models].T + f.b[items][:, None]
    return mathkit.clamp_prob(special.ndtr(eta))
