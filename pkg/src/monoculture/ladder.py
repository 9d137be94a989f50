"""Sweeps of the IRT null over latent dimension, and the IRT-0.5 vs IRT-1 comparison."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import irt, residuals
from .dataset import CorrectnessMatrix, write_matrix_csv
from .errors import MonocultureError, ValidationError

DEFAULT_KS = (1, 2, 4, 8, 16, 32, 64)
CSV_FIELDS = ("K", "mse", "abs_mean", "abs_max", "median_abs", "offdiag_frobenius", "loglik")


@dataclass(frozen=True)
class LadderRecord:
    K: int
    mse: float
    abs_mean: float
    abs_max: float
    median_abs: float
    offdiag_frobenius: float
    final_log_likelihood: float
    penalized_log_likelihood: float


@dataclass(frozen=True)
class LadderResult:
    records: tuple
    warm_start: bool
    fits: tuple = ()
    reports: tuple = ()

    @property
    def ks(self) -> list[int]:
        return [r.K for r in self.records]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_FIELDS)
            for r in self.records:
                w.writerow([r.K, repr(r.mse), repr(r.abs_mean), repr(r.abs_max),
                            repr(r.median_abs), repr(r.offdiag_frobenius),
                            repr(r.final_log_likelihood)])


def default_ks(m: int) -> list[int]:
    ks = [k for k in DEFAULT_KS if k <= m - 1]
    return ks or [1]


def sweep(y: CorrectnessMatrix, ks=None, cfg: irt.IrtConfig = irt.IrtConfig(),
          warm_start: bool = True) -> LadderResult:
    """Fit the full IRT null at each K in ``ks`` and summarise the residuals.

    With ``warm_start`` each fit starts from the previous one zero-padded to
    the new dimension, so the best-iterate rule makes the penalised
    log-likelihood nondecreasing along the ladder.
    """
    ks = default_ks(y.m) if ks is None else [int(k) for k in ks]
    if not ks:
        raise ValidationError("ks must contain at least one dimension")
    if any(k < 1 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValidationError(f"ks must be strictly ascending positive integers, got {ks}")
    if cfg.accuracy_only:
        raise ValidationError("the ladder sweeps the full IRT null; accuracy_only is not allowed")

    records, fits, reports = [], [], []
    prev = None
    for k in ks:
        kcfg = replace(cfg, dim=k)
        init = irt.warm_start_embed(prev, k) if (warm_start and prev is not None) else None
        try:
            f = irt.fit(y, kcfg, init=init)
            rep = residuals.report(y, f.p_hat)
        except MonocultureError as exc:
            exc.args = (f"K={k}: {exc}",)
            raise
        s = rep.summaries
        records.append(LadderRecord(k, f.mse, s["abs_mean"], s["abs_max"], s["median_abs"],
                                    s["offdiag_frobenius"], f.final_log_likelihood,
                                    f.penalized_log_likelihood))
        fits.append(f)
        reports.append(rep)
        prev = f
    return LadderResult(tuple(records), warm_start, tuple(fits), tuple(reports))


@dataclass(frozen=True)
class NullComparison:
    irt05: residuals.ExcessReport
    irt1: residuals.ExcessReport
    difference: np.ndarray  # irt05 sigma minus irt1 sigma
    rank_correlation: float

    def mean_offdiag(self) -> tuple[float, float]:
        return (float(residuals.offdiag(self.irt05.correlation).mean()),
                float(residuals.offdiag(self.irt1.correlation).mean()))


def compare_irt05_irt1(y: CorrectnessMatrix, cfg: irt.IrtConfig = irt.IrtConfig()) -> NullComparison:
    f05 = irt.fit(y, replace(cfg, accuracy_only=True, dim=1))
    f1 = irt.fit(y, replace(cfg, accuracy_only=False, dim=1))
    r05 = residuals.report(y, f05.p_hat)
    r1 = residuals.report(y, f1.p_hat)
    iu = np.triu_indices(y.m, 1)
    # ordering stability is reported, never asserted
    rho = stats.spearmanr(r05.correlation[iu], r1.correlation[iu]).statistic if y.m > 2 else np.nan
    return NullComparison(r05, r1, r05.correlation - r1.correlation, float(rho))


def save_comparison(cmp: NullComparison, directory, model_ids) -> dict:
    directory = Path(directory)
    d05 = cmp.irt05.save(directory, "irt05")
    d1 = cmp.irt1.save(directory, "irt1")
    write_matrix_csv(model_ids, cmp.difference, directory / "irt05_minus_irt1.csv")
    m05, m1 = cmp.mean_offdiag()
    return {"irt05": d05["summaries"], "irt1": d1["summaries"],
            "mean_offdiag_irt05": m05, "mean_offdiag_irt1": m1,
            "rank_correlation": cmp.rank_correlation}
