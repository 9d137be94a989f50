"""Pairwise agreement baselines on multiple-choice selections.

Two statistics are provided:

* Kim-style error agreement. Among items both models get wrong, the rate at
  which they pick the same wrong option, against the rate expected if each
  picked uniformly among the K_i - 1 wrong options.
* CAPA, a chance-adjusted agreement over all items in the discrete
  (argmax-only) setting.

Both are ratios of counts, so they are computed in exact rational arithmetic
and rounded once; clone pairs give exactly 2/3 and 1, for instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dataset import ChoiceTable, write_matrix_csv
from .errors import UndefinedStatisticError, ValidationError

STATISTICS = ("kim_excess", "kim_kappa_err", "capa")


@dataclass(frozen=True)
class PairwiseStat:
    pair: tuple
    statistic: str
    value: float
    support: int
    flags: tuple = ()


def _columns(t: ChoiceTable, j, l):
    sel = t.dense()
    return sel[:, t.model_index(j)], sel[:, t.model_index(l)]


def _pair_ids(t, j, l):
    return (t.model_ids[t.model_index(j)], t.model_ids[t.model_index(l)])


def _mean_inv(num_options) -> Fraction:
    """Exact mean of 1 / (K_i - 1) over the given items."""
    ks, counts = np.unique(num_options, return_counts=True)
    total = sum(Fraction(int(c), int(k) - 1) for k, c in zip(ks, counts))
    return total / int(counts.sum())


def kim_error_agreement(t: ChoiceTable, j, l, chance_over="joint_errors"):
    """Return ``(excess, kappa)`` statistics for models ``j`` and ``l``.

    ``chance_over`` selects the items averaged in the chance rate:
    ``"joint_errors"`` (default) or ``"all"``. When the chance rate is 1
    (every averaged item has two options) kappa is undefined; it is then
    returned as NaN with the ``"kappa_undefined"`` flag.
    """
    if chance_over not in ("joint_errors", "all"):
        raise ValidationError(f"chance_over must be 'joint_errors' or 'all', got {chance_over!r}")
    aj, al = _columns(t, j, l)
    both_wrong = (aj != t.correct) & (al != t.correct)
    count = int(both_wrong.sum())
    ids = _pair_ids(t, j, l)
    if count == 0:
        raise UndefinedStatisticError(f"models {ids[0]!r} and {ids[1]!r} share no incorrect items")
    q = Fraction(int(np.sum(aj[both_wrong] == al[both_wrong])), count)
    q_ch = _mean_inv(t.num_options[both_wrong] if chance_over == "joint_errors" else t.num_options)
    excess = float(q - q_ch)
    if q_ch >= 1:
        kappa, flags = math.nan, ("kappa_undefined",)
    else:
        kappa, flags = float((q - q_ch) / (1 - q_ch)), ()
    return (PairwiseStat(ids, "kim_excess", excess, count, flags),
            PairwiseStat(ids, "kim_kappa_err", kappa, count, flags))


def goel_capa(t: ChoiceTable, j, l) -> PairwiseStat:
    aj, al = _columns(t, j, l)
    ids = _pair_ids(t, j, l)
    n = t.n
    c_obs = Fraction(int(np.sum(aj == al)), n)
    pj = Fraction(int(np.sum(aj == t.correct)), n)
    pl = Fraction(int(np.sum(al == t.correct)), n)
    c_exp = pj * pl + (1 - pj) * (1 - pl) * _mean_inv(t.num_options)
    if c_exp >= 1:
        raise UndefinedStatisticError(f"chance agreement is 1 for models {ids[0]!r} and {ids[1]!r}")
    return PairwiseStat(ids, "capa", float((c_obs - c_exp) / (1 - c_exp)), n)


@dataclass(frozen=True)
class BaselineMatrix:
    statistic: str
    model_ids: tuple
    values: np.ndarray
    missing: dict = field(default_factory=dict)  # (j, l) -> reason

    def save(self, path) -> None:
        write_matrix_csv(self.model_ids, self.values, path)

    def missing_records(self) -> list[dict]:
        return [{"model_a": self.model_ids[j], "model_b": self.model_ids[l], "reason": r}
                for (j, l), r in sorted(self.missing.items())]


def pair_statistic(t: ChoiceTable, j: int, l: int, statistic: str, chance_over="joint_errors"):
    if statistic == "capa":
        return goel_capa(t, j, l)
    excess, kappa = kim_error_agreement(t, j, l, chance_over)
    return excess if statistic == "kim_excess" else kappa


def baseline_matrix(t: ChoiceTable, statistic: str = "capa",
                    chance_over: str = "joint_errors") -> BaselineMatrix:
    if statistic not in STATISTICS:
        raise ValidationError(f"unknown statistic {statistic!r}; choose from {STATISTICS}")
    t.dense()
    m = t.m
    out = np.full((m, m), np.nan)
    missing = {}
    if statistic != "kim_excess":
        np.fill_diagonal(out, 1.0)
    for j in range(m):
        if statistic == "kim_excess":
            # self-agreement is 1 - q_ch, defined whenever the model errs at all
            try:
                out[j, j] = pair_statistic(t, j, j, statistic, chance_over).value
            except UndefinedStatisticError as exc:
                missing[(j, j)] = str(exc)
        for l in range(j + 1, m):
            try:
                s = pair_statistic(t, j, l, statistic, chance_over)
            except UndefinedStatisticError as exc:
                missing[(j, l)] = str(exc)
                continue
            if math.isnan(s.value):
                missing[(j, l)] = ", ".join(s.flags) or "undefined"
            out[j, l] = out[l, j] = s.value
    return BaselineMatrix(statistic, t.model_ids, out, missing)
