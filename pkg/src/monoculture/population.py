"""Population-relativity diagnostics.

The fitted null, and hence the excess correlation attributed to a group of
models, depends on which other models and items are in the population. This
module fits the null over nested populations and reports what changes
between them. It also holds the heterogeneity index and the K=2 latent
geometry report.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import linalg

from . import irt, mathkit, residuals
from .dataset import CorrectnessMatrix, PopulationSpec, restrict
from .errors import ValidationError

D0_PREFIX = "d0::"
D0_FAMILY = "d0"
UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class HeterogeneityIndex:
    G_U: np.ndarray
    G_V: np.ndarray
    lambda_min_U: float
    lambda_min_V: float

    @property
    def h(self) -> float:
        return min(self.lambda_min_U, self.lambda_min_V)

    def to_dict(self) -> dict:
        return {"lambda_min_U": self.lambda_min_U, "lambda_min_V": self.lambda_min_V,
                "h": self.h, "G_U": self.G_U.tolist(), "G_V": self.G_V.tolist()}


def heterogeneity_from_factors(u, v) -> HeterogeneityIndex:
    """Unnormalised, uncentred Gram matrices of item and model factors."""
    u = np.atleast_2d(np.asarray(u, float))
    v = np.atleast_2d(np.asarray(v, float))
    gu, gv = u.T @ u, v.T @ v
    # clip round-off below zero; the Grams are PSD by construction
    lu = max(mathkit.smallest_eigenvalue(gu), 0.0)
    lv = max(mathkit.smallest_eigenvalue(gv), 0.0)
    return HeterogeneityIndex(gu, gv, lu, lv)


def heterogeneity(fit: irt.IrtFit) -> HeterogeneityIndex:
    if fit.config.accuracy_only:
        raise ValidationError("heterogeneity needs a full IRT fit with item factors")
    return heterogeneity_from_factors(fit.a, fit.theta)


def inject_d0_fleet(y: CorrectnessMatrix, count: int, mean=0.7, sd=0.2, seed=0) -> CorrectnessMatrix:
    """Append ``count`` models whose success probability ignores the item."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    if sd < 0:
        raise ValidationError("sd must be >= 0")
    rng = mathkit.make_rng(seed)
    p = np.clip(rng.normal(mean, sd, size=count), 0.01, 0.99)
    new = (rng.random((y.n, count)) < p[None, :]).astype(np.int8)
    width = len(str(count - 1))
    ids = [f"{D0_PREFIX}{k:0{width}d}" for k in range(count)]
    clash = set(ids) & set(y.model_ids)
    if clash:
        raise ValidationError(f"d0 ids already present: {sorted(clash)[:3]}")
    fam = dict(y.model_family) if y.model_family is not None else {
        mid: UNASSIGNED for mid in y.model_ids}
    fam.update({mid: D0_FAMILY for mid in ids})
    return CorrectnessMatrix(
        y.item_ids, y.model_ids + tuple(ids), np.hstack([y.values, new]),
        y.item_category, fam,
    )


def difficulty_histogram(d, bins: int = 20):
    """Equal-width histogram of difficulties over their own range."""
    d = np.asarray(d, float)
    lo, hi = float(d.min()), float(d.max())
    if hi <= lo:
        hi = lo + 1.0
    counts, edges = np.histogram(d, bins=bins, range=(lo, hi))
    return edges, counts


def extremity(counts, outer: float = 0.1) -> float:
    """Share of mass in the outer ``outer`` fraction of bins (split between both tails)."""
    counts = np.asarray(counts, float)
    k = max(1, int(round(len(counts) * outer / 2)))
    return float((counts[:k].sum() + counts[-k:].sum()) / counts.sum())


def kurtosis(d) -> float:
    d = np.asarray(d, float)
    c = d - d.mean()
    var = np.mean(c**2)
    return float(np.mean(c**4) / var**2) if var > 0 else float("nan")


def within_family_mean(sigma, model_ids, family_models) -> float:
    idx = [model_ids.index(m) for m in family_models]
    if len(idx) < 2:
        return float("nan")
    sub = np.asarray(sigma)[np.ix_(idx, idx)]
    return float(residuals.offdiag(sub).mean())


@dataclass(frozen=True)
class PopulationStage:
    label: str
    spec: PopulationSpec
    report: residuals.ExcessReport
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    heterogeneity: HeterogeneityIndex
    focal_mean: float
    fit: irt.IrtFit

    @property
    def extremity(self) -> float:
        return extremity(self.hist_counts)

    def summary(self) -> dict:
        return {
            "label": self.label,
            "models": len(self.spec.models),
            "focal_within_family_mean": self.focal_mean,
            "histogram_extremity": self.extremity,
            "difficulty_kurtosis": kurtosis(self.fit.difficulty()),
            "heterogeneity": self.heterogeneity.h,
            "summaries": self.report.summaries,
        }

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.report.save(directory, "excess")
        write_histogram(self.hist_edges, self.hist_counts, directory / "difficulty_histogram.csv")


def write_histogram(edges, counts, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def progressive_populations(y: CorrectnessMatrix, stages, focal_family: str,
                            cfg: irt.IrtConfig = irt.IrtConfig(), labels=None,
                            bins: int = 20) -> list[PopulationStage]:
    """Fit the K=1 null on nested model populations given as family sets."""
    if y.model_family is None:
        raise ValidationError("progressive populations need a model family map")
    stages = [tuple(s) for s in stages]
    if not stages:
        raise ValidationError("at least one stage is required")
    known = set(y.families())
    for s in stages:
        unknown = set(s) - known
        if unknown:
            raise ValidationError(f"unknown families in stage: {sorted(unknown)}")
    for a, b in zip(stages, stages[1:]):
        if not set(a) <= set(b):
            raise ValidationError("stages must be nested and ascending")
    if focal_family not in stages[0]:
        raise ValidationError(f"focal family {focal_family!r} is not in the first stage")
    labels = list(labels) if labels is not None else ["+".join(s) for s in stages]
    kcfg = replace(cfg, dim=1, accuracy_only=False)

    out = []
    for label, fams in zip(labels, stages):
        models = y.models_in(fams)
        if len(models) < 2:
            raise ValidationError(f"stage {label!r} has fewer than 2 models")
        spec = PopulationSpec(y.item_ids, models)
        sub = restrict(y, spec)
        f = irt.fit(sub, kcfg)
        rep = residuals.report(sub, f.p_hat)
        edges, counts = difficulty_histogram(f.difficulty(), bins)
        focal = within_family_mean(rep.correlation, list(sub.model_ids), sub.models_in([focal_family]))
        out.append(PopulationStage(label, spec, rep, edges, counts, heterogeneity(f), focal, f))
    return out


# --- latent geometry ---------------------------------------------------------


def category_accuracy(y: CorrectnessMatrix):
    """Models x categories accuracy matrix, with the category labels."""
    if y.item_category is None:
        return None, []
    cats = sorted(set(y.item_category.values()))
    col = np.array([y.item_category[i] for i in y.item_ids])
    vals = y.as_float()
    acc = np.column_stack([vals[col == c].mean(axis=0) for c in cats])
    return acc, cats


def latent_geometry_report(fit: irt.IrtFit, y: CorrectnessMatrix) -> dict:
    if fit.dim != 2 or fit.config.accuracy_only:
        raise ValidationError(f"latent geometry needs a K=2 fit, got K={fit.dim}")
    if fit.theta.shape[0] != y.m:
        raise ValidationError("fit and data disagree on the number of models")
    notes = []
    accuracy = y.as_float().mean(axis=0)
    fam = y.model_family
    if fam is None:
        notes.append("no model family map; family column left blank")
    rows = [{"model_id": mid, "theta1": float(fit.theta[j, 0]), "theta2": float(fit.theta[j, 1]),
             "accuracy": float(accuracy[j]), "family": fam[mid] if fam else ""}
            for j, mid in enumerate(y.model_ids)]
    acc, cats = category_accuracy(y)
    pca = None
    if acc is None:
        notes.append("no item categories; PCA of category accuracies omitted")
    elif len(cats) == 1:
        pca = [1.0]
    else:
        try:
            pca = mathkit.pca_variance_explained(acc).tolist()
        except ValidationError as exc:
            notes.append(f"PCA omitted: {exc}")
    return {"theta": rows, "categories": cats, "pca_variance_explained": pca,
            "category_accuracy": acc.tolist() if acc is not None else None, "notes": notes}


def write_geometry_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", "theta1", "theta2", "accuracy", "family"])
        for r in report["theta"]:
            w.writerow([r["model_id"], repr(r["theta1"]), repr(r["theta2"]),
                        repr(r["accuracy"]), r["family"]])


# --- recovery modulo invariances ----------------------------------------------


def subspace_distance(a, b) -> float:
    """Procrustes distance between the orthonormalised column spaces of a and b."""
    qa, _ = np.linalg.qr(np.asarray(a, float))
    qb, _ = np.linalg.qr(np.asarray(b, float))
    r, _ = linalg.orthogonal_procrustes(qa, qb)
    return float(np.linalg.norm(qa @ r - qb))


def recovery_error(fit: irt.IrtFit, a_true, theta_true) -> float:
    """Parameter error modulo the model's affine gauge.

    Predictions depend on (a, theta) only through the column span of ``a``
    and of centred ``theta`` (an invertible A and a shift absorbed by b leave
    them unchanged), so both spans are compared after Procrustes alignment.
    """
    th_hat = fit.theta - fit.theta.mean(axis=0)
    th_true = np.asarray(theta_true, float)
    th_true = th_true - th_true.mean(axis=0)
    du = subspace_distance(fit.a, a_true)
    dv = subspace_distance(th_hat, th_true)
    return float(np.hypot(du, dv))
