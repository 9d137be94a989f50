"""Correctness and multiple-choice data: containers, CSV ingestion, transforms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import CompletenessError, ParseError, ValidationError

PAIR_SEP = "::"


def _check_unique(ids, what):
    seen = set()
    for x in ids:
        if x in seen:
            raise ValidationError(f"duplicate {what} id {x!r}")
        seen.add(x)


def _check_cover(mapping, ids, what):
    if mapping is None:
        return None
    missing = [x for x in ids if x not in mapping]
    if missing:
        raise ValidationError(f"{what} map is missing ids {missing[:5]}")
    return {x: mapping[x] for x in ids}


@dataclass(frozen=True, eq=False)
class CorrectnessMatrix:
    """Binary outcomes ``values[i, j]`` for item ``i`` and model ``j``.

    Shape must be at least 1x1; fitting code enforces n, m >= 2.
    """

    item_ids: tuple
    model_ids: tuple
    values: np.ndarray
    item_category: Mapping[str, str] | None = None
    model_family: Mapping[str, str] | None = None

    def __post_init__(self):
        item_ids = tuple(str(x) for x in self.item_ids)
        model_ids = tuple(str(x) for x in self.model_ids)
        values = np.array(self.values)
        if values.ndim != 2 or values.shape != (len(item_ids), len(model_ids)):
            raise ValidationError(
                f"values shape {values.shape} does not match "
                f"{len(item_ids)} items x {len(model_ids)} models"
            )
        if values.size == 0:
            raise ValidationError("correctness matrix is empty")
        if not np.all((values == 0) | (values == 1)):
            i, j = np.argwhere((values != 0) & (values != 1))[0]
            raise ParseError(
                f"cell (item {item_ids[i]!r}, model {model_ids[j]!r}) is not 0/1"
            )
        _check_unique(item_ids, "item")
        _check_unique(model_ids, "model")
        values = values.astype(np.int8)
        values.setflags(write=False)
        object.__setattr__(self, "item_ids", item_ids)
        object.__setattr__(self, "model_ids", model_ids)
        object.__setattr__(self, "values", values)
        object.__setattr__(
            self, "item_category", _check_cover(self.item_category, item_ids, "category")
        )
        object.__setattr__(
            self, "model_family", _check_cover(self.model_family, model_ids, "family")
        )

    @property
    def n(self) -> int:
        return len(self.item_ids)

    @property
    def m(self) -> int:
        return len(self.model_ids)

    @property
    def shape(self):
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, CorrectnessMatrix):
            return NotImplemented
        return (self.item_ids == other.item_ids and self.model_ids == other.model_ids
                and np.array_equal(self.values, other.values)
                and self.item_category == other.item_category
                and self.model_family == other.model_family)

    __hash__ = None

    def as_float(self) -> np.ndarray:
        return self.values.astype(float)

    def with_families(self, families: Mapping[str, str]) -> "CorrectnessMatrix":
        return CorrectnessMatrix(
            self.item_ids, self.model_ids, self.values, self.item_category, families
        )

    def with_categories(self, categories: Mapping[str, str]) -> "CorrectnessMatrix":
        return CorrectnessMatrix(
            self.item_ids, self.model_ids, self.values, categories, self.model_family
        )

    def families(self) -> list[str]:
        """Distinct families in first-appearance order."""
        if self.model_family is None:
            return []
        return list(dict.fromkeys(self.model_family[m] for m in self.model_ids))

    def models_in(self, families: Iterable[str]) -> list[str]:
        fams = set(families)
        if self.model_family is None:
            raise ValidationError("matrix has no model-family metadata")
        return [m for m in self.model_ids if self.model_family[m] in fams]


@dataclass(frozen=True)
class PopulationSpec:
    items: frozenset
    models: frozenset

    def __post_init__(self):
        object.__setattr__(self, "items", frozenset(self.items))
        object.__setattr__(self, "models", frozenset(self.models))

    @classmethod
    def full(cls, mat: CorrectnessMatrix) -> "PopulationSpec":
        return cls(frozenset(mat.item_ids), frozenset(mat.model_ids))

    def __and__(self, other: "PopulationSpec") -> "PopulationSpec":
        return PopulationSpec(self.items & other.items, self.models & other.models)


def restrict(mat: CorrectnessMatrix, spec: PopulationSpec) -> CorrectnessMatrix:
    """Submatrix over ``spec``; the parent's id order is preserved."""
    if not spec.items or not spec.models:
        raise ValidationError("population spec has an empty item or model subset")
    unknown_items = spec.items - set(mat.item_ids)
    unknown_models = spec.models - set(mat.model_ids)
    if unknown_items or unknown_models:
        raise ValidationError(
            f"population spec is out of bounds: unknown items {sorted(unknown_items)[:5]}, "
            f"unknown models {sorted(unknown_models)[:5]}"
        )
    rows = [i for i, x in enumerate(mat.item_ids) if x in spec.items]
    cols = [j for j, x in enumerate(mat.model_ids) if x in spec.models]
    items = [mat.item_ids[i] for i in rows]
    models = [mat.model_ids[j] for j in cols]
    cats = None if mat.item_category is None else {i: mat.item_category[i] for i in items}
    fams = None if mat.model_family is None else {j: mat.model_family[j] for j in models}
    return CorrectnessMatrix(items, models, mat.values[np.ix_(rows, cols)], cats, fams)


@dataclass(frozen=True)
class ChoiceTable:
    """Multiple-choice selections.

    ``selected[i, j]`` is the 1-indexed option model ``j`` chose on item ``i``;
    0 marks a missing pair. ``correct`` and ``num_options`` are per item.
    """

    item_ids: tuple
    model_ids: tuple
    selected: np.ndarray
    correct: np.ndarray
    num_options: np.ndarray
    item_category: Mapping[str, str] | None = None
    model_family: Mapping[str, str] | None = None

    def __post_init__(self):
        item_ids = tuple(str(x) for x in self.item_ids)
        model_ids = tuple(str(x) for x in self.model_ids)
        _check_unique(item_ids, "item")
        _check_unique(model_ids, "model")
        for x in item_ids:
            if PAIR_SEP in x:
                raise ValidationError(f"item id {x!r} contains reserved separator {PAIR_SEP!r}")
        sel = np.array(self.selected, dtype=np.int64)
        cor = np.array(self.correct, dtype=np.int64)
        k = np.array(self.num_options, dtype=np.int64)
        n, m = len(item_ids), len(model_ids)
        if sel.shape != (n, m) or cor.shape != (n,) or k.shape != (n,):
            raise ValidationError("choice table arrays do not match the id lists")
        if np.any(k < 2):
            i = int(np.argmax(k < 2))
            raise ValidationError(f"item {item_ids[i]!r} has fewer than 2 options")
        if np.any((cor < 1) | (cor > k)):
            i = int(np.argmax((cor < 1) | (cor > k)))
            raise ValidationError(f"item {item_ids[i]!r}: correct option out of range")
        bad = (sel != 0) & ((sel < 1) | (sel > k[:, None]))
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise ValidationError(
                f"item {item_ids[i]!r}, model {model_ids[j]!r}: "
                f"selected option {sel[i, j]} outside 1..{k[i]}"
            )
        for arr in (sel, cor, k):
            arr.setflags(write=False)
        object.__setattr__(self, "item_ids", item_ids)
        object.__setattr__(self, "model_ids", model_ids)
        object.__setattr__(self, "selected", sel)
        object.__setattr__(self, "correct", cor)
        object.__setattr__(self, "num_options", k)
        object.__setattr__(
            self, "item_category", _check_cover(self.item_category, item_ids, "category")
        )
        object.__setattr__(
            self, "model_family", _check_cover(self.model_family, model_ids, "family")
        )

    @classmethod
    def from_rows(cls, rows, meta, families=None) -> "ChoiceTable":
        """Build from ``(item_id, model_id, selected)`` rows and
        ``(item_id, correct_option, num_options[, category])`` meta rows."""
        meta = list(meta)
        item_ids = [str(r[0]) for r in meta]
        _check_unique(item_ids, "item")
        item_index = {x: i for i, x in enumerate(item_ids)}
        correct = [int(r[1]) for r in meta]
        nopt = [int(r[2]) for r in meta]
        cats = {str(r[0]): str(r[3]) for r in meta if len(r) > 3 and r[3] not in (None, "")}
        rows = list(rows)
        model_ids = list(dict.fromkeys(str(r[1]) for r in rows))
        model_index = {x: j for j, x in enumerate(model_ids)}
        sel = np.zeros((len(item_ids), len(model_ids)), dtype=np.int64)
        for item, model, choice in rows:
            item, model = str(item), str(model)
            if item not in item_index:
                raise ValidationError(f"selection for unknown item {item!r}")
            i, j = item_index[item], model_index[model]
            if sel[i, j] != 0:
                raise ValidationError(f"duplicate selection for ({item!r}, {model!r})")
            choice = int(choice)
            if choice < 1:
                raise ValidationError(f"({item!r}, {model!r}): options are 1-indexed")
            sel[i, j] = choice
        return cls(
            item_ids, model_ids, sel, correct, nopt,
            cats if len(cats) == len(item_ids) else None, families,
        )

    @property
    def n(self) -> int:
        return len(self.item_ids)

    @property
    def m(self) -> int:
        return len(self.model_ids)

    def dense(self) -> np.ndarray:
        """The selection grid, raising if any (item, model) pair is missing."""
        missing = np.argwhere(self.selected == 0)
        if len(missing):
            i, j = missing[0]
            raise CompletenessError(
                f"missing selection for (item {self.item_ids[i]!r}, "
                f"model {self.model_ids[j]!r}); {len(missing)} pairs missing"
            )
        return self.selected

    def model_index(self, model) -> int:
        if isinstance(model, (int, np.integer)):
            if not 0 <= model < self.m:
                raise ValidationError(f"model index {model} out of range")
            return int(model)
        try:
            return self.model_ids.index(str(model))
        except ValueError:
            raise ValidationError(f"unknown model {model!r}") from None


def correctness_from_choices(t: ChoiceTable) -> CorrectnessMatrix:
    sel = t.dense()
    y = (sel == t.correct[:, None]).astype(np.int8)
    return CorrectnessMatrix(t.item_ids, t.model_ids, y, t.item_category, t.model_family)


def expand_choice_pairs(t: ChoiceTable) -> CorrectnessMatrix:
    """One row per (item, option): 1 where the model's choice of that option
    matches whether the option is correct."""
    sel = t.dense()
    ids, blocks = [], []
    cats = {} if t.item_category is not None else None
    for i, item in enumerate(t.item_ids):
        opts = np.arange(1, t.num_options[i] + 1)
        chose = sel[i][None, :] == opts[:, None]
        is_key = (opts == t.correct[i])[:, None]
        blocks.append((chose == is_key).astype(np.int8))
        for c in opts:
            rid = f"{item}{PAIR_SEP}{c}"
            ids.append(rid)
            if cats is not None:
                cats[rid] = t.item_category[item]
    return CorrectnessMatrix(ids, t.model_ids, np.vstack(blocks), cats, t.model_family)


# --- CSV ingestion -----------------------------------------------------------


def _read_csv(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh) if row]


def _parse_cell(raw, where):
    raw = raw.strip()
    if raw not in ("0", "1"):
        raise ParseError(f"{where}: expected 0 or 1, got {raw!r}")
    return int(raw)


def load_correctness(path, format: str = "wide_csv") -> CorrectnessMatrix:
    rows = _read_csv(path)
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if format == "wide_csv":
        if len(header) < 2 or header[0] != "item_id":
            raise ParseError(f"{path}: header must be 'item_id,<model ids...>'")
        models = header[1:]
        items, values = [], []
        for r, row in enumerate(rows[1:], start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
            items.append(row[0].strip())
            values.append(
                [_parse_cell(c, f"row {r}, column {models[k]!r}") for k, c in enumerate(row[1:])]
            )
        if not items:
            raise ParseError(f"{path}: no data rows")
        return CorrectnessMatrix(items, models, np.array(values))
    if format == "long_csv":
        if header[:3] != ["item_id", "model_id", "value"]:
            raise ParseError(f"{path}: header must be 'item_id,model_id,value'")
        cells = {}
        for r, row in enumerate(rows[1:], start=2):
            if len(row) < 3:
                raise ParseError(f"{path}: row {r} is truncated")
            item, model = row[0].strip(), row[1].strip()
            if (item, model) in cells:
                raise ValidationError(f"{path}: duplicate pair ({item!r}, {model!r}) at row {r}")
            cells[(item, model)] = _parse_cell(row[2], f"row {r}")
        items = list(dict.fromkeys(k[0] for k in cells))
        models = list(dict.fromkeys(k[1] for k in cells))
        values = np.zeros((len(items), len(models)), dtype=np.int8)
        for i, item in enumerate(items):
            for j, model in enumerate(models):
                if (item, model) not in cells:
                    raise CompletenessError(f"{path}: missing pair ({item!r}, {model!r})")
                values[i, j] = cells[(item, model)]
        return CorrectnessMatrix(items, models, values)
    raise ValidationError(f"unknown format {format!r}; use wide_csv or long_csv")


def load_choices(path, meta_path, families_path=None) -> ChoiceTable:
    """Read a long 'item_id,model_id,selected' CSV plus its item-meta CSV."""
    rows = _read_csv(path)
    if [h.strip() for h in rows[0][:3]] != ["item_id", "model_id", "selected"]:
        raise ParseError(f"{path}: header must be 'item_id,model_id,selected'")
    sel_rows = []
    for r, row in enumerate(rows[1:], start=2):
        try:
            sel_rows.append((row[0].strip(), row[1].strip(), int(row[2])))
        except (IndexError, ValueError):
            raise ParseError(f"{path}: row {r} is malformed: {row}") from None
    meta = _read_csv(meta_path)
    head = [h.strip() for h in meta[0]]
    if head[:3] != ["item_id", "correct_option", "num_options"]:
        raise ParseError(f"{meta_path}: header must be 'item_id,correct_option,num_options,category'")
    meta_rows = []
    for r, row in enumerate(meta[1:], start=2):
        try:
            cat = row[3].strip() if len(row) > 3 else ""
            meta_rows.append((row[0].strip(), int(row[1]), int(row[2]), cat))
        except (IndexError, ValueError):
            raise ParseError(f"{meta_path}: row {r} is malformed: {row}") from None
    fams = load_families(families_path) if families_path else None
    return ChoiceTable.from_rows(sel_rows, meta_rows, fams)


def _load_map(path, key, value):
    rows = _read_csv(path)
    if [h.strip() for h in rows[0][:2]] != [key, value]:
        raise ParseError(f"{path}: header must be '{key},{value}'")
    out = {}
    for r, row in enumerate(rows[1:], start=2):
        if len(row) < 2:
            raise ParseError(f"{path}: row {r} is truncated")
        k = row[0].strip()
        if k in out:
            raise ValidationError(f"{path}: duplicate id {k!r}")
        out[k] = row[1].strip()
    return out


def load_families(path) -> dict:
    return _load_map(path, "model_id", "family")


def load_categories(path) -> dict:
    return _load_map(path, "item_id", "category")


def write_wide_csv(mat: CorrectnessMatrix, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", *mat.model_ids])
        for item, row in zip(mat.item_ids, mat.values):
            w.writerow([item, *(int(v) for v in row)])


def write_families(families: Mapping[str, str], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", "family"])
        for k, v in families.items():
            w.writerow([k, v])


def write_matrix_csv(ids, matrix, path) -> None:
    """Square model x model matrix as a wide CSV with a model-id header.

    NaN cells are written empty.
    """
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", *ids])
        for mid, row in zip(ids, np.asarray(matrix, float)):
            w.writerow([mid, *("" if np.isnan(v) else repr(float(v)) for v in row)])


def read_matrix_csv(path):
    rows = _read_csv(path)
    ids = rows[0][1:]
    mat = np.array([[float(c) if c else np.nan for c in r[1:]] for r in rows[1:]])
    return ids, mat
