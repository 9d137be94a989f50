import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from monoculture import dataset, synth  # noqa: E402


def matrix(values, families=None, categories=None):
    values = np.asarray(values)
    n, m = values.shape
    return dataset.CorrectnessMatrix(
        [f"i{i}" for i in range(n)], [f"m{j}" for j in range(m)], values, categories, families)


def planted(n, m, dim=1, seed=0, **kw):
    null = synth.planted_irt(n, m, dim, seed, **kw)
    mat, truth = synth.generate(synth.GeneratorSpec(null, n, seed + 1000))
    return mat, null


def choice_table(sel, correct, k, families=None):
    sel = np.asarray(sel)
    n, m = sel.shape
    return dataset.ChoiceTable(
        [f"i{i}" for i in range(n)], [f"m{j}" for j in range(m)], sel, correct, k,
        model_family=families)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
