"""Small builders shared across test modules."""

import numpy as np

import duracast as dc


def make_ds(columns, values, missing=None):
    """Dataset from (name, kind, role[, levels]) tuples and a value matrix."""
    sch = dc.schema(columns)
    values = np.asarray(values, dtype=float)
    if missing is None:
        missing = np.zeros_like(values, dtype=bool)
    return dc.Dataset(sch, values, np.asarray(missing, dtype=bool))


def continuous_ds(x, y, names=None):
    """All-continuous dataset with inputs x and target y."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    names = names or ["x%d" % j for j in range(x.shape[1])]
    cols = [(n, "continuous", "input") for n in names] + [("y", "continuous", "target")]
    return make_ds(cols, np.column_stack([x, np.asarray(y, dtype=float)]))
