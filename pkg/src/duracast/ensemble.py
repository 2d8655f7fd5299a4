"""Tree ensembles: bootstrap aggregation, least-squares boosting, out-of-bag
error, and variable importance.

A bagged model averages trees grown on bootstrap samples of size N drawn
with replacement; the expected in-bag fraction is about 0.63. A boosted
model starts from a zero predictor, fits each tree to the current residuals
and adds it scaled by the shrinkage lam, so the prediction is the sum of
lam times every tree.

Per-tree randomness derives from seed + tree index, so results do not depend
on evaluation order and could be reproduced by a parallel scheduler.
"""

import io
from dataclasses import dataclass

import numpy as np

from . import tree as tree_mod
from ._io import atomic_write_text, fmt_float, read_text
from .errors import DomainError, NoCoverage, ParseError, ShapeError

BAGGED = "bagged"
BOOSTED = "boosted"


@dataclass(frozen=True)
class EnsembleModel:
    kind: str
    trees: tuple
    stop: tree_mod.StoppingCriteria
    seed: int
    in_bag: np.ndarray = None
    lam: float = None
    feature_names: tuple = ()

    @property
    def n_trees(self):
        return len(self.trees)


@dataclass(frozen=True)
class ImportanceReport:
    """Per-variable importance scores over the model's input columns.

    permutation is None for boosted models (no bootstrap, so no out-of-bag
    rows to permute); splitgain is always available. degenerate flags
    variables whose per-tree error differences had zero spread while their
    mean was nonzero; their permutation score falls back to the raw mean."""

    names: tuple
    permutation: np.ndarray = None
    splitgain: np.ndarray = None
    iterations: int = 0
    seeds: tuple = ()
    degenerate: tuple = ()


def default_subspace(p):
    """Default feature-subset size for random-subspace splits."""
    return max(1, p // 3)


def _resolve_stop(stop, m, p):
    stop = stop or tree_mod.StoppingCriteria()
    if m is not None:
        if m == "auto":
            m = default_subspace(p)
        m = int(m)
        if m > p:
            raise DomainError("subset size m=%d exceeds feature count %d" % (m, p))
        stop = tree_mod.StoppingCriteria(
            max_splits=stop.max_splits,
            min_leaf=stop.min_leaf,
            min_branch=stop.min_branch,
            m=m,
            surrogates=stop.surrogates,
        )
    return stop


def train_bagged(ds, n_trees=150, stop=None, m=None, seed=0, rows=None):
    """Grow n_trees trees on seeded bootstrap samples and record in-bag masks.

    Args:
        ds: training dataset.
        n_trees: ensemble size (default mirrors the reference configuration).
        stop: StoppingCriteria shared by every tree.
        m: feature-subset size per split; None considers all features,
            "auto" uses max(1, p // 3).
        seed: base seed; tree t uses seed + t for its bootstrap and subsets.
        rows: training row indices (all rows when None).

    Returns:
        EnsembleModel with kind "bagged".
    """
    if n_trees < 1:
        raise DomainError("need at least one tree")
    rows = np.arange(ds.n_rows) if rows is None else np.asarray(rows, dtype=int)
    n = rows.size
    p = len(ds.schema.input_indices)
    stop = _resolve_stop(stop, m, p)
    trees = []
    in_bag = np.zeros((n_trees, ds.n_rows), dtype=bool)
    for t in range(n_trees):
        rng = np.random.Generator(np.random.PCG64(seed + t))
        draw = rng.integers(0, n, size=n)
        sample = rows[draw]
        in_bag[t, np.unique(sample)] = True
        trees.append(tree_mod.grow(ds, rows=sample, stop=stop, rng=rng))
    return EnsembleModel(
        kind=BAGGED,
        trees=tuple(trees),
        stop=stop,
        seed=seed,
        in_bag=in_bag,
        feature_names=tuple(
            ds.schema.columns[i].name for i in ds.schema.input_indices
        ),
    )


def train_lsboost(ds, n_trees=150, lam=0.1, stop=None, seed=0, rows=None):
    """Least-squares boosting: each stage fits a tree to the residuals.

    The model starts at zero; stage t adds lam times its tree and shrinks
    the residuals accordingly. Shrinkage must lie in (0, 2] (the interval on
    which the stage update cannot increase the training error).
    """
    if n_trees < 1:
        raise DomainError("need at least one tree")
    if not 0.0 < lam <= 2.0:
        raise DomainError("shrinkage must be in (0, 2], got %r" % lam)
    rows = np.arange(ds.n_rows) if rows is None else np.asarray(rows, dtype=int)
    p = len(ds.schema.input_indices)
    stop = _resolve_stop(stop, None, p)
    y = ds.target_vector(rows)
    if np.any(np.isnan(y)):
        raise DomainError("target has missing values in the training rows")
    residual = np.zeros(ds.n_rows)
    residual[rows] = y
    x = ds.input_matrix(rows)
    trees = []
    for t in range(n_trees):
        rng = np.random.Generator(np.random.PCG64(seed + t))
        fitted = tree_mod.grow(ds, rows=rows, stop=stop, targets=residual, rng=rng)
        step = tree_mod.predict_batch(fitted, x)
        residual[rows] -= lam * step
        trees.append(fitted)
    return EnsembleModel(
        kind=BOOSTED,
        trees=tuple(trees),
        stop=stop,
        seed=seed,
        lam=float(lam),
        feature_names=tuple(
            ds.schema.columns[i].name for i in ds.schema.input_indices
        ),
    )


def predict(model, x):
    """Aggregate the member trees on one input vector."""
    x = np.asarray(x, dtype=float)
    per_tree = np.array([tree_mod.predict(t, x) for t in model.trees])
    if model.kind == BAGGED:
        return float(per_tree.mean())
    return float(model.lam * per_tree.sum())


def predict_batch(model, x_matrix):
    x_matrix = np.asarray(x_matrix, dtype=float)
    if x_matrix.ndim != 2:
        raise ShapeError("prediction input must be a matrix")
    preds = np.array([tree_mod.predict_batch(t, x_matrix) for t in model.trees])
    if model.kind == BAGGED:
        return preds.mean(axis=0)
    return model.lam * preds.sum(axis=0)


def predict_dataset(model, ds, rows=None):
    x = ds.input_matrix(rows)
    if model.feature_names and x.shape[1] != len(model.feature_names):
        raise ShapeError(
            "dataset has %d input columns, model expects %d"
            % (x.shape[1], len(model.feature_names))
        )
    return predict_batch(model, x)


@dataclass(frozen=True)
class OobReport:
    mse: float
    n_covered: int
    n_uncovered: int


def oob_error(model, ds, rows=None):
    """Mean squared error using, per row, only the trees that did not see it.

    Rows that are in-bag for every tree are skipped and counted; when no row
    has coverage the estimate is undefined and NoCoverage is raised.
    """
    if model.kind != BAGGED or model.in_bag is None:
        raise DomainError("out-of-bag error needs a bagged model with in-bag masks")
    rows = np.arange(ds.n_rows) if rows is None else np.asarray(rows, dtype=int)
    x = ds.input_matrix(rows)
    y = ds.target_vector(rows)
    per_tree = np.array([tree_mod.predict_batch(t, x) for t in model.trees])
    oob = ~model.in_bag[:, rows]
    covered = oob.any(axis=0)
    n_uncovered = int(np.count_nonzero(~covered))
    if not covered.any():
        raise NoCoverage("no row is out-of-bag for any tree")
    counts = oob.sum(axis=0)[covered]
    sums = (per_tree * oob)[:, covered].sum(axis=0)
    preds = sums / counts
    mse = float(np.mean((y[covered] - preds) ** 2))
    return OobReport(mse=mse, n_covered=int(np.count_nonzero(covered)), n_uncovered=n_uncovered)


def _tree_oob_mse(t, x, y):
    return float(np.mean((y - tree_mod.predict_batch(t, x)) ** 2))


def permutation_importance(model, ds, iterations=10, seed=0, scaling="std", rows=None):
    """Out-of-bag permutation importance, averaged over seeded iterations.

    For each tree and variable, the variable's values are permuted within the
    tree's out-of-bag rows and the increase of the tree's out-of-bag error is
    recorded; a variable that no primary split of the tree uses scores zero
    for that tree without permutation. Per-variable scores are the mean of
    the per-tree differences divided by their spread over trees, and the
    whole procedure is repeated `iterations` times with fresh permutations
    and averaged.

    Args:
        scaling: "std" divides the mean by the standard deviation over trees;
            "stderr" divides by std / sqrt(T) instead.
    """
    if model.kind != BAGGED or model.in_bag is None:
        raise DomainError("permutation importance needs a bagged model")
    if scaling not in ("std", "stderr"):
        raise DomainError("scaling must be 'std' or 'stderr'")
    if iterations < 1:
        raise DomainError("iterations must be >= 1")
    rows = np.arange(ds.n_rows) if rows is None else np.asarray(rows, dtype=int)
    x_all = ds.input_matrix(rows)
    y_all = ds.target_vector(rows)
    p = x_all.shape[1]
    n_trees = model.n_trees

    used = [tree_mod.tree_features(t) for t in model.trees]
    oob_masks = [~model.in_bag[t_idx, rows] for t_idx in range(n_trees)]

    iter_scores = np.zeros((iterations, p))
    seeds = tuple(seed + i for i in range(iterations))
    degenerate = set()
    for i, it_seed in enumerate(seeds):
        rng = np.random.Generator(np.random.PCG64(it_seed))
        diffs = np.zeros((n_trees, p))
        for t_idx, t in enumerate(model.trees):
            oob = oob_masks[t_idx]
            if not oob.any():
                continue
            x_oob = x_all[oob]
            y_oob = y_all[oob]
            base = _tree_oob_mse(t, x_oob, y_oob)
            n_oob = x_oob.shape[0]
            for j in range(p):
                if j not in used[t_idx]:
                    continue
                perm = rng.permutation(n_oob)
                x_perm = x_oob.copy()
                x_perm[:, j] = x_oob[perm, j]
                diffs[t_idx, j] = _tree_oob_mse(t, x_perm, y_oob) - base
        mean = diffs.mean(axis=0)
        std = diffs.std(axis=0, ddof=1) if n_trees > 1 else np.zeros(p)
        if scaling == "stderr":
            std = std / np.sqrt(n_trees)
        scores = np.zeros(p)
        for j in range(p):
            if std[j] > 0.0:
                scores[j] = mean[j] / std[j]
            elif mean[j] != 0.0:
                scores[j] = mean[j]
                degenerate.add(j)
        iter_scores[i] = scores

    return ImportanceReport(
        names=model.feature_names,
        permutation=iter_scores.mean(axis=0),
        splitgain=splitgain_importance(model, ds).splitgain,
        iterations=iterations,
        seeds=seeds,
        degenerate=tuple(sorted(degenerate)),
    )


def splitgain_importance(model, ds=None):
    """Risk-reduction importance: each split credits its gain to the primary
    variable and gain times the association to each surrogate variable;
    per-tree credits are averaged over trees and scaled to sum to one."""
    p = len(model.feature_names)
    credits = np.zeros((model.n_trees, p))
    for t_idx, t in enumerate(model.trees):
        for _id, node in tree_mod.iter_nodes(t):
            if not isinstance(node, tree_mod.Internal):
                continue
            delta = node.risk - node.left.risk - node.right.risk
            credits[t_idx, node.rule.feature] += delta
            for surr, xi in node.surrogates:
                credits[t_idx, surr.feature] += delta * max(xi, 0.0)
    mean = credits.mean(axis=0)
    total = mean.sum()
    if total > 0.0:
        mean = mean / total
    return ImportanceReport(names=model.feature_names, splitgain=mean)


@dataclass(frozen=True)
class Scenario:
    """Row filter plus column drops applied before an importance run."""

    keep: object = None
    drop: tuple = ()
    name: str = ""


def scenario_importance(
    ds,
    scenario=None,
    n_trees=100,
    stop=None,
    m=None,
    iterations=10,
    seed=0,
    scaling="std",
):
    """Filter rows, drop columns, train a bagged model, rank the variables."""
    from . import data as data_mod

    work = ds
    if scenario is not None:
        if scenario.keep is not None:
            work = data_mod.filter_rows(work, scenario.keep)
        if scenario.drop:
            work = data_mod.drop_columns(work, scenario.drop)
    model = train_bagged(work, n_trees=n_trees, stop=stop, m=m, seed=seed)
    return permutation_importance(
        model, work, iterations=iterations, seed=seed, scaling=scaling
    )


def ranked_rows(report):
    """Rows (name, permutation, splitgain, rank) ranked by the primary score.

    The primary score is the permutation measure when present, else the
    split-gain measure. Rank 1 is the most important variable.
    """
    primary = report.permutation if report.permutation is not None else report.splitgain
    if primary is None:
        raise DomainError("report carries no scores")
    order = sorted(
        range(len(report.names)), key=lambda j: (-primary[j], report.names[j])
    )
    rank = {j: k + 1 for k, j in enumerate(order)}
    rows = []
    for j in order:
        rows.append(
            (
                report.names[j],
                None if report.permutation is None else float(report.permutation[j]),
                None if report.splitgain is None else float(report.splitgain[j]),
                rank[j],
            )
        )
    return rows


def top_k_share(report, k):
    """Cumulative share of the top k split-gain scores (they sum to one)."""
    if report.splitgain is None:
        raise DomainError("report carries no split-gain scores")
    scores = np.sort(np.asarray(report.splitgain, dtype=float))[::-1]
    total = scores.sum()
    if total <= 0.0:
        return 0.0
    return float(scores[: int(k)].sum() / total)


def write_importance_csv(path, report):
    lines = ["variable,permutation_score,splitgain_score,rank"]
    for name, perm, gain, rank in ranked_rows(report):
        lines.append(
            "%s,%s,%s,%d"
            % (
                name,
                "" if perm is None else fmt_float(perm),
                "" if gain is None else fmt_float(gain),
                rank,
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# persistence


def to_text(model):
    out = io.StringIO()
    out.write("ensemble v1\n")
    out.write("kind %s\n" % model.kind)
    out.write("T %d\n" % model.n_trees)
    out.write("lambda %s\n" % ("-" if model.lam is None else fmt_float(model.lam)))
    out.write("seed %d\n" % model.seed)
    for j, name in enumerate(model.feature_names):
        out.write("feature %d %s\n" % (j, name))
    for t_idx, t in enumerate(model.trees):
        out.write("tree %d\n" % t_idx)
        for line in tree_mod.tree_lines(t):
            out.write(line + "\n")
    return out.getvalue()


def from_text(text):
    """Rebuild an ensemble for prediction.

    In-bag masks are not part of the interchange format, so reloaded models
    predict but do not support out-of-bag estimates; retrain with the stored
    seed to recover those.
    """
    lines = text.splitlines()
    if not lines or lines[0].split() != ["ensemble", "v1"]:
        raise ParseError("not an ensemble file (missing 'ensemble v1' header)")
    header = {}
    features = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("tree "):
        parts = lines[i].split(None, 2)
        if parts and parts[0] == "feature":
            if len(parts) < 3:
                raise ParseError("bad feature line %r" % lines[i])
            features[int(parts[1])] = parts[2]
        else:
            kv = lines[i].split(None, 1)
            if len(kv) == 2:
                header[kv[0]] = kv[1]
        i += 1
    try:
        kind = header["kind"]
        n_trees = int(header["T"])
        seed = int(header["seed"])
        lam = None if header["lambda"] == "-" else float(header["lambda"])
        names = tuple(features[j] for j in range(len(features)))
    except (KeyError, ValueError) as exc:
        raise ParseError("bad ensemble header: %s" % exc) from exc
    if kind not in (BAGGED, BOOSTED):
        raise ParseError("unknown ensemble kind %r" % kind)
    blocks = []
    current = None
    for line in lines[i:]:
        if line.startswith("tree "):
            current = []
            blocks.append(current)
        elif current is not None and line.strip():
            current.append(line)
    if len(blocks) != n_trees:
        raise ParseError("header says %d trees, file has %d" % (n_trees, len(blocks)))
    trees = tuple(tree_mod.tree_from_lines(block) for block in blocks)
    return EnsembleModel(
        kind=kind,
        trees=trees,
        stop=tree_mod.StoppingCriteria(),
        seed=seed,
        lam=lam,
        feature_names=names,
    )


def save_ensemble(path, model):
    atomic_write_text(path, to_text(model))


def load_ensemble(path):
    return from_text(read_text(path))
