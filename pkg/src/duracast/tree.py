"""Regression trees with surrogate splits.

Splits minimize squared error: at each node the chosen rule maximizes the
risk reduction dR = R(node) - R(left) - R(right), where R is the sum of
squared deviations from the node mean. Candidate thresholds for a continuous
feature are midpoints between consecutive distinct observed values; nominal
features split on level subsets (exhaustive up to 10 levels, one level
versus the rest above that). Ties break toward the lowest feature index and
then the smallest threshold or subset.

Each internal node can carry surrogate rules ranked by their predictive
association with the primary rule; rows with a missing primary feature are
routed by the first evaluable surrogate, then by the majority direction.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ._io import atomic_write_text, fmt_float, read_text
from .errors import DomainError, ParseError, ShapeError, UndefinedAssociation

NOMINAL_EXHAUSTIVE_MAX = 10


@dataclass(frozen=True)
class SplitRule:
    """Routing rule: go left when value < threshold (continuous) or when the
    level index is in left_levels (nominal). missing_left is the majority
    fallback used when no surrogate can route a row."""

    feature: int
    threshold: float = float("nan")
    left_levels: tuple = ()
    nominal: bool = False
    missing_left: bool = True
    _left_set: frozenset = field(default=frozenset(), repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_left_set", frozenset(self.left_levels))

    def goes_left(self, value):
        if self.nominal:
            return int(value) in self._left_set
        return value < self.threshold


@dataclass(frozen=True)
class Leaf:
    value: float
    n: int
    risk: float = 0.0


@dataclass(frozen=True)
class Internal:
    rule: SplitRule
    surrogates: tuple
    left: object
    right: object
    risk: float
    n: int


@dataclass(frozen=True)
class StoppingCriteria:
    """Growth limits. max_splits None means the row count minus one (no
    effective budget). min_branch is the smallest node eligible for a split;
    min_leaf the smallest child it may produce."""

    max_splits: int = None
    min_leaf: int = 1
    min_branch: int = 10
    m: int = None
    surrogates: int = 5

    def __post_init__(self):
        if self.min_leaf < 1:
            raise DomainError("min_leaf must be >= 1")
        if self.min_branch < 2 * self.min_leaf:
            raise DomainError("min_branch must be at least twice min_leaf")
        if self.m is not None and self.m < 1:
            raise DomainError("feature subset size m must be >= 1")
        if self.surrogates < 0:
            raise DomainError("surrogate count must be >= 0")


def _ss(y):
    # sum of squared deviations via the sum/sum-of-squares identity
    n = y.size
    if n == 0:
        return 0.0
    s = float(y.sum())
    q = float((y * y).sum())
    return q - s * s / n


def _nominal_subsets(levels_sorted):
    """Proper non-empty subsets containing the smallest level, in tuple order."""
    first, rest = levels_sorted[0], levels_sorted[1:]
    subsets = []
    for r in range(0, len(rest)):
        for combo in combinations(rest, r):
            subsets.append((first,) + combo)
    return sorted(subsets)


def _nominal_candidates(levels_present):
    levels_sorted = sorted(int(v) for v in levels_present)
    if len(levels_sorted) <= NOMINAL_EXHAUSTIVE_MAX:
        return _nominal_subsets(levels_sorted)
    return sorted((lev,) for lev in levels_sorted)


def _best_split_for_feature(xj, y, is_nominal, min_leaf):
    """Best (delta_r, key, rule_args) for one feature, or None.

    Rows with missing xj must already be excluded. key orders equal-gain
    candidates (threshold, or sorted level tuple).
    """
    n = xj.size
    if n < 2 * min_leaf:
        return None
    parent = _ss(y)
    if is_nominal:
        levels = np.unique(xj.astype(int))
        if levels.size < 2:
            return None
        counts = {}
        sums = {}
        sumsqs = {}
        for lev in levels:
            mask = xj == lev
            yv = y[mask]
            counts[int(lev)] = int(yv.size)
            sums[int(lev)] = float(yv.sum())
            sumsqs[int(lev)] = float((yv * yv).sum())
        total_n, total_s, total_q = n, float(y.sum()), float((y * y).sum())
        best = None
        for subset in _nominal_candidates(levels):
            nl = sum(counts[lev] for lev in subset)
            nr = total_n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            sl = sum(sums[lev] for lev in subset)
            ql = sum(sumsqs[lev] for lev in subset)
            sr, qr = total_s - sl, total_q - ql
            delta = parent - (ql - sl * sl / nl) - (qr - sr * sr / nr)
            if best is None or delta > best[0]:
                best = (delta, subset, {"left_levels": subset, "nominal": True})
        return best
    order = np.argsort(xj, kind="stable")
    xs = xj[order]
    ys = y[order]
    boundaries = np.nonzero(xs[:-1] < xs[1:])[0]
    if boundaries.size == 0:
        return None
    left_counts = boundaries + 1
    keep = (left_counts >= min_leaf) & (n - left_counts >= min_leaf)
    boundaries = boundaries[keep]
    if boundaries.size == 0:
        return None
    left_counts = boundaries + 1
    cs = np.cumsum(ys)
    cq = np.cumsum(ys * ys)
    sl = cs[boundaries]
    ql = cq[boundaries]
    sr = cs[-1] - sl
    qr = cq[-1] - ql
    nl = left_counts.astype(float)
    nr = n - nl
    delta = parent - (ql - sl * sl / nl) - (qr - sr * sr / nr)
    pos = int(np.argmax(delta))
    b = boundaries[pos]
    threshold = (xs[b] + xs[b + 1]) / 2.0
    return (float(delta[pos]), threshold, {"threshold": float(threshold)})


def _association_from_masks(best_left, cand_left):
    """Association between two left-membership masks over the same rows."""
    n = best_left.size
    p_l = float(np.count_nonzero(best_left)) / n
    p_r = 1.0 - p_l
    denom = min(p_l, p_r)
    if denom == 0.0:
        return None
    p_ll = float(np.count_nonzero(best_left & cand_left)) / n
    p_rr = float(np.count_nonzero(~best_left & ~cand_left)) / n
    return (denom - (1.0 - p_ll - p_rr)) / denom


def _best_surrogate_for_feature(xk, best_left, is_nominal):
    """Best (xi, key, rule_args) split on feature k mimicking best_left."""
    n = xk.size
    if n < 2:
        return None
    p_l = float(np.count_nonzero(best_left)) / n
    p_r = 1.0 - p_l
    denom = min(p_l, p_r)
    if denom == 0.0:
        return None
    if is_nominal:
        levels = np.unique(xk.astype(int))
        if levels.size < 2:
            return None
        per_level_n = {}
        per_level_l = {}
        for lev in levels:
            mask = xk == lev
            per_level_n[int(lev)] = int(np.count_nonzero(mask))
            per_level_l[int(lev)] = int(np.count_nonzero(best_left & mask))
        total_l = int(np.count_nonzero(best_left))
        best = None
        for subset in _nominal_candidates(levels):
            n_cand_left = sum(per_level_n[lev] for lev in subset)
            if n_cand_left == 0 or n_cand_left == n:
                continue
            ll = sum(per_level_l[lev] for lev in subset)
            p_ll = ll / n
            p_rr = ((n - n_cand_left) - (total_l - ll)) / n
            xi = (denom - (1.0 - p_ll - p_rr)) / denom
            if best is None or xi > best[0]:
                best = (xi, subset, {"left_levels": subset, "nominal": True})
        return best
    order = np.argsort(xk, kind="stable")
    xs = xk[order]
    ls = best_left[order].astype(float)
    boundaries = np.nonzero(xs[:-1] < xs[1:])[0]
    if boundaries.size == 0:
        return None
    cum_l = np.cumsum(ls)
    total_l = cum_l[-1]
    nl = (boundaries + 1).astype(float)
    ll = cum_l[boundaries]
    p_ll = ll / n
    p_rr = ((n - nl) - (total_l - ll)) / n
    xi = (denom - (1.0 - p_ll - p_rr)) / denom
    pos = int(np.argmax(xi))
    b = boundaries[pos]
    threshold = (xs[b] + xs[b + 1]) / 2.0
    return (float(xi[pos]), threshold, {"threshold": float(threshold)})


class _Grower:
    def __init__(self, x, y, nominal, stop, rng):
        self.x = x
        self.y = y
        self.nominal = nominal
        self.stop = stop
        self.rng = rng
        self.p = x.shape[1]
        n = y.size
        self.budget = stop.max_splits if stop.max_splits is not None else max(n - 1, 0)

    def build(self, idx):
        y = self.y[idx]
        n = idx.size
        risk = _ss(y)
        value = float(y.mean())
        if (
            n < self.stop.min_branch
            or n < 2 * self.stop.min_leaf
            or self.budget <= 0
            or risk <= 0.0
        ):
            return Leaf(value=value, n=int(n), risk=risk)

        candidates = self._candidate_features()
        best = None
        for j in candidates:
            xj = self.x[idx, j]
            obs = ~np.isnan(xj)
            found = _best_split_for_feature(
                xj[obs], y[obs], bool(self.nominal[j]), self.stop.min_leaf
            )
            if found is None:
                continue
            delta, key, rule_args = found
            if delta <= 0.0:
                continue
            if best is None or delta > best[0]:
                best = (delta, j, key, rule_args)
        if best is None:
            return Leaf(value=value, n=int(n), risk=risk)

        _, j, _, rule_args = best
        xj = self.x[idx, j]
        obs = ~np.isnan(xj)
        rule = SplitRule(feature=j, **rule_args)
        left_obs = np.zeros(n, dtype=bool)
        if rule.nominal:
            left_obs[obs] = np.isin(xj[obs].astype(int), rule.left_levels)
        else:
            left_obs[obs] = xj[obs] < rule.threshold
        n_left_obs = int(np.count_nonzero(left_obs & obs))
        n_right_obs = int(np.count_nonzero(obs)) - n_left_obs
        missing_left = n_left_obs >= n_right_obs
        rule = SplitRule(
            feature=j,
            missing_left=missing_left,
            **rule_args,
        )

        surrogates = self._find_surrogates(idx, rule, obs, left_obs)

        goes_left = np.zeros(n, dtype=bool)
        goes_left[obs] = left_obs[obs]
        miss_rows = np.nonzero(~obs)[0]
        for i in miss_rows:
            goes_left[i] = self._route_missing(self.x[idx[i]], rule, surrogates)

        left_idx = idx[goes_left]
        right_idx = idx[~goes_left]
        if left_idx.size == 0 or right_idx.size == 0:
            return Leaf(value=value, n=int(n), risk=risk)

        self.budget -= 1
        left = self.build(left_idx)
        right = self.build(right_idx)
        return Internal(
            rule=rule,
            surrogates=surrogates,
            left=left,
            right=right,
            risk=risk,
            n=int(n),
        )

    def _candidate_features(self):
        if self.stop.m is None or self.stop.m >= self.p:
            return range(self.p)
        chosen = self.rng.choice(self.p, size=self.stop.m, replace=False)
        return sorted(int(j) for j in chosen)

    def _find_surrogates(self, idx, rule, obs_j, left_obs):
        if self.stop.surrogates == 0 or self.p < 2:
            return ()
        found = []
        for k in range(self.p):
            if k == rule.feature:
                continue
            xk = self.x[idx, k]
            incl = obs_j & ~np.isnan(xk)
            if np.count_nonzero(incl) < 2:
                continue
            got = _best_surrogate_for_feature(
                xk[incl], left_obs[incl], bool(self.nominal[k])
            )
            if got is None:
                continue
            xi, key, rule_args = got
            if xi <= 0.0:
                continue
            found.append((xi, k, key, SplitRule(feature=k, **rule_args)))
        found.sort(key=lambda item: (-item[0], item[1], item[2]))
        return tuple((item[3], item[0]) for item in found[: self.stop.surrogates])

    @staticmethod
    def _route_missing(x_row, rule, surrogates):
        for surr, _xi in surrogates:
            v = x_row[surr.feature]
            if not np.isnan(v):
                return surr.goes_left(v)
        return rule.missing_left


def grow(ds, rows=None, stop=None, seed=None, targets=None, rng=None):
    """Grow a regression tree on the given dataset rows.

    Args:
        ds: Dataset; input columns feed the splits, the target column (or the
            targets override) is fitted.
        rows: training row indices, duplicates allowed (bootstrap weighting);
            all rows when None.
        stop: StoppingCriteria; defaults cap nothing but a branch size of 10.
        seed: seeds the feature subsetting when stop.m is set; ignored when
            an rng is passed.
        targets: optional length-N vector replacing the target column
            (residual fitting).
        rng: optional numpy Generator reused across calls.

    Returns:
        Root node (Internal or Leaf).
    """
    stop = stop or StoppingCriteria()
    rows = np.arange(ds.n_rows) if rows is None else np.asarray(rows, dtype=int)
    if rows.size == 0:
        raise ShapeError("cannot grow a tree on zero rows")
    x = ds.input_matrix(rows)
    if targets is None:
        y = ds.target_vector(rows)
    else:
        targets = np.asarray(targets, dtype=float)
        if targets.size != ds.n_rows:
            raise ShapeError("targets override must have one value per dataset row")
        y = targets[rows]
    if np.any(np.isnan(y)):
        raise DomainError("target has missing values in the training rows")
    nominal, _counts = ds.input_kinds()
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(0 if seed is None else seed))
    grower = _Grower(x, y, nominal, stop, rng)
    return grower.build(np.arange(rows.size))


def predict(tree, x):
    """Route one input vector (nan marks missing) to its leaf value."""
    x = np.asarray(x, dtype=float)
    node = tree
    while isinstance(node, Internal):
        rule = node.rule
        v = x[rule.feature]
        if np.isnan(v):
            left = _Grower._route_missing(x, rule, node.surrogates)
        else:
            left = rule.goes_left(v)
        node = node.left if left else node.right
    return node.value


def predict_batch(tree, x_matrix):
    x_matrix = np.asarray(x_matrix, dtype=float)
    if x_matrix.ndim != 2:
        raise ShapeError("prediction input must be a matrix")
    return np.array([predict(tree, row) for row in x_matrix])


def association(ds, best_rule, candidate_rule, rows=None):
    """Predictive association between two split rules over dataset rows.

    Rows missing either feature are excluded from the proportions. Raises
    UndefinedAssociation when the best rule sends every included row to one
    side (min(P_L, P_R) = 0).
    """
    rows = np.arange(ds.n_rows) if rows is None else np.asarray(rows, dtype=int)
    x = ds.input_matrix(rows)
    xb = x[:, best_rule.feature]
    xc = x[:, candidate_rule.feature]
    incl = ~np.isnan(xb) & ~np.isnan(xc)
    if not np.any(incl):
        raise UndefinedAssociation("no rows observe both features")
    best_left = np.array([best_rule.goes_left(v) for v in xb[incl]])
    cand_left = np.array([candidate_rule.goes_left(v) for v in xc[incl]])
    xi = _association_from_masks(best_left, cand_left)
    if xi is None:
        raise UndefinedAssociation("the best rule does not divide the included rows")
    return xi


def iter_nodes(tree):
    """Preorder (id, node) pairs; ids match the serialized form."""
    out = []

    def walk(node):
        node_id = len(out)
        out.append((node_id, node))
        if isinstance(node, Internal):
            walk(node.left)
            walk(node.right)

    walk(tree)
    return out


def prune_info(tree):
    """(node id, feature, risk reduction, n) for every internal node."""
    rows = []
    for node_id, node in iter_nodes(tree):
        if isinstance(node, Internal):
            delta = node.risk - node.left.risk - node.right.risk
            rows.append((node_id, node.rule.feature, float(delta), node.n))
    return rows


def tree_features(tree):
    """Set of feature indices used by primary splits."""
    return {
        node.rule.feature
        for _id, node in iter_nodes(tree)
        if isinstance(node, Internal)
    }


# ---------------------------------------------------------------------------
# serialization


def _threshold_token(rule):
    if rule.nominal:
        return "in:" + "|".join(str(int(v)) for v in rule.left_levels)
    return fmt_float(rule.threshold)


def _parse_rule(feature, token, missing_left=True):
    if token.startswith("in:"):
        levels = tuple(int(v) for v in token[3:].split("|") if v != "")
        return SplitRule(
            feature=feature, left_levels=levels, nominal=True, missing_left=missing_left
        )
    return SplitRule(feature=feature, threshold=float(token), missing_left=missing_left)


def tree_lines(tree):
    """Serialize to text lines (no version header; see to_text)."""
    ordered = iter_nodes(tree)
    ids = {id(node): node_id for node_id, node in ordered}
    lines = []
    for node_id, node in ordered:
        if isinstance(node, Leaf):
            lines.append(
                "node %d leaf %s %d" % (node_id, fmt_float(node.value), node.n)
            )
            lines.append("info %d risk %s" % (node_id, fmt_float(node.risk)))
        else:
            lines.append(
                "node %d split %d %s left %d right %d"
                % (
                    node_id,
                    node.rule.feature,
                    _threshold_token(node.rule),
                    ids[id(node.left)],
                    ids[id(node.right)],
                )
            )
            lines.append(
                "info %d risk %s missing %s"
                % (node_id, fmt_float(node.risk), "L" if node.rule.missing_left else "R")
            )
            for surr, xi in node.surrogates:
                lines.append(
                    "surrogate %d %d %s %s"
                    % (node_id, surr.feature, _threshold_token(surr), fmt_float(xi))
                )
    return lines


def tree_from_lines(lines):
    """Rebuild a tree from its serialized lines."""
    nodes = {}
    infos = {}
    surrogates = {}
    for line in lines:
        parts = line.split()
        if not parts:
            continue
        kind = parts[0]
        if kind == "node":
            node_id = int(parts[1])
            if parts[2] == "leaf":
                nodes[node_id] = ("leaf", float(parts[3]), int(parts[4]))
            elif parts[2] == "split":
                nodes[node_id] = (
                    "split",
                    int(parts[3]),
                    parts[4],
                    int(parts[6]),
                    int(parts[8]),
                )
            else:
                raise ParseError("bad node line: %r" % line)
        elif kind == "info":
            node_id = int(parts[1])
            risk = float(parts[3])
            missing_left = True
            if len(parts) >= 6 and parts[4] == "missing":
                missing_left = parts[5] == "L"
            infos[node_id] = (risk, missing_left)
        elif kind == "surrogate":
            node_id = int(parts[1])
            surrogates.setdefault(node_id, []).append(
                (_parse_rule(int(parts[2]), parts[3]), float(parts[4]))
            )
        else:
            raise ParseError("unknown line kind %r" % kind)
    if 0 not in nodes:
        raise ParseError("serialized tree has no root node")

    def build(node_id):
        kind = nodes[node_id]
        risk, missing_left = infos.get(node_id, (float("nan"), True))
        if kind[0] == "leaf":
            return Leaf(value=kind[1], n=kind[2], risk=risk)
        _tag, feature, token, left_id, right_id = kind
        rule = _parse_rule(feature, token, missing_left)
        left = build(left_id)
        right = build(right_id)
        n = left.n + right.n
        return Internal(
            rule=rule,
            surrogates=tuple(surrogates.get(node_id, ())),
            left=left,
            right=right,
            risk=risk,
            n=n,
        )

    return build(0)


def to_text(tree):
    return "tree v1\n" + "\n".join(tree_lines(tree)) + "\n"


def from_text(text):
    lines = text.splitlines()
    if not lines or lines[0].split() != ["tree", "v1"]:
        raise ParseError("not a tree file (missing 'tree v1' header)")
    return tree_from_lines(lines[1:])


def save_tree(path, tree):
    atomic_write_text(path, to_text(tree))


def load_tree(path):
    return from_text(read_text(path))
