"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written the slow, obvious way (pure Python,
two-pass sums, explicit row scans) so that agreement with the vectorized
library code is meaningful.
"""

import itertools
import math

import numpy as np

from duracast import neural


def sse(values):
    """Two-pass sum of squared deviations from the mean."""
    values = list(values)
    if not values:
        return 0.0
    mu = sum(values) / len(values)
    return sum((v - mu) ** 2 for v in values)


def level_subsets(levels):
    """Proper non-empty subsets containing the smallest level, in
    lexicographic order; singletons only beyond ten levels."""
    levels = sorted(int(v) for v in levels)
    if len(levels) > 10:
        return sorted((lev,) for lev in levels)
    first, rest = levels[0], levels[1:]
    out = []
    for r in range(len(rest)):
        for combo in itertools.combinations(rest, r):
            out.append((first,) + combo)
    return sorted(out)


def grow_reference(x, y, nominal, min_leaf=1, min_branch=10, max_splits=None):
    """Brute-force greedy regression tree on complete data.

    x is a list of rows, y a list of targets, nominal a per-feature flag.
    Candidates are scanned feature-ascending, thresholds ascending, level
    subsets in lexicographic order; a candidate replaces the incumbent only
    on strictly larger risk reduction. The split budget is consumed
    depth-first, left child first.
    """
    n_rows = len(y)
    budget = [max(n_rows - 1, 0) if max_splits is None else max_splits]
    p = len(x[0]) if n_rows else 0

    def best_split(rows):
        parent = sse(y[i] for i in rows)
        best = None
        for j in range(p):
            if nominal[j]:
                levels = sorted({int(x[i][j]) for i in rows})
                if len(levels) < 2:
                    continue
                for subset in level_subsets(levels):
                    members = set(subset)
                    left = [i for i in rows if int(x[i][j]) in members]
                    if len(left) < min_leaf or len(rows) - len(left) < min_leaf:
                        continue
                    inside = set(left)
                    right = [i for i in rows if i not in inside]
                    delta = parent - sse(y[i] for i in left) - sse(y[i] for i in right)
                    if delta > 0.0 and (best is None or delta > best[0]):
                        best = (delta, j, "nominal", subset)
            else:
                vals = sorted({x[i][j] for i in rows})
                for a, b in zip(vals, vals[1:]):
                    thr = (a + b) / 2.0
                    left = [i for i in rows if x[i][j] < thr]
                    if len(left) < min_leaf or len(rows) - len(left) < min_leaf:
                        continue
                    right = [i for i in rows if not x[i][j] < thr]
                    delta = parent - sse(y[i] for i in left) - sse(y[i] for i in right)
                    if delta > 0.0 and (best is None or delta > best[0]):
                        best = (delta, j, "continuous", thr)
        return best

    def build(rows):
        yv = [y[i] for i in rows]
        mean = sum(yv) / len(yv)
        if (
            len(rows) < min_branch
            or len(rows) < 2 * min_leaf
            or budget[0] <= 0
            or sse(yv) <= 0.0
        ):
            return ("leaf", mean)
        found = best_split(rows)
        if found is None:
            return ("leaf", mean)
        _, j, kind, payload = found
        if kind == "nominal":
            members = set(payload)
            left_rows = [i for i in rows if int(x[i][j]) in members]
        else:
            left_rows = [i for i in rows if x[i][j] < payload]
        inside = set(left_rows)
        right_rows = [i for i in rows if i not in inside]
        budget[0] -= 1
        return ("split", j, kind, payload, build(left_rows), build(right_rows))

    return build(list(range(n_rows)))


def predict_reference(node, row):
    while node[0] == "split":
        _, j, kind, payload, left, right = node
        if kind == "nominal":
            goes_left = int(row[j]) in set(payload)
        else:
            goes_left = row[j] < payload
        node = left if goes_left else right
    return node[1]


def erf_reference(x):
    """Error function via Maclaurin series (|x| <= 2) and the Laplace
    continued fraction for the complement beyond; accurate to ~1e-15."""
    x = float(x)
    ax = abs(x)
    if ax == 0.0:
        return 0.0
    if ax <= 2.0:
        total = term = ax
        k = 0
        while True:
            k += 1
            term *= -ax * ax / k
            c = term / (2 * k + 1)
            total += c
            if abs(c) <= 1e-17 * abs(total):
                break
        val = 2.0 / math.sqrt(math.pi) * total
    else:
        f = 0.0
        for k in range(60, 0, -1):
            f = (k / 2.0) / (ax + f)
        val = 1.0 - math.exp(-ax * ax) / math.sqrt(math.pi) / (ax + f)
    return val if x >= 0 else -val


def jacobian_central_diff(net, x, h=1e-6):
    """Finite-difference Jacobian of the network outputs, matching the
    row/column layout of the analytic one."""
    x = np.asarray(x, dtype=float)
    theta = neural.flatten_params(net)
    n_rows = x.shape[0] * net.n_out
    out = np.zeros((n_rows, theta.size))
    for k in range(theta.size):
        plus = theta.copy()
        plus[k] += h
        minus = theta.copy()
        minus[k] -= h
        fp = neural.forward(neural.with_params(net, plus), x).ravel()
        fm = neural.forward(neural.with_params(net, minus), x).ravel()
        out[:, k] = (fp - fm) / (2.0 * h)
    return out


def simulate_first_order(u, a=0.5, b=0.3, y0=0.0):
    """y(n+1) = a y(n) + b u(n) with y(0) = y0."""
    y = [float(y0)]
    for n in range(len(u) - 1):
        y.append(a * y[-1] + b * float(u[n]))
    return np.array(y)
