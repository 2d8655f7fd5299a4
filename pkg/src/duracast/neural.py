"""Feedforward networks trained with Levenberg-Marquardt, plus a NARX
wrapper for one-exogenous-input time series.

The update solves (J'J + mu I) d = J'r where J is the exact backpropagated
Jacobian of the residuals with respect to every weight and bias. A step is
accepted only when it lowers the sum of squared errors; mu shrinks on
acceptance and grows on rejection, interpolating between Gauss-Newton and
small gradient steps. Early stopping restores the weights from the epoch of
minimum validation error.
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_text, fmt_float, read_text
from .errors import (
    Divergence,
    DomainError,
    InsufficientHistory,
    ParseError,
    ShapeError,
    TrainingFailure,
)

LINEAR = "linear"
LOGISTIC = "logistic"
TANH = "tanh"


@dataclass(frozen=True)
class Activation:
    """Unit transfer function: linear v, logistic 1/(1+e^(-a v)) in (0,1),
    or tanh (e^(2v)-1)/(e^(2v)+1) in (-1,1)."""

    kind: str
    a: float = 1.0

    def __post_init__(self):
        if self.kind not in (LINEAR, LOGISTIC, TANH):
            raise DomainError("unknown activation %r" % self.kind)
        if self.kind == LOGISTIC and self.a <= 0:
            raise DomainError("logistic steepness must be positive")

    def apply(self, v):
        if self.kind == LINEAR:
            return np.asarray(v, dtype=float)
        if self.kind == TANH:
            return np.tanh(v)
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-self.a * v))

    def deriv_from_output(self, z):
        """Derivative with respect to the pre-activation, given the output."""
        if self.kind == LINEAR:
            return np.ones_like(np.asarray(z, dtype=float))
        if self.kind == TANH:
            return 1.0 - z * z
        return self.a * z * (1.0 - z)


@dataclass(frozen=True)
class MlpNetwork:
    """Dense layers: weights[l] has shape (fan_out, fan_in), one activation
    per layer. The conventional configuration keeps hidden layers nonlinear
    and the output layer linear; all-linear networks are permitted for
    diagnostics (a single linear layer is an affine model)."""

    sizes: tuple
    weights: tuple
    biases: tuple
    activations: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ShapeError("layer sizes must be at least [n_in, n_out]")
        if not (
            len(self.weights) == len(self.biases) == len(self.activations) == len(sizes) - 1
        ):
            raise ShapeError("need one weight matrix, bias, activation per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise ShapeError("layer %d has inconsistent shapes" % l)
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def make_mlp(sizes, hidden=TANH, a=1.0, seed=0):
    """Seeded network with the given layer sizes.

    Hidden layers get the requested nonlinear activation, the output layer is
    linear, and every weight and bias is drawn uniformly from
    [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    """
    sizes = tuple(int(s) for s in sizes)
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = []
    biases = []
    activations = []
    for l in range(len(sizes) - 1):
        bound = 1.0 / math.sqrt(sizes[l])
        weights.append(rng.uniform(-bound, bound, size=(sizes[l + 1], sizes[l])))
        biases.append(rng.uniform(-bound, bound, size=sizes[l + 1]))
        last = l == len(sizes) - 2
        activations.append(Activation(LINEAR) if last else Activation(hidden, a))
    return MlpNetwork(sizes, tuple(weights), tuple(biases), tuple(activations))


def forward(net, x):
    """Evaluate the network; accepts a vector or a sample matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    z = x[None, :] if single else x
    if z.shape[1] != net.n_in:
        raise ShapeError("input arity %d, network expects %d" % (z.shape[1], net.n_in))
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = act.apply(z @ w.T + b)
    return z[0] if single else z


def _forward_trace(net, x):
    outputs = [np.asarray(x, dtype=float)]
    z = outputs[0]
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = act.apply(z @ w.T + b)
        outputs.append(z)
    return outputs


def flatten_params(net):
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def with_params(net, theta):
    weights = []
    biases = []
    pos = 0
    for l in range(len(net.sizes) - 1):
        wn = net.sizes[l + 1] * net.sizes[l]
        weights.append(theta[pos : pos + wn].reshape(net.sizes[l + 1], net.sizes[l]).copy())
        pos += wn
        biases.append(theta[pos : pos + net.sizes[l + 1]].copy())
        pos += net.sizes[l + 1]
    if pos != theta.size:
        raise ShapeError("parameter vector has wrong length")
    return MlpNetwork(net.sizes, tuple(weights), tuple(biases), net.activations)


def jacobian(net, x):
    """Jacobian of the outputs with respect to every weight and bias.

    Rows are ordered sample-major, output-minor, matching
    (forward(net, x) - y).ravel(); columns follow flatten_params.
    """
    x = np.asarray(x, dtype=float)
    outputs = _forward_trace(net, x)
    n = x.shape[0]
    n_layers = len(net.sizes) - 1
    derivs = [
        net.activations[l].deriv_from_output(outputs[l + 1]) for l in range(n_layers)
    ]
    blocks = []
    for m in range(net.n_out):
        sens = np.zeros((n, net.n_out))
        sens[:, m] = derivs[-1][:, m]
        layer_sens = [None] * n_layers
        layer_sens[-1] = sens
        for l in range(n_layers - 2, -1, -1):
            sens = (sens @ net.weights[l + 1]) * derivs[l]
            layer_sens[l] = sens
        cols = []
        for l in range(n_layers):
            s = layer_sens[l]
            z_prev = outputs[l]
            gw = s[:, :, None] * z_prev[:, None, :]
            cols.append(gw.reshape(n, -1))
            cols.append(s)
        blocks.append(np.concatenate(cols, axis=1))
    j = np.stack(blocks, axis=1)
    return j.reshape(n * net.n_out, -1)


@dataclass
class LmState:
    """Damping schedule and stopping limits for Levenberg-Marquardt.

    learning_rate is carried as configuration metadata for parity with the
    reference environment; the update itself is governed by mu alone.
    """

    mu: float = 1e-3
    mu_inc: float = 10.0
    mu_dec: float = 10.0
    mu_max: float = 1e10
    max_epochs: int = 200
    patience: int = 6
    learning_rate: float = 0.1
    step_tol: float = 1e-10
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    mu: float


def _shape_xy(xy, n_in, n_out):
    x, y = xy
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] != y.shape[0]:
        raise ShapeError("inputs and targets disagree on sample count")
    if x.shape[1] != n_in or y.shape[1] != n_out:
        raise ShapeError("sample arity does not match the network")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ShapeError("non-finite training values")
    return x, y


def train_lm(net, train, validation=None, state=None):
    """Train with damped Gauss-Newton steps and validation early stopping.

    Args:
        net: starting MlpNetwork.
        train: (X, Y) arrays.
        validation: optional (X, Y); enables early stopping and decides the
            returned weights (epoch of minimum validation error).
        state: LmState; its history list is filled as a side record.

    Returns:
        (trained network, history) where history is a list of EpochRecord
        starting with the untrained epoch 0.
    """
    state = state or LmState()
    x, y = _shape_xy(train, net.n_in, net.n_out)
    has_val = validation is not None
    if has_val:
        xv, yv = _shape_xy(validation, net.n_in, net.n_out)

    theta = flatten_params(net)
    current = with_params(net, theta)

    def sse_of(network, xs, ys):
        r = (forward(network, xs) - ys).ravel()
        return r, float(r @ r)

    r, sse = sse_of(current, x, y)
    if not np.isfinite(sse):
        raise Divergence("initial loss is not finite")
    n_train = x.shape[0] * net.n_out

    def val_mse_of(network):
        if not has_val:
            return float("nan")
        rv = (forward(network, xv) - yv).ravel()
        return float(rv @ rv) / rv.size

    mu = state.mu
    history = [EpochRecord(0, sse / n_train, val_mse_of(current), mu)]
    best_val = history[0].val_mse
    best_theta = theta.copy()
    best_epoch = 0
    fails = 0
    prev_val = best_val

    for epoch in range(1, state.max_epochs + 1):
        j = jacobian(current, x)
        g = j.T @ r
        a = j.T @ j
        identity = np.eye(theta.size)
        accepted = False
        step = None
        while True:
            try:
                step = np.linalg.solve(a + mu * identity, g)
            except np.linalg.LinAlgError:
                mu *= state.mu_inc
                if mu > state.mu_max:
                    raise TrainingFailure(
                        "normal equations stay singular after damping escalation"
                    ) from None
                continue
            if not np.all(np.isfinite(step)):
                mu *= state.mu_inc
                if mu > state.mu_max:
                    raise TrainingFailure("damping escalation produced no usable step")
                continue
            cand_theta = theta - step
            cand_net = with_params(net, cand_theta)
            r_new, sse_new = sse_of(cand_net, x, y)
            if not np.isfinite(sse_new):
                raise Divergence("loss became non-finite during training")
            if sse_new < sse:
                theta, current, r, sse = cand_theta, cand_net, r_new, sse_new
                mu = max(mu / state.mu_dec, 1e-20)
                accepted = True
                break
            mu *= state.mu_inc
            if mu > state.mu_max:
                break
        if not accepted:
            break

        val = val_mse_of(current)
        history.append(EpochRecord(epoch, sse / n_train, val, mu))
        if has_val:
            if val < best_val:
                best_val = val
                best_theta = theta.copy()
                best_epoch = epoch
                fails = 0
            elif val > prev_val:
                fails += 1
                if fails >= state.patience:
                    break
            else:
                fails = 0
            prev_val = val
        if float(np.linalg.norm(step)) < state.step_tol:
            break

    state.mu = mu
    state.history = [rec.train_mse for rec in history]
    if has_val:
        final = with_params(net, best_theta)
    else:
        final = current
        best_epoch = history[-1].epoch
    return final, history


def early_stopping_curve(history):
    """(best epoch, train curve, validation curve) from a training history."""
    train_curve = [rec.train_mse for rec in history]
    val_curve = [rec.val_mse for rec in history]
    if all(math.isnan(v) for v in val_curve):
        best = len(history) - 1
    else:
        best = min(range(len(history)), key=lambda i: (val_curve[i], i))
    return history[best].epoch, train_curve, val_curve


def sweep_hidden(train, validation, hidden_sizes, seed=0, state_factory=None):
    """Train one network per hidden size, returning (best_size, results).

    results maps hidden size to final validation MSE; the smallest validation
    error wins, ties preferring the smaller network.
    """
    x = np.asarray(train[0], dtype=float)
    y = np.asarray(train[1], dtype=float)
    n_in = 1 if x.ndim == 1 else x.shape[1]
    n_out = 1 if y.ndim == 1 else y.shape[1]
    xv, yv = _shape_xy(validation, n_in, n_out)
    results = {}
    for h in hidden_sizes:
        net = make_mlp((n_in, int(h), n_out), seed=seed)
        state = state_factory() if state_factory else LmState()
        trained, _hist = train_lm(net, train, validation, state)
        r = (forward(trained, xv) - yv).ravel()
        results[int(h)] = float(r @ r) / r.size
    best = min(sorted(results), key=lambda h: (results[h], h))
    return best, results


# ---------------------------------------------------------------------------
# NARX


@dataclass(frozen=True)
class NarxModel:
    """Tapped-delay network: the next value regresses on the last q inputs
    and the last q outputs. In open-loop mode measured outputs fill the
    feedback slots; in closed-loop mode predictions are fed back."""

    q: int
    net: MlpNetwork
    mode: str = "closed"
    u_bounds: tuple = None
    y_bounds: tuple = None

    def __post_init__(self):
        if self.q < 1:
            raise DomainError("delay order q must be >= 1")
        if self.net.n_in != 2 * self.q:
            raise ShapeError(
                "network arity %d does not match 2q = %d" % (self.net.n_in, 2 * self.q)
            )
        if self.mode not in ("open", "closed"):
            raise DomainError("mode must be 'open' or 'closed'")


def _scale(values, bounds):
    if bounds is None:
        return np.asarray(values, dtype=float)
    lo, hi = bounds
    if hi == lo:
        return np.asarray(values, dtype=float)
    return 2.0 * (np.asarray(values, dtype=float) - lo) / (hi - lo) - 1.0


def _unscale(values, bounds):
    if bounds is None:
        return np.asarray(values, dtype=float)
    lo, hi = bounds
    if hi == lo:
        return np.asarray(values, dtype=float)
    return (np.asarray(values, dtype=float) + 1.0) * (hi - lo) / 2.0 + lo


def narx_prepare(u, y, q):
    """Build the supervised matrix for a q-delay NARX problem.

    Row for time n holds [u(n), ..., u(n-q+1), y(n), ..., y(n-q+1)] with
    target y(n+1); a series of length L yields L - q rows.
    """
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if u.size != y.size:
        raise ShapeError("input and output series must have equal length")
    length = y.size
    if length <= q:
        raise InsufficientHistory(
            "series of length %d cannot support delay order %d" % (length, q)
        )
    rows = []
    targets = []
    for n in range(q - 1, length - 1):
        feats = [u[n - i] for i in range(q)] + [y[n - i] for i in range(q)]
        rows.append(feats)
        targets.append(y[n + 1])
    return np.asarray(rows), np.asarray(targets)


def train_narx(u, y, q=2, hidden=10, seed=0, fractions=(0.75, 0.15, 0.10),
               state=None, normalize=True, mode="closed"):
    """Fit a NARX model on one aligned (input, output) series pair.

    The supervised rows are split at random into train/validation/test parts,
    series values are rescaled to [-1, 1] (one shared scale for the output so
    fed-back predictions stay consistent), and the network is trained with
    validation early stopping.

    Returns:
        (NarxModel, history, test_row_indices)
    """
    from .data import split_holdout

    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    u_bounds = (float(u.min()), float(u.max())) if normalize else None
    y_bounds = (float(y.min()), float(y.max())) if normalize else None
    x_sup, y_sup = narx_prepare(_scale(u, u_bounds), _scale(y, y_bounds), q)
    n = x_sup.shape[0]
    if n < 3:
        raise InsufficientHistory("too few supervised rows to split")
    part = split_holdout(n, fractions, seed=seed)
    net = make_mlp((2 * q, hidden, 1), seed=seed)
    train_idx = np.asarray(part.train, dtype=int)
    val_idx = np.asarray(part.validation, dtype=int)
    validation = (x_sup[val_idx], y_sup[val_idx]) if val_idx.size else None
    trained, history = train_lm(
        net, (x_sup[train_idx], y_sup[train_idx]), validation, state or LmState()
    )
    model = NarxModel(q=q, net=trained, mode=mode, u_bounds=u_bounds, y_bounds=y_bounds)
    return model, history, part.test


def narx_predict(model, u, y, horizon, mode=None):
    """Predict the last `horizon` points of the series time axis.

    u and y are aligned from time zero; the prediction span is the final
    `horizon` indices of y. Open-loop mode reads the measured y inside the
    span (one-step-ahead); closed-loop mode ignores those values and feeds
    its own predictions back, so the span entries of y may be placeholders
    (nan) when forecasting beyond the record. At horizon 1 the two modes use
    identical delay contents and coincide.
    """
    mode = mode or model.mode
    if mode not in ("open", "closed"):
        raise DomainError("mode must be 'open' or 'closed'")
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    q = model.q
    length = y.size
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    start = length - horizon
    if start < q:
        raise InsufficientHistory(
            "need at least q=%d history points before the prediction span" % q
        )
    if u.size < length - 1:
        raise InsufficientHistory("input series too short for the span")
    u_s = _scale(u, model.u_bounds)
    y_s = _scale(y, model.y_bounds)
    if np.any(np.isnan(y_s[:start])):
        raise InsufficientHistory("history contains missing output values")

    preds = np.empty(horizon)
    buffer = list(y_s[:start])
    for k in range(horizon):
        t = start + k
        u_feats = [u_s[t - 1 - i] for i in range(q)]
        if mode == "open":
            y_feats = [y_s[t - 1 - i] for i in range(q)]
            if any(np.isnan(v) for v in y_feats):
                raise InsufficientHistory(
                    "open-loop prediction needs measured outputs across the span"
                )
        else:
            y_feats = [buffer[t - 1 - i] for i in range(q)]
        out = forward(model.net, np.asarray(u_feats + y_feats))
        yhat = float(out[0])
        preds[k] = yhat
        buffer.append(yhat)
    return _unscale(preds, model.y_bounds)


# ---------------------------------------------------------------------------
# persistence


def mlp_lines(net):
    lines = ["mlp v1", "sizes " + " ".join(str(s) for s in net.sizes)]
    for l, act in enumerate(net.activations):
        if act.kind == LOGISTIC:
            lines.append("activation %d logistic %s" % (l, fmt_float(act.a)))
        else:
            lines.append("activation %d %s" % (l, act.kind))
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(
            "weights %d %s" % (l, " ".join(fmt_float(v) for v in w.ravel()))
        )
        lines.append("bias %d %s" % (l, " ".join(fmt_float(v) for v in b.ravel())))
    return lines


def mlp_from_lines(lines):
    if not lines or lines[0].split() != ["mlp", "v1"]:
        raise ParseError("not a network block (missing 'mlp v1' header)")
    sizes = None
    acts = {}
    weights = {}
    biases = {}
    for line in lines[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "sizes":
            sizes = tuple(int(v) for v in parts[1:])
        elif parts[0] == "activation":
            idx = int(parts[1])
            a = float(parts[3]) if len(parts) > 3 else 1.0
            acts[idx] = Activation(parts[2], a)
        elif parts[0] == "weights":
            weights[int(parts[1])] = np.array([float(v) for v in parts[2:]])
        elif parts[0] == "bias":
            biases[int(parts[1])] = np.array([float(v) for v in parts[2:]])
        else:
            raise ParseError("unknown network line %r" % parts[0])
    if sizes is None:
        raise ParseError("network block lacks a sizes line")
    n_layers = len(sizes) - 1
    try:
        w = tuple(
            weights[l].reshape(sizes[l + 1], sizes[l]) for l in range(n_layers)
        )
        b = tuple(biases[l] for l in range(n_layers))
        a = tuple(acts[l] for l in range(n_layers))
    except (KeyError, ValueError) as exc:
        raise ParseError("incomplete network block: %s" % exc) from exc
    return MlpNetwork(sizes, w, b, a)


def save_mlp(path, net):
    atomic_write_text(path, "\n".join(mlp_lines(net)) + "\n")


def load_mlp(path):
    return mlp_from_lines(read_text(path).splitlines())


def narx_lines(model):
    lines = ["narx v1", "q %d" % model.q, "mode %s" % model.mode]
    if model.u_bounds is not None:
        lines.append("norm_u %s %s" % (fmt_float(model.u_bounds[0]), fmt_float(model.u_bounds[1])))
    if model.y_bounds is not None:
        lines.append("norm_y %s %s" % (fmt_float(model.y_bounds[0]), fmt_float(model.y_bounds[1])))
    return lines + mlp_lines(model.net)


def narx_from_lines(lines):
    if not lines or lines[0].split() != ["narx", "v1"]:
        raise ParseError("not a narx file (missing 'narx v1' header)")
    q = None
    mode = "closed"
    u_bounds = None
    y_bounds = None
    mlp_start = None
    for i, line in enumerate(lines[1:], start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "q":
            q = int(parts[1])
        elif parts[0] == "mode":
            mode = parts[1]
        elif parts[0] == "norm_u":
            u_bounds = (float(parts[1]), float(parts[2]))
        elif parts[0] == "norm_y":
            y_bounds = (float(parts[1]), float(parts[2]))
        elif parts[0] == "mlp":
            mlp_start = i
            break
        else:
            raise ParseError("unknown narx line %r" % parts[0])
    if q is None or mlp_start is None:
        raise ParseError("narx file lacks q or the network block")
    net = mlp_from_lines(lines[mlp_start:])
    return NarxModel(q=q, net=net, mode=mode, u_bounds=u_bounds, y_bounds=y_bounds)


def save_narx(path, model):
    atomic_write_text(path, "\n".join(narx_lines(model)) + "\n")


def load_narx(path):
    return narx_from_lines(read_text(path).splitlines())
