"""Evaluation statistics: MSE, RMSE, MAE, correlation, and boxplot residual
summaries.

Residuals are defined as target minus prediction. Quartiles use linear
interpolation between closest ranks (so the median of [1, 2, 3, 4] is 2.5)
and whiskers reach the most extreme residual within 1.5 interquartile ranges
of the box, points beyond them counting as outliers.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_text, fmt_float
from .errors import ShapeError


@dataclass(frozen=True)
class ResidualSummary:
    mean: float
    std: float
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: int


@dataclass(frozen=True)
class EvalReport:
    mse: float
    rmse: float
    mae: float
    r: float
    n: int
    residuals: ResidualSummary
    r_defined: bool = True


def _boxplot_stats(values):
    q1, median, q3 = np.quantile(values, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = values[(values >= lo_fence) & (values <= hi_fence)]
    whisker_lo = float(inside.min())
    whisker_hi = float(inside.max())
    outliers = int(np.sum((values < whisker_lo) | (values > whisker_hi)))
    return float(median), float(q1), float(q3), whisker_lo, whisker_hi, outliers


def evaluate(pred, target):
    """Compute error statistics for one prediction vector.

    Args:
        pred: predicted values, length n >= 1.
        target: observed values, same length.

    Returns:
        EvalReport. When either vector has zero variance the correlation is
        undefined; it is reported as nan with r_defined False.
    """
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if pred.shape != target.shape:
        raise ShapeError(
            "prediction and target lengths differ: %d vs %d"
            % (pred.size, target.size)
        )
    if pred.size < 1:
        raise ShapeError("need at least one prediction")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(target))):
        raise ShapeError("non-finite values in evaluation input")

    residuals = target - pred
    mse = float(np.mean(residuals ** 2))
    rmse = math.sqrt(mse)
    mae = float(np.mean(np.abs(residuals)))

    sp = pred - pred.mean()
    st = target - target.mean()
    denom = math.sqrt(float(np.sum(sp ** 2)) * float(np.sum(st ** 2)))
    if denom == 0.0:
        r = float("nan")
        r_defined = False
    else:
        r = float(np.sum(sp * st)) / denom
        r = max(-1.0, min(1.0, r))
        r_defined = True

    median, q1, q3, wlo, whi, outliers = _boxplot_stats(residuals)
    summary = ResidualSummary(
        mean=float(residuals.mean()),
        std=float(residuals.std()),
        median=median,
        q1=q1,
        q3=q3,
        whisker_lo=wlo,
        whisker_hi=whi,
        outliers=outliers,
    )
    return EvalReport(
        mse=mse, rmse=rmse, mae=mae, r=r, n=int(pred.size),
        residuals=summary, r_defined=r_defined,
    )


@dataclass(frozen=True)
class RepeatedReport:
    """Averages over repeated train/evaluate rounds plus the round reports."""

    mse: float
    rmse: float
    mae: float
    r: float
    n: float
    rounds: tuple


def repeated_evaluation(factory, ds, rounds, seed=0):
    """Average evaluation statistics over seeded rounds.

    Args:
        factory: callable (ds, round_seed) -> (pred, target) arrays; expected
            to re-split and retrain internally using the given seed.
        ds: dataset handed to the factory unchanged.
        rounds: number of rounds, >= 1.
        seed: base seed; round i uses seed + i.

    Returns:
        RepeatedReport with per-statistic means and the individual reports.
    """
    if rounds < 1:
        raise ShapeError("rounds must be >= 1")
    reports = []
    for i in range(rounds):
        pred, target = factory(ds, seed + i)
        reports.append(evaluate(pred, target))
    rs = [rep.r for rep in reports if rep.r_defined]
    return RepeatedReport(
        mse=float(np.mean([rep.mse for rep in reports])),
        rmse=float(np.mean([rep.rmse for rep in reports])),
        mae=float(np.mean([rep.mae for rep in reports])),
        r=float(np.mean(rs)) if rs else float("nan"),
        n=float(np.mean([rep.n for rep in reports])),
        rounds=tuple(reports),
    )


def report_rows(report):
    """Flatten an EvalReport to (metric, value) rows for the report CSV."""
    res = report.residuals
    return [
        ("mse", report.mse),
        ("rmse", report.rmse),
        ("mae", report.mae),
        ("r", report.r),
        ("n", report.n),
        ("residual_mean", res.mean),
        ("residual_std", res.std),
        ("residual_median", res.median),
        ("residual_q1", res.q1),
        ("residual_q3", res.q3),
        ("whisker_lo", res.whisker_lo),
        ("whisker_hi", res.whisker_hi),
        ("outliers", res.outliers),
    ]


def write_report_csv(path, report, per_round=None):
    """Write `metric,value` rows; per-round reports append suffixed rows."""
    lines = ["metric,value"]
    for name, value in report_rows(report):
        lines.append("%s,%s" % (name, fmt_float(value)))
    if per_round:
        for i, rep in enumerate(per_round):
            for name, value in report_rows(rep):
                lines.append("%s_round_%d,%s" % (name, i, fmt_float(value)))
    atomic_write_text(path, "\n".join(lines) + "\n")
