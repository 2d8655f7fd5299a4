"""Hygrothermal exposure to deterioration-risk classification.

Temperature and relative humidity histories are reduced to a corrosion rate
through a temperature factor 1.6e-7 (30 + T)^4 and a humidity factor that
switches from 190 RH^26 to 2000 (1 - RH)^2 above RH = 0.95. Rates and
humidities map onto banded categories, and element histories become
time-binned risk grids rendered as plain-text PPM images.

Relative humidity is a fraction in [0, 1] throughout this module.
"""

import csv
import math
import warnings
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ._io import atomic_write_text, fmt_float
from .data import moving_average_fill
from .errors import DomainError, ParseError, ShapeError


class CorrosionStatus(IntEnum):
    Passive = 0
    Low = 1
    Moderate = 2
    High = 3


class RiskLevel(IntEnum):
    Insignificant = 0
    Slight = 1
    Medium = 2
    High = 3


CORROSION = "corrosion"
FROST = "frost"
CHEMICAL = "chemical"
GRID_KINDS = (CORROSION, FROST, CHEMICAL)


@dataclass(frozen=True)
class HygroSample:
    """One logger reading: timestamp in days, temperature in Celsius,
    relative humidity as a fraction. Missing readings keep their timestamp
    and set the flag."""

    timestamp: float
    t_celsius: float = float("nan")
    rh: float = float("nan")
    missing: bool = False

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise DomainError("sample timestamp must be finite")
        if not self.missing:
            if not (math.isfinite(self.t_celsius) and math.isfinite(self.rh)):
                raise DomainError("present sample needs finite temperature and humidity")
            if not 0.0 <= self.rh <= 1.0:
                raise DomainError("relative humidity must lie in [0, 1]")


def temperature_factor(t_celsius):
    """Quartic temperature multiplier 1.6e-7 (30 + T)^4, zero at and below
    -30 C where the polynomial would otherwise rise again."""
    t = np.asarray(t_celsius, dtype=float)
    c_t = np.where(t < -30.0, 0.0, 1.6e-7 * (30.0 + t) ** 4)
    return float(c_t) if c_t.ndim == 0 else c_t


def humidity_factor(rh):
    """Reference corrosion rate from humidity alone: 190 RH^26 up to
    RH = 0.95, then the drying-limited branch 2000 (1 - RH)^2."""
    rh = np.asarray(rh, dtype=float)
    if np.any((rh < 0) | (rh > 1)):
        raise DomainError("relative humidity must lie in [0, 1]")
    r_o = np.where(rh <= 0.95, 190.0 * rh**26, 2000.0 * (1.0 - rh) ** 2)
    return float(r_o) if r_o.ndim == 0 else r_o


def _rate_array(t_celsius, rh):
    t = np.asarray(t_celsius, dtype=float)
    rate = np.asarray(temperature_factor(t) * humidity_factor(rh))
    return rate, bool(np.any(t < -30.0))


def corrosion_rate(t_celsius, rh):
    """Corrosion rate from temperature (Celsius) and humidity (fraction).

    The quartic temperature factor is forced to zero below -30 C, where the
    polynomial would otherwise turn positive again; a warning flags that
    clamp. Accepts scalars or arrays.
    """
    rate, clamped = _rate_array(t_celsius, rh)
    if clamped:
        warnings.warn("temperature below -30 C clamped to zero rate")
    return float(rate) if rate.ndim == 0 else rate


def classify_corrosion(rate):
    """Band a corrosion rate: below 1 Passive, 1 to 5 Low, above 5 up to 10
    Moderate, above 10 High."""
    rate = float(rate)
    if not math.isfinite(rate) or rate < 0:
        raise DomainError("corrosion rate must be finite and >= 0")
    if rate < 1.0:
        return CorrosionStatus.Passive
    if rate <= 5.0:
        return CorrosionStatus.Low
    if rate <= 10.0:
        return CorrosionStatus.Moderate
    return CorrosionStatus.High


def _check_rh(rh):
    rh = float(rh)
    if not math.isfinite(rh) or not 0.0 <= rh <= 1.0:
        raise DomainError("relative humidity must lie in [0, 1]")
    return rh


def classify_frost(rh):
    """Frost risk from humidity: dry is Insignificant, 0.85 up to but not
    including 0.98 is Medium, 0.98 and above is High."""
    rh = _check_rh(rh)
    if rh < 0.85:
        return RiskLevel.Insignificant
    if rh < 0.98:
        return RiskLevel.Medium
    return RiskLevel.High


def classify_chemical(rh):
    """Chemical attack risk from humidity; same cut points as frost but the
    middle band is only Slight."""
    rh = _check_rh(rh)
    if rh < 0.85:
        return RiskLevel.Insignificant
    if rh < 0.98:
        return RiskLevel.Slight
    return RiskLevel.High


# ---------------------------------------------------------------------------
# risk grids


@dataclass(frozen=True)
class RiskGrid:
    """Element-by-time-bin categories. cells is an object array holding a
    CorrosionStatus or RiskLevel per cell, or None where every reading in
    the bin was missing (or the bin had no readings)."""

    kind: str
    elements: tuple
    bin_starts: np.ndarray
    bin_width: float
    cells: np.ndarray

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_bins(self):
        return self.bin_starts.size


def build_risk_grid(series, kind=CORROSION, bin_width=1.0, fill_radius=None):
    """Reduce per-element sample histories to a categorical risk grid.

    Args:
        series: mapping of element name to a sequence of HygroSample with
            strictly increasing timestamps.
        kind: "corrosion", "frost" or "chemical".
        bin_width: time bin width in days.
        fill_radius: optional moving-average radius used to impute missing
            readings before binning; gaps too wide to fill stay missing.

    A cell is classified from the mean temperature and humidity of its bin.
    Whether a cell counts as missing is decided by the original flags alone:
    it is missing exactly when the bin contains no reading or every reading
    in it was flagged missing, regardless of imputation.
    """
    if kind not in GRID_KINDS:
        raise DomainError("unknown grid kind %r" % kind)
    if not series:
        raise ShapeError("need at least one element history")
    if bin_width <= 0:
        raise DomainError("bin width must be positive")

    elements = tuple(series.keys())
    per_element = {}
    t_min = math.inf
    t_max = -math.inf
    for name in elements:
        samples = list(series[name])
        if not samples:
            raise ShapeError("element %r has no samples" % name)
        ts = np.array([s.timestamp for s in samples])
        if np.any(np.diff(ts) <= 0):
            raise DomainError("element %r timestamps must be strictly increasing" % name)
        temp = np.array([s.t_celsius for s in samples])
        rh = np.array([s.rh for s in samples])
        miss = np.array([s.missing for s in samples], dtype=bool)
        temp = np.where(miss, np.nan, temp)
        rh = np.where(miss, np.nan, rh)
        if fill_radius is not None and miss.any() and not miss.all():
            temp = moving_average_fill(temp, fill_radius, empty_window="keep")
            rh = moving_average_fill(rh, fill_radius, empty_window="keep")
        per_element[name] = (ts, temp, rh, miss)
        t_min = min(t_min, float(ts.min()))
        t_max = max(t_max, float(ts.max()))

    n_bins = int(math.floor((t_max - t_min) / bin_width)) + 1
    bin_starts = t_min + bin_width * np.arange(n_bins)
    cells = np.full((len(elements), n_bins), None, dtype=object)

    for ei, name in enumerate(elements):
        ts, temp, rh, miss = per_element[name]
        idx = np.minimum(
            np.floor((ts - t_min) / bin_width).astype(int), n_bins - 1
        )
        for b in range(n_bins):
            in_bin = idx == b
            if not in_bin.any() or miss[in_bin].all():
                continue
            t_vals = temp[in_bin]
            rh_vals = rh[in_bin]
            keep = np.isfinite(t_vals) & np.isfinite(rh_vals)
            mean_t = float(t_vals[keep].mean())
            mean_rh = float(rh_vals[keep].mean())
            if kind == CORROSION:
                rate, _ = _rate_array(mean_t, mean_rh)
                cells[ei, b] = classify_corrosion(float(rate))
            elif kind == FROST:
                cells[ei, b] = classify_frost(mean_rh)
            else:
                cells[ei, b] = classify_chemical(mean_rh)
    return RiskGrid(
        kind=kind,
        elements=elements,
        bin_starts=bin_starts,
        bin_width=float(bin_width),
        cells=cells,
    )


# category value 0 grades green through yellow and orange to red at 3;
# missing cells render white.
PALETTE = {
    0: (0, 128, 0),
    1: (255, 255, 0),
    2: (255, 165, 0),
    3: (255, 0, 0),
    None: (255, 255, 255),
}


def grid_rows(grid):
    """(element, bin_start, category_name) triples, row-major."""
    out = []
    for ei, name in enumerate(grid.elements):
        for b in range(grid.n_bins):
            cell = grid.cells[ei, b]
            label = "Missing" if cell is None else cell.name
            out.append((name, float(grid.bin_starts[b]), label))
    return out


def render_grid(grid, ppm_path, csv_path=None, scale=1):
    """Write the grid as a plain-text PPM image, optionally with a CSV twin.

    One grid row per element, one column per time bin, each cell scaled to
    a scale-by-scale pixel block. The image is plain P3: header lines "P3",
    "<width> <height>", "255", then one line of space-separated r g b
    triplets per pixel row.
    """
    scale = int(scale)
    if scale < 1:
        raise DomainError("scale must be >= 1")
    width = grid.n_bins * scale
    height = grid.n_elements * scale
    lines = ["P3", "%d %d" % (width, height), "255"]
    for ei in range(grid.n_elements):
        pixel_row = []
        for b in range(grid.n_bins):
            cell = grid.cells[ei, b]
            rgb = PALETTE[None if cell is None else int(cell)]
            pixel_row.extend(["%d %d %d" % rgb] * scale)
        row_text = " ".join(pixel_row)
        lines.extend([row_text] * scale)
    atomic_write_text(ppm_path, "\n".join(lines) + "\n")
    if csv_path is not None:
        buf = ["element,bin_start,category"]
        for name, start, label in grid_rows(grid):
            buf.append("%s,%s,%s" % (name, fmt_float(start), label))
        atomic_write_text(csv_path, "\n".join(buf) + "\n")


def read_grid_csv(path):
    """Round-trip reader for the grid CSV; returns (element, bin_start,
    category) tuples."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["element", "bin_start", "category"]:
            raise ParseError("unexpected grid CSV header")
        for rec in reader:
            if len(rec) != 3:
                raise ParseError("grid CSV row needs 3 fields")
            out.append((rec[0], float(rec[1]), rec[2]))
    return out
