"""Rating scales, transition matrices, generators and default curves.

All probabilities are held as fractions. Percent values only appear in the
CSV files read and written here.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "RatingDataError",
    "RatingScale",
    "TransitionMatrix",
    "Generator",
    "DefaultCurve",
    "PiecewiseSchedule",
    "GeneratorReport",
    "FITCH_SCALE",
    "TENOR_TOL",
    "validate_generator",
    "read_matrix_csv",
    "write_matrix_csv",
    "read_pd_csv",
    "write_pd_csv",
    "load_market_data",
    "horizon_from_name",
]

# Tenors and breakpoints closer than this (in years) are the same date.
TENOR_TOL = 1e-9


class RatingDataError(ValueError):
    pass


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RatingScale:
    """Ordered rating labels, best first; the last label is default."""

    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise RatingDataError("a rating scale needs at least 2 states")
        if len(set(labels)) != len(labels):
            raise RatingDataError(f"rating labels are not unique: {labels}")

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def default_index(self) -> int:
        return len(self.labels) - 1

    def index(self, label) -> int:
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < self.size:
                raise RatingDataError(f"rating index {label} out of range")
            return int(label)
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise RatingDataError(f"unknown rating {label!r}") from None

    def __len__(self):
        return self.size


FITCH_SCALE = RatingScale(("F1+", "F1", "F2", "F3", "B", "C", "D"))

# rows within this of one count as complete (printed data is rounded)
ROW_SUM_TOL = 1e-6
MARKET = "market"
ADJUSTED = "adjusted"


@dataclass(frozen=True)
class TransitionMatrix:
    """Rating transition probabilities over ``horizon`` years.

    ``kind="market"`` rows may sum to less than one (withdrawals);
    ``kind="adjusted"`` rows sum to one.
    """

    horizon: float
    entries: np.ndarray
    kind: str = MARKET

    def __post_init__(self):
        p = _frozen(self.entries)
        object.__setattr__(self, "entries", p)
        object.__setattr__(self, "horizon", float(self.horizon))
        if self.kind not in (MARKET, ADJUSTED):
            raise RatingDataError(f"unknown matrix kind {self.kind!r}")
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 2:
            raise RatingDataError(f"transition matrix must be square, got {p.shape}")
        if not self.horizon >= 0:
            raise RatingDataError(f"negative horizon {self.horizon}")
        if not np.all(np.isfinite(p)) or p.min() < 0 or p.max() > 1:
            raise RatingDataError("transition probability outside [0, 1]")
        sums = p.sum(axis=1)
        if self.kind == MARKET:
            bad = np.flatnonzero(sums > 1 + ROW_SUM_TOL)
            if bad.size:
                raise RatingDataError(
                    f"row sum exceeds 1 in row {bad[0]} ({sums[bad[0]]:.6f})")
        else:
            bad = np.flatnonzero(np.abs(sums - 1) > ROW_SUM_TOL)
            if bad.size:
                raise RatingDataError(
                    f"adjusted matrix row {bad[0]} sums to {sums[bad[0]]:.12f}")
        unit = np.zeros(p.shape[0])
        unit[-1] = 1.0
        if not np.array_equal(p[-1], unit):
            raise RatingDataError("default row is not absorbing")

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    @property
    def withdrawal(self) -> np.ndarray:
        return 1.0 - self.row_sums


@dataclass(frozen=True)
class Generator:
    """Transition intensities per year of a homogeneous chain."""

    entries: np.ndarray
    tol: float = field(default=1e-10, compare=False)

    def __post_init__(self):
        g = _frozen(self.entries)
        object.__setattr__(self, "entries", g)
        report = validate_generator(g, self.tol)
        if not report.valid:
            raise RatingDataError(f"invalid generator: {report.reason}")
        if np.abs(g[-1]).max() > self.tol:
            raise RatingDataError("default row of generator is not zero")

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.entries)


@dataclass(frozen=True)
class GeneratorReport:
    row_residuals: np.ndarray
    min_off_diagonal: float
    valid: bool
    reason: str = ""

    @property
    def max_row_residual(self) -> float:
        return float(np.abs(self.row_residuals).max())


def validate_generator(g, tol=1e-10) -> GeneratorReport:
    """Check generator conditions without raising.

    Reports each row's sum, the smallest off-diagonal entry and whether both
    conditions hold within ``tol``. Row sums are compared against ``tol``
    times the row's exit rate when that exceeds one, so that rounding in
    large intensities is not flagged.
    """
    g = np.asarray(getattr(g, "entries", g), dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"generator must be square, got shape {g.shape}")
    resid = g.sum(axis=1)
    off = g[~np.eye(g.shape[0], dtype=bool)]
    min_off = float(off.min()) if off.size else 0.0
    reasons = []
    if not np.all(np.isfinite(g)):
        reasons.append("non-finite entries")
    row_tol = tol * np.maximum(1.0, np.abs(np.diag(g)))
    if np.any(np.abs(resid) > row_tol):
        i = int(np.argmax(np.abs(resid) / row_tol))
        reasons.append(f"row {i} sums to {resid[i]:.3e}")
    if min_off < -tol:
        reasons.append(f"negative off-diagonal entry {min_off:.3e}")
    return GeneratorReport(resid, min_off, not reasons, "; ".join(reasons))


def _check_increasing(t, what):
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise RatingDataError(f"{what} must be a non-empty vector")
    if np.any(np.diff(t) <= 0):
        raise RatingDataError(f"{what} are not strictly increasing: {t.tolist()}")
    return t


@dataclass(frozen=True)
class DefaultCurve:
    """Cumulative risk-neutral default probabilities, shape (tenors, K)."""

    tenors: np.ndarray
    pd: np.ndarray

    def __post_init__(self):
        t = _check_increasing(self.tenors, "PD tenors")
        if t[0] <= 0:
            raise RatingDataError("PD tenors must be positive")
        pd = np.array(self.pd, dtype=float)
        if pd.ndim != 2 or pd.shape[0] != t.size:
            raise RatingDataError(
                f"PD table has shape {pd.shape}, expected ({t.size}, K)")
        if not np.all(np.isfinite(pd)) or pd.min() < 0 or pd.max() > 1:
            raise RatingDataError("default probability outside [0, 1]")
        if not np.all(pd[:, -1] == 1.0):
            raise RatingDataError("PD of the default state must be 1")
        dec = np.argwhere(np.diff(pd, axis=0) < 0)
        if dec.size:
            k, i = dec[0]
            raise RatingDataError(
                f"PD of rating {i} decreases between tenors {t[k]} and {t[k + 1]}")
        object.__setattr__(self, "tenors", _frozen(t))
        object.__setattr__(self, "pd", _frozen(pd))

    @property
    def size(self) -> int:
        return self.pd.shape[1]

    def at(self, tenor) -> np.ndarray:
        k = np.flatnonzero(np.abs(self.tenors - tenor) <= TENOR_TOL)
        if not k.size:
            raise RatingDataError(f"no PD quote at tenor {tenor}")
        return self.pd[k[0]]


@dataclass(frozen=True)
class PiecewiseSchedule:
    """Breakpoints 0 = T_0 < T_1 < ... < T_n of a piecewise-homogeneous model."""

    breakpoints: np.ndarray

    def __post_init__(self):
        t = _check_increasing(self.breakpoints, "breakpoints")
        if t.size < 2:
            raise RatingDataError("a schedule needs at least one interval")
        if t[0] != 0.0:
            raise RatingDataError(f"schedule must start at 0, got {t[0]}")
        object.__setattr__(self, "breakpoints", _frozen(t))

    @classmethod
    def from_tenors(cls, tenors) -> "PiecewiseSchedule":
        return cls(np.concatenate([[0.0], np.asarray(tenors, dtype=float)]))

    @property
    def n_intervals(self) -> int:
        return self.breakpoints.size - 1

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def interval_index(self, t) -> int:
        """Index k of the interval [T_k, T_{k+1}) containing t (T_n maps to n-1)."""
        if t < 0 or t > self.horizon + TENOR_TOL:
            raise RatingDataError(f"time {t} outside [0, {self.horizon}]")
        k = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return min(k, self.n_intervals - 1)

    def matches(self, tenors) -> bool:
        tenors = np.asarray(tenors, dtype=float)
        return (tenors.shape == (self.n_intervals,)
                and bool(np.all(np.abs(tenors - self.breakpoints[1:]) <= TENOR_TOL)))


# --- CSV exchange -------------------------------------------------------------

_HORIZON_RE = re.compile(r"(?:^|[_\-.])(\d+(?:\.\d+)?)\s*(m|y|mo|month|months|year|years)$",
                         re.IGNORECASE)


def horizon_from_name(path) -> float:
    """Parse a horizon token such as ``_3m`` or ``_1y`` from a file stem."""
    stem = Path(path).stem
    m = _HORIZON_RE.search(stem)
    if not m:
        raise RatingDataError(f"cannot infer horizon from file name {str(path)!r}")
    value = float(m.group(1))
    return value / 12.0 if m.group(2).lower().startswith("m") else value


def _read_rows(path):
    path = Path(path)
    if not path.is_file():
        raise RatingDataError(f"file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if len(rows) < 2:
        raise RatingDataError(f"{path}: empty table")
    return rows


def read_matrix_csv(path, scale: RatingScale, horizon=None, kind=MARKET) -> TransitionMatrix:
    """Read a percent-valued rating matrix with labelled header row and column."""
    rows = _read_rows(path)
    header = [c.strip() for c in rows[0][1:]]
    if tuple(header) != scale.labels:
        raise RatingDataError(
            f"{path}: column labels {header} do not match scale {list(scale.labels)}")
    body = rows[1:]
    if len(body) != scale.size:
        raise RatingDataError(
            f"{path}: dimension mismatch, {len(body)} rows for a {scale.size}-state scale")
    entries = np.empty((scale.size, scale.size))
    for i, row in enumerate(body):
        label = row[0].strip()
        if label != scale.labels[i]:
            raise RatingDataError(f"{path}: row {i} labelled {label!r}, "
                                  f"expected {scale.labels[i]!r}")
        if len(row) - 1 != scale.size:
            raise RatingDataError(f"{path}: row {label} has {len(row) - 1} entries")
        try:
            entries[i] = [float(x) for x in row[1:]]
        except ValueError as exc:
            raise RatingDataError(f"{path}: row {label}: {exc}") from None
    if horizon is None:
        horizon = horizon_from_name(path)
    try:
        return TransitionMatrix(horizon, entries / 100.0, kind)
    except RatingDataError as exc:
        raise RatingDataError(f"{path}: {exc}") from None


def _fmt(x, decimals):
    s = f"{x:.{decimals}f}"
    # no negative zero in files
    return s[1:] if s.startswith("-") and float(s) == 0 else s


def write_matrix_csv(path, matrix, scale: RatingScale, decimals=3):
    """Write a matrix (fractions) as percent values with ``decimals`` places."""
    entries = np.asarray(getattr(matrix, "entries", matrix), dtype=float)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from/to", *scale.labels])
        for label, row in zip(scale.labels, entries):
            w.writerow([label, *(_fmt(100.0 * x, decimals) for x in row)])
    return path


def read_pd_csv(path, scale: RatingScale) -> DefaultCurve:
    rows = _read_rows(path)
    try:
        tenors = [float(x) for x in rows[0][1:]]
    except ValueError as exc:
        raise RatingDataError(f"{path}: bad tenor header: {exc}") from None
    body = rows[1:]
    if len(body) != scale.size:
        raise RatingDataError(
            f"{path}: dimension mismatch, {len(body)} rows for a {scale.size}-state scale")
    pd = np.empty((len(tenors), scale.size))
    for i, row in enumerate(body):
        if row[0].strip() != scale.labels[i]:
            raise RatingDataError(f"{path}: row {i} labelled {row[0]!r}, "
                                  f"expected {scale.labels[i]!r}")
        if len(row) - 1 != len(tenors):
            raise RatingDataError(f"{path}: row {row[0]} has {len(row) - 1} entries")
        pd[:, i] = [float(x) / 100.0 for x in row[1:]]
    try:
        return DefaultCurve(np.array(tenors), pd)
    except RatingDataError as exc:
        raise RatingDataError(f"{path}: {exc}") from None


def write_pd_csv(path, curve: DefaultCurve, scale: RatingScale, decimals=3):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rating", *(repr(float(t)) for t in curve.tenors)])
        for i, label in enumerate(scale.labels):
            w.writerow([label, *(_fmt(100.0 * x, decimals) for x in curve.pd[:, i])])
    return path


def load_market_data(matrix_files: Iterable, pd_file, scale: RatingScale
                     ) -> tuple[list[TransitionMatrix], DefaultCurve, PiecewiseSchedule]:
    """Load historical matrices and a risk-neutral PD curve.

    ``matrix_files`` holds paths (horizon parsed from the file name, e.g.
    ``fitch_3m.csv``) or ``(path, horizon)`` pairs.
    """
    matrices = []
    for item in matrix_files:
        if isinstance(item, (tuple, list)):
            path, horizon = item
        else:
            path, horizon = item, None
        matrices.append(read_matrix_csv(path, scale, horizon))
    if not matrices:
        raise RatingDataError("no rating matrices given")
    matrices.sort(key=lambda m: m.horizon)
    horizons = np.array([m.horizon for m in matrices])
    if np.any(np.diff(horizons) <= TENOR_TOL):
        raise RatingDataError(f"matrix horizons are not distinct: {horizons.tolist()}")
    curve = read_pd_csv(pd_file, scale)
    schedule = PiecewiseSchedule.from_tenors(horizons)
    if not schedule.matches(curve.tenors):
        raise RatingDataError(
            f"PD tenors {curve.tenors.tolist()} do not match matrix horizons "
            f"{horizons.tolist()}")
    return matrices, curve, schedule
