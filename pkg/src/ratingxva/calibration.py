"""Historical and risk-neutral calibration of a piecewise-homogeneous chain.

The pipeline is:

1. :func:`adjust_matrix` removes the withdrawal mass of published matrices.
2. :func:`extract_piecewise_generators` turns the adjusted matrices into one
   historical generator per interval.
3. :func:`calibrate_piecewise` fits, interval by interval, a measure change
   ``h_k`` and a perturbed generator ``A_k`` so that risk-neutral default
   probabilities are matched while ``A_k`` stays close to the historical
   generator.

:func:`calibrate_jlt` is the row-scaling change of measure used as a
baseline.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .matfun import LogmError, expm, logm, repair_generator
from .optimize import ConvergenceError, least_squares_lm
from .ratings import (
    ADJUSTED,
    DefaultCurve,
    Generator,
    PiecewiseSchedule,
    RatingDataError,
    ROW_SUM_TOL,
    RatingScale,
    TransitionMatrix,
)

log = logging.getLogger(__name__)

__all__ = [
    "CalibrationError",
    "MeasureChangeParams",
    "CalibrationWeights",
    "CalibrationOptions",
    "IntervalReport",
    "PhctmcModel",
    "JltParams",
    "adjust_matrix",
    "extract_generator",
    "extract_piecewise_generators",
    "evolution_matrix",
    "evolution_system",
    "apply_exponential_com",
    "apply_jlt_com",
    "calibrate_piecewise",
    "calibrate_jlt",
    "degenerate_columns",
    "save_model",
    "load_model",
]

WITHDRAWAL_FLOOR = 1e-10


class CalibrationError(RuntimeError):
    """Calibration failed; ``interval`` names the offending interval."""

    def __init__(self, message, interval=None, result=None):
        super().__init__(message)
        self.interval = interval
        self.result = result


def _entries(g):
    return np.asarray(getattr(g, "entries", g))


@dataclass(frozen=True)
class MeasureChangeParams:
    """Positive per-rating factors of the exponential change of measure.

    The default state's factor is pinned to one.
    """

    values: np.ndarray

    def __post_init__(self):
        h = np.array(self.values, dtype=float)
        if h.ndim != 1 or h.size < 2:
            raise RatingDataError("measure change needs one factor per rating")
        if not np.all(np.isfinite(h)) or np.any(h <= 0):
            raise RatingDataError(f"measure change factors must be positive: {h}")
        if h[-1] != 1.0:
            raise RatingDataError("factor of the default state must be 1")
        h.setflags(write=False)
        object.__setattr__(self, "values", h)

    @classmethod
    def identity(cls, k) -> "MeasureChangeParams":
        return cls(np.ones(k))

    @property
    def kappa(self) -> np.ndarray:
        """Jump-intensity multipliers minus one, ``h_j / h_i - 1``."""
        h = self.values
        out = h[None, :] / h[:, None] - 1.0
        np.fill_diagonal(out, 0.0)
        return out


@dataclass(frozen=True)
class CalibrationWeights:
    """Weights of the risk-neutral PD fit and of the generator penalty.

    ``m_p = inf`` switches the generator penalty off entirely.
    """

    m_p: np.ndarray | float = 1.0
    m_q: np.ndarray | float = 1.0

    def __post_init__(self):
        m_p = np.asarray(self.m_p, dtype=float)
        m_q = np.asarray(self.m_q, dtype=float)
        if np.any(np.isnan(m_p)) or np.any(m_p < 0):
            raise RatingDataError("m_p weights must be nonnegative")
        if np.any(~np.isfinite(m_q)) or np.any(m_q < 0):
            raise RatingDataError("m_q weights must be finite and nonnegative")
        if np.any(np.isinf(m_p)) and not np.all(np.isinf(m_p)):
            raise RatingDataError("m_p is either finite or identically inf")
        object.__setattr__(self, "m_p", m_p)
        object.__setattr__(self, "m_q", m_q)

    @property
    def p_disabled(self) -> bool:
        return bool(np.all(np.isinf(self.m_p)))

    def p_matrix(self, k) -> np.ndarray:
        return np.broadcast_to(self.m_p, (k, k))

    def q_vector(self, k) -> np.ndarray:
        return np.broadcast_to(self.m_q, (k,))


@dataclass(frozen=True)
class CalibrationOptions:
    h_bounds: tuple[float, float] = (1e-2, 1e2)
    # off-diagonal A bounded by factor * max|historical generator|
    a_bound_factor: float = 10.0
    max_iter: int = 2000
    ftol: float = 1e-12
    xtol: float = 1e-12


@dataclass(frozen=True)
class IntervalReport:
    interval: int
    h: np.ndarray
    objective: float
    pd_model: np.ndarray
    pd_market: np.ndarray
    generator_residual: float
    matrix_error: float
    repair_residual: float
    n_iter: int
    message: str

    @property
    def pd_residual(self) -> np.ndarray:
        return self.pd_model - self.pd_market

    @property
    def pd_error(self) -> float:
        """``||PD_model - PD_market||_2 / K``."""
        return float(np.linalg.norm(self.pd_residual) / self.pd_model.size)


@dataclass(frozen=True)
class PhctmcModel:
    """Piecewise-homogeneous rating chain under the historical (P) and
    risk-neutral (Q) measures."""

    schedule: PiecewiseSchedule
    gen_p: tuple[Generator, ...]
    gen_q: tuple[Generator, ...]
    h: tuple[MeasureChangeParams, ...]
    historical: tuple[Generator, ...] = field(default=(), compare=False)
    report: tuple[IntervalReport, ...] = field(default=(), compare=False)

    def __post_init__(self):
        n = self.schedule.n_intervals
        for name in ("gen_p", "gen_q", "h"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if len(getattr(self, name)) != n:
                raise RatingDataError(f"{name} has {len(getattr(self, name))} "
                                      f"entries for {n} intervals")
        object.__setattr__(self, "historical", tuple(self.historical))
        object.__setattr__(self, "report", tuple(self.report))
        for k, (gp, gq, h) in enumerate(zip(self.gen_p, self.gen_q, self.h)):
            expected = apply_exponential_com(gp, h).entries
            if not np.allclose(gq.entries, expected, rtol=1e-10, atol=1e-12):
                raise RatingDataError(
                    f"Q generator of interval {k} is not the measure change of "
                    "the P generator")

    @property
    def size(self) -> int:
        return self.gen_p[0].size

    def generators(self, measure) -> tuple[Generator, ...]:
        measure = str(measure).upper()
        if measure == "P":
            return self.gen_p
        if measure == "Q":
            return self.gen_q
        raise ValueError(f"measure must be 'P' or 'Q', got {measure!r}")

    def evolution(self, measure, s, t) -> TransitionMatrix:
        return evolution_system(self.generators(measure), self.schedule, s, t)


@dataclass(frozen=True)
class JltParams:
    """Row scalings ``diag(h_1, ..., h_{K-1}, 1)`` of a homogeneous generator."""

    h_tilde: np.ndarray
    generator: Generator
    horizon: float = 1.0
    residual: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        h = np.array(self.h_tilde, dtype=float)
        if h.shape != (self.generator.size - 1,):
            raise RatingDataError(f"expected {self.generator.size - 1} JLT factors")
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise RatingDataError("JLT factors must be nonnegative")
        h.setflags(write=False)
        object.__setattr__(self, "h_tilde", h)

    @property
    def scaling(self) -> np.ndarray:
        return np.append(self.h_tilde, 1.0)

    @property
    def pd_error(self) -> float:
        if self.residual is None:
            return float("nan")
        return float(np.linalg.norm(self.residual) / self.residual.size)

    @property
    def gen_q(self) -> Generator:
        return apply_jlt_com(self.generator, self)


# --- historical side ----------------------------------------------------------

def adjust_matrix(m: TransitionMatrix) -> TransitionMatrix:
    """Redistribute withdrawn mass proportionally over each row.

    Rows with withdrawal get their zero entries floored to 1e-10 and the
    missing mass added in proportion to the floored row. Rows that already
    sum to one within rounding of the printed data are left untouched.
    """
    p = np.array(m.entries, dtype=float)
    out = p.copy()
    for i, row in enumerate(p):
        total = row.sum()
        if total <= 0:
            raise RatingDataError(
                f"row {i} has zero total mass (full withdrawal); cannot adjust")
        withdrawal = 1.0 - total
        if withdrawal > ROW_SUM_TOL:
            y = row.copy()
            y[y == 0] = WITHDRAWAL_FLOOR
            adjusted = row + y / y.sum() * withdrawal
            out[i] = adjusted / adjusted.sum()
    return TransitionMatrix(m.horizon, out, ADJUSTED)


def _absorbing(g):
    g = repair_generator(g)
    g[-1] = 0.0
    return g


def extract_generator(r: TransitionMatrix, horizon=None) -> Generator:
    """Approximate generator of an adjusted matrix: repaired ``logm(R) / t``."""
    t = r.horizon if horizon is None else float(horizon)
    if t <= 0:
        raise RatingDataError("cannot extract a generator over a zero horizon")
    return Generator(_absorbing(logm(_entries(r)) / t))


def extract_piecewise_generators(rs: Sequence[TransitionMatrix],
                                 schedule: PiecewiseSchedule, residuals=None) -> list[Generator]:
    """One historical generator per interval from cumulative matrices.

    Interval k solves ``P(0, T_{k-1}) exp(G_k dT_k) = R_k`` for ``G_k`` and
    repairs the result; ``P(0, T_{k-1})`` is built from the repaired
    generators of the earlier intervals. If ``residuals`` is a list, the
    mean absolute repair correction of each interval is appended to it.
    """
    if not schedule.matches([r.horizon for r in rs]):
        raise RatingDataError("matrix horizons do not match the schedule")
    k_states = rs[0].size
    acc = np.eye(k_states)
    out = []
    for k, (r, dt) in enumerate(zip(rs, schedule.lengths)):
        try:
            quotient = np.linalg.solve(acc, _entries(r))
        except np.linalg.LinAlgError:
            raise CalibrationError(
                f"interval {k}: accumulated evolution system is singular",
                interval=k) from None
        try:
            raw = logm(quotient) / dt
        except LogmError as exc:
            raise CalibrationError(f"interval {k}: {exc}", interval=k) from exc
        g = _absorbing(raw)
        if residuals is not None:
            residuals.append(float(np.abs(g - raw).mean()))
        out.append(Generator(g))
        acc = acc @ expm(g * dt)
    return out


def evolution_matrix(generators, breakpoints, s, t) -> np.ndarray:
    """Raw ndarray form of :func:`evolution_system`."""
    bp = np.asarray(breakpoints, dtype=float)
    if s < bp[0] - 1e-12 or t > bp[-1] + 1e-9 or s > t:
        raise RatingDataError(
            f"evolution from {s} to {t} outside schedule [{bp[0]}, {bp[-1]}]")
    k_states = _entries(generators[0]).shape[0]
    out = np.eye(k_states)
    for k in range(len(bp) - 1):
        lo, hi = max(s, bp[k]), min(t, bp[k + 1])
        if hi > lo:
            out = out @ expm(_entries(generators[k]) * (hi - lo))
    return out


def evolution_system(generators, schedule: PiecewiseSchedule, s, t) -> TransitionMatrix:
    """Transition matrix ``P(s, t)`` of the piecewise-homogeneous chain."""
    p = np.clip(evolution_matrix(generators, schedule.breakpoints, s, t), 0.0, 1.0)
    # stiff generators leave rounding in the row sums and the default row
    p /= p.sum(axis=1, keepdims=True)
    p[-1] = 0.0
    p[-1, -1] = 1.0
    return TransitionMatrix(t - s, p, ADJUSTED)


# --- changes of measure -------------------------------------------------------

def _com_entries(a, h):
    # off-diagonals a_ij * h_j / h_i, diagonal the negated row sum
    q = a * (h[None, :] / h[:, None])
    idx = np.arange(a.shape[0])
    q[idx, idx] = 0.0
    q[idx, idx] = -q.sum(axis=1)
    return q


def apply_exponential_com(g, h) -> Generator:
    """Generator after the exponential change of measure with factors ``h``."""
    h = np.asarray(getattr(h, "values", h), dtype=float)
    if np.any(h <= 0):
        raise RatingDataError("measure change factors must be positive")
    return Generator(_com_entries(np.array(_entries(g), dtype=float), h))


def apply_jlt_com(g, p) -> Generator:
    scaling = p.scaling if isinstance(p, JltParams) else np.append(np.asarray(p, float), 1.0)
    return Generator(scaling[:, None] * _entries(g))


# --- risk-neutral calibration -------------------------------------------------

class _IntervalProblem:
    """Residual map of one interval: x = (h_1..h_{K-1}, A off-diag, A diag)."""

    def __init__(self, hist, pq_prev, dt, pd_target, weights: CalibrationWeights):
        self.hist = np.array(hist, dtype=float)
        self.k = self.hist.shape[0]
        self.dt = dt
        self.pq_prev = pq_prev
        self.pd_target = pd_target
        self.m_q = np.asarray(weights.q_vector(self.k), dtype=float)
        # without the generator penalty the diagonal of A never enters the
        # residual, so only the off-diagonal entries stay free
        self.penalized = not weights.p_disabled
        rows = np.arange(self.k) < self.k - 1
        self.off = ~np.eye(self.k, dtype=bool) & rows[:, None]
        self.diag = np.eye(self.k, dtype=bool) & rows[:, None]
        if self.penalized:
            m_p = weights.p_matrix(self.k)
            self.w_off = m_p[self.off]
            self.w_diag = m_p[self.diag]
        self.n_h = self.k - 1
        self.n_off = int(self.off.sum())

    def unpack(self, x):
        h = np.ones(self.k, dtype=x.dtype)
        h[:self.n_h] = x[:self.n_h]
        a = self.hist.astype(x.dtype)
        a[self.off] = x[self.n_h:self.n_h + self.n_off]
        if self.penalized:
            a[self.diag] = x[self.n_h + self.n_off:]
        return h, a

    def pd_model(self, x):
        h, a = self.unpack(x)
        p = self.pq_prev @ expm(_com_entries(a, h) * self.dt)
        return p[:, -1]

    def __call__(self, x):
        r_q = self.m_q * (self.pd_model(x) - self.pd_target)
        if not self.penalized:
            return r_q
        _, a = self.unpack(x)
        r_off = self.w_off * (a[self.off] - self.hist[self.off])
        r_diag = self.w_diag * (a[self.diag] - self.hist[self.diag])
        return np.concatenate([r_q, r_off, r_diag])

    def start_and_bounds(self, opts: CalibrationOptions):
        lam_max = max(float(np.abs(self.hist).max()), 1e-12)
        top = opts.a_bound_factor * lam_max
        x0 = [np.ones(self.n_h), self.hist[self.off]]
        lo = [np.full(self.n_h, opts.h_bounds[0]), np.zeros(self.n_off)]
        hi = [np.full(self.n_h, opts.h_bounds[1]), np.full(self.n_off, top)]
        if self.penalized:
            x0.append(self.hist[self.diag])
            lo.append(np.full(self.n_h, -top * self.k))
            hi.append(np.zeros(self.n_h))
        x0, lo, hi = (np.concatenate(v) for v in (x0, lo, hi))
        return np.clip(x0, lo, hi), lo, hi


def calibrate_piecewise(matrices: Sequence[TransitionMatrix], curve: DefaultCurve,
                        schedule: PiecewiseSchedule,
                        weights: CalibrationWeights | None = None,
                        opts: CalibrationOptions | None = None,
                        historical: Sequence[Generator] | None = None) -> PhctmcModel:
    """Fit the model to adjusted historical matrices and a risk-neutral PD curve.

    For each interval k, minimises over ``h_k`` (``h_K = 1``) and ``A_k``
    (zero default row, nonnegative off-diagonal, nonpositive diagonal) the
    stacked residual::

        m_q * (P_Q(0, T_{k-1}) expm(A_k^h dT_k) e_K - PD(T_k))
        M_p * (A_k - Lambda_k)

    where ``A_k^h`` is ``A_k`` under the change of measure and ``Lambda_k`` the
    historical generator. The fitted ``A_k`` has no row-sum constraint; it is
    repaired afterwards and the size of that repair is reported.

    Parameters
    ----------
    matrices : sequence of TransitionMatrix
        Adjusted matrices, one per breakpoint ``T_1..T_n``.
    curve : DefaultCurve
        Risk-neutral cumulative PDs quoted at the same tenors.
    historical : sequence of Generator, optional
        Precomputed historical generators; extracted from ``matrices`` if
        not given.

    Raises
    ------
    CalibrationError
        If an interval's optimizer hits its iteration limit; ``result``
        holds the best iterate.
    """
    weights = weights or CalibrationWeights()
    opts = opts or CalibrationOptions()
    if not schedule.matches(curve.tenors):
        raise RatingDataError("PD tenors do not match the schedule")
    if any(m.kind != ADJUSTED for m in matrices):
        raise RatingDataError("calibration needs adjusted matrices")
    if historical is None:
        historical = extract_piecewise_generators(matrices, schedule)
    k_states = curve.size
    pq = np.eye(k_states)
    pp = np.eye(k_states)
    gen_p, gen_q, hs, reports = [], [], [], []
    for k, dt in enumerate(schedule.lengths):
        problem = _IntervalProblem(_entries(historical[k]), pq, dt, curve.pd[k], weights)
        x0, lo, hi = problem.start_and_bounds(opts)
        try:
            res = least_squares_lm(problem, x0, lo, hi, max_iter=opts.max_iter,
                                   ftol=opts.ftol, xtol=opts.xtol)
        except ConvergenceError as exc:
            raise CalibrationError(
                f"interval {k}: {exc} (cost {exc.result.cost:.3e})",
                interval=k, result=exc.result) from None
        h, a = problem.unpack(res.x)
        repaired = _absorbing(a)
        repair_residual = float(np.abs(repaired - a).mean())
        h_params = MeasureChangeParams(h)
        gp = Generator(repaired)
        gq = apply_exponential_com(gp, h_params)
        pq = pq @ expm(gq.entries * dt)
        pp = pp @ expm(gp.entries * dt)
        if weights.p_disabled:
            gen_resid = float(np.linalg.norm(a - problem.hist))
        else:
            gen_resid = float(np.linalg.norm(weights.p_matrix(k_states) * (a - problem.hist)))
        matrix_error = float(np.linalg.norm(pp - _entries(matrices[k])) / k_states ** 2)
        reports.append(IntervalReport(
            interval=k, h=h, objective=res.cost, pd_model=pq[:, -1].copy(),
            pd_market=np.array(curve.pd[k]), generator_residual=gen_resid,
            matrix_error=matrix_error, repair_residual=repair_residual,
            n_iter=res.n_iter, message=res.message))
        log.info("interval %d: cost %.3e, PD error %.3e, repair %.3e (%d iterations)",
                 k, res.cost, reports[-1].pd_error, repair_residual, res.n_iter)
        gen_p.append(gp)
        gen_q.append(gq)
        hs.append(h_params)
    return PhctmcModel(schedule, gen_p, gen_q, hs, historical=tuple(historical),
                       report=tuple(reports))


def calibrate_jlt(g, pd_target, horizon=1.0, max_iter=2000) -> JltParams:
    """Fit row scalings of a homogeneous generator to one-horizon PDs."""
    g_arr = np.array(_entries(g), dtype=float)
    k = g_arr.shape[0]
    target = np.asarray(pd_target, dtype=float)

    def residual(x):
        scaling = np.ones(k, dtype=x.dtype)
        scaling[:-1] = x
        return expm(scaling[:, None] * g_arr * horizon)[:, -1] - target

    try:
        res = least_squares_lm(residual, np.ones(k - 1), 0.0, np.inf, max_iter=max_iter,
                               ftol=1e-15, xtol=1e-15)
    except ConvergenceError as exc:
        raise CalibrationError(f"JLT calibration: {exc}", result=exc.result) from None
    generator = g if isinstance(g, Generator) else Generator(g_arr)
    return JltParams(res.x, generator, horizon, residual=res.residuals)


def degenerate_columns(p, tol=5e-6) -> list[int]:
    """Interior rating columns whose entries all round to zero at ``tol``."""
    p = np.asarray(_entries(p))
    return [j for j in range(p.shape[1] - 1) if np.all(np.abs(p[:, j]) < tol)]


# --- persistence --------------------------------------------------------------

def _model_dict(model: PhctmcModel, scale: RatingScale | None):
    out = {
        "format": "ratingxva-phctmc/1",
        "labels": list(scale.labels) if scale else None,
        "breakpoints": model.schedule.breakpoints.tolist(),
        "h": [h.values.tolist() for h in model.h],
        "gen_p": [g.entries.tolist() for g in model.gen_p],
        "gen_q": [g.entries.tolist() for g in model.gen_q],
        "historical": [g.entries.tolist() for g in model.historical],
    }
    if model.report:
        out["report"] = [
            {"interval": r.interval, "objective": r.objective,
             "pd_error": r.pd_error, "generator_residual": r.generator_residual,
             "matrix_error": r.matrix_error, "repair_residual": r.repair_residual,
             "n_iter": r.n_iter, "message": r.message}
            for r in model.report]
    return out


def save_model(path, model: PhctmcModel, scale: RatingScale | None = None):
    path = Path(path)
    path.write_text(json.dumps(_model_dict(model, scale), indent=1) + "\n")
    return path


def load_model(path) -> tuple[PhctmcModel, RatingScale | None]:
    data = json.loads(Path(path).read_text())
    if data.get("format") != "ratingxva-phctmc/1":
        raise RatingDataError(f"{path}: not a model file")
    scale = RatingScale(tuple(data["labels"])) if data.get("labels") else None
    model = PhctmcModel(
        PiecewiseSchedule(np.array(data["breakpoints"])),
        [Generator(np.array(g)) for g in data["gen_p"]],
        [Generator(np.array(g)) for g in data["gen_q"]],
        [MeasureChangeParams(np.array(h)) for h in data["h"]],
        historical=[Generator(np.array(g)) for g in data.get("historical", [])],
    )
    return model, scale
