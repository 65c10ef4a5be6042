"""Collateralised credit and debit valuation adjustments with rating triggers.

The exposure is a toy portfolio of Brownian cash-flow drivers, each alive
up to a uniform random maturity. Collateral follows a cash account that is
reset on every posting date to the amount dictated by the parties' rating
thresholds and is frozen between postings. A default is observed at the
first posting date on or after it, against the collateral of the last
posting strictly before it, so there is one posting period of gap risk.

Sign conventions: ``V > 0`` is exposure of the bank to the counterparty,
``C > 0`` is collateral held by the bank.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import PhctmcModel
from .ratings import RatingDataError, RatingScale
from .simulation import RatingPath, path_rng, simulate_paths, states_at

__all__ = [
    "UNCOLLATERALIZED",
    "PERFECT",
    "RATING_TRIGGERS",
    "REGIMES",
    "PortfolioModel",
    "PortfolioPaths",
    "CollateralAgreement",
    "XvaConfig",
    "RegimeResult",
    "XvaReport",
    "read_thresholds_csv",
    "simulate_portfolio",
    "collateral_target",
    "collateral_account_path",
    "evaluate_scenarios",
    "estimate_xva",
    "pre_default_distribution",
    "pre_default_shares",
    "default_times",
    "write_trajectories_csv",
]

UNCOLLATERALIZED = "uncollateralized"
PERFECT = "perfect"
RATING_TRIGGERS = "rating-triggers"
REGIMES = (UNCOLLATERALIZED, RATING_TRIGGERS, PERFECT)

# random stream ids below the per-rating blocks used elsewhere
STREAM_BANK = 1001
STREAM_CPTY = 1002
STREAM_PORTFOLIO = 1003


@dataclass(frozen=True)
class PortfolioModel:
    """``V_t = v0 + s_0 W^0_t + sum_i s_i W^i_t 1{t <= tau_i}``.

    ``s_i = vol_scale * xi_i`` with ``xi_i`` standard normal, ``tau_i``
    uniform on ``[0, maturity]``; driver 0 lives to maturity.
    """

    v0: float = 0.0
    n_flows: int = 24
    vol_scale: float = 1e7
    maturity: float = 1.0
    postings_per_year: int = 365

    def __post_init__(self):
        if self.n_flows < 0:
            raise ValueError("n_flows must be nonnegative")
        if self.maturity <= 0 or self.postings_per_year < 1:
            raise ValueError("maturity must be positive and postings_per_year >= 1")
        if self.vol_scale < 0:
            raise ValueError("vol_scale must be nonnegative")

    @property
    def grid(self) -> np.ndarray:
        n = max(1, int(round(self.postings_per_year * self.maturity)))
        return np.linspace(0.0, self.maturity, n + 1)


@dataclass(frozen=True)
class PortfolioPaths:
    """Portfolio values on the posting grid, shape (n_paths, n_dates)."""

    grid: np.ndarray
    values: np.ndarray
    sigma: np.ndarray
    flow_maturity: np.ndarray

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, n) -> np.ndarray:
        return self.values[n]


def simulate_portfolio(pm: PortfolioModel, n_paths, seed, stream=STREAM_PORTFOLIO) -> PortfolioPaths:
    grid = pm.grid
    dt = np.diff(grid)
    m = pm.n_flows + 1
    values = np.empty((n_paths, grid.size))
    sigma = np.empty((n_paths, m))
    life = np.empty((n_paths, m))
    for n in range(n_paths):
        rng = path_rng(seed, stream, n)
        s = pm.vol_scale * rng.standard_normal(m)
        tau = rng.uniform(0.0, pm.maturity, m)
        tau[0] = math.inf
        dw = rng.standard_normal((dt.size, m)) * np.sqrt(dt)[:, None]
        w = np.vstack([np.zeros(m), np.cumsum(dw, axis=0)])
        alive = grid[:, None] <= tau[None, :]
        values[n] = pm.v0 + (w * alive) @ s
        sigma[n] = s
        life[n] = tau
    return PortfolioPaths(grid, values, sigma, life)


@dataclass(frozen=True)
class CollateralAgreement:
    """Per-rating unsecured thresholds of the bank and the counterparty."""

    bank: np.ndarray
    cpty: np.ndarray
    regime: str = RATING_TRIGGERS

    def __post_init__(self):
        b = np.array(self.bank, dtype=float)
        c = np.array(self.cpty, dtype=float)
        if b.shape != c.shape or b.ndim != 1:
            raise RatingDataError("threshold vectors must have one entry per rating")
        if np.any(np.isnan(b)) or np.any(np.isnan(c)) or b.min() < 0 or c.min() < 0:
            raise RatingDataError("thresholds must be nonnegative")
        if self.regime not in REGIMES:
            raise RatingDataError(f"unknown regime {self.regime!r}")
        if self.regime == UNCOLLATERALIZED and not (np.all(np.isinf(b)) and np.all(np.isinf(c))):
            raise RatingDataError("uncollateralized agreement needs infinite thresholds")
        if self.regime == PERFECT and not (np.all(b == 0) and np.all(c == 0)):
            raise RatingDataError("perfect collateralization needs zero thresholds")
        b.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "bank", b)
        object.__setattr__(self, "cpty", c)

    @classmethod
    def uncollateralized(cls, k) -> "CollateralAgreement":
        return cls(np.full(k, np.inf), np.full(k, np.inf), UNCOLLATERALIZED)

    @classmethod
    def perfect(cls, k) -> "CollateralAgreement":
        return cls(np.zeros(k), np.zeros(k), PERFECT)

    @classmethod
    def for_regime(cls, regime, bank, cpty) -> "CollateralAgreement":
        k = len(bank)
        if regime == UNCOLLATERALIZED:
            return cls.uncollateralized(k)
        if regime == PERFECT:
            return cls.perfect(k)
        return cls(bank, cpty, regime)


def read_thresholds_csv(path, scale: RatingScale) -> tuple[np.ndarray, np.ndarray]:
    """Bank and counterparty threshold rows (currency, ``inf`` allowed)."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(x.strip() for x in r)]
    except FileNotFoundError:
        raise RatingDataError(f"{path}: file not found") from None
    header = [x.strip() for x in rows[0][1:]]
    if tuple(header) != scale.labels:
        raise RatingDataError(f"{path}: header {header} does not match rating scale")
    out = {}
    for r in rows[1:]:
        try:
            out[r[0].strip().lower()] = np.array([float(x) for x in r[1:]])
        except ValueError as exc:
            raise RatingDataError(f"{path}: {exc}") from None
    missing = {"bank", "counterparty"} - set(out)
    if missing:
        raise RatingDataError(f"{path}: missing rows {sorted(missing)}")
    return out["bank"], out["counterparty"]


def _neg(x):
    return np.minimum(x, 0.0)


def _pos(x):
    return np.maximum(x, 0.0)


def collateral_target(v, rating_bank, rating_cpty, agr: CollateralAgreement):
    """``f = (V + rho_B)^- + (V - rho_C)^+`` with ``X^- = min(X, 0)``."""
    v = np.asarray(v, dtype=float)
    rb = agr.bank[np.asarray(rating_bank)]
    rc = agr.cpty[np.asarray(rating_cpty)]
    return _neg(v + rb) + _pos(v - rc)


def collateral_account_path(values, bank_ratings, cpty_ratings, agr: CollateralAgreement):
    """Collateral account on the posting grid.

    ``values`` and the rating arrays hold one column per posting date
    (leading axes are paths). The account starts and ends at zero; at each
    intermediate date the negative and positive parts are topped up to the
    target amounts.
    """
    v = np.asarray(values, dtype=float)
    rb = np.asarray(bank_ratings)
    rc = np.asarray(cpty_ratings)
    if v.shape != rb.shape or v.shape != rc.shape:
        raise RatingDataError("portfolio and rating paths are on different grids")
    c = np.zeros_like(v)
    for j in range(1, v.shape[-1] - 1):
        prev = c[..., j - 1]
        c[..., j] = (prev + (_neg(v[..., j] + agr.bank[rb[..., j]]) - _neg(prev))
                     + (_pos(v[..., j] - agr.cpty[rc[..., j]]) - _pos(prev)))
    return c


@dataclass(frozen=True)
class XvaConfig:
    lgd_b: float = 0.6
    lgd_c: float = 0.6
    n_paths: int = 10000
    seed: int = 0
    bank_rating: int = 0
    cpty_rating: int = 2

    def __post_init__(self):
        for name in ("lgd_b", "lgd_c"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    mean = float(np.mean(x))
    if x.size < 2:
        return mean, math.nan
    return mean, float(np.std(x, ddof=1) / math.sqrt(x.size))


@dataclass(frozen=True)
class RegimeResult:
    regime: str
    cdva: float
    ccva: float
    cbva: float
    se_cdva: float
    se_ccva: float
    se_cbva: float
    n_bank_defaults: int
    n_cpty_defaults: int

    @classmethod
    def from_contributions(cls, regime, dva, cva, n_b, n_c) -> "RegimeResult":
        cdva, se_d = _mean_se(dva)
        ccva, se_c = _mean_se(cva)
        _, se_b = _mean_se(np.asarray(dva) - np.asarray(cva))
        return cls(regime, cdva, ccva, cdva - ccva, se_d, se_c, se_b, n_b, n_c)


@dataclass(frozen=True)
class XvaReport:
    regimes: dict
    n_paths: int
    pre_default: dict = field(default_factory=dict)

    def __getitem__(self, regime) -> RegimeResult:
        return self.regimes[regime]

    def ordering_holds(self) -> bool:
        """Strict ordering perfect < triggers < uncollateralized for both adjustments."""
        if not all(r in self.regimes for r in REGIMES):
            return True
        p, t, u = (self.regimes[r] for r in (PERFECT, RATING_TRIGGERS, UNCOLLATERALIZED))
        return p.ccva < t.ccva < u.ccva and p.cdva < t.cdva < u.cdva

    def identity_holds(self) -> bool:
        return all(r.cbva == r.cdva - r.ccva for r in self.regimes.values())


def default_times(paths: Sequence[RatingPath]) -> np.ndarray:
    return np.array([p.default_time for p in paths])


def evaluate_scenarios(grid, values, tau_b, tau_c, bank_ratings, cpty_ratings,
                       agr: CollateralAgreement, lgd_b, lgd_c, maturity=None):
    """Per-path debit and credit contributions of one collateral regime.

    Returns ``(dva, cva, who)`` where ``dva = -1{tau = tau_B < T} lgd_B
    (V^- - C^-)^-``, ``cva = 1{tau = tau_C < T} lgd_C (V^+ - C^+)^+``, and
    ``who`` is 1 for a bank default, 2 for a counterparty default and 0
    otherwise. Equal default times count as a counterparty default.
    """
    grid = np.asarray(grid, dtype=float)
    v = np.atleast_2d(np.asarray(values, dtype=float))
    tau_b = np.asarray(tau_b, dtype=float)
    tau_c = np.asarray(tau_c, dtype=float)
    maturity = grid[-1] if maturity is None else maturity
    coll = collateral_account_path(v, bank_ratings, cpty_ratings, agr)
    tau = np.minimum(tau_b, tau_c)
    who = np.where(tau >= maturity, 0, np.where(tau_c <= tau_b, 2, 1))
    n = v.shape[0]
    dva = np.zeros(n)
    cva = np.zeros(n)
    hit = np.flatnonzero(who > 0)
    if hit.size:
        # V at the first posting date on or after tau, C at the last one before
        j = np.minimum(np.searchsorted(grid, tau[hit], side="left"), grid.size - 1)
        v_tau = v[hit, j]
        c_tau = np.where(j > 0, coll[hit, np.maximum(j - 1, 0)], 0.0)
        bank = who[hit] == 1
        dva[hit[bank]] = -lgd_b * _neg(_neg(v_tau[bank]) - _neg(c_tau[bank]))
        cpty = ~bank
        cva[hit[cpty]] = lgd_c * _pos(_pos(v_tau[cpty]) - _pos(c_tau[cpty]))
    return dva, cva, who


def estimate_xva(model: PhctmcModel, pm: PortfolioModel, agreements, cfg: XvaConfig,
                 portfolio: PortfolioPaths | None = None) -> XvaReport:
    """Monte Carlo CDVA, CCVA and CBVA for each agreement on matched scenarios.

    Rating paths of both parties are simulated under Q from the configured
    initial ratings; the same rating and portfolio scenarios are reused for
    every agreement. No discounting.
    """
    if isinstance(agreements, CollateralAgreement):
        agreements = [agreements]
    if pm.maturity > model.schedule.horizon + 1e-12:
        raise RatingDataError("portfolio maturity exceeds the rating model horizon")
    if not model.gen_q:
        raise RatingDataError("model has no risk-neutral generators")
    n = cfg.n_paths
    bank = simulate_paths(model, "Q", cfg.bank_rating, n, cfg.seed, stream=STREAM_BANK)
    cpty = simulate_paths(model, "Q", cfg.cpty_rating, n, cfg.seed, stream=STREAM_CPTY)
    if portfolio is None:
        portfolio = simulate_portfolio(pm, n, cfg.seed)
    grid = portfolio.grid
    rb = states_at(bank, grid)
    rc = states_at(cpty, grid)
    tau_b, tau_c = default_times(bank), default_times(cpty)
    out = {}
    for agr in agreements:
        dva, cva, who = evaluate_scenarios(grid, portfolio.values, tau_b, tau_c, rb, rc,
                                           agr, cfg.lgd_b, cfg.lgd_c, pm.maturity)
        out[agr.regime] = RegimeResult.from_contributions(
            agr.regime, dva, cva, int(np.sum(who == 1)), int(np.sum(who == 2)))
    return XvaReport(out, n)


def pre_default_distribution(paths, n_states=None) -> np.ndarray:
    """Frequencies of (start rating, rating just before default).

    Entry (i, j) is the fraction of paths starting in i that default with
    pre-default rating j; row sums are default frequencies.
    """
    flat = [p for b in paths.values() for p in b] if isinstance(paths, dict) else list(paths)
    if not flat:
        return np.zeros((n_states or 0, n_states or 0))
    k = flat[0].n_states if n_states is None else n_states
    counts = np.zeros((k, k))
    totals = np.zeros(k)
    for p in flat:
        totals[p.initial] += 1
        j = p.pre_default_state
        if j is not None:
            counts[p.initial, j] += 1
    return counts / np.maximum(totals, 1)[:, None]


def pre_default_shares(hist) -> np.ndarray:
    """Pre-default mass aggregated over start ratings, normalised to one."""
    agg = np.asarray(hist).sum(axis=0)
    total = agg.sum()
    return agg / total if total > 0 else agg


def write_trajectories_csv(path, grid, values, collateral, bank_ratings, cpty_ratings,
                           agr: CollateralAgreement, scale: RatingScale, paths_idx=None):
    """Tidy per-date dump of portfolio, collateral, ratings and thresholds."""
    path = Path(path)
    idx = range(values.shape[0]) if paths_idx is None else paths_idx
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "time", "value", "collateral", "bank_rating", "cpty_rating",
                    "bank_threshold", "cpty_threshold"])
        for n in idx:
            for j, t in enumerate(grid):
                b, c = int(bank_ratings[n, j]), int(cpty_ratings[n, j])
                w.writerow([n, repr(float(t)), repr(float(values[n, j])),
                            repr(float(collateral[n, j])), scale.labels[b], scale.labels[c],
                            repr(float(agr.bank[b])), repr(float(agr.cpty[c]))])
    return path
