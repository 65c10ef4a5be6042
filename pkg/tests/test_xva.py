import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratingxva.ratings import FITCH_SCALE, RatingDataError
from ratingxva.simulation import RatingPath
from ratingxva.xva import (
    PERFECT,
    RATING_TRIGGERS,
    REGIMES,
    UNCOLLATERALIZED,
    CollateralAgreement,
    PortfolioModel,
    RegimeResult,
    XvaConfig,
    collateral_account_path,
    collateral_target,
    estimate_xva,
    evaluate_scenarios,
    pre_default_distribution,
    pre_default_shares,
    read_thresholds_csv,
    simulate_portfolio,
    write_trajectories_csv,
)

from conftest import FITCH

K = 7
BANK = np.array([np.inf, 8e6, 6e6, 4e6, 2e6, 0.0, 0.0])
CPTY = np.array([np.inf, 9e6, 7e6, 5e6, 3e6, 0.0, 0.0])
TRIGGERS = CollateralAgreement(BANK, CPTY)


def test_collateral_target_examples():
    v = np.array([-3e6, 0.0, 7e6, 1e12])
    z = np.zeros(4, dtype=int)
    np.testing.assert_array_equal(collateral_target(v, z, z, CollateralAgreement.perfect(K)), v)
    np.testing.assert_array_equal(
        collateral_target(v, z, z, CollateralAgreement.uncollateralized(K)), 0.0)
    assert collateral_target(7e6, 0, 3, TRIGGERS) == pytest.approx(2e6)
    assert collateral_target(-7e6, 3, 0, TRIGGERS) == pytest.approx(-3e6)
    assert collateral_target(-7e6, 0, 3, TRIGGERS) == 0.0


def test_agreement_validation():
    with pytest.raises(RatingDataError):
        CollateralAgreement(np.zeros(3), np.zeros(4))
    with pytest.raises(RatingDataError):
        CollateralAgreement(-np.ones(3), np.zeros(3))
    with pytest.raises(RatingDataError):
        CollateralAgreement(np.zeros(3), np.zeros(3), UNCOLLATERALIZED)
    with pytest.raises(RatingDataError):
        CollateralAgreement(BANK, CPTY, "partial")
    assert CollateralAgreement.for_regime(PERFECT, BANK, CPTY).regime == PERFECT


def test_thresholds_fixture():
    b, c = read_thresholds_csv(FITCH / "thresholds.csv", FITCH_SCALE)
    assert b.shape == c.shape == (K,)
    np.testing.assert_array_equal(b, [1e7, 1e7, 1e7, 5e6, 5e6, 0, 0])
    np.testing.assert_array_equal(c, b)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(3, 40))
def test_account_telescopes_to_target(seed, n):
    rng = np.random.default_rng(seed)
    v = rng.normal(0, 1e7, (3, n))
    rb = rng.integers(0, K, (3, n))
    rc = rng.integers(0, K, (3, n))
    c = collateral_account_path(v, rb, rc, TRIGGERS)
    assert np.all(c[:, 0] == 0) and np.all(c[:, -1] == 0)
    f = collateral_target(v, rb, rc, TRIGGERS)
    np.testing.assert_allclose(c[:, 1:-1], f[:, 1:-1], rtol=0, atol=1e-10 * 1e7)


def test_account_extremes():
    v = np.linspace(-2e7, 2e7, 9)[None, :]
    z = np.zeros_like(v, dtype=int)
    perfect = collateral_account_path(v, z, z, CollateralAgreement.perfect(K))
    np.testing.assert_array_equal(perfect[0, 1:-1], v[0, 1:-1])
    none = collateral_account_path(v, z, z, CollateralAgreement.uncollateralized(K))
    np.testing.assert_array_equal(none, 0.0)
    with pytest.raises(RatingDataError):
        collateral_account_path(v, z[:, :3], z, TRIGGERS)


def test_portfolio_paths():
    pm = PortfolioModel(postings_per_year=12)
    a = simulate_portfolio(pm, 50, seed=1)
    b = simulate_portfolio(pm, 20, seed=1)
    np.testing.assert_array_equal(a.values[:20], b.values)
    assert a.values.shape == (50, 13)
    np.testing.assert_array_equal(a.values[:, 0], 0.0)
    assert np.all(np.isinf(a.flow_maturity[:, 0]))
    flat = simulate_portfolio(PortfolioModel(v0=3.0, vol_scale=0.0, postings_per_year=12), 5, 2)
    np.testing.assert_array_equal(flat.values, 3.0)


def test_portfolio_conditional_variance():
    # given the volatilities, Var V_t = sum over live drivers of s_i^2 t
    pm = PortfolioModel(n_flows=0, postings_per_year=4)
    ps = simulate_portfolio(pm, 4000, seed=3)
    z = ps.values[:, -1] / ps.sigma[:, 0]
    assert np.var(z) == pytest.approx(1.0, rel=0.05)


def scenario(v, tau_b, tau_c, agr=TRIGGERS, lgd=(0.6, 0.6)):
    grid = np.linspace(0, 1, v.shape[-1])
    v = np.atleast_2d(v)
    r = np.full(v.shape, 2)
    return evaluate_scenarios(grid, v, np.atleast_1d(tau_b), np.atleast_1d(tau_c), r, r, agr,
                              *lgd)


def test_immediate_counterparty_default_loses_exposure():
    v = np.array([0.0, 5e6, 5e6, 5e6, 5e6])
    for agr in (CollateralAgreement.uncollateralized(K), TRIGGERS):
        dva, cva, who = scenario(v, math.inf, 0.1, agr)
        # first posting on or after 0.1 is 0.25; collateral before it is the initial zero
        assert who[0] == 2
        assert cva[0] == pytest.approx(0.6 * 5e6)
        assert dva[0] == 0.0


def test_gap_risk_uses_previous_posting():
    v = np.array([0.0, 5e6, 9e6, 9e6, 0.0])
    _, cva, _ = scenario(v, math.inf, 0.5, CollateralAgreement.perfect(K))
    assert cva[0] == pytest.approx(0.6 * (9e6 - 5e6))
    _, cva, _ = scenario(v, math.inf, 0.4, CollateralAgreement.perfect(K))
    assert cva[0] == pytest.approx(0.6 * (9e6 - 5e6))


def test_bank_default_and_ties():
    v = np.array([0.0, -4e6, -4e6, -4e6, 0.0])
    dva, cva, who = scenario(v, 0.3, math.inf, CollateralAgreement.uncollateralized(K))
    assert who[0] == 1
    assert dva[0] == pytest.approx(-0.6 * -4e6)
    assert cva[0] == 0.0
    dva, cva, who = scenario(v, 0.3, 0.3)
    assert who[0] == 2 and dva[0] == 0.0
    dva, cva, who = scenario(v, 1.0, 1.0)
    assert who[0] == 0 and dva[0] == cva[0] == 0.0


def test_zero_loss_given_default():
    v = np.array([0.0, 5e6, -5e6, 5e6, 0.0])
    dva, cva, _ = scenario(np.vstack([v, v]), [0.3, math.inf], [math.inf, 0.6],
                           lgd=(0.0, 0.0))
    np.testing.assert_array_equal(dva, 0.0)
    np.testing.assert_array_equal(cva, 0.0)


def test_regime_result_statistics():
    r = RegimeResult.from_contributions(PERFECT, [1.0], [2.0], 0, 0)
    assert math.isnan(r.se_cdva) and math.isnan(r.se_ccva)
    assert r.cbva == r.cdva - r.ccva
    r = RegimeResult.from_contributions(PERFECT, [1.0, 3.0], [0.0, 0.0], 1, 0)
    assert r.cdva == 2.0
    assert r.se_cdva == pytest.approx(1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        XvaConfig(lgd_b=1.5)
    with pytest.raises(ValueError):
        XvaConfig(n_paths=0)


def test_estimate_small_run(fitch_model):
    b, c = read_thresholds_csv(FITCH / "thresholds.csv", FITCH_SCALE)
    agrs = [CollateralAgreement.for_regime(r, b, c) for r in REGIMES]
    pm = PortfolioModel(postings_per_year=52)
    cfg = XvaConfig(n_paths=300, seed=5)
    rep = estimate_xva(fitch_model, pm, agrs, cfg)
    again = estimate_xva(fitch_model, pm, agrs, cfg)
    assert rep == again
    assert rep.identity_holds()
    for r in rep.regimes.values():
        assert r.ccva >= 0 and r.cdva >= 0
    assert rep[PERFECT].ccva <= rep[UNCOLLATERALIZED].ccva
    assert rep[RATING_TRIGGERS].n_cpty_defaults == rep[PERFECT].n_cpty_defaults
    one = estimate_xva(fitch_model, pm, agrs, XvaConfig(n_paths=1, seed=5))
    assert math.isnan(one[PERFECT].se_ccva)
    with pytest.raises(RatingDataError):
        estimate_xva(fitch_model, PortfolioModel(maturity=2.0), agrs, cfg)


def test_pre_default_distribution():
    paths = [RatingPath(0, [0.1, 0.2], [1, 2], 1.0, 3),
             RatingPath(0, [0.1], [2], 1.0, 3),
             RatingPath(0, [0.5], [1], 1.0, 3),
             RatingPath(1, [0.3], [2], 1.0, 3)]
    h = pre_default_distribution(paths)
    np.testing.assert_allclose(h, [[1 / 3, 1 / 3, 0], [0, 1, 0], [0, 0, 0]])
    np.testing.assert_allclose(pre_default_shares(h), [0.2, 0.8, 0.0])
    assert pre_default_distribution({0: paths[2:3]}).sum() == 0.0


def test_trajectories_csv(tmp_path):
    grid = np.linspace(0, 1, 3)
    v = np.array([[0.0, 1e7, 0.0]])
    r = np.zeros((1, 3), dtype=int)
    c = collateral_account_path(v, r + 2, r + 2, TRIGGERS)
    out = write_trajectories_csv(tmp_path / "t.csv", grid, v, c, r + 2, r + 2, TRIGGERS,
                                 FITCH_SCALE)
    rows = out.read_text().splitlines()
    assert rows[0].startswith("path,time,value,collateral")
    assert rows[2].split(",")[3] == "3000000.0"
