import numpy as np
import pytest

from ratingxva.ratings import (
    ADJUSTED,
    FITCH_SCALE,
    DefaultCurve,
    Generator,
    PiecewiseSchedule,
    RatingDataError,
    RatingScale,
    TransitionMatrix,
    horizon_from_name,
    load_market_data,
    read_matrix_csv,
    read_pd_csv,
    validate_generator,
    write_matrix_csv,
    write_pd_csv,
)

from conftest import FITCH, fitch_paths


def test_scale_lookup():
    assert FITCH_SCALE.size == 7
    assert FITCH_SCALE.index("C") == 5
    assert FITCH_SCALE.index(2) == 2
    with pytest.raises(RatingDataError):
        FITCH_SCALE.index("AAA")
    with pytest.raises(RatingDataError):
        RatingScale(("A", "A", "D"))


def test_market_matrix_row_sum_error_names_row():
    p = np.eye(3)
    p[1] = [0.2, 0.9, 0.0]
    with pytest.raises(RatingDataError, match="row 1"):
        TransitionMatrix(1.0, p)


def test_matrix_validation():
    with pytest.raises(RatingDataError):
        TransitionMatrix(1.0, [[1.1, 0], [0, 1]])
    with pytest.raises(RatingDataError, match="absorbing"):
        TransitionMatrix(1.0, [[1.0, 0], [0.1, 0.9]])
    with pytest.raises(RatingDataError):
        TransitionMatrix(1.0, [[0.9, 0.0], [0.0, 1.0]], ADJUSTED)
    m = TransitionMatrix(1.0, [[0.9, 0.05], [0.0, 1.0]])
    np.testing.assert_allclose(m.withdrawal, [0.05, 0.0])
    with pytest.raises(ValueError):
        m.entries[0, 0] = 0.0


def test_generator_validation():
    g = np.array([[-1.0, 0.6, 0.4], [0.5, -0.5, 0.0], [0.0, 0.0, 0.0]])
    assert Generator(g).exit_rates.tolist() == [1.0, 0.5, 0.0]
    bad = g.copy()
    bad[0, 1] = -0.1
    report = validate_generator(bad)
    assert not report.valid
    assert report.min_off_diagonal == pytest.approx(-0.1)
    assert report.max_row_residual == pytest.approx(0.7)
    with pytest.raises(RatingDataError):
        Generator(bad)
    leaky = g.copy()
    leaky[2] = [0.1, 0.0, -0.1]
    with pytest.raises(RatingDataError, match="default row"):
        Generator(leaky)


def test_default_curve_checks():
    pd = np.array([[0.01, 0.1, 1.0], [0.02, 0.2, 1.0]])
    c = DefaultCurve([0.5, 1.0], pd)
    np.testing.assert_array_equal(c.at(1.0), pd[1])
    with pytest.raises(RatingDataError, match="decreases"):
        DefaultCurve([0.5, 1.0], pd[::-1])
    bad = pd.copy()
    bad[0, 2] = 0.9
    with pytest.raises(RatingDataError):
        DefaultCurve([0.5, 1.0], bad)


def test_schedule():
    s = PiecewiseSchedule.from_tenors([1 / 12, 0.25, 0.5, 1.0])
    assert s.n_intervals == 4
    assert s.interval_index(0.0) == 0
    assert s.interval_index(0.25) == 2
    assert s.interval_index(1.0) == 3
    with pytest.raises(RatingDataError):
        s.interval_index(1.5)
    with pytest.raises(RatingDataError):
        PiecewiseSchedule([0.1, 1.0])


@pytest.mark.parametrize("name,t", [("fitch_1m.csv", 1 / 12), ("x_12m.csv", 1.0),
                                    ("rates-2y.csv", 2.0), ("a_6m.csv", 0.5)])
def test_horizon_from_name(name, t):
    assert horizon_from_name(name) == pytest.approx(t)


def test_csv_round_trip(tmp_path):
    m = read_matrix_csv(FITCH / "fitch_3m.csv", FITCH_SCALE)
    assert m.horizon == 0.25
    out = write_matrix_csv(tmp_path / "m_3m.csv", m, FITCH_SCALE, decimals=3)
    again = read_matrix_csv(out, FITCH_SCALE)
    np.testing.assert_allclose(again.entries, m.entries, atol=1e-12)
    assert (FITCH / "fitch_3m.csv").read_text().splitlines()[1] == out.read_text().splitlines()[1]
    c = read_pd_csv(FITCH / "fitch_pd_q.csv", FITCH_SCALE)
    again = read_pd_csv(write_pd_csv(tmp_path / "pd.csv", c, FITCH_SCALE), FITCH_SCALE)
    np.testing.assert_allclose(again.pd, c.pd, atol=1e-12)
    np.testing.assert_array_equal(again.tenors, c.tenors)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(RatingDataError, match="nope_1m.csv"):
        read_matrix_csv(tmp_path / "nope_1m.csv", FITCH_SCALE)


def test_load_market_data(fitch_market):
    mats, curve, schedule = fitch_market
    assert [m.horizon for m in mats] == pytest.approx([1 / 12, 0.25, 0.5, 1.0])
    assert schedule.matches(curve.tenors)
    a, pd = fitch_paths()
    with pytest.raises(RatingDataError, match="do not match"):
        load_market_data(a[:3], pd, FITCH_SCALE)
