import datetime as dt
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvaecast import features as F
from cvaecast.errors import (
    CalendarError,
    CalendarWarning,
    DataError,
    DegenerateSeriesError,
    LoadError,
    MetadataError,
)

D = dt.date


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def panel_of(values, start=D(2024, 1, 1), tickers=None, mask=None):
    values = np.asarray(values, dtype=float)
    dates = F.business_days_after(start - dt.timedelta(days=1), values.shape[1])
    tickers = tickers or [f"T{i}" for i in range(len(values))]
    mask = np.zeros(values.shape, bool) if mask is None else np.asarray(mask)
    return F.PanelSeries(dates, tickers, values, mask)


# -- loading -----------------------------------------------------------------


def test_load_panel_basic(tmp_path):
    p = write(tmp_path, "p.csv", "date,A,B\n2024-01-02,1,2\n2024-01-03,3,4\n2024-01-04,5,6\n")
    panel = F.load_panel(p)
    assert panel.tickers == ["A", "B"]
    np.testing.assert_array_equal(panel.values, [[1, 3, 5], [2, 4, 6]])
    assert not panel.missing_mask.any()


def test_load_panel_blank_is_missing_and_sorted(tmp_path):
    p = write(tmp_path, "p.csv", "date,A,B\n2024-01-03,3,\n2024-01-02,1,2\n")
    panel = F.load_panel(p)
    assert panel.dates == [D(2024, 1, 2), D(2024, 1, 3)]
    np.testing.assert_array_equal(panel.missing_mask, [[False, False], [False, True]])


@pytest.mark.parametrize(
    "body",
    [
        "date,A\n2024-01-02,1\n2024-01-02,2\n",
        "date,A\n2024-13-02,1\n",
        "date,A,B\n2024-01-02,1\n",
        "date,A\n2024-01-02,abc\n",
    ],
)
def test_load_panel_errors(tmp_path, body):
    with pytest.raises(LoadError):
        F.load_panel(write(tmp_path, "p.csv", body))


def test_write_panel_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mask = rng.random((2, 6)) < 0.3
    panel = panel_of(rng.normal(size=(2, 6)), mask=mask)
    panel.values[mask] = 0.0
    F.write_panel(panel, tmp_path / "p.csv", ["note=x"])
    back = F.load_panel(tmp_path / "p.csv")
    assert back.dates == panel.dates
    np.testing.assert_array_equal(back.missing_mask, mask)
    assert back.values.tobytes() == panel.values.tobytes()


def test_load_meta_first_seen_order(tmp_path):
    p = write(tmp_path, "m.csv", "ticker,sector,location\nA,Tech,DE\nB,Bank,FR\nC,Tech,FR\n")
    meta = F.load_meta(p)
    assert (meta["A"].sector, meta["B"].sector, meta["C"].sector) == (0, 1, 0)
    assert (meta["A"].location, meta["C"].location) == (0, 1)
    with pytest.raises(MetadataError, match="ZZZ"):
        meta["ZZZ"]
    with pytest.raises(MetadataError, match="Q"):
        meta.require(["A", "Q"])


def test_load_meta_too_many_sectors(tmp_path):
    rows = "".join(f"T{i},S{i},L0\n" for i in range(11))
    with pytest.raises(MetadataError):
        F.load_meta(write(tmp_path, "m.csv", rows))


def test_load_calendar(tmp_path):
    cal = F.load_calendar(write(tmp_path, "c.txt", "# dates\n2024-03-15\n\n2024-06-21\n"))
    assert cal.rebalance_dates == {D(2024, 3, 15), D(2024, 6, 21)}


# -- missing data ------------------------------------------------------------


def test_drop_missing_identity_without_gaps():
    panel = panel_of([[1, 2, 3], [4, 5, 6]])
    out = F.drop_missing(panel, "panel_wide")
    assert out.dates == panel.dates
    np.testing.assert_array_equal(out.values, panel.values)


def test_drop_missing_scopes():
    mask = [[False, True, False], [False, False, False]]
    panel = panel_of([[1, 0, 3], [4, 5, 6]], mask=mask)
    wide = F.drop_missing(panel, "panel_wide")
    assert wide.dates == [panel.dates[0], panel.dates[2]]
    assert not wide.missing_mask.any()
    per = F.drop_missing(panel, "per_stock")
    assert len(per[0].dates) == 2 and len(per[1].dates) == 3
    np.testing.assert_array_equal(per[0].values, [[1, 3]])


def test_drop_missing_empty_result():
    panel = panel_of([[1, 2], [3, 4]], mask=[[True, False], [False, True]])
    with pytest.raises(DataError):
        F.drop_missing(panel, "panel_wide")


# -- normalization -----------------------------------------------------------


def test_normalize_population_std():
    panel = panel_of([[1.0, 2.0, 3.0, 2.0]])
    out = F.normalize(panel, (panel.dates[0], panel.dates[2]))
    np.testing.assert_allclose(out.values[0, :3], [-np.sqrt(1.5), 0, np.sqrt(1.5)])
    assert out.norm_stats["T0"] == pytest.approx((2.0, np.sqrt(2 / 3)))
    assert out.values[0, 3] == 0.0  # test value equal to the training mean


def test_normalize_constant_series_fails():
    panel = panel_of([[5.0, 5.0, 5.0]])
    with pytest.raises(DegenerateSeriesError):
        F.normalize(panel, (panel.dates[0], panel.dates[-1]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(5, 40))
def test_normalized_training_window_is_standard(seed, n):
    rng = np.random.default_rng(seed)
    panel = panel_of(rng.normal(5, 3, size=(3, n + 7)))
    rng_ = (panel.dates[0], panel.dates[n - 1])
    out = F.normalize(panel, rng_)
    train = out.values[:, :n]
    np.testing.assert_allclose(train.mean(axis=1), 0, atol=1e-10)
    np.testing.assert_allclose(train.std(axis=1), 1, atol=1e-10)
    for i, t in enumerate(panel.tickers):
        np.testing.assert_allclose(F.denormalize(out.values[i], out.norm_stats[t]), panel.values[i], atol=1e-9)


def test_normalize_ignores_test_window():
    base = panel_of([[1.0, 2.0, 3.0, 100.0]])
    alt = panel_of([[1.0, 2.0, 3.0, -50.0]])
    r = (base.dates[0], base.dates[2])
    assert F.normalize(base, r).norm_stats == F.normalize(alt, r).norm_stats


# -- calendar encoders -------------------------------------------------------

WEEK = F.business_days_after(D(2024, 3, 10), 10)  # Mon 11 Mar .. Fri 22 Mar


def test_rb_encoding_window():
    rebal = [D(2024, 3, 15)]  # Friday
    i = WEEK.index(D(2024, 3, 15))
    np.testing.assert_array_equal(F.rb_encoding(i, rebal, WEEK), [0, 1, 0])
    np.testing.assert_array_equal(F.rb_encoding(i - 1, rebal, WEEK), [1, 0, 0])
    np.testing.assert_array_equal(F.rb_encoding(i + 1, rebal, WEEK), [0, 0, 1])  # Monday
    np.testing.assert_array_equal(F.rb_encoding(i + 2, rebal, WEEK), [0, 0, 0])


def test_rb_on_weekend_attaches_to_preceding_trading_day():
    rebal = [D(2024, 3, 16)]  # Saturday
    m = F.rb_markers(F.RebalanceCalendar.of(rebal), WEEK)
    np.testing.assert_array_equal(m[WEEK.index(D(2024, 3, 15))], [0, 1, 0])


def test_rb_out_of_range_warns():
    cal = F.RebalanceCalendar.of([D(2024, 3, 8)])
    with pytest.warns(CalendarWarning):
        m = F.rb_markers(cal, WEEK)
    assert not m.any()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        F.rb_markers(F.RebalanceCalendar.of([D(2023, 1, 1)]), WEEK)


def test_dow_encoding():
    np.testing.assert_array_equal(F.dow_encoding(D(2024, 3, 11)), [1, 0, 0, 0, 0])
    np.testing.assert_array_equal(F.dow_encoding(D(2024, 3, 15)), [0, 0, 0, 0, 1])
    with pytest.raises(CalendarError):
        F.dow_encoding(D(2024, 3, 16))


# -- feature frames ----------------------------------------------------------


def make_inputs(n_tickers=2, n_days=40):
    rng = np.random.default_rng(1)
    panel = panel_of(rng.normal(size=(n_tickers, n_days)), start=D(2024, 3, 4))
    meta = F.MetaTable(
        {t: F.StockMeta(t, i % 10, i % 7) for i, t in enumerate(panel.tickers)},
        [f"s{i}" for i in range(min(n_tickers, 10))],
        [f"l{i}" for i in range(min(n_tickers, 7))],
    )
    return panel, meta, F.RebalanceCalendar.of([D(2024, 3, 15), D(2024, 4, 19)])


def test_univariate_frame_dims():
    panel, meta, cal = make_inputs()
    frames = F.build_features(panel, meta, cal, "univariate")
    assert len(frames) == 2
    fr = frames[0]
    assert fr.x0.shape[1] == 25 and fr.x1.shape[1] == 1 and fr.p == 26
    assert fr.dates[0] == panel.dates[1]
    np.testing.assert_array_equal(fr.x1[:, 0], panel.values[0, :-1])
    np.testing.assert_array_equal(fr.y[:, 0], panel.values[0, 1:])


def test_multivariate_frame_dims():
    panel, meta, cal = make_inputs(n_tickers=50)
    (fr,) = F.build_features(panel, None, cal, "multivariate")
    assert fr.x0.shape[1] == 8 and fr.x1.shape[1] == 50 and fr.p == 58


def test_missing_metadata_names_ticker():
    panel, meta, cal = make_inputs()
    del meta.stocks["T1"]
    with pytest.raises(MetadataError, match="T1"):
        F.build_features(panel, meta, cal, "univariate")


def test_one_hot_integrity():
    panel, meta, cal = make_inputs()
    for fr in F.build_features(panel, meta, cal, "univariate"):
        for name in ("sector", "location", "dow"):
            np.testing.assert_array_equal(fr.x0[:, fr.layout[name]].sum(axis=1), 1)
        assert set(fr.x0[:, fr.layout["rb"]].sum(axis=1)) <= {0.0, 1.0}


def test_rb_markers_survive_missing_days():
    panel, meta, cal = make_inputs()
    j = panel.dates.index(D(2024, 3, 14))  # Thursday before the Friday rebalance
    panel.missing_mask[0, j] = True
    fr = F.build_features(panel, meta, cal, "univariate")[0]
    assert D(2024, 3, 14) not in fr.dates
    k = fr.dates.index(D(2024, 3, 15))
    np.testing.assert_array_equal(fr.x0[k, fr.layout["rb"]], [0, 1, 0])


def test_advance_features_examples():
    panel, meta, cal = make_inputs()
    horizon = F.business_days_after(D(2024, 3, 11), 8)
    x0 = F.advance_features(cal, horizon, "univariate", meta=meta["T0"], origin=D(2024, 3, 11))
    lay = F.feature_layout("univariate")
    np.testing.assert_array_equal(x0[horizon.index(D(2024, 3, 15)), lay["rb"]], [0, 1, 0])
    np.testing.assert_array_equal(x0[horizon.index(D(2024, 3, 14)), lay["rb"]], [1, 0, 0])
    assert np.all(x0[:, lay["sector"]] == x0[0, lay["sector"]])
    assert np.all(x0[:, lay["location"]] == x0[0, lay["location"]])
    quiet = F.business_days_after(D(2024, 3, 25), 5)
    assert not F.advance_features(cal, quiet, "multivariate")[:, 5:].any()


def test_advance_features_origin_rebalance_marks_first_day_after():
    cal = F.RebalanceCalendar.of([D(2024, 3, 15)])
    horizon = F.business_days_after(D(2024, 3, 15), 3)
    x0 = F.advance_features(cal, horizon, "multivariate", origin=D(2024, 3, 15))
    np.testing.assert_array_equal(x0[0, 5:], [0, 0, 1])


def test_advance_features_rejects_bad_horizon():
    cal = F.RebalanceCalendar.of([])
    with pytest.raises(CalendarError):
        F.advance_features(cal, [D(2024, 3, 11)], "multivariate", origin=D(2024, 3, 11))
    with pytest.raises(CalendarError):
        F.advance_features(cal, [D(2024, 3, 12), D(2024, 3, 11)], "multivariate")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_advance_features_ignore_future_observations(seed):
    panel, meta, cal = make_inputs()
    rng = np.random.default_rng(seed)
    origin = panel.dates[20]
    horizon = panel.dates[21:30]
    before = F.advance_features(cal, horizon, "univariate", meta=meta["T0"], origin=origin)
    panel.values[:, 21:] = rng.permutation(panel.values[:, 21:].ravel()).reshape(2, -1)
    after = F.advance_features(cal, horizon, "univariate", meta=meta["T0"], origin=origin)
    assert before.tobytes() == after.tobytes()
    # matches the rows built from the full panel
    fr = F.build_features(panel, meta, cal, "univariate")[0]
    np.testing.assert_array_equal(before, fr.x0[[fr.dates.index(d) for d in horizon]])


def test_advance_features_marks_day_before_rebalance_past_horizon():
    cal = F.RebalanceCalendar.of([D(2024, 3, 15)])
    horizon = F.business_days_after(D(2024, 3, 10), 4)  # Mon..Thu
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        x0 = F.advance_features(cal, horizon, "multivariate", origin=D(2024, 3, 8))
    np.testing.assert_array_equal(x0[-1, 5:], [1, 0, 0])
    assert not x0[:-1, 5:].any()
