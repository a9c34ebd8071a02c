import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvaecast import cvae, features as F, forecaster as fc, nn
from cvaecast.errors import CalendarError, ShapeError

D = dt.date


def linear_model(n_adv=2, a=0.8, z_scale=1.0, bias=0.0):
    """Decoder y = a * x1 + z_scale * z + bias, ignoring the advanced block."""
    m = cvae.build_model(n_adv + 1, 1)
    W = np.zeros((1, n_adv + 2))
    W[0, n_adv] = a
    W[0, n_adv + 1] = z_scale
    m.decoder = nn.Mlp([nn.AffineLayer(W, np.array([bias]), "identity")])
    return m


def random_model(p=3, d=1, seed=0):
    m = cvae.build_model(p, d, seed=seed)
    rng = np.random.default_rng(seed)
    for prm in m.decoder.params():
        prm += rng.normal(scale=0.3, size=prm.shape)
    return m


# -- generate_step -----------------------------------------------------------


def test_degenerate_step_equals_decoder():
    m = random_model()
    x0, x1 = np.array([0.2, -0.1]), np.array([0.4])
    out = fc.generate_step(m, x0, x1, 1e-300, 7, np.random.default_rng(0), z=np.zeros((7, 1)))
    expected = cvae.decode(m, np.r_[x0, x1], np.zeros(1))
    np.testing.assert_allclose(out, np.broadcast_to(expected, (7, 1)), rtol=0, atol=1e-15)


def test_step_mean_matches_independent_expectation():
    m = random_model(seed=3)
    x0, x1 = np.array([0.5, 0.5]), np.array([-0.3])
    S = 100_000
    out = fc.generate_step(m, x0, x1, 0.1, S, np.random.default_rng(1))[:, 0]
    z = np.random.default_rng(99).standard_normal((1_000_000, 1))
    ref = cvae.decode(m, np.broadcast_to(np.r_[x0, x1], (len(z), 3)), z)[:, 0].mean()
    assert abs(out.mean() - ref) < 3 * out.std(ddof=1) / np.sqrt(S)


def test_step_is_seed_deterministic_and_checks_sigma():
    m = random_model()
    a = fc.generate_step(m, [0, 0], [1.0], 0.5, 5, np.random.default_rng(4))
    b = fc.generate_step(m, [0, 0], [1.0], 0.5, 5, np.random.default_rng(4))
    assert a.tobytes() == b.tobytes()
    with pytest.raises(ValueError):
        fc.generate_step(m, [0, 0], [1.0], 0.0, 5, np.random.default_rng(4))
    with pytest.raises(ShapeError):
        fc.generate_step(m, [0, 0, 0], [1.0], 0.5, 5, np.random.default_rng(4))


# -- iterated forecasts ------------------------------------------------------


def test_k1_equals_one_step():
    m = random_model()
    ens = fc.forecast_general(m, [[0.1, 0.2]], [0.3], 0.2, 6, rng=11)
    step = fc.generate_step(m, [0.1, 0.2], [0.3], 0.2, 6, np.random.default_rng(11))
    np.testing.assert_array_equal(ens.samples[:, 0], step)
    assert ens.seed == 11


def test_s1_modes_coincide():
    m = random_model()
    x0 = np.random.default_rng(0).normal(size=(6, 2))
    a = fc.forecast_general(m, x0, [0.3], 0.5, 1, update_mode="per_path", rng=2)
    b = fc.forecast_general(m, x0, [0.3], 0.5, 1, update_mode="ensemble_average", rng=2)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_per_path_mode_feeds_own_lag():
    m = linear_model(a=1.0, z_scale=0.0)
    ens = fc.forecast_general(m, np.zeros((3, 2)), [0.0], 1.0, 4, update_mode="per_path", rng=5)
    noise = np.diff(np.concatenate([np.zeros((4, 1)), ens.samples[:, :, 0]], axis=1), axis=1)
    # random walk: increments are exactly the observation noise, path by path
    rng = np.random.default_rng(5)
    expected = []
    for _ in range(3):
        rng.standard_normal((4, 1))  # z
        expected.append(rng.standard_normal((4, 1))[:, 0])
    np.testing.assert_allclose(noise, np.array(expected).T, atol=1e-12)


def test_ensemble_average_follows_geometric_recursion():
    a, y0, K = 0.8, 2.0, 8
    m = linear_model(a=a)
    ens = fc.forecast_ar1(m, np.zeros((K, 2)), [y0], 1e-9, 20_000, rng=0)
    mean = ens.samples.mean(axis=0)[:, 0]
    expected = y0 * a ** np.arange(1, K + 1)
    se = 1.0 / np.sqrt(20_000)
    assert np.all(np.abs(mean - expected) < 6 * se / (1 - a))


def test_ar1_is_general_with_ensemble_average():
    m = random_model()
    x0 = np.random.default_rng(0).normal(size=(5, 2))
    a = fc.forecast_ar1(m, x0, 0.4, 0.3, 9, rng=3)
    b = fc.forecast_general(m, x0, [0.4], 0.3, 9, update_mode="ensemble_average", rng=3)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_decoder_ignoring_lag_is_stationary_in_k():
    m = linear_model(a=0.0, bias=1.5)
    x0 = np.zeros((4, 2))
    a = fc.forecast_ar1(m, x0, 10.0, 0.5, 50, rng=1)
    b = fc.forecast_ar1(m, x0, -3.0, 0.5, 50, rng=1)
    np.testing.assert_array_equal(a.samples, b.samples)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(1, 6))
def test_ensemble_shape_and_determinism(seed, S, K):
    m = random_model(seed=seed % 1000)
    x0 = np.random.default_rng(seed).normal(size=(K, 2))
    a = fc.forecast_ar1(m, x0, 0.1, 0.1, S, rng=seed)
    b = fc.forecast_ar1(m, x0, 0.1, 0.1, S, rng=seed)
    assert a.samples.shape == (S, K, 1)
    assert np.all(np.isfinite(a.samples))
    assert a.samples.tobytes() == b.samples.tobytes()


def test_path_ensemble_validation():
    with pytest.raises(ShapeError):
        fc.PathEnsemble(None, [], np.zeros((0, 2, 1)), 0.1)
    with pytest.raises(CalendarError):
        fc.PathEnsemble(D(2024, 1, 5), [D(2024, 1, 5)], np.zeros((1, 1, 1)), 0.1)
    with pytest.raises(ValueError):
        fc.PathEnsemble(None, [], np.full((1, 1, 1), np.nan), 0.1)


# -- summaries ---------------------------------------------------------------


def test_summary_single_path():
    s = np.random.default_rng(0).normal(size=(1, 4, 2))
    summ = fc.summarize_paths(fc.PathEnsemble(None, [], s, 0.1))
    for arr in (summ.mean_path, summ.q025, summ.q975):
        np.testing.assert_array_equal(arr, s[0])


def test_summary_mean_and_gaussian_quantiles():
    s = np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1)
    assert fc.summarize_paths(fc.PathEnsemble(None, [], s, 0.1)).mean_path[0, 0] == 2.0
    g = np.random.default_rng(3).standard_normal((10_000, 1, 1))
    summ = fc.summarize_paths(fc.PathEnsemble(None, [], g, 1.0))
    assert abs(summ.q025[0, 0] + 1.96) < 0.05 and abs(summ.q975[0, 0] - 1.96) < 0.05


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_quantiles_ordered(seed):
    rng = np.random.default_rng(seed)
    s = rng.standard_exponential((int(rng.integers(1, 30)), 3, 2))
    summ = fc.summarize_paths(fc.PathEnsemble(None, [], s, 0.1))
    assert np.all(summ.q025 <= summ.q975)


# -- task drivers ------------------------------------------------------------


def toy_setup(n_days=60, seed=0):
    rng = np.random.default_rng(seed)
    dates = F.business_days_after(D(2024, 2, 29), n_days)
    panel = F.PanelSeries(dates, ["A", "B"], rng.normal(size=(2, n_days)), np.zeros((2, n_days), bool))
    meta = F.MetaTable({"A": F.StockMeta("A", 0, 0), "B": F.StockMeta("B", 1, 1)}, ["s0", "s1"], ["l0", "l1"])
    cal = F.RebalanceCalendar.of([D(2024, 3, 15), D(2024, 4, 19), D(2024, 5, 17)])
    models = {t: cvae.univariate_preset(seed=i) for i, t in enumerate(["A", "B"])}
    return panel, meta, cal, models


def test_long_term_task_shapes_and_calendar():
    panel, meta, cal, models = toy_setup()
    origin = panel.dates[29]
    test = panel.dates[30:]
    out = fc.long_term_task(models, panel, meta, cal, origin, test, 0.1, 4, seed=3)
    assert set(out) == {"A", "B"}
    for ens in out.values():
        assert ens.samples.shape == (4, len(test), 1)
        assert ens.horizon_dates == test
        assert ens.seed == 3
    short = fc.long_term_task(models, panel, meta, cal, origin, test[:3], 0.1, 5)
    assert short["A"].samples.shape == (5, 3, 1)


def test_long_term_rebalance_dates_get_rb_codes(monkeypatch):
    panel, meta, cal, models = toy_setup()
    seen = []
    real = fc.forecast_general

    def spy(decoder, x0_seq, *args, **kwargs):
        seen.append(np.array(x0_seq))
        return real(decoder, x0_seq, *args, **kwargs)

    monkeypatch.setattr(fc, "forecast_general", spy)
    origin, test = panel.dates[29], panel.dates[30:]
    fc.long_term_task(models, panel, meta, cal, origin, test, 0.1, 2)
    rb = F.feature_layout("univariate")["rb"]
    k = test.index(D(2024, 4, 19))
    np.testing.assert_array_equal(seen[0][k, rb], [0, 1, 0])


def test_shared_stream_pairs_samples():
    panel, meta, cal, _ = toy_setup()
    lin = linear_model(n_adv=25, a=0.5)
    models = {"A": lin, "B": lin}
    panel.values[1] = panel.values[0]
    origin, test = panel.dates[29], panel.dates[30:40]
    shared = fc.long_term_task(models, panel, meta, cal, origin, test, 0.1, 3, seed=1, shared_stream=True)
    indep = fc.long_term_task(models, panel, meta, cal, origin, test, 0.1, 3, seed=1)
    # the decoder ignores sector/location, so only the random stream can differ
    np.testing.assert_array_equal(shared["A"].samples, shared["B"].samples)
    assert not np.array_equal(indep["A"].samples, indep["B"].samples)


def test_week_partition_covers_test_dates_once():
    days = F.business_days_after(D(2024, 3, 1), 30)
    days.remove(D(2024, 3, 29))  # holiday
    test = days[5:]
    weeks = fc.week_partition(days, test)
    flat = [d for _, w in weeks for d in w]
    assert flat == test
    lengths = {w[0]: len(w) for _, w in weeks}
    assert max(lengths.values()) == 5
    holiday_week = [w for _, w in weeks if D(2024, 3, 28) in w][0]
    assert len(holiday_week) == 4
    for origin, w in weeks:
        assert origin < w[0] and origin in days


def test_rolling_task_seeds_from_observations():
    panel, meta, cal, models = toy_setup()
    test = panel.dates[30:45]
    out = fc.rolling_task(models, panel, meta, cal, test, 0.1, 3, seed=2)
    flat = [d for group in out for d in group["A"].horizon_dates]
    assert flat == test
    for group in out:
        assert group["A"].K <= 5


def test_joint_model_task():
    panel, meta, cal, _ = toy_setup()
    joint = cvae.multivariate_preset(n_series=2, metadata={"kind": "multivariate", "tickers": ["A", "B"]})
    out = fc.long_term_task(joint, panel, None, cal, panel.dates[29], panel.dates[30:35], 0.1, 4)
    assert out["__joint__"].samples.shape == (4, 5, 2)
    assert out["__joint__"].tickers == ["A", "B"]


# -- counterfactuals ---------------------------------------------------------


def test_empty_spec_is_bit_identical():
    m = random_model(p=26)
    x0 = np.zeros((5, 25))
    base, scen = fc.counterfactual(m, x0, [0.2], fc.ScenarioSpec(), F.feature_layout("univariate"), 1.0, 8, seed=4)
    assert base.samples.tobytes() == scen.samples.tobytes()


def test_zero_rb_scenario_inputs():
    cal = F.RebalanceCalendar.of([D(2024, 3, 15)])
    horizon = F.business_days_after(D(2024, 3, 11), 6)
    x0 = F.advance_features(cal, horizon, "multivariate", origin=D(2024, 3, 11))
    lay = F.feature_layout("multivariate")
    assert x0[:, lay["rb"]].any()
    out = fc.ScenarioSpec.zero_rb().apply(x0, lay, horizon)
    assert not out[:, lay["rb"]].any()
    np.testing.assert_array_equal(out[:, lay["dow"]], x0[:, lay["dow"]])
    partial = fc.ScenarioSpec.zero_rb([D(2024, 3, 15)]).apply(x0, lay, horizon)
    assert partial[:, lay["rb"]].sum() == x0[:, lay["rb"]].sum() - 1
    with pytest.raises(CalendarError):
        fc.ScenarioSpec.zero_rb([D(2025, 1, 1)]).apply(x0, lay, horizon)
    with pytest.raises(KeyError):
        fc.ScenarioSpec([fc.SliceOverride("sector", np.zeros(10))]).apply(x0, lay, horizon)


def test_x1_override_shifts_impulse():
    m = linear_model(n_adv=25, a=0.5)
    lay = F.feature_layout("univariate")
    x0 = np.zeros((6, 25))
    y_t = np.array([1.0])
    for value in (0.0, -1.0):
        base, scen = fc.counterfactual(m, x0, y_t, fc.ScenarioSpec(x1_override=np.array([value])), lay, 0.5, 4, seed=1)
        gap = base.samples[:, 0, 0] - scen.samples[:, 0, 0]
        np.testing.assert_allclose(gap, 0.5 * (1.0 - value), atol=1e-12)


def test_unshared_seed_changes_noise():
    m = random_model(p=26)
    x0 = np.zeros((3, 25))
    base, scen = fc.counterfactual(m, x0, [0.0], fc.ScenarioSpec(), F.feature_layout("univariate"), 1.0, 8, seed=4, shared_seed=False)
    assert not np.array_equal(base.samples, scen.samples)
