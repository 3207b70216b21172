import math

import numpy as np
import pytest

from streamrobust import RunRecord
from streamrobust.bench import (
    BreakdownConfig,
    ConvergenceConfig,
    Table,
    breakdown_config_from_mapping,
    breakdown_experiment,
    convergence_config_from_mapping,
    convergence_experiment,
    convergence_table,
    fit_rate_slope,
    mean_run_record,
    render_loglog_svg,
    table_svg,
    tune_huber_tau,
)

TINY = dict(n_samples="600", dim="4", passes="2", replications="2", seed="7")


def _synthetic_record(steps, errs):
    steps = np.asarray(steps)
    errs = np.asarray(errs, dtype=float)
    return RunRecord(
        steps=steps,
        err_h=errs,
        err_2=errs.copy(),
        err_last_h=errs.copy(),
        config_digest="feed",
        seed=0,
        theta_bar=np.zeros(2),
        theta_last=np.zeros(2),
        min_abs_residual=1.0,
    )


# ---------------------------------------------------------------------------
# config parsing


def test_convergence_config_defaults():
    cfg, errors = convergence_config_from_mapping({})
    assert errors == []
    assert cfg == ConvergenceConfig()
    assert cfg.losses == ("l1", "l2", "huber", "oracle")
    assert cfg.covariances == ("identity", "spectrum")


def test_convergence_config_parses_values():
    cfg, errors = convergence_config_from_mapping(
        dict(TINY, losses="l1, oracle", covariances="identity", eta="0.4", gamma0="0.05")
    )
    assert errors == []
    assert cfg.n_samples == 600
    assert cfg.losses == ("l1", "oracle")
    assert cfg.covariances == ("identity",)
    assert cfg.eta == 0.4
    assert cfg.gamma0 == 0.05


def test_convergence_config_lists_every_error():
    cfg, errors = convergence_config_from_mapping(
        {
            "n_samples": "three",
            "dim": "0",
            "sigma": "-1",
            "eta": "1.0",
            "losses": "l1, l7",
            "preset": "gauss",
            "bogus": "1",
        }
    )
    assert cfg is None
    assert len(errors) == 7
    joined = "\n".join(errors)
    for key in ("n_samples", "dim", "sigma", "eta", "losses", "preset", "bogus"):
        assert key in joined


def test_breakdown_config_defaults_and_grid():
    cfg, errors = breakdown_config_from_mapping({})
    assert errors == []
    assert cfg == BreakdownConfig()
    cfg, errors = breakdown_config_from_mapping({"eta_grid": "0.0, 0.25, 0.5"})
    assert errors == []
    assert cfg.eta_grid == (0.0, 0.25, 0.5)


def test_breakdown_config_grid_errors():
    for bad, frag in [
        ("", "empty"),
        ("0.5, 0.2", "ascending"),
        ("0.2, 0.2", "duplicate"),
        ("0.2, nope", "number"),
        ("1.5", "[0, 1)"),
    ]:
        cfg, errors = breakdown_config_from_mapping({"eta_grid": bad})
        assert cfg is None, bad
        assert any(frag in e for e in errors), (bad, errors)


# ---------------------------------------------------------------------------
# tables and aggregation


def test_table_lines_and_save(tmp_path):
    t = Table("demo", ("n", "err"), ((1, 0.5), (10, 0.25)), ("note a", "note b"))
    lines = t.to_lines()
    assert lines == ["# note a", "# note b", "n,err", "1,0.5", "10,0.25"]
    path = tmp_path / "demo.csv"
    t.save(path)
    assert path.read_text() == "\n".join(lines) + "\n"


def test_table_rejects_ragged_rows():
    t = Table("demo", ("n", "err"), ((1, 0.5, 2.0),))
    with pytest.raises(ValueError, match="width"):
        t.to_lines()


def test_mean_run_record_averages():
    a = _synthetic_record([1, 10], [4.0, 2.0])
    b = _synthetic_record([1, 10], [2.0, 1.0])
    mean = mean_run_record([a, b])
    assert np.array_equal(mean.err_h, [3.0, 1.5])
    with pytest.raises(ValueError, match="disagree"):
        mean_run_record([a, _synthetic_record([1, 20], [1.0, 1.0])])
    with pytest.raises(ValueError, match="no records"):
        mean_run_record([])


def test_aggregation_is_a_pure_reduction():
    cfg, _ = convergence_config_from_mapping(
        dict(TINY, losses="l1", covariances="identity")
    )
    result = convergence_experiment(cfg)
    (table,) = result.tables
    again = convergence_table(table.name, result.records["l1@identity"], table.comments[:-2])
    assert again.to_lines() == table.to_lines()


# ---------------------------------------------------------------------------
# experiments


def test_convergence_experiment_counts_and_determinism():
    cfg, _ = convergence_config_from_mapping(dict(TINY, losses="l1, l2, huber, oracle"))
    result = convergence_experiment(cfg)
    assert len(result.tables) == 8  # 4 losses x 2 covariances
    assert len(result.cell_seeds) == 4  # 2 covariances x 2 replications
    again = convergence_experiment(cfg)
    for t1, t2 in zip(result.tables, again.tables):
        assert t1.to_lines() == t2.to_lines()


def test_convergence_parallel_matches_serial():
    cfg, _ = convergence_config_from_mapping(dict(TINY, losses="l1, oracle"))
    serial = convergence_experiment(cfg, jobs=1)
    parallel = convergence_experiment(cfg, jobs=4)
    for t1, t2 in zip(serial.tables, parallel.tables):
        assert t1.to_lines() == t2.to_lines()


def test_convergence_oracle_improves_from_start():
    cfg, _ = convergence_config_from_mapping(
        dict(
            n_samples="10000",
            dim="10",
            eta="0.0",
            passes="1",
            replications="2",
            losses="oracle",
            covariances="identity",
            seed="3",
        )
    )
    result = convergence_experiment(cfg)
    (table,) = result.tables
    first = table.rows[0][1]
    last = table.rows[-1][1]
    assert last < first / 10.0


def test_outlier_magnitude_invariance():
    # identical seeds, point corruption at 1e3 vs 1e6: the absolute loss
    # only reads residual signs, so the final errors agree to within noise
    base = dict(
        n_samples="4000", dim="5", eta="0.25", passes="1", replications="2",
        losses="l1", covariances="identity", preset="point", seed="11",
    )
    small, _ = convergence_config_from_mapping(dict(base, outlier_value="1000"))
    large, _ = convergence_config_from_mapping(dict(base, outlier_value="1000000"))
    err_small = convergence_experiment(small).tables[0].rows[-1][1]
    err_large = convergence_experiment(large).tables[0].rows[-1][1]
    assert 0.5 <= err_large / err_small <= 2.0


def test_small_outliers_at_high_eta_are_harmless():
    # corruption far below the noise floor barely moves the effective
    # outlier proportion, so eta = 0.9 behaves like eta = 0
    base = dict(
        n_samples="6000", dim="5", passes="1", replications="2",
        losses="l1", covariances="identity", preset="point", seed="13",
    )
    dirty, _ = convergence_config_from_mapping(
        dict(base, eta="0.9", outlier_value="0.01")
    )
    clean, _ = convergence_config_from_mapping(dict(base, eta="0.0"))
    err_dirty = convergence_experiment(dirty).tables[0].rows[-1][1]
    err_clean = convergence_experiment(clean).tables[0].rows[-1][1]
    assert err_dirty <= 3.0 * err_clean


def test_breakdown_experiment_shape_and_estimators():
    cfg, _ = breakdown_config_from_mapping(
        dict(
            n_samples="1200", dim="3", replications="2",
            eta_grid="0.2, 0.5", estimators="l1, l2, oracle", seed="5",
        )
    )
    result = breakdown_experiment(cfg)
    (table,) = result.tables
    assert table.columns == ("eta", "l1", "l2", "oracle")
    assert len(table.rows) == 2
    assert [row[0] for row in table.rows] == [0.2, 0.5]
    assert len(result.cell_seeds) == 4


def test_breakdown_no_corruption_everyone_matches_oracle():
    cfg, _ = breakdown_config_from_mapping(
        dict(
            n_samples="20000", dim="3", replications="2",
            eta_grid="0.0", estimators="l1, l2, huber, huber_x30, oracle", seed="9",
        )
    )
    (table,) = breakdown_experiment(cfg).tables
    row = table.rows[0]
    oracle_err = row[table.columns.index("oracle")]
    for col in range(1, len(row)):
        assert row[col] <= 10.0 * oracle_err, table.columns[col]


def test_breakdown_l2_wrecked_by_large_outliers():
    cfg, _ = breakdown_config_from_mapping(
        dict(
            n_samples="4000", dim="5", replications="2",
            eta_grid="0.5", estimators="l1, l2",
            preset="point", outlier_value="1000", seed="2",
        )
    )
    (table,) = breakdown_experiment(cfg).tables
    row = table.rows[0]
    assert row[2] >= 10.0 * row[1]  # l2 error at least 10x the l1 error


# ---------------------------------------------------------------------------
# slope fits


def test_fit_rate_slope_exact_power_laws():
    steps = np.unique(np.geomspace(10, 10000, 30).astype(int))
    slope, intercept, r2 = fit_rate_slope(_synthetic_record(steps, 3.0 / steps))
    assert slope == pytest.approx(-1.0, abs=1e-12)
    assert intercept == pytest.approx(math.log(3.0), abs=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)

    slope, _, _ = fit_rate_slope(_synthetic_record(steps, 1.0 / np.sqrt(steps)))
    assert slope == pytest.approx(-0.5, abs=1e-12)


def test_fit_rate_slope_window_and_errors():
    steps = np.array([1, 2, 4, 8, 16, 32, 64, 128, 256, 512])
    # early junk outside the trailing window must not matter
    errs = 5.0 / steps.astype(float)
    errs[:3] = 100.0
    slope, _, _ = fit_rate_slope(_synthetic_record(steps, errs), window=0.5)
    assert slope == pytest.approx(-1.0, abs=1e-12)

    with pytest.raises(ValueError, match="at least 5"):
        fit_rate_slope(_synthetic_record([1, 10, 100, 1000], np.ones(4)))
    with pytest.raises(ValueError, match="window"):
        fit_rate_slope(_synthetic_record(steps, errs), window=0.0)
    with pytest.raises(ValueError, match="positive"):
        fit_rate_slope(_synthetic_record(steps, np.zeros(10)))


def test_fit_rate_slope_constant_error():
    steps = np.array([10, 20, 40, 80, 160])
    slope, intercept, r2 = fit_rate_slope(_synthetic_record(steps, np.full(5, 2.0)), window=1.0)
    assert slope == pytest.approx(0.0, abs=1e-14)
    assert r2 == 1.0


# ---------------------------------------------------------------------------
# Huber tuning


def test_tune_huber_tau_singleton():
    cfg, _ = convergence_config_from_mapping(dict(TINY, covariances="identity"))
    assert tune_huber_tau(cfg, [0.7]) == 0.7


def test_tune_huber_tau_argmin_contract():
    cfg, _ = convergence_config_from_mapping(
        dict(
            n_samples="3000", dim="3", eta="0.3", passes="1", replications="2",
            covariances="identity", preset="point", outlier_value="1000", seed="19",
        )
    )
    grid = [0.01, 1.0, 100.0]
    best = tune_huber_tau(cfg, grid)
    assert best in grid
    # measure each grid point the same way and confirm the argmin
    from dataclasses import replace

    errs = {}
    for tau in grid:
        result = convergence_experiment(
            replace(cfg, losses=("huber",), huber_tau=tau, covariances=("identity",))
        )
        errs[tau] = result.tables[0].rows[-1][1]
    assert errs[best] == min(errs.values())


def test_tune_huber_tau_grid_validation():
    cfg, _ = convergence_config_from_mapping(dict(TINY))
    with pytest.raises(ValueError, match="empty"):
        tune_huber_tau(cfg, [])
    with pytest.raises(ValueError, match="positive"):
        tune_huber_tau(cfg, [-1.0, 1.0])
    with pytest.raises(ValueError, match="ascending"):
        tune_huber_tau(cfg, [1.0, 0.5])


# ---------------------------------------------------------------------------
# SVG emitter


def test_render_loglog_svg_basics():
    svg = render_loglog_svg("demo", {"a": ([1, 10, 100], [1.0, 0.1, 0.01])})
    assert svg.startswith("<svg ")
    assert svg.count("<polyline") == 1
    assert "1e0" in svg and "1e2" in svg
    with pytest.raises(ValueError, match="positive"):
        render_loglog_svg("demo", {"a": ([0, 1], [1.0, 1.0])})


def test_table_svg_uses_error_columns():
    t = Table(
        "curves",
        ("n", "err_H", "err_2"),
        ((1, 1.0, 2.0), (10, 0.1, 0.2), (100, 0.01, 0.02)),
    )
    svg = table_svg(t)
    assert svg.count("<polyline") == 2
    assert "err_H" in svg and "err_2" in svg
