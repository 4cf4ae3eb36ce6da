import importlib
import math

import numpy as np
import pytest

from sgpsde.errors import ConfigurationError, FitError, UsageError
from sgpsde.evaluation import (ErrorRecord, ErrorTable, benchmark, benchmark_fit_config,
                               evaluation_grid, integrated_error, kde_density,
                               silverman_bandwidth)
from sgpsde.fit import FitConfig
from sgpsde.simulator import SimConfig

evaluation_module = importlib.import_module("sgpsde.evaluation")
SMALL_SIM = SimConfig(1500, 0.01)
TINY_FIT = FitConfig(m=4, restarts=1, max_em_iterations=8)


class TestBandwidth:
    def test_unit_spread(self):
        u = np.linspace(-1, 1, 100)
        u = (u - u.mean()) / u.std(ddof=1)
        q75, q25 = np.percentile(u, [75, 25])
        assert (q75 - q25) / 1.34 > 1.0
        assert silverman_bandwidth(u) == pytest.approx(0.9 * 100 ** -0.2, rel=1e-12)
        assert silverman_bandwidth(u) == pytest.approx(0.3583, abs=1e-4)

    def test_iqr_branch(self):
        x = np.r_[np.linspace(-1, 1, 90), [-50.0, 50.0] * 5]
        q75, q25 = np.percentile(x, [75, 25])
        assert (q75 - q25) / 1.34 < np.std(x, ddof=1)
        expected = 0.9 * (q75 - q25) / 1.34 * x.size ** -0.2
        assert silverman_bandwidth(x) == pytest.approx(expected, rel=1e-12)

    def test_zero_iqr_falls_back_to_sd(self):
        x = np.r_[np.zeros(60), [-1.0, 1.0]]
        assert silverman_bandwidth(x) == pytest.approx(0.9 * np.std(x, ddof=1) * 62 ** -0.2)

    def test_degenerate(self):
        with pytest.raises(ConfigurationError):
            silverman_bandwidth(np.ones(10))
        with pytest.raises(ConfigurationError):
            silverman_bandwidth(np.ones(1))


class TestDensity:
    def test_normalized(self, rng):
        x = rng.normal(size=500)
        h = silverman_bandwidth(x)
        grid = evaluation_grid(x, h)
        dens, h2 = kde_density(x, grid)
        assert h2 == h and np.all(dens >= 0)
        assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=0.01)

    def test_symmetric_sample(self, rng):
        half = rng.exponential(size=200)
        x = np.r_[half, -half] + 1.5
        grid = 1.5 + np.linspace(-4, 4, 81)
        dens, _ = kde_density(x, grid)
        np.testing.assert_allclose(dens, dens[::-1], rtol=1e-10, atol=1e-15)

    def test_grid_extends_three_bandwidths(self):
        grid = evaluation_grid(np.array([0.0, 1.0]), 0.1)
        assert grid.size == 512 and grid[0] == pytest.approx(-0.3) and grid[-1] == pytest.approx(1.3)


class TestIntegratedError:
    def test_exact_estimate(self, rng):
        grid = np.linspace(-3, 3, 101)
        dens = np.exp(-grid ** 2)
        assert integrated_error(np.sin, np.sin(grid), dens, grid) == 0.0

    def test_constant_offset(self):
        grid = np.linspace(-8, 8, 2001)
        dens = np.exp(-0.5 * grid ** 2) / math.sqrt(2 * math.pi)
        err = integrated_error(lambda x: x ** 2, grid ** 2 + 0.3, dens, grid)
        assert err == pytest.approx(0.3, rel=1e-6)

    def test_piecewise_trapezoid(self):
        grid = np.array([0.0, 0.5, 1.0, 2.0, 3.0])
        truth = np.array([0.0, 1.0, 2.0, 2.0, 0.0])
        est = np.array([1.0, 1.0, 0.0, 3.0, 0.0])
        dens = np.array([0.1, 0.2, 0.4, 0.2, 0.1])
        vals = np.abs(truth - est) * dens  # 0.1, 0, 0.8, 0.2, 0
        exact = 0.5 * (0.1 + 0.0) * 0.5 + 0.5 * (0.0 + 0.8) * 0.5 + 0.5 * (0.8 + 0.2) + 0.5 * 0.2
        assert np.allclose(vals, [0.1, 0.0, 0.8, 0.2, 0.0])
        assert integrated_error(truth, est, dens, grid) == pytest.approx(exact, abs=1e-12)

    def test_negligible_density_ignored(self):
        grid = np.linspace(0, 1, 5)
        dens = np.array([1e-300, 1.0, 1.0, 1.0, 1e-300])
        est = np.array([np.nan, 0.0, 0.0, 0.0, np.nan])
        assert integrated_error(np.zeros(5), est, dens, grid) == 0.0
        dens[0] = 0.5
        with pytest.raises(UsageError):
            integrated_error(np.zeros(5), est, dens, grid)

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            integrated_error(np.zeros(3), np.zeros(3), np.ones(4), np.linspace(0, 1, 4))

    def test_density_scale_invariance(self, rng):
        grid = np.linspace(-2, 2, 50)
        dens = np.exp(-grid ** 2)
        est = rng.normal(size=50)
        a = integrated_error(np.cos, est, dens / np.trapezoid(dens, grid), grid)
        scaled = 7.3 * dens
        b = integrated_error(np.cos, est, scaled / np.trapezoid(scaled, grid), grid)
        assert a == pytest.approx(b, rel=1e-13)


class TestBenchmark:
    def test_truth_oracle_scores_zero(self):
        table = benchmark(["M2"], ["truth"], 1, SMALL_SIM, TINY_FIT, seed=1)
        assert [r.error for r in table.records] == [0.0, 0.0]

    def test_order_and_worker_independent(self):
        a = benchmark(["M1", "M4"], ["binning", "nw"], 2, SMALL_SIM, TINY_FIT, seed=5)
        b = benchmark(["M4", "M1"], ["nw", "binning"], 2, SMALL_SIM, TINY_FIT, seed=5)
        c = benchmark(["M1", "M4"], ["binning", "nw"], 2, SMALL_SIM, TINY_FIT, seed=5, workers=2)
        assert a.to_csv() == b.to_csv() == c.to_csv()
        assert a.to_csv().splitlines()[0] == "model,estimator,coefficient,replicate,error"
        assert all(r.error >= 0 for r in a.records)

    def test_failed_replicate_recorded(self, monkeypatch):
        def broken(*args, **kwargs):
            raise FitError("synthetic")
        monkeypatch.setattr(evaluation_module, "fit", broken)
        table = benchmark(["M1"], ["sgp", "binning"], 2, SMALL_SIM, TINY_FIT, seed=0)
        summary = table.summary()
        assert summary[("M1", "sgp", "drift")][1:] == (0, 2)
        assert math.isnan(summary[("M1", "sgp", "drift")][0])
        assert summary[("M1", "binning", "drift")][1:] == (2, 0)
        assert "failed" in table.to_csv()

    def test_sgp_runs(self):
        table, traces = benchmark(["M1"], ["sgp"], 1, SMALL_SIM, TINY_FIT, seed=2,
                                  return_traces=True)
        assert len(table.rows()) == 2
        (trace,) = traces[("M1", "sgp", 0)]
        assert len(trace) >= 2

    def test_invalid_arguments(self):
        with pytest.raises(UsageError):
            benchmark(["M9"], ["truth"], 1, SMALL_SIM, TINY_FIT)
        with pytest.raises(UsageError):
            benchmark(["M1"], ["oracle"], 1, SMALL_SIM, TINY_FIT)
        with pytest.raises(ConfigurationError):
            benchmark(["M1"], ["truth"], 0, SMALL_SIM, TINY_FIT)

    def test_summary_means(self):
        t = ErrorTable([ErrorRecord("M1", "nw", "drift", 0, 1.0),
                        ErrorRecord("M1", "nw", "drift", 1, 3.0)])
        assert t.summary()[("M1", "nw", "drift")] == (2.0, 2, 0)
        assert t.summary_csv().splitlines()[1] == "M1,nw,drift,2.0,2,0"

    def test_benchmark_config(self):
        cfg = benchmark_fit_config(restarts=1)
        assert cfg.m == 10 and cfg.restarts == 1
        assert cfg.length_scale_bounds_f == (0.25, 2.0) == cfg.length_scale_bounds_s
