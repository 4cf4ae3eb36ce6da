import math

import numpy as np
import pytest
from scipy.stats import kurtosis, skew

from sgpsde.errors import ConfigurationError, SimulationError, UsageError
from sgpsde.simulator import (BOUNDARY_DELTA, ModelSpec, SimConfig, builtin_model, em_step,
                              path_rng, simulate, simulate_path)

ZERO = ModelSpec("zero", lambda x: 0.0, lambda x: 0.0)
BROWNIAN = ModelSpec("bm", lambda x: 0.0, lambda x: 1.0)


class TestStep:
    def test_still(self):
        assert em_step(ZERO, 1.25, 0.1, 0.7) == 1.25

    def test_formula(self):
        m = ModelSpec("lin", lambda x: -x, lambda x: 4.0)
        assert em_step(m, 2.0, 0.1, 0.5) == pytest.approx(2.0 - 0.2 + 2.0 * 0.5)

    def test_negative_g_clamped(self):
        m = ModelSpec("neg", lambda x: 0.0, lambda x: -1.0)
        assert em_step(m, 0.3, 0.1, 5.0) == 0.3

    def test_domain_clip(self):
        m = ModelSpec("box", lambda x: 0.0, lambda x: 1.0, (0.0, 1.0))
        assert em_step(m, 0.5, 1.0, 10.0) == 1.0
        assert em_step(m, 0.5, 1.0, -10.0) == 0.0

    def test_non_finite_reports_step(self):
        m = ModelSpec("blow", lambda x: math.inf if x > 0.9 else 1.0, lambda x: 0.0)
        with pytest.raises(SimulationError) as err:
            simulate_path(m, 10, 0.5, 0.0, np.random.default_rng(0))
        assert err.value.step == 2

    def test_brownian_increment_moments(self):
        rng = np.random.default_rng(0)
        path, _ = simulate_path(BROWNIAN, 10 ** 5, 0.01, 0.0, rng)
        d = np.diff(path)
        assert abs(d.mean()) <= 4 * math.sqrt(0.01 / 10 ** 5)
        assert d.var() == pytest.approx(0.01, rel=0.05)

    def test_standardized_increments_shape(self):
        c = 2.5
        m = ModelSpec("bm", lambda x: 0.0, lambda x: c)
        path, _ = simulate_path(m, 10 ** 6, 0.001, 0.0, np.random.default_rng(1))
        z = np.diff(path) / math.sqrt(c * 0.001)
        assert abs(skew(z)) <= 0.05
        assert abs(kurtosis(z)) <= 0.1


class TestBuiltin:
    def test_m1_fixed_point(self):
        assert builtin_model("M1").drift(3.0) == 0.0

    def test_table_values(self):
        m3 = builtin_model("M3")
        assert m3.drift(1.0) == -1.0 and m3.diffusion_g(1.0) == pytest.approx(1.44)
        m6 = builtin_model("m6")
        assert m6.drift(0.0) == 0.0 and m6.diffusion_g(0.0) == pytest.approx(0.185761)
        m4 = builtin_model("M4")
        assert m4.drift(0.5) == 0.0 and m4.diffusion_g(0.5) == pytest.approx(0.175)
        assert builtin_model("M2").diffusion_g(7.0) == 1.0
        assert builtin_model("M5").diffusion_g(0.04) == pytest.approx(0.01)

    def test_domains(self):
        assert builtin_model("M4").domain == (BOUNDARY_DELTA, 1 - BOUNDARY_DELTA)
        assert builtin_model("M5").domain == (BOUNDARY_DELTA, math.inf)
        assert builtin_model("M1").domain is None

    def test_unknown(self):
        with pytest.raises(UsageError):
            builtin_model("M7")


class TestSimulate:
    def test_length_and_burn_in(self):
        ds = simulate(builtin_model("M2"), SimConfig(50, 0.01, burn_in=20, seed=1))
        assert ds.x.size == 50 and ds.n == 49
        full = simulate(builtin_model("M2"), SimConfig(70, 0.01, seed=1))
        np.testing.assert_array_equal(ds.x, full.x[20:])

    def test_default_start_is_fixed_point(self):
        assert simulate(builtin_model("M5"), SimConfig(3, 0.01)).x[0] == 0.225
        assert simulate(builtin_model("M5"), SimConfig(3, 0.01, x0=1.0)).x[0] == 1.0

    def test_deterministic(self):
        cfg = SimConfig(1000, 0.01, seed=9)
        a = simulate(builtin_model("M3"), cfg)
        b = simulate(builtin_model("M3"), cfg)
        assert a.x.tobytes() == b.x.tobytes()

    def test_streams_independent_of_order(self):
        a = path_rng(5, 1, 2).standard_normal(3)
        path_rng(5, 0, 0).standard_normal(10)
        b = path_rng(5, 1, 2).standard_normal(3)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, path_rng(5, 1, 3).standard_normal(3))

    @pytest.mark.parametrize("model", ["M4", "M5"])
    def test_domain_respected(self, model):
        spec = builtin_model(model)
        ds = simulate(spec, SimConfig(20_000, 0.05, seed=2))
        lo, hi = spec.domain
        assert ds.x.min() >= lo and ds.x.max() <= hi

    def test_clips_reported(self):
        m = ModelSpec("push", lambda x: -100.0, lambda x: 0.0, (0.0, math.inf), 1.0)
        ds = simulate(m, SimConfig(10, 0.1))
        assert ds.info["clips"] == 9 and ds.x[-1] == 0.0

    @pytest.mark.parametrize("kw", [{"n_samples": 1, "dt": 0.1}, {"n_samples": 5, "dt": 0.0},
                                    {"n_samples": 5, "dt": 0.1, "burn_in": -1}])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigurationError):
            SimConfig(**kw)

    def test_ou_stationary_moments(self):
        ds = simulate(builtin_model("M1"), SimConfig(10 ** 6, 1e-3, burn_in=10 ** 4, seed=0))
        assert abs(ds.x.mean() - 3.0) <= 0.05
        assert abs(ds.x.var(ddof=1) - 1.0) <= 0.05
