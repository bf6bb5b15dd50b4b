import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbm_averaging import experiments as ex
from fbm_averaging import seeding
from fbm_averaging.fgn import TimeGrid
from fbm_averaging.integrator import SdeSystem

KINDS = ["forward", "backward", "symmetric"]


def small(preset="example1", **kw):
    kw.setdefault("replicates", 120)
    kw.setdefault("n_steps", 200)
    return ex.PRESETS[preset]("a", **kw)


def null_config(kind, seed=0, replicates=60):
    s = SdeSystem(lambda t, x: -0.4 * x + np.sin(x), lambda t, x: (1.0 + 0.1 * np.cos(x))[..., None],
                  0.7, 0.1, autonomous=True)
    return ex.ExperimentConfig(s, math.pi, TimeGrid(1.0, 100), (0.3,), (0.1, 0.05), kind=kind,
                               replicates=replicates, master_seed=seed)


class TestSeeding:
    def test_streams_are_reproducible(self):
        assert np.array_equal(seeding.standard_normal(5, 3, 10), seeding.standard_normal(5, 3, 10))

    def test_streams_differ(self):
        a = seeding.standard_normal(5, 3, 10)
        assert not np.array_equal(a, seeding.standard_normal(5, 4, 10))
        assert not np.array_equal(a, seeding.standard_normal(6, 3, 10))

    def test_large_indices(self):
        x = seeding.standard_normal(2**63, 2**40, 4)
        assert np.all(np.isfinite(x))


class TestPresets:
    @pytest.mark.parametrize(
        "case,expected",
        [("a", (0.0, 0.2, 0.045, 0.75)), ("b", (0.1, 0.2, 0.045, 0.55)), ("d", (0.0, 0.4, 0.02, 0.7))],
    )
    def test_example1_cases(self, case, expected):
        cfg = ex.example1_preset(case, replicates=10)
        e = cfg.echo
        assert (e["x0"], e["lambda"], e["epsilons"][0], e["hurst"]) == expected
        assert cfg.epsilons == (expected[2],)
        assert float(cfg.system.h) == expected[3]

    @pytest.mark.parametrize(
        "case,expected",
        [("a", (0.0, 2.0, 0.001, 0.55)), ("c", (0.1, 3.0, 0.002, 0.6)), ("d", (0.0, 3.0, 0.002, 0.7))],
    )
    def test_example2_cases(self, case, expected):
        e = ex.example2_preset(case, replicates=10).echo
        assert (e["x0"], e["lambda"], e["epsilons"][0], e["hurst"]) == expected

    def test_paper_values_recorded(self):
        a1 = ex.example1_preset("a").averaged
        assert a1.paper_value == {"b_bar_coefficient": -0.1, "sigma_bar": 1.0}
        assert a1.b_bar(np.array([[1.0]]))[0, 0] == pytest.approx(-0.2, abs=1e-8)
        a2 = ex.example2_preset("a").averaged
        assert a2.paper_value["sigma_bar"] == 1.5
        assert a2.sigma_bar(np.array([[0.0]]))[0, 0, 0] == pytest.approx(2 * math.sqrt(3 / 8), abs=1e-8)

    def test_unknown_override(self):
        with pytest.raises(ValueError, match="bogus"):
            ex.example1_preset("a", bogus=1)

    def test_unknown_case(self):
        with pytest.raises(ValueError):
            ex.example2_preset("z")


class TestConfigValidation:
    @pytest.mark.parametrize("eps", [[0.01, 0.02], [0.02, 0.02], [2.0], []])
    def test_epsilons(self, eps):
        with pytest.raises(ValueError):
            small(epsilons=eps)

    def test_replicates(self):
        with pytest.raises(ValueError):
            small(replicates=1)

    def test_keep_limit(self):
        with pytest.raises(ValueError):
            small(keep_trajectories=11)

    def test_metadata(self):
        cfg = small(epsilons=[0.04, 0.01])
        assert cfg.metadata["horizon"] == 1.0
        assert set(cfg.metadata["implied_L_at_beta_half"]) == {0.04, 0.01}


class TestRunPaired:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("seed", [0, 17])
    def test_null_coupling_bitwise(self, kind, seed):
        cfg = null_config(kind, seed)
        for eps in cfg.epsilons:
            e = ex.run_paired(cfg, eps)
            assert e.sup_mse == 0.0
            assert np.all(e.mse == 0.0)
            assert np.array_equal(e.x_trajectories, e.z_trajectories)
            assert e.exceedance == 0.0

    def test_degenerate_intervals_for_zero_error(self):
        # constant coefficients: averaged equals original and every CI collapses onto 0
        s = SdeSystem(lambda t, x: 0.3, lambda t, x: 0.7, 0.65, 0.2, drift_affine=True, additive_noise=True)
        cfg = ex.ExperimentConfig(s, 1.0, TimeGrid(1.0, 50), (0.0,), (0.2,), replicates=40)
        for seed in range(100):
            e = ex.run_paired(replace(cfg, master_seed=seed), 0.2)
            assert np.all(e.mse_ci_lo == 0.0) and np.all(e.mse_ci_hi == 0.0)
            lo, hi = e.exceedance_ci
            assert lo == 0.0 and 0.0 <= hi <= 0.1

    def test_statistics_invariants(self):
        e = ex.run_paired(small(), 0.045)
        assert np.all(e.mse >= 0)
        assert np.all(e.mse_ci_lo <= e.mse) and np.all(e.mse <= e.mse_ci_hi)
        assert 0 <= e.exceedance <= 1
        lo, hi = e.exceedance_ci
        assert lo <= e.exceedance <= hi
        assert e.sup_mse == e.mse.max()
        assert e.x_trajectories.shape == (10, 201, 1)

    def test_worker_count_invariance(self):
        cfg = small(replicates=600)
        a = ex.run_paired(cfg, 0.045, workers=1)
        b = ex.run_paired(cfg, 0.045, workers=4)
        assert np.array_equal(a.mse, b.mse) and np.array_equal(a.mse_ci_hi, b.mse_ci_hi)
        assert a.exceedance == b.exceedance
        assert np.array_equal(a.x_trajectories, b.x_trajectories)

    def test_adding_replicates_keeps_earlier_ones(self):
        a = ex.run_paired(small(replicates=50), 0.045)
        b = ex.run_paired(small(replicates=500), 0.045)
        assert np.array_equal(a.x_trajectories, b.x_trajectories)
        assert np.array_equal(a.z_trajectories, b.z_trajectories)

    def test_seed_changes_result(self):
        a = ex.run_paired(small(seed=1), 0.045)
        b = ex.run_paired(small(seed=2), 0.045)
        assert not np.array_equal(a.mse, b.mse)

    def test_shared_noise_matches_increments(self):
        cfg = small(replicates=3)
        dB = ex.replicate_increments(cfg, 0, 3)
        again = ex.replicate_increments(cfg, 1, 2)
        assert np.array_equal(dB[1:2], again)

    def test_divergence_budget(self):
        s = SdeSystem(lambda t, x: x**3 * 1e6, lambda t, x: 1.0, 0.7, 1.0, drift_affine=False, additive_noise=True)
        cfg = ex.ExperimentConfig(s, 1.0, TimeGrid(1.0, 50), (5.0,), (1.0,), replicates=20,
                                  averaged=ex.build_averaged_system(s, 1.0, analytic=(lambda x: 0 * x, lambda x: 1.0)))
        with np.errstate(all="ignore"), pytest.raises(ex.DivergenceBudgetError) as err:
            ex.run_paired(cfg, 1.0)
        assert err.value.count == 20


class TestSweep:
    def test_single_epsilon_has_no_diagnostics(self):
        r = ex.epsilon_sweep(small())
        assert len(r.rows) == 1 and r.diagnostics is None

    def test_rows_match_ensembles(self):
        r = ex.epsilon_sweep(small(epsilons=[0.045, 0.01]))
        assert [row.epsilon for row in r.rows] == [0.045, 0.01]
        assert r.rows[1].sup_mse == r.ensembles[1].sup_mse
        assert set(r.diagnostics) >= {"sup_mse_strictly_decreasing", "exceedance_nonincreasing"}

    def test_halving_epsilon_decreases_sup_mse(self):
        wins = []
        for seed in range(5):
            r = ex.epsilon_sweep(small(epsilons=[0.04, 0.02], seed=seed, replicates=200))
            wins.append(r.rows[1].sup_mse < r.rows[0].sup_mse)
        assert sum(wins) >= 3

    @pytest.mark.parametrize(
        "values,lo,hi,ok",
        [
            ([3, 2, 1], [2, 1, 0], [4, 3, 2], True),
            ([3, 3.1, 1], [2, 2, 0], [4, 4, 2], True),
            ([1, 3, 2], [0.9, 2.9, 1.9], [1.1, 3.1, 2.1], False),
            ([3, 3.1, 3.2], [2, 2, 2], [4, 4, 4], False),
        ],
    )
    def test_trend_ok(self, values, lo, hi, ok):
        assert ex.trend_ok(values, lo, hi) is ok


@given(st.integers(0, 2**40))
@settings(max_examples=5, deadline=None)
def test_seed_determinism(seed):
    cfg = small(seed=seed, replicates=20, n_steps=50)
    a, b = ex.run_paired(cfg, 0.045), ex.run_paired(cfg, 0.045)
    assert np.array_equal(a.mse, b.mse)
