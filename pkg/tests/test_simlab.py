import math

import numpy as np
import pytest

from panelposi.simlab import (
    METHODS,
    NoiseSpec,
    SimConfig,
    gen_staircase,
    run_benchmarks,
    simulate,
    staircase_mask,
)


def _small_config(**overrides):
    base = dict(
        n_units=6, n_covariates=5, n_periods=60, k_true=2,
        noise=NoiseSpec(kind="independent", sigma2=1.0),
        gamma=0.1, reps=2, seed=42,
    )
    base.update(overrides)
    return SimConfig(**base)


class TestStaircaseMask:
    def test_paper_scale_fractions(self):
        mask = staircase_mask(120, 100, 10)
        sums = mask.sum(axis=1)
        assert sums[0] == 120
        assert sums[9] == 12
        expected = [math.ceil(120 * (1 - (k - 1) / 10)) for k in range(1, 11)]
        assert list(sums[:10]) == expected
        assert np.all(sums[10:] == 0)

    def test_single_factor_dense_column(self):
        mask = staircase_mask(7, 4, 1)
        assert mask[0].all()
        assert not mask[1:].any()

    def test_columns_nonincreasing_and_leading(self):
        mask = staircase_mask(33, 12, 7)
        sums = mask.sum(axis=1)
        active = sums[:7]
        assert all(a >= b for a, b in zip(active, active[1:]))
        # active units are always the leading block
        for k in range(7):
            count = int(active[k])
            assert mask[k, :count].all() and not mask[k, count:].any()


class TestGenStaircase:
    def test_shapes_and_support(self):
        cfg = _small_config()
        data = gen_staircase(cfg, 0)
        assert data.X.shape == (60, 5)
        assert data.Y.shape == (60, 6)
        assert data.beta.shape == (5, 6)
        assert np.all(data.beta[~data.active_mask] == 0)
        assert np.all(np.abs(data.beta[data.active_mask]) <= 0.5)

    def test_global_null_config(self):
        cfg = _small_config(k_true=0)
        data = gen_staircase(cfg, 1)
        assert not data.active_mask.any()
        assert np.all(data.beta == 0)

    @pytest.mark.slow
    def test_noise_covariance_matches_spec(self):
        spec = NoiseSpec(kind="dependent", sigma2=2.0, kappa=1.0)
        cfg = SimConfig(
            n_units=8, n_covariates=2, n_periods=100_000, k_true=0,
            noise=spec, reps=1, seed=3,
        )
        data = gen_staircase(cfg, 3)
        emp = np.cov(data.Y.T)
        assert np.max(np.abs(emp - spec.covariance(8))) < 0.05

    def test_deterministic_given_seed(self):
        cfg = _small_config()
        a = gen_staircase(cfg, 7)
        b = gen_staircase(cfg, 7)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)


class TestNoiseSpec:
    def test_invalid_kind(self):
        with pytest.raises(ValueError):
            NoiseSpec(kind="weird")

    def test_kappa_bound(self):
        with pytest.raises(ValueError):
            NoiseSpec(kind="dependent", sigma2=1.0, kappa=1.0)

    def test_covariance_matrix(self):
        cov = NoiseSpec(kind="dependent", sigma2=2.0, kappa=1.0).covariance(3)
        assert np.allclose(np.diag(cov), 2.0)
        assert cov[0, 1] == 1.0


class TestRunBenchmarks:
    def test_counts_are_consistent(self):
        cfg = _small_config()
        data = gen_staircase(cfg, 11)
        results = run_benchmarks(data, cfg, seed=12)
        assert set(results) == set(METHODS)
        for res in results.values():
            assert res.n_selected == res.n_false + res.n_correct
            assert res.oos_r2 <= 1.0

    def test_strong_factor_found_by_all_methods(self):
        # one overwhelming factor: every selector picks it up
        rng = np.random.default_rng(0)
        cfg = SimConfig(
            n_units=3, n_covariates=2, n_periods=40, k_true=1,
            noise=NoiseSpec(sigma2=1.0), gamma=0.05, reps=1, seed=5,
        )
        data = gen_staircase(cfg, 5)
        boosted = data.beta.copy()
        boosted[0, :] = np.array([3.0, -3.0, 3.0])
        from panelposi.simlab import StaircaseData

        data = StaircaseData(
            X=data.X, Y=data.X @ boosted + (data.Y - data.X @ data.beta),
            active_mask=data.active_mask, beta=boosted,
        )
        results = run_benchmarks(data, cfg, seed=6)
        for method, res in results.items():
            assert 0 in res.selected, method

    def test_zero_selection_scores_zero_r2(self):
        cfg = _small_config(k_true=0, gamma=0.01)
        data = gen_staircase(cfg, 13)
        results = run_benchmarks(data, cfg, seed=14)
        for res in results.values():
            if res.n_selected == 0:
                assert res.oos_r2 == 0.0


class TestSimulate:
    def test_deterministic_report(self):
        cfg = _small_config(reps=2)
        a = simulate(cfg).mean_table()
        b = simulate(cfg).mean_table()
        assert a == b

    def test_threading_matches_serial(self):
        cfg = _small_config(reps=3)
        serial = simulate(cfg, threads=1).mean_table()
        threaded = simulate(cfg, threads=3).mean_table()
        assert serial == threaded

    def test_fwer_summary(self):
        cfg = _small_config(k_true=0, reps=3)
        report = simulate(cfg)
        fwer = report.fwer()
        assert set(fwer) == set(METHODS)
        for v in fwer.values():
            assert 0.0 <= v <= 1.0
