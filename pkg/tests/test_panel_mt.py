import math
from fractions import Fraction

import numpy as np
import pytest

from panelposi.errors import DuplicateEntry, EmptyFamily
from panelposi.panel_mt import (
    PValueMatrix,
    bonferroni_reject,
    build_pvalue_matrix,
    cohesion,
    fwer_reject,
    simultaneity_counts,
    traverse,
)
from panelposi.posi import PosiCoefficient, TruncationInterval


def _matrix(active_sets, n_covariates, log_p=None):
    """Panel from per-unit active lists; optional (unit, j) -> log p overrides."""
    entries = {}
    for n, active in enumerate(active_sets):
        for j in active:
            entries[(n, j)] = (log_p or {}).get((n, j), math.log(0.5))
    return PValueMatrix(len(active_sets), n_covariates, entries)


# Six units, four covariates; unit n active on the listed (0-based) covariates.
# Covariate unit-sets: K_0={1}, K_1={0,2,4,5}, K_2={0..5}, K_3={1,3,4}.
RUNNING_EXAMPLE = [
    [1, 2],
    [0, 2, 3],
    [1, 2],
    [2, 3],
    [1, 2, 3],
    [1, 2],
]


class TestPValueMatrix:
    def test_running_example_entry_count(self):
        P = _matrix(RUNNING_EXAMPLE, 4)
        assert P.n_entries == 14
        assert P.covariate_units[0] == [1]
        assert P.covariate_units[1] == [0, 2, 4, 5]
        assert P.covariate_units[2] == [0, 1, 2, 3, 4, 5]
        assert P.covariate_units[3] == [1, 3, 4]

    def test_agnostic_family_would_be_larger(self):
        P = _matrix(RUNNING_EXAMPLE, 4)
        assert P.n_units * P.n_covariates == 24 > P.n_entries == 14

    def test_empty_input_empty_family(self):
        P = _matrix([[], [], []], 5)
        assert P.family == []
        assert P.n_entries == 0

    def test_full_matrix(self):
        P = _matrix([[0, 1, 2]] * 4, 3)
        assert P.n_entries == 12

    def test_duplicate_raises(self):
        with pytest.raises(DuplicateEntry):
            PValueMatrix.from_entries([(0, 1, -1.0), (0, 1, -2.0)], 2, 3)

    def test_build_from_unit_results(self):
        iv = TruncationInterval(-1.0, 1.0)
        coefs = [
            [PosiCoefficient(0, 2, 0.1, 1.0, 1.0, iv, -0.5, "known")],
            [],
            [PosiCoefficient(2, 0, 0.2, 1.0, 1.0, iv, -1.5, "known")],
        ]
        P = build_pvalue_matrix(coefs, 3, 3)
        assert P.entries == {(0, 2): -0.5, (2, 0): -1.5}

    def test_positive_log_p_rejected(self):
        with pytest.raises(ValueError):
            PValueMatrix(1, 1, {(0, 0): 0.5})


class TestSimultaneityCounts:
    def test_running_example(self):
        counts = simultaneity_counts(_matrix(RUNNING_EXAMPLE, 4))
        assert counts == {0: 3, 1: 9, 2: 14, 3: 8}

    def test_single_cell(self):
        assert simultaneity_counts(_matrix([[2]], 4)) == {2: 1}

    def test_full_matrix(self):
        P = _matrix([[0, 1, 2]] * 5, 3)
        assert simultaneity_counts(P) == {0: 15, 1: 15, 2: 15}


class TestCohesion:
    def test_running_example_value(self):
        # direct evaluation of the definition on the fixture pattern
        expected = 1.0 / float(Fraction(1, 3) + Fraction(4, 9) + Fraction(6, 14) + Fraction(3, 8))
        rho = cohesion(_matrix(RUNNING_EXAMPLE, 4))
        assert rho == pytest.approx(expected, rel=1e-12)
        assert rho == pytest.approx(0.632371, abs=1e-6)

    def test_disjoint_blocks_hit_lower_bound(self):
        P = _matrix([[0], [0], [1], [1], [2], [2]], 3)
        assert cohesion(P) == pytest.approx(1.0 / 3.0, rel=1e-12)

    def test_shared_full_set_hits_upper_bound(self):
        P = _matrix([[0, 1, 2, 3]] * 6, 4)
        assert cohesion(P) == pytest.approx(1.0, rel=1e-12)

    def test_empty_family_raises(self):
        with pytest.raises(EmptyFamily):
            cohesion(_matrix([[], []], 3))

    def test_bounds_on_random_patterns(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            n, j = int(rng.integers(1, 12)), int(rng.integers(1, 10))
            mask = rng.random((n, j)) < rng.uniform(0.1, 0.9)
            if not mask.any():
                continue
            P = _matrix([list(np.flatnonzero(row)) for row in mask], j)
            rho = cohesion(P)
            assert 1.0 / j - 1e-12 <= rho <= 1.0 + 1e-12


def _table1_matrix():
    """Running-example pattern with p-values matching the worked ranking."""
    rho_inv = float(Fraction(1, 3) + Fraction(4, 9) + Fraction(6, 14) + Fraction(3, 8))
    p = {0: 0.005, 1: 0.002, 2: 1e-5, 3: 0.001 / (rho_inv * 8)}
    log_p = {}
    first_unit = {j: units[0] for j, units in enumerate([[1], [0, 2, 4, 5], [0, 1, 2, 3, 4, 5], [1, 3, 4]])}
    for n, active in enumerate(RUNNING_EXAMPLE):
        for j in active:
            log_p[(n, j)] = math.log(p[j]) if n == first_unit[j] else math.log(0.5)
    return _matrix(RUNNING_EXAMPLE, 4, log_p), p, rho_inv


class TestFwerReject:
    def test_table1_ranking_and_rejections(self):
        P, p, rho_inv = _table1_matrix()
        dec = fwer_reject(P, gamma=0.01)
        scores = {j: math.exp(dec.score_log[j]) for j in dec.family}
        assert scores[0] == pytest.approx(rho_inv * 3 * p[0], rel=1e-9)   # 0.024
        assert scores[1] == pytest.approx(rho_inv * 9 * p[1], rel=1e-9)   # 0.028
        assert scores[2] < 1e-3
        assert scores[3] == pytest.approx(1e-3, rel=1e-9)
        assert dec.rejected_covariates == [2, 3]
        assert fwer_reject(P, gamma=0.05).rejected_covariates == [0, 1, 2, 3]

    def test_all_p_one_rejects_nothing(self):
        P = _matrix(RUNNING_EXAMPLE, 4, {k: 0.0 for k in _matrix(RUNNING_EXAMPLE, 4).entries})
        assert fwer_reject(P, 0.5).rejected_covariates == []

    def test_scores_finite(self):
        P, _, _ = _table1_matrix()
        dec = fwer_reject(P, 0.05)
        assert all(math.isfinite(dec.score_log[j]) for j in dec.family)

    def test_log_space_rule_matches_linear(self):
        P, _, _ = _table1_matrix()
        dec = fwer_reject(P, 0.03)
        for j in dec.family:
            linear = math.exp(dec.min_log_p[j]) <= dec.rho * 0.03 / dec.n_j[j]
            assert dec.rejected[j] == linear


class TestTraverse:
    def test_table1_k_star(self):
        P, _, _ = _table1_matrix()
        tr = traverse(P)
        assert tr.k_star(0.01) == 2
        assert tr.k_star(0.05) == 4

    def test_single_covariate_p_one(self):
        P = _matrix([[0]], 1, {(0, 0): 0.0})
        tr = traverse(P)
        assert tr.gamma_star[0] == pytest.approx(1.0)
        assert tr.k_star(0.999) == 0
        assert tr.k_star(1.0) == 1

    def test_matches_fwer_reject_at_random_levels(self):
        rng = np.random.default_rng(5)
        mask = rng.random((15, 8)) < 0.4
        log_p = {}
        active_sets = []
        for n in range(15):
            active = list(np.flatnonzero(mask[n]))
            active_sets.append(active)
            for j in active:
                log_p[(n, j)] = math.log(1.0 - rng.random())
        P = _matrix(active_sets, 8, log_p)
        tr = traverse(P)
        for gamma in rng.uniform(1e-6, 1.0, size=50):
            expected = len(fwer_reject(P, float(gamma)).rejected_covariates)
            assert tr.k_star(float(gamma)) == expected

    def test_gamma_star_nondecreasing_and_inversion(self):
        P, _, _ = _table1_matrix()
        tr = traverse(P)
        assert np.all(np.diff(tr.gamma_star_log) >= 0)
        for k in range(1, len(tr.family) + 1):
            g = float(tr.gamma_star[k - 1])
            if g <= 1.0:
                assert tr.k_star(g) >= k

    def test_k_star_monotone_in_gamma(self):
        P, _, _ = _table1_matrix()
        tr = traverse(P)
        gammas = np.linspace(1e-4, 1.0, 200)
        ks = [tr.k_star(float(g)) for g in gammas]
        assert all(a <= b for a, b in zip(ks, ks[1:]))


class TestBonferroniReject:
    def test_table1_bonferroni_column(self):
        # adjusted value 24 * 0.005 = 0.120 for the weak covariate: kept at 5%
        P, p, _ = _table1_matrix()
        dec = bonferroni_reject(P, 0.05, mode="bonferroni")
        assert 24 * p[0] == pytest.approx(0.120)
        assert not dec.rejected[0]
        assert dec.rejected[2] and dec.rejected[3]

    def test_threshold_formula(self):
        P, _, _ = _table1_matrix()
        dec = bonferroni_reject(P, 1.0, mode="bonferroni")
        assert dec.threshold_log == pytest.approx(math.log(1.0 / 24.0))

    def test_all_p_one_neither_mode_rejects(self):
        P = _matrix(RUNNING_EXAMPLE, 4, {k: 0.0 for k in _matrix(RUNNING_EXAMPLE, 4).entries})
        assert bonferroni_reject(P, 1.0 - 1e-9, "naive").rejected_covariates == []
        assert bonferroni_reject(P, 1.0 - 1e-9, "bonferroni").rejected_covariates == []

    def test_agnostic_bonferroni_implied_by_panel_rule(self):
        # threshold rho*gamma/N_j >= gamma/(J N) for every family covariate
        rng = np.random.default_rng(9)
        for _ in range(200):
            n, j = int(rng.integers(2, 10)), int(rng.integers(2, 8))
            mask = rng.random((n, j)) < 0.5
            if not mask.any():
                continue
            active_sets = [list(np.flatnonzero(row)) for row in mask]
            log_p = {}
            for u, active in enumerate(active_sets):
                for c in active:
                    log_p[(u, c)] = math.log(1.0 - rng.random())
            P = _matrix(active_sets, j, log_p)
            gamma = float(rng.uniform(0.01, 0.5))
            bon = bonferroni_reject(P, gamma, "bonferroni")
            panel = fwer_reject(P, gamma)
            for cov in bon.rejected_covariates:
                assert panel.rejected[cov]


class TestFwerMonteCarloDirect:
    @pytest.mark.slow
    def test_global_null_fwer_bound_on_injected_pvalues(self):
        # Theorem-level check, independent of any estimator: random sparsity
        # patterns with iid uniform p-values in the active cells.
        rng = np.random.default_rng(123)
        gamma = 0.1
        reps = 600
        hits = 0
        for _ in range(reps):
            n, j = 15, 10
            mask = rng.random((n, j)) < 0.3
            if not mask.any():
                continue
            entries = {
                (u, c): math.log(1.0 - rng.random())
                for u in range(n)
                for c in range(j)
                if mask[u, c]
            }
            P = PValueMatrix(n, j, entries)
            if fwer_reject(P, gamma).rejected_covariates:
                hits += 1
        fwer = hits / reps
        assert fwer <= gamma + 3 * math.sqrt(gamma * (1 - gamma) / reps)


class TestPermutationEquivariance:
    def test_decisions_invariant_to_relabeling(self):
        rng = np.random.default_rng(33)
        mask = rng.random((12, 6)) < 0.4
        log_p = {
            (n, j): math.log(1.0 - rng.random())
            for n in range(12)
            for j in range(6)
            if mask[n, j]
        }
        P = PValueMatrix(12, 6, dict(log_p))
        dec = fwer_reject(P, 0.1)
        unit_perm = rng.permutation(12)
        cov_perm = rng.permutation(6)
        relabeled = {(int(unit_perm[n]), int(cov_perm[j])): lp for (n, j), lp in log_p.items()}
        P2 = PValueMatrix(12, 6, relabeled)
        dec2 = fwer_reject(P2, 0.1)
        assert dec2.rho == pytest.approx(dec.rho, rel=1e-12)
        for j in dec.family:
            j2 = int(cov_perm[j])
            assert dec2.rejected[j2] == dec.rejected[j]
            assert dec2.n_j[j2] == dec.n_j[j]
