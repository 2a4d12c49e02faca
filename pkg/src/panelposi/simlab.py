"""Simulation lab: staircase panels, six benchmark selectors, and
Monte-Carlo error-rate experiments.

The generated panel has K true factors with a staircase activation
pattern: factor 1 loads on every unit, factor k on the leading
ceil(N * (1 - (k-1)/K)) units. The six benchmark methods differ in the
selection stage (OLS vs LASSO vs LASSO+post-selection inference) and in
the multiple-testing adjustment (none, Bonferroni, simultaneity counts).

Replications are independent; per-rep seeds are spawned from the master
seed so results are reproducible under any thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import panel_mt, posi, wlasso
from .numerics import pseudo_inverse

METHODS = ("N-OLS", "B-OLS", "N-LASSO", "B-LASSO", "B-PoSI", "P-PoSI")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "independent"  # "independent" or "dependent"
    sigma2: float = 2.0
    kappa: float = 1.0  # off-diagonal covariance, dependent case only

    def __post_init__(self):
        if self.kind not in ("independent", "dependent"):
            raise ValueError("noise kind must be 'independent' or 'dependent'")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.kind == "dependent" and not abs(self.kappa) < self.sigma2:
            raise ValueError("need |kappa| < sigma2 for a positive-definite covariance")

    def covariance(self, n_units: int) -> np.ndarray:
        if self.kind == "independent":
            return self.sigma2 * np.eye(n_units)
        cov = np.full((n_units, n_units), self.kappa)
        np.fill_diagonal(cov, self.sigma2)
        return cov


@dataclass(frozen=True)
class SimConfig:
    """Benchmark-study settings.

    Defaults: the penalty is cross-validated per unit (a shared panel-wide
    penalty from pooled CV is available via ``shared_lambda=True``) and
    the noise variance is one homogeneous estimate pooled over the units'
    post-selection refit residuals (``sigma_mode="per-unit"`` switches to
    the unit-level estimator).
    """

    n_units: int
    n_covariates: int
    n_periods: int
    k_true: int
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    gamma: float = 0.05
    reps: int = 100
    seed: int = 0
    split: float = 0.5
    lambda_mode: str | float = "cv"  # "cv" or a fixed penalty
    folds: int = 5
    shared_lambda: bool = False  # one panel-wide penalty vs per-unit choice
    sigma_mode: str = "pooled"  # "pooled" or "per-unit" noise variance

    def __post_init__(self):
        if self.k_true > self.n_covariates:
            raise ValueError("k_true cannot exceed the number of covariates")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must be in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.sigma_mode not in ("pooled", "per-unit"):
            raise ValueError("sigma_mode must be 'pooled' or 'per-unit'")


@dataclass(frozen=True)
class StaircaseData:
    X: np.ndarray  # T x J
    Y: np.ndarray  # T x N
    active_mask: np.ndarray  # J x N bool, true loading support
    beta: np.ndarray  # J x N

    @property
    def true_covariates(self) -> np.ndarray:
        return np.flatnonzero(self.active_mask.any(axis=1))


def staircase_mask(n_units: int, n_covariates: int, k_true: int) -> np.ndarray:
    """Support pattern: factor k active for the leading ceil(N(1-(k-1)/K)) units."""
    mask = np.zeros((n_covariates, n_units), dtype=bool)
    for k in range(1, k_true + 1):
        count = int(np.ceil(n_units * (1.0 - (k - 1) / k_true)))
        mask[k - 1, :count] = True
    return mask


def gen_staircase(config: SimConfig, seed) -> StaircaseData:
    """Draw one staircase panel: X iid N(0,1), loadings Unif[-1/2, 1/2]."""
    rng = np.random.default_rng(seed)
    t, n, j = config.n_periods, config.n_units, config.n_covariates
    X = rng.standard_normal((t, j))
    if config.k_true > 0:
        mask = staircase_mask(n, j, config.k_true)
    else:
        mask = np.zeros((j, n), dtype=bool)
    beta = np.where(mask, rng.uniform(-0.5, 0.5, size=(j, n)), 0.0)

    spec = config.noise
    if spec.kind == "independent":
        eps = np.sqrt(spec.sigma2) * rng.standard_normal((t, n))
    elif spec.kappa >= 0:
        common = rng.standard_normal((t, 1))
        eps = np.sqrt(spec.kappa) * common + np.sqrt(spec.sigma2 - spec.kappa) * rng.standard_normal((t, n))
    else:
        chol = np.linalg.cholesky(spec.covariance(n))
        eps = rng.standard_normal((t, n)) @ chol.T
    return StaircaseData(X=X, Y=X @ beta + eps, active_mask=mask, beta=beta)


@dataclass(frozen=True)
class MethodResult:
    selected: np.ndarray  # covariate indices
    n_false: int
    n_correct: int
    oos_r2: float

    @property
    def n_selected(self) -> int:
        return int(self.selected.size)


def _ols_machinery(X_in: np.ndarray, Y_in: np.ndarray):
    """Full-design OLS pieces shared by the naive benchmarks."""
    t_in, n_cov = X_in.shape
    if t_in <= n_cov:
        raise ValueError("OLS benchmarks need more in-sample rows than covariates")
    pinv = pseudo_inverse(X_in)
    B = pinv @ Y_in  # J x N
    resid = Y_in - X_in @ B
    dof = t_in - n_cov
    sigma2 = np.sum(resid * resid, axis=0) / dof
    diag = np.sum(pinv * pinv, axis=1)
    se = np.sqrt(diag[:, None] * sigma2[None, :])
    return B, se, dof


def _naive_lasso_log_p(fits, se: np.ndarray, dof: int) -> dict[tuple[int, int], float]:
    """Cell-level t-test log p-values keeping the (shrunk) LASSO coefficients.

    The p-value machinery is the plain full-design OLS one; the numerator
    keeps the penalized coefficient, so neither the shrinkage bias nor the
    selection is adjusted for.
    """
    entries = {}
    for u, fit in enumerate(fits):
        for j in fit.active_set:
            t_stat = abs(fit.beta_hat[j]) / se[j, u]
            entries[(u, int(j))] = float(math.log(2.0) + sps.t.logsf(t_stat, dof))
    return entries


def _pooled_sigma2(X_in: np.ndarray, Y_in: np.ndarray, fits) -> float:
    """One homogeneous noise variance from the pooled refit residuals."""
    rss = 0.0
    dof = 0
    t_in = X_in.shape[0]
    for u, fit in enumerate(fits):
        if fit.n_active == 0:
            continue
        X_a = X_in[:, fit.active_set]
        resid = Y_in[:, u] - X_a @ (pseudo_inverse(X_a) @ Y_in[:, u])
        rss += float(resid @ resid)
        dof += t_in - fit.n_active
    if dof == 0:
        return float(np.var(Y_in))
    return rss / dof


def _select_any_unit(log_p_cells: np.ndarray, threshold_log: float) -> np.ndarray:
    """Covariates whose best cell clears a log threshold (dense J x N input)."""
    best = log_p_cells.min(axis=1)
    return np.flatnonzero(best <= threshold_log)


def _oos_r2(data: StaircaseData, t_in: int, selected: np.ndarray) -> float:
    """Pooled out-of-sample R^2 of per-unit OLS refits on the selection.

    With nothing selected the model predicts the pooled in-sample mean,
    which scores exactly zero.
    """
    Y_in, Y_out = data.Y[:t_in], data.Y[t_in:]
    baseline = float(Y_in.mean())
    tss = float(np.sum((Y_out - baseline) ** 2))
    if selected.size == 0:
        return 0.0
    X_in, X_out = data.X[:t_in][:, selected], data.X[t_in:][:, selected]
    B = pseudo_inverse(X_in) @ Y_in
    resid = Y_out - X_out @ B
    return 1.0 - float(np.sum(resid * resid)) / tss


def run_benchmarks(data: StaircaseData, config: SimConfig, seed) -> dict[str, MethodResult]:
    """All six selection methods on one panel draw.

    The first ``split`` share of periods is used for selection and
    estimation, the remainder for out-of-sample scoring.
    """
    t_in = int(round(config.split * config.n_periods))
    X_in, Y_in = data.X[:t_in], data.Y[:t_in]
    n_units, n_cov = config.n_units, config.n_covariates
    gamma = config.gamma
    truth = np.zeros(n_cov, dtype=bool)
    truth[data.true_covariates] = True
    log_jn = np.log(n_cov * n_units)

    # OLS benchmarks on the full design
    B_ols, se_ols, dof_ols = _ols_machinery(X_in, Y_in)
    ols_log_p = np.log(2.0) + sps.t.logsf(np.abs(B_ols) / se_ols, dof_ols)
    selections = {
        "N-OLS": _select_any_unit(ols_log_p, np.log(gamma)),
        "B-OLS": _select_any_unit(ols_log_p, np.log(gamma) - log_jn),
    }

    # Shared first-stage LASSO fits
    weights = wlasso.uniform_weights(n_cov)
    if config.lambda_mode == "cv":
        grid = wlasso.lambda_grid(n_cov, t_in)
        lam_per_unit = wlasso.cross_validate_panel(
            X_in, Y_in, weights, grid, config.folds, seed,
            pooled=config.shared_lambda,
            band="sd" if config.shared_lambda else "se",
        )
    else:
        lam_per_unit = np.full(n_units, float(config.lambda_mode))

    fits = [
        wlasso.fit_weighted_lasso(X_in, Y_in[:, u], lam_per_unit[u], weights, unit=u)
        for u in range(n_units)
    ]

    # Naive LASSO: shrunk coefficients against the plain OLS machinery
    naive_entries = _naive_lasso_log_p(fits, se_ols, dof_ols)
    naive_P = panel_mt.PValueMatrix(n_units, n_cov, naive_entries)
    selections["N-LASSO"] = np.array(
        panel_mt.bonferroni_reject(naive_P, gamma, "naive").rejected_covariates, dtype=int
    ) if naive_entries else np.array([], dtype=int)
    selections["B-LASSO"] = np.array(
        panel_mt.bonferroni_reject(naive_P, gamma, "bonferroni").rejected_covariates, dtype=int
    ) if naive_entries else np.array([], dtype=int)

    # Post-selection inference p-values on the same fits
    if config.sigma_mode == "pooled":
        sigma2 = _pooled_sigma2(X_in, Y_in, fits)
        variance_kwargs = dict(variance="known", sigma2=sigma2)
    else:
        variance_kwargs = dict(variance="estimated")
    unit_results = [
        posi.unit_pipeline(
            X_in, Y_in[:, u], fits[u].lam, weights,
            unit=u, fit=fits[u], warn_dims=False, **variance_kwargs,
        )
        for u in range(n_units)
    ]
    posi_P = panel_mt.build_pvalue_matrix(unit_results, n_units, n_cov)
    selections["B-PoSI"] = np.array(
        panel_mt.bonferroni_reject(posi_P, gamma, "bonferroni").rejected_covariates, dtype=int
    )
    if posi_P.n_entries:
        selections["P-PoSI"] = np.array(
            panel_mt.fwer_reject(posi_P, gamma).rejected_covariates, dtype=int
        )
    else:
        selections["P-PoSI"] = np.array([], dtype=int)

    out = {}
    for method in METHODS:
        sel = np.asarray(selections[method], dtype=int)
        n_correct = int(truth[sel].sum())
        out[method] = MethodResult(
            selected=sel,
            n_false=int(sel.size - n_correct),
            n_correct=n_correct,
            oos_r2=_oos_r2(data, t_in, sel),
        )
    return out


@dataclass(frozen=True)
class SimReport:
    config: SimConfig
    per_rep: list[dict[str, MethodResult]]

    def mean_table(self) -> dict[str, dict[str, float]]:
        """Per-method averages over replications, in benchmark order."""
        table = {}
        for method in METHODS:
            rows = [rep[method] for rep in self.per_rep]
            table[method] = {
                "n_selections": float(np.mean([r.n_selected for r in rows])),
                "n_false": float(np.mean([r.n_false for r in rows])),
                "n_correct": float(np.mean([r.n_correct for r in rows])),
                "oos_r2": float(np.mean([r.oos_r2 for r in rows])),
            }
        return table

    def fwer(self) -> dict[str, float]:
        """Fraction of replications with at least one rejection per method."""
        out = {}
        for method in METHODS:
            out[method] = float(
                np.mean([rep[method].n_selected >= 1 for rep in self.per_rep])
            )
        return out


def _one_rep(config: SimConfig, rep_seed) -> dict[str, MethodResult]:
    data_seq, cv_seq = rep_seed.spawn(2)
    data = gen_staircase(config, data_seq)
    return run_benchmarks(data, config, cv_seq)


def simulate(config: SimConfig, threads: int = 1) -> SimReport:
    """Run ``config.reps`` independent replications and aggregate."""
    seeds = np.random.SeedSequence(config.seed).spawn(config.reps)
    if threads <= 1:
        per_rep = [_one_rep(config, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_rep = list(pool.map(lambda s: _one_rep(config, s), seeds))
    return SimReport(config=config, per_rep=per_rep)


def fwer_monte_carlo(config: SimConfig, reps: int | None = None, seed=None, threads: int = 1) -> dict[str, float]:
    """Empirical FWER per method under the global null (no true factors).

    The panel rejection rule's error guarantee presumes the penalty is
    exogenous at inference time; pass a fixed ``lambda_mode`` to test it
    on its own terms. With ``lambda_mode="cv"`` the selection event is
    conditioned on incompletely (the data also chose the penalty) and the
    measured rate can exceed the nominal level.
    """
    cfg = SimConfig(
        n_units=config.n_units,
        n_covariates=config.n_covariates,
        n_periods=config.n_periods,
        k_true=0,
        noise=config.noise,
        gamma=config.gamma,
        reps=config.reps if reps is None else reps,
        seed=config.seed if seed is None else seed,
        split=config.split,
        lambda_mode=config.lambda_mode,
        folds=config.folds,
        shared_lambda=config.shared_lambda,
        sigma_mode=config.sigma_mode,
    )
    return simulate(cfg, threads=threads).fwer()
