"""Per-unit weighted-LASSO estimation.

Solves, for a response ``y`` over ``T`` periods and candidate matrix ``X``,

    minimize  (1/2T) ||y - X beta||^2  +  lam * sum_j |beta_j| / omega_j

with per-covariate prior weights ``omega_j in (0, +inf]``; an infinite
weight removes the penalty on that coordinate entirely. The solver is
cyclic coordinate descent on the Gram ("covariance") representation so
that the many per-unit fits of a panel can share one Gram matrix.

Columns are never standardized here: downstream truncation algebra is
written for the raw design, and silent rescaling would corrupt it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AllInfinite, NoConvergence, SingularDesign
from .numerics import COND_CAP

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

DEFAULT_TOL = 1e-9
DEFAULT_KKT_TOL = 1e-7
MAX_SWEEPS = 100_000


@dataclass(frozen=True)
class WeightVector:
    """Normalized prior weights: finite reciprocals sum to J."""

    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))

    @property
    def inv(self) -> np.ndarray:
        """Elementwise 1/omega with the convention 1/inf = 0."""
        with np.errstate(divide="ignore"):
            out = 1.0 / self.omega
        out[~np.isfinite(self.omega)] = 0.0
        return out

    def __len__(self) -> int:
        return self.omega.size


def uniform_weights(n_covariates: int) -> WeightVector:
    return WeightVector(np.ones(n_covariates))


def normalize_weights(raw) -> WeightVector:
    """Rescale finite weights so that their reciprocals sum to J.

    Infinite entries (unpenalized priors) are preserved as-is and
    contribute zero to the reciprocal sum.
    """
    raw = np.asarray(raw, dtype=float)
    if np.any(raw <= 0) or np.any(np.isnan(raw)):
        raise ValueError("weights must be strictly positive (inf allowed)")
    finite = np.isfinite(raw)
    if not finite.any():
        raise AllInfinite("normalization undefined: every weight is infinite")
    j_total = raw.size
    recip_sum = float(np.sum(1.0 / raw[finite]))
    scale = recip_sum / j_total
    omega = raw.copy()
    omega[finite] = raw[finite] * scale
    return WeightVector(omega)


def lambda_grid(n_covariates: int, n_periods: int) -> np.ndarray:
    """Log-linear penalty grid exp(a) * ln(J) / sqrt(T) for a = -8..8."""
    if n_covariates < 2 or n_periods < 2:
        raise ValueError("grid needs J >= 2 and T >= 2")
    a = np.arange(-8, 9, dtype=float)
    return np.exp(a) * np.log(n_covariates) / np.sqrt(n_periods)


@dataclass(frozen=True)
class LassoFit:
    """One unit's weighted-LASSO solution."""

    lam: float
    beta_hat: np.ndarray
    active_set: np.ndarray
    signs: np.ndarray
    kkt_gap: float
    unit: int | None = None
    n_sweeps: int = field(default=0, compare=False)

    @property
    def n_active(self) -> int:
        return int(self.active_set.size)


@njit(cache=True, nogil=True)
def _cd_core(G, c, inv_omega, lam, beta, r, tol, kkt_tol, max_sweeps):
    """One weighted-LASSO solve on the Gram representation.

    ``beta`` and ``r = c - G @ beta`` are updated in place (warm starts).
    Returns (sweeps used or -1 if the cap was hit, final KKT gap).
    """
    n = G.shape[0]
    gap = np.inf
    for sweep in range(max_sweeps):
        max_delta = 0.0
        max_abs = 0.0
        for j in range(n):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            bj = beta[j]
            rho = r[j] + gjj * bj
            t = lam * inv_omega[j]
            if t == 0.0:
                bn = rho / gjj
            elif rho > t:
                bn = (rho - t) / gjj
            elif rho < -t:
                bn = (rho + t) / gjj
            else:
                bn = 0.0
            d = bn - bj
            if d != 0.0:
                beta[j] = bn
                for k in range(n):
                    r[k] -= G[k, j] * d
                if abs(d) > max_delta:
                    max_delta = abs(d)
            if abs(bn) > max_abs:
                max_abs = abs(bn)
        gap = 0.0
        for j in range(n):
            t = lam * inv_omega[j]
            if t == 0.0:
                g = abs(r[j])
            elif beta[j] != 0.0:
                if beta[j] > 0.0:
                    g = abs(r[j] - t)
                else:
                    g = abs(r[j] + t)
            else:
                g = abs(r[j]) / t - 1.0
                if g < 0.0:
                    g = 0.0
            if g > gap:
                gap = g
        if max_delta < tol * (1.0 + max_abs) and gap < kkt_tol:
            return sweep + 1, gap
    return -1, gap


@njit(cache=True, nogil=True)
def _cd_path(G, c, inv_omega, lams, tol, kkt_tol, max_sweeps):
    """Warm-started solves along a descending penalty sequence."""
    n_lam = lams.shape[0]
    n = G.shape[0]
    coefs = np.zeros((n_lam, n))
    gaps = np.zeros(n_lam)
    sweeps = np.zeros(n_lam, dtype=np.int64)
    beta = np.zeros(n)
    r = c.copy()
    for li in range(n_lam):
        sw, gap = _cd_core(G, c, inv_omega, lams[li], beta, r, tol, kkt_tol, max_sweeps)
        coefs[li] = beta
        gaps[li] = gap
        sweeps[li] = sw
    return coefs, gaps, sweeps


def _check_unpenalized_block(X: np.ndarray, weights: WeightVector) -> None:
    unpen = ~np.isfinite(weights.omega)
    if not unpen.any():
        return
    block = X[:, unpen]
    s = np.linalg.svd(block, compute_uv=False)
    if s[0] == 0.0 or s[-1] == 0.0 or s[0] / s[-1] > COND_CAP:
        raise SingularDesign("unpenalized (infinite-weight) columns are collinear")


def fit_weighted_lasso(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    weights: WeightVector | None = None,
    *,
    unit: int | None = None,
    tol: float = DEFAULT_TOL,
    kkt_tol: float = DEFAULT_KKT_TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> LassoFit:
    """Fit the weighted LASSO for one unit at a fixed penalty."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if lam <= 0:
        raise ValueError("lam must be positive")
    n_obs, n_cov = X.shape
    if weights is None:
        weights = uniform_weights(n_cov)
    if len(weights) != n_cov:
        raise ValueError("weights length must match number of covariates")
    _check_unpenalized_block(X, weights)

    G = (X.T @ X) / n_obs
    c = (X.T @ y) / n_obs
    beta = np.zeros(n_cov)
    r = c.copy()
    sweeps, gap = _cd_core(
        G, c, weights.inv, float(lam), beta, r, tol, kkt_tol, max_sweeps
    )
    if sweeps < 0:
        raise NoConvergence(
            f"coordinate descent hit {max_sweeps} sweeps (KKT gap {gap:.3e})", gap
        )
    return _fit_from_beta(beta, lam, gap, unit, sweeps)


def _fit_from_beta(beta, lam, gap, unit, sweeps) -> LassoFit:
    active = np.flatnonzero(beta)
    return LassoFit(
        lam=float(lam),
        beta_hat=beta.copy(),
        active_set=active,
        signs=np.sign(beta[active]).astype(int),
        kkt_gap=float(gap),
        unit=unit,
        n_sweeps=int(sweeps),
    )


def kkt_check(fit: LassoFit, X: np.ndarray, y: np.ndarray, weights: WeightVector | None = None) -> np.ndarray:
    """Per-coordinate stationarity gaps at a fitted solution.

    Active penalized coordinates report |X_j'(X b - y)/T + lam s_j/omega_j|,
    inactive ones the relative overshoot of the subgradient bound, and
    unpenalized coordinates the raw gradient magnitude.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n_obs, n_cov = X.shape
    if weights is None:
        weights = uniform_weights(n_cov)
    grad = X.T @ (X @ fit.beta_hat - y) / n_obs
    inv_omega = weights.inv
    gaps = np.empty(n_cov)
    for j in range(n_cov):
        t = fit.lam * inv_omega[j]
        if t == 0.0:
            gaps[j] = abs(grad[j])
        elif fit.beta_hat[j] != 0.0:
            gaps[j] = abs(grad[j] + t * np.sign(fit.beta_hat[j]))
        else:
            gaps[j] = max(0.0, abs(grad[j]) / t - 1.0)
    return gaps


def objective_value(X, y, beta, lam, weights: WeightVector) -> float:
    """(1/2T)||y - X beta||^2 + lam sum_j |beta_j|/omega_j."""
    n_obs = X.shape[0]
    resid = y - X @ beta
    return 0.5 * float(resid @ resid) / n_obs + lam * float(np.abs(beta) @ weights.inv)


def _fold_blocks(n_obs: int, folds: int, seed) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_obs)
    return np.array_split(perm, folds)


def cross_validate_panel(
    X: np.ndarray,
    Y: np.ndarray,
    weights: WeightVector | None,
    grid: np.ndarray,
    folds: int,
    seed,
    *,
    pooled: bool = False,
    band: str = "se",
    tol: float = DEFAULT_TOL,
    kkt_tol: float = DEFAULT_KKT_TOL,
    max_sweeps: int = MAX_SWEEPS,
) -> np.ndarray:
    """Parsimonious cross-validated penalty choice for a panel.

    ``Y`` is T x N; all units share the fold split (seeded permutation cut
    into contiguous blocks) and therefore the per-fold Gram matrices.
    Returns the chosen penalty per unit: the largest grid value whose mean
    held-out squared error stays within one tolerance band of the minimum.
    ``band="se"`` uses the standard error of the fold means (the glmnet
    convention), ``band="sd"`` the fold standard deviation. With
    ``pooled=True`` the errors are averaged across units first and a
    single panel-wide penalty is returned for every unit.
    """
    X = np.ascontiguousarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n_obs, n_cov = X.shape
    n_units = Y.shape[1]
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n_obs < 2 * folds:
        raise ValueError("need T >= 2 * folds observations")
    if weights is None:
        weights = uniform_weights(n_cov)
    inv_omega = weights.inv

    grid = np.asarray(grid, dtype=float)
    order = np.argsort(grid)[::-1]  # fit from harshest penalty down, warm-started
    lams_desc = grid[order]

    blocks = _fold_blocks(n_obs, folds, seed)
    fold_mse = np.empty((folds, len(grid), n_units))
    for fi, val_idx in enumerate(blocks):
        mask = np.ones(n_obs, dtype=bool)
        mask[val_idx] = False
        X_tr, X_val = X[mask], X[val_idx]
        Y_tr, Y_val = Y[mask], Y[val_idx]
        t_tr = X_tr.shape[0]
        G = (X_tr.T @ X_tr) / t_tr
        C = (X_tr.T @ Y_tr) / t_tr
        for u in range(n_units):
            coefs, _, sweeps = _cd_path(
                G, np.ascontiguousarray(C[:, u]), inv_omega, lams_desc,
                tol, kkt_tol, max_sweeps,
            )
            if np.any(sweeps < 0):
                raise NoConvergence("cross-validation fit did not converge", np.nan)
            pred = X_val @ coefs.T  # (n_val, n_lam)
            err = pred - Y_val[:, u][:, None]
            fold_mse[fi, order, u] = np.mean(err * err, axis=0)

    if band not in ("se", "sd"):
        raise ValueError("band must be 'se' or 'sd'")
    if pooled:
        fold_mse = fold_mse.mean(axis=2, keepdims=True)
    mean_mse = fold_mse.mean(axis=0)  # (n_lam, n_units or 1)
    chosen = np.empty(mean_mse.shape[1])
    for u in range(mean_mse.shape[1]):
        best = int(np.argmin(mean_mse[:, u]))
        tol_band = float(np.std(fold_mse[:, best, u], ddof=1))
        if band == "se":
            tol_band /= np.sqrt(folds)
        within = mean_mse[:, u] <= mean_mse[best, u] + tol_band
        chosen[u] = grid[within].max()
    if pooled:
        chosen = np.full(n_units, chosen[0])
    return chosen


def cross_validate(
    X: np.ndarray,
    y: np.ndarray,
    weights: WeightVector | None,
    grid: np.ndarray,
    folds: int,
    seed,
) -> float:
    """Single-unit wrapper around :func:`cross_validate_panel`."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 1:
        return float(grid[0])
    return float(cross_validate_panel(X, np.asarray(y), weights, grid, folds, seed)[0])
