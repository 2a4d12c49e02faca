"""Post-selection inference for weighted-LASSO fits.

Conditioning on the selected active set and sign pattern turns the
selection event into a polyhedron {A y <= b}. Along the direction eta
that reads off one debiased coefficient, that polyhedron collapses to an
interval [V-, V+], and the coefficient follows a Gaussian truncated to
it. p-values are computed from that truncated distribution entirely in
log space.

The internal penalty in (A, b) is T * lam because the fit minimizes the
(1/2T)-normalized squared loss while the constraint algebra is written
for the unnormalized stationarity conditions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDof,
    DegenerateIntervalWarning,
    EmptyActiveSet,
    EmptyInterval,
    InconsistentZeroRow,
    OutOfSupport,
    SelectionInfeasible,
)
from .numerics import log_diff_exp, log_norm_cdf, log_norm_sf, ols_solve, pseudo_inverse
from .wlasso import LassoFit, WeightVector, fit_weighted_lasso, uniform_weights

LOG2 = math.log(2.0)

# |A xi| below this times the natural row scale is treated as exactly zero.
ZERO_ROW_RTOL = 1e-12
# Feasibility slack for the observed y inside the polyhedron.
FEASIBILITY_SLACK = 1e-6
# Zero rows must satisfy b - A z >= -ZERO_ROW_FEAS.
ZERO_ROW_FEAS = 1e-8
# Tail-combination shortcut: beyond this log-gap one tail fully dominates.
TAIL_GAP_CUTOFF = 10.0


@dataclass(frozen=True)
class Polyhedron:
    """Selection event {y : A y <= b} for one unit's (M, s)."""

    A: np.ndarray
    b: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.b.size


@dataclass(frozen=True)
class TruncationInterval:
    v_minus: float
    v_plus: float

    def contains(self, x: float) -> bool:
        return self.v_minus <= x <= self.v_plus

    @property
    def width(self) -> float:
        return self.v_plus - self.v_minus


@dataclass(frozen=True)
class PosiCoefficient:
    """Debiased coefficient with its truncation interval and log p-value."""

    unit: int | None
    covariate: int
    beta_bar: float
    eta_norm: float
    scale: float
    interval: TruncationInterval
    log_p: float
    variance_mode: str  # "known" or "estimated"
    sigma_hat: float | None = None


def debias(fit: LassoFit, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """OLS refit on the selected columns (equals the one-step shift)."""
    if fit.n_active == 0:
        raise EmptyActiveSet("no active covariates to debias")
    return ols_solve(np.asarray(X, dtype=float)[:, fit.active_set], y)


def estimate_sigma(X_active: np.ndarray | None, y: np.ndarray, *, intercept: bool = False) -> float:
    """Residual variance ||y - X_M b||^2 / (T - |M|) after the OLS refit.

    With an empty active set the convention is the sample variance of y
    (intercept mode) or the raw second moment (no intercept).
    """
    y = np.asarray(y, dtype=float)
    n_obs = y.size
    if X_active is None or np.size(X_active) == 0:
        if intercept:
            resid = y - y.mean()
            return float(resid @ resid) / (n_obs - 1)
        return float(y @ y) / n_obs
    X_active = np.asarray(X_active, dtype=float)
    if X_active.ndim == 1:
        X_active = X_active[:, None]
    n_active = X_active.shape[1]
    if n_obs <= n_active:
        raise DegenerateDof(f"T={n_obs} must exceed |M|={n_active}")
    resid = y - X_active @ ols_solve(X_active, y)
    return float(resid @ resid) / (n_obs - n_active)


def build_polyhedron(
    fit: LassoFit,
    X: np.ndarray,
    weights: WeightVector | None = None,
    lam: float | None = None,
    *,
    y: np.ndarray | None = None,
) -> Polyhedron:
    """Constraint system equivalent to observing this (M, s) selection.

    Row order: inactive upper bounds, inactive lower bounds, then one
    sign constraint per active covariate. Passing ``y`` verifies that the
    observed response satisfies A y <= b up to solver slack.
    """
    X = np.asarray(X, dtype=float)
    n_obs, n_cov = X.shape
    if fit.n_active == 0:
        raise EmptyActiveSet("polyhedron requires at least one active covariate")
    if weights is None:
        weights = uniform_weights(n_cov)
    lam_eff = float(fit.lam if lam is None else lam) * n_obs
    if lam_eff <= 0:
        raise ValueError("penalty must be positive")

    active = fit.active_set
    inactive = np.setdiff1d(np.arange(n_cov), active, assume_unique=True)
    signs = fit.signs.astype(float)
    inv_omega = weights.inv

    X_a = X[:, active]
    pinv = pseudo_inverse(X_a)  # |M| x T
    s_w = signs * inv_omega[active]

    a_active = -(signs[:, None] * pinv)
    gram_inv_sw = pinv @ (pinv.T @ s_w)  # (X_M' X_M)^{-1} (s * 1/omega_M)
    b_active = -lam_eff * signs * gram_inv_sw

    if inactive.size:
        X_i = X[:, inactive]
        resid_X_i = X_i - X_a @ (pinv @ X_i)  # (I - P_M) X_{-M}, column-wise
        a_up = resid_X_i.T / lam_eff
        shift = X_i.T @ (pinv.T @ s_w)
        inv_omega_i = inv_omega[inactive]
        A = np.vstack([a_up, -a_up, a_active])
        b = np.concatenate([inv_omega_i - shift, inv_omega_i + shift, b_active])
    else:
        A = a_active
        b = b_active

    poly = Polyhedron(A=A, b=b)
    if y is not None:
        slack = A @ np.asarray(y, dtype=float) - b
        tol = FEASIBILITY_SLACK * (1.0 + np.abs(b))
        if np.any(slack > tol):
            worst = float(np.max(slack / tol))
            raise SelectionInfeasible(
                f"observed response violates the selection event (worst relative slack {worst:.3e})"
            )
    return poly


def truncation_interval(
    poly: Polyhedron,
    eta: np.ndarray,
    covariance: float | np.ndarray,
    y: np.ndarray,
) -> TruncationInterval:
    """Range of eta'y compatible with the selection event at fixed z.

    ``covariance`` is either a scalar variance (isotropic noise) or a
    full T x T matrix. Rows orthogonal to the test direction do not
    constrain eta'y and are only checked for feasibility.
    """
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.isscalar(covariance) or np.ndim(covariance) == 0:
        sig_eta = float(covariance) * eta
    else:
        sig_eta = np.asarray(covariance, dtype=float) @ eta
    denom = float(eta @ sig_eta)
    if denom <= 0:
        raise ValueError("eta' Sigma eta must be positive")
    xi = sig_eta / denom
    stat = float(eta @ y)
    z = y - xi * stat

    a_xi = poly.A @ xi
    a_z = poly.A @ z
    margin = poly.b - a_z

    row_scale = np.linalg.norm(poly.A, axis=1) * np.linalg.norm(xi)
    zero_rows = np.abs(a_xi) <= ZERO_ROW_RTOL * np.maximum(row_scale, 1e-300)

    bad = zero_rows & (margin < -ZERO_ROW_FEAS * (1.0 + np.abs(poly.b)))
    if np.any(bad):
        raise InconsistentZeroRow(
            f"{int(bad.sum())} constraint row(s) orthogonal to eta are infeasible"
        )

    neg = (~zero_rows) & (a_xi < 0)
    pos = (~zero_rows) & (a_xi > 0)
    v_minus = float(np.max(margin[neg] / a_xi[neg])) if neg.any() else -math.inf
    v_plus = float(np.min(margin[pos] / a_xi[pos])) if pos.any() else math.inf
    if not v_minus < v_plus:
        raise EmptyInterval(f"V-={v_minus} >= V+={v_plus}")
    return TruncationInterval(v_minus=v_minus, v_plus=v_plus)


def _standardize(x: float, mu: float, sigma: float, v_minus: float, v_plus: float):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not v_minus < v_plus:
        raise EmptyInterval(f"V-={v_minus} >= V+={v_plus}")
    t = (x - mu) / sigma
    a = (v_minus - mu) / sigma if math.isfinite(v_minus) else -math.inf
    b = (v_plus - mu) / sigma if math.isfinite(v_plus) else math.inf
    if t < a or t > b:
        raise OutOfSupport(f"statistic {x} outside truncation [{v_minus}, {v_plus}]")
    return t, a, b


def tn_logcdf(x: float, mu: float, sigma: float, v_minus: float, v_plus: float) -> float:
    """ln P(TN(mu, sigma^2; [v-, v+]) <= x), tail-stable."""
    t, a, b = _standardize(x, mu, sigma, v_minus, v_plus)
    if t == a:
        return -math.inf
    if t == b:
        return 0.0
    if a > 0:
        # whole interval in the upper tail: work with survival functions
        num = log_diff_exp(log_norm_sf(a), log_norm_sf(t))
        den = log_diff_exp(log_norm_sf(a), log_norm_sf(b)) if math.isfinite(b) else log_norm_sf(a)
    else:
        num = log_diff_exp(log_norm_cdf(t), log_norm_cdf(a)) if math.isfinite(a) else log_norm_cdf(t)
        den = (
            log_diff_exp(log_norm_cdf(b), log_norm_cdf(a))
            if math.isfinite(a)
            else log_norm_cdf(b)
        )
    return min(num - den, 0.0)


def tn_log_survival(x: float, mu: float, sigma: float, v_minus: float, v_plus: float) -> float:
    """ln P(TN(mu, sigma^2; [v-, v+]) > x), tail-stable."""
    t, a, b = _standardize(x, mu, sigma, v_minus, v_plus)
    if t == b:
        return -math.inf
    if t == a:
        return 0.0
    if b < 0:
        # whole interval in the lower tail: work with CDFs directly
        num = log_diff_exp(log_norm_cdf(b), log_norm_cdf(t))
        den = log_diff_exp(log_norm_cdf(b), log_norm_cdf(a)) if math.isfinite(a) else log_norm_cdf(b)
    else:
        num = log_diff_exp(log_norm_sf(t), log_norm_sf(b)) if math.isfinite(b) else log_norm_sf(t)
        den = (
            log_diff_exp(log_norm_sf(a), log_norm_sf(b))
            if math.isfinite(b)
            else log_norm_sf(a)
        )
    return min(num - den, 0.0)


def two_sided_log_p(
    stat: float,
    scale: float,
    interval: TruncationInterval,
    *,
    tail_gap_cutoff: float = TAIL_GAP_CUTOFF,
) -> float:
    """Two-sided log p-value 2 * min(F, 1 - F) of the truncated Gaussian.

    When the two log tails differ by more than ``tail_gap_cutoff`` the
    dominated tail cannot move the minimum, so the smaller tail is used
    on its own (it already is the min; the cutoff mirrors the dominant-
    tail approximation used when tails are combined additively).
    """
    if interval.width < 1e-12 * scale:
        warnings.warn(
            "truncation interval is numerically a point; reporting p = 1",
            DegenerateIntervalWarning,
            stacklevel=2,
        )
        return 0.0
    left = tn_logcdf(stat, 0.0, scale, interval.v_minus, interval.v_plus)
    right = tn_log_survival(stat, 0.0, scale, interval.v_minus, interval.v_plus)
    smaller = min(left, right)
    return min(LOG2 + smaller, 0.0)


def posi_pvalue(coef: PosiCoefficient) -> float:
    """Recompute the two-sided log p-value of a coefficient under beta_j = 0."""
    return two_sided_log_p(coef.beta_bar, coef.scale, coef.interval)


def unit_pipeline(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    weights: WeightVector | None = None,
    *,
    variance: str = "estimated",
    sigma2: float | None = None,
    Sigma: np.ndarray | None = None,
    intercept: bool = False,
    unit: int | None = None,
    fit: LassoFit | None = None,
    warn_dims: bool = True,
) -> list[PosiCoefficient]:
    """Fit one unit and return a PosiCoefficient per active covariate.

    ``variance="known"`` uses ``sigma2`` (isotropic) or a full ``Sigma``;
    ``variance="estimated"`` studentizes with the post-refit residual
    variance and the standard-normal truncation on the studentized axis.
    An empty active set is a valid outcome and yields an empty list.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n_obs, n_cov = X.shape
    if warn_dims and n_obs <= n_cov:
        warnings.warn(
            f"T={n_obs} <= J={n_cov}: post-selection validity expects more observations than covariates",
            stacklevel=2,
        )
    if weights is None:
        weights = uniform_weights(n_cov)
    if variance not in ("known", "estimated"):
        raise ValueError("variance must be 'known' or 'estimated'")
    if variance == "known" and sigma2 is None and Sigma is None:
        raise ValueError("known-variance mode needs sigma2 or Sigma")

    if fit is None:
        fit = fit_weighted_lasso(X, y, lam, weights, unit=unit)
    if fit.n_active == 0:
        return []

    active = fit.active_set
    X_a = X[:, active]
    pinv = pseudo_inverse(X_a)
    beta_bar = pinv @ y
    poly = build_polyhedron(fit, X, weights, lam, y=y)

    sigma_hat = None
    if variance == "estimated":
        sigma_hat = math.sqrt(estimate_sigma(X_a, y, intercept=intercept))
        cov: float | np.ndarray = 1.0  # xi is scale-free under isotropic noise
    else:
        cov = float(sigma2) if Sigma is None else np.asarray(Sigma, dtype=float)

    out = []
    for pos, j in enumerate(active):
        eta = pinv[pos]
        eta_norm = float(np.linalg.norm(eta))
        interval = truncation_interval(poly, eta, cov, y)
        if variance == "estimated":
            scale = eta_norm * sigma_hat
        elif Sigma is None:
            scale = math.sqrt(float(sigma2)) * eta_norm
        else:
            scale = math.sqrt(float(eta @ (np.asarray(Sigma, dtype=float) @ eta)))
        log_p = two_sided_log_p(float(beta_bar[pos]), scale, interval)
        out.append(
            PosiCoefficient(
                unit=unit if unit is not None else fit.unit,
                covariate=int(j),
                beta_bar=float(beta_bar[pos]),
                eta_norm=eta_norm,
                scale=scale,
                interval=interval,
                log_p=log_p,
                variance_mode=variance,
                sigma_hat=sigma_hat,
            )
        )
    return out
