"""Dense least-squares kernels and log-space Gaussian tail functions.

Everything here is a pure function. Linear solves go through a
rank-revealing SVD factorization instead of explicit Gram inversion; a
condition number above ``COND_CAP`` is treated as a rank failure.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import log_ndtr

from .errors import InvalidOrder, SingularDesign

# Condition-number cap defining SingularDesign for all solves.
COND_CAP = 1e12

LOG_HALF = math.log(0.5)


def _as_matrix(design: np.ndarray) -> np.ndarray:
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    return design


def ols_solve(design: np.ndarray, response: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of ``response`` on ``design``.

    Raises SingularDesign when the design is rank deficient or its
    condition number exceeds ``COND_CAP``.
    """
    design = _as_matrix(design)
    response = np.asarray(response, dtype=float)
    t, k = design.shape
    if t < k:
        raise SingularDesign(f"need at least as many rows as columns ({t} < {k})")
    u, s, vt = np.linalg.svd(design, full_matrices=False)
    if s[0] == 0.0 or s[-1] == 0.0 or s[0] / s[-1] > COND_CAP:
        raise SingularDesign(
            f"design condition number {s[0] / max(s[-1], 1e-300):.3e} exceeds cap {COND_CAP:.1e}"
        )
    return vt.T @ ((u.T @ response) / s)


def pseudo_inverse(design: np.ndarray) -> np.ndarray:
    """Moore-Penrose inverse of a full-column-rank design, cond-checked."""
    design = _as_matrix(design)
    u, s, vt = np.linalg.svd(design, full_matrices=False)
    if s[0] == 0.0 or s[-1] == 0.0 or s[0] / s[-1] > COND_CAP:
        raise SingularDesign(
            f"design condition number {s[0] / max(s[-1], 1e-300):.3e} exceeds cap {COND_CAP:.1e}"
        )
    return (vt.T / s) @ u.T


def projection_residual(design_active: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Residual of ``v`` after projecting onto the columns of ``design_active``.

    An empty active set projects onto nothing, so ``v`` is returned
    unchanged. Idempotent and self-adjoint by construction.
    """
    v = np.asarray(v, dtype=float)
    if design_active is None or np.size(design_active) == 0:
        return v.copy()
    design_active = _as_matrix(design_active)
    q = _orthonormal_basis(design_active)
    return v - q @ (q.T @ v)


def _orthonormal_basis(design: np.ndarray) -> np.ndarray:
    u, s, _ = np.linalg.svd(design, full_matrices=False)
    if s[0] == 0.0 or s[-1] == 0.0 or s[0] / s[-1] > COND_CAP:
        raise SingularDesign(
            f"active columns condition number {s[0] / max(s[-1], 1e-300):.3e} exceeds cap"
        )
    return u


def log_norm_cdf(x):
    """ln Phi(x), accurate across the whole support (scalar or array)."""
    return log_ndtr(x)


def log_norm_sf(x):
    """ln (1 - Phi(x)) = ln Phi(-x)."""
    return log_ndtr(np.negative(x))


def log_diff_exp(a: float, b: float) -> float:
    """ln(exp(a) - exp(b)) for a > b, without underflow.

    Uses log1p(-exp(b - a)) when the gap is small and log(-expm1(b - a))
    otherwise, the standard split at ln 2.
    """
    if not a > b:
        raise InvalidOrder(f"log_diff_exp requires a > b, got a={a!r}, b={b!r}")
    if b == -math.inf:
        return a
    d = b - a
    # d < 0; the two branches are exact rearrangements of ln(1 - e^d).
    if d < -math.log(2.0):
        return a + math.log1p(-math.exp(d))
    return a + math.log(-math.expm1(d))
