"""Step-down testing for covariates with a fixed nesting order.

When column order carries meaning (principal components, refinements),
hypotheses are nested: rejecting order k entails all lower orders. The
procedure condenses the panel into one statistic per order using
cumulative simultaneity counts, transforms p-values into approximate
exponential order statistics, and steps down from the deepest order.

Sign convention: Z accumulates -ln(p) >= 0 and q = exp(-Z) lives in
(0, 1], so q is directly comparable to the rejection threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .panel_mt import PValueMatrix


def ordered_counts(P: PValueMatrix) -> tuple[list[frozenset[int]], np.ndarray]:
    """Cumulative unit sets and cell counts from order k upward.

    The k-th unit set is the union of the active unit sets of covariates
    k..J-1; the k-th count is the total number of active cells among
    those covariates. Counts are nonincreasing in k by construction.
    """
    n_cov = P.n_covariates
    unit_sets: list[frozenset[int]] = [frozenset()] * n_cov
    counts = np.zeros(n_cov, dtype=int)
    acc_set: frozenset[int] = frozenset()
    acc_count = 0
    for k in range(n_cov - 1, -1, -1):
        acc_set = acc_set | frozenset(P.covariate_units[k])
        acc_count += len(P.covariate_units[k])
        unit_sets[k] = acc_set
        counts[k] = acc_count
    return unit_sets, counts


@dataclass(frozen=True)
class OrderedDecision:
    gamma: float
    unit_sets: list[frozenset[int]]
    n_order: np.ndarray
    z: np.ndarray
    q: np.ndarray
    k_hat: int  # number of rejected leading orders, 0..J


def step_down(P: PValueMatrix, gamma: float) -> OrderedDecision:
    """Reject leading orders 1..k_hat with FWER control at gamma.

    Each covariate i contributes its units' -ln(p) scaled by the count
    of cells at orders up to i; partial sums from the tail give Z_k and
    q_k = exp(-Z_k). The deepest k with q_k <= gamma * N_k / (J N) is
    rejected together with everything before it; an all-empty panel
    rejects nothing.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    n_cov = P.n_covariates
    unit_sets, n_order = ordered_counts(P)
    total = int(n_order[0]) if n_cov else 0

    z = np.zeros(n_cov)
    acc = 0.0
    for i in range(n_cov - 1, -1, -1):
        members = P.covariate_units[i]
        if members:
            tail_after = int(n_order[i + 1]) if i + 1 < n_cov else 0
            denom = total - tail_after  # cells at orders <= i; positive when i is active
            acc += sum(-P.entries[(n, i)] for n in members) / denom
        z[i] = acc
    q = np.exp(-z)

    k_hat = 0
    if total > 0:
        log_gamma = math.log(gamma)
        log_jn = math.log(P.n_covariates * P.n_units)
        for k in range(n_cov):
            if n_order[k] == 0:
                continue
            if -z[k] <= log_gamma + math.log(n_order[k]) - log_jn:
                k_hat = max(k_hat, k + 1)
    return OrderedDecision(
        gamma=gamma, unit_sets=unit_sets, n_order=n_order, z=z, q=q, k_hat=k_hat
    )


@dataclass(frozen=True)
class OrderedMcConfig:
    """Synthetic-panel generator settings for the FWER experiment.

    The default activation keeps the expected active-cell count in the
    sparse regime the step-down procedure is built for; its finite-sample
    error control degrades once the total cell count grows well past
    sqrt(J * N).
    """

    n_units: int
    n_covariates: int
    gamma: float
    true_order: int = 0  # orders 1..true_order are non-null
    activation_prob: float = 0.15


def ordered_fwer_mc(config: OrderedMcConfig, reps: int, seed) -> float:
    """Fraction of synthetic panels over-rejecting past the true order.

    Tail cells (order beyond the truth) receive iid Uniform[0, 1]
    p-values; signal cells receive strongly significant ones. The event
    counted is k_hat > true_order (any rejection at all when the truth
    is the global null).
    """
    if not 0 <= config.true_order <= config.n_covariates:
        raise ValueError("true_order must lie in [0, J]")
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(reps):
        active = rng.random((config.n_units, config.n_covariates)) < config.activation_prob
        entries = {}
        for n, j in zip(*np.nonzero(active)):
            u = 1.0 - rng.random()  # (0, 1]
            if j < config.true_order:
                log_p = math.log(u * 1e-8)
            else:
                log_p = math.log(u)
            entries[(int(n), int(j))] = log_p
        P = PValueMatrix(config.n_units, config.n_covariates, entries)
        decision = step_down(P, config.gamma)
        if decision.k_hat >= config.true_order + 1:
            exceed += 1
    return exceed / reps
