"""Panel-level multiple testing on the sparse matrix of p-values.

Each unit contributes log p-values only for its active covariates, so
the N x J matrix has holes. The hypothesis family consists of the
covariates active for at least one unit. Rejections use per-covariate
simultaneity counts and the panel cohesion coefficient instead of a
blanket Bonferroni factor, which preserves FWER control while remaining
sensitive to covariates that matter for only part of the cross-section.

All comparisons happen in log space: the rejection rule is
min_log_p <= ln(rho) + ln(gamma) - ln(N_j).
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import DuplicateEntry, EmptyFamily
from .posi import PosiCoefficient


@dataclass
class PValueMatrix:
    """Sparse N x J collection of log p-values with derived index sets."""

    n_units: int
    n_covariates: int
    entries: dict[tuple[int, int], float]
    unit_active: list[list[int]] = field(init=False, repr=False)
    covariate_units: list[list[int]] = field(init=False, repr=False)

    def __post_init__(self):
        unit_active: list[list[int]] = [[] for _ in range(self.n_units)]
        covariate_units: list[list[int]] = [[] for _ in range(self.n_covariates)]
        for (n, j), log_p in self.entries.items():
            if not (0 <= n < self.n_units and 0 <= j < self.n_covariates):
                raise IndexError(f"entry ({n}, {j}) outside a {self.n_units} x {self.n_covariates} panel")
            if log_p > 1e-12:
                raise ValueError(f"log p-value at ({n}, {j}) is positive: {log_p}")
            unit_active[n].append(j)
            covariate_units[j].append(n)
        self.unit_active = [sorted(m) for m in unit_active]
        self.covariate_units = [sorted(k) for k in covariate_units]

    @property
    def family(self) -> list[int]:
        """Covariates active somewhere (the tested hypotheses)."""
        return [j for j in range(self.n_covariates) if self.covariate_units[j]]

    @property
    def n_entries(self) -> int:
        return len(self.entries)

    def min_log_p(self, j: int) -> float:
        return min(self.entries[(n, j)] for n in self.covariate_units[j])

    @classmethod
    def from_entries(cls, triples, n_units: int, n_covariates: int) -> "PValueMatrix":
        entries: dict[tuple[int, int], float] = {}
        for n, j, log_p in triples:
            key = (int(n), int(j))
            if key in entries:
                raise DuplicateEntry(f"duplicate p-value for unit {n}, covariate {j}")
            entries[key] = float(log_p)
        return cls(n_units=n_units, n_covariates=n_covariates, entries=entries)


def build_pvalue_matrix(
    unit_results: list[list[PosiCoefficient]],
    n_units: int,
    n_covariates: int,
) -> PValueMatrix:
    """Assemble per-unit inference results into the sparse panel matrix.

    Units with empty active sets simply contribute no entries; this is a
    valid outcome, as is an unbalanced panel upstream.
    """
    triples = []
    for fallback_unit, coefs in enumerate(unit_results):
        for c in coefs:
            unit = c.unit if c.unit is not None else fallback_unit
            triples.append((unit, c.covariate, c.log_p))
    return PValueMatrix.from_entries(triples, n_units, n_covariates)


def simultaneity_counts(P: PValueMatrix) -> dict[int, int]:
    """N_j = total number of active cells across the units where j is active."""
    sizes = [len(m) for m in P.unit_active]
    return {j: sum(sizes[n] for n in P.covariate_units[j]) for j in P.family}


def cohesion(P: PValueMatrix) -> float:
    """Panel cohesion rho = 1 / sum_j |K_j| / N_j, in [1/J, 1]."""
    counts = simultaneity_counts(P)
    if not counts:
        raise EmptyFamily("no covariate is active anywhere")
    total = sum(len(P.covariate_units[j]) / counts[j] for j in counts)
    return 1.0 / total


@dataclass(frozen=True)
class MtDecision:
    """Outcome of the simultaneity-count rejection rule at one level."""

    gamma: float
    rho: float
    family: list[int]
    n_j: dict[int, int]
    min_log_p: dict[int, float]
    score_log: dict[int, float]  # ln(N_j * p_j / rho)
    rejected: dict[int, bool]

    @property
    def rejected_covariates(self) -> list[int]:
        return [j for j in self.family if self.rejected[j]]


def fwer_reject(P: PValueMatrix, gamma: float) -> MtDecision:
    """Reject H_{0,j} iff min_n p_j^(n) <= rho * gamma / N_j (log space)."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    rho = cohesion(P)
    counts = simultaneity_counts(P)
    log_rho = math.log(rho)
    log_gamma = math.log(gamma)
    min_log_p = {j: P.min_log_p(j) for j in counts}
    score_log = {j: min_log_p[j] + math.log(counts[j]) - log_rho for j in counts}
    rejected = {j: min_log_p[j] <= log_rho + log_gamma - math.log(counts[j]) for j in counts}
    return MtDecision(
        gamma=gamma,
        rho=rho,
        family=sorted(counts),
        n_j=counts,
        min_log_p=min_log_p,
        score_log=score_log,
        rejected=rejected,
    )


@dataclass(frozen=True)
class TraverseResult:
    """False-discovery frontier: levels at which K covariates enter."""

    family: list[int]
    gamma_star_log: np.ndarray  # ascending, one value per K = 1..|family|
    ranked_covariates: list[int]

    @property
    def gamma_star(self) -> np.ndarray:
        return np.exp(self.gamma_star_log)

    def k_star(self, gamma: float) -> int:
        """Least number of covariates admitted at FWER level gamma.

        Returns 0 when even the smallest frontier value exceeds gamma.
        Ties produce equal consecutive frontier values, and the largest
        index is returned (including the tied block costs nothing). The
        1e-12 log-slack makes gamma = gamma_star(K) round-trip exactly.
        """
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        return bisect_right(self.gamma_star_log.tolist(), math.log(gamma) + 1e-12)


def traverse(P: PValueMatrix) -> TraverseResult:
    """Sort the per-covariate scores N_j p_j / rho into the frontier."""
    decision = fwer_reject(P, gamma=1.0)
    family = decision.family
    if not family:
        raise EmptyFamily("no covariate is active anywhere")
    scores = np.array([decision.score_log[j] for j in family])
    order = np.argsort(scores, kind="stable")
    return TraverseResult(
        family=family,
        gamma_star_log=scores[order],
        ranked_covariates=[family[i] for i in order],
    )


@dataclass(frozen=True)
class BonferroniDecision:
    gamma: float
    mode: str
    threshold_log: float
    rejected: dict[int, bool]

    @property
    def rejected_covariates(self) -> list[int]:
        return sorted(j for j, r in self.rejected.items() if r)


def bonferroni_reject(P: PValueMatrix, gamma: float, mode: str = "bonferroni") -> BonferroniDecision:
    """Benchmark rules: p <= gamma ("naive") or p <= gamma / (J N) ("bonferroni").

    A covariate is rejected when any of its available p-values clears the
    threshold. Used by the simulation benchmarks on both sparse and full
    matrices.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    if mode == "naive":
        threshold_log = math.log(gamma)
    elif mode == "bonferroni":
        threshold_log = math.log(gamma) - math.log(P.n_covariates * P.n_units)
    else:
        raise ValueError("mode must be 'naive' or 'bonferroni'")
    rejected = {j: P.min_log_p(j) <= threshold_log for j in P.family}
    return BonferroniDecision(gamma=gamma, mode=mode, threshold_log=threshold_log, rejected=rejected)
