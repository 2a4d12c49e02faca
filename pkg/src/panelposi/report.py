"""Report writers: delimited output, JSON decisions, and rendered figures.

The CLI emits machine-readable CSV/JSON first; the figures are rendered
next to them from the same objects so a run directory is self-contained.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .ordered import OrderedDecision
from .panel_mt import MtDecision, PValueMatrix, TraverseResult
from .posi import PosiCoefficient
from .simlab import METHODS, SimReport

P_DISPLAY_FLOOR = 1e-300


def clip_p(log_p: float) -> float:
    """exp(log p) floored at the display limit to survive CSV round trips."""
    p = math.exp(log_p) if log_p > -745.0 else 0.0
    return max(p, P_DISPLAY_FLOOR)


def pvalues_frame(
    unit_results: list[list[PosiCoefficient]],
    unit_names: list[str],
    covariate_names: list[str],
) -> pd.DataFrame:
    rows = []
    for coefs in unit_results:
        for c in coefs:
            rows.append(
                {
                    "unit": unit_names[c.unit],
                    "covariate": covariate_names[c.covariate],
                    "beta_bar": c.beta_bar,
                    "log_p": c.log_p,
                    "p_value": clip_p(c.log_p),
                    "v_minus": c.interval.v_minus,
                    "v_plus": c.interval.v_plus,
                    "sigma_hat": c.sigma_hat if c.sigma_hat is not None else float("nan"),
                }
            )
    return pd.DataFrame(
        rows,
        columns=["unit", "covariate", "beta_bar", "log_p", "p_value", "v_minus", "v_plus", "sigma_hat"],
    )


def decisions_payload(decision: MtDecision, covariate_names: list[str]) -> dict:
    return {
        "gamma": decision.gamma,
        "rho": decision.rho,
        "covariates": [
            {
                "name": covariate_names[j],
                "N_j": decision.n_j[j],
                "min_log_p": decision.min_log_p[j],
                "score_log": decision.score_log[j],
                "rejected": bool(decision.rejected[j]),
            }
            for j in decision.family
        ],
    }


def frontier_frame(frontier: TraverseResult) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "K": np.arange(1, len(frontier.family) + 1),
            "gamma_star": frontier.gamma_star,
            "covariate": frontier.ranked_covariates,
        }
    )


def ordered_payload(decision: OrderedDecision, covariate_names: list[str]) -> dict:
    return {
        "gamma": decision.gamma,
        "k_hat": decision.k_hat,
        "orders": [
            {
                "order": k + 1,
                "covariate": covariate_names[k],
                "N_order": int(decision.n_order[k]),
                "z": float(decision.z[k]),
                "q": float(decision.q[k]),
            }
            for k in range(len(covariate_names))
        ],
    }


def sim_table_frame(report: SimReport) -> pd.DataFrame:
    table = report.mean_table()
    rows = [
        {
            "method": method,
            "n_selections": table[method]["n_selections"],
            "n_false": table[method]["n_false"],
            "n_correct": table[method]["n_correct"],
            "oos_r2": table[method]["oos_r2"],
        }
        for method in METHODS
    ]
    return pd.DataFrame(rows)


def write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def render_frontier_figure(frontier: TraverseResult, path: Path) -> None:
    """Step plot of the false-discovery frontier gamma*(K)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    k = np.arange(1, len(frontier.family) + 1)
    ax.step(k, np.clip(frontier.gamma_star, 1e-300, None), where="post", marker="o")
    ax.set_yscale("log")
    ax.set_xlabel("number of admitted covariates K")
    ax.set_ylabel(r"required FWER level $\gamma^*(K)$")
    ax.set_title("False-discovery control frontier")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_selection_map(
    P: PValueMatrix,
    covariate_names: list[str],
    path: Path,
    max_units: int = 80,
) -> None:
    """Heatmap of -log10 p over the active cells; holes stay blank."""
    n_units = min(P.n_units, max_units)
    grid = np.full((n_units, P.n_covariates), np.nan)
    for (n, j), log_p in P.entries.items():
        if n < n_units:
            grid[n, j] = -log_p / math.log(10.0)
    fig, ax = plt.subplots(figsize=(max(6, P.n_covariates * 0.25), max(4, n_units * 0.1)))
    im = ax.imshow(grid, aspect="auto", interpolation="nearest", cmap="viridis")
    fig.colorbar(im, ax=ax, label=r"$-\log_{10} p$")
    ax.set_xlabel("covariate")
    ax.set_ylabel("unit")
    if P.n_covariates <= 40:
        ax.set_xticks(range(P.n_covariates))
        ax.set_xticklabels(covariate_names, rotation=90, fontsize=7)
    title = "Active cells and post-selection p-values"
    if P.n_units > n_units:
        title += f" (first {n_units} of {P.n_units} units)"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sim_figure(report: SimReport, path: Path) -> None:
    """Selection counts and out-of-sample fit per benchmark method."""
    table = report.mean_table()
    x = np.arange(len(METHODS))
    correct = [table[m]["n_correct"] for m in METHODS]
    false = [table[m]["n_false"] for m in METHODS]
    r2 = [table[m]["oos_r2"] * 100 for m in METHODS]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.bar(x - 0.2, correct, width=0.4, label="correct")
    ax1.bar(x + 0.2, false, width=0.4, label="false")
    ax1.set_xticks(x)
    ax1.set_xticklabels(METHODS, rotation=30, ha="right")
    ax1.set_ylabel("mean selections per replication")
    ax1.legend()
    ax1.grid(True, axis="y", alpha=0.3)

    ax2.bar(x, r2, color="tab:green")
    ax2.set_xticks(x)
    ax2.set_xticklabels(METHODS, rotation=30, ha="right")
    ax2.set_ylabel("out-of-sample $R^2$ (%)")
    ax2.axhline(0.0, color="k", lw=0.8)
    ax2.grid(True, axis="y", alpha=0.3)

    fig.suptitle("Benchmark comparison")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
