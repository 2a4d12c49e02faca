"""Command-line interface: panel ingestion, the full selection pipeline,
and the simulation lab.

Two subcommands:

``panelposi panel-posi``  runs per-unit weighted-LASSO + post-selection
inference on user CSVs (or ingests precomputed p-values), applies the
panel multiple-testing rule, and writes pvalues.csv, decisions.json,
frontier.csv (+ ordered.json) plus rendered figures.

``panelposi simulate``  runs the benchmark study and writes table3.csv
plus a comparison figure.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 config error.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import ordered, panel_mt, posi, report, simlab, wlasso
from .errors import (
    ConfigError,
    NoConvergence,
    PanelPosiError,
    ParseError,
    SelectionInfeasible,
    ShapeMismatch,
    SingularDesign,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_CONFIG = 4

_NUMERICAL_ERRORS = (SingularDesign, SelectionInfeasible, NoConvergence)
_INPUT_ERRORS = (ParseError, ShapeMismatch, FileNotFoundError)


@dataclass
class PanelData:
    """Observed panel and covariate candidates with per-unit time masks."""

    Y: np.ndarray  # T x N, NaN marks missing cells
    X: np.ndarray  # T x J
    unit_names: list[str]
    covariate_names: list[str]

    @property
    def n_units(self) -> int:
        return len(self.unit_names)

    @property
    def n_covariates(self) -> int:
        return len(self.covariate_names)

    def unit_mask(self, n: int) -> np.ndarray:
        return ~np.isnan(self.Y[:, n])


def _read_csv(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        return pd.read_csv(path)
    except Exception as exc:  # pandas raises many flavors; report location if known
        raise ParseError(f"{path}: {exc}") from exc


def load_panel(y_path: str | Path, x_path: str | Path) -> PanelData:
    """Read Y (T x N units) and X (T x J covariates) CSVs with headers.

    Empty cells in Y become per-unit time masks; X must be complete.
    """
    y_df = _read_csv(y_path)
    x_df = _read_csv(x_path)
    if len(y_df) != len(x_df):
        raise ShapeMismatch(
            f"Y has {len(y_df)} rows but X has {len(x_df)}; panels must share the time axis"
        )
    for name, df in (("Y", y_df), ("X", x_df)):
        non_numeric = [c for c in df.columns if not np.issubdtype(df[c].dtype, np.number)]
        if non_numeric:
            raise ParseError(f"{name} column(s) {non_numeric} are not numeric")
    X = x_df.to_numpy(dtype=float)
    if np.isnan(X).any():
        t, j = np.argwhere(np.isnan(X))[0]
        raise ParseError(f"X has an empty cell at row {t + 2}, column '{x_df.columns[j]}'")
    Y = y_df.to_numpy(dtype=float)
    for n in range(Y.shape[1]):
        if (~np.isnan(Y[:, n])).sum() < 2:
            raise ShapeMismatch(f"unit '{y_df.columns[n]}' has fewer than 2 observations")
    return PanelData(
        Y=Y, X=X,
        unit_names=[str(c) for c in y_df.columns],
        covariate_names=[str(c) for c in x_df.columns],
    )


def load_weights(path: str | Path, covariate_names: list[str]) -> wlasso.WeightVector:
    """Two-column CSV (covariate, weight); 'inf' marks unpenalized priors.

    Unlisted covariates default to weight 1 before normalization.
    """
    df = _read_csv(path)
    if df.shape[1] < 2:
        raise ParseError(f"{path}: expected two columns (covariate, weight)")
    raw = np.ones(len(covariate_names))
    index = {name: i for i, name in enumerate(covariate_names)}
    for row_num, (cov, w) in enumerate(zip(df.iloc[:, 0], df.iloc[:, 1]), start=2):
        cov = str(cov)
        if cov not in index:
            raise ParseError(f"{path} row {row_num}: unknown covariate '{cov}'")
        if isinstance(w, str) and w.strip().lower() == "inf":
            raw[index[cov]] = math.inf
            continue
        try:
            raw[index[cov]] = float(w)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path} row {row_num}: bad weight {w!r}") from exc
    return wlasso.normalize_weights(raw)


def load_pvalue_matrix(path: str | Path) -> tuple[panel_mt.PValueMatrix, list[str], list[str]]:
    """Ingest a precomputed sparse p-value table (unit, covariate, log_p).

    Accepts a ``p_value`` column instead of ``log_p``. Unit and covariate
    labels are indexed in order of first appearance, which fixes the
    nesting order for the ordered procedure.
    """
    df = _read_csv(path)
    cols = {c.lower(): c for c in df.columns}
    if "unit" not in cols or "covariate" not in cols:
        raise ParseError(f"{path}: need 'unit' and 'covariate' columns")
    if "log_p" in cols:
        log_p = df[cols["log_p"]].to_numpy(dtype=float)
    elif "p_value" in cols:
        p = df[cols["p_value"]].to_numpy(dtype=float)
        if np.any(p <= 0) or np.any(p > 1):
            raise ParseError(f"{path}: p_value entries must lie in (0, 1]")
        log_p = np.log(p)
    else:
        raise ParseError(f"{path}: need a 'log_p' or 'p_value' column")

    units: list[str] = []
    covs: list[str] = []
    u_idx: dict[str, int] = {}
    c_idx: dict[str, int] = {}
    triples = []
    for u, c, lp in zip(df[cols["unit"]], df[cols["covariate"]], log_p):
        u, c = str(u), str(c)
        if u not in u_idx:
            u_idx[u] = len(units)
            units.append(u)
        if c not in c_idx:
            c_idx[c] = len(covs)
            covs.append(c)
        triples.append((u_idx[u], c_idx[c], float(lp)))
    P = panel_mt.PValueMatrix.from_entries(triples, len(units), len(covs))
    return P, units, covs


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    generated = int(np.random.SeedSequence().entropy % (2**32))
    print(f"[panelposi] no --seed given; using generated seed {generated}", file=sys.stderr)
    return generated


def _unit_inference(panel: PanelData, args, weights, seed) -> list[list[posi.PosiCoefficient]]:
    """Per-unit penalty choice + fit + post-selection p-values."""
    X_full = panel.X
    if args.intercept:
        X_full = np.hstack([X_full, np.ones((X_full.shape[0], 1))])
        omega = np.append(weights.omega, math.inf)
        weights = wlasso.WeightVector(omega)
    n_cov = panel.n_covariates

    def one_unit(n: int) -> list[posi.PosiCoefficient]:
        mask = panel.unit_mask(n)
        X_n = X_full[mask]
        y_n = panel.Y[mask, n]
        if args.lam == "cv":
            grid = wlasso.lambda_grid(max(X_n.shape[1], 2), X_n.shape[0])
            lam = wlasso.cross_validate(X_n, y_n, weights, grid, args.folds, (seed, n))
        else:
            lam = float(args.lam)
        coefs = posi.unit_pipeline(
            X_n, y_n, lam, weights,
            variance=args.variance, sigma2=args.sigma2,
            intercept=args.intercept, unit=n, warn_dims=False,
        )
        # the appended intercept column is conditioned on but never tested
        return [c for c in coefs if c.covariate < n_cov]

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            return list(pool.map(one_unit, range(panel.n_units)))
    return [one_unit(n) for n in range(panel.n_units)]


def cmd_panel_posi(args) -> int:
    if not 0.0 < args.gamma <= 1.0:
        raise ConfigError(f"--gamma must be in (0, 1], got {args.gamma}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = _resolve_seed(args.seed)

    if args.pvalues_in:
        P, unit_names, covariate_names = load_pvalue_matrix(args.pvalues_in)
        unit_results = None
    else:
        if not (args.y and args.x):
            raise ConfigError("panel-posi needs --y and --x (or --pvalues-in)")
        panel = load_panel(args.y, args.x)
        weights = (
            load_weights(args.weights, panel.covariate_names)
            if args.weights
            else wlasso.uniform_weights(panel.n_covariates)
        )
        if args.variance == "known" and args.sigma2 is None:
            raise ConfigError("--variance known requires --sigma2")
        unit_names, covariate_names = panel.unit_names, panel.covariate_names
        unit_results = _unit_inference(panel, args, weights, seed)
        P = panel_mt.build_pvalue_matrix(unit_results, panel.n_units, panel.n_covariates)
        frame = report.pvalues_frame(unit_results, unit_names, covariate_names)
        frame.to_csv(out_dir / "pvalues.csv", index=False)

    if P.n_entries == 0:
        report.write_json(
            {"gamma": args.gamma, "rho": None, "covariates": []},
            out_dir / "decisions.json",
        )
        print(f"[panelposi] empty selection: no unit activated any covariate; wrote {out_dir}")
        return EXIT_OK

    decision = panel_mt.fwer_reject(P, args.gamma)
    report.write_json(report.decisions_payload(decision, covariate_names), out_dir / "decisions.json")

    frontier = panel_mt.traverse(P)
    report.frontier_frame(frontier).to_csv(out_dir / "frontier.csv", index=False)

    if args.ordered:
        odec = ordered.step_down(P, args.gamma)
        report.write_json(report.ordered_payload(odec, covariate_names), out_dir / "ordered.json")

    if args.figures:
        report.render_frontier_figure(frontier, out_dir / "frontier.png")
        report.render_selection_map(P, covariate_names, out_dir / "selection_map.png")

    rejected = [covariate_names[j] for j in decision.rejected_covariates]
    print(
        f"[panelposi] rho={decision.rho:.4f}, family size {len(decision.family)}, "
        f"rejected {len(rejected)} covariate(s) at gamma={args.gamma}: {rejected}"
    )
    print(f"[panelposi] reports written to {out_dir}")
    return EXIT_OK


_PRESETS = {
    "table3-independent": dict(
        n_units=120, n_covariates=100, n_periods=300, k_true=10,
        noise_kind="independent", reps=100,
    ),
    "table3-dependent": dict(
        n_units=120, n_covariates=100, n_periods=300, k_true=10,
        noise_kind="dependent", reps=100,
    ),
    "smoke": dict(
        n_units=12, n_covariates=10, n_periods=60, k_true=3,
        noise_kind="independent", reps=5,
    ),
}


def _read_config_file(path: str | Path) -> dict[str, str]:
    out = {}
    for line_num, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path} line {line_num}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _build_sim_config(args) -> simlab.SimConfig:
    # precedence: explicit CLI flag > config file > preset > built-in default
    values: dict = {}
    if args.preset:
        values.update(_PRESETS[args.preset])
    if args.config:
        values.update(_read_config_file(args.config))
    cli_values = dict(
        n_units=args.n_units, n_covariates=args.n_covariates,
        n_periods=args.n_periods, k_true=args.k_true,
        noise_kind=args.noise, sigma2=args.sigma2, kappa=args.kappa,
        gamma=args.gamma, reps=args.reps, split=args.split,
        lambda_mode=args.lam, folds=args.folds,
        shared_lambda=args.shared_lambda or None,
    )
    values.update({k: v for k, v in cli_values.items() if v is not None})
    missing = [k for k in ("n_units", "n_covariates", "n_periods", "k_true") if values.get(k) is None]
    if missing:
        raise ConfigError(f"missing simulation parameters: {missing} (use --preset or flags)")

    def _num(key, cast, default=None):
        v = values.get(key, default)
        if v is None:
            return default
        try:
            return cast(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {v!r}") from exc

    lam = values.get("lambda_mode", "cv")
    if lam not in (None, "cv"):
        lam = float(lam)
    noise = simlab.NoiseSpec(
        kind=str(values.get("noise_kind") or "independent"),
        sigma2=_num("sigma2", float, 2.0),
        kappa=_num("kappa", float, 1.0),
    )
    return simlab.SimConfig(
        n_units=_num("n_units", int),
        n_covariates=_num("n_covariates", int),
        n_periods=_num("n_periods", int),
        k_true=_num("k_true", int),
        noise=noise,
        gamma=_num("gamma", float, 0.05),
        reps=_num("reps", int, 100),
        seed=args.resolved_seed,
        split=_num("split", float, 0.5),
        lambda_mode=lam if lam is not None else "cv",
        folds=_num("folds", int, 5),
        shared_lambda=bool(values.get("shared_lambda") in (True, "true", "True", "1")),
    )


def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    args.resolved_seed = _resolve_seed(args.seed)
    config = _build_sim_config(args)

    result = simlab.simulate(config, threads=args.threads)
    frame = report.sim_table_frame(result)
    frame.to_csv(out_dir / "table3.csv", index=False)
    if args.figures:
        report.render_sim_figure(result, out_dir / "methods_comparison.png")

    with pd.option_context("display.float_format", lambda v: f"{v:,.3f}"):
        print(frame.to_string(index=False))
    print(f"[panelposi] reports written to {out_dir}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="panelposi", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("panel-posi", help="run the selection pipeline on CSV panels")
    pp.add_argument("--y", help="response panel CSV (T rows x N unit columns)")
    pp.add_argument("--x", help="covariate CSV (T rows x J columns)")
    pp.add_argument("--weights", help="prior weights CSV (covariate, weight; 'inf' allowed)")
    pp.add_argument("--pvalues-in", help="skip estimation; sparse p-value CSV (unit, covariate, log_p)")
    pp.add_argument("--gamma", type=float, default=0.05, help="FWER control level")
    pp.add_argument("--variance", choices=["known", "estimated"], default="estimated")
    pp.add_argument("--sigma2", type=float, default=None, help="noise variance for --variance known")
    pp.add_argument("--lambda", dest="lam", default="cv", help="penalty value or 'cv' (default)")
    pp.add_argument("--folds", type=int, default=5)
    pp.add_argument("--seed", type=int, default=None)
    pp.add_argument("--intercept", action="store_true", help="include an unpenalized intercept")
    pp.add_argument("--ordered", action="store_true", help="also run the nested (ordered) procedure")
    pp.add_argument("--threads", type=int, default=1)
    pp.add_argument("--out", default="panelposi_out")
    pp.add_argument("--no-figures", dest="figures", action="store_false", help="skip figure rendering")
    pp.set_defaults(func=cmd_panel_posi)

    sim = sub.add_parser("simulate", help="run the benchmark simulation study")
    sim.add_argument("--preset", choices=sorted(_PRESETS), default=None)
    sim.add_argument("--config", help="key = value config file")
    sim.add_argument("--n-units", type=int, default=None)
    sim.add_argument("--n-covariates", type=int, default=None)
    sim.add_argument("--n-periods", type=int, default=None)
    sim.add_argument("--k-true", type=int, default=None)
    sim.add_argument("--noise", choices=["independent", "dependent"], default=None)
    sim.add_argument("--sigma2", type=float, default=None)
    sim.add_argument("--kappa", type=float, default=None)
    sim.add_argument("--gamma", type=float, default=None)
    sim.add_argument("--reps", type=int, default=None)
    sim.add_argument("--split", type=float, default=None)
    sim.add_argument("--lambda", dest="lam", default=None, help="penalty value or 'cv'")
    sim.add_argument("--folds", type=int, default=None)
    sim.add_argument("--shared-lambda", action="store_true")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--out", default="panelposi_out")
    sim.add_argument("--no-figures", dest="figures", action="store_false")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"[panelposi] config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _INPUT_ERRORS as exc:
        print(f"[panelposi] input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _NUMERICAL_ERRORS as exc:
        print(f"[panelposi] numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PanelPosiError as exc:
        print(f"[panelposi] error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
