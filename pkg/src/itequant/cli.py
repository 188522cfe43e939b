"""Command-line interface.

Subcommands mirror the analysis modes: placebo (closed-form bounds against a
detection limit), cre (worst-case quantile profiles M1/M2/M3), stratified
(block designs), sensitivity (matched-pair gamma curves), simulate (the DGP
harness), and sate (average-effect lower bound). A JSON config supplies
defaults; flags override. Output is deterministic for a fixed config and
seed.

Exit codes: 0 success, 2 validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import fields
from typing import Optional

from .estimators import (
    PairedSensitivityEstimator,
    PlaceboQuantileEstimator,
    QuantileProfileEstimator,
    SATEEstimator,
    StratifiedQuantileEstimator,
    resolve_ranks,
)
from .model import OutcomeTable, TableValidationError
from .reporting import AnalysisConfig, Report, emit_report, ingest_csv, load_config
from .simulate import DEFAULT_FRACTIONS, SimulationSpec, run_simulation
from .worstcase import MethodConfig

__all__ = ["main", "build_parser", "parse_method_token"]


def _floats(text: str) -> tuple:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _ints(text: str) -> tuple:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _arm_map(text: str) -> dict:
    out = {}
    for pair in text.split(","):
        if not pair.strip():
            continue
        token, _, value = pair.partition("=")
        if value not in ("0", "1"):
            raise argparse.ArgumentTypeError(
                f"arm map entry {pair!r} must end in =0 or =1"
            )
        out[token.strip()] = int(value)
    if not out:
        raise argparse.ArgumentTypeError("arm map is empty")
    return out


def parse_method_token(token: str) -> MethodConfig:
    """Parse method tags like M1-W, M2-S2-S6, M3-S2-S6 into configurations."""

    def stat(part: str):
        from .estimators import make_rank_spec

        if part == "W":
            return make_rank_spec("wilcoxon", 2, 0)
        if part.startswith("S") and part[1:].isdigit():
            return make_rank_spec("stephenson", int(part[1:]), 0)
        raise ValueError(f"unknown statistic token {part!r} in method {token!r}")

    parts = token.split("-")
    if parts[0] not in ("M1", "M2", "M3") or len(parts) < 2 or len(parts) > 3:
        raise ValueError(f"cannot parse method token {token!r}")
    primary = stat(parts[1])
    flipped = stat(parts[2]) if len(parts) == 3 else None
    return MethodConfig(method=parts[0], stat_primary=primary, stat_flipped=flipped)


def _methods(text: str) -> tuple:
    return tuple(tok.strip() for tok in text.split(",") if tok.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itequant",
        description="Randomization inference on quantiles of individual "
        "treatment effects in two-arm experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_input: bool = True) -> None:
        p.add_argument("--config", default=None, help="JSON config file")
        if needs_input:
            p.add_argument("--input", dest="input_path", default=None, help="input CSV")
            p.add_argument(
                "--arm-map",
                dest="arm_map",
                type=_arm_map,
                default=None,
                help="comma list token=0/1 (default 1=1,0=0)",
            )
            p.add_argument(
                "--log10",
                dest="log10_transform",
                action="store_const",
                const=True,
                default=None,
                help="log10-transform outcomes (and the lod)",
            )
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--output", dest="output_path", default=None)
        p.add_argument(
            "--format",
            dest="output_format",
            choices=("csv", "json"),
            default=None,
        )
        p.add_argument("--mc-draws", dest="mc_draws", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)

    def rank_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--ranks", type=_ints, default=None, help="comma list of ranks")
        p.add_argument(
            "--fractions",
            type=_floats,
            default=None,
            help="comma list of quantile fractions in (0, 1]",
        )

    p = sub.add_parser("placebo", help="closed-form bounds when controls sit at a detection limit")
    common(p)
    rank_args(p)
    p.add_argument("--lod", type=float, default=None, help="detection bound (required)")
    p.add_argument(
        "--simultaneous",
        action="store_const",
        const=True,
        default=None,
        help="jointly valid limits across ranks (Monte Carlo calibrated)",
    )
    p.add_argument(
        "--count-thresholds",
        dest="count_thresholds",
        type=_floats,
        default=None,
        help="emit exceedance-count bounds at these thresholds instead of the profile",
    )

    p = sub.add_parser("cre", help="worst-case quantile profile for a completely randomized experiment")
    common(p)
    rank_args(p)
    p.add_argument("--method", choices=("M1", "M2", "M3"), default=None)
    p.add_argument("--stat", choices=("wilcoxon", "stephenson"), default=None)
    p.add_argument("--stat-s", dest="stat_s", type=int, default=None)
    p.add_argument(
        "--stat-flipped", dest="stat_flipped", choices=("wilcoxon", "stephenson"), default=None
    )
    p.add_argument("--stat-flipped-s", dest="stat_flipped_s", type=int, default=None)
    p.add_argument("--bb-gamma", dest="berger_boos_gamma", type=float, default=None)
    p.add_argument("--mode", choices=("auto", "exact", "monte_carlo"), default=None)
    p.add_argument("--tiebreak-seed", dest="tiebreak_seed", type=int, default=None)
    p.add_argument(
        "--two-sided",
        dest="two_sided",
        action="store_const",
        const=True,
        default=None,
        help="two one-sided profiles at alpha/2 each",
    )

    p = sub.add_parser("stratified", help="quantile profile under block randomization")
    common(p)
    rank_args(p)
    p.add_argument("--method", choices=("M1str", "M2str"), default=None)
    p.add_argument("--stat", choices=("wilcoxon", "stephenson"), default=None)
    p.add_argument("--stat-s", dest="stat_s", type=int, default=None)
    p.add_argument("--solver", choices=("dp", "greedy"), default=None)
    p.add_argument("--mode", choices=("auto", "exact", "monte_carlo"), default=None)
    p.add_argument("--tiebreak-seed", dest="tiebreak_seed", type=int, default=None)

    p = sub.add_parser("sensitivity", help="matched-pair gamma sensitivity curves")
    common(p)
    rank_args(p)
    p.add_argument("--gamma-grid", dest="gamma_grid", type=_floats, default=None)
    p.add_argument("--stat", choices=("wilcoxon", "stephenson"), default=None)
    p.add_argument("--stat-s", dest="stat_s", type=int, default=None)
    p.add_argument("--mode", choices=("auto", "exact", "monte_carlo"), default=None)
    p.add_argument("--tiebreak-seed", dest="tiebreak_seed", type=int, default=None)

    p = sub.add_parser("simulate", help="empirical-pool simulation harness")
    common(p, needs_input=False)
    p.add_argument("--pool1", dest="pool1_path", default=None, help="text file, one arm-1 value per line")
    p.add_argument("--pool0", dest="pool0_path", default=None, help="text file, one arm-0 value per line")
    p.add_argument("--n1", type=int, default=None)
    p.add_argument("--n0", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--noise-sd", dest="noise_sd", type=float, default=None)
    p.add_argument("--fill", dest="noninformative_fill", type=float, default=None)
    p.add_argument("--fractions", type=_floats, default=None)
    p.add_argument(
        "--methods",
        type=_methods,
        default=None,
        help="comma list of method tags, e.g. M1-S2,M2-S2-S6,M3-S2-S6",
    )
    p.add_argument("--mode", choices=("auto", "exact", "monte_carlo"), default=None)

    p = sub.add_parser("sate", help="lower confidence limit for the average effect")
    common(p)
    p.add_argument(
        "--method",
        dest="sate_method",
        choices=("normal_approx", "studentized_frt"),
        default=None,
    )

    return parser


def _build_config(args: argparse.Namespace) -> AnalysisConfig:
    known = {f.name for f in fields(AnalysisConfig)}
    overrides = {
        k: v for k, v in vars(args).items() if k in known and v is not None
    }
    overrides["command"] = args.command
    if args.config is not None:
        return load_config(args.config, overrides)
    return AnalysisConfig(**overrides)


def _rank_rows(profile, level: float, method: str) -> list[tuple]:
    return [
        (int(k), float(lim), math.inf, level, method, profile.simultaneous)
        for k, lim in zip(profile.quantile_ranks, profile.lower_limits)
    ]


_PROFILE_COLUMNS = ("rank", "lower_limit", "upper_limit", "level", "method", "simultaneous")


def _run_placebo(config: AnalysisConfig) -> Report:
    if config.lod is None:
        raise TableValidationError("placebo analysis requires --lod")
    table = ingest_csv(config.input_path, config)
    est = PlaceboQuantileEstimator(
        alpha=config.alpha,
        ranks=config.ranks,
        fractions=config.fractions,
        simultaneous=config.simultaneous,
        count_thresholds=config.count_thresholds,
        mc_draws=config.mc_draws,
        seed=config.seed,
    ).fit(table)
    meta = {"alpha": config.alpha, "n": table.n, "n1": table.n1, "lod": config.lod}
    if config.count_thresholds is not None:
        rows = tuple(
            (float(c), int(est.count_limits_[float(c)]))
            for c in config.count_thresholds
        )
        return Report(
            kind="count-bounds",
            columns=("threshold", "count_lower_bound"),
            rows=rows,
            meta=meta,
        )
    tag = "placebo-simultaneous" if config.simultaneous else "placebo"
    rows = tuple(
        (int(k), float(lim), math.inf, 1.0 - config.alpha, tag, bool(config.simultaneous))
        for k, lim in zip(est.ranks_, est.limits_)
    )
    return Report(kind="quantile-profile", columns=_PROFILE_COLUMNS, rows=rows, meta=meta)


def _run_cre(config: AnalysisConfig) -> Report:
    table = ingest_csv(config.input_path, config)
    alpha = config.alpha / 2.0 if config.two_sided else config.alpha
    est = QuantileProfileEstimator(
        method=config.method,
        stat=config.stat,
        stat_s=config.stat_s,
        stat_flipped=config.stat_flipped,
        stat_flipped_s=config.stat_flipped_s,
        alpha=alpha,
        ranks=config.ranks,
        fractions=config.fractions,
        berger_boos_gamma=config.berger_boos_gamma,
        tiebreak_seed=config.tiebreak_seed,
        mode=config.mode,
        mc_draws=config.mc_draws,
        seed=config.seed,
    ).fit(table)
    meta = {"alpha": config.alpha, "n": table.n, "n1": table.n1}
    if not config.two_sided:
        rows = tuple(_rank_rows(est.profile_, est.profile_.level, est.profile_.method_tag))
        return Report(kind="quantile-profile", columns=_PROFILE_COLUMNS, rows=rows, meta=meta)
    # Upper limits: lower limits for the negated effects. Negating every
    # outcome (arms unchanged) negates each unit's effect, and the j-th
    # smallest negated effect is minus the (N - j + 1)-th smallest original.
    negated = OutcomeTable(table.ids, table.arms, -table.outcomes, table.strata, None)
    upper_ranks = tuple(sorted(table.n - k + 1 for k in est.ranks_))
    upper_est = QuantileProfileEstimator(
        method=config.method,
        stat=config.stat,
        stat_s=config.stat_s,
        stat_flipped=config.stat_flipped,
        stat_flipped_s=config.stat_flipped_s,
        alpha=alpha,
        ranks=upper_ranks,
        berger_boos_gamma=config.berger_boos_gamma,
        tiebreak_seed=config.tiebreak_seed,
        mode=config.mode,
        mc_draws=config.mc_draws,
        seed=config.seed,
    ).fit(negated)
    upper_by_rank = {
        table.n - kk + 1: -float(lim)
        for kk, lim in zip(upper_est.ranks_, upper_est.limits_)
    }
    level = 1.0 - config.alpha
    rows = tuple(
        (int(k), float(lim), upper_by_rank[int(k)], level, est.profile_.method_tag, True)
        for k, lim in zip(est.ranks_, est.limits_)
    )
    return Report(kind="quantile-profile", columns=_PROFILE_COLUMNS, rows=rows, meta=meta)


def _run_stratified(config: AnalysisConfig) -> Report:
    table = ingest_csv(config.input_path, config)
    est = StratifiedQuantileEstimator(
        method=config.method if config.method in ("M1str", "M2str") else "M1str",
        stat=config.stat,
        stat_s=config.stat_s,
        alpha=config.alpha,
        ranks=config.ranks,
        fractions=config.fractions,
        solver=config.solver,
        tiebreak_seed=config.tiebreak_seed,
        mode=config.mode,
        mc_draws=config.mc_draws,
        seed=config.seed,
    ).fit(table)
    meta = {"alpha": config.alpha, "n": table.n, "n1": table.n1, "solver": config.solver}
    rows = tuple(_rank_rows(est.profile_, est.profile_.level, est.profile_.method_tag))
    return Report(kind="quantile-profile", columns=_PROFILE_COLUMNS, rows=rows, meta=meta)


def _run_sensitivity(config: AnalysisConfig) -> Report:
    table = ingest_csv(config.input_path, config)
    est = PairedSensitivityEstimator(
        gamma_grid=config.gamma_grid,
        stat=config.stat,
        stat_s=config.stat_s,
        alpha=config.alpha,
        ranks=config.ranks,
        fractions=config.fractions,
        tiebreak_seed=config.tiebreak_seed,
        mode=config.mode,
        mc_draws=config.mc_draws,
        seed=config.seed,
    ).fit(table)
    rows = []
    for gamma in config.gamma_grid:
        profile = est.profiles_[float(gamma)]
        amp = est.amplification_.get(float(gamma))
        lam, delta = amp if amp is not None else (math.nan, math.nan)
        for k, lim in zip(profile.quantile_ranks, profile.lower_limits):
            rows.append(
                (float(gamma), int(k), float(lim), profile.level, lam, delta)
            )
    meta = {"alpha": config.alpha, "n": table.n, "pairs": table.n // 2}
    return Report(
        kind="sensitivity-curves",
        columns=("gamma", "rank", "lower_limit", "level", "amp_lambda", "amp_delta"),
        rows=tuple(rows),
        meta=meta,
    )


def _read_pool(path: str) -> tuple:
    with open(path, "r", encoding="utf-8") as fh:
        values = []
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise TableValidationError(
                    f"{path}: line {line_no}: cannot parse pool value {text!r}"
                ) from None
    if not values:
        raise TableValidationError(f"{path}: empty pool file")
    return tuple(values)


def _run_simulate(config: AnalysisConfig) -> Report:
    if config.pool1_path is None or config.pool0_path is None:
        raise TableValidationError("simulate requires --pool1 and --pool0")
    methods = tuple(parse_method_token(tok) for tok in config.methods)
    spec = SimulationSpec(
        pool1=_read_pool(config.pool1_path),
        pool0=_read_pool(config.pool0_path),
        n1=config.n1,
        n0=config.n0,
        methods=methods,
        noise_sd=config.noise_sd,
        reps=config.reps,
        fractions=config.fractions if config.fractions is not None else DEFAULT_FRACTIONS,
        noninformative_fill=config.noninformative_fill,
        alpha=config.alpha,
        mode=config.mode,
        mc_draws=config.mc_draws,
        seed=config.seed,
    )
    result = run_simulation(spec)
    rows = []
    for tag, summary in result["methods"].items():
        for rank in result["ranks"]:
            rows.append(
                (
                    tag,
                    float(summary["mean_ss"]),
                    int(rank),
                    float(summary["median_limits"][str(rank)]),
                )
            )
    meta = {
        "n": result["n"],
        "n1": result["n1"],
        "n0": result["n0"],
        "reps": result["reps"],
        "alpha": result["alpha"],
        "seed": result["seed"],
        "fractions": result["fractions"],
    }
    return Report(
        kind="simulation-summary",
        columns=("method", "mean_ss", "rank", "median_lower_limit"),
        rows=tuple(rows),
        meta=meta,
    )


def _run_sate(config: AnalysisConfig) -> Report:
    table = ingest_csv(config.input_path, config)
    est = SATEEstimator(
        method=config.sate_method,
        alpha=config.alpha,
        mc_draws=config.mc_draws,
        seed=config.seed,
    ).fit(table)
    rows = (
        (float(est.estimate_), float(est.lower_limit_), 1.0 - config.alpha, config.sate_method),
    )
    return Report(
        kind="sate",
        columns=("estimate", "lower_limit", "level", "method"),
        rows=rows,
        meta={"n": table.n, "n1": table.n1, "alpha": config.alpha},
    )


_HANDLERS = {
    "placebo": _run_placebo,
    "cre": _run_cre,
    "stratified": _run_stratified,
    "sensitivity": _run_sensitivity,
    "simulate": _run_simulate,
    "sate": _run_sate,
}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _build_config(args)
        report = _HANDLERS[config.command](config)
        text = emit_report(report, config.output_format, config.output_path)
    except (TableValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if config.output_path is None:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
