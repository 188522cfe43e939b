"""Data ingestion, run configuration, and report emission for the CLI.

Reports are plain tables (column list plus rows) wrapped with metadata, so
one emitter covers quantile profiles, exceedance-count bounds, sensitivity
curves, and simulation summaries. Output is deterministic: no timestamps,
stable column order, repr-exact floats.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .model import OutcomeTable, TableValidationError

__all__ = [
    "AnalysisConfig",
    "Report",
    "ingest_csv",
    "load_config",
    "emit_report",
    "render_report",
]

_DEFAULT_ARM_MAP = {"1": 1, "0": 0}


@dataclass(frozen=True)
class AnalysisConfig:
    """Everything a CLI run needs; flags override config-file values."""

    command: str = ""
    input_path: str = ""
    output_path: Optional[str] = None
    output_format: str = "csv"
    arm_map: dict = field(default_factory=lambda: dict(_DEFAULT_ARM_MAP))
    log10_transform: bool = False
    lod: Optional[float] = None
    alpha: float = 0.05
    fractions: Optional[tuple] = None
    ranks: Optional[tuple] = None
    method: str = "M1"
    stat: str = "wilcoxon"
    stat_s: int = 2
    stat_flipped: Optional[str] = None
    stat_flipped_s: int = 6
    tiebreak_seed: int = 0
    berger_boos_gamma: Optional[float] = None
    gamma_grid: tuple = (1.0, 1.2, 1.5, 2.5, 3.3)
    solver: str = "dp"
    mode: str = "auto"
    mc_draws: int = 10_000
    seed: int = 0
    two_sided: bool = False
    simultaneous: bool = False
    count_thresholds: Optional[tuple] = None
    sate_method: str = "normal_approx"
    # simulate-only settings
    pool1_path: Optional[str] = None
    pool0_path: Optional[str] = None
    n1: int = 0
    n0: int = 0
    reps: int = 1000
    noise_sd: float = 0.15
    noninformative_fill: float = -10.0
    methods: tuple = ("M1-W",)

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.fractions is not None:
            if any(not (0.0 < b <= 1.0) for b in self.fractions):
                raise ValueError("quantile fractions must lie in (0, 1]")


_CONFIG_TUPLES = {"fractions", "ranks", "gamma_grid", "methods", "count_thresholds"}


def load_config(path: str, overrides: Optional[dict] = None) -> AnalysisConfig:
    """Flat JSON document -> AnalysisConfig, with overrides winning."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("config file must hold a JSON object")
    known = {f.name for f in fields(AnalysisConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    merged = dict(raw)
    if overrides:
        merged.update(overrides)
    for key in _CONFIG_TUPLES:
        if merged.get(key) is not None and key in merged:
            merged[key] = tuple(merged[key])
    return AnalysisConfig(**merged)


def ingest_csv(path: str, config: AnalysisConfig) -> OutcomeTable:
    """Parse a trial CSV with header id,arm,stratum?,outcome.

    Arm tokens go through config.arm_map; outcomes optionally through log10.
    Diagnostics carry 1-based file line numbers (the header is line 1).
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableValidationError("empty input file") from None
        header = [h.strip().lower() for h in header]
        required = {"id", "arm", "outcome"}
        missing = required - set(header)
        if missing:
            raise TableValidationError(
                f"missing required column(s): {', '.join(sorted(missing))}"
            )
        col = {name: header.index(name) for name in header}
        has_strata = "stratum" in col
        ids: list[str] = []
        arms: list[int] = []
        outcomes: list[float] = []
        strata: list[str] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise TableValidationError(f"row {line_no}: expected {len(header)} fields")
            ids.append(row[col["id"]].strip())
            arm_token = row[col["arm"]].strip()
            if arm_token not in config.arm_map:
                raise TableValidationError(
                    f"row {line_no}: arm value {arm_token!r} not in the arm map"
                )
            arms.append(int(config.arm_map[arm_token]))
            raw = row[col["outcome"]].strip()
            try:
                value = float(raw)
            except ValueError:
                raise TableValidationError(
                    f"row {line_no}: cannot parse outcome {raw!r}"
                ) from None
            if not math.isfinite(value):
                raise TableValidationError(f"row {line_no}: non-finite outcome")
            if config.log10_transform:
                if value <= 0:
                    raise TableValidationError(
                        f"row {line_no}: log10 transform requires positive outcomes"
                    )
                value = math.log10(value)
            outcomes.append(value)
            if has_strata:
                strata.append(row[col["stratum"]].strip())
    if not ids:
        raise TableValidationError("empty input file")
    lod = config.lod
    if lod is not None and config.log10_transform:
        if lod <= 0:
            raise TableValidationError("log10 transform requires a positive lod")
        lod = math.log10(lod)
    return OutcomeTable(
        ids=tuple(ids),
        arms=arms,
        outcomes=outcomes,
        strata=tuple(strata) if has_strata else None,
        lod=lod,
    )


@dataclass(frozen=True)
class Report:
    """One emitted table: column names, rows, and run metadata."""

    kind: str
    columns: tuple
    rows: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError("row width does not match columns")


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_report(report: Report, fmt: str) -> str:
    """Serialize a report; csv is header+rows, json adds kind and metadata."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(report.columns)
        for row in report.rows:
            writer.writerow([_cell(v) for v in row])
        return buf.getvalue()
    if fmt == "json":
        payload = {
            "kind": report.kind,
            "meta": report.meta,
            "columns": list(report.columns),
            "rows": [list(row) for row in report.rows],
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown output format {fmt!r}")


def emit_report(report: Report, fmt: str, path: Optional[str]) -> str:
    """Render and, if a path is given, write the report. Returns the text."""
    text = render_report(report, fmt)
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def config_with(config: AnalysisConfig, **kwargs) -> AnalysisConfig:
    return replace(config, **kwargs)
