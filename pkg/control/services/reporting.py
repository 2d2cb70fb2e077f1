from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from django.template.loader import render_to_string

from .experiments import RESULT_COLUMNS, ResultRow

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["metric", "x", "method", "eps_A_source", "count", "q25", "median", "q75"]
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"]
WIDTH, HEIGHT = 640, 420
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 72, 170, 40, 56

INTEGER_COLUMNS = {"N", "T", "trial"}
TEXT_COLUMNS = {"run_id", "method", "eps_A_source", "status"}


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


def _parse(column: str, text: str):
    if column in TEXT_COLUMNS:
        return text
    if column in INTEGER_COLUMNS:
        return int(text)
    if column == "stabilized":
        return text == "1"
    return float(text)


def read_results(path: Path | str) -> list[dict]:
    """Load a result CSV written by ``run_experiment``; ``inf`` and ``nan`` come back as floats."""

    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.DictReader(handle)
        missing = [column for column in RESULT_COLUMNS if column not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path} is missing result columns {missing}")
        return [{column: _parse(column, row[column]) for column in RESULT_COLUMNS} for row in reader]


def as_records(rows: Iterable[ResultRow | Mapping]) -> list[dict]:
    return [row.__dict__.copy() if isinstance(row, ResultRow) else dict(row) for row in rows]


def extended_quantiles(values: Iterable[float]) -> tuple[float, float, float]:
    """Quartiles over the extended reals: order statistics, so +inf entries are kept as such."""

    data = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if data.size == 0:
        return math.nan, math.nan, math.nan
    q25, median, q75 = np.quantile(data, [0.25, 0.5, 0.75], method="inverted_cdf")
    return float(q25), float(median), float(q75)


# ---------------------------------------------------------------------------
# Plot specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlotSpec:
    """One figure: a metric against a grid column, one line per method.

    ``aggregate="quantiles"`` draws medians with quartile bands;
    ``aggregate="frequency"`` draws the fraction of truthy values.
    ``methods=None`` keeps every method, an empty tuple is an error.
    """

    name: str
    metric: str
    x: str = "N"
    methods: tuple[str, ...] | None = None
    error_source: str | None = None
    aggregate: str = "quantiles"
    log_x: bool = True
    log_y: bool = True
    only_feasible: bool = False
    title: str = ""
    y_label: str = ""

    def __post_init__(self) -> None:
        if self.methods is not None and not self.methods:
            raise ValueError(f"plot {self.name!r} has an empty method filter")
        if self.aggregate not in ("quantiles", "frequency"):
            raise ValueError(f"unknown aggregate {self.aggregate!r}")
        if self.metric not in RESULT_COLUMNS or self.x not in RESULT_COLUMNS:
            raise ValueError(f"plot {self.name!r} refers to unknown columns {self.metric!r}/{self.x!r}")


DEFAULT_PLOTS = (
    PlotSpec("estimation_error", "err_A", title="Estimation error", y_label="median ||A_hat - A||"),
    PlotSpec("error_radius", "eps_A", title="Error radius", y_label="eps_A"),
    PlotSpec("suboptimality", "rel_subopt", title="Relative suboptimality", y_label="(J - J*) / J*"),
    PlotSpec(
        "stabilized",
        "stabilized",
        aggregate="frequency",
        log_y=False,
        title="Stabilization frequency",
        y_label="fraction stabilized",
    ),
)


@dataclass(frozen=True)
class SummaryPoint:
    metric: str
    x: float
    method: str
    eps_A_source: str
    count: int
    q25: float
    median: float
    q75: float


def summarize(records: list[dict], spec: PlotSpec) -> list[SummaryPoint]:
    groups: dict[tuple[str, str, float], list[float]] = defaultdict(list)
    for record in records:
        if spec.methods is not None and record["method"] not in spec.methods:
            continue
        if spec.error_source is not None and record["eps_A_source"] != spec.error_source:
            continue
        if spec.only_feasible and record["status"] != "feasible":
            continue
        groups[(record["method"], record["eps_A_source"], float(record[spec.x]))].append(float(record[spec.metric]))

    points = []
    for (method, source, x), values in sorted(groups.items()):
        if spec.aggregate == "frequency":
            value = float(np.mean(values)) if values else math.nan
            q25 = median = q75 = value
        else:
            q25, median, q75 = extended_quantiles(values)
        points.append(SummaryPoint(spec.metric, x, method, source, len(values), q25, median, q75))
    return points


# ---------------------------------------------------------------------------
# SVG geometry
# ---------------------------------------------------------------------------


class Axis:
    """Maps data values to pixels on a linear or log10 scale."""

    def __init__(self, low: float, high: float, start: float, end: float, log: bool) -> None:
        self.log = log
        if log:
            low, high = math.log10(low), math.log10(high)
        if high <= low:
            low, high = low - 0.5, high + 0.5
        self.low, self.high, self.start, self.end = low, high, start, end

    def __call__(self, value: float) -> float:
        if math.isinf(value):
            return self.end if value > 0 else self.start
        scaled = math.log10(value) if self.log else value
        fraction = (scaled - self.low) / (self.high - self.low)
        return round(self.start + fraction * (self.end - self.start), 2)

    def ticks(self) -> list[tuple[float, str]]:
        if self.log:
            decades = range(math.floor(self.low), math.ceil(self.high) + 1)
            values = [10.0**k for k in decades if self.low - 1e-9 <= k <= self.high + 1e-9]
            if len(values) < 2:
                values = [10**self.low, 10**self.high]
        else:
            values = list(np.linspace(self.low, self.high, 5))
        return [(self(v), f"{v:.3g}") for v in values]


def _positive(values: Iterable[float]) -> list[float]:
    return [v for v in values if math.isfinite(v) and v > 0]


def plot_context(points: list[SummaryPoint], spec: PlotSpec, *, timestamp: str | None = None) -> dict:
    """Template context with every coordinate precomputed."""

    xs = sorted({p.x for p in points})
    finite = [v for p in points for v in (p.q25, p.median, p.q75) if math.isfinite(v)]
    if spec.log_x:
        xs_valid = _positive(xs) or [1.0]
        x_low, x_high = min(xs_valid), max(xs_valid)
    else:
        x_low, x_high = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if spec.log_y:
        ys = _positive(finite) or [1.0]
        y_low, y_high = min(ys), max(ys)
    else:
        y_low, y_high = (min(finite + [0.0]), max(finite + [1.0]))

    x_axis = Axis(x_low, x_high, MARGIN_LEFT, WIDTH - MARGIN_RIGHT, spec.log_x)
    y_axis = Axis(y_low, y_high, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP, spec.log_y)

    def usable(x: float, y: float) -> bool:
        return not (math.isnan(y) or (spec.log_x and x <= 0) or (spec.log_y and y <= 0))

    series = []
    keys = sorted({(p.method, p.eps_A_source) for p in points})
    for index, (method, source) in enumerate(keys):
        chosen = sorted((p for p in points if (p.method, p.eps_A_source) == (method, source)), key=lambda p: p.x)
        line = [(x_axis(p.x), y_axis(p.median)) for p in chosen if usable(p.x, p.median)]
        upper = [(x_axis(p.x), y_axis(p.q75)) for p in chosen if usable(p.x, p.q75) and usable(p.x, p.q25)]
        lower = [(x_axis(p.x), y_axis(p.q25)) for p in chosen if usable(p.x, p.q75) and usable(p.x, p.q25)]
        label = method if len({s for _, s in keys}) == 1 else f"{method} [{source}]"
        series.append(
            {
                "label": label,
                "color": PALETTE[index % len(PALETTE)],
                "line": " ".join(f"{x},{y}" for x, y in line),
                "band": " ".join(f"{x},{y}" for x, y in upper + lower[::-1]),
                "show_band": spec.aggregate == "quantiles" and len(upper) > 1,
                "legend_y": MARGIN_TOP + 18 * index,
            }
        )

    return {
        "width": WIDTH,
        "height": HEIGHT,
        "title": spec.title or spec.name,
        "x_label": spec.x,
        "y_label": spec.y_label or spec.metric,
        "left": MARGIN_LEFT,
        "right": WIDTH - MARGIN_RIGHT,
        "top": MARGIN_TOP,
        "bottom": HEIGHT - MARGIN_BOTTOM,
        "legend_x": WIDTH - MARGIN_RIGHT + 16,
        "x_ticks": x_axis.ticks(),
        "y_ticks": y_axis.ticks(),
        "series": series,
        "timestamp": timestamp,
    }


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def write_summary(points: list[SummaryPoint], path: Path) -> Path:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for p in points:
            writer.writerow([p.metric, repr(p.x), p.method, p.eps_A_source, p.count, repr(p.q25), repr(p.median), repr(p.q75)])
    return path


def emit_report(
    rows: Iterable[ResultRow | Mapping],
    specs: Iterable[PlotSpec] = DEFAULT_PLOTS,
    output_dir: Path | str = ".",
    *,
    stamp: bool = False,
) -> list[Path]:
    """Write ``summary.csv`` plus one SVG per plot spec; returns the written paths."""

    records = as_records(rows)
    if not records:
        raise ValueError("cannot report on an empty result table")
    specs = list(specs)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds") if stamp else None

    written = []
    all_points = []
    for spec in specs:
        points = summarize(records, spec)
        all_points.extend(points)
        svg_path = output_dir / f"{spec.name}.svg"
        svg_path.write_text(render_to_string("reports/line_plot.svg", plot_context(points, spec, timestamp=timestamp)))
        written.append(svg_path)
        logger.info("wrote %s", svg_path)
    summary_path = write_summary(all_points, output_dir / "summary.csv")
    logger.info("wrote %s", summary_path)
    return [summary_path, *written]


__all__ = [
    "SUMMARY_COLUMNS",
    "read_results",
    "as_records",
    "extended_quantiles",
    "PlotSpec",
    "DEFAULT_PLOTS",
    "SummaryPoint",
    "summarize",
    "Axis",
    "plot_context",
    "write_summary",
    "emit_report",
]
