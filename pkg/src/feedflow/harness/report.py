"""Aggregation of per-scenario metrics into per-(policy, class) report rows,
with markdown/CSV emission and rendered figures."""

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ..traces import BandwidthClass
from .runner import LOSS_CURVE_COLUMNS, METRICS_COLUMNS

REPORT_COLUMNS = ("method", "class", "qoe", "rebuf_s", "bw_mb", "wastage_pct")

_FIGURE_METRICS = (
    ("qoe", "Normalized QoE", "qoe.png"),
    ("rebuf_s", "Rebuffering (s)", "rebuffering.png"),
    ("bw_mb", "Bandwidth usage (MB)", "bandwidth.png"),
    ("wastage_pct", "Bandwidth wastage (%)", "wastage.png"),
)


@dataclass(frozen=True)
class ReportRow:
    method: str
    bw_class: BandwidthClass
    qoe: float  # normalized, in [0, 1]
    rebuf_s: float
    bw_mb: float
    wastage_pct: float

    def __post_init__(self):
        if not 0.0 <= self.qoe <= 1.0:
            raise ValueError("normalized QoE must lie in [0, 1]")
        if not 0.0 <= self.wastage_pct <= 100.0:
            raise ValueError("wastage must lie in [0, 100]")


def aggregate(
    rows: list[dict],
    expected_cells: list[tuple[str, BandwidthClass]] | None = None,
) -> list[ReportRow]:
    """Arithmetic means per (policy, class), in first-seen policy order.

    When expected_cells is given, every requested cell must be present
    exactly once; missing cells raise with the offending (policy, class).
    """
    groups: dict[tuple[str, BandwidthClass], list[dict]] = {}
    policy_order: list[str] = []
    for row in rows:
        key = (row["policy"], BandwidthClass(row["class"]))
        groups.setdefault(key, []).append(row)
        if row["policy"] not in policy_order:
            policy_order.append(row["policy"])

    if expected_cells is not None:
        missing = [cell for cell in expected_cells if cell not in groups]
        if missing:
            cells = ", ".join(f"({p}, {c.value})" for p, c in missing)
            raise ValueError(f"no metrics for requested cells: {cells}")
        keys = expected_cells
    else:
        keys = [
            (p, c)
            for p in policy_order
            for c in BandwidthClass
            if (p, c) in groups
        ]

    def mean(group: list[dict], field: str) -> float:
        return sum(float(r[field]) for r in group) / len(group)

    report = []
    for policy, cls in keys:
        group = groups[(policy, cls)]
        report.append(
            ReportRow(
                method=policy,
                bw_class=cls,
                qoe=mean(group, "qoe_norm"),
                rebuf_s=mean(group, "rebuf_s"),
                bw_mb=mean(group, "bw_mb"),
                wastage_pct=mean(group, "wastage_pct"),
            )
        )
    return report


def write_metrics_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(
                [_format(row[col]) for col in METRICS_COLUMNS]
            )


def read_metrics_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_loss_curve_csv(curve: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_CURVE_COLUMNS)
        for row in curve:
            writer.writerow([_format(row[col]) for col in LOSS_CURVE_COLUMNS])


def _format(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    if value is None:
        return ""
    return str(value)


def report_markdown(rows: list[ReportRow], rebuffer_budget_s: float) -> str:
    lines = [
        "# Evaluation report",
        "",
        "QoE is normalized per scenario to [0, 1]: the upper bound is every",
        "watchable chunk at top-ladder quality with zero rebuffering, the lower",
        f"bound is zero quality with a {rebuffer_budget_s:g} s rebuffer budget.",
        "",
        "| Method | Scenario | QoE | Rebuf (s) | BW Usage (MB) | BW Wastage (%) |",
        "|---|---|---|---|---|---|",
    ]
    for r in rows:
        lines.append(
            f"| {r.method} | {r.bw_class.value.capitalize()} | {r.qoe:.2f} "
            f"| {r.rebuf_s:.2f} | {r.bw_mb:.1f} | {r.wastage_pct:.1f} |"
        )
    return "\n".join(lines) + "\n"


def write_report_csv(rows: list[ReportRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.method,
                    r.bw_class.value,
                    _format(r.qoe),
                    _format(r.rebuf_s),
                    _format(r.bw_mb),
                    _format(r.wastage_pct),
                ]
            )


def render_report_figures(rows: list[ReportRow], fig_dir) -> list[Path]:
    """One grouped bar chart per reported metric, written as PNG files."""
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    methods = []
    for r in rows:
        if r.method not in methods:
            methods.append(r.method)
    classes = [c for c in BandwidthClass if any(r.bw_class == c for r in rows)]
    cell = {(r.method, r.bw_class): r for r in rows}

    written = []
    for attr, label, filename in _FIGURE_METRICS:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        width = 0.8 / max(1, len(methods))
        for mi, method in enumerate(methods):
            xs = [ci + mi * width for ci in range(len(classes))]
            ys = [
                getattr(cell[(method, c)], attr) if (method, c) in cell else 0.0
                for c in classes
            ]
            ax.bar(xs, ys, width=width, label=method)
        ax.set_xticks(
            [ci + width * (len(methods) - 1) / 2 for ci in range(len(classes))]
        )
        ax.set_xticklabels([c.value for c in classes])
        ax.set_ylabel(label)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = fig_dir / filename
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def render_loss_curve(curve: list[dict], path) -> None:
    episodes = [row["episode"] for row in curve]
    losses = [row["mean_tb_loss"] for row in curve]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(episodes, losses)
    ax.set_xlabel("training episode")
    ax.set_ylabel("mean TB loss")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
