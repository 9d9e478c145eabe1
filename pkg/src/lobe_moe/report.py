"""Human-readable results table: mean +/- SD [CI], change vs baseline, p-value."""

from __future__ import annotations

from pathlib import Path

from .core_data import DataError
from .evaluation import MethodResult, read_summary_csv

GROUPS = ("Baseline", "Regional Experts", "Validation-Weighted", "Gated-MoE")


def group_of(method: str) -> str:
    if method == "baseline":
        return "Baseline"
    if method.startswith("expert:"):
        return "Regional Experts"
    if method.startswith("weighted:"):
        return "Validation-Weighted"
    return "Gated-MoE"


def change_percent(value: float, baseline: float) -> float:
    if baseline == 0:
        raise ValueError("baseline mean is zero")
    return 100.0 * (value - baseline) / baseline


def format_change(value: float, baseline: float) -> str:
    return f"{change_percent(value, baseline):+.1f}%"


def format_p(p: float | None) -> str:
    if p is None:
        return "-"
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def format_cell(r: MethodResult) -> str:
    return f"{r.mean:.4f} ± {r.sd:.4f} [{r.ci_lo:.3f}, {r.ci_hi:.3f}]"


def render_table(results: list[MethodResult]) -> str:
    if not results:
        raise DataError("no results")
    base = next((r for r in results if r.method == "baseline"), None)
    rows = []
    for group in GROUPS:
        members = [r for r in results if group_of(r.method) == group]
        if not members:
            continue
        rows.append((f"[{group}]", "", "", ""))
        for r in members:
            change = "-" if base is None or r is base else format_change(r.mean, base.mean)
            rows.append((r.method, format_cell(r), change, format_p(r.p_vs_baseline)))
    header = ("method", "AUC mean ± SD [95% CI]", "change", "p")
    widths = [max(len(row[i]) for row in rows + [header]) for i in range(4)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def cmd_report(run_dir) -> str:
    path = Path(run_dir) / "summary.csv"
    if not path.is_file():
        raise DataError(f"missing input {path}")
    return render_table(read_summary_csv(path))
