"""Report generation: per-round tables and charts derived from a trace.

Three table shapes cover the usual questions about a run: the average of
each node's best-two accuracies per round, each node's local-ensemble
accuracy per round, and the per-round comparison of the two federation-wide
averages. Tables render as CSV (full float precision, auditable) and as
plain text; an optional minimal SVG line chart is available per table.
"""
from __future__ import annotations

from .errors import ContractViolation
from .server import FederationTrace


def rounds_csv(trace: FederationTrace) -> str:
    """One row per evaluated model per node per round, local ensembles included."""
    lines = ["round,node,model,accuracy"]
    for record in trace.rounds:
        for node in record.nodes:
            for label, accuracy in node.accuracy_map.items():
                lines.append(f"{record.round_no},{node.node_id},{label},{accuracy!r}")
            lines.append(
                f"{record.round_no},{node.node_id},LEL@n{node.node_id}r{record.round_no},"
                f"{node.lel_accuracy!r}"
            )
    return "\n".join(lines) + "\n"


def _node_ids(trace: FederationTrace) -> list[int]:
    if not trace.rounds:
        raise ContractViolation("trace has no rounds")
    return [n.node_id for n in trace.rounds[0].nodes]


def best2_average_table(trace: FederationTrace) -> tuple[list[str], list[list]]:
    """Per round, per node: mean of the two best-model accuracies."""
    headers = ["round"] + [f"node-{i}" for i in _node_ids(trace)]
    rows = []
    for record in trace.rounds:
        row: list = [record.round_no]
        row += [sum(n.b2m_accuracies) / 2.0 for n in record.nodes]
        rows.append(row)
    return headers, rows


def lel_accuracy_table(trace: FederationTrace) -> tuple[list[str], list[list]]:
    """Per round, per node: accuracy of the local ensemble on local test data."""
    headers = ["round"] + [f"node-{i}" for i in _node_ids(trace)]
    rows = []
    for record in trace.rounds:
        rows.append([record.round_no] + [n.lel_accuracy for n in record.nodes])
    return headers, rows


def ensemble_vs_best2_table(trace: FederationTrace) -> tuple[list[str], list[list]]:
    """Per round: node-averaged local-ensemble accuracy vs best-two average."""
    headers = ["round", "ensemble_avg", "best2_avg"]
    rows = []
    for record in trace.rounds:
        k = len(record.nodes)
        ensemble_avg = sum(n.lel_accuracy for n in record.nodes) / k
        best2_avg = sum(sum(n.b2m_accuracies) / 2.0 for n in record.nodes) / k
        rows.append([record.round_no, ensemble_avg, best2_avg])
    return headers, rows


def csv_text(headers: list[str], rows: list[list]) -> str:
    lines = [",".join(headers)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def text_table(headers: list[str], rows: list[list]) -> str:
    def fmt(value) -> str:
        return f"{value:.4f}" if isinstance(value, float) else str(value)

    cells = [headers] + [[fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def svg_line_chart(title: str, headers: list[str], rows: list[list]) -> str:
    """Minimal, dependency-free line chart; one polyline per non-round column."""
    width, height, margin = 640, 360, 50
    xs = [row[0] for row in rows]
    series = {headers[c]: [row[c] for row in rows] for c in range(1, len(headers))}
    all_values = [v for vals in series.values() for v in vals]
    lo, hi = min(all_values), max(all_values)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.05, hi + 0.05
    x_span = max(xs) - min(xs) or 1

    def sx(x):
        return margin + (x - min(xs)) / x_span * (width - 2 * margin)

    def sy(v):
        return height - margin - (v - lo) / (hi - lo) * (height - 2 * margin)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="#333"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="#333"/>',
        f'<text x="{margin}" y="{margin - 8:.0f}" font-size="10">{hi:.3f}</text>',
        f'<text x="{margin}" y="{height - margin + 14:.0f}" font-size="10">{lo:.3f}</text>',
    ]
    for i, (name, values) in enumerate(series.items()):
        color = palette[i % len(palette)]
        points = " ".join(f"{sx(x):.1f},{sy(v):.1f}" for x, v in zip(xs, values))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * i:.0f}" font-size="10" '
            f'fill="{color}">{name}</text>'
        )
    for x in xs:
        parts.append(
            f'<text x="{sx(x):.1f}" y="{height - margin + 26:.0f}" text-anchor="middle" '
            f'font-size="10">{x}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


REPORT_TABLES = {
    "best2_avg": best2_average_table,
    "lel_accuracy": lel_accuracy_table,
    "ensemble_vs_best2": ensemble_vs_best2_table,
}

REPORT_TITLES = {
    "best2_avg": "Average accuracy of each node's best two models per round",
    "lel_accuracy": "Local ensemble accuracy per node per round",
    "ensemble_vs_best2": "Local-ensemble average vs best-two average per round",
}


def build_report_bundle(trace: FederationTrace, svg: bool = False) -> dict[str, dict[str, str | None]]:
    bundle: dict[str, dict[str, str | None]] = {}
    for name, builder in REPORT_TABLES.items():
        headers, rows = builder(trace)
        bundle[name] = {
            "csv": csv_text(headers, rows),
            "text": text_table(headers, rows),
            "svg": svg_line_chart(REPORT_TITLES[name], headers, rows) if svg else None,
        }
    return bundle


def partition_count_table(
    node_train_counts: list[tuple[int, ...]],
    node_test_counts: list[tuple[int, ...]],
) -> str:
    """Per-node per-class count table in the five-node profile layout."""
    n_nodes = len(node_train_counts)
    n_classes = len(node_train_counts[0]) if n_nodes else 0
    headers = ["set", "class"] + [f"N{i + 1}" for i in range(n_nodes)] + ["full"]
    rows: list[list] = []
    for split, counts in (("train", node_train_counts), ("test", node_test_counts)):
        for label in range(n_classes):
            per_node = [int(c[label]) for c in counts]
            rows.append([split, f"class-{label}", *per_node, sum(per_node)])
    return text_table(headers, rows)
