"""Result rendering: delimited tables, a chosen-weights table, and figures.

Output is deterministic byte for byte: fixed column order, one decimal
place, "-" for rows a scheme does not apply to (single views have no
fusion weights), and PNG metadata pinned so reruns reproduce files exactly.
"""

from __future__ import annotations

from pathlib import Path

from .errors import EmptyTable, IllegalValue
from .experiment import ResultsTable

_METRICS = (
    ("sentence_correctness", "Sentence Correctness"),
    ("word_accuracy", "Word Accuracy"),
    ("word_correctness", "Word Correctness"),
)
_SCHEME_TITLES = {"grid": "Grid", "rec": "Rec", "feat": "Feat"}


def _cell(table: ResultsTable, combination: str, scheme: str, metric: str) -> str:
    row = table.row(combination, scheme)
    if row is None:
        return "-"
    return f"{getattr(row, metric):.1f}"


def _check(table: ResultsTable) -> None:
    if not table.rows:
        raise EmptyTable("results table has no rows to render")


def _header(table: ResultsTable) -> list[str]:
    cols = ["Combination"]
    for _, metric_title in _METRICS:
        for scheme in table.schemes:
            cols.append(f"{metric_title} ({_SCHEME_TITLES[scheme]})")
    return cols


def _body(table: ResultsTable) -> list[list[str]]:
    rows = []
    for combination in table.combinations:
        cells = [combination]
        for metric, _ in _METRICS:
            for scheme in table.schemes:
                cells.append(_cell(table, combination, scheme, metric))
        rows.append(cells)
    return rows


def render_results(table: ResultsTable, fmt: str = "csv") -> str:
    """The experiment matrix as CSV or a markdown pipe table."""
    _check(table)
    header = _header(table)
    body = _body(table)
    if fmt == "csv":
        lines = [",".join(header)]
        lines.extend(",".join(cells) for cells in body)
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |"]
        lines.append("|" + "|".join([" --- "] * len(header)) + "|")
        lines.extend("| " + " | ".join(cells) + " |" for cells in body)
        return "\n".join(lines) + "\n"
    raise IllegalValue(f"unknown report format {fmt!r}")


def _weights_text(row) -> str:
    if row is None or row.weights is None:
        return "-"
    return " ".join(f"{t / 10:.1f}" for t in row.weights.tenths)


def render_weights(table: ResultsTable, fmt: str = "csv") -> str:
    """The chosen-weights table for every fused combination."""
    _check(table)
    header = ["Combination", "Grid Weights", "Rec Weights"]
    body = []
    for combination in table.combinations:
        if "+" not in combination:
            continue
        body.append(
            [
                combination,
                _weights_text(table.row(combination, "grid")),
                _weights_text(table.row(combination, "rec")),
            ]
        )
    if fmt == "csv":
        lines = [",".join(header)]
        lines.extend(",".join(cells) for cells in body)
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |"]
        lines.append("|" + "|".join([" --- "] * len(header)) + "|")
        lines.extend("| " + " | ".join(cells) + " |" for cells in body)
        return "\n".join(lines) + "\n"
    raise IllegalValue(f"unknown report format {fmt!r}")


_SCHEME_COLORS = {"grid": "#2a6f97", "rec": "#e07a5f", "feat": "#52796f"}


def _figure(width: float, height: float):
    from matplotlib.backends.backend_agg import FigureCanvasAgg
    from matplotlib.figure import Figure

    fig = Figure(figsize=(width, height), dpi=100)
    FigureCanvasAgg(fig)
    return fig


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="png", metadata={"Software": "lipfuse"})


def render_figures(table: ResultsTable, out_dir) -> list[Path]:
    """Two PNG charts: per-combination scores and best score by view count."""
    _check(table)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    combos = list(table.combinations)
    fig = _figure(max(8.0, 0.4 * len(combos) + 2.0), 4.8)
    ax = fig.subplots()
    x = range(len(combos))
    n_schemes = len(table.schemes)
    bar_w = 0.8 / n_schemes
    for si, scheme in enumerate(table.schemes):
        heights = []
        for combination in combos:
            row = table.row(combination, scheme)
            heights.append(0.0 if row is None else row.sentence_correctness)
        ax.bar(
            [xi + (si - (n_schemes - 1) / 2) * bar_w for xi in x],
            heights,
            width=bar_w,
            label=_SCHEME_TITLES[scheme],
            color=_SCHEME_COLORS[scheme],
        )
    ax.set_xticks(list(x))
    ax.set_xticklabels(combos, rotation=90, fontsize=7)
    ax.set_ylabel("Sentence correctness (%)")
    ax.set_ylim(0, 105)
    ax.set_title("Test sentence correctness by view combination")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "combinations.png"
    _save(fig, path)
    written.append(path)

    fig = _figure(6.4, 4.8)
    ax = fig.subplots()
    sizes = sorted({c.count("+") + 1 for c in combos})
    for scheme in table.schemes:
        ys = []
        for size in sizes:
            vals = [
                table.row(c, scheme).sentence_correctness
                for c in combos
                if c.count("+") + 1 == size and table.row(c, scheme) is not None
            ]
            ys.append(max(vals) if vals else float("nan"))
        ax.plot(sizes, ys, marker="o", label=_SCHEME_TITLES[scheme],
                color=_SCHEME_COLORS[scheme])
    ax.set_xticks(sizes)
    ax.set_xlabel("Views fused")
    ax.set_ylabel("Best sentence correctness (%)")
    ax.set_title("Best result by number of views")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = out_dir / "best_by_views.png"
    _save(fig, path)
    written.append(path)
    return written


def write_report(table: ResultsTable, out_dir, fmt: str = "csv",
                 figures: bool = True) -> list[Path]:
    """Write the results table, the weights table, and (optionally) figures."""
    _check(table)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = {"csv": "csv", "markdown": "md"}.get(fmt)
    if ext is None:
        raise IllegalValue(f"unknown report format {fmt!r}")
    written = []
    results_path = out_dir / f"results.{ext}"
    results_path.write_text(render_results(table, fmt), encoding="utf-8")
    written.append(results_path)
    weights_path = out_dir / f"weights.{ext}"
    weights_path.write_text(render_weights(table, fmt), encoding="utf-8")
    written.append(weights_path)
    if figures:
        written.extend(render_figures(table, out_dir))
    return written
