"""Render metrics CSVs and sweep indexes into PNG figures.

The input contract is the documented CSV schema of the simulator: a header
row followed by numeric cells, empty cell meaning "not applicable". This
module never mutates its inputs and reads nothing but the files it is
given.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


class SchemaError(ValueError):
    """A required column is missing from a CSV header."""

    def __init__(self, column: str, source) -> None:
        super().__init__(f"column {column!r} missing from {source}")
        self.column = column


REGRESSION_REQUIRED = ("round", "param_error", "agg_grad_norm", "delta_wbar")
CLASSIFICATION_REQUIRED = ("round", "train_loss", "train_acc", "test_loss", "test_acc")


@dataclass
class FigureSpec:
    """One figure: which columns of which CSV to draw, and how."""

    source: Path
    columns: list[str]
    labels: list[str]
    output: Path
    title: str = ""
    ylabel: str = ""
    logy: bool = False

    def validate(self, header: list[str]) -> None:
        for column in self.columns:
            if column not in header:
                raise SchemaError(column, self.source)


def read_metrics(path) -> tuple[list[str], list[dict[str, float | None]]]:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("round", path) from None
        rows = [
            {col: (float(cell) if cell != "" else None) for col, cell in zip(header, row)}
            for row in reader
        ]
    return header, rows


def _series(rows: list[dict], x_col: str, y_col: str, logy: bool) -> tuple[list, list]:
    xs, ys = [], []
    for row in rows:
        x, y = row.get(x_col), row.get(y_col)
        if x is None or y is None:
            continue
        if logy and y <= 0:
            continue
        xs.append(x)
        ys.append(y)
    return xs, ys


def render(spec: FigureSpec, header: list[str], rows: list[dict]) -> Path:
    spec.validate(header)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    drew_any = False
    for column, label in zip(spec.columns, spec.labels):
        xs, ys = _series(rows, "round", column, spec.logy)
        if xs:
            drew_any = True
        ax.plot(xs, ys, label=label, linewidth=1.0)
    if spec.logy and drew_any:
        ax.set_yscale("log")
    ax.set_xlabel("round")
    ax.set_ylabel(spec.ylabel)
    ax.set_title(spec.title)
    if len(spec.columns) > 1:
        ax.legend(fontsize=8, ncols=2)
    fig.tight_layout()
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output, dpi=110)
    plt.close(fig)
    if not drew_any:
        print(f"warning: no data points to plot in {spec.source}", file=sys.stderr)
    return spec.output


def _has_values(rows: list[dict], column: str) -> bool:
    return any(row.get(column) is not None for row in rows)


def plot_run(csv_path, out_dir) -> list[Path]:
    """Emit one image per metric family found in a run CSV."""
    csv_path = Path(csv_path)
    out_dir = Path(out_dir)
    header, rows = read_metrics(csv_path)
    if "round" not in header:
        raise SchemaError("round", csv_path)
    stem = csv_path.stem
    specs: list[FigureSpec] = []
    if "train_loss" in header:
        for column in CLASSIFICATION_REQUIRED:
            if column not in header:
                raise SchemaError(column, csv_path)
        loss_cols = ["train_loss", "test_loss"]
        acc_cols = ["train_acc", "test_acc"]
        if "rare_class_acc" in header and _has_values(rows, "rare_class_acc"):
            acc_cols.append("rare_class_acc")
        specs.append(
            FigureSpec(csv_path, loss_cols, loss_cols, out_dir / f"{stem}_loss.png",
                       title="training and test loss", ylabel="cross-entropy")
        )
        specs.append(
            FigureSpec(csv_path, acc_cols, acc_cols, out_dir / f"{stem}_accuracy.png",
                       title="accuracy", ylabel="accuracy")
        )
        specs.append(
            FigureSpec(csv_path, ["delta_wbar"], ["delta_wbar"],
                       out_dir / f"{stem}_delta_wbar.png",
                       title="aggregate update size", ylabel="|change in average weights|",
                       logy=True)
        )
    else:
        for column in REGRESSION_REQUIRED:
            if column not in header:
                raise SchemaError(column, csv_path)
        grad_cols = ["agg_grad_norm"] + [c for c in header if c.startswith("grad_norm_c")]
        specs.append(
            FigureSpec(csv_path, ["param_error"], ["param_error"],
                       out_dir / f"{stem}_param_error.png",
                       title="distance to the weighted optimum", ylabel="parameter error",
                       logy=True)
        )
        specs.append(
            FigureSpec(csv_path, grad_cols, grad_cols, out_dir / f"{stem}_grad_norms.png",
                       title="gradient norms at the aggregate", ylabel="norm", logy=True)
        )
        specs.append(
            FigureSpec(csv_path, ["delta_wbar"], ["delta_wbar"],
                       out_dir / f"{stem}_delta_wbar.png",
                       title="aggregate update size", ylabel="|change in average weights|",
                       logy=True)
        )
        if "tracking_error" in header and _has_values(rows, "tracking_error"):
            specs.append(
                FigureSpec(csv_path, ["tracking_error"], ["tracking_error"],
                           out_dir / f"{stem}_tracking_error.png",
                           title="flow tracking error", ylabel="tracking error")
            )
    return [render(spec, header, rows) for spec in specs]


def plot_sweep(index_path, out_dir) -> list[Path]:
    """Overlay the swept runs' parameter error and gradient norm."""
    index_path = Path(index_path)
    out_dir = Path(out_dir)
    index = json.loads(index_path.read_text(encoding="utf-8"))
    parameter = index["parameter"]
    fig, (ax_err, ax_grad) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    for entry in index["runs"]:
        source = index_path.parent / entry["csv"]
        header, rows = read_metrics(source)
        for column in ("round", "param_error", "agg_grad_norm"):
            if column not in header:
                raise SchemaError(column, source)
        label = f"{parameter}={entry['value']}"
        xs, ys = _series(rows, "round", "param_error", logy=True)
        ax_err.plot(xs, ys, label=label, linewidth=1.0)
        xs, ys = _series(rows, "round", "agg_grad_norm", logy=True)
        ax_grad.plot(xs, ys, label=label, linewidth=1.0)
    for ax, ylabel in ((ax_err, "parameter error"), (ax_grad, "aggregated gradient norm")):
        ax.set_yscale("log")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
    ax_grad.set_xlabel("round")
    ax_err.set_title(f"sweep over {parameter}")
    fig.tight_layout()
    out_dir.mkdir(parents=True, exist_ok=True)
    output = out_dir / f"sweep_{parameter.replace('-', '_')}.png"
    fig.savefig(output, dpi=110)
    plt.close(fig)
    return [output]
