"""Per-round diagnostics and deterministic CSV emission.

Two fixed column layouts exist, one per task family. Cells that do not
apply to a record are left empty; floats are serialized with 17 significant
digits so a written file parses back to the exact same values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class IoFailure(OSError):
    """Writing a metrics file failed."""


@dataclass
class MetricsRecord:
    kind: str  # "regression" | "classification"
    round_index: int
    global_step: int
    t_n: float | None = None
    param_error: float | None = None
    agg_grad_norm: float | None = None
    client_grad_norms: tuple[float, ...] | None = None
    delta_wbar: float | None = None
    tracking_error: float | None = None
    train_loss: float | None = None
    train_acc: float | None = None
    test_loss: float | None = None
    test_acc: float | None = None
    rare_class_acc: float | None = None
    w_bar: tuple[float, ...] | None = None


def regression_columns(n_clients: int, dim: int = 0) -> list[str]:
    cols = ["round", "global_step", "T_n", "param_error", "agg_grad_norm"]
    cols += [f"grad_norm_c{i + 1}" for i in range(n_clients)]
    cols += ["delta_wbar", "tracking_error"]
    cols += [f"w_bar_{j + 1}" for j in range(dim)]
    return cols


def classification_columns() -> list[str]:
    return [
        "round",
        "global_step",
        "train_loss",
        "train_acc",
        "test_loss",
        "test_acc",
        "rare_class_acc",
        "delta_wbar",
    ]


def columns_for(record: MetricsRecord) -> list[str]:
    if record.kind == "regression":
        n_clients = len(record.client_grad_norms or ())
        dim = len(record.w_bar or ())
        return regression_columns(n_clients, dim)
    return classification_columns()


def record_round(
    state,
    clients_data: list,
    weights: np.ndarray,
    w_star: np.ndarray | None = None,
    t_n: float | None = None,
    prev_wbar: np.ndarray | None = None,
    eval_ctx=None,
    include_wbar: bool = False,
) -> MetricsRecord:
    """Diagnostics for a freshly aggregated state.

    Gradient norms are evaluated at the aggregate w_bar; the aggregated norm
    weights each client's analytic negative gradient by its limiting ratio.
    """
    w_bar = state.w_bar
    delta = float(np.linalg.norm(w_bar - prev_wbar)) if prev_wbar is not None else None
    rec = MetricsRecord(
        kind="classification" if eval_ctx is not None else "regression",
        round_index=state.round_index,
        global_step=state.global_step - 1,
        delta_wbar=delta,
    )
    if eval_ctx is not None:
        scores = eval_ctx.evaluate(w_bar, clients_data)
        rec.train_loss = scores["train_loss"]
        rec.train_acc = scores["train_acc"]
        rec.test_loss = scores["test_loss"]
        rec.test_acc = scores["test_acc"]
        rec.rare_class_acc = scores.get("rare_class_acc")
        return rec

    rec.t_n = t_n
    hs = [c.population_h(w_bar) for c in clients_data]
    rec.client_grad_norms = tuple(float(np.linalg.norm(h)) for h in hs)
    agg = sum(p * h for p, h in zip(weights, hs)) / len(clients_data)
    rec.agg_grad_norm = float(np.linalg.norm(agg))
    if w_star is not None:
        rec.param_error = float(np.linalg.norm(w_bar - w_star))
    if include_wbar:
        rec.w_bar = tuple(float(v) for v in w_bar)
    return rec


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if np.isnan(v):
        return ""
    return format(v, ".17g")


def _row_cells(record: MetricsRecord, columns: list[str]) -> list[str]:
    grads = record.client_grad_norms or ()
    wbar = record.w_bar or ()
    cells = []
    for col in columns:
        if col == "round":
            cells.append(_format_cell(record.round_index))
        elif col == "global_step":
            cells.append(_format_cell(record.global_step))
        elif col == "T_n":
            cells.append(_format_cell(record.t_n))
        elif col.startswith("grad_norm_c"):
            idx = int(col[len("grad_norm_c") :]) - 1
            cells.append(_format_cell(grads[idx] if idx < len(grads) else None))
        elif col.startswith("w_bar_"):
            idx = int(col[len("w_bar_") :]) - 1
            cells.append(_format_cell(wbar[idx] if idx < len(wbar) else None))
        else:
            cells.append(_format_cell(getattr(record, col)))
    return cells


def write_csv(records: list[MetricsRecord], destination, columns: list[str] | None = None) -> None:
    """Write records with a stable column order and round-trip-exact floats."""
    if columns is None:
        if not records:
            raise ValueError("columns must be given explicitly for an empty record list")
        columns = columns_for(records[0])
    path = Path(destination)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for rec in records:
                writer.writerow(_row_cells(rec, columns))
    except OSError as exc:
        raise IoFailure(f"cannot write metrics to {path}: {exc}") from exc


def read_csv(path) -> tuple[list[str], list[dict[str, float | None]]]:
    """Parse a metrics CSV into (header, rows of float-or-None cells)."""
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for raw in reader:
            rows.append(
                {col: (float(cell) if cell != "" else None) for col, cell in zip(header, raw)}
            )
    return header, rows


def read_records(path, kind: str) -> list[MetricsRecord]:
    """Rebuild MetricsRecord values from a CSV written by write_csv."""
    header, rows = read_csv(path)
    grad_cols = [c for c in header if c.startswith("grad_norm_c")]
    wbar_cols = [c for c in header if c.startswith("w_bar_")]
    records = []
    for row in rows:
        grads = [row[c] for c in grad_cols]
        wbar = [row[c] for c in wbar_cols]
        records.append(
            MetricsRecord(
                kind=kind,
                round_index=int(row["round"]),
                global_step=int(row["global_step"]),
                t_n=row.get("T_n"),
                param_error=row.get("param_error"),
                agg_grad_norm=row.get("agg_grad_norm"),
                client_grad_norms=tuple(g for g in grads if g is not None) or None,
                delta_wbar=row.get("delta_wbar"),
                tracking_error=row.get("tracking_error"),
                train_loss=row.get("train_loss"),
                train_acc=row.get("train_acc"),
                test_loss=row.get("test_loss"),
                test_acc=row.get("test_acc"),
                rare_class_acc=row.get("rare_class_acc"),
                w_bar=tuple(v for v in wbar if v is not None) or None,
            )
        )
    return records
