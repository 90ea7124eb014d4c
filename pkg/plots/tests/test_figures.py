import json

import pytest

from fedplots.figures import SchemaError, plot_run, plot_sweep, read_metrics


def regression_csv(tmp_path, name="metrics.csv", rows=30, clients=2, tracking=False, header_only=False):
    cols = ["round", "global_step", "T_n", "param_error", "agg_grad_norm"]
    cols += [f"grad_norm_c{i+1}" for i in range(clients)]
    cols += ["delta_wbar", "tracking_error"]
    lines = [",".join(cols)]
    if not header_only:
        for r in range(rows):
            err = 10.0 / (r + 1)
            track = f"{0.5 / (r + 1):.6g}" if tracking and 5 <= r <= 20 else ""
            delta = "" if r == 0 else f"{1.0 / (r + 1):.6g}"
            cells = [str(r), str(5 * r), f"{0.1 * r:.6g}", f"{err:.6g}", f"{2 * err:.6g}"]
            cells += [f"{3 * err:.6g}"] * clients
            cells += [delta, track]
            lines.append(",".join(cells))
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def classification_csv(tmp_path, name="cls.csv", rows=20, rare=True):
    cols = ["round", "global_step", "train_loss", "train_acc", "test_loss", "test_acc", "rare_class_acc", "delta_wbar"]
    lines = [",".join(cols)]
    for r in range(rows):
        loss = 1.6 / (r + 1)
        acc = 1.0 - loss / 2
        rare_cell = f"{acc * 0.9:.6g}" if rare else ""
        delta = "" if r == 0 else "0.01"
        lines.append(
            ",".join([str(r), str(3 * r), f"{loss:.6g}", f"{acc:.6g}", f"{loss*1.1:.6g}", f"{acc*0.98:.6g}", rare_cell, delta])
        )
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_plot_run_regression_families(tmp_path):
    csv_path = regression_csv(tmp_path, tracking=True)
    outputs = plot_run(csv_path, tmp_path / "figs")
    names = sorted(p.name for p in outputs)
    assert names == [
        "metrics_delta_wbar.png",
        "metrics_grad_norms.png",
        "metrics_param_error.png",
        "metrics_tracking_error.png",
    ]
    for path in outputs:
        assert path.stat().st_size > 0


def test_plot_run_without_tracking_column_values(tmp_path):
    csv_path = regression_csv(tmp_path, tracking=False)
    outputs = plot_run(csv_path, tmp_path / "figs")
    assert not any("tracking" in p.name for p in outputs)
    assert len(outputs) == 3


def test_plot_run_classification_panels(tmp_path):
    csv_path = classification_csv(tmp_path)
    outputs = plot_run(csv_path, tmp_path / "figs")
    names = sorted(p.name for p in outputs)
    assert names == ["cls_accuracy.png", "cls_delta_wbar.png", "cls_loss.png"]
    for path in outputs:
        assert path.stat().st_size > 0


def test_plot_run_header_only_warns_but_succeeds(tmp_path, capsys):
    csv_path = regression_csv(tmp_path, header_only=True)
    outputs = plot_run(csv_path, tmp_path / "figs")
    assert all(p.exists() for p in outputs)
    assert "no data points" in capsys.readouterr().err


def test_plot_run_corrupted_header_names_column(tmp_path):
    csv_path = regression_csv(tmp_path)
    text = csv_path.read_text().replace("param_error", "paramerror")
    bad = tmp_path / "bad.csv"
    bad.write_text(text, encoding="utf-8")
    with pytest.raises(SchemaError) as err:
        plot_run(bad, tmp_path / "figs")
    assert err.value.column == "param_error"
    assert "param_error" in str(err.value)


def test_plot_run_is_idempotent(tmp_path):
    csv_path = regression_csv(tmp_path)
    first = plot_run(csv_path, tmp_path / "figs")
    second = plot_run(csv_path, tmp_path / "figs")
    assert [p.name for p in first] == [p.name for p in second]
    assert all(p.stat().st_size > 0 for p in second)
    # inputs untouched
    assert read_metrics(csv_path)[1][3]["param_error"] == pytest.approx(10.0 / 4)


def make_index(tmp_path, n_runs, parameter="delta"):
    entries = []
    for i in range(n_runs):
        name = f"{parameter}_{i:02d}.csv"
        regression_csv(tmp_path, name=name, rows=25)
        entries.append({"value": 0.76 + 0.06 * i, "csv": name})
    index = tmp_path / "index.json"
    index.write_text(json.dumps({"parameter": parameter, "runs": entries}), encoding="utf-8")
    return index


def test_plot_sweep_overlay(tmp_path):
    index = make_index(tmp_path, 5)
    outputs = plot_sweep(index, tmp_path / "figs")
    assert [p.name for p in outputs] == ["sweep_delta.png"]
    assert outputs[0].stat().st_size > 0


def test_plot_sweep_single_run_degenerate(tmp_path):
    index = make_index(tmp_path, 1, parameter="snr_db")
    outputs = plot_sweep(index, tmp_path / "figs")
    assert outputs[0].name == "sweep_snr_db.png"
    assert outputs[0].stat().st_size > 0


def test_plot_sweep_schema_error(tmp_path):
    index = make_index(tmp_path, 2)
    victim = tmp_path / "delta_01.csv"
    victim.write_text(victim.read_text().replace("agg_grad_norm", "agg"), encoding="utf-8")
    with pytest.raises(SchemaError) as err:
        plot_sweep(index, tmp_path / "figs")
    assert err.value.column == "agg_grad_norm"
