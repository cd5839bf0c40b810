"""Unit tests over synthetic CSVs plus one end-to-end path that drives
the installed trainer CLI to produce real artifacts and renders them."""

import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from plotkit import charts, readers
from plotkit.cli import main, split_input

PKG_ROOT = Path(__file__).resolve().parents[2]
CONFIGS = PKG_ROOT / "configs"


def run_cli(*argv):
    return main([str(a) for a in argv])


def write_run_csv(path, steps=8, scale=1.0):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "train_loss", "val_loss", "effective_lr",
                         "wall_micros"])
        for s in range(1, steps + 1):
            loss = scale / s
            writer.writerow([s, repr(loss), repr(1.5 * loss), repr(0.01), 120])
    return path


def write_wide_csv(path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([10, "orthogonalized", 1.0, 0.9, 0.7])
        writer.writerow([10, "final", 0.9, 0.85, 0.8])
        writer.writerow([20, "orthogonalized", 1.1, 0.95, 0.75])
        writer.writerow([20, "final", 0.95, 0.9, 0.85])
    return path


def write_steps_to_loss(path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["optimizer", "reached_step", "total_steps",
                         "gain_percent"])
        writer.writerow(["adamw", "", 40, ""])
        writer.writerow(["muon", 40, 40, repr(0.0)])
        writer.writerow(["normuon", 31, 40, repr(22.5)])
    return path


def test_read_run_csv_columns(tmp_path):
    cols = readers.read_run_csv(write_run_csv(tmp_path / "run.csv"))
    assert list(cols["step"]) == list(range(1, 9))
    assert cols["train_loss"][0] == 1.0
    assert cols["val_loss"][3] == 1.5 / 4
    assert cols["effective_lr"].shape == (8,)


def test_read_run_csv_rejects_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("step,loss\n1,0.5\n")
    with pytest.raises(readers.InputError, match="missing columns"):
        readers.read_run_csv(path)


def test_read_run_csv_rejects_empty(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("step,train_loss,val_loss,effective_lr,wall_micros\n")
    with pytest.raises(readers.InputError, match="no data rows"):
        readers.read_run_csv(path)


def test_read_wide_csv_and_latest_rows(tmp_path):
    rows = readers.read_wide_csv(write_wide_csv(tmp_path / "spectra.csv"))
    assert len(rows) == 4
    assert rows[0].label == "orthogonalized"
    assert np.array_equal(rows[0].values, [1.0, 0.9, 0.7])
    last = readers.latest_rows(rows)
    assert [r.step for r in last] == [20, 20]
    assert [r.label for r in last] == ["orthogonalized", "final"]


def test_read_wide_csv_rejects_short_rows(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("5,final\n")
    with pytest.raises(readers.InputError, match="need step"):
        readers.read_wide_csv(path)


def test_read_steps_to_loss_handles_blanks(tmp_path):
    rows = readers.read_steps_to_loss(write_steps_to_loss(tmp_path / "t.csv"))
    assert rows[0].reached_step is None and rows[0].gain_percent is None
    assert rows[1].reached_step == 40
    assert rows[2].gain_percent == 22.5


def test_split_input_labeling():
    assert split_input("runs/muon/run.csv") == ("runs/muon/run.csv", "muon")
    assert split_input("runs/a/spectra.csv:tuned") == ("runs/a/spectra.csv", "tuned")
    assert split_input("notes.csv") == ("notes.csv", "notes")


def test_loss_curve_renders_both_series(tmp_path):
    a = write_run_csv(tmp_path / "a.csv", scale=1.0)
    b = write_run_csv(tmp_path / "b.csv", scale=2.0)
    out = tmp_path / "loss.svg"
    assert run_cli("--kind", "loss_curve", "--in", f"{a}:fast",
                   "--in", f"{b}:slow", "--out", out) == 0
    text = out.read_text()
    assert out.stat().st_size > 0
    assert ">fast<" in text and ">slow<" in text


def test_loss_curve_alternate_metric(tmp_path):
    a = write_run_csv(tmp_path / "a.csv")
    out = tmp_path / "val.svg"
    assert run_cli("--kind", "loss_curve", "--in", a, "--out", out,
                   "--metric", "val_loss") == 0
    assert ">val_loss<" in out.read_text()


def test_loss_curve_unknown_metric_exits_2(tmp_path, capsys):
    a = write_run_csv(tmp_path / "a.csv")
    assert run_cli("--kind", "loss_curve", "--in", a,
                   "--out", tmp_path / "x.svg", "--metric", "mystery") == 2
    assert "no column 'mystery'" in capsys.readouterr().err


def test_spectrum_plots_latest_step_rows(tmp_path):
    wide = write_wide_csv(tmp_path / "spectra.csv")
    out = tmp_path / "spec.svg"
    assert run_cli("--kind", "spectrum", "--in", f"{wide}:runA",
                   "--out", out) == 0
    text = out.read_text()
    assert ">runA:orthogonalized<" in text and ">runA:final<" in text


def test_neuron_norms_renders(tmp_path):
    wide = write_wide_csv(tmp_path / "neuron_norms.csv")
    out = tmp_path / "norms.svg"
    assert run_cli("--kind", "neuron_norms", "--in", wide, "--out", out) == 0
    assert ">neuron_norms:final<" not in out.read_text()  # label is dir-based
    assert out.stat().st_size > 0


def test_efficiency_bar_renders_with_not_reached(tmp_path):
    table = write_steps_to_loss(tmp_path / "steps_to_loss.csv")
    out = tmp_path / "gain.svg"
    assert run_cli("--kind", "efficiency_bar", "--in", table, "--out", out) == 0
    text = out.read_text()
    for needle in (">adamw<", ">muon<", ">normuon<", ">not reached<", "-22.5%"):
        assert needle in text


def test_efficiency_bar_requires_single_input(tmp_path, capsys):
    table = write_steps_to_loss(tmp_path / "t.csv")
    assert run_cli("--kind", "efficiency_bar", "--in", table, "--in", table,
                   "--out", tmp_path / "x.svg") == 2
    assert "exactly one" in capsys.readouterr().err


def test_missing_input_exits_2(tmp_path, capsys):
    assert run_cli("--kind", "loss_curve", "--in", tmp_path / "absent.csv",
                   "--out", tmp_path / "x.svg") == 2
    assert "input error" in capsys.readouterr().err


def test_unknown_kind_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as err:
        run_cli("--kind", "pie", "--in", "x.csv", "--out", "y.svg")
    assert err.value.code == 2


def test_png_output(tmp_path):
    a = write_run_csv(tmp_path / "a.csv")
    out = tmp_path / "loss.png"
    assert run_cli("--kind", "loss_curve", "--in", a, "--out", out) == 0
    assert out.stat().st_size > 0
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_svg_rendering_is_deterministic(tmp_path):
    a = write_run_csv(tmp_path / "a.csv")
    outs = []
    for name in ("one.svg", "two.svg"):
        out = tmp_path / name
        assert run_cli("--kind", "loss_curve", "--in", f"{a}:x",
                       "--out", out) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def trainer_cli(*argv):
    proc = subprocess.run([sys.executable, "-m", "normuon.cli",
                           *[str(a) for a in argv]],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    return proc


@pytest.fixture(scope="module")
def training_artifacts(tmp_path_factory):
    """Short real runs produced by the trainer CLI, files only."""
    base = tmp_path_factory.mktemp("runs")
    short = ("--set", "run.steps=25", "--set", "schedule.warmup_steps=5",
             "--set", "run.probe_stride=10")
    trainer_cli("run", "--config", CONFIGS / "baseline.toml", *short,
                "--out", base / "normuon")
    trainer_cli("run", "--config", CONFIGS / "muon.toml", *short,
                "--out", base / "muon")
    trainer_cli("steps-to-loss", "--ref", "muon",
                "--run", base / "normuon", "--run", base / "muon",
                "--out", base / "steps_to_loss.csv")
    return base


def test_b1_renders_real_training_artifacts(training_artifacts, tmp_path):
    runs = training_artifacts
    loss_svg = tmp_path / "loss.svg"
    assert run_cli("--kind", "loss_curve",
                   "--in", f"{runs / 'normuon' / 'run.csv'}:normuon",
                   "--in", f"{runs / 'muon' / 'run.csv'}:muon",
                   "--out", loss_svg) == 0
    assert loss_svg.stat().st_size > 0
    text = loss_svg.read_text()
    assert ">normuon<" in text and ">muon<" in text

    spec_svg = tmp_path / "spectrum.svg"
    assert run_cli("--kind", "spectrum",
                   "--in", f"{runs / 'normuon' / 'spectra.csv'}:normuon",
                   "--in", f"{runs / 'muon' / 'spectra.csv'}:muon",
                   "--out", spec_svg) == 0
    assert spec_svg.stat().st_size > 0
    text = spec_svg.read_text()
    for needle in (">normuon:final<", ">muon:final<"):
        assert needle in text
    print("B1 PASS - loss_curve and spectrum rendered from trainer CSVs, "
          "nonzero files, both series labels present")


def test_b1_efficiency_bar_from_real_table(training_artifacts, tmp_path):
    out = tmp_path / "gain.svg"
    assert run_cli("--kind", "efficiency_bar",
                   "--in", training_artifacts / "steps_to_loss.csv",
                   "--out", out) == 0
    text = out.read_text()
    assert ">normuon<" in text and ">muon<" in text


def test_console_script_installed():
    proc = subprocess.run([sys.executable, "-m", "plotkit.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "loss_curve" in proc.stdout
