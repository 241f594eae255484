import json
import subprocess
import sys

import pandas as pd
import pytest

from conftest import dpc_frame
from phasepinn.cli import main
from phasepinn.config import ExperimentConfig


@pytest.fixture
def dpc_csv(tmp_path, all_regions):
    path = tmp_path / "dpc.csv"
    dpc_frame(all_regions).to_csv(path, index=False)
    return path


@pytest.fixture
def dataset(tmp_path, dpc_csv):
    out = tmp_path / "data"
    assert main(["ingest", "--input", str(dpc_csv), "--out", str(out)]) == 0
    return out


def tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_ingest_writes_every_region(dataset):
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert len(manifest["regions"]) == 21
    assert manifest["synthetic"] is False
    assert manifest["window"] == [["2020-03-05", "2020-07-14"]]
    assert len(list((dataset / "regions").glob("*.csv"))) == 21
    head = (dataset / "regions" / "lombardia.csv").read_text().splitlines()[0]
    assert head == "day_index,date,infected,recovered_removed"


def test_ingest_is_idempotent(tmp_path, dpc_csv, dataset):
    again = tmp_path / "again"
    assert main(["ingest", "--input", str(dpc_csv), "--out", str(again)]) == 0
    assert tree_bytes(dataset) == tree_bytes(again)


def test_malformed_csv_is_a_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("data,stato\n2020-03-05,ITA\n")
    assert main(["ingest", "--input", str(bad), "--out", str(tmp_path / "d")]) == 2
    assert "missing column" in capsys.readouterr().err


def test_missing_input_file(tmp_path):
    assert main(["ingest", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "d")]) == 2


def test_dry_run_plans_every_job(dataset, tmp_path, capsys):
    code = main(["reproduce", "--dry-run", "--data", str(dataset), "--out", str(tmp_path / "res")])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[-1] == "84 jobs (4 methods x 21 regions)"
    assert len(lines) == 85
    assert not (tmp_path / "res").exists()


def test_run_sir_by_region_name(dataset, tmp_path):
    res = tmp_path / "res"
    assert main(["run", "--method", "sir", "--region", "Valle d'Aosta", "--data", str(dataset), "--out", str(res)]) == 0
    frame = pd.read_csv(res / "forecasts" / "sir" / "valle_daosta.csv")
    assert list(frame.columns) == ["day_index", "date", "S", "I", "R"]
    assert len(frame) == 132
    assert frame.date.iloc[0] == "2020-03-05"
    sidecar = json.loads((res / "checkpoints" / "sir" / "valle_daosta.json").read_text())
    assert set(sidecar["sir_fit"]) >= {"beta", "gamma", "n"}
    assert (res / "logs" / "phasepinn.log").exists()


def test_run_pinn_records_loss_history(dataset, tmp_path):
    res = tmp_path / "res"
    args = ["run", "--method", "sp-pinn", "--region", "molise", "--epochs", "10", "--data", str(dataset), "--out", str(res)]
    assert main(args) == 0
    sidecar = json.loads((res / "checkpoints" / "sp-pinn" / "molise.json").read_text())
    assert len(sidecar["loss_history"]) == 10
    assert (res / "checkpoints" / "sp-pinn" / "molise.nets").exists()


def test_resume_skips_finished_jobs(dataset, tmp_path, capsys):
    args = ["run", "--method", "sir", "--region", "molise", "--data", str(dataset), "--out", str(tmp_path / "res")]
    assert main(args) == 0
    assert "done" in capsys.readouterr().out
    assert main(args) == 0
    assert "skipped" in capsys.readouterr().out
    # the seed plays no part in the mechanistic fit
    assert main(args + ["--seed", "1"]) == 0
    assert "skipped" in capsys.readouterr().out


def test_changed_setting_reruns_job(dataset, tmp_path, capsys):
    args = ["run", "--method", "mlp", "--region", "molise", "--data", str(dataset), "--out", str(tmp_path / "res")]
    assert main(args + ["--epochs", "2"]) == 0
    assert main(args + ["--epochs", "2"]) == 0
    assert main(args + ["--epochs", "3"]) == 0
    statuses = [line.split()[-1] for line in capsys.readouterr().out.splitlines()]
    assert statuses == ["done", "skipped", "done"]


def test_evaluate_single_method(dataset, tmp_path, capsys):
    res = str(tmp_path / "res")
    assert main(["run", "--method", "sir", "--data", str(dataset), "--out", res]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--methods", "sir", "--data", str(dataset), "--out", res]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "method,horizon,smape"
    assert [line.split(",")[:2] for line in out[1:]] == [["sir", "short"], ["sir", "long"], ["sir", "all"]]
    assert len(list((tmp_path / "res" / "regions").glob("*.csv"))) == 21


def test_evaluate_reports_missing_pairs(dataset, tmp_path, capsys):
    res = str(tmp_path / "res")
    main(["run", "--method", "sir", "--region", "molise", "--data", str(dataset), "--out", res])
    capsys.readouterr()
    assert main(["evaluate", "--method", "sir,mlp", "--data", str(dataset), "--out", res]) == 2
    err = capsys.readouterr().err
    assert "41 (method, region)" in err
    assert "mlp molise" in err and "sir lombardia" in err


def test_evaluate_against_synthetic_truth(tmp_path, capsys):
    data, res = str(tmp_path / "syn"), str(tmp_path / "res")
    assert main(["ingest", "--synthetic", "--out", data]) == 0
    manifest = json.loads((tmp_path / "syn" / "manifest.json").read_text())
    assert manifest["synthetic"] is True
    assert main(["run", "--method", "sir", "--data", data, "--out", res]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--methods", "sir", "--synthetic", "--data", data, "--out", res]) == 0
    capsys.readouterr()
    single = pd.read_csv(tmp_path / "res" / "regions" / "synthetic_1phase.csv").set_index("horizon")
    double = pd.read_csv(tmp_path / "res" / "regions" / "synthetic_2phase.csv").set_index("horizon")
    # one rate pair fits the single-phase wave; it misses the late recovery jump
    assert single.smape.max() < 1e-3
    assert double.loc["short", "smape"] < 1e-3 and double.loc["long", "smape"] > 0.3


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--method", "bogus"],
        ["run"],
        ["evaluate", "--methods", "sir,bogus"],
        ["frobnicate"],
        ["ingest", "--input", "a.csv", "--synthetic"],
        ["ingest"],
        [],
    ],
)
def test_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as info:
        sys.exit(main(argv))
    assert info.value.code == 1


def test_unknown_region_is_usage_error(dataset, tmp_path):
    args = ["run", "--method", "sir", "--region", "Atlantis", "--data", str(dataset), "--out", str(tmp_path / "r")]
    assert main(args) == 1


def test_print_config_round_trip(tmp_path, capsys):
    assert main(["run", "--print-config", "--epochs", "123", "--seed", "9", "--out", "elsewhere"]) == 0
    text = capsys.readouterr().out
    path = tmp_path / "cfg.json"
    path.write_text(text)
    cfg = ExperimentConfig.load(path)
    assert (cfg.epochs, cfg.seed, cfg.out_dir) == (123, 9, "elsewhere")
    assert main(["--config", str(path), "--print-config"]) == 0
    assert capsys.readouterr().out == text
    # flags still override the file
    assert main(["--config", str(path), "--print-config", "--epochs", "5"]) == 0
    assert json.loads(capsys.readouterr().out)["epochs"] == 5


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "phasepinn", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("ingest", "run", "evaluate", "reproduce"):
        assert command in proc.stdout
