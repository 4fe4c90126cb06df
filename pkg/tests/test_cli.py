import datetime as dt
import json

import numpy as np
import pytest

from cryptodiv import __version__
from cryptodiv.cli import main

from conftest import write_prices_csv

START = dt.date(2021, 1, 1)
DAYS = 40
TICKERS = [f"T{i}" for i in range(8)]


@pytest.fixture
def inputs(tmp_path):
    rng = np.random.default_rng(5)
    steps = 0.02 * (rng.standard_normal((8, DAYS)) + rng.standard_normal(DAYS))
    prices = 100 * np.exp(np.cumsum(steps, axis=1))
    write_prices_csv(tmp_path / "prices.csv", TICKERS, START, prices)
    (tmp_path / "deciles.csv").write_text("ticker\n" + "\n".join(TICKERS) + "\n")
    return tmp_path


def ingest_args(base, run="run"):
    return ["ingest", "--prices", str(base / "prices.csv"), "--deciles", str(base / "deciles.csv"),
            "--start", str(START), "--end", str(START + dt.timedelta(days=DAYS - 1)),
            "--run-dir", str(base / run)]


def full_run(base, run="run", workers=1, seed=7):
    r = str(base / run)
    assert main(ingest_args(base, run)) == 0
    assert main(["spectra", "--run-dir", r, "--tau", "10", "--no-charts", "--workers", str(workers)]) == 0
    assert main(["sample", "--run-dir", r, "--tau", "10", "--draws", "5", "--seed", str(seed),
                 "--grid-m", "2", "--grid-n", "2", "--workers", str(workers)]) == 0
    assert main(["cluster", "--run-dir", r, "--k", "2"]) == 0
    assert main(["report", "--run-dir", r]) == 0
    return base / run


def output_digests(run):
    out = {}
    for stage in ("ingest", "spectra", "sample", "cluster"):
        for rel, digest in json.loads((run / stage / "manifest.json").read_text())["outputs"].items():
            out[f"{stage}/{rel}"] = digest
    return out


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_full_pipeline(inputs, capsys):
    run = full_run(inputs)
    panel = (run / "ingest" / "panel.csv").read_text().splitlines()
    assert panel[0] == "date," + ",".join(TICKERS) and len(panel) == DAYS + 1
    assert (run / "spectra" / "ALL.csv").is_file() and (run / "spectra" / "DECILE_2.csv").is_file()
    assert len((run / "spectra" / "ALL.csv").read_text().splitlines()) == 1 + (DAYS - 1) - 10 + 1
    full = (run / "sample" / "mu_table_full.csv").read_text().splitlines()
    assert len(full) == 5 and full[1].startswith("1,1,1.0")
    assert (run / "sample" / "trajectories.csv").read_text().startswith("m,n,t_end_date,lambda_median\n")
    assert (run / "cluster" / "dendrogram.nwk").read_text().strip().endswith(";")
    assert len((run / "cluster" / "merges.csv").read_text().splitlines()) == 4
    report = (run / "report.md").read_text()
    assert "Greedy path" in report and "cluster 1" in report
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["master_seed"] == 7 and set(manifest["stages"]) == {"ingest", "spectra", "sample", "cluster"}


def test_rerun_is_bit_identical(inputs):
    a = output_digests(full_run(inputs, "a", workers=1))
    b = output_digests(full_run(inputs, "b", workers=3))
    assert a == b
    c = output_digests(full_run(inputs, "c", seed=8))
    assert c["sample/trajectories.csv"] != a["sample/trajectories.csv"]


def test_empty_prices_is_input_error(inputs, capsys):
    (inputs / "prices.csv").write_text("")
    assert main(ingest_args(inputs)) == 2
    assert "error" in capsys.readouterr().err


def test_bad_price_row_names_line(inputs, capsys):
    with open(inputs / "prices.csv", "a") as fh:
        fh.write("2021-01-05,T0,-3\n")
    assert main(ingest_args(inputs)) == 2
    assert "line" in capsys.readouterr().err


def test_gap_is_reported(tmp_path, capsys):
    prices = np.full((8, DAYS), 10.0) * np.exp(np.random.default_rng(0).normal(0, 0.01, (8, DAYS)))
    write_prices_csv(tmp_path / "prices.csv", TICKERS, START, prices, skip={("T3", 12)})
    (tmp_path / "deciles.csv").write_text("ticker\n" + "\n".join(TICKERS) + "\n")
    assert main(ingest_args(tmp_path)) == 0
    drops = (tmp_path / "run" / "ingest" / "drops.txt").read_text()
    assert drops.startswith("DROPPED T3 missing=1 first=2021-01-13")
    header = (tmp_path / "run" / "ingest" / "panel.csv").read_text().splitlines()[0]
    # T3 dropped; T5..T7 cannot fill a second decile and are trimmed
    assert header == "date,T0,T1,T2,T4"
    manifest = json.loads((tmp_path / "run" / "ingest" / "manifest.json").read_text())
    assert manifest["trimmed"] == ["T5", "T6", "T7"]


def test_unknown_scope_is_usage_error(inputs):
    assert main(ingest_args(inputs)) == 0
    assert main(["spectra", "--run-dir", str(inputs / "run"), "--scopes", "SECTORS"]) == 2


def test_cluster_argument_checks(inputs):
    run = str(inputs / "run")
    assert main(ingest_args(inputs)) == 0
    assert main(["sample", "--run-dir", run, "--tau", "10", "--draws", "1", "--grid-m", "1",
                 "--grid-n", "2"]) == 0
    assert main(["cluster", "--run-dir", run, "--k", "0"]) == 2
    assert main(["cluster", "--run-dir", run, "--k", "3"]) == 2
    assert main(["cluster", "--run-dir", run, "--k", "1"]) == 0
    assert len((inputs / "run" / "cluster" / "merges.csv").read_text().splitlines()) == 2


def test_grid_beyond_universe_is_config_error(inputs):
    assert main(ingest_args(inputs)) == 0
    assert main(["sample", "--run-dir", str(inputs / "run"), "--tau", "10", "--grid-m", "3"]) == 2


def test_report_names_missing_stage(inputs, capsys):
    assert main(ingest_args(inputs)) == 0
    assert main(["report", "--run-dir", str(inputs / "run")]) == 1
    assert "spectra" in capsys.readouterr().err


def test_report_detects_tampering(inputs, capsys):
    run = full_run(inputs)
    with open(run / "sample" / "mu_table.txt", "a") as fh:
        fh.write("edited\n")
    assert main(["report", "--run-dir", str(run)]) == 1
    assert "mu_table.txt" in capsys.readouterr().err


def test_config_file_and_env(inputs, monkeypatch):
    cfg = inputs / "cfg.yaml"
    cfg.write_text(f"prices: {inputs / 'prices.csv'}\ndeciles: {inputs / 'deciles.csv'}\n"
                   f"start: '{START}'\nend: '{START + dt.timedelta(days=DAYS - 1)}'\n"
                   f"run_dir: {inputs / 'envrun'}\ntau: 10\n")
    monkeypatch.setenv("CRYPTODIV_CONFIG", str(cfg))
    assert main(["ingest"]) == 0
    assert main(["spectra", "--scopes", "ALL"]) == 0
    assert (inputs / "envrun" / "spectra" / "ALL.csv").is_file()
    snap = json.loads((inputs / "envrun" / "spectra" / "manifest.json").read_text())["config"]
    assert snap["tau"] == 10
    cfg.write_text("bogus_key: 1\n")
    assert main(["--config", str(cfg), "ingest"]) == 2


def test_charts_are_deterministic(inputs):
    pytest.importorskip("matplotlib")
    assert main(ingest_args(inputs)) == 0
    args = ["spectra", "--run-dir", str(inputs / "run"), "--tau", "10", "--charts"]
    assert main(args) == 0
    first = (inputs / "run" / "spectra" / "lambda1_ALL.svg").read_bytes()
    assert main(args) == 0
    assert (inputs / "run" / "spectra" / "lambda1_ALL.svg").read_bytes() == first
    assert (inputs / "run" / "spectra" / "uniformity_DECILE.svg").is_file()


def test_shipped_reference_config_matches_defaults():
    from pathlib import Path

    from cryptodiv.config import AnalysisConfig, load_config

    root = Path(__file__).resolve().parents[1]
    cfg = load_config(root / "configs" / "reference.yaml")
    local = {"prices", "deciles", "workers"}
    ours = {k: v for k, v in cfg.snapshot().items() if k not in local}
    assert ours == {k: v for k, v in AnalysisConfig().snapshot().items() if k not in local}
    assert (root / cfg.deciles).is_file()
