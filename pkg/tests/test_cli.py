from pathlib import Path

from fogcoord.harness import cli, metrics
from fogcoord.trace import TraceLog

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def test_run_writes_trace_and_metrics(tmp_path, capsys):
    assert cli.main(["run", str(SCENARIOS / "minimal.yaml"), "--out", str(tmp_path), "--check"]) == 0
    trace = TraceLog.read(tmp_path / "trace.csv")
    assert trace.meta()["schema"] == "fogcoord-trace/1"
    rows = metrics.read(tmp_path / "metrics.csv")
    assert rows[0] == {"section": "run", "subject": "run", "metric": "schema", "value": "fogcoord-metrics/1"}
    out = capsys.readouterr().out
    assert "PASS safety" in out and "FAIL" not in out


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["run", str(SCENARIOS / "minimal.yaml")]) == 0
    assert (tmp_path / "env" / "trace.csv").exists()


def test_undeclared_key_exits_2_naming_the_key(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text((SCENARIOS / "minimal.yaml").read_text().replace("seed: 1", "seed: 1\nflavour: vanilla"))
    assert cli.main(["run", str(bad), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "flavour" in err and "line" in err


def test_mutant_is_caught(tmp_path, capsys):
    code = cli.main(["run", str(SCENARIOS / "split_brain.yaml"), "--mutant", "minority-quorum", "--check",
                     "--out", str(tmp_path)])
    assert code == 3
    assert "FAIL" in capsys.readouterr().out


def test_check_stored_trace(tmp_path, capsys):
    sc = str(SCENARIOS / "cap_partition.yaml")
    assert cli.main(["run", sc, "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    assert cli.main(["check", str(tmp_path / "trace.csv"), "--scenario", sc]) == 0
    assert "PASS convergence" in capsys.readouterr().out


def test_sweep_and_plot(tmp_path):
    template = str(SCENARIOS / "sweep_template.yaml")
    assert cli.main(["sweep", template, "--dim", "strategy=eventual,strict", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "summary.csv").exists()
    assert cli.main(["plot", str(tmp_path / "summary.csv"), "--out", str(tmp_path / "png")]) == 0
    assert (tmp_path / "png" / "messages.png").exists()
    assert cli.main(["sweep", template, "--dim", "colour=red", "--out", str(tmp_path)]) == 2
