import json
import subprocess
import sys

import pytest
import yaml

from zpdvr.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main


def _config(tmp_path, **kw):
    raw = {
        "problem": {"kind": "quadratic", "n": 10, "d": 4, "kappa": 4, "lambda1": 0.1},
        "algorithms": {"zpdvr": {"eta": 0.005}, "pgd": {"eta": 0.1}},
        "grid": {"pgd": {"eta": [0.05, 0.1]}},
        "budget": 20,
        "v": 1e-5,
        "sample_every": 5,
        "out_dir": str(tmp_path / "out"),
    }
    raw.update(kw)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_run_and_summarize(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["run", str(cfg), "--algorithm", "pgd", "--seed", "3"]) == EXIT_OK
    assert (tmp_path / "out" / "pgd_seed3.csv").is_file()
    assert not (tmp_path / "out" / "zpdvr_seed3.csv").exists()
    assert main(["summarize", str(tmp_path / "out")]) == EXIT_OK
    assert "pgd" in capsys.readouterr().out


def test_compare_respects_budget_override(tmp_path):
    cfg = _config(tmp_path)
    out = tmp_path / "cmp"
    assert main(["compare", str(cfg), "--budget", "500", "--budget-unit", "szo", "--out-dir", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["budget_szo"] == 500
    assert {c["algorithm"] for c in summary["cells"]} == {"zpdvr", "pgd"}


def test_gridsearch(tmp_path):
    cfg = _config(tmp_path)
    assert main(["gridsearch", str(cfg), "--algorithm", "pgd"]) == EXIT_OK
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert len(summary["leaderboard"]["pgd"]) == 2


def test_config_errors_exit_two(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
    bad = _config(tmp_path, budget=-5)
    assert main(["run", str(bad)]) == EXIT_CONFIG
    assert main(["summarize", str(tmp_path)]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["validate", "astrology"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_validate_projection_reports_target(capsys):
    assert main(["validate", "projection", "--quick"]) == EXIT_OK
    records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    d3 = [r for r in records if r["details"]["d"] == 3][0]
    assert d3["bound"] == pytest.approx(5.0)
    assert all(r["passed"] for r in records)


def test_validate_failure_exit_code(monkeypatch):
    from zpdvr import cli
    from zpdvr.theory import MCResult

    monkeypatch.setattr(cli, "validate", lambda suite, quick: [MCResult("x", False, 1.0, 0.0, 0.0, 1)])
    assert main(["validate", "moments"]) == EXIT_FAIL


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "zpdvr.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("run", "compare", "gridsearch", "validate", "summarize"):
        assert cmd in proc.stdout
