import json

from workbench import dispatch

DESK_TOML = "sites = [[1, 0], [0, 1]]\nxi = [1.0, 1.5]\neps = 0.1\nmode_bound = 2\ncheck_bound = 10\n"


def write_config(tmp_path, body=DESK_TOML):
    path = tmp_path / "run.toml"
    path.write_text(body)
    return str(path)


def last_json_line(text):
    return json.loads([line for line in text.splitlines() if line.startswith("{")][-1])


def test_unknown_command_fails():
    assert dispatch(["no-such-command"]) != 0


def test_bad_config_prints_error_object(tmp_path, capsys):
    status = dispatch(["--config", write_config(tmp_path, "eps = 0.0\n"), "resonances"])
    assert status == 1
    error = last_json_line(capsys.readouterr().out)
    assert error["success"] is False
    assert error["module"] == "cli"
    assert error["condition"] == "malformed_config"


def test_admissible_writes_certificate(tmp_path, capsys):
    out = tmp_path / "admissible.json"
    status = dispatch(["--config", write_config(tmp_path), "admissible", "--output", str(out)])
    assert status == 0
    assert "[OK]" in capsys.readouterr().out
    report = json.loads(out.read_text())
    assert report["sites"] == [[1, 0], [0, 1]]
    assert report["certificate"]["verdict"] == "Admissible"


def test_non_admissible_sites_report_verdict(tmp_path):
    out = tmp_path / "admissible.json"
    body = "sites = [[0, 0], [1, 0], [0, 1]]\ncheck_bound = 5\n"
    assert dispatch(["--config", write_config(tmp_path, body), "admissible", "--output", str(out)]) == 0
    assert json.loads(out.read_text())["certificate"]["verdict"] == "Violation"


def test_resonances_report(tmp_path):
    out = tmp_path / "resonances.json"
    assert dispatch(["--config", write_config(tmp_path), "resonances", "--output", str(out)]) == 0
    report = json.loads(out.read_text())
    assert len(report["first_type"]) == 2
    assert len(report["second_type"]) == 2


def test_kam_run_with_no_steps_writes_header(tmp_path):
    out = tmp_path / "steps.csv"
    status = dispatch(["--config", write_config(tmp_path), "kam-run", "--steps", "0", "--output", str(out)])
    assert status == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("nu,K,eps_before,eps_after")


def test_missing_xi_is_a_config_error(tmp_path, capsys):
    body = "sites = [[1, 0], [0, 1]]\nmode_bound = 2\n"
    assert dispatch(["--config", write_config(tmp_path, body), "normal-form"]) == 1
    assert last_json_line(capsys.readouterr().out)["error"] == "xi is required for this command"


def test_debug_stats_on_empty_ledger(capsys):
    assert dispatch(["debug", "--stats"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["total_reports"] == 0
