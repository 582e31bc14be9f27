import json
import subprocess
import sys

import pytest

from acstab.cli import main


def _cfg(tmp_path, d, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def test_bands_writes_reports(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["bands", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["passed"] and summary["summary"]["n_bands"] >= 5
    rows = (out / "bands.csv").read_text().splitlines()
    assert rows[0].startswith("index,a,b,width,parity")
    assert json.loads((out / "bands.json").read_text())["kind"] == "bands"


def test_threshold_failure_exits_one(tmp_path):
    assert main(["bands", "--config", _cfg(tmp_path, {"min_bands": 100})]) == 1


def test_decompose(tmp_path):
    assert main(["decompose", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "decompose.csv").exists()


def test_maximal_small(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"ensemble": 2, "supports": [1.0, 2.0]})
    assert main(["maximal", "--config", cfg, "--seed", "5", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "maximal_thm21.csv").read_text().splitlines()
    assert rows[0] == "support_n,ensemble_idx,ratio" and len(rows) == 5


def test_asymptotics_free(tmp_path):
    cfg = _cfg(tmp_path, {"energies": [1.0, 2.0], "x_max": 1500.0, "x_compare": 1200.0})
    assert main(["asymptotics", "--config", cfg]) == 0


def test_decay_fit(tmp_path):
    cfg = _cfg(tmp_path, {"energies": [1.0, 2.0], "x_max": 8000.0, "window": [100.0, 4000.0]})
    assert main(["decay-fit", "--config", cfg]) == 0


@pytest.mark.parametrize("argv", [
    ["nonsense"],
    [],
    ["bands", "--seed", "-1"],
    ["bands", "--seed", str(2 ** 64)],
    ["bands", "--config", "/nonexistent/config.json"],
])
def test_configuration_errors_exit_two(argv):
    assert main(argv) == 2


def test_bad_json_exits_two(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{oops")
    assert main(["bands", "--config", str(p)]) == 2
    p.write_text("[1, 2]")
    assert main(["bands", "--config", str(p)]) == 2
    assert main(["asymptotics", "--config", _cfg(tmp_path, {"form": "thm99"})]) == 2


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "acstab.cli", "bands"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["kind"] == "bands"
