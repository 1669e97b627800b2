import json
import subprocess
import sys
import urllib.request

import pytest

from dspscale.cli import main


def test_scenarios_listing(capsys):
    assert main(["scenarios"]) == 0
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names == sorted(names) and "counter" in names


def test_run_writes_report(tmp_path):
    out = tmp_path / "r.json"
    assert main(["run", "counter", "--users", "2", "--machines", "3", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["ok"] and doc["scale"]["machines"] == 3


def test_run_with_config_and_faults(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"checkpoint": "every_step", "rep_factor": 2}))
    faults = tmp_path / "f.json"
    faults.write_text(json.dumps([{"event_index": 60, "action": "kill", "machine": 0}]))
    out = tmp_path / "r.json"
    code = main(["run", "long_walk", "--machines", "3", "--config", str(cfg), "--faults", str(faults), "--out", str(out)])
    assert code == 0
    assert json.loads(out.read_text())["metrics"]["faults"][0]["machine"] == 0


def test_compare_exit_codes(tmp_path, capsys):
    a, b, c = (tmp_path / n for n in ("a.json", "b.json", "c.json"))
    main(["run", "chain", "--out", str(a)])
    main(["run", "chain", "--machines", "4", "--mode", "data_centric", "--out", str(b)])
    doc = json.loads(a.read_text())
    doc["final_graph"][0]["nodes"][1]["properties"]["hits"] = -1
    c.write_text(json.dumps(doc))
    assert main(["compare", str(a), str(b)]) == 0
    assert main(["compare", str(a), str(c)]) == 1
    assert "'hits'" in capsys.readouterr().out


def test_bench_csv(capsys):
    assert main(["bench", "star", "--modes", "data_centric", "hybrid"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("scenario,mode") and len(lines) == 3


def test_verify_subset(tmp_path, capsys):
    out = tmp_path / "v.json"
    assert main(["verify", "--only", "4", "6", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.count("[PASS]") == 2
    assert [c["id"] for c in json.loads(out.read_text())["criteria"]] == [4, 6]


def test_bad_inputs(tmp_path, capsys):
    assert main(["compare", str(tmp_path / "missing.json"), str(tmp_path / "x.json")]) == 2
    with pytest.raises(SystemExit):
        main(["run", "nonexistent"])


def test_serve_smoke(tmp_path):
    proc = subprocess.Popen(
        [sys.executable, "-m", "dspscale", "serve", "--listen", "127.0.0.1:0", "--persist", str(tmp_path / "s.json")],
        stdout=subprocess.PIPE,
        text=True,
    )
    try:
        url = proc.stdout.readline().split()[-1]
        req = urllib.request.Request(url + "/walker/incr", data=b"{}", method="POST", headers={"X-User": "ada"})
        with urllib.request.urlopen(req, timeout=5) as resp:
            assert json.loads(resp.read()) == {"count": 1}
    finally:
        proc.terminate()
        proc.wait(5)
    assert (tmp_path / "s.json").exists()
