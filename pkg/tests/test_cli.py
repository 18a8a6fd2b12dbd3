import csv
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from erwlab import acceptance, cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def csv_body(text):
    return list(csv.DictReader(line for line in io.StringIO(text) if not line.startswith("#")))


def csv_meta(text):
    meta = {}
    for line in text.splitlines():
        if line.startswith("# "):
            k, v = line[2:].split(": ", 1)
            meta[k] = json.loads(v)
    return meta


def test_walk_csv(capsys):
    code, out, err = run(capsys, "--seed", "3", "walk", "--runs", "500", "--step-cap", "1e4")
    assert code == 0
    assert "delta = 0" in err
    rows = csv_body(out)
    assert list(rows[0]) == cli.SURVIVAL_COLUMNS
    assert rows[0]["n"] == "1"
    meta = csv_meta(out)
    assert meta["seed"] == 3 and meta["kind"] == "walk-excursion"
    assert meta["delta"] == 0.0


def test_walk_json_lines(capsys):
    code, out, _ = run(capsys, "walk", "--runs", "20", "--format", "json", "--seed", "1")
    assert code == 0
    lines = out.strip().splitlines()
    assert "meta" in json.loads(lines[0])
    recs = [json.loads(x) for x in lines[1:]]
    assert len(recs) == 20 and set(recs[0]) >= {"path", "returned", "duration", "depth"}


def test_walk_return_and_escape(capsys):
    code, out, _ = run(capsys, "walk", "--mode", "return", "--runs", "300", "--seed", "2",
                       "--step-cap", "1000", "--range-cap", "1000")
    assert code == 0 and csv_body(out)
    code, out, err = run(capsys, "walk", "--mode", "escape", "--runs", "200", "--seed", "2",
                         "--config", str(CONFIGS / "delta2.yaml"), "--range-cap", "200")
    assert code == 0
    assert "delta = 2" in err
    assert "escape" in json.loads(out)


def test_config_echo(capsys):
    code, _, err = run(capsys, "walk", "--runs", "10", "--config", str(CONFIGS / "negative.yaml"))
    assert code == 0
    assert "delta = -1.5" in err


@pytest.mark.parametrize("mode", ["raw", "conditioned", "progeny", "modified", "overshoot", "h"])
def test_bp_modes(capsys, mode):
    extra = {"h": ["--n-grid", "8,16", "--runs", "200"],
             "overshoot": ["--n-grid", "16,32", "--runs", "200"],
             "modified": ["--runs", "3", "--gen-cap", "20"]}.get(mode, ["--runs", "300"])
    code, out, _ = run(capsys, "bp", "--mode", mode, "--seed", "4", "--gen-cap", "1e4", *extra)
    assert code == 0
    assert csv_body(out)


def test_bp_json_summary(capsys):
    code, out, _ = run(capsys, "bp", "--runs", "2000", "--seed", "5", "--format", "json")
    assert code == 0
    d = json.loads(out)
    assert d["meta"]["kind"] == "bp"
    assert 0.0 < d["extinct_fraction"] <= 1.0


@pytest.mark.parametrize("mode", ["path", "functionals", "scaling", "ab", "marginal"])
def test_sde_modes(capsys, mode):
    code, out, err = run(capsys, "sde", "--delta", "0.5", "--mode", mode, "--runs", "300",
                         "--dt", "1e-3", "--horizon", "5", "--seed", "6")
    assert code == 0
    assert "delta = 0.5" in err
    assert out.strip()


def test_fit(capsys, tmp_path):
    p = tmp_path / "s.csv"
    import numpy as np
    x = np.random.default_rng(1).random(20000) ** -2.0
    p.write_text("value,censored\n" + "".join(f"{v},0\n" for v in x))
    code, out, _ = run(capsys, "fit", str(p))
    assert code == 0
    fit = json.loads(out)["fit"]
    assert abs(fit["exponent"] - 0.5) < 0.05
    code, out, _ = run(capsys, "--format", "csv", "fit", str(p))
    assert code == 0 and csv_body(out)


def test_fit_bad_input(capsys, tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("value\n1\nabc\n")
    assert run(capsys, "fit", str(p))[0] == 2
    assert run(capsys, "fit", str(tmp_path / "missing.csv"))[0] == 2


def test_sweep(capsys):
    code, out, _ = run(capsys, "sweep", "--deltas", "0", "--budget", "3000", "--gen-cap", "1e4",
                       "--return-cap", "1e4", "--seed", "7")
    assert code == 0
    rows = csv_body(out)
    assert list(rows[0]) == cli.PHASE_COLUMNS
    assert float(rows[0]["depth_target"]) == 1.0


def test_mean_r(capsys):
    code, out, err = run(capsys, "mean-r", "--delta", "2", "--caps", "100,1000", "--budget",
                         "3000", "--seed", "8", "--format", "json")
    assert code == 0
    d = json.loads(out)
    assert d["meta"]["kind"] == "mean-r"
    assert [r["cap"] for r in d["rows"]] == [100, 1000]
    assert "delta = 2" in err


def test_integer_forms():
    assert cli._int("1e6") == 10**6
    assert cli._int("10**6") == 10**6
    assert cli._int("42") == 42


@pytest.mark.parametrize("argv", [
    ["walk", "--runs", "1.5"],
    ["walk", "--config", "/nonexistent.yaml"],
    ["walk", "--mode", "sideways"],
    ["accept", "--suite", "nonsense"],
    ["sde", "--delta", "0.5", "--dt", "0.5", "--runs", "5"],
    ["bogus"],
])
def test_config_errors_exit_2(capsys, argv):
    with pytest.raises(SystemExit) as e:
        sys.exit(cli.main(argv))
    assert e.value.code == 2


def test_bad_yaml_exit_2(capsys, tmp_path):
    p = tmp_path / "env.yaml"
    p.write_text("m: 2\nstacks:\n  - probs: [0.9]\n    weight: 1.0\n")
    assert run(capsys, "walk", "--runs", "5", "--config", str(p))[0] == 2


def test_seed_env(capsys, monkeypatch):
    monkeypatch.setenv("ERWLAB_SEED", "11")
    _, a, _ = run(capsys, "walk", "--runs", "300")
    _, b, _ = run(capsys, "walk", "--runs", "300", "--seed", "11")
    assert a == b
    assert csv_meta(a)["seed"] == 11
    monkeypatch.setenv("ERWLAB_SEED", "not-a-seed")
    assert cli.main(["walk", "--runs", "5"]) == 2


def test_outputs_identical_across_workers(capsys, tmp_path):
    outs = []
    for w in ("1", "2"):
        p = tmp_path / f"o{w}.csv"
        assert run(capsys, "--workers", w, "walk", "--runs", "2000", "--seed", "9",
                   "--out", str(p))[0] == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_flags_after_subcommand(capsys):
    _, a, _ = run(capsys, "--seed", "5", "bp", "--runs", "100")
    _, b, _ = run(capsys, "bp", "--runs", "100", "--seed", "5")
    assert a == b


def test_spec_version_ignores_out_and_workers():
    a = cli.ExperimentSpec("walk-excursion", None, 10, {}, 1, {}, "x.csv", 1)
    b = cli.ExperimentSpec("walk-excursion", None, 10, {}, 1, {}, None, 4)
    c = cli.ExperimentSpec("walk-excursion", None, 11, {}, 1, {}, None, 4)
    assert a.version() == b.version() != c.version()


def test_accept_concentration(capsys, tmp_path):
    p = tmp_path / "acc.json"
    code, _, err = run(capsys, "accept", "--suite", "concentration", "--out", str(p))
    assert code == 0
    assert "[PASS]" in err and "concentration" in err
    d = json.loads(p.read_text())
    assert d["passed"] is True and len(d["criteria"]) == 1


def test_accept_failure_exit_1(capsys, monkeypatch):
    targets = dict(acceptance.TARGETS)
    targets["concentration"] = {"violations": acceptance.Target(hi=-1.0)}
    monkeypatch.setattr(acceptance, "TARGETS", targets)
    code, _, err = run(capsys, "accept", "--suite", "7")
    assert code == 1
    assert "[FAIL]" in err


def test_console_script():
    env = dict(os.environ, ERWLAB_SEED="3")
    r = subprocess.run([sys.executable, "-m", "erwlab.cli", "walk", "--runs", "50"],
                       capture_output=True, text=True, env=env, timeout=120)
    assert r.returncode == 0
    assert "# seed: 3" in r.stdout
