import json
from pathlib import Path

import pytest

from signorini_lab.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from signorini_lab.config import DEFAULTS, EXPERIMENTS, ConfigError, apply_override, load, parse_value, resolve

REPO = Path(__file__).resolve().parents[1]


def test_defaults_cover_every_experiment():
    assert set(DEFAULTS) == set(EXPERIMENTS)
    for name in EXPERIMENTS:
        cfg = resolve({"experiment": name})
        assert cfg.seed == 0 and cfg.output == name and not cfg.deterministic


@pytest.mark.parametrize("path", sorted((REPO / "configs").glob("*.toml")))
def test_shipped_configs_load(path):
    assert load(path).experiment == path.stem


@pytest.mark.parametrize(
    "raw",
    [
        {"experiment": "nope"},
        {"experiment": "spectrum", "colour": 1},
        {"experiment": "spectrum", "grid": {"mesh": 3}},
        {"experiment": "spectrum", "solver": {"eps": -0.1}},
        {"experiment": "spectrum", "solver": {"scheme": "explicit"}},
        {"experiment": "spectrum", "solver": {"omega": 2.0}},
        {"experiment": "spectrum", "grid": {"h": 5.0}},
        {"experiment": "spectrum", "seed": -1},
        {"experiment": "spectrum", "deterministic": "yes"},
        {"experiment": "decay-32", "params": {"delta": 1.5}},
        {"experiment": "frequency-gap", "params": {"eps": [0.1, 1.0]}},
        {"experiment": "crossval", "params": {"eps": [0.1]}},
        {"experiment": "spectrum", "params": {"levels": []}},
        {"experiment": "spectrum", "grid": "fine"},
    ],
)
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        resolve(raw)


def test_overrides():
    cfg = resolve({"experiment": "crossval"}, ["solver.eps=0.05", "params.eps=[0.2, 0.02]", "seed=7"])
    assert cfg.solver["eps"] == 0.05 and cfg.params["eps"] == [0.2, 0.02] and cfg.seed == 7
    assert parse_value("projected") == "projected"
    assert parse_value("true") is True
    with pytest.raises(ConfigError):
        apply_override({}, "no-equals-sign")
    with pytest.raises(ConfigError):
        apply_override({}, "=3")
    with pytest.raises(ConfigError):
        apply_override({"seed": 1}, "seed.x=3")


def test_deterministic_flag_merges():
    assert resolve({"experiment": "spectrum"}, deterministic=True).deterministic
    assert resolve({"experiment": "spectrum", "deterministic": True}).deterministic


def test_output_root(monkeypatch, tmp_path):
    monkeypatch.setenv("LAB_OUTPUT_ROOT", str(tmp_path))
    assert resolve({"experiment": "spectrum"}).output_dir() == tmp_path / "spectrum"
    absolute = tmp_path / "elsewhere"
    assert resolve({"experiment": "spectrum", "output": str(absolute)}).output_dir() == absolute
    monkeypatch.delenv("LAB_OUTPUT_ROOT")
    assert resolve({"experiment": "spectrum"}).output_dir() == Path("runs/spectrum")


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("experiment = \n")
    with pytest.raises(ConfigError):
        load(bad)


# -- command line ----------------------------------------------------------------------


def write_config(tmp_path, name="slit", **extra):
    body = 'experiment = "spectrum"\noutput = "%s"\n\n[params]\nlevels = [10, 20, 40]\n' % name
    for k, v in extra.items():
        body = f"{k} = {v}\n" + body
    p = tmp_path / f"{name}.toml"
    p.write_text(body)
    return p


def test_cli_negative_eps_exits_2(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LAB_OUTPUT_ROOT", str(tmp_path))
    cfg = write_config(tmp_path)
    assert main(["run", str(cfg), "--set", "solver.eps=-1"]) == EXIT_CONFIG
    assert "out of range" in capsys.readouterr().err


def test_cli_run_report_and_plot(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LAB_OUTPUT_ROOT", str(tmp_path))
    cfg = write_config(tmp_path)
    assert main(["run", str(cfg), "--deterministic"]) == EXIT_OK
    out = tmp_path / "slit"
    rep = json.loads((out / "report.json").read_text())
    assert [c["criterion"] for c in rep["checks"]] == [12]
    assert rep["config"]["deterministic"] and "runtime_seconds" not in rep
    assert {"spectrum_table.csv", "spectrum_table.svg"} <= set(rep["manifest"])
    assert "[PASS] criterion 12" in capsys.readouterr().out
    assert main(["report", str(out)]) == EXIT_OK
    assert "criterion 12" in capsys.readouterr().out
    assert main(["plot", str(out)]) == EXIT_OK
    assert "spectrum_table.svg" in capsys.readouterr().out


def test_cli_missing_directories(tmp_path, capsys):
    assert main(["plot", str(tmp_path / "nothing")]) == EXIT_RUNTIME
    assert main(["report", str(tmp_path)]) == EXIT_RUNTIME
    assert "missing" in capsys.readouterr().err


def test_cli_rejects_shared_output(tmp_path, monkeypatch):
    monkeypatch.setenv("LAB_OUTPUT_ROOT", str(tmp_path))
    a = write_config(tmp_path, "same")
    b = tmp_path / "copy.toml"
    b.write_text(a.read_text())
    assert main(["run", str(a), str(b), "--jobs", "2"]) == EXIT_CONFIG


def test_cli_parallel_jobs(tmp_path, monkeypatch):
    monkeypatch.setenv("LAB_OUTPUT_ROOT", str(tmp_path))
    a = write_config(tmp_path, "one")
    b = write_config(tmp_path, "two")
    assert main(["run", str(a), str(b), "--jobs", "2", "--deterministic"]) == EXIT_OK
    ra = json.loads((tmp_path / "one" / "report.json").read_text())
    rb = json.loads((tmp_path / "two" / "report.json").read_text())
    assert ra["manifest"]["spectrum_table.csv"] == rb["manifest"]["spectrum_table.csv"]


def test_cli_usage_error():
    with pytest.raises(SystemExit):
        main([])
