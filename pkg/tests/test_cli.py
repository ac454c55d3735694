import json
import subprocess
import sys

import pytest

from walkpolymer import cli
from walkpolymer.environment import EnvironmentConfig, sample_environment, save_snapshot
from walkpolymer.errors import ConfigError, SnapshotError


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def _report(out, name):
    data = json.loads((out / f"{name}.json").read_text())
    return data


def test_heat_kernel_check_passes(tmp_path):
    out = tmp_path / "hk"
    assert cli.main(["heat-kernel-check", "--seed", "1", "--out", str(out)]) == cli.EXIT_PASS
    rep = _report(out, "heat_kernel_check")
    assert rep["verdict"] == "pass"
    assert (out / "heat_kernel_check_llt.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert set(man) >= {"config", "version", "wall_time_s", "rng", "artifacts", "verdict"}
    assert man["version"].startswith("v")


def test_missing_seed_is_error(tmp_path, capsys):
    assert cli.main(["heat-kernel-check", "--out", str(tmp_path)]) == cli.EXIT_ERROR
    assert "/seed" in capsys.readouterr().err


@pytest.mark.parametrize("params,pointer", [
    ({"bogus": 1}, "/params/bogus: unknown field"),
    ({"points": [[0, 0]], "lambda": -1}, "/params/lambda"),
    ({"points": [[0, 0, 1]]}, "/params/points/0"),
])
def test_strict_schema_pointers(tmp_path, capsys, params, pointer):
    cfg = _write(tmp_path, {"command": "correlations", "seed": 3, "params": params})
    assert cli.main(["correlations", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_ERROR
    assert pointer in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unknown_top_level_and_nested_keys():
    with pytest.raises(ConfigError, match="/extra: unknown field"):
        cli.RunConfig.from_dict({"command": "tail", "seed": 1, "extra": 0})
    with pytest.raises(ConfigError, match="/params/grid/bogus: unknown field"):
        cli.RunConfig("spde", {"grid": {"nt": 8, "bogus": 1}}, seed=1)
    with pytest.raises(ConfigError, match="/params/mode"):
        cli.RunConfig("partition", {"mode": "nope"}, seed=1)


def test_config_parse_error_location(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"seed": 1,\n  "params": {')
    assert cli.main(["tail", "--config", str(p)]) == cli.EXIT_ERROR
    assert "line 2" in capsys.readouterr().err


def test_command_mismatch(tmp_path):
    cfg = _write(tmp_path, {"command": "tail", "seed": 1})
    assert cli.main(["noise", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_ERROR


def test_defaults_filled():
    cfg = cli.RunConfig("spde", {"grid": {"nt": 8}}, seed=1)
    assert cfg.params["grid"]["nx"] == cli.GRID_SCHEMA["properties"]["nx"]["default"]
    assert cfg.params["m_max"] >= 1


def test_partition_beta_zero_exact(tmp_path):
    cfg = _write(tmp_path, {"command": "partition", "seed": 5,
                            "params": {"mode": "quenched", "beta": 0.0, "lambda": 1.0, "horizon": 4.0}})
    out = tmp_path / "p"
    assert cli.main(["partition", "--config", cfg, "--out", str(out)]) == cli.EXIT_PASS
    rows = json.loads((out / "partition_quenched.json").read_text())["tables"]
    assert any(r.get("estimate") == 1.0 for t in rows.values() for r in t)


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = cli.RunConfig("tail", {}, seed=1, output_dir=str(tmp_path / "from_config"))
    assert cli.resolve_output_dir(cfg) == tmp_path / "from_config"
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "from_env"))
    assert cli.resolve_output_dir(cfg) == tmp_path / "from_env"
    assert cli.resolve_output_dir(cfg, str(tmp_path / "flag")) == tmp_path / "flag"


def test_env_variable_used_by_main(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["heat-kernel-check", "--seed", "2"]) == cli.EXIT_PASS
    assert (tmp_path / "envout" / "manifest.json").exists()


def _small_correlations(tmp_path, threads, name):
    cfg = _write(tmp_path, {"command": "correlations", "seed": 11,
                            "params": {"points": [[0.5, 0], [1.0, 1]], "lambda": 1.0, "mode": "both",
                                       "replicas": 2000}}, f"{name}.json")
    out = tmp_path / name
    assert cli.main(["correlations", "--config", cfg, "--out", str(out), "--threads", str(threads)]) == 0
    return out


def test_thread_count_independent(tmp_path):
    a = _small_correlations(tmp_path, 1, "t1")
    b = _small_correlations(tmp_path, 3, "t3")
    assert (a / "correlations.json").read_bytes() == (b / "correlations.json").read_bytes()


def test_manifest_rerun_identical(tmp_path):
    out = _small_correlations(tmp_path, 1, "first")
    again = tmp_path / "again"
    assert cli.rerun_from_manifest(out / "manifest.json", again) == cli.EXIT_PASS
    assert (out / "correlations.json").read_bytes() == (again / "correlations.json").read_bytes()
    m1 = json.loads((out / "manifest.json").read_text())
    m2 = json.loads((again / "manifest.json").read_text())
    assert m1["artifacts"] == m2["artifacts"]
    assert m1["rng"]["streams_per_tag"] == m2["rng"]["streams_per_tag"]


def test_env_command_snapshot_roundtrip(tmp_path):
    cfg = _write(tmp_path, {"command": "env", "seed": 4,
                            "params": {"lambda": 1.5, "window_halfwidth": 6, "horizon": 3.0}})
    out = tmp_path / "env"
    assert cli.main(["env", "--config", cfg, "--out", str(out)]) == cli.EXIT_PASS
    env = cli.snapshot_roundtrip(out / "env_snapshot.json")
    again = sample_environment(EnvironmentConfig(1.5, 6, 3.0), 4)
    times, sites = [0.0, 1.0, 2.5, 3.0], list(range(-6, 7))
    assert cli.occupation_table(env, times, sites) == cli.occupation_table(again, times, sites)


def test_snapshot_roundtrip_errors(tmp_path):
    env = sample_environment(EnvironmentConfig(1.0, 4, 2.0), 1)
    p = tmp_path / "e.json"
    save_snapshot(env, p)
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(SnapshotError):
        cli.snapshot_roundtrip(p)


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "walkpolymer.cli", "heat-kernel-check", "--seed", "1",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
