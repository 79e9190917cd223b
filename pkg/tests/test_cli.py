import csv
import math

import numpy as np
import pytest

from edgeoffload import cli
from edgeoffload.analysis import AuditCheck, AuditReport
from edgeoffload.config import SystemConfig

SMALL_TOML = "devices_per_type = [2, 2, 2]\nnum_servers = 2\nnum_channels = 3\n"


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_TOML)
    return str(path)


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_epsilon_sweep_cardinality_and_replay(tmp_path, small_cfg):
    args = ["--config", small_cfg, "--slots", "30", "--sweep", "epsilon=5,10,20,30",
            "--seeds", "0..9", "--audit", "on"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == cli.EXIT_OK
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) == cli.EXIT_OK
    rows = read(tmp_path / "a" / "summary.csv")
    assert len(rows) == 40
    assert [r["sweep_value"] for r in rows[::10]] == ["5.0", "10.0", "20.0", "30.0"]
    assert all(r["audit"] == "pass" and r["wall_ms_per_slot"] == "" for r in rows)
    for name in ("summary.csv", "aggregate.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_infeasible_point_is_flagged(tmp_path, small_cfg):
    code = cli.main(["--config", small_cfg, "--slots", "20", "--sweep", "epsilon=10,99",
                     "--seeds", "0,1", "--out", str(tmp_path)])
    assert code == cli.EXIT_RUN_ERROR
    rows = read(tmp_path / "summary.csv")
    assert [r["error"] == "" for r in rows] == [True, True, False, False]
    assert rows[2]["error"].startswith("infeasible:")
    assert rows[0]["utility_P"] != "" and rows[2]["utility_P"] == ""
    agg = read(tmp_path / "aggregate.csv")
    assert [a["runs"] for a in agg] == ["2", "0"]


def test_aggregate_matches_rows(tmp_path, small_cfg):
    cli.main(["--config", small_cfg, "--slots", "25", "--seeds", "0..3", "--sweep",
              "policy=todg,ga", "--out", str(tmp_path)])
    rows = read(tmp_path / "summary.csv")
    agg = read(tmp_path / "aggregate.csv")
    for a in agg:
        vals = [float(r["utility_P"]) for r in rows if r["policy"] == a["policy"]]
        assert float(a["mean_utility_P"]) == pytest.approx(np.mean(vals), abs=1e-12)
        se = np.std(vals, ddof=1) / math.sqrt(len(vals))
        assert float(a["se_utility_P"]) == pytest.approx(se, abs=1e-12)


def test_audit_failure_exit_code(tmp_path, small_cfg, monkeypatch):
    failing = AuditReport([AuditCheck("user_buffer_cap", False, -1.0, 3)])
    monkeypatch.setattr(cli, "audit_trace", lambda *a: failing)
    code = cli.main(["--config", small_cfg, "--slots", "10", "--audit", "on",
                     "--out", str(tmp_path)])
    assert code == cli.EXIT_AUDIT
    assert read(tmp_path / "summary.csv")[0]["audit"] == "fail"


def test_trace_modes(tmp_path, small_cfg):
    cli.main(["--config", small_cfg, "--slots", "5", "--trace", "summary", "--out",
              str(tmp_path / "s")])
    assert len(read(tmp_path / "s" / "trace.csv")) == 5
    cli.main(["--config", small_cfg, "--slots", "5", "--trace", "full", "--out",
              str(tmp_path / "f")])
    assert len(read(tmp_path / "f" / "trace.csv")) == 5 * (6 + 2 * 3)


def test_timing_flag_fills_wall_time(tmp_path, small_cfg):
    cli.main(["--config", small_cfg, "--slots", "5", "--timing", "on", "--out", str(tmp_path)])
    assert float(read(tmp_path / "summary.csv")[0]["wall_ms_per_slot"]) > 0


def test_bad_config_is_a_run_error(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("delta = 0\n")
    assert cli.main(["--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_RUN_ERROR


def test_apply_axis():
    base = SystemConfig()
    cfg, _ = cli.apply_axis(base, "todg", "N", 10)
    assert cfg.devices_per_type == (4, 3, 3)
    cfg, _ = cli.apply_axis(base, "todg", "K", 2)
    assert cfg.devices_per_type == (15, 15) and cfg.arrival_bands == ((0.0, 1.0),) * 2
    cfg, _ = cli.apply_axis(base, "todg", "buffer_size", 2)
    assert np.all(cfg.Q_u_max == 200) and np.all(cfg.Q_s_max == 100)
    cfg, _ = cli.apply_axis(base, "todg", "c_scale", 0.5)
    assert cfg.channel_band == (0.0, 0.5)
    cfg, _ = cli.apply_axis(base, "todg", "zeta", 6)
    assert np.all(cfg.zeta_u == 6) and np.all(cfg.zeta_s == 6)
    _, pol = cli.apply_axis(base, "todg", "policy", "ga")
    assert pol == "ga"
    with pytest.raises(cli.ConfigError):
        cli.apply_axis(base, "todg", "delta", 1.5)


def test_seed_and_sweep_parsing():
    assert cli._parse_seeds("0..3") == (0, 1, 2, 3)
    assert cli._parse_seeds("4,2") == (4, 2)
    assert cli._parse_sweep("M=3,6") == ("M", (3.0, 6.0))
    with pytest.raises(Exception):
        cli._parse_sweep("colour=1")
