"""End-to-end tests for the command-line entry point."""

import argparse
import csv
import logging
import os
import subprocess
import sys
from pathlib import Path

import pytest

from src.rararl.checkpoint import load_checkpoint, save_checkpoint
from src.rararl.main import main, parse_model_spec
from src.rararl.speedway import AHEAD_ACCELERATE, DO_NOTHING, STEER_RIGHT

STRAIGHT_CONFIG = """\
[run]
name = "cli"

[track]
segments = [[500.0, 0.0]]
max_episode_steps = 60

[train]
variant = "bsdqnadv"
total_steps = 5000
learning_starts = 50
batch_size = 8
num_heads = 3
heads_per_update = 2
trunk_hidden = [16]
eps_t0 = 0
eps_t1 = 150
checkpoint_every = 100
log_every_episodes = 1

[schedule]
xi = 40
m = 4
n = 1
"""


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "straight.toml"
    path.write_text(STRAIGHT_CONFIG, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, config_path):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", str(config_path), "--steps", "200", "--seed", "1", "--out", str(out)]) == 0
    return out


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


class TestTrain:
    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["train", "--bogus"])
        assert excinfo.value.code == 2

    def test_run_config_and_output_root_from_environment(self, config_path, tmp_path, monkeypatch):
        monkeypatch.setenv("RARARL_RUN_CONFIG", str(config_path))
        monkeypatch.setenv("RARARL_OUTPUT_DIR", str(tmp_path / "root"))
        assert main(["train", "--steps", "20", "--seed", "2"]) == 0
        assert (tmp_path / "root" / "cli-bsdqnadv-s2" / "final.json").exists()

    def test_output_root_from_run_config(self, tmp_path, monkeypatch):
        monkeypatch.delenv("RARARL_OUTPUT_DIR", raising=False)
        root = (tmp_path / "from-config").as_posix()
        path = tmp_path / "exp.toml"
        path.write_text(STRAIGHT_CONFIG.replace('name = "cli"', f'name = "cli"\noutput_dir = "{root}"'), encoding="utf-8")
        assert main(["train", "--config", str(path), "--steps", "20", "--seed", "0"]) == 0
        assert (tmp_path / "from-config" / "cli-bsdqnadv-s0" / "metrics.csv").exists()

    def test_missing_default_run_config(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("RARARL_RUN_CONFIG", str(tmp_path / "missing.toml"))
        assert main(["train", "--out", str(tmp_path / "out")]) == 1
        assert "cannot read" in capsys.readouterr().err

    def test_bad_log_level_is_reported(self, config_path, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("RARARL_LOG_LEVEL", "bogus")
        assert main(["train", "--config", str(config_path), "--out", str(tmp_path)]) == 1
        assert "invalid environment settings" in capsys.readouterr().err

    def test_run_directory(self, run_dir):
        for name in ("config.json", "ckpt_100.json", "ckpt_200.json", "final.json", "metrics.csv", "episodes.csv"):
            assert (run_dir / name).exists(), name
        assert len(read_rows(run_dir / "metrics.csv")) == 201

    def test_final_checkpoint(self, run_dir):
        ckpt = load_checkpoint(run_dir / "final.json")
        assert ckpt.variant == "bsdqnadv"
        assert ckpt.global_step == 200
        assert ckpt.has_adversary
        assert ckpt.config["track"]["max_episode_steps"] == 60

    def test_dqn_with_heads_conflict(self, config_path, tmp_path, capsys):
        assert main(["train", "--config", str(config_path), "--variant", "dqn", "--out", str(tmp_path)]) == 1
        assert "dqn" in capsys.readouterr().err

    def test_bad_config_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[train]\nbatch_size = 0\n", encoding="utf-8")
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "out")]) == 1
        assert f"{bad}:2: train.batch_size" in capsys.readouterr().err


class TestEval:
    @pytest.fixture
    def scripted(self, tmp_path, make_scripted_checkpoint):
        straight = save_checkpoint(make_scripted_checkpoint(AHEAD_ACCELERATE), tmp_path / "straight.json")
        crash = save_checkpoint(make_scripted_checkpoint(AHEAD_ACCELERATE, STEER_RIGHT), tmp_path / "crash.json")
        idle = save_checkpoint(make_scripted_checkpoint(AHEAD_ACCELERATE, DO_NOTHING), tmp_path / "idle.json")
        return straight, crash, idle

    def test_ten_episodes_and_mean(self, scripted, config_path, tmp_path):
        straight, _, _ = scripted
        out = tmp_path / "none.csv"
        args = ["eval", "--checkpoint", str(straight), "--regime", "none", "--episodes", "10",
                "--csv", str(out), "--config", str(config_path)]
        assert main(args) == 0
        rows = read_rows(out)
        assert len(rows) == 12
        assert rows[-1][0] == "mean"

    def test_same_seed_same_bytes(self, scripted, config_path, tmp_path):
        straight, _, _ = scripted
        outputs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            assert main(["eval", "--checkpoint", str(straight), "--regime", "random", "--seed", "3",
                         "--csv", str(out), "--config", str(config_path)]) == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]

    def test_crash_adversary(self, scripted, config_path, tmp_path):
        straight, crash, _ = scripted
        out = tmp_path / "adv.csv"
        assert main(["eval", "--checkpoint", str(straight), "--adversary", str(crash), "--regime", "adversarial",
                     "--csv", str(out), "--config", str(config_path)]) == 0
        header, *rows = read_rows(out)
        mean = dict(zip(header, rows[-1]))
        assert float(mean["catastrophe_reward"]) <= -2.5

    def test_adversarial_without_adversary(self, scripted, tmp_path, capsys):
        straight, _, _ = scripted
        rc = main(["eval", "--checkpoint", str(straight), "--regime", "adversarial", "--csv", str(tmp_path / "x.csv")])
        assert rc == 2
        assert "--adversary" in capsys.readouterr().err

    def test_comparison_table(self, scripted, config_path, tmp_path):
        _, crash, idle = scripted
        out = tmp_path / "table.csv"
        args = ["eval", "--model", f"idle={idle}", "--model", f"crash={crash},{idle}",
                "--regimes", "none,adversarial", "--episodes", "2", "--csv", str(out), "--config", str(config_path)]
        assert main(args) == 0
        rows = read_rows(out)
        assert rows[0] == ["model", "none", "adversarial"]
        assert rows[1] == ["idle", "0.0", "0.0"]
        assert rows[2] == ["crash", "0.0", "0.0"]

    def test_comparison_needs_adversaries(self, scripted, tmp_path):
        straight, _, _ = scripted
        args = ["eval", "--model", f"s={straight}", "--regimes", "adversarial", "--csv", str(tmp_path / "t.csv")]
        assert main(args) == 1

    def test_eval_defaults_from_run_config(self, scripted, tmp_path):
        straight, _, idle = scripted
        path = tmp_path / "eval.toml"
        path.write_text(STRAIGHT_CONFIG + '\n[eval]\nepisodes = 3\nregimes = ["none"]\n', encoding="utf-8")

        out = tmp_path / "single.csv"
        assert main(["eval", "--checkpoint", str(straight), "--regime", "none", "--csv", str(out), "--config", str(path)]) == 0
        assert len(read_rows(out)) == 5

        table = tmp_path / "table.csv"
        assert main(["eval", "--model", f"idle={idle}", "--csv", str(table), "--config", str(path)]) == 0
        assert read_rows(table)[0] == ["model", "none"]

    def test_foreign_config_digest_warns(self, scripted, config_path, tmp_path, caplog):
        straight, _, _ = scripted
        with caplog.at_level(logging.WARNING):
            assert main(["eval", "--checkpoint", str(straight), "--regime", "none", "--episodes", "1",
                         "--csv", str(tmp_path / "w.csv"), "--config", str(config_path)]) == 0
        assert any("config digest" in r.getMessage() for r in caplog.records if r.levelno == logging.WARNING)

    def test_no_config_no_digest_check(self, scripted, tmp_path, caplog):
        straight, _, _ = scripted
        with caplog.at_level(logging.WARNING):
            assert main(["eval", "--checkpoint", str(straight), "--regime", "none", "--episodes", "1",
                         "--csv", str(tmp_path / "q.csv")]) == 0
        assert not [r for r in caplog.records if r.levelno >= logging.WARNING]

    def test_model_spec(self):
        assert parse_model_spec("adv=a.json, b.json") == ("adv", ["a.json", "b.json"])
        with pytest.raises(argparse.ArgumentTypeError):
            parse_model_spec("no-paths")


class TestCredit:
    def test_protagonist_only_checkpoint(self, tmp_path, make_scripted_checkpoint, capsys):
        path = save_checkpoint(make_scripted_checkpoint(AHEAD_ACCELERATE), tmp_path / "p.json")
        assert main(["credit", "--checkpoint", str(path), "--csv", str(tmp_path / "c.csv")]) == 1
        assert "adversary network" in capsys.readouterr().err

    def test_zero_episodes(self, tmp_path, make_scripted_checkpoint):
        path = save_checkpoint(make_scripted_checkpoint(AHEAD_ACCELERATE, STEER_RIGHT), tmp_path / "a.json")
        out = tmp_path / "c.csv"
        assert main(["credit", "--checkpoint", str(path), "--episodes", "0", "--csv", str(out)]) == 0
        assert read_rows(out) == [["episode", "step", "role", "V", "V_tilde", "TD"]]
        assert read_rows(tmp_path / "c_totals.csv") == [["episode", "TD_P", "TD_A", "delta_V_tilde"]]

    def test_totals_telescope(self, run_dir, config_path, tmp_path):
        out = tmp_path / "credit.csv"
        assert main(["credit", "--checkpoint", str(run_dir / "final.json"), "--episodes", "2",
                     "--csv", str(out), "--config", str(config_path)]) == 0
        header, *rows = read_rows(tmp_path / "credit_totals.csv")
        assert len(rows) == 2
        for row in rows:
            values = dict(zip(header, row))
            assert float(values["TD_P"]) + float(values["TD_A"]) == pytest.approx(float(values["delta_V_tilde"]), abs=1e-9)

    def test_negative_episodes(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["credit", "--checkpoint", "x.json", "--episodes", "-1", "--csv", str(tmp_path / "c.csv")])
        assert excinfo.value.code == 2


def test_plot(run_dir, tmp_path):
    out = tmp_path / "curves.png"
    assert main(["plot", "--episodes-csv", str(run_dir / "episodes.csv"), "--out", str(out), "--window", "2"]) == 0
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_import_survives_bad_environment():
    env = dict(os.environ, RARARL_LOG_LEVEL="bogus")
    proc = subprocess.run(
        [sys.executable, "-c", "import src.rararl.main"],
        cwd=Path(__file__).parent.parent, env=env, capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
