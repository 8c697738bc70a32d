import json
import subprocess
import sys

import pytest

from blocklab.cli import main
from blocklab.config import ConfigError, apply_overrides, from_mapping, load_config
from blocklab.rules import CLASSIC


def test_defaults():
    cfg = load_config(None)
    assert cfg.rules == CLASSIC and cfg.seed == 0
    assert cfg.train.search.n == 16 and cfg.train.search.m == 4


def test_yaml_and_json(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("board_rows: 6\nboard_cols: 6\nh: 2\np: 1\nextra_blocks: [t, U]\n"
                 "reward_cap: 20\nseed: 9\ntrain:\n  iterations: 4\n  hidden: [32]\n"
                 "search: {n: 8, m: 2}\n")
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"board_rows": 6, "board_cols": 6, "h": 2, "p": 1,
                             "extra_blocks": ["U5", "T5"], "reward_cap": 20, "seed": 9,
                             "train": {"iterations": 4, "hidden": [32]},
                             "search": {"n": 8, "m": 2}}))
    a, b = load_config(y), load_config(j)
    assert a.rules == b.rules
    assert a.rules.extra_blocks == ("U5", "T5")
    assert a.train.hidden == (32,) and a.train.search.m == 2
    assert a.train_config().seed == 9


@pytest.mark.parametrize("raw", [{"h": 0}, {"board_rows": 3, "board_cols": 3},
                                 {"colour": "red"}, {"train": {"speed": 1}},
                                 {"search": {"n": 2, "m": 4}}])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        from_mapping(raw)


def test_overrides_revalidate():
    cfg = apply_overrides(load_config(None), h=1, reward_cap=50, seed=3)
    assert cfg.rules.h == 1 and cfg.rules.reward_cap == 50 and cfg.seed == 3
    with pytest.raises(ConfigError):
        apply_overrides(load_config(None), board_cols=2)


def test_sweep_section():
    cfg = from_mapping({"sweep": {"h": [1, 2, 3], "blocks": ["U5", "T5"], "seeds": [0, 1]}})
    assert cfg.sweep.h == [1, 2, 3]
    assert cfg.sweep.extra_blocks == [(), ("U5",), ("T5",)]


def test_cli_train_and_plot(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["train", "--board-rows", "5", "--board-cols", "5", "--h", "2",
                 "--reward-cap", "10", "--iterations", "2", "--games", "2", "--n", "4", "--m", "2",
                 "--seed", "1", "--out-dir", str(out), "--deterministic"])
    assert code == 0
    assert "training_reward=" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    assert summary["variant_id"] == "r5x5-h2-p0-none-cap10"
    assert main(["plot", str(out / "iteration_stats.csv"), "--out-dir", str(tmp_path / "p")]) == 0
    assert list((tmp_path / "p").glob("*.svg"))
    assert main(["eval", str(out / "final.sgbz"), "--board-rows", "5", "--board-cols", "5",
                 "--h", "2", "--reward-cap", "10", "--n", "4", "--m", "2", "--episodes", "3",
                 "--out-dir", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "eval_scores.csv").read_text().startswith("score\n")


def test_cli_deterministic_train_is_byte_identical(tmp_path):
    args = ["train", "--board-rows", "5", "--board-cols", "5", "--reward-cap", "10",
            "--iterations", "2", "--games", "2", "--n", "4", "--m", "2", "--deterministic"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "iteration_stats.csv").read_bytes() == \
        (tmp_path / "b" / "iteration_stats.csv").read_bytes()


def test_cli_sweep(tmp_path, capsys):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("board_rows: 5\nboard_cols: 5\nreward_cap: 10\n"
                   "train: {iterations: 2, games_per_iteration: 2, train_steps: 2, batch_size: 4}\n"
                   "search: {n: 4, m: 2}\nsweep: {h: [1, 2], window: 2}\n")
    assert main(["sweep", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "sweep_results.csv").read_text().splitlines()
    assert len(lines) == 3


def test_cli_oracle_and_baseline(tmp_path, capsys):
    assert main(["oracle", "--preset", "oracle-2x2-mono", "--out-dir", str(tmp_path)]) == 0
    assert "= 1.000000" in capsys.readouterr().out
    assert main(["baseline", "--reward-cap", "20", "--episodes", "20"]) == 0
    assert "random baseline" in capsys.readouterr().out


def test_cli_reports_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("h: 0\n")
    assert main(["baseline", "--config", str(bad)]) == 2
    assert "h must be" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "blocklab", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "sweep" in out.stdout
