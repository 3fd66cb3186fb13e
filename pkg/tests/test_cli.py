import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from opshape.cli import EXIT_ABORT, EXIT_CONFIG, EXIT_OK, EXIT_VIOLATED, main
from opshape.experiment import (RAW_COLUMNS, ConfigError, aggregate, apply_overrides, blowup_demo, load_config,
                                parse_config)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = {
    "env": "two_path_chest",
    "im": {"kind": "count", "beta": 0.6, "states": ["R1"], "noisy_states": ["R1"]},
    "shaper": {"kind": "adops", "epsilon": 0.05},
    "train": {"iterations": 25, "lr_e": 0.3, "lr_i": 0.3},
    "seeds": [0, 1],
}


def write_config(tmp_path: Path, doc: dict, name: str = "cfg.yaml") -> Path:
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


def read_rows(path: Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


class TestRun:
    def test_two_seeds_give_three_files(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        assert main(["run", str(cfg), "--output", str(tmp_path / "out")]) == EXIT_OK
        files = sorted(p.name for p in (tmp_path / "out").iterdir())
        assert files == ["aggregate.csv", "seed_0.csv", "seed_1.csv"]

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        main(["run", str(cfg), "--output", str(tmp_path / "a")])
        main(["run", str(cfg), "--output", str(tmp_path / "b")])
        for name in ("seed_0.csv", "seed_1.csv", "aggregate.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_parallel_seeds_match_sequential(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path, SMALL)
        monkeypatch.setenv("OPSHAPE_THREADS", "1")
        main(["run", str(cfg), "--output", str(tmp_path / "seq")])
        monkeypatch.setenv("OPSHAPE_THREADS", "2")
        main(["run", str(cfg), "--output", str(tmp_path / "par")])
        for name in ("seed_0.csv", "seed_1.csv", "aggregate.csv"):
            assert (tmp_path / "seq" / name).read_bytes() == (tmp_path / "par" / name).read_bytes()

    def test_raw_schema_and_line_endings(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        main(["run", str(cfg), "--output", str(tmp_path / "out")])
        data = (tmp_path / "out" / "seed_0.csv").read_bytes()
        assert b"\r" not in data
        header = data.split(b"\n", 1)[0].decode("utf-8").split(",")
        assert tuple(header) == RAW_COLUMNS
        rows = read_rows(tmp_path / "out" / "seed_0.csv")
        assert len(rows) == 25
        assert {r["seed"] for r in rows} == {"0"}
        assert {r["greedy_optimal"] for r in rows} <= {"0", "1"}

    def test_aggregate_mean_is_mean_of_raw(self, tmp_path):
        cfg = write_config(tmp_path, {**SMALL, "seeds": [0, 1, 2]})
        main(["run", str(cfg), "--output", str(tmp_path / "out")])
        raw = [read_rows(tmp_path / "out" / f"seed_{k}.csv") for k in range(3)]
        agg = read_rows(tmp_path / "out" / "aggregate.csv")
        for metric in ("ext_return", "int_return_shaped", "max_action_prob", "greedy_optimal"):
            for i, row in enumerate(agg):
                expected = np.mean([float(r[i][metric]) for r in raw])
                assert abs(float(row[f"{metric}_mean"]) - expected) <= 1e-12

    def test_aggregate_smoothing_is_trailing_ten(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        main(["run", str(cfg), "--output", str(tmp_path / "out")])
        agg = read_rows(tmp_path / "out" / "aggregate.csv")
        means = [float(r["ext_return_mean"]) for r in agg]
        for i, row in enumerate(agg):
            window = means[max(0, i - 9):i + 1]
            assert float(row["ext_return_smoothed"]) == pytest.approx(sum(window) / len(window), abs=1e-12)

    def test_set_override(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        main(["run", str(cfg), "--output", str(tmp_path / "out"), "--set", "train.iterations=7",
              "--set", "seeds=[4]"])
        assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["aggregate.csv", "seed_4.csv"]
        assert len(read_rows(tmp_path / "out" / "seed_4.csv")) == 7

    def test_console_script_entry_point(self, tmp_path):
        cfg = write_config(tmp_path, {**SMALL, "seeds": [0], "train": {"iterations": 3}})
        proc = subprocess.run([sys.executable, "-m", "opshape", "run", str(cfg), "--output", str(tmp_path / "o")],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert "wrote 2 files" in proc.stdout


class TestConfigErrors:
    @pytest.mark.parametrize("doc,key", [
        ({**SMALL, "im": {"kind": "count", "bogus": 1}}, "im.bogus"),
        ({**SMALL, "shaper": {"kind": "adops", "dd": 1}}, "shaper.dd"),
        ({**SMALL, "train": {"lr": 1}}, "train.lr"),
        ({**SMALL, "extra": 1}, "extra"),
        ({**SMALL, "env": {"kind": "two_path_chest", "size": 3}}, "env.size"),
    ])
    def test_first_offending_key_named(self, tmp_path, capsys, doc, key):
        cfg = write_config(tmp_path, doc)
        assert main(["run", str(cfg)]) == EXIT_CONFIG
        assert f"`{key}`" in capsys.readouterr().err

    @pytest.mark.parametrize("seeds", [[], [1, 1], "x"])
    def test_bad_seeds(self, seeds):
        with pytest.raises(ConfigError, match="seeds"):
            parse_config({**SMALL, "seeds": seeds})

    def test_seed_inside_train_rejected(self):
        with pytest.raises(ConfigError, match="train.seed"):
            parse_config({**SMALL, "train": {"seed": 3}})

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG

    def test_bad_thread_count(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OPSHAPE_THREADS", "zero")
        assert main(["run", str(write_config(tmp_path, SMALL))]) == EXIT_CONFIG

    def test_override_syntax(self):
        with pytest.raises(ConfigError, match="key=value"):
            apply_overrides({}, ["novalue"])
        assert apply_overrides({"a": {"b": 1}}, ["a.c=0.5"]) == {"a": {"b": 1, "c": 0.5}}

    def test_env_file_relative_to_config(self, tmp_path):
        (tmp_path / "m.yaml").write_text(yaml.safe_dump({
            "states": 2, "actions": 1, "horizon": 2, "gamma_e": 0.9, "start": 0,
            "transitions": [[0, 0, 1, 1.0], [1, 0, 1, 1.0]]}), encoding="utf-8")
        cfg = load_config(write_config(tmp_path, {**SMALL, "env": {"file": "m.yaml"}}))
        assert cfg.env.num_states == 2


class TestRuntimeAbort:
    def test_overflow_exits_3(self, tmp_path, capsys):
        (tmp_path / "loop.yaml").write_text(yaml.safe_dump({
            "states": 1, "actions": 1, "horizon": 1100, "gamma_e": 0.9, "start": 0,
            "transitions": [[0, 0, 0, 1.0]]}), encoding="utf-8")
        cfg = write_config(tmp_path, {"env": {"file": "loop.yaml"}, "im": {"kind": "constant", "beta": 1.0},
                                      "shaper": {"kind": "pbim", "gamma_i": 0.5}, "train": {"iterations": 1}})
        assert main(["run", str(cfg), "--output", str(tmp_path / "o")]) == EXIT_ABORT
        err = capsys.readouterr().err
        assert "step 1099" in err and "f_shaped" in err


class TestVerify:
    def test_preserved_exits_0(self, tmp_path):
        out = tmp_path / "report.yaml"
        assert main(["verify", str(CONFIGS / "verify_hack.yaml"), "--output", str(out)]) == EXIT_OK
        doc = yaml.safe_load(out.read_text(encoding="utf-8"))
        assert doc["verdict"] == "preserved"
        assert doc["enumeration_agrees"] is True

    def test_violated_exits_2(self, tmp_path):
        out = tmp_path / "report.yaml"
        code = main(["verify", str(CONFIGS / "verify_hack.yaml"), "--set", "shaper.kind=raw", "--output", str(out)])
        assert code == EXIT_VIOLATED
        doc = yaml.safe_load(out.read_text(encoding="utf-8"))
        assert doc["violations"][0]["s"] == "s0"

    def test_unknown_verify_key(self, tmp_path):
        cfg = write_config(tmp_path, {**SMALL, "verify": {"tolerance": 1}})
        assert main(["verify", str(cfg)]) == EXIT_CONFIG


class TestSweepD:
    def test_duplicate_d_rejected(self, tmp_path, capsys):
        code = main(["sweep-d", str(CONFIGS / "sweep_d_corridor.yaml"), "--d", "1", "1",
                     "--output", str(tmp_path)])
        assert code == EXIT_CONFIG
        assert "duplicate" in capsys.readouterr().err

    def test_needs_grm(self, tmp_path):
        cfg = write_config(tmp_path, SMALL)
        assert main(["sweep-d", str(cfg), "--d", "1"]) == EXIT_CONFIG

    def test_d_zero_matches_no_shaping(self, tmp_path):
        doc = {**SMALL, "shaper": {"kind": "grm", "d": 1}}
        cfg = write_config(tmp_path, doc)
        main(["sweep-d", str(cfg), "--d", "0", "--output", str(tmp_path / "sw")])
        none = write_config(tmp_path, {**SMALL, "shaper": {"kind": "none"}}, "none.yaml")
        main(["run", str(none), "--output", str(tmp_path / "none")])
        for k in (0, 1):
            grm0 = [r["ext_return"] for r in read_rows(tmp_path / "sw" / "d_0" / f"seed_{k}.csv")]
            base = [r["ext_return"] for r in read_rows(tmp_path / "none" / f"seed_{k}.csv")]
            assert grm0 == base

    def test_short_delay_ranks_above_full_delay(self, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep-d", str(CONFIGS / "sweep_d_corridor.yaml"), "--d", "63", "1",
                     "--output", str(out)]) == EXIT_OK
        ranking = read_rows(out / "ranking.csv")
        assert [r["d"] for r in ranking] == ["1", "63"]
        assert (out / "d_1" / "aggregate.csv").exists() and (out / "d_63" / "seed_9.csv").exists()


class TestBlowupDemo:
    def test_long_episode_scale(self):
        rep = blowup_demo(0.99, 4500)
        assert 1e19 < rep.inverse_discount < 1e20
        assert not rep.overflow

    def test_undiscounted(self):
        rep = blowup_demo(1.0, 300)
        assert rep.inverse_discount == 1.0
        assert rep.magnitude == 299.0

    def test_power_of_two(self):
        rep = blowup_demo(0.5, 11)
        assert rep.inverse_discount == 1024.0
        assert rep.magnitude == pytest.approx((2 - 2 ** -9) * 1024)

    def test_overflow_is_flagged(self):
        rep = blowup_demo(0.5, 3000)
        assert rep.overflow and rep.inverse_discount == float("inf")

    @pytest.mark.parametrize("args", [(0.0, 10), (1.5, 10), (0.9, 1)])
    def test_rejects_bad_arguments(self, args):
        with pytest.raises(ConfigError):
            blowup_demo(*args)

    def test_cli_output(self, capsys):
        assert main(["blowup-demo", "--gamma-i", "0.5", "--n", "11"]) == EXIT_OK
        doc = yaml.safe_load(capsys.readouterr().out)
        assert doc["inverse_discount"] == 1024.0


class TestSolve:
    def test_builtin(self, capsys):
        assert main(["solve", "builtin:two_path_chest"]) == EXIT_OK
        doc = yaml.safe_load(capsys.readouterr().out)
        assert doc["V"][0]["values"]["s0"] == pytest.approx(0.99)
        assert doc["Q"][0]["values"] == pytest.approx({"LEFT": 0.99, "RIGHT": 0.495})

    def test_spec_file(self, tmp_path):
        spec = tmp_path / "bandit.yaml"
        spec.write_text(yaml.safe_dump({
            "states": ["s", "end"], "actions": ["a", "b"], "horizon": 1, "gamma_e": 1.0, "start": "s",
            "transitions": [["s", "a", "end", 1.0], ["s", "b", "end", 1.0],
                            ["end", "a", "end", 1.0], ["end", "b", "end", 1.0]],
            "rewards": [["s", "a", "end", 0, 2.0]]}), encoding="utf-8")
        out = tmp_path / "vq.yaml"
        assert main(["solve", str(spec), "--output", str(out)]) == EXIT_OK
        doc = yaml.safe_load(out.read_text(encoding="utf-8"))
        assert doc["V"][0]["values"]["s"] == 2.0

    def test_unknown_builtin(self):
        assert main(["solve", "builtin:maze"]) == EXIT_CONFIG


def test_aggregate_single_seed_has_zero_se(chest, hack_im):
    from opshape.learner import TrainConfig, train
    from opshape.shaping import ShaperConfig
    curve = train(chest, TrainConfig(iterations=5, shaper=ShaperConfig("raw"), im=hack_im))
    header, rows = aggregate([curve])
    assert all(r[header.index("ext_return_se")] == 0.0 for r in rows)
