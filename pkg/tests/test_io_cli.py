import os

import numpy as np
import pytest

from latentworld import cli
from latentworld.checkpoint import load_checkpoint, save_checkpoint
from latentworld.errors import (BadMagicError, BadVersionError, ConfigError,
                                TruncatedFileError)
from latentworld.io import Config, MetricsLog, read_pgm, write_pgm


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        records = {
            "weights": rng.standard_normal((5, 7)).astype(np.float32),
            "frames": rng.integers(0, 256, size=(3, 4, 4)).astype(np.uint8),
            "labels": rng.integers(0, 10, size=9).astype(np.int64),
            "scalar": np.array(3.5, dtype=np.float32),
        }
        path = str(tmp_path / "ck.vjw")
        save_checkpoint(records, path)
        loaded = load_checkpoint(path)
        assert set(loaded) == set(records)
        for k in records:
            assert loaded[k].dtype == records[k].dtype
            np.testing.assert_array_equal(loaded[k], records[k])

    def test_deterministic_bytes(self, tmp_path):
        records = {"b": np.ones(3, np.float32), "a": np.zeros(2, np.float32)}
        p1, p2 = str(tmp_path / "a.vjw"), str(tmp_path / "b.vjw")
        save_checkpoint(records, p1)
        save_checkpoint(dict(reversed(records.items())), p2)  # insertion order ignored
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_empty_record_set(self, tmp_path):
        path = str(tmp_path / "empty.vjw")
        save_checkpoint({}, path)
        assert load_checkpoint(path) == {}

    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "bad.vjw")
        with open(path, "wb") as f:
            f.write(b"NOPE" + b"\x00" * 16)
        with pytest.raises(BadMagicError):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        path = str(tmp_path / "ver.vjw")
        save_checkpoint({"x": np.zeros(1, np.float32)}, path)
        data = bytearray(open(path, "rb").read())
        data[4] = 99
        open(path, "wb").write(bytes(data))
        with pytest.raises(BadVersionError):
            load_checkpoint(path)

    def test_truncation(self, tmp_path):
        path = str(tmp_path / "trunc.vjw")
        save_checkpoint({"x": np.arange(100, dtype=np.float32)}, path)
        data = open(path, "rb").read()
        open(path, "wb").write(data[: int(len(data) * 0.6)])
        with pytest.raises(TruncatedFileError):
            load_checkpoint(path)

    def test_unsupported_dtype_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            save_checkpoint({"x": np.zeros(2, np.float64)}, str(tmp_path / "f64.vjw"))


class TestConfig:
    def test_parse_and_typed_access(self):
        cfg = Config.parse("a.x = 3\nb.y = 0.5  # comment\n\n# full comment\nc.z = hello\n")
        assert cfg.get_int("a.x", 0) == 3
        assert cfg.get_float("b.y", 0.0) == 0.5
        assert cfg.get_str("c.z", "") == "hello"
        assert cfg.get_bool("d.flag", True) is True

    def test_unknown_keys_rejected(self):
        cfg = Config.parse("a.x = 1\nq.bad = 2\n")
        with pytest.raises(ConfigError):
            cfg.require_known({"a.x"})

    def test_undotted_key_rejected(self):
        with pytest.raises(ConfigError):
            Config.parse("plain = 1\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError):
            Config.parse("a.x = 1\na.x = 2\n")

    def test_resolved_dump_includes_defaults(self):
        cfg = Config.parse("a.x = 7\n")
        cfg.get_int("a.x", 0)
        cfg.get_float("a.y", 1.25)
        dump = cfg.dump_resolved()
        assert "a.x = 7" in dump
        assert "a.y = 1.25" in dump


class TestMetricsLog:
    def test_append_rows(self, tmp_path):
        path = str(tmp_path / "m.csv")
        log = MetricsLog(path, ["step", "loss"])
        log.append({"step": 0, "loss": 0.5})
        log.append({"step": 1, "loss": 0.25})
        lines = open(path).read().strip().split("\n")
        assert lines[0] == "step,loss"
        assert len(lines) == 3

    def test_nonfinite_rejected(self, tmp_path):
        log = MetricsLog(str(tmp_path / "m.csv"), ["v"])
        with pytest.raises(ConfigError):
            log.append({"v": float("nan")})

    def test_missing_column_rejected(self, tmp_path):
        log = MetricsLog(str(tmp_path / "m.csv"), ["a", "b"])
        with pytest.raises(ConfigError):
            log.append({"a": 1})


class TestPgm:
    def test_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, size=(8, 12)).astype(np.uint8)
        path = str(tmp_path / "x.pgm")
        write_pgm(path, img)
        np.testing.assert_array_equal(read_pgm(path), img)


class TestCli:
    def test_gen_data_deterministic(self, tmp_path):
        d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
        for d in (d1, d2):
            assert cli.main(["gen-data", "--out", d, "--episodes", "3",
                             "--length", "10", "--seed", "5"]) == 0
        for name in sorted(os.listdir(d1)):
            if name.endswith(".vjw"):
                assert open(os.path.join(d1, name), "rb").read() == \
                    open(os.path.join(d2, name), "rb").read()

    def test_gen_data_zero_episodes(self, tmp_path):
        out = str(tmp_path / "empty")
        assert cli.main(["gen-data", "--out", out, "--episodes", "0",
                         "--length", "8", "--seed", "1"]) == 0
        manifest = open(os.path.join(out, "manifest.csv")).read().strip().split("\n")
        assert manifest == ["file,length"]

    def test_manifest_row_count(self, tmp_path):
        out = str(tmp_path / "five")
        cli.main(["gen-data", "--out", out, "--episodes", "5", "--length", "8",
                  "--seed", "2"])
        rows = open(os.path.join(out, "manifest.csv")).read().strip().split("\n")
        assert len(rows) == 6

    def test_unknown_config_key_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus.key = 1\n")
        code = cli.main(["gen-data", "--out", str(tmp_path / "o"), "--episodes", "1",
                         "--length", "8", "--config", str(cfg)])
        assert code == 2

    def test_missing_checkpoint_exit_code(self, tmp_path):
        code = cli.main(["probe", "--encoder", str(tmp_path / "missing.vjw"),
                         "--out", str(tmp_path / "o")])
        assert code == 3

    def test_pretrain_zero_steps_checkpoint_equals_init(self, tmp_path):
        data = str(tmp_path / "data")
        cli.main(["gen-data", "--out", data, "--episodes", "2", "--length", "10",
                  "--seed", "3"])
        cfg = tmp_path / "p.cfg"
        cfg.write_text("pretrain.warmup_steps = 0\npretrain.constant_steps = 0\n"
                       "pretrain.decay_steps = 0\n")
        out = str(tmp_path / "run")
        assert cli.main(["pretrain", "--data", data, "--out", out, "--seed", "4",
                         "--config", str(cfg)]) == 0
        from latentworld.cli import build_pretrainer
        from latentworld.io import Config
        from latentworld.persist import load_encoder

        ref = build_pretrainer(Config.load(str(cfg)), np.random.default_rng(4))
        loaded = load_encoder(os.path.join(out, "encoder.vjw"))
        for k, v in ref.encoder.state_dict().items():
            np.testing.assert_array_equal(loaded.state_dict()[k], v)
