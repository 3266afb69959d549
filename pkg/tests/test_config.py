import os
import unittest

import pytest
from pydantic import ValidationError

from mcg_asr.config import (DEFAULT_EPSILONS, EPSILON_GRID, Config, PathsConfig, desk_preset,
                            load_run_config, full_preset, parse_overrides)
from mcg_asr.errors import ConfigError
from mcg_asr.utils import create_error_result, create_result, derive_rng, format_tokens, parse_tokens


class TestPresets(unittest.TestCase):

    def test_full_preset_sizes(self):
        cfg = full_preset()
        self.assertEqual(cfg.mcg.channels, [32, 48, 64, 80, 96])
        self.assertEqual(cfg.mcg.lstm_units, 128)
        self.assertEqual(cfg.mcg.fc_units, 1920)
        self.assertEqual(cfg.epsilons, DEFAULT_EPSILONS)
        self.assertEqual((cfg.asr.num_blocks, cfg.asr.d_model, cfg.asr.ffn_units, cfg.asr.heads,
                          cfg.asr.conv_kernel), (12, 256, 2048, 4, 15))
        self.assertEqual((cfg.features.win_ms, cfg.features.hop_ms, cfg.features.n_bins), (32.0, 8.0, 80))

    def test_training_defaults(self):
        t = full_preset().train
        self.assertEqual((t.initial_lr, t.decay_factor, t.plateau_patience, t.stop_patience),
                         (2e-4, 0.5, 5, 20))
        d = full_preset().data
        self.assertEqual((d.snr_min, d.snr_max), (-5.0, 20.0))

    def test_desk_preset_keeps_topology(self):
        cfg = desk_preset()
        self.assertEqual(len(cfg.mcg.channels), 5)
        self.assertEqual(cfg.mcg.fc_units, cfg.mcg.channels[-1] * cfg.features.n_bins // 4)
        self.assertEqual(cfg.n, 3)

    def test_sweep_grid(self):
        self.assertEqual([len(row) for row in EPSILON_GRID], [1, 2, 3, 4])


def test_overrides_by_section_and_bare_key():
    cfg = load_run_config(overrides=["--train.max_epochs=3", "--lstm_units=16", "--mcg.epsilons=[-2,-1,1,2]",
                                     "--data.redraw_noise=false"])
    assert cfg.train.max_epochs == 3
    assert cfg.mcg.lstm_units == 16
    assert cfg.epsilons == [-2.0, -1.0, 1.0, 2.0]
    assert cfg.data.redraw_noise is False


@pytest.mark.parametrize("flag", [
    "--n_bins=40",             # ambiguous across sections
    "--no_such_key=1",         # unknown
    "--train.schedule=bogus",  # rejected value
    "--mcg.epsilons=[1,-1]",   # unsorted offsets
    "--train.initial_lr=0",
    "--bogus.key=1",
])
def test_bad_overrides(flag):
    with pytest.raises(ConfigError):
        load_run_config(overrides=[flag])


def test_override_needs_value():
    with pytest.raises(ConfigError):
        parse_overrides(["--train.max_epochs"])


def test_ini_file(tmp_path):
    path = os.path.join(tmp_path, "run.ini")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[train]\nmax_epochs = 7\nschedule = separate\n[data]\ntest_snrs = [0, 5]\n")
    cfg = load_run_config(path, overrides=["--train.max_epochs=9"])
    assert cfg.train.max_epochs == 9
    assert cfg.train.schedule == "separate"
    assert cfg.data.test_snrs == [0.0, 5.0]


def test_ini_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(os.path.join(tmp_path, "absent.ini"))
    path = os.path.join(tmp_path, "bad.ini")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_run_config(path)
    with pytest.raises(ConfigError):
        load_run_config(preset="huge")


def test_with_epsilons():
    cfg = desk_preset().with_epsilons([0.0])
    assert cfg.n == 1
    with pytest.raises(ValidationError):
        desk_preset().with_epsilons([2.0, 1.0])


def test_paths_resolve_against_root():
    paths = PathsConfig().resolve("/data/out")
    assert paths.corpus == os.path.join("/data/out", "corpus")
    assert paths.stats == os.path.join("/data/out", "corpus", Config.STATS_FILENAME)
    assert paths.run_dir == os.path.join("/data/out", "run")
    assert PathsConfig(corpus="/abs/c").resolve("/x").corpus == "/abs/c"


def test_result_records():
    ok = create_result({"value": 1})
    assert ok == {"value": 1, "status": "success"}
    err = create_error_result("boom", cell=2)
    assert err == {"error": "boom", "cell": 2, "status": "error"}


def test_derived_streams_are_independent_of_call_order():
    a = derive_rng(5, 1, 2).random(3)
    derive_rng(5, 9).random(100)
    b = derive_rng(5, 1, 2).random(3)
    assert a.tolist() == b.tolist()
    assert derive_rng(5, 1, 3).random() != derive_rng(5, 1, 2).random()


def test_token_text():
    assert parse_tokens(format_tokens([3, 1, 2])) == [3, 1, 2]
