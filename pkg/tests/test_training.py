import math
import os
import shutil
import time
import unittest

import numpy as np
import pytest

from mcg_asr import cli
from mcg_asr.config import EPSILON_GRID, Config, desk_preset, full_preset
from mcg_asr.data.batcher import Batch
from mcg_asr.data.synth import manifest_paths, synth_toy_corpus
from mcg_asr.errors import ConfigError, DataError
from mcg_asr.evaluation import check_vocabulary, evaluate, parse_extra_conditions, sweep
from mcg_asr.losses import ctc_loss, encoder_consistency_loss, filtered_consistency_loss, gate_loss, total_loss
from mcg_asr.numerics.gradcheck import check_gradients
from mcg_asr.numerics.nn import PReLU
from mcg_asr.numerics.tensor import Tensor, no_grad
from mcg_asr.trainer import JointSystem, JointTrainer, build_batcher, compute_corpus_stats, load_thresholds, train

from conftest import tiny_config


def _with_train(cfg, **updates):
    return cfg.model_copy(update={"train": cfg.train.model_copy(update=updates)})


def _with_run_dir(cfg, run_dir):
    return cfg.model_copy(update={"paths": cfg.paths.model_copy(update={"run_dir": run_dir})})


def _first_batch(cfg, paths, thresholds):
    batcher = build_batcher(cfg, paths["train"], paths["noise_train"], thresholds, shuffle=True)
    return next(iter(batcher.epoch(0)))


def test_train_step_updates_parameters(tiny_corpus):
    cfg, paths = tiny_corpus
    trainer = JointTrainer(cfg, cfg.paths.run_dir)
    before = {k: v.copy() for k, v in trainer.system.state_dict().items()}
    parts = trainer.train_step(_first_batch(cfg, paths, load_thresholds(cfg)))

    assert trainer.step == 1
    for name in ("l_g", "l_r", "l_o", "l_ctc", "total"):
        assert math.isfinite(getattr(parts, name))
    after = trainer.system.state_dict()
    assert not np.array_equal(before["asr.ctc_head.weight"], after["asr.ctc_head.weight"])
    frontend = [k for k, _ in trainer.system.frontend.named_parameters("frontend.")]
    assert any(not np.array_equal(before[k], after[k]) for k in frontend)


def test_full_preset_forward_shapes():
    cfg = full_preset()
    system = JointSystem(cfg).eval()
    x = np.random.default_rng(3).standard_normal((2, 17, cfg.features.n_bins))
    with no_grad():
        out = system.run(Tensor(x), np.array([17, 13]))
    assert [g.shape for g in out.mcg.gates] == [(2, 17, 80)] * cfg.n
    assert out.encoder.logits.shape == (2, 5, cfg.asr.vocab_size + 1)
    assert out.encoder.O.shape == (2, 5, 256)
    assert out.encoder.lengths.tolist() == [5, 4]


def test_ctc_only_weights(tiny_corpus):
    cfg, paths = tiny_corpus
    cfg = cfg.model_copy(update={"loss": cfg.loss.model_copy(update={"w_gate": 0.0, "w_filtered": 0.0,
                                                                      "w_encoder": 0.0})})
    trainer = JointTrainer(cfg, cfg.paths.run_dir)
    parts = trainer.compute_losses(_first_batch(cfg, paths, load_thresholds(cfg)))
    assert parts.total == pytest.approx(parts.l_ctc)


def test_without_frontend(tiny_corpus):
    cfg, paths = tiny_corpus
    cfg = _with_train(cfg, frontend="none")
    trainer = JointTrainer(cfg, cfg.paths.run_dir)
    assert trainer.system.frontend is None
    parts = trainer.train_step(_first_batch(cfg, paths, None))
    assert parts.l_g == 0.0 and parts.l_r == 0.0
    assert math.isfinite(parts.l_ctc)


def _losses(trainer, batch, clean_first, constant_clean):
    """Joint losses built by hand, with control over the clean branch."""
    system, lengths = trainer.system, batch.lengths

    def clean_branch():
        with no_grad():
            clean = system.run(Tensor(batch.clean), lengths)
        filtered, encoded = clean.mcg.filtered, clean.encoder.O
        if constant_clean:
            filtered = [Tensor(f.data.copy()) for f in filtered]
            encoded = Tensor(encoded.data.copy())
        return filtered, encoded

    if clean_first:
        clean_filtered, clean_o = clean_branch()
    noisy = system.run(Tensor(batch.noisy), lengths)
    if not clean_first:
        clean_filtered, clean_o = clean_branch()
    return _assemble(trainer, batch, noisy, clean_filtered, clean_o)


def _assemble(trainer, batch, noisy, clean_filtered, clean_o):
    enc = noisy.encoder
    sub_mask = np.arange(enc.O.shape[1])[None, :] < enc.lengths[:, None]
    return total_loss([
        gate_loss(noisy.mcg.gates, list(batch.labels), batch.mask),
        filtered_consistency_loss(noisy.mcg.filtered, clean_filtered, batch.mask),
        encoder_consistency_loss(enc.O, clean_o, sub_mask),
        ctc_loss(enc.logits, batch.tokens, enc.lengths),
    ], trainer.weights)


class _CleanFirstTrainer(JointTrainer):

    def compute_losses(self, batch):
        return _losses(self, batch, clean_first=True, constant_clean=False)


def _grads(trainer, breakdown):
    breakdown.tensor.backward()
    return {name: p.grad.copy() for name, p in trainer.system.named_parameters()}


def test_clean_branch_contributes_no_gradient(tiny_corpus):
    cfg, paths = tiny_corpus
    batch = _first_batch(cfg, paths, load_thresholds(cfg))
    reference = JointTrainer(cfg, cfg.paths.run_dir)
    reference.system.train()
    expected = _grads(reference, reference.compute_losses(batch))

    constant = JointTrainer(cfg, cfg.paths.run_dir)
    constant.system.train()
    got = _grads(constant, _losses(constant, batch, clean_first=False, constant_clean=True))

    assert set(got) == set(expected)
    for name in expected:
        assert got[name].tobytes() == expected[name].tobytes(), name


def test_update_ignores_clean_branch_order(tiny_corpus):
    cfg, paths = tiny_corpus
    batch = _first_batch(cfg, paths, load_thresholds(cfg))
    after_noisy = JointTrainer(cfg, cfg.paths.run_dir)
    before_noisy = _CleanFirstTrainer(cfg, cfg.paths.run_dir)
    first = after_noisy.train_step(batch)
    second = before_noisy.train_step(batch)

    assert first.total == second.total
    a, b = after_noisy.system.state_dict(), before_noisy.system.state_dict()
    for name in a:
        assert a[name].tobytes() == b[name].tobytes(), name


def test_joint_loss_gradients_end_to_end(float64, tmp_path):
    cfg = tiny_config(str(tmp_path))
    rng = np.random.default_rng(8)
    B, T, Q = 2, 12, cfg.features.n_bins
    mask = np.arange(T)[None, :] < np.array([12, 10])[:, None]
    noisy = rng.standard_normal((B, T, Q)) * mask[..., None]
    clean = rng.standard_normal((B, T, Q)) * mask[..., None]
    labels = (rng.random((cfg.n, B, T, Q)) > 0.5) * mask[None, ..., None]
    batch = Batch(ids=["a", "b"], noisy=noisy, clean=clean, labels=labels.astype(float), mask=mask,
                  lengths=np.array([12, 10]), tokens=[[1, 2], [2]])

    trainer = JointTrainer(cfg, cfg.paths.run_dir)
    system = trainer.system.train()
    for m in system.modules():
        if isinstance(m, PReLU):
            m.alpha.data[...] = 1.0
    with no_grad():
        targets = system.run(Tensor(batch.clean), batch.lengths)
    clean_filtered = [Tensor(f.data.copy()) for f in targets.mcg.filtered]
    clean_o = Tensor(targets.encoder.O.data.copy())

    def fn():
        return _assemble(trainer, batch, system.run(Tensor(batch.noisy), batch.lengths),
                         clean_filtered, clean_o).tensor

    fe, asr = system.frontend, system.asr
    params = [fe.encoders[0].conv.weight, fe.lstm.w_hh, fe.fc.weight, fe.head_biases[1], fe.fusion.conv.weight,
              asr.blocks[0].mhsa.q.weight, asr.blocks[0].conv.depthwise.weight, asr.ctc_head.weight]
    assert check_gradients(fn, params, h=1e-6, max_entries=5) < 1e-4


class TestTrainingRuns(unittest.TestCase):

    @pytest.fixture(autouse=True)
    def _corpus(self, tiny_corpus, tmp_path):
        self.cfg, self.paths = tiny_corpus
        self.tmp = str(tmp_path)

    def test_resume_reproduces_uninterrupted_run(self):
        full = train(_with_run_dir(self.cfg, os.path.join(self.tmp, "full")))
        self.assertEqual(full["status"], "success")

        split_dir = os.path.join(self.tmp, "split")
        first = train(_with_run_dir(_with_train(self.cfg, max_epochs=1), split_dir))
        self.assertEqual(first["epochs"], 1)
        resumed = train(_with_run_dir(self.cfg, split_dir),
                        resume=os.path.join(split_dir, Config.CHECKPOINT_LAST))
        self.assertEqual(resumed["epochs"], 2)
        self.assertEqual([h["epoch"] for h in resumed["history"]], [1])
        self.assertAlmostEqual(resumed["history"][0]["val_loss"], full["history"][1]["val_loss"], places=5)

    def test_numeric_failure_halts_with_checkpoint(self):
        thresholds = load_thresholds(self.cfg)
        train_b = build_batcher(self.cfg, self.paths["train"], self.paths["noise_train"], thresholds, shuffle=True)
        dev_b = build_batcher(self.cfg, self.paths["dev"], self.paths["noise_train"], thresholds, shuffle=False)
        trainer = JointTrainer(self.cfg, self.cfg.paths.run_dir)
        trainer.system.asr.ctc_head.bias.data[0] = np.nan
        result = trainer.fit(train_b, dev_b, max_epochs=1)
        self.assertEqual(result["status"], "error")
        self.assertEqual(result["kind"], "numeric")
        self.assertTrue(result["checkpoint"].endswith(Config.CHECKPOINT_LAST))

    def test_separate_schedule_ends_in_recognizer_stage(self):
        cfg = _with_train(self.cfg, schedule="separate", separate_epochs=1, max_epochs=1)
        result = train(cfg)
        self.assertEqual(result["status"], "success")
        self.assertEqual(result["stage"], "asr")

    def test_evaluate_writes_reports(self):
        self.assertEqual(train(_with_train(self.cfg, max_epochs=1))["status"], "success")
        result = evaluate(self.cfg)
        self.assertEqual(set(result["conditions"]), {"clean", "noisy_0dB"})
        with open(result["report_path"], encoding="utf-8") as fh:
            report = fh.read()
        self.assertIn("clean", report)
        self.assertIn("noisy_0dB", report)
        with open(os.path.join(self.cfg.paths.run_dir, "utterances.tsv"), encoding="utf-8") as fh:
            rows = fh.read().splitlines()
        self.assertEqual(rows[0].split("\t")[0], "condition")
        self.assertEqual(len(rows) - 1, 2 * self.cfg.data.num_test)

        extra = self.cfg.model_copy(update={"paths": self.cfg.paths.model_copy(
            update={"extra_test": [f"train_set={self.paths['train']}"]})})
        result = evaluate(extra, report_dir=os.path.join(self.tmp, "extra"))
        self.assertEqual(list(result["conditions"]), ["clean", "noisy_0dB", "train_set"])
        self.assertEqual(result["conditions"]["train_set"]["utterances"], self.cfg.data.num_train)
        with self.assertRaises(ConfigError):
            parse_extra_conditions(["no-equals-sign"])

    def test_untrained_model_misses_nearly_every_token(self):
        JointTrainer(self.cfg, self.cfg.paths.run_dir).save(
            os.path.join(self.cfg.paths.run_dir, Config.CHECKPOINT_BEST))
        conditions = evaluate(self.cfg)["conditions"]
        for name in ("clean", "noisy_0dB"):
            self.assertGreaterEqual(conditions[name]["WER"], 80.0)
            self.assertLessEqual(conditions[name]["WER"], 120.0)
        self.assertGreaterEqual(conditions["noisy_0dB"]["WER"], conditions["clean"]["WER"])

    def test_vocabulary_mismatch(self):
        train(_with_train(self.cfg, max_epochs=1))
        ckpt = os.path.join(self.cfg.paths.run_dir, Config.CHECKPOINT_BEST)
        bigger = self.cfg.model_copy(update={"asr": self.cfg.asr.model_copy(update={"vocab_size": 4}),
                                             "data": self.cfg.data.model_copy(update={"vocab_size": 4})})
        with self.assertRaises(ConfigError):
            JointTrainer(bigger, os.path.join(self.tmp, "other")).load(ckpt)
        with self.assertRaises(DataError):
            check_vocabulary(ckpt, self.paths["test"], 4)

    def test_sweep_reports_failing_cell(self):
        cfg = _with_train(self.cfg, max_epochs=1)
        result = sweep(cfg, [[0.0], [1.0, -1.0]], os.path.join(self.tmp, "sweep"))
        self.assertEqual(result["status"], "partial_success")
        self.assertEqual([c["status"] for c in result["cells"]], ["success", "error"])
        self.assertTrue(os.path.exists(result["report_path"]))
        self.assertIn("error", result["report"])

    def test_empty_sweep_grid(self):
        with self.assertRaises(ConfigError):
            sweep(self.cfg, [])


def test_cli_synth_and_stats(tmp_path, monkeypatch):
    monkeypatch.setattr(Config, "OUTPUT_ROOT", str(tmp_path))
    assert cli.main(["synth", "--data.num_train=3", "--data.num_dev=1", "--data.num_test=1"]) == cli.EXIT_OK
    assert os.path.exists(manifest_paths(os.path.join(tmp_path, "corpus"))["train"])
    assert cli.main(["stats", "--data.num_train=3"]) == cli.EXIT_OK
    assert os.path.exists(os.path.join(tmp_path, "corpus", Config.STATS_FILENAME))


def test_cli_configuration_error(tmp_path, monkeypatch):
    monkeypatch.setattr(Config, "OUTPUT_ROOT", str(tmp_path))
    assert cli.main(["train", "--train.schedule=bogus"]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", "--grid=not json"]) == cli.EXIT_CONFIG


def test_cli_rejects_stray_arguments(tmp_path, monkeypatch):
    monkeypatch.setattr(Config, "OUTPUT_ROOT", str(tmp_path))
    with pytest.raises(SystemExit):
        cli.main(["synth", "stray"])


def _desk_corpus(root, seed=0, **train_updates):
    """Desk-sized run with one fixed noise draw per utterance."""
    cfg = desk_preset()
    cfg = cfg.model_copy(update={
        "data": cfg.data.model_copy(update={"redraw_noise": False, "prefetch": 0}),
        "train": cfg.train.model_copy(update={"seed": seed, **train_updates}),
        "paths": cfg.paths.resolve(root),
    })
    paths = synth_toy_corpus(cfg, cfg.paths.corpus)
    compute_corpus_stats(cfg)
    return cfg, paths


def _non_monotone_steps(values):
    return sum(1 for a, b in zip(values, values[1:]) if b > a)


@pytest.mark.slow
def test_desk_model_overfits_training_set(tmp_path):
    started = time.monotonic()
    cfg, paths = _desk_corpus(str(tmp_path), max_epochs=200, stop_patience=200)
    assert cfg.data.num_train == 8
    # validate on the training utterances so the plateau schedule follows the fit
    shutil.copyfile(paths["train"], paths["dev"])

    result = train(cfg)
    assert result["status"] == "success"
    train_losses = [h["train_loss"] for h in result["history"]]
    assert _non_monotone_steps(train_losses[:20]) <= 2
    assert train_losses[-1] < 0.1 * train_losses[0]

    report = evaluate(cfg.model_copy(update={"paths": cfg.paths.model_copy(
        update={"extra_test": [f"train_set={paths['train']}"]})}))
    assert report["conditions"]["train_set"]["WER"] == 0.0
    assert time.monotonic() - started < 600.0


@pytest.mark.slow
def test_gate_frontend_beats_plain_recognizer_at_0db(tmp_path):
    joint, plain = [], []
    for seed in (0, 1, 2):
        for frontend, sink in (("mcg", joint), ("none", plain)):
            root = os.path.join(tmp_path, f"{frontend}-{seed}")
            cfg, _ = _desk_corpus(root, seed=seed, frontend=frontend, max_epochs=60)
            assert train(cfg)["status"] == "success"
            sink.append(evaluate(cfg)["conditions"]["noisy_0dB"]["WER"])
    assert np.mean(joint) <= np.mean(plain)


@pytest.mark.slow
def test_full_epsilon_sweep(tiny_corpus, tmp_path):
    cfg, _ = tiny_corpus
    result = sweep(_with_train(cfg, max_epochs=1), EPSILON_GRID, os.path.join(tmp_path, "table"))
    assert result["status"] == "success"
    assert [len(c["epsilons"]) for c in result["cells"]] == [1, 2, 3, 4]
