import filecmp
import os
import threading
import unittest

import numpy as np
import pytest

from mcg_asr.data.batcher import Batcher, pad_stack
from mcg_asr.data.manifest import (NoiseRecord, UtteranceRecord, read_manifest, read_noise_list,
                                   write_manifest, write_noise_list)
from mcg_asr.data.mixing import PEAK_LIMIT, MixSpec, draw_mix_spec, measured_snr, mix, mix_at_snr, noise_cut
from mcg_asr.data.prefetch import Prefetcher
from mcg_asr.data.synth import (EDGE_MS, GAP_MS, TOKEN_MS, render_tokens, synth_toy_corpus,
                                token_template)
from mcg_asr.dsp.features import FeatureExtractor, Waveform
from mcg_asr.errors import DataError, SignalError
from mcg_asr.trainer import build_batcher, load_thresholds

from conftest import tiny_config

SR = 16000


def _rms(x):
    return float(np.sqrt(np.mean(np.asarray(x) ** 2)))


class TestMixing(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.clean = Waveform(0.3 * np.sin(2 * np.pi * 440 * np.arange(8000) / SR), SR)
        self.noise = Waveform(0.1 * rng.standard_normal(20000), SR)

    def test_zero_db_matches_rms(self):
        result = mix(self.clean, self.noise, MixSpec(snr_db=0.0, offset=123))
        self.assertAlmostEqual(_rms(result.clean.samples), _rms(result.noise.samples), delta=1e-6)
        np.testing.assert_allclose(result.noisy.samples, result.clean.samples + result.noise.samples)

    def test_high_snr_is_nearly_clean(self):
        rng = np.random.default_rng(1)
        noise = Waveform(np.sign(rng.standard_normal(20000)), SR)
        noisy = mix_at_snr(self.clean, noise, MixSpec(snr_db=60.0))
        peak = np.max(np.abs(self.clean.samples))
        self.assertLess(np.max(np.abs(noisy.samples - self.clean.samples)), 1e-3 * peak)

    def test_random_draws_hit_requested_snr(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            spec = draw_mix_spec(rng, ["n0"], [len(self.noise)], (-5.0, 20.0))
            self.assertTrue(-5.0 <= spec.snr_db <= 20.0)
            result = mix(self.clean, self.noise, spec)
            self.assertAlmostEqual(measured_snr(result.clean.samples, result.noise.samples), spec.snr_db,
                                   delta=0.01)

    def test_peak_normalization_keeps_snr(self):
        loud = Waveform(0.95 * np.sin(2 * np.pi * 200 * np.arange(8000) / SR), SR)
        result = mix(loud, self.noise, MixSpec(snr_db=0.0))
        self.assertLess(result.gain, 1.0)
        self.assertLessEqual(np.max(np.abs(result.noisy.samples)), PEAK_LIMIT + 1e-12)
        self.assertAlmostEqual(measured_snr(result.clean.samples, result.noise.samples), 0.0, delta=1e-9)

    def test_short_noise_wraps(self):
        short = Waveform(self.noise.samples[:3000], SR)
        result = mix(self.clean, short, MixSpec(snr_db=5.0, offset=2500))
        self.assertTrue(result.looped)
        cut, looped = noise_cut(short.samples, 10, 2995)
        np.testing.assert_array_equal(cut, np.concatenate([short.samples[2995:], short.samples[:5]]))
        self.assertTrue(looped)

    def test_zero_power_inputs(self):
        silent = Waveform(np.zeros(8000), SR)
        with self.assertRaises(SignalError):
            mix(silent, self.noise, MixSpec(snr_db=0.0))
        with self.assertRaises(SignalError):
            mix(self.clean, Waveform(np.zeros(9000), SR), MixSpec(snr_db=0.0))

    def test_sample_rate_mismatch(self):
        with self.assertRaises(SignalError):
            mix(self.clean, Waveform(self.noise.samples, 8000), MixSpec(snr_db=0.0))


def test_manifest_round_trip(tmp_path):
    wav = os.path.join(tmp_path, "wav", "a.wav")
    records = [UtteranceRecord("a", wav, [1, 2, 1]), UtteranceRecord("b", wav, [3])]
    path = os.path.join(tmp_path, "m.lst")
    write_manifest(path, records)
    with open(path, encoding="utf-8") as fh:
        assert fh.readline().split()[1] == os.path.join("wav", "a.wav")
    back = read_manifest(path, vocab_size=3)
    assert [(r.id, r.path, r.tokens) for r in back] == [("a", wav, [1, 2, 1]), ("b", wav, [3])]

    noise_path = os.path.join(tmp_path, "noise.lst")
    write_noise_list(noise_path, [NoiseRecord("white", wav)])
    assert read_noise_list(noise_path)[0].path == wav


def test_manifest_errors(tmp_path):
    path = os.path.join(tmp_path, "m.lst")
    with pytest.raises(DataError):
        read_manifest(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("a x.wav 1 5\n")
    with pytest.raises(DataError):
        read_manifest(path, vocab_size=4)
    with pytest.raises(DataError):
        write_manifest(path, [UtteranceRecord("a", "x.wav", [])])


def _segment_means(feats, count, hop_ms=8.0, win_ms=32.0):
    """Mean feature vector over the frames lying fully inside each token span."""
    out = []
    for i in range(count):
        start_ms = EDGE_MS + i * (TOKEN_MS + GAP_MS)
        first = int(np.ceil(start_ms / hop_ms))
        last = int((start_ms + TOKEN_MS - win_ms) / hop_ms)
        out.append(feats[first:last + 1].mean(axis=0))
    return out


def test_template_order_in_features():
    V = 3
    extractor = FeatureExtractor(n_bins=40)
    feats = extractor.extract(render_tokens([1, 2, 1], V, np.random.default_rng(0), SR)).values
    refs = [_segment_means(extractor.extract(render_tokens([k], V, np.random.default_rng(k), SR)).values, 1)[0]
            for k in range(1, V + 1)]
    found = []
    for segment in _segment_means(feats, 3):
        scores = [np.corrcoef(segment, ref)[0, 1] for ref in refs]
        found.append(int(np.argmax(scores)) + 1)
    assert found == [1, 2, 1]


def test_templates_are_distinct():
    a, b = token_template(1, 4), token_template(2, 4)
    assert a.shape == b.shape == (int(TOKEN_MS * SR / 1000),)
    assert not np.allclose(a, b)
    with pytest.raises(ValueError):
        token_template(5, 4)


def test_synthesis_is_byte_identical(tmp_path):
    cfg = tiny_config(str(tmp_path))
    a = synth_toy_corpus(cfg, os.path.join(tmp_path, "a"))
    b = synth_toy_corpus(cfg, os.path.join(tmp_path, "b"))
    for key in a:
        for ra, rb in zip(read_noise_list(a[key]) if key.startswith("noise") else read_manifest(a[key]),
                          read_noise_list(b[key]) if key.startswith("noise") else read_manifest(b[key])):
            assert filecmp.cmp(ra.path, rb.path, shallow=False)
    assert len(read_manifest(a["train"])) == cfg.data.num_train


def test_empty_corpus_refuses_to_batch(tmp_path):
    cfg = tiny_config(str(tmp_path))
    cfg = cfg.model_copy(update={"data": cfg.data.model_copy(update={"num_train": 0})})
    paths = synth_toy_corpus(cfg, cfg.paths.corpus)
    assert read_manifest(paths["train"]) == []
    with pytest.raises(DataError):
        build_batcher(cfg, paths["train"], paths["noise_train"], None, shuffle=True)
    with pytest.raises(DataError):
        Batcher([], FeatureExtractor(n_bins=8), 2, 0, clean_only=True)


def test_pad_stack_masks():
    feats = [np.ones((3, 2)), np.ones((5, 2)), np.ones((1, 2))]
    stacked, mask, lengths = pad_stack(feats)
    assert stacked.shape == (3, 5, 2)
    np.testing.assert_array_equal(mask.sum(axis=1), [3, 5, 1])
    np.testing.assert_array_equal(lengths, [3, 5, 1])
    assert not stacked[0, 3:].any()


def test_batcher_is_deterministic(tiny_corpus):
    cfg, paths = tiny_corpus
    thresholds = load_thresholds(cfg)
    first = list(build_batcher(cfg, paths["train"], paths["noise_train"], thresholds, shuffle=True).epoch(1))
    second = list(build_batcher(cfg, paths["train"], paths["noise_train"], thresholds, shuffle=True).epoch(1))
    assert [b.ids for b in first] == [b.ids for b in second]
    for a, b in zip(first, second):
        assert a.noisy.tobytes() == b.noisy.tobytes()
        assert a.mixes == b.mixes
        np.testing.assert_array_equal(a.mask.sum(axis=1), a.lengths)
        assert a.labels.shape == (3,) + a.clean.shape
        assert not a.noisy[~a.mask].any()
        assert not a.labels[:, ~a.mask].any()


def test_every_epoch_covers_the_manifest(tiny_corpus):
    cfg, paths = tiny_corpus
    batcher = build_batcher(cfg, paths["train"], paths["noise_train"], None, shuffle=True)
    expected = sorted(r.id for r in read_manifest(paths["train"]))
    for epoch in range(3):
        ids = [i for b in batcher.epoch(epoch) for i in b.ids]
        assert sorted(ids) == expected


def test_noise_draws_follow_redraw_flag(tiny_corpus):
    cfg, paths = tiny_corpus
    batcher = build_batcher(cfg, paths["train"], paths["noise_train"], None, shuffle=False)
    e0 = [m for b in batcher.epoch(0) for m in b.mixes]
    e1 = [m for b in batcher.epoch(1) for m in b.mixes]
    assert e0 != e1
    batcher.redraw_noise = False
    f0 = [m for b in batcher.epoch(0) for m in b.mixes]
    f1 = [m for b in batcher.epoch(1) for m in b.mixes]
    assert f0 == f1


def test_batches_flag_wrapped_noise(tiny_corpus):
    cfg, paths = tiny_corpus
    batcher = build_batcher(cfg, paths["train"], paths["noise_train"], None, shuffle=False)
    ids = [r.id for r in batcher.records]
    for batch in batcher.epoch(0):
        assert len(batch.looped) == batch.size
        for uid, spec, wrapped in zip(batch.ids, batch.mixes, batch.looped):
            n = len(batcher.noise_waves[batcher.noise_ids.index(spec.noise_id)])
            assert wrapped == (spec.offset % n + len(batcher.waves[ids.index(uid)]) > n)
    clean = build_batcher(cfg, paths["train"], None, None, shuffle=False, clean_only=True)
    assert not any(w for b in clean.epoch(0) for w in b.looped)


def test_fixed_snr_and_clean_conditions(tiny_corpus):
    cfg, paths = tiny_corpus
    fixed = build_batcher(cfg, paths["test"], paths["noise_test"], None, shuffle=False, snr=5.0)
    assert all(m.snr_db == 5.0 for b in fixed.epoch(0) for m in b.mixes)
    clean = build_batcher(cfg, paths["test"], None, None, shuffle=False, clean_only=True)
    for b in clean.epoch(0):
        assert b.noisy.tobytes() == b.clean.tobytes()


def test_long_utterances_are_skipped(tiny_corpus):
    cfg, paths = tiny_corpus
    cfg = cfg.model_copy(update={"data": cfg.data.model_copy(update={"max_frames": 10})})
    with pytest.raises(DataError):
        build_batcher(cfg, paths["train"], paths["noise_train"], None, shuffle=True)


def test_prefetch_preserves_order():
    pre = Prefetcher(depth=2)
    assert list(pre.iterate(lambda: iter(range(50)))) == list(range(50))
    stats = pre.get_statistics()
    assert stats["produced"] == 50 and stats["consumed"] == 50 and stats["failures"] == 0


def test_prefetch_inline_depth():
    pre = Prefetcher(depth=0)
    assert list(pre.iterate(lambda: iter("abc"))) == ["a", "b", "c"]
    assert pre.get_statistics()["depth"] == 0


def test_prefetch_reraises_producer_errors():
    def source():
        yield 1
        raise DataError("broken clip")

    pre = Prefetcher(depth=1)
    with pytest.raises(DataError):
        list(pre.iterate(source))
    assert pre.get_statistics()["failures"] == 1


def test_prefetch_stops_worker_on_early_exit():
    pre = Prefetcher(depth=1)
    before = threading.active_count()
    for item in pre.iterate(lambda: iter(range(1000))):
        if item == 3:
            break
    assert threading.active_count() <= before
