import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from mcg_asr.config import (Config, ConformerConfig, DataConfig, FeatureConfig, McgConfig,  # noqa: E402
                            RunConfig, TrainConfig)
from mcg_asr.numerics.tensor import precision  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training runs (set MCG_ASR_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if Config.RUN_SLOW_TESTS:
        return
    skip = pytest.mark.skip(reason="slow; set MCG_ASR_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    with precision(np.float64):
        yield


def tiny_config(tmp_dir: str, epsilons=(-1.0, 1.0, 2.0), **train) -> RunConfig:
    """Eight-bin system small enough for per-test training steps."""
    q = 8
    cfg = RunConfig(
        features=FeatureConfig(n_bins=q),
        mcg=McgConfig(channels=[2, 2, 2, 2, 2], lstm_units=4, fc_units=4, epsilons=list(epsilons),
                      n_bins=q, head_channels=2),
        asr=ConformerConfig(num_blocks=1, d_model=8, ffn_units=16, heads=2, conv_kernel=3,
                            vocab_size=3, n_bins=q),
        data=DataConfig(num_train=4, num_dev=2, num_test=2, vocab_size=3, min_tokens=2, max_tokens=3,
                        prefetch=0),
        train=TrainConfig(batch_size=2, max_epochs=2, initial_lr=1e-3, **train),
    )
    return cfg.model_copy(update={"paths": cfg.paths.resolve(tmp_dir)})


@pytest.fixture
def tiny_cfg(tmp_path):
    return tiny_config(str(tmp_path))


@pytest.fixture
def tiny_corpus(tiny_cfg):
    from mcg_asr.data.synth import synth_toy_corpus
    from mcg_asr.trainer import compute_corpus_stats

    paths = synth_toy_corpus(tiny_cfg, tiny_cfg.paths.corpus)
    compute_corpus_stats(tiny_cfg)
    return tiny_cfg, paths
