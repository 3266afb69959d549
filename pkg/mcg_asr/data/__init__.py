from .batcher import Batch, Batcher, pad_stack
from .manifest import (NoiseRecord, UtteranceRecord, read_manifest, read_noise_list, write_manifest,
                       write_noise_list)
from .mixing import MixResult, MixSpec, draw_mix_spec, measured_snr, mix, mix_at_snr
from .prefetch import Prefetcher
from .synth import manifest_paths, render_tokens, synth_toy_corpus, token_template

__all__ = [
    "Batch", "Batcher", "pad_stack", "NoiseRecord", "UtteranceRecord", "read_manifest",
    "read_noise_list", "write_manifest", "write_noise_list", "MixResult", "MixSpec", "draw_mix_spec",
    "measured_snr", "mix", "mix_at_snr", "Prefetcher", "manifest_paths", "render_tokens",
    "synth_toy_corpus", "token_template",
]
