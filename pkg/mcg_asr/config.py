import configparser
import json
import os
from typing import Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

# Load environment variables
load_dotenv()


class Config:
    """Process-wide settings for mcg_asr, read from the environment."""

    OUTPUT_ROOT = os.getenv("MCG_ASR_OUTPUT_ROOT", "./runs")
    SEED = int(os.getenv("MCG_ASR_SEED", 0))
    LOG_LEVEL = os.getenv("MCG_ASR_LOG_LEVEL", "INFO")
    PRECISION = os.getenv("MCG_ASR_PRECISION", "float32")
    RUN_SLOW_TESTS = os.getenv("MCG_ASR_RUN_SLOW", "0") == "1"

    # Other configurations
    DEBUG = os.getenv("DEBUG", "False") == "True"

    SAMPLE_RATE = 16000
    STATS_FILENAME = "corpus_stats.bin"
    CHECKPOINT_BEST = "best.ckpt"
    CHECKPOINT_LAST = "last.ckpt"


DEFAULT_EPSILONS = [-1.0, 1.0, 2.0]
EPSILON_GRID = [[0.0], [-1.0, 1.0], [-1.0, 1.0, 2.0], [-2.0, -1.0, 1.0, 2.0]]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class FeatureConfig(_Section):
    sample_rate: int = Config.SAMPLE_RATE
    win_ms: float = 32.0
    hop_ms: float = 8.0
    n_fft: int = 512
    n_bins: int = 80
    f_min: float = 0.0
    f_max: Optional[float] = None
    floor_eps: float = 1e-10
    scale: str = "mel"

    @field_validator("scale")
    @classmethod
    def _scale(cls, v: str) -> str:
        if v not in ("mel", "bark"):
            raise ValueError("scale must be 'mel' or 'bark'")
        return v


class McgConfig(_Section):
    """Gate front-end sizes. Strides are (frequency, time) pairs."""

    channels: List[int] = Field(default_factory=lambda: [32, 48, 64, 80, 96])
    strides: List[Tuple[int, int]] = Field(default_factory=lambda: [(1, 1), (1, 1), (2, 1), (2, 1), (1, 1)])
    lstm_units: int = 128
    fc_units: int = 1920
    head_channels: int = 10
    epsilons: List[float] = Field(default_factory=lambda: list(DEFAULT_EPSILONS))
    n_bins: int = 80

    @property
    def n(self) -> int:
        return len(self.epsilons)

    @property
    def freq_stride(self) -> int:
        total = 1
        for f, _ in self.strides:
            total *= f
        return total

    @model_validator(mode="after")
    def _consistent(self) -> "McgConfig":
        if len(self.channels) != len(self.strides):
            raise ValueError("one stride per encoder channel entry is required")
        if not self.epsilons:
            raise ValueError("at least one epsilon is required")
        if list(self.epsilons) != sorted(self.epsilons):
            raise ValueError("epsilons must be sorted ascending")
        if any(t != 1 for _, t in self.strides):
            raise ValueError("encoder strides must preserve time")
        if self.n_bins % self.freq_stride:
            raise ValueError(f"n_bins={self.n_bins} is not divisible by the frequency stride {self.freq_stride}")
        expected = self.channels[-1] * (self.n_bins // self.freq_stride)
        if self.fc_units != expected:
            raise ValueError(f"fc_units must equal deepest channels x downsampled bins = {expected}")
        return self


class ConformerConfig(_Section):
    num_blocks: int = 2
    d_model: int = 64
    ffn_units: int = 128
    heads: int = 4
    conv_kernel: int = 15
    subsampling: int = 4
    vocab_size: int = 4
    n_bins: int = 80
    dropout: float = 0.0
    input_norm: str = "batchnorm"
    blank_bias: float = 3.0  # initial CTC-head bias of the blank logit

    @model_validator(mode="after")
    def _consistent(self) -> "ConformerConfig":
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd")
        if self.subsampling != 4:
            raise ValueError("only 4x subsampling (two stride-2 convolutions) is supported")
        if self.input_norm != "batchnorm":
            raise ValueError("input normalization is batch-norm")
        return self


class LossConfig(_Section):
    w_gate: float = 1.0
    w_filtered: float = 1.0
    w_encoder: float = 1.0
    w_ctc: float = 1.0

    @property
    def weights(self) -> Tuple[float, float, float, float]:
        return (self.w_gate, self.w_filtered, self.w_encoder, self.w_ctc)


class DataConfig(_Section):
    num_train: int = 8
    num_dev: int = 4
    num_test: int = 8
    vocab_size: int = 4
    min_tokens: int = 2
    max_tokens: int = 4
    snr_min: float = -5.0
    snr_max: float = 20.0
    test_snrs: List[float] = Field(default_factory=lambda: [0.0])
    redraw_noise: bool = True
    max_frames: int = 2000
    prefetch: int = 2

    @model_validator(mode="after")
    def _consistent(self) -> "DataConfig":
        if self.snr_min > self.snr_max:
            raise ValueError("snr_min must not exceed snr_max")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValueError("token count range is empty")
        return self


class TrainConfig(_Section):
    seed: int = Config.SEED
    batch_size: int = 4
    max_epochs: int = 300
    initial_lr: float = 2e-4
    decay_factor: float = 0.5
    plateau_patience: int = 5
    stop_patience: int = 20
    clip_norm: float = 5.0
    val_metric: str = "total"
    schedule: str = "joint"
    separate_epochs: int = 50
    frontend: str = "mcg"
    log_every: int = 1

    @field_validator("val_metric")
    @classmethod
    def _val_metric(cls, v: str) -> str:
        if v not in ("total", "ctc"):
            raise ValueError("val_metric must be 'total' or 'ctc'")
        return v

    @field_validator("schedule")
    @classmethod
    def _schedule(cls, v: str) -> str:
        if v not in ("joint", "separate"):
            raise ValueError("schedule must be 'joint' or 'separate'")
        return v

    @field_validator("frontend")
    @classmethod
    def _frontend(cls, v: str) -> str:
        if v not in ("mcg", "none"):
            raise ValueError("frontend must be 'mcg' or 'none'")
        return v

    @field_validator("initial_lr")
    @classmethod
    def _lr(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("initial_lr must be positive")
        return v


class PathsConfig(_Section):
    corpus: str = "corpus"
    stats: str = ""
    run_dir: str = ""
    checkpoint: str = ""
    report: str = ""
    extra_test: List[str] = Field(default_factory=list)

    def resolve(self, root: str) -> "PathsConfig":
        corpus = self.corpus if os.path.isabs(self.corpus) else os.path.join(root, self.corpus)
        stats = self.stats or os.path.join(corpus, Config.STATS_FILENAME)
        run_dir = self.run_dir or os.path.join(root, "run")
        return self.model_copy(update={"corpus": corpus, "stats": stats, "run_dir": run_dir})


class RunConfig(_Section):
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    mcg: McgConfig = Field(default_factory=McgConfig)
    asr: ConformerConfig = Field(default_factory=ConformerConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @property
    def n(self) -> int:
        return self.mcg.n

    @property
    def epsilons(self) -> List[float]:
        return list(self.mcg.epsilons)

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        if self.mcg.n_bins != self.features.n_bins or self.asr.n_bins != self.features.n_bins:
            raise ValueError("features.n_bins, mcg.n_bins and asr.n_bins must agree")
        if self.asr.vocab_size != self.data.vocab_size:
            raise ValueError("asr.vocab_size must equal data.vocab_size")
        return self

    def with_epsilons(self, epsilons: Sequence[float]) -> "RunConfig":
        mcg = self.mcg.model_copy(update={"epsilons": list(epsilons)})
        return self.model_copy(update={"mcg": McgConfig.model_validate(mcg.model_dump())})


def full_preset() -> RunConfig:
    """Full-size system (constructible; too large to train on a desk)."""
    return RunConfig(
        mcg=McgConfig(),
        asr=ConformerConfig(num_blocks=12, d_model=256, ffn_units=2048, heads=4, conv_kernel=15),
        train=TrainConfig(batch_size=32),
    )


def desk_preset() -> RunConfig:
    """Small system with the full-size topology, trainable on one CPU core."""
    return RunConfig(
        mcg=McgConfig(channels=[8, 12, 16, 20, 24], lstm_units=32, fc_units=480),
        asr=ConformerConfig(num_blocks=2, d_model=64, ffn_units=128, heads=4, conv_kernel=15),
        train=TrainConfig(batch_size=4, initial_lr=1e-3),
    )


PRESETS = {"full": full_preset, "desk": desk_preset}


def _coerce(raw: str):
    text = raw.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if text.startswith("[") or text.startswith("("):
        try:
            return json.loads(text.replace("(", "[").replace(")", "]"))
        except ValueError as exc:
            raise ConfigError(f"cannot parse list value {raw!r}") from exc
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _section_of(key: str) -> Tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        return section, name
    owners = [s for s, model in RunConfig.model_fields.items()
              if key in model.annotation.model_fields]
    if len(owners) != 1:
        hint = "unknown" if not owners else f"ambiguous ({', '.join(owners)})"
        raise ConfigError(f"config key {key!r} is {hint}; use section.key")
    return owners[0], key


def parse_overrides(overrides: Sequence[str]) -> Dict[str, Dict[str, object]]:
    """Turn ``--key=value`` / ``--section.key=value`` flags into section dicts."""
    out: Dict[str, Dict[str, object]] = {}
    for flag in overrides:
        body = flag[2:] if flag.startswith("--") else flag
        if "=" not in body:
            raise ConfigError(f"override {flag!r} must look like --key=value")
        key, value = body.split("=", 1)
        section, name = _section_of(key.replace("-", "_"))
        out.setdefault(section, {})[name] = _coerce(value)
    return out


def load_run_config(path: Optional[str] = None, overrides: Sequence[str] = (),
                    preset: str = "desk") -> RunConfig:
    """Preset, then INI file sections, then command-line overrides."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    data = PRESETS[preset]().model_dump()

    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        for section in parser.sections():
            if section not in data:
                raise ConfigError(f"unknown config section [{section}] in {path}")
            for key, value in parser.items(section):
                data[section][key] = _coerce(value)

    for section, values in parse_overrides(overrides).items():
        if section not in data:
            raise ConfigError(f"unknown config section {section!r}")
        data[section].update(values)

    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
