"""
Joint training of the gate front-end and the Conformer-CTC recognizer.

Each step runs the noisy features through front-end and recognizer with
gradients, then the clean features through the same networks under
``no_grad()``; the clean outputs only serve as targets for the two
consistency terms. The ``separate`` schedule first trains the front-end on
its own losses, then freezes it and trains the recognizer.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from .config import Config, RunConfig
from .data.batcher import Batch, Batcher
from .data.manifest import read_manifest, read_noise_list
from .data.synth import manifest_paths
from .dsp.features import FeatureExtractor
from .dsp.wavio import read_wav
from .errors import ConfigError, DataError, NumericError
from .labeling import ThresholdSet, corpus_stats, load_stats, make_thresholds, save_stats
from .losses import ctc_loss, encoder_consistency_loss, filtered_consistency_loss, gate_loss, total_loss
from .losses.joint import JointLossBreakdown
from .models.conformer import MIN_FRAMES, ConformerCtc, EncoderOutput
from .models.mcg import McgFrontEnd, McgOutput
from .numerics.checkpoint import load_checkpoint, save_checkpoint
from .numerics.nn import Module
from .numerics.optim import Adam, PlateauSchedule, clip_grad_norm
from .numerics.tensor import Tensor, get_dtype, no_grad
from .utils import create_error_result, create_result, derive_rng, ensure_dir

STAGES = ("joint", "frontend", "asr")
_STAGE_COMPONENTS = {
    "joint": (True, True, True, True),
    "frontend": (True, True, False, False),
    "asr": (False, False, True, True),
}


@dataclass
class ForwardPass:
    mcg: Optional[McgOutput]
    encoder: Optional[EncoderOutput]


class JointSystem(Module):
    """Optional gate front-end followed by the recognizer."""

    def __init__(self, cfg: RunConfig):
        super().__init__()
        seed = cfg.train.seed
        self.frontend = McgFrontEnd(cfg.mcg, derive_rng(seed, 11)) if cfg.train.frontend == "mcg" else None
        self.asr = ConformerCtc(cfg.asr, derive_rng(seed, 12), derive_rng(seed, 13))

    def run(self, x: Tensor, lengths: np.ndarray, with_asr: bool = True) -> ForwardPass:
        mcg = self.frontend(x) if self.frontend is not None else None
        if not with_asr:
            return ForwardPass(mcg, None)
        x_in = mcg.x_in if mcg is not None else x
        return ForwardPass(mcg, self.asr(x_in, lengths))

    def run_frozen_frontend(self, x: Tensor, lengths: np.ndarray) -> ForwardPass:
        """Front-end output treated as a constant input to the recognizer."""
        with no_grad():
            mcg = self.frontend(x) if self.frontend is not None else None
        x_in = mcg.x_in if mcg is not None else x
        return ForwardPass(mcg, self.asr(x_in, lengths))

    def decode_logits(self, x: Tensor, lengths: np.ndarray) -> EncoderOutput:
        with no_grad():
            return self.run(x, lengths).encoder


def _sub_mask(enc: EncoderOutput) -> np.ndarray:
    Tp = enc.O.shape[1]
    return np.arange(Tp)[None, :] < enc.lengths[:, None]


class JointTrainer:
    """Owns the model, optimizer and plateau schedule for one run directory."""

    def __init__(self, cfg: RunConfig, run_dir: str, stage: str = "joint"):
        self.cfg = cfg
        self.run_dir = ensure_dir(run_dir)
        self.system = JointSystem(cfg)
        self.step = 0
        self.epoch = 0
        self.stage = stage
        self._configure_stage(stage)

    # ------------------------------------------------------------------
    # stage setup
    # ------------------------------------------------------------------
    def _stage_params(self, stage: str):
        if stage == "frontend":
            if self.system.frontend is None:
                raise ConfigError("the separate schedule needs the gate front-end")
            return list(self.system.frontend.named_parameters("frontend."))
        if stage == "asr":
            return list(self.system.asr.named_parameters("asr."))
        return list(self.system.named_parameters())

    def _configure_stage(self, stage: str) -> None:
        if stage not in STAGES:
            raise ConfigError(f"unknown training stage {stage!r}")
        t = self.cfg.train
        self.stage = stage
        self.optimizer = Adam(self._stage_params(stage), lr=t.initial_lr)
        self.schedule = PlateauSchedule(initial_lr=t.initial_lr, decay_factor=t.decay_factor,
                                        plateau_patience=t.plateau_patience, stop_patience=t.stop_patience)

    @property
    def weights(self) -> Tuple[float, float, float, float]:
        mask = _STAGE_COMPONENTS[self.stage]
        return tuple(w if on else 0.0 for w, on in zip(self.cfg.loss.weights, mask))

    # ------------------------------------------------------------------
    # losses
    # ------------------------------------------------------------------
    def compute_losses(self, batch: Batch) -> JointLossBreakdown:
        """All four terms for one batch; terms the stage or front-end lacks are None."""
        use_g, use_r, use_o, use_ctc = _STAGE_COMPONENTS[self.stage]
        x = Tensor(batch.noisy)
        lengths = batch.lengths
        need_asr = use_o or use_ctc

        if self.stage == "asr":
            noisy = self.system.run_frozen_frontend(x, lengths)
        else:
            noisy = self.system.run(x, lengths, with_asr=need_asr)
        with no_grad():
            clean = self.system.run(Tensor(batch.clean), lengths, with_asr=need_asr)

        l_g = l_r = l_o = l_ctc = None
        if noisy.mcg is not None and self.stage != "asr":
            if use_g and batch.labels is not None:
                l_g = gate_loss(noisy.mcg.gates, list(batch.labels), batch.mask)
            if use_r:
                l_r = filtered_consistency_loss(noisy.mcg.filtered, clean.mcg.filtered, batch.mask)
        if noisy.encoder is not None:
            if use_o:
                l_o = encoder_consistency_loss(noisy.encoder.O, clean.encoder.O, _sub_mask(noisy.encoder))
            if use_ctc:
                l_ctc = ctc_loss(noisy.encoder.logits, batch.tokens, noisy.encoder.lengths)
        return total_loss([l_g, l_r, l_o, l_ctc], self.weights)

    # ------------------------------------------------------------------
    # loop
    # ------------------------------------------------------------------
    def train_step(self, batch: Batch) -> JointLossBreakdown:
        self.system.train()
        if self.stage == "asr" and self.system.frontend is not None:
            self.system.frontend.eval()
        self.optimizer.zero_grad()
        self.system.zero_grad()
        breakdown = self.compute_losses(batch)
        breakdown.tensor.backward()
        params = list(self.optimizer.params.values())
        if self.cfg.train.clip_norm > 0:
            clip_grad_norm(params, self.cfg.train.clip_norm)
        self.optimizer.step()
        self.step += 1
        if self.step % max(self.cfg.train.log_every, 1) == 0:
            logger.info(breakdown.log_line(self.step, self.optimizer.lr))
        return breakdown

    def validate(self, batcher: Batcher, epoch: int) -> float:
        """Size-weighted mean validation loss (total or CTC-only) in eval mode."""
        self.system.eval()
        total, count = 0.0, 0
        with no_grad():
            for batch in batcher.epoch(epoch):
                breakdown = self.compute_losses(batch)
                value = breakdown.l_ctc if self.cfg.train.val_metric == "ctc" and self.stage != "frontend" \
                    else breakdown.total
                total += value * batch.size
                count += batch.size
        self.system.train()
        return total / max(count, 1)

    def fit(self, train_batcher: Batcher, dev_batcher: Batcher, max_epochs: int) -> Dict[str, Any]:
        best_path = os.path.join(self.run_dir, Config.CHECKPOINT_BEST)
        last_path = os.path.join(self.run_dir, Config.CHECKPOINT_LAST)
        history: List[Dict[str, float]] = []
        logger.info(f"[Trainer] stage={self.stage} epochs={max_epochs} "
                    f"params={sum(p.size for p in self.optimizer.params.values())}")
        stopped_early = False
        while self.epoch < max_epochs:
            epoch = self.epoch
            try:
                losses = [self.train_step(batch).total for batch in train_batcher.epoch(epoch)]
                val_loss = self.validate(dev_batcher, epoch)
                previous_best = self.schedule.best_loss
                lr, stop = self.schedule.update(val_loss)
            except NumericError as e:
                logger.error(f"[Trainer] halting at step {self.step}: {e}; last good checkpoint is {last_path}")
                return create_error_result(str(e), kind="numeric", stage=self.stage, step=self.step,
                                           epoch=epoch, history=history, checkpoint=last_path)
            self.optimizer.lr = lr
            logger.info(f"epoch={epoch} val_loss={val_loss:.6f} lr={lr:.3e}")
            history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val_loss, "lr": lr})
            self.epoch += 1
            self.save(last_path)
            if val_loss < previous_best:
                self.save(best_path)
            if stop:
                logger.info(f"[Trainer] no improvement for {self.cfg.train.stop_patience} epochs, stopping")
                stopped_early = True
                break
        return create_result({"stage": self.stage, "epochs": self.epoch, "steps": self.step,
                              "best_val_loss": self.schedule.best_loss, "history": history,
                              "stopped_early": stopped_early, "checkpoint": best_path})

    # ------------------------------------------------------------------
    # checkpoints
    # ------------------------------------------------------------------
    def save(self, path: str) -> None:
        arrays = {f"model/{k}": v for k, v in self.system.state_dict().items()}
        arrays.update({f"adam/{k}": v for k, v in self.optimizer.state_dict().items()})
        meta = {
            "step": self.step, "epoch": self.epoch, "stage": self.stage,
            "adam_step": self.optimizer.state.step, "lr": self.optimizer.lr,
            "schedule": self.schedule.state(), "vocab_size": self.cfg.asr.vocab_size,
            "epsilons": list(self.cfg.mcg.epsilons), "frontend": self.cfg.train.frontend,
            "dtype": str(get_dtype()), "config": self.cfg.model_dump(mode="json"),
        }
        save_checkpoint(path, arrays, meta)

    def load(self, path: str, with_optimizer: bool = True) -> Dict[str, Any]:
        arrays, meta = load_checkpoint(path)
        if meta.get("vocab_size") != self.cfg.asr.vocab_size:
            raise ConfigError(f"checkpoint vocabulary {meta.get('vocab_size')} does not match "
                              f"configured {self.cfg.asr.vocab_size}")
        if meta.get("frontend") != self.cfg.train.frontend:
            raise ConfigError(f"checkpoint front-end {meta.get('frontend')!r} does not match "
                              f"configured {self.cfg.train.frontend!r}")
        self.system.load_state_dict({k[len("model/"):]: v for k, v in arrays.items() if k.startswith("model/")})
        if with_optimizer:
            if meta.get("stage") != self.stage:
                self._configure_stage(meta["stage"])
            adam = {k[len("adam/"):]: v for k, v in arrays.items() if k.startswith("adam/")}
            self.optimizer.load_state_dict(adam, int(meta["adam_step"]), float(meta["lr"]))
            self.schedule.restore(meta["schedule"])
            self.step = int(meta["step"])
            self.epoch = int(meta["epoch"])
        return meta


# ----------------------------------------------------------------------
# corpus helpers
# ----------------------------------------------------------------------
def compute_corpus_stats(cfg: RunConfig) -> Dict[str, Any]:
    """Clean train-set statistics written to ``paths.stats``."""
    paths = manifest_paths(cfg.paths.corpus)
    records = read_manifest(paths["train"], cfg.data.vocab_size)
    if not records:
        raise DataError(f"train manifest {paths['train']} is empty")
    extractor = FeatureExtractor.from_config(cfg.features)
    stats = corpus_stats([extractor.extract(read_wav(r.path)) for r in records])
    save_stats(cfg.paths.stats, stats, cfg.mcg.epsilons)
    logger.info(f"[Stats] D={stats.D} Q={stats.Q} written to {cfg.paths.stats}")
    return create_result({"path": cfg.paths.stats, "clips": stats.D})


def load_thresholds(cfg: RunConfig) -> ThresholdSet:
    if not os.path.exists(cfg.paths.stats):
        raise DataError(f"corpus stats not found at {cfg.paths.stats}; run the stats command first")
    stats, _ = load_stats(cfg.paths.stats)
    if stats.Q != cfg.features.n_bins:
        raise DataError(f"stats have Q={stats.Q}, features use {cfg.features.n_bins}")
    return make_thresholds(stats, cfg.mcg.epsilons)


def build_batcher(cfg: RunConfig, manifest: str, noise_list: Optional[str], thresholds: Optional[ThresholdSet],
                  shuffle: bool, snr: Optional[float] = None, clean_only: bool = False,
                  prefetch: int = 0) -> Batcher:
    records = read_manifest(manifest, cfg.data.vocab_size)
    if not records:
        raise DataError(f"manifest {manifest} is empty")
    noise = read_noise_list(noise_list) if noise_list and not clean_only else []
    return Batcher(records, FeatureExtractor.from_config(cfg.features), cfg.train.batch_size,
                   cfg.train.seed, thresholds=thresholds, noise=noise,
                   snr_range=(cfg.data.snr_min, cfg.data.snr_max), snr=snr, clean_only=clean_only,
                   redraw_noise=cfg.data.redraw_noise, max_frames=cfg.data.max_frames,
                   min_frames=MIN_FRAMES, shuffle=shuffle, prefetch=prefetch)


def train(cfg: RunConfig, resume: Optional[str] = None) -> Dict[str, Any]:
    """Train per ``cfg.train.schedule``; returns a result record with the best checkpoint."""
    paths = manifest_paths(cfg.paths.corpus)
    run_dir = ensure_dir(cfg.paths.run_dir)
    sink = logger.add(os.path.join(run_dir, "train.log"), level="INFO", format="{message}")
    try:
        thresholds = load_thresholds(cfg) if cfg.train.frontend == "mcg" else None
        train_batches = build_batcher(cfg, paths["train"], paths["noise_train"], thresholds, shuffle=True,
                                      prefetch=cfg.data.prefetch)
        dev_batches = build_batcher(cfg, paths["dev"], paths["noise_train"], thresholds, shuffle=False)

        t = cfg.train
        if t.schedule == "joint":
            trainer = JointTrainer(cfg, run_dir, "joint")
            if resume:
                trainer.load(resume)
                logger.info(f"[Trainer] resumed from {resume} at epoch {trainer.epoch}")
            return trainer.fit(train_batches, dev_batches, t.max_epochs)

        trainer = JointTrainer(cfg, run_dir, "frontend")
        if resume:
            trainer.load(resume)
        if trainer.stage == "frontend":
            first = trainer.fit(train_batches, dev_batches, t.separate_epochs)
            if first["status"] != "success":
                return first
            best = os.path.join(run_dir, Config.CHECKPOINT_BEST)
            trainer.load(best, with_optimizer=False)
            trainer._configure_stage("asr")
            trainer.epoch = 0
        return trainer.fit(train_batches, dev_batches, t.max_epochs)
    finally:
        logger.remove(sink)
