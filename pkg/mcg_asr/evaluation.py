"""Recognition evaluation per test condition and the (n, epsilon) sweep."""

from __future__ import annotations

import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

from loguru import logger

from .config import EPSILON_GRID, Config, RunConfig
from .data.batcher import Batcher
from .data.manifest import read_manifest
from .data.synth import manifest_paths
from .errors import ConfigError, DataError, McgAsrError
from .metrics import AlignmentCounts, batch_greedy_decode, summarize, wer_align
from .numerics.checkpoint import load_checkpoint
from .numerics.tensor import Tensor
from .trainer import JointTrainer, build_batcher, train
from .utils import create_error_result, create_result, ensure_dir, format_tokens


def parse_extra_conditions(entries: Sequence[str]) -> List[Tuple[str, str]]:
    out = []
    for entry in entries:
        if "=" not in entry:
            raise ConfigError(f"extra test condition {entry!r} must look like name=manifest")
        name, path = entry.split("=", 1)
        out.append((name.strip(), path.strip()))
    return out


def evaluation_conditions(cfg: RunConfig, manifest: Optional[str] = None) -> List[Tuple[str, Dict[str, Any]]]:
    """(name, batcher kwargs) for clean, each configured SNR, and any extra manifests."""
    paths = manifest_paths(cfg.paths.corpus)
    manifest = manifest or paths["test"]
    conditions = [("clean", {"manifest": manifest, "clean_only": True})]
    for snr in cfg.data.test_snrs:
        conditions.append((f"noisy_{snr:g}dB", {"manifest": manifest, "snr": float(snr),
                                                 "noise_list": paths["noise_test"]}))
    for name, path in parse_extra_conditions(cfg.paths.extra_test):
        conditions.append((name, {"manifest": path, "clean_only": True}))
    return conditions


def check_vocabulary(checkpoint: str, manifest: str, vocab_size: int) -> None:
    _, meta = load_checkpoint(checkpoint)
    if meta.get("vocab_size") != vocab_size:
        raise DataError(f"checkpoint vocabulary {meta.get('vocab_size')} does not match configured {vocab_size}")
    highest = max((max(r.tokens) for r in read_manifest(manifest)), default=0)
    if highest > vocab_size:
        raise DataError(f"{manifest} uses token id {highest}, beyond the checkpoint vocabulary {vocab_size}")


def decode_condition(trainer: JointTrainer, batcher: Batcher) -> Tuple[List[AlignmentCounts], List[Dict[str, Any]]]:
    trainer.system.eval()
    alignments, rows = [], []
    for batch in batcher.epoch(0):
        enc = trainer.system.decode_logits(Tensor(batch.noisy), batch.lengths)
        hyps = batch_greedy_decode(enc.logits, enc.lengths)
        for utt, ref, hyp in zip(batch.ids, batch.tokens, hyps):
            counts = wer_align(ref, hyp)
            alignments.append(counts)
            rows.append({"id": utt, "ref": ref, "hyp": hyp, "S": counts.S, "D": counts.D,
                         "I": counts.I, "N": counts.N})
    return alignments, rows


def format_report(results: Dict[str, Dict[str, float]]) -> str:
    lines = [f"{'condition':<16}{'S':>9}{'D':>9}{'I':>9}{'WER':>9}"]
    for name, r in results.items():
        lines.append(f"{name:<16}{r['S']:>9.3f}{r['D']:>9.3f}{r['I']:>9.3f}{r['WER']:>9.3f}")
    return "\n".join(lines) + "\n"


def write_utterance_tsv(path: str, per_condition: Dict[str, List[Dict[str, Any]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("condition\tid\tref\thyp\tS\tD\tI\tN\n")
        for name, rows in per_condition.items():
            for r in rows:
                fh.write(f"{name}\t{r['id']}\t{format_tokens(r['ref'])}\t{format_tokens(r['hyp'])}\t"
                         f"{r['S']}\t{r['D']}\t{r['I']}\t{r['N']}\n")


def evaluate(cfg: RunConfig, checkpoint: Optional[str] = None, manifest: Optional[str] = None,
             report_dir: Optional[str] = None) -> Dict[str, Any]:
    """Greedy-decode every condition and write ``report.txt`` plus ``utterances.tsv``."""
    checkpoint = checkpoint or cfg.paths.checkpoint or os.path.join(cfg.paths.run_dir, Config.CHECKPOINT_BEST)
    if not os.path.exists(checkpoint):
        raise DataError(f"checkpoint not found: {checkpoint}")
    report_dir = ensure_dir(report_dir or cfg.paths.report or cfg.paths.run_dir)
    trainer = JointTrainer(cfg, report_dir)
    trainer.load(checkpoint, with_optimizer=False)

    summaries: Dict[str, Dict[str, float]] = {}
    per_condition: Dict[str, List[Dict[str, Any]]] = {}
    for name, spec in evaluation_conditions(cfg, manifest):
        check_vocabulary(checkpoint, spec["manifest"], cfg.asr.vocab_size)
        batcher = build_batcher(cfg, spec["manifest"], spec.get("noise_list"), None, shuffle=False,
                                snr=spec.get("snr"), clean_only=spec.get("clean_only", False))
        alignments, rows = decode_condition(trainer, batcher)
        summaries[name] = summarize(alignments).as_dict()
        per_condition[name] = rows
        logger.info(f"[Evaluate] {name}: WER={summaries[name]['WER']:.3f}%")

    report = format_report(summaries)
    report_path = os.path.join(report_dir, "report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report)
    write_utterance_tsv(os.path.join(report_dir, "utterances.tsv"), per_condition)
    return create_result({"conditions": summaries, "report": report, "report_path": report_path,
                          "checkpoint": checkpoint})


def format_sweep_report(cells: Sequence[Dict[str, Any]]) -> str:
    conditions: List[str] = []
    for cell in cells:
        for name in cell.get("conditions", {}):
            if name not in conditions:
                conditions.append(name)
    lines = [f"{'n':<4}{'epsilon':<22}" + "".join(f"{c:>16}" for c in conditions)]
    for cell in cells:
        eps = "[" + ", ".join(f"{e:g}" for e in cell["epsilons"]) + "]"
        row = f"{len(cell['epsilons']):<4}{eps:<22}"
        if cell["status"] != "success":
            row += f"  error: {cell['error']}"
        else:
            row += "".join(f"{cell['conditions'][c]['WER']:>16.3f}" for c in conditions)
        lines.append(row)
    return "\n".join(lines) + "\n"


def sweep(cfg: RunConfig, grid: Sequence[Sequence[float]] = EPSILON_GRID,
          out_dir: Optional[str] = None) -> Dict[str, Any]:
    """Train and evaluate one model per epsilon set; a failing cell is reported, not raised."""
    if not grid:
        raise ConfigError("sweep grid is empty")
    out_dir = ensure_dir(out_dir or os.path.join(cfg.paths.run_dir, "sweep"))
    cells = []
    for i, epsilons in enumerate(grid):
        cell_dir = os.path.join(out_dir, f"cell_{i}")
        try:
            cell_cfg = cfg.with_epsilons(epsilons)
            cell_cfg = cell_cfg.model_copy(update={"paths": cell_cfg.paths.model_copy(
                update={"run_dir": cell_dir, "checkpoint": "", "report": cell_dir})})
            logger.info(f"[Sweep] cell {i}: n={len(epsilons)} epsilons={list(epsilons)}")
            trained = train(cell_cfg)
            if trained["status"] != "success":
                cells.append(create_error_result(trained.get("error", "training failed"),
                                                 epsilons=list(epsilons), cell=i))
                continue
            evaluated = evaluate(cell_cfg)
            cells.append(create_result({"epsilons": list(epsilons), "cell": i,
                                        "conditions": evaluated["conditions"],
                                        "best_val_loss": trained["best_val_loss"]}))
        except (McgAsrError, ValueError) as e:
            logger.error(f"[Sweep] cell {i} failed: {e}")
            cells.append(create_error_result(str(e), epsilons=list(epsilons), cell=i))

    report = format_sweep_report(cells)
    report_path = os.path.join(out_dir, "sweep.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report)
    ok = sum(1 for c in cells if c["status"] == "success")
    status = "success" if ok == len(cells) else ("partial_success" if ok else "error")
    return create_result({"cells": cells, "report": report, "report_path": report_path}, status=status)
