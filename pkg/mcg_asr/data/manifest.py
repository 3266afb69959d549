"""
Plain-text manifests.

Utterance manifests hold one record per line: ``id path tok tok ...``.
Noise lists hold ``id path``. Relative paths resolve against the manifest's
own directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

from ..errors import DataError
from ..utils import format_tokens, parse_tokens


@dataclass
class UtteranceRecord:
    id: str
    path: str
    tokens: List[int]
    noise_ref: Optional[str] = None


@dataclass
class NoiseRecord:
    id: str
    path: str


def _resolve(base: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))


def _relative(base: str, path: str) -> str:
    try:
        return os.path.relpath(path, base)
    except ValueError:
        return path


def read_manifest(path: str, vocab_size: Optional[int] = None) -> List[UtteranceRecord]:
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) < 3:
                raise DataError(f"{path}:{lineno}: expected 'id path tokens...', got {line.strip()!r}")
            try:
                tokens = parse_tokens(" ".join(fields[2:]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: token ids must be integers") from exc
            if vocab_size is not None and any(t < 1 or t > vocab_size for t in tokens):
                raise DataError(f"{path}:{lineno}: token ids must lie in 1..{vocab_size}, got {tokens}")
            records.append(UtteranceRecord(fields[0], _resolve(base, fields[1]), tokens))
    return records


def write_manifest(path: str, records: Sequence[UtteranceRecord]) -> None:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if not rec.tokens:
                raise DataError(f"utterance {rec.id} has an empty transcript")
            fh.write(f"{rec.id} {_relative(base, rec.path)} {format_tokens(rec.tokens)}\n")


def read_noise_list(path: str) -> List[NoiseRecord]:
    if not os.path.exists(path):
        raise DataError(f"noise list not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise DataError(f"{path}:{lineno}: expected 'id path'")
            records.append(NoiseRecord(fields[0], _resolve(base, fields[1])))
    return records


def write_noise_list(path: str, records: Sequence[NoiseRecord]) -> None:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"{rec.id} {_relative(base, rec.path)}\n")
