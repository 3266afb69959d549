import os
from typing import Any, Dict, Iterable, List, Optional

import numpy as np


def create_result(data: Dict[str, Any], status: str = "success") -> Dict[str, Any]:
    """Create a standardized result record for one unit of work."""
    record = dict(data)
    record["status"] = status
    return record


def create_error_result(error: str, **context: Any) -> Dict[str, Any]:
    """Create a standardized error record."""
    return create_result({"error": error, **context}, status="error")


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, key...) so streams never depend on call order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def ensure_dir(path: str) -> str:
    """Create a directory (and parents) if needed and return it."""
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        from .errors import DataError
        raise DataError(f"cannot create output directory {path}: {exc}") from exc
    return path


def format_tokens(tokens: Iterable[int]) -> str:
    return " ".join(str(int(t)) for t in tokens)


def parse_tokens(text: str) -> List[int]:
    return [int(t) for t in text.split()]


def cleanup_temp_file(file_path: Optional[str]) -> None:
    """Remove a temporary file, ignoring errors."""
    try:
        if file_path and os.path.exists(file_path):
            os.remove(file_path)
    except OSError:
        pass  # Ignore cleanup errors
