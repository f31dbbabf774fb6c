"""Atomic file writes: reruns replace outputs only once fully written."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Callable


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.parent / (path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def atomic_save(path: str | Path, save: Callable[[Path], None]) -> None:
    """Run ``save`` against a temp path, then rename over the target."""
    path = Path(path)
    tmp = path.parent / (path.name + ".tmp")
    save(tmp)
    os.replace(tmp, path)
