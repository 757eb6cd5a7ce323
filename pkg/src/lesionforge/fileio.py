"""Atomic file writes: no command leaves a partial artifact on failure."""

import os
from pathlib import Path


def atomic_write_bytes(path, blob):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(blob)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink(missing_ok=True)


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))
