"""Small shared helpers: identifiers, seeding, rounding, atomic writes."""

from __future__ import annotations

import math
import os
import tempfile
import zlib
from contextlib import contextmanager
from pathlib import Path

import numpy as np


def parse_id(token: str):
    """Decimal tokens become ``int``; anything else stays a stripped ``str``."""
    token = token.strip()
    if token.isdigit() or (token[:1] == "-" and token[1:].isdigit()):
        return int(token)
    return token


def id_key(value):
    """Total order over mixed int/str identifiers (ints first, numerically)."""
    if isinstance(value, (int, np.integer)):
        return (0, int(value), "")
    return (1, 0, str(value))


def stable_hash(value) -> int:
    return zlib.crc32(f"{type(value).__name__}:{value}".encode("utf-8"))


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Generator that depends only on ``seed`` and ``keys``, never on call order."""
    entropy = [int(seed) & 0xFFFFFFFF] + [stable_hash(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def round_half_up(x: float) -> int:
    # guard against 0.8 * 10 = 7.999999999 style artefacts
    return int(math.floor(x + 0.5 + 1e-9))


@contextmanager
def atomic_write(path, mode="w", encoding="utf-8"):
    """Write to a temp file in the target directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        kwargs = {} if "b" in mode else {"encoding": encoding, "newline": ""}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
