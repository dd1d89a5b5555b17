"""Shared plumbing: error types, deterministic seed derivation, worker caps."""

from __future__ import annotations

import os
import zlib

import numpy as np


class VkdetError(Exception):
    """Base class for pipeline errors."""


class MissingInputError(VkdetError):
    """A declared input file does not exist. CLI exit code 2."""

    def __init__(self, path: str):
        super().__init__(f"missing input file: {path}")
        self.path = str(path)


class FormatVersionError(VkdetError):
    """A file carries an unsupported format version. CLI exit code 3."""


class ConfigValueError(VkdetError):
    """A configuration key has an invalid value. CLI exit code 4."""

    def __init__(self, key: str, message: str):
        super().__init__(f"invalid config value for '{key}': {message}")
        self.key = key


def stable_u32(text: str) -> int:
    """Platform-stable 32-bit hash of a string (CRC32)."""
    return zlib.crc32(text.encode("utf-8")) & 0xFFFFFFFF


def derive_rng(seed: int, *tags: str | int) -> np.random.Generator:
    """Derive an independent RNG stream from the top-level seed.

    Every random draw in the pipeline flows from a single seed through this
    function; string tags are hashed so the derivation is reproducible across
    runs and platforms.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        entropy.append(stable_u32(tag) if isinstance(tag, str) else int(tag))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def stage_seed(seed: int, name: str) -> int:
    """Integer sub-seed for a named pipeline stage."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, stable_u32(name)])
    return int(ss.generate_state(1, np.uint64)[0])


def worker_count() -> int:
    """Worker cap from VKDET_THREADS (default 1; results never depend on it)."""
    raw = os.environ.get("VKDET_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigValueError("VKDET_THREADS", f"not an integer: {raw!r}") from exc
    if n < 1:
        raise ConfigValueError("VKDET_THREADS", "must be >= 1")
    return n
