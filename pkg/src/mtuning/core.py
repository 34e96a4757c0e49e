"""Numeric primitives shared by every stage of the engine.

Everything here works on float64 numpy arrays.  Vectorised variants operate
along the last axis so the same functions serve single vectors and batches.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

DEFAULT_TEMPERATURE = 1.0


class MTuningError(Exception):
    """Base class for engine errors."""


class ConfigError(MTuningError, ValueError):
    """Invalid configuration or arguments."""


class DataError(MTuningError, ValueError):
    """Malformed or inconsistent input data."""


class NumericError(MTuningError, ArithmeticError):
    """A computation produced non-finite values."""


def as_vector(values, name="vector"):
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DataError(f"{name} must be a non-empty 1-d sequence, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DataError(f"{name} has non-finite entries")
    return v


def cosine(u, v) -> float:
    """Cosine similarity of two equal-length, nonzero vectors."""
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise DataError(f"dimension mismatch: {u.size} vs {v.size}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DataError("cosine of a zero-norm vector is undefined")
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosines between the rows of ``a`` (n, d) and ``b`` (m, d)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise DataError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DataError("cosine of a zero-norm vector is undefined")
    return np.clip((a / na) @ (b / nb).T, -1.0, 1.0)


def _check_logits(logits, T):
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise ConfigError("softmax of empty logits")
    if not T > 0:
        raise ConfigError(f"temperature must be positive, got {T}")
    if not np.all(np.isfinite(z)):
        raise DataError("logits must be finite")
    return z / T


def log_softmax(logits, T: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Log-probabilities of ``softmax(logits / T)`` along the last axis."""
    z = _check_logits(logits, T)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits, T: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Temperature softmax along the last axis, max-shifted for stability."""
    z = _check_logits(logits, T)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class Rng:
    """Seeded generator factory with independent sub-streams.

    Streams are keyed by ``(tag, index)`` so that, for example, the shuffling
    of group 3 never depends on how many draws group 2 consumed.  The bit
    generator is numpy's PCG64 seeded through ``SeedSequence``; tags are
    hashed with CRC-32 so keys are stable across processes and platforms.
    """

    seed: int
    algorithm: str = "PCG64"

    def __post_init__(self):
        if self.algorithm != "PCG64":
            raise ConfigError(f"unsupported rng algorithm {self.algorithm!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def stream(self, tag: str, index: int = 0) -> np.random.Generator:
        key = (zlib.crc32(tag.encode("utf-8")), int(index))
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=key)
        return np.random.Generator(np.random.PCG64(ss))
