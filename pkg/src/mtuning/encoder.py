"""Frozen text encoder, prompt contexts and keyed vector tables.

The text side maps a prompt -- ``L`` learnable context vectors with the class
token spliced in -- to an embedding.  The image side is a plain lookup into a
table of precomputed embeddings.

Any text encoder plugged in must provide its own backward pass; the tuner
never differentiates numerically.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, DataError, Rng

CLASS_POSITIONS = ("front", "mid", "end")


def class_slot(L: int, position: str) -> int:
    """Index of the class token inside a sequence of length ``L + 1``."""
    if position == "front":
        return 0
    if position == "mid":
        return L // 2
    if position == "end":
        return L
    raise ConfigError(f"class_position must be one of {CLASS_POSITIONS}, got {position!r}")


@dataclass
class PromptContext:
    """Learnable context vectors for one group's prompt."""

    vectors: np.ndarray  # (L, token_dim)
    class_position: str = "mid"
    group_index: int = 0

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1 or self.vectors.shape[1] < 1:
            raise ConfigError(f"context must be (L>=1, dim>=1), got {self.vectors.shape}")
        class_slot(self.L, self.class_position)
        if self.group_index < 0:
            raise ConfigError("group_index must be >= 0")

    @property
    def L(self) -> int:
        return self.vectors.shape[0]

    @property
    def token_dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def slot(self) -> int:
        return class_slot(self.L, self.class_position)

    def copy(self) -> "PromptContext":
        return PromptContext(self.vectors.copy(), self.class_position, self.group_index)

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.vectors).tobytes()).hexdigest()


def assemble_sequence(ctx: PromptContext, class_token) -> np.ndarray:
    """Splice ``class_token`` into the context at the configured slot.

    Returns an ``(L + 1, token_dim)`` array; context vectors keep their order.
    """
    tok = np.asarray(class_token, dtype=np.float64)
    if tok.shape != (ctx.token_dim,):
        raise DataError(f"class token has shape {tok.shape}, context dim is {ctx.token_dim}")
    return assemble_batch(ctx, tok[None, :])[0]


def assemble_batch(ctx: PromptContext, class_tokens: np.ndarray) -> np.ndarray:
    """Vectorised :func:`assemble_sequence` for ``(n, token_dim)`` tokens."""
    toks = np.asarray(class_tokens, dtype=np.float64)
    if toks.ndim != 2 or toks.shape[1] != ctx.token_dim:
        raise DataError(f"class tokens have shape {toks.shape}, context dim is {ctx.token_dim}")
    n, s = toks.shape[0], ctx.slot
    seqs = np.empty((n, ctx.L + 1, ctx.token_dim))
    seqs[:, :s] = ctx.vectors[:s]
    seqs[:, s] = toks
    seqs[:, s + 1:] = ctx.vectors[s:]
    return seqs


def context_grad(ctx: PromptContext, seq_grads: np.ndarray) -> np.ndarray:
    """Collapse per-token gradients of a batch of sequences onto the context.

    The class-token slot is dropped; the remaining slots are summed over the
    batch because every sequence shares the same context vectors.
    """
    g = seq_grads.sum(axis=0)
    return np.delete(g, ctx.slot, axis=0)


class TextEncoder:
    """Interface for frozen text encoders.

    ``encode`` maps ``(..., S, token_dim)`` sequences to ``(..., output_dim)``
    embeddings; ``backward`` returns the gradient of ``<upstream, encode(seqs)>``
    with respect to every sequence entry.
    """

    token_dim: int
    output_dim: int

    def encode(self, seqs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, seqs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def checksum(self) -> str:
        raise NotImplementedError

    def _check(self, seqs, upstream=None):
        seqs = np.asarray(seqs, dtype=np.float64)
        if seqs.ndim < 2 or seqs.shape[-2] == 0:
            raise DataError("cannot encode an empty sequence")
        if seqs.shape[-1] != self.token_dim:
            raise DataError(f"token dim {seqs.shape[-1]} != encoder token dim {self.token_dim}")
        if upstream is None:
            return seqs
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != seqs.shape[:-2] + (self.output_dim,):
            raise DataError(
                f"upstream gradient shape {upstream.shape} does not match "
                f"{seqs.shape[:-2] + (self.output_dim,)}"
            )
        return seqs, upstream


@dataclass(frozen=True)
class FrozenEncoder(TextEncoder):
    """Mean-pool, affine, tanh, affine.

    ``out = W2 @ tanh(W1 @ mean(seq) + b1) + b2``.  Parameters are read-only
    arrays; use :meth:`from_seed` for the default construction.
    """

    W1: np.ndarray  # (hidden, token_dim)
    b1: np.ndarray
    W2: np.ndarray  # (output_dim, hidden)
    b2: np.ndarray
    seed: int | None = None
    _digest: str = field(init=False, repr=False, compare=False, default="")

    def __post_init__(self):
        params = {}
        for name in ("W1", "b1", "W2", "b2"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            arr.flags.writeable = False
            params[name] = arr
            object.__setattr__(self, name, arr)
        h, t = params["W1"].shape
        if params["b1"].shape != (h,) or params["W2"].shape[1] != h:
            raise ConfigError("inconsistent encoder parameter shapes")
        if params["b2"].shape != (params["W2"].shape[0],):
            raise ConfigError("inconsistent encoder parameter shapes")
        object.__setattr__(self, "_digest", self._compute_digest())

    @classmethod
    def from_seed(
        cls,
        token_dim: int,
        output_dim: int,
        seed: int,
        hidden_dim: int | None = None,
        input_gain: float = 1.0,
        weight_noise: float = 0.1,
        bias_std: float = 0.01,
    ) -> "FrozenEncoder":
        """Residual-style random encoder.

        Each weight matrix is a rectangular identity plus Gaussian noise of
        relative size ``weight_noise``, so bare tokens that live near an image
        cluster also encode near it.  ``input_gain`` scales the pooled input
        and with it how far into the tanh nonlinearity typical inputs reach.
        """
        if token_dim < 1 or output_dim < 1:
            raise ConfigError("encoder dimensions must be positive")
        hidden = output_dim if hidden_dim is None else hidden_dim
        g = Rng(seed).stream("encoder")
        W1 = input_gain * (np.eye(hidden, token_dim)
                           + weight_noise * g.standard_normal((hidden, token_dim)) / np.sqrt(token_dim))
        b1 = bias_std * g.standard_normal(hidden)
        W2 = (np.eye(output_dim, hidden)
              + weight_noise * g.standard_normal((output_dim, hidden)) / np.sqrt(hidden)) / input_gain
        b2 = bias_std * g.standard_normal(output_dim)
        return cls(W1, b1, W2, b2, seed=seed)

    @property
    def token_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def output_dim(self) -> int:
        return self.W2.shape[0]

    def _forward(self, seqs):
        pooled = seqs.mean(axis=-2)
        act = np.tanh(pooled @ self.W1.T + self.b1)
        return act

    def encode(self, seqs) -> np.ndarray:
        seqs = self._check(seqs)
        return self._forward(seqs) @ self.W2.T + self.b2

    def backward(self, seqs, upstream) -> np.ndarray:
        seqs, upstream = self._check(seqs, upstream)
        act = self._forward(seqs)
        d_pre = (upstream @ self.W2) * (1.0 - act**2)
        d_pooled = d_pre @ self.W1 / seqs.shape[-2]
        return np.broadcast_to(d_pooled[..., None, :], seqs.shape).copy()

    def _compute_digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.W1, self.b1, self.W2, self.b2):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def checksum(self) -> str:
        """SHA-256 of the current parameter bytes (recomputed on each call)."""
        return self._compute_digest()

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def encode_text(enc: TextEncoder, seq) -> np.ndarray:
    return enc.encode(np.asarray(seq, dtype=np.float64))


def encode_text_backward(enc: TextEncoder, seq, upstream_grad) -> np.ndarray:
    return enc.backward(np.asarray(seq, dtype=np.float64), upstream_grad)


class KeyedVectors:
    """An ordered mapping of string keys to fixed-dimension float64 vectors."""

    kind = "vectors"

    def __init__(self, keys, vectors):
        keys = [str(k) for k in keys]
        arr = np.array(vectors, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise DataError(f"{self.kind} must be 2-d, got shape {arr.shape}")
        if len(keys) != arr.shape[0]:
            raise DataError(f"{len(keys)} keys for {arr.shape[0]} rows")
        if arr.shape[1] < 1:
            raise DataError("vector dimension must be >= 1")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{self.kind} contain non-finite values")
        index = {}
        for i, k in enumerate(keys):
            if k in index:
                raise DataError(f"duplicate key {k!r} in {self.kind}")
            index[k] = i
        arr.flags.writeable = False
        self.keys = keys
        self.vectors = arr
        self._index = index

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.keys)

    def __contains__(self, key):
        return key in self._index

    def __getitem__(self, key) -> np.ndarray:
        try:
            return self.vectors[self._index[key]]
        except KeyError:
            raise DataError(f"unknown key {key!r} in {self.kind}") from None

    def lookup(self, keys) -> np.ndarray:
        try:
            rows = [self._index[k] for k in keys]
        except KeyError as exc:
            raise DataError(f"unknown key {exc.args[0]!r} in {self.kind}") from None
        return self.vectors[rows]

    def subset(self, keys):
        return type(self)(list(keys), self.lookup(keys))

    def __eq__(self, other):
        return (type(self) is type(other) and self.keys == other.keys
                and np.array_equal(self.vectors, other.vectors))


class EmbeddingTable(KeyedVectors):
    kind = "embedding table"


class TokenTable(KeyedVectors):
    kind = "token table"


def encode_image(table: EmbeddingTable, sample_id) -> np.ndarray:
    return table[sample_id]
