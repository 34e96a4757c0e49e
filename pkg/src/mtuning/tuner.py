"""M-Tuning: learn a prompt context against closed classes plus open words.

The label set seen by the softmax is the group's closed classes followed by
the shared open words.  Training targets are always closed classes; the open
words only enlarge the normaliser.  The encoder and token table stay frozen.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, DataError, NumericError, Rng, cosine_matrix, log_softmax, softmax
from .encoder import (
    CLASS_POSITIONS,
    EmbeddingTable,
    PromptContext,
    TextEncoder,
    TokenTable,
    assemble_batch,
    context_grad,
)
from .lexicon import Vocabulary

SPLITS = ("train", "test-known", "test-unknown")
OPTIMIZERS = ("adamw", "sgd")


@dataclass(frozen=True)
class TuneConfig:
    L: int = 10
    class_position: str = "mid"
    # Divisor of raw cosines; 0.01 is CLIP's logit scale of 100.
    temperature: float = 0.01
    n_open: int = 20
    epochs: int = 30
    batch_size: int = 64
    init_std: float = 0.02
    learning_rate: float = 1e-5
    linear_decay: bool = True
    optimizer: str = "adamw"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    loss_reduction: str = "mean"
    shots_per_class: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        if self.class_position not in CLASS_POSITIONS:
            raise ConfigError(f"class_position must be one of {CLASS_POSITIONS}")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.n_open < 0:
            raise ConfigError("n_open must be >= 0")
        # epochs == 0 is allowed: it returns the initial context untouched.
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0 or not self.init_std > 0:
            raise ConfigError("learning_rate and init_std must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigError("loss_reduction must be 'mean' or 'sum'")
        if self.shots_per_class is not None and self.shots_per_class < 1:
            raise ConfigError("shots_per_class must be >= 1 or None for all data")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    def replace(self, **changes) -> "TuneConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        """Flat ``key = value`` document listing every field."""
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                s = "all"
            elif isinstance(v, bool):
                s = "true" if v else "false"
            else:
                s = repr(v) if isinstance(v, float) else str(v)
            lines.append(f"{f.name} = {s}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TuneConfig":
        raw = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value'")
            k, v = (p.strip() for p in line.split("=", 1))
            if k in raw:
                raise ConfigError(f"duplicate key {k!r}")
            raw[k] = v
        names = [f.name for f in dataclasses.fields(cls)]
        missing = [k for k in names if k not in raw]
        extra = [k for k in raw if k not in names]
        if missing or extra:
            raise ConfigError(f"tune config: missing {missing}, unknown {extra}")
        values = {}
        for f in dataclasses.fields(cls):
            v = raw[f.name]
            try:
                if f.name == "shots_per_class":
                    values[f.name] = None if v == "all" else int(v)
                elif isinstance(f.default, bool):
                    if v not in ("true", "false"):
                        raise ValueError(v)
                    values[f.name] = v == "true"
                elif isinstance(f.default, int):
                    values[f.name] = int(v)
                elif isinstance(f.default, float):
                    values[f.name] = float(v)
                else:
                    values[f.name] = v
            except ValueError:
                raise ConfigError(f"bad value for {f.name}: {v!r}") from None
        return cls(**values)


@dataclass
class Dataset:
    """Embeddings with closed-class labels and split tags.

    ``labels[id]`` is a closed-class index, or ``None`` for test-unknown
    samples.
    """

    embeddings: EmbeddingTable
    class_names: list[str]
    labels: dict[str, int | None]
    splits: dict[str, str]

    def __post_init__(self):
        n_d = len(self.class_names)
        if n_d < 1:
            raise DataError("dataset needs at least one closed class")
        for sid in self.embeddings.keys:
            if sid not in self.splits or sid not in self.labels:
                raise DataError(f"sample {sid!r} has no label/split entry")
            split, lab = self.splits[sid], self.labels[sid]
            if split not in SPLITS:
                raise DataError(f"sample {sid!r} has unknown split {split!r}")
            if split == "test-unknown":
                if lab is not None:
                    raise DataError(f"test-unknown sample {sid!r} carries a closed label")
            elif lab is None or not 0 <= lab < n_d:
                raise DataError(f"sample {sid!r} label {lab!r} outside [0, {n_d})")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def ids(self, split: str) -> list[str]:
        return [k for k in self.embeddings.keys if self.splits[k] == split]

    def arrays(self, split: str):
        """``(ids, X, y)`` for a split; ``y`` is -1 for unknown samples."""
        ids = self.ids(split)
        X = self.embeddings.lookup(ids)
        y = np.array([-1 if self.labels[i] is None else self.labels[i] for i in ids], dtype=np.int64)
        return ids, X, y


def text_embeddings(ctx: PromptContext, enc: TextEncoder, tokens: np.ndarray) -> np.ndarray:
    return enc.encode(assemble_batch(ctx, tokens))


def class_logits(ctx, enc, token_table: TokenTable, vocab_slice: Vocabulary, image_emb, T=1.0):
    """Cosine logits over ``vocab_slice`` (closed first, then open), divided by T."""
    tokens = token_table.lookup(vocab_slice.words())
    X = np.asarray(image_emb, dtype=np.float64)
    single = X.ndim == 1
    text = text_embeddings(ctx, enc, tokens)
    z = cosine_matrix(np.atleast_2d(X), text) / T
    return z[0] if single else z


def cross_entropy_loss(probdists, targets) -> float:
    """Mean negative log-probability of each row's target entry."""
    P = np.atleast_2d(np.asarray(probdists, dtype=np.float64))
    t = np.atleast_1d(np.asarray(targets))
    if P.shape[0] != t.shape[0]:
        raise DataError("one target per distribution required")
    if np.any(t < 0) or np.any(t >= P.shape[1]):
        raise DataError("target index out of range")
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(P[np.arange(len(t)), t])))


def loss_and_grad(ctx, enc, tokens, X, y, T=1.0, reduction="mean"):
    """Cross-entropy of a batch and its gradient with respect to ``ctx.vectors``.

    ``tokens`` are the class/open token vectors in label order, ``y`` holds
    local target indices into that order.
    """
    seqs = assemble_batch(ctx, tokens)
    E = enc.encode(seqs)
    if not np.all(np.isfinite(E)):
        raise NumericError("encoder produced non-finite text embeddings")
    ne = np.linalg.norm(E, axis=1, keepdims=True)
    nx = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(ne == 0) or np.any(nx == 0):
        raise NumericError("zero-norm embedding in cosine logits")
    Eh = E / ne
    Xh = X / nx
    with np.errstate(over="ignore"):
        logits = (Xh @ Eh.T) / T
    if not np.all(np.isfinite(logits)):
        raise NumericError(f"logits overflow at temperature {T}")
    logp = log_softmax(logits)
    rows = np.arange(len(y))
    scale = 1.0 / len(y) if reduction == "mean" else 1.0
    loss = -logp[rows, y].sum() * scale

    d_logits = np.exp(logp)
    d_logits[rows, y] -= 1.0
    d_cos = d_logits * (scale / T)
    d_Eh = d_cos.T @ Xh
    d_E = (d_Eh - Eh * np.sum(d_Eh * Eh, axis=1, keepdims=True)) / ne
    d_seqs = enc.backward(seqs, d_E)
    return float(loss), context_grad(ctx, d_seqs)


def init_context(config: TuneConfig, token_dim: int, group_index: int = 0) -> PromptContext:
    g = Rng(config.seed).stream("context-init", group_index)
    vecs = g.normal(0.0, config.init_std, size=(config.L, token_dim))
    return PromptContext(vecs, config.class_position, group_index)


class AdamW:
    """Adam with decoupled weight decay (the torch/Hugging Face convention)."""

    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay

    def step(self, params, grad, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        params *= 1.0 - lr * self.weight_decay
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad**2
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, shape, weight_decay=0.0):
        self.weight_decay = weight_decay

    def step(self, params, grad, lr):
        params -= lr * (grad + self.weight_decay * params)


def linear_lr(lr0: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return lr0
    return max(0.0, lr0 * (1.0 - step / total_steps))


@dataclass
class TuneResult:
    context: PromptContext
    initial: PromptContext
    loss_trace: list[float] = field(default_factory=list)
    steps: int = 0


def tune_group(X, y, config: TuneConfig, vocab_slice: Vocabulary, enc: TextEncoder,
               token_table: TokenTable, group_index: int = 0) -> TuneResult:
    """Optimise one group's context; nothing but the context is written.

    ``X`` holds the group's training embeddings and ``y`` their local class
    indices into ``vocab_slice.closed``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"group {group_index}: empty training slice")
    if len(y) != len(X):
        raise DataError("one label per training sample required")
    if np.any(y < 0) or np.any(y >= vocab_slice.n_closed):
        raise DataError(f"group {group_index}: training labels must index closed classes")
    tokens = token_table.lookup(vocab_slice.words())
    if tokens.shape[1] != enc.token_dim:
        raise DataError("token table dim does not match the encoder")

    ctx = init_context(config, enc.token_dim, group_index)
    result = TuneResult(context=ctx, initial=ctx.copy())
    n, bs = len(X), config.batch_size
    batches_per_epoch = math.ceil(n / bs)
    total = config.epochs * batches_per_epoch
    if config.optimizer == "adamw":
        opt = AdamW(ctx.vectors.shape, config.beta1, config.beta2, config.eps, config.weight_decay)
    else:
        opt = SGD(ctx.vectors.shape, config.weight_decay)
    shuffle = Rng(config.seed).stream("shuffle", group_index)

    step = 0
    for epoch in range(config.epochs):
        order = shuffle.permutation(n)
        running = 0.0
        for b in range(batches_per_epoch):
            idx = order[b * bs:(b + 1) * bs]
            loss, grad = loss_and_grad(ctx, enc, tokens, X[idx], y[idx],
                                       config.temperature, config.loss_reduction)
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise NumericError(
                    f"group {group_index}: non-finite loss/gradient at epoch {epoch}, step {step}")
            per_sample = loss if config.loss_reduction == "sum" else loss * len(idx)
            running += per_sample
            lr = linear_lr(config.learning_rate, step, total) if config.linear_decay else config.learning_rate
            opt.step(ctx.vectors, grad, lr)
            step += 1
        result.loss_trace.append(running / n)
    result.steps = step
    return result


def select_shots(labels, k: int, rng: np.random.Generator) -> np.ndarray:
    """Positions of ``min(k, available)`` samples per class, in original order."""
    if k is None or k <= 0:
        raise ConfigError("shots per class must be a positive integer")
    labels = np.asarray(labels)
    keep = []
    for c in np.unique(labels):
        pos = np.flatnonzero(labels == c)
        if len(pos) > k:
            pos = rng.choice(pos, size=k, replace=False)
        keep.append(pos)
    return np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)


def closed_open_probs(ctx, enc, token_table, vocab: Vocabulary, X, T=1.0) -> np.ndarray:
    """Softmax over closed classes followed by open words for each row of ``X``."""
    return softmax(class_logits(ctx, enc, token_table, vocab, np.atleast_2d(X), T))


def infer_flat(ctx, enc, token_table, vocab: Vocabulary, X, T=1.0, tau=0.0):
    """Single-prompt inference without any grouping.

    Returns ``(p_max, s_open, argmax, label)`` arrays; ``label`` is -1 where
    ``p_max < tau``.
    """
    P = closed_open_probs(ctx, enc, token_table, vocab, X, T)
    closed = P[:, :vocab.n_closed]
    p_max = closed.max(axis=1)
    s_open = P[:, vocab.n_closed:].sum(axis=1)
    arg = closed.argmax(axis=1)
    label = np.where(p_max >= tau, arg, -1)
    return p_max, s_open, arg, label
