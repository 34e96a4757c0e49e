"""Synthetic open-set benchmarks built from Gaussian clusters.

Every concept (known class, unknown class, lexicon word) is drawn from one
ambient distribution.  With ``n_topics > 0`` that distribution is a mixture:
a concept is a blend of a topic centre and its own offset, which gives the
lexicon semantic neighbourhoods the way related words cluster in a real
vocabulary.  Samples are concept means plus isotropic noise; tokens are the
concept mapped into token space plus token noise.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, Rng
from .encoder import EmbeddingTable, TokenTable
from .tuner import Dataset


@dataclass(frozen=True)
class SynthSpec:
    embed_dim: int = 32
    token_dim: int = 32
    n_known_classes: int = 10
    n_unknown_classes: int = 10
    train_per_class: int = 100
    test_per_class: int = 50
    cluster_mean_scale: float = 1.0
    within_class_std: float = 0.1
    token_noise_std: float | None = None  # None: 0.1 * within_class_std
    n_topics: int = 0
    topic_weight: float = 0.0
    lexicon_size: int = 500
    train_counts: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("embed_dim", "token_dim", "n_known_classes", "n_unknown_classes",
                     "train_per_class", "test_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lexicon_size < 0 or self.n_topics < 0:
            raise ConfigError("lexicon_size and n_topics must be >= 0")
        if not self.cluster_mean_scale > 0:
            raise ConfigError("cluster_mean_scale must be positive")
        if self.token_noise_std is None:
            object.__setattr__(self, "token_noise_std", 0.1 * self.within_class_std)
        if self.within_class_std < 0 or self.token_noise_std < 0:
            raise ConfigError("noise levels must be >= 0")
        if not 0.0 <= self.topic_weight < 1.0:
            raise ConfigError("topic_weight must lie in [0, 1)")
        if self.train_counts is not None:
            counts = tuple(int(c) for c in self.train_counts)
            if len(counts) != self.n_known_classes or min(counts) < 1:
                raise ConfigError("train_counts needs one positive count per known class")
            object.__setattr__(self, "train_counts", counts)

    def replace(self, **changes) -> "SynthSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["train_counts"] is not None:
            d["train_counts"] = list(d["train_counts"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown synth spec keys {sorted(unknown)}")
        d = dict(d)
        if d.get("train_counts") is not None:
            d["train_counts"] = tuple(d["train_counts"])
        return cls(**d)


NAMED_SPECS = {
    # CIFAR-style regime: few known classes, strong semantic overlap.
    "small-osr": SynthSpec(
        embed_dim=32, token_dim=32, n_known_classes=10, n_unknown_classes=10,
        train_per_class=100, test_per_class=50, within_class_std=0.3,
        n_topics=10, topic_weight=0.5, lexicon_size=500, seed=0,
    ),
    # ImageNet-style regime: many known classes, separable clusters.
    "large-osr": SynthSpec(
        embed_dim=64, token_dim=64, n_known_classes=100, n_unknown_classes=100,
        train_per_class=50, test_per_class=20, within_class_std=0.1,
        lexicon_size=2000, seed=0,
    ),
}


def named_spec(name: str, **overrides) -> SynthSpec:
    try:
        spec = NAMED_SPECS[name]
    except KeyError:
        raise ConfigError(f"unknown benchmark {name!r}; choose from {sorted(NAMED_SPECS)}") from None
    return spec.replace(**overrides) if overrides else spec


@dataclass
class SynthData:
    dataset: Dataset
    token_table: TokenTable
    lexicon: list[str]
    class_means: np.ndarray
    unknown_names: list[str]
    unknown_means: np.ndarray
    spec: SynthSpec


def _concepts(g, n, spec, centers):
    own = g.normal(0.0, spec.cluster_mean_scale, size=(n, spec.embed_dim))
    if spec.n_topics == 0:
        return own
    topic = g.integers(0, spec.n_topics, size=n)
    w = spec.topic_weight
    return np.sqrt(w) * centers[topic] + np.sqrt(1.0 - w) * own


def generate(spec: SynthSpec) -> SynthData:
    """Build a dataset, its token table and the lexicon, all from ``spec.seed``."""
    rng = Rng(spec.seed)
    g = rng.stream("synth-concepts")
    centers = g.normal(0.0, spec.cluster_mean_scale, size=(max(spec.n_topics, 1), spec.embed_dim))
    known = _concepts(g, spec.n_known_classes, spec, centers)
    unknown = _concepts(g, spec.n_unknown_classes, spec, centers)
    words = _concepts(g, spec.lexicon_size, spec, centers)

    known_names = [f"known_{i:04d}" for i in range(spec.n_known_classes)]
    unknown_names = [f"unknown_{i:04d}" for i in range(spec.n_unknown_classes)]
    word_names = [f"word_{i:05d}" for i in range(spec.lexicon_size)]

    s = rng.stream("synth-samples")
    ids, rows, labels, splits = [], [], {}, {}

    def emit(mean, count, label, split):
        pts = mean + s.normal(0.0, 1.0, size=(count, spec.embed_dim)) * spec.within_class_std
        for p in pts:
            sid = f"s{len(ids):07d}"
            ids.append(sid)
            rows.append(p)
            labels[sid] = label
            splits[sid] = split

    train_counts = spec.train_counts or (spec.train_per_class,) * spec.n_known_classes
    for c in range(spec.n_known_classes):
        emit(known[c], train_counts[c], c, "train")
    for c in range(spec.n_known_classes):
        emit(known[c], spec.test_per_class, c, "test-known")
    for u in range(spec.n_unknown_classes):
        emit(unknown[u], spec.test_per_class, None, "test-unknown")

    to_token = np.eye(spec.token_dim, spec.embed_dim)
    t = rng.stream("synth-tokens")
    concepts = np.vstack([known, unknown, words])
    tokens = concepts @ to_token.T + t.normal(0.0, 1.0, size=(len(concepts), spec.token_dim)) * spec.token_noise_std
    all_names = known_names + unknown_names + word_names

    dataset = Dataset(EmbeddingTable(ids, np.array(rows)), known_names, labels, splits)
    return SynthData(
        dataset=dataset,
        token_table=TokenTable(all_names, tokens),
        lexicon=all_names,
        class_means=known,
        unknown_names=unknown_names,
        unknown_means=unknown,
        spec=spec,
    )


def nearest_mean_oracle(X, class_means) -> np.ndarray:
    """Index of the nearest class mean (Euclidean) per row, lowest index on ties."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    M = np.asarray(class_means, dtype=np.float64)
    d2 = ((X[:, None, :] - M[None, :, :]) ** 2).sum(axis=-1)
    return d2.argmin(axis=1)
