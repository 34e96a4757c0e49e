"""Combinatorial Tuning and Testing.

Closed classes are split into groups of at most ``n_c`` classes, each group
gets its own independently tuned prompt, and at inference every sample is
scored by every group.  The group whose prompt gives the largest closed-set
probability wins; its distribution supplies the open score and the label.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import ConfigError, DataError, Rng, cosine_matrix, softmax
from .encoder import PromptContext, TextEncoder, TokenTable
from .lexicon import Vocabulary
from .tuner import Dataset, TuneConfig, TuneResult, class_logits, select_shots, tune_group

STRATEGIES = ("id_order", "random", "semantic")
UNKNOWN = -1


@dataclass(frozen=True)
class GroupSpec:
    groups: tuple[tuple[int, ...], ...]
    n_c: int
    strategy: str = "id_order"
    seed: int = 0

    def __post_init__(self):
        groups = tuple(tuple(int(c) for c in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        check_partition(groups, self.n_c)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_classes(self) -> int:
        return sum(len(g) for g in self.groups)

    def group_of(self) -> np.ndarray:
        """Global class index -> group index."""
        out = np.empty(self.n_classes, dtype=np.int64)
        for k, g in enumerate(self.groups):
            out[list(g)] = k
        return out

    def to_text(self) -> str:
        head = f"# strategy={self.strategy} n_c={self.n_c} seed={self.seed} groups={self.n_groups}\n"
        return head + "".join(" ".join(map(str, g)) + "\n" for g in self.groups)

    @classmethod
    def from_text(cls, text: str) -> "GroupSpec":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise DataError("group spec is missing its header line")
        meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
        try:
            groups = [tuple(int(x) for x in ln.split()) for ln in lines[1:] if ln.strip()]
            spec = cls(tuple(groups), int(meta["n_c"]), meta["strategy"], int(meta["seed"]))
        except (KeyError, ValueError) as exc:
            raise DataError(f"malformed group spec: {exc}") from exc
        if spec.n_groups != int(meta.get("groups", spec.n_groups)):
            raise DataError("group count in header disagrees with body")
        return spec


def check_partition(groups, n_c: int):
    """Raise unless ``groups`` satisfy the grouping rule for ``n_c``."""
    if n_c < 1:
        raise ConfigError("n_c must be >= 1")
    if not groups or any(len(g) == 0 for g in groups):
        raise DataError("groups must be non-empty")
    flat = [c for g in groups for c in g]
    n_d = len(flat)
    if sorted(flat) != list(range(n_d)):
        raise DataError("groups do not partition the class indices")
    G = len(groups)
    if not (G - 1) * n_c < n_d <= G * n_c:
        raise DataError(f"{G} groups inconsistent with n_d={n_d}, n_c={n_c}")
    if any(len(g) != n_c for g in groups[:-1]) or len(groups[-1]) > n_c:
        raise DataError("all groups but the last must hold exactly n_c classes")


def make_groups(n_d: int, n_c: int, ordering=None, strategy="id_order", seed=0) -> GroupSpec:
    """Cut ``ordering`` into consecutive segments of ``n_c`` classes."""
    if n_d < 1 or n_c < 1:
        raise ConfigError("n_d and n_c must be >= 1")
    order = np.arange(n_d) if ordering is None else np.asarray(ordering, dtype=np.int64)
    if order.shape != (n_d,) or not np.array_equal(np.sort(order), np.arange(n_d)):
        raise ConfigError("ordering must be a permutation of range(n_d)")
    groups = tuple(tuple(order[i:i + n_c].tolist()) for i in range(0, n_d, n_c))
    return GroupSpec(groups, n_c, strategy, seed)


def semantic_chain(embs) -> np.ndarray:
    """Greedy nearest-neighbour chain starting at class 0 (cosine, lowest index on ties)."""
    S = cosine_matrix(embs, embs)
    n = S.shape[0]
    visited = np.zeros(n, dtype=bool)
    order = [0]
    visited[0] = True
    for _ in range(n - 1):
        row = np.where(visited, -np.inf, S[order[-1]])
        nxt = int(np.argmax(row))
        order.append(nxt)
        visited[nxt] = True
    return np.array(order, dtype=np.int64)


def order_classes(strategy: str, class_names, class_text_embs=None, rng=None) -> np.ndarray:
    names = list(class_names)
    if len(set(names)) != len(names):
        raise DataError("class names must be unique")
    if strategy == "id_order":
        return np.array(sorted(range(len(names)), key=lambda i: names[i]), dtype=np.int64)
    if strategy == "random":
        if rng is None:
            raise ConfigError("random ordering requires an rng")
        return rng.permutation(len(names)).astype(np.int64)
    if strategy == "semantic":
        if class_text_embs is None or len(class_text_embs) != len(names):
            raise DataError("semantic ordering needs a text embedding for every class")
        return semantic_chain(np.asarray(class_text_embs, dtype=np.float64))
    raise ConfigError(f"strategy must be one of {STRATEGIES}")


def bare_class_embeddings(enc: TextEncoder, token_table: TokenTable, class_names) -> np.ndarray:
    """Encoder output for each class token on its own, without any context."""
    toks = token_table.lookup(class_names)
    return enc.encode(toks[:, None, :])


def build_groups(class_names, n_c, strategy, seed, enc=None, token_table=None) -> GroupSpec:
    embs = None
    if strategy == "semantic":
        embs = bare_class_embeddings(enc, token_table, class_names)
    order = order_classes(strategy, class_names, embs, Rng(seed).stream("group-order"))
    return make_groups(len(class_names), n_c, order, strategy, seed)


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    p_max: tuple[float, ...]
    i_opt: int
    s_open: float
    msp_score: float
    argmax_label: int
    label: int
    tau_max: float

    @property
    def is_unknown(self) -> bool:
        return self.label == UNKNOWN


def select_optimal(dists, n_closed):
    """``(I_opt, p_max^{I_opt})`` for one sample.

    ``dists[k]`` is group k's distribution with ``n_closed[k]`` closed entries
    first.  Only closed entries count; ties go to the lowest group index.
    """
    if len(dists) == 0:
        raise ConfigError("select_optimal needs at least one group")
    p = [float(np.max(np.asarray(d)[:n])) for d, n in zip(dists, n_closed)]
    k = int(np.argmax(p))
    return k, p[k]


def open_score(dist, n_closed: int) -> float:
    """Probability mass outside the first ``n_closed`` (closed) entries."""
    d = np.asarray(dist, dtype=np.float64)
    if n_closed < 1 or n_closed > d.size:
        raise DataError("closed prefix length outside the distribution")
    return float(min(1.0, max(0.0, d[n_closed:].sum())))


def msp_known_score(dist, n_closed: int) -> float:
    d = np.asarray(dist, dtype=np.float64)
    if n_closed < 1 or n_closed > d.size:
        raise DataError("closed prefix length outside the distribution")
    return float(d[:n_closed].max())


def predict(sample_id, dists, groups, tau_max: float) -> PredictionRecord:
    """Threshold the optimal group's verdict for one sample.

    ``groups[k]`` lists the global class indices of group k, in the order used
    by ``dists[k]``.
    """
    if not 0.0 <= tau_max <= 1.0:
        raise ConfigError("tau_max must lie in [0, 1]")
    n_closed = [len(g) for g in groups]
    k, pm = select_optimal(dists, n_closed)
    d = np.asarray(dists[k], dtype=np.float64)
    arg = int(groups[k][int(np.argmax(d[:n_closed[k]]))])
    return PredictionRecord(
        sample_id=str(sample_id),
        p_max=tuple(float(np.max(np.asarray(x)[:n])) for x, n in zip(dists, n_closed)),
        i_opt=k,
        s_open=open_score(d, n_closed[k]),
        msp_score=pm,
        argmax_label=arg,
        label=arg if pm >= tau_max else UNKNOWN,
        tau_max=float(tau_max),
    )


def relabel(record: PredictionRecord, tau_max: float) -> PredictionRecord:
    """The same record thresholded at a different ``tau_max``."""
    if not 0.0 <= tau_max <= 1.0:
        raise ConfigError("tau_max must lie in [0, 1]")
    lab = record.argmax_label if record.msp_score >= tau_max else UNKNOWN
    return replace(record, label=lab, tau_max=float(tau_max))


@dataclass
class CTTModel:
    """Tuned group prompts plus everything inference needs."""

    groups: GroupSpec
    contexts: list[PromptContext]
    vocab: Vocabulary
    encoder: TextEncoder
    token_table: TokenTable
    temperature: float = 1.0
    traces: list[list[float]] = field(default_factory=list)

    def group_vocab(self, k: int) -> Vocabulary:
        return self.vocab.slice(self.groups.groups[k])

    def group_probabilities(self, X, k: int) -> np.ndarray:
        """``(n, N_g^k + N_O)`` distributions for group ``k``."""
        z = class_logits(self.contexts[k], self.encoder, self.token_table,
                         self.group_vocab(k), np.atleast_2d(X), self.temperature)
        return softmax(z)

    def infer(self, ids, X, tau_max: float = 0.0) -> list[PredictionRecord]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        per_group = [self.group_probabilities(X, k) for k in range(self.groups.n_groups)]
        return [predict(sid, [P[i] for P in per_group], self.groups.groups, tau_max)
                for i, sid in enumerate(ids)]


def tune_groups(dataset: Dataset, config: TuneConfig, groups: GroupSpec, vocab: Vocabulary,
                enc: TextEncoder, token_table: TokenTable, order=None) -> CTTModel:
    """Tune every group independently.

    ``order`` only changes the sequence in which groups are visited; each
    group draws from its own rng streams so results do not depend on it.
    """
    _, X, y = dataset.arrays("train")
    if config.shots_per_class is not None:
        keep = select_shots(y, config.shots_per_class, Rng(config.seed).stream("shots"))
        X, y = X[keep], y[keep]
    owner = groups.group_of()
    order = range(groups.n_groups) if order is None else list(order)
    if sorted(order) != list(range(groups.n_groups)):
        raise ConfigError("tuning order must be a permutation of the groups")
    results: dict[int, TuneResult] = {}
    for k in order:
        members = groups.groups[k]
        local = {c: j for j, c in enumerate(members)}
        mask = owner[y] == k
        yk = np.array([local[c] for c in y[mask]], dtype=np.int64)
        results[k] = tune_group(X[mask], yk, config, vocab.slice(members), enc, token_table, k)
    return CTTModel(
        groups=groups,
        contexts=[results[k].context for k in range(groups.n_groups)],
        vocab=vocab,
        encoder=enc,
        token_table=token_table,
        temperature=config.temperature,
        traces=[results[k].loss_trace for k in range(groups.n_groups)],
    )
