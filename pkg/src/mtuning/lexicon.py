"""Open-word pool: loading, label normalisation, filtering and sampling."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .core import ConfigError, DataError

_SEPARATORS = re.compile(r"[\s_\-]+")


def normalize_label(name: str) -> str:
    """Lowercase and collapse whitespace/underscore/hyphen runs to ``_``.

    >>> normalize_label("Great White  Shark")
    'great_white_shark'
    """
    if not isinstance(name, str) or not name.strip():
        raise ConfigError("cannot normalize an empty label")
    return _SEPARATORS.sub("_", name.strip().lower()).strip("_")


def _unique_normalized(words):
    seen = set()
    out = []
    for w in words:
        n = normalize_label(w)
        if n not in seen:
            seen.add(n)
            out.append(n)
    return out


def load_lexicon(path) -> list[str]:
    """Read a one-lemma-per-line UTF-8 file; ``#`` lines are comments."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read lexicon {path}: {exc}") from exc
    lines = [ln.strip() for ln in text.splitlines()]
    words = _unique_normalized(ln for ln in lines if ln and not ln.startswith("#"))
    if not words:
        raise DataError(f"lexicon {path} is empty")
    return words


def filter_pool(lexicon, exclude) -> list[str]:
    banned = {normalize_label(w) for w in exclude}
    return [w for w in _unique_normalized(lexicon) if w not in banned]


def sample_open_words(lexicon, closed_names, test_names=(), n_open=20, rng=None) -> list[str]:
    """Draw ``n_open`` distinct open words, uniformly without replacement.

    Every closed and test class name is removed from the pool before sampling.
    ``test_names`` should only be passed by an evaluation harness; the tuning
    side of the engine knows nothing about the unknown classes.
    """
    if n_open < 0:
        raise ConfigError(f"number of open words must be >= 0, got {n_open}")
    pool = filter_pool(lexicon, list(closed_names) + list(test_names))
    if n_open > len(pool):
        raise DataError(f"open-word pool has {len(pool)} words after filtering, {n_open} requested")
    if n_open == 0:
        return []
    if rng is None:
        raise ConfigError("sampling open words requires an rng")
    picks = rng.choice(len(pool), size=n_open, replace=False)
    return [pool[i] for i in picks]


@dataclass(frozen=True)
class Vocabulary:
    """Closed class names followed by open words, both normalised."""

    closed: tuple[str, ...]
    open: tuple[str, ...] = ()

    def __post_init__(self):
        closed = tuple(normalize_label(c) for c in self.closed)
        opened = tuple(normalize_label(o) for o in self.open)
        if not closed:
            raise ConfigError("vocabulary needs at least one closed class")
        if len(set(closed)) != len(closed):
            raise DataError("duplicate closed class names")
        if len(set(opened)) != len(opened):
            raise DataError("duplicate open words")
        overlap = set(closed) & set(opened)
        if overlap:
            raise DataError(f"open words overlap closed classes: {sorted(overlap)[:5]}")
        object.__setattr__(self, "closed", closed)
        object.__setattr__(self, "open", opened)

    @property
    def n_closed(self) -> int:
        return len(self.closed)

    @property
    def n_open(self) -> int:
        return len(self.open)

    def words(self) -> list[str]:
        return list(self.closed) + list(self.open)

    def slice(self, class_indices) -> "Vocabulary":
        """The closed classes at ``class_indices`` (in that order) plus every open word."""
        return Vocabulary(tuple(self.closed[i] for i in class_indices), self.open)

