"""Open-set evaluation: AUROC, closed-set accuracy, macro-F1 and histograms."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import ConfigError, DataError

DEFAULT_TAUS = (0.90, 0.92, 0.94, 0.96, 0.98)
HIGHER_IS_UNKNOWN = "higher_is_unknown"
HIGHER_IS_KNOWN = "higher_is_known"


def auroc(known_scores, unknown_scores, orientation=HIGHER_IS_UNKNOWN) -> float:
    """Area under the ROC curve with unknown samples as the positive class.

    Computed from average ranks (Mann-Whitney U), so tied scores count half.
    """
    k = np.asarray(known_scores, dtype=np.float64).ravel()
    u = np.asarray(unknown_scores, dtype=np.float64).ravel()
    if k.size == 0 or u.size == 0:
        raise DataError("AUROC needs at least one known and one unknown score")
    if orientation == HIGHER_IS_KNOWN:
        k, u = -k, -u
    elif orientation != HIGHER_IS_UNKNOWN:
        raise ConfigError(f"unknown orientation {orientation!r}")
    ranks = rankdata(np.concatenate([k, u]))
    r_unknown = ranks[k.size:].sum()
    u_stat = r_unknown - u.size * (u.size + 1) / 2.0
    return float(u_stat / (k.size * u.size))


def closed_accuracy(predicted, truth) -> float:
    """Fraction of un-thresholded closed-set predictions equal to the truth."""
    p = np.asarray(predicted)
    t = np.asarray(truth)
    if p.shape != t.shape or p.size == 0:
        raise DataError("closed accuracy needs one ground-truth label per prediction")
    if np.any(t < 0):
        raise DataError("closed accuracy is only defined on samples with closed labels")
    return float(np.mean(p == t))


def per_class_f1(truth, pred, n_known: int) -> np.ndarray:
    """F1 for classes ``0..n_known-1`` and, last, the unknown class (-1 in inputs)."""
    t = np.asarray(truth, dtype=np.int64).copy()
    p = np.asarray(pred, dtype=np.int64).copy()
    t[t < 0] = n_known
    p[p < 0] = n_known
    n = n_known + 1
    tp = np.bincount(t[t == p], minlength=n).astype(float)
    fp = np.bincount(p, minlength=n) - tp
    fn = np.bincount(t, minlength=n) - tp
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros(n), where=denom > 0)


def macro_f1(truth, pred, n_known: int, include_absent=True) -> float:
    """Unweighted mean F1 over the known classes plus one unknown class.

    A class that never occurs in truth or prediction scores 0 and still counts
    unless ``include_absent`` is false.
    """
    f1 = per_class_f1(truth, pred, n_known)
    if include_absent:
        return float(f1.mean())
    t = np.asarray(truth).copy()
    p = np.asarray(pred).copy()
    t[t < 0] = n_known
    p[p < 0] = n_known
    present = np.zeros(n_known + 1, dtype=bool)
    present[np.unique(np.concatenate([t, p]))] = True
    return float(f1[present].mean())


def threshold_labels(p_max, argmax_labels, tau: float) -> np.ndarray:
    if not 0.0 <= tau <= 1.0:
        raise ConfigError("tau must lie in [0, 1]")
    return np.where(np.asarray(p_max) >= tau, np.asarray(argmax_labels), -1)


def histogram(closed_max_probs, split_tags, bins: int = 20) -> dict:
    """Counts per uniform bin over [0, 1] for each split tag (last bin closed)."""
    p = np.asarray(closed_max_probs, dtype=np.float64)
    tags = np.asarray(split_tags)
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    if p.shape != tags.shape:
        raise DataError("one split tag per probability required")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise DataError("probabilities must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = {}
    for tag in sorted(set(tags.tolist())):
        c, _ = np.histogram(p[tags == tag], bins=edges)
        counts[str(tag)] = c.astype(int).tolist()
    return {"edges": edges.tolist(), "counts": counts}


def histogram_csv(hist: dict) -> str:
    edges = hist["edges"]
    known = hist["counts"].get("known", [0] * (len(edges) - 1))
    unknown = hist["counts"].get("unknown", [0] * (len(edges) - 1))
    lines = ["bin_low,bin_high,known_count,unknown_count"]
    for i in range(len(edges) - 1):
        lines.append(f"{edges[i]:.6f},{edges[i + 1]:.6f},{known[i]},{unknown[i]}")
    return "\n".join(lines) + "\n"


@dataclass
class MetricsReport:
    auroc_open_score: float | None
    auroc_open_score_degenerate: bool
    auroc_msp: float
    closed_accuracy: float
    mf1_by_tau: dict[str, float]
    histogram: dict
    counts: dict[str, int]
    dataset_fingerprint: str = ""
    fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        try:
            return cls(**json.loads(text))
        except (TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed metrics report: {exc}") from exc


def evaluate(records, truth: dict, n_known: int, taus=DEFAULT_TAUS, bins: int = 20,
             n_open: int | None = None) -> MetricsReport:
    """Build a report from prediction records and ground truth.

    ``truth`` maps sample id to a closed class index or ``None`` (unknown).
    With no open words the open score is identically zero, so its AUROC is
    flagged as degenerate and left empty.
    """
    if not records:
        raise DataError("no prediction records to evaluate")
    ids = [r.sample_id for r in records]
    missing = [i for i in ids if i not in truth]
    if missing:
        raise DataError(f"no ground truth for {len(missing)} samples, e.g. {missing[0]!r}")
    t = np.array([-1 if truth[i] is None else truth[i] for i in ids], dtype=np.int64)
    known = t >= 0
    s_open = np.array([r.s_open for r in records])
    msp = np.array([r.msp_score for r in records])
    arg = np.array([r.argmax_label for r in records], dtype=np.int64)

    degenerate = n_open == 0
    a_open = None if degenerate else auroc(s_open[known], s_open[~known], HIGHER_IS_UNKNOWN)
    mf1 = {f"{tau:.2f}": macro_f1(t, threshold_labels(msp, arg, tau), n_known) for tau in taus}
    tags = np.where(known, "known", "unknown")
    return MetricsReport(
        auroc_open_score=a_open,
        auroc_open_score_degenerate=bool(degenerate),
        auroc_msp=auroc(msp[known], msp[~known], HIGHER_IS_KNOWN),
        closed_accuracy=closed_accuracy(arg[known], t[known]),
        mf1_by_tau=mf1,
        histogram=histogram(msp, tags, bins),
        counts={"test-known": int(known.sum()), "test-unknown": int((~known).sum())},
    )


def compare_reports(a: MetricsReport, b: MetricsReport) -> dict:
    """Signed deltas ``b - a`` for every scalar metric, next to both values."""
    if a.dataset_fingerprint != b.dataset_fingerprint:
        raise DataError("reports were computed on different datasets")

    def delta(x, y):
        return None if x is None or y is None else y - x

    def scalars(r):
        return {
            "auroc_open_score": r.auroc_open_score,
            "auroc_msp": r.auroc_msp,
            "best_auroc": _best_auroc(r),
            "closed_accuracy": r.closed_accuracy,
        } | {f"mf1@{k}": v for k, v in r.mf1_by_tau.items()}

    va, vb = scalars(a), scalars(b)
    keys = sorted(set(va) | set(vb))
    return {
        "a": {k: va.get(k) for k in keys},
        "b": {k: vb.get(k) for k in keys},
        "delta": {k: delta(va.get(k), vb.get(k)) for k in keys},
        "dataset_fingerprint": a.dataset_fingerprint,
    }


def _best_auroc(r: MetricsReport) -> float:
    """The open-score AUROC when defined, otherwise the MSP AUROC."""
    return r.auroc_msp if r.auroc_open_score is None else r.auroc_open_score
