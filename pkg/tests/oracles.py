"""Slow, obviously-correct reference implementations used only by tests."""


def pairwise_auroc(known, unknown):
    """Fraction of (known, unknown) pairs where the unknown scores higher; ties count half."""
    total = 0.0
    for k in known:
        for u in unknown:
            total += 1.0 if u > k else 0.5 if u == k else 0.0
    return total / (len(known) * len(unknown))


def f1_from_counts(tp, fp, fn):
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def macro_f1_loop(truth, pred, classes):
    scores = []
    for c in classes:
        tp = sum(1 for t, p in zip(truth, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(truth, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(truth, pred) if t == c and p != c)
        scores.append(f1_from_counts(tp, fp, fn))
    return sum(scores) / len(scores)
