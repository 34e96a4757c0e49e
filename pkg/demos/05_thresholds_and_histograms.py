# Thresholding the optimal group's p_max and looking at where known and
# unknown samples land.

# %%
import numpy as np

from mtuning.ctt import relabel
from mtuning.io.experiment import load_data, named_manifest, run_experiment
from mtuning.metrics import macro_f1

res = run_experiment(named_manifest("small-osr"), write=False)
r = res.report

# %% text histogram of closed-set maximum probabilities
edges = r.histogram["edges"]
top = max(max(c) for c in r.histogram["counts"].values())
bar = lambda n: "#" * round(40 * n / top) if n else ""
for i in range(len(edges) - 1):
    k, u = r.histogram["counts"]["known"][i], r.histogram["counts"]["unknown"][i]
    print(f"[{edges[i]:.2f}, {edges[i + 1]:.2f})  known {k:4d} {bar(k):40s} unknown {u:4d} {bar(u)}")

# %% mF1 across the threshold sweep, plus a wider range via relabel
print(r.mf1_by_tau)
ds = load_data(res.manifest).dataset
truth = [-1 if ds.labels[rec.sample_id] is None else ds.labels[rec.sample_id] for rec in res.records]
for tau in np.linspace(0.1, 0.99, 7):
    pred = [relabel(rec, float(tau)).label for rec in res.records]
    print(f"tau {tau:.2f}  mF1 {macro_f1(truth, pred, ds.n_classes):.4f}")
