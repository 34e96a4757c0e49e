# The same small-benchmark run, step by step through the command line:
# generate data, sample open words, tune, infer, report, compare.

# %%
import json
import tempfile
from pathlib import Path

from mtuning.io.cli import main

root = Path(tempfile.mkdtemp(prefix="mtuning-demo-"))
data = root / "data"


def sh(*args):
    print("$ mtuning", " ".join(map(str, args)))
    code = main([str(a) for a in args])
    assert code == 0, code


# %%
sh("gen-synth", "--benchmark", "small-osr", "--seed", 0, "--out", data)
sh("sample-open-words", "--lexicon", data / "lexicon.txt", "--classes", data / "classes.txt",
   "--exclude", data / "unknown_classes.txt", "--n-open", 20, "--seed", 0, "--out", root / "open.txt")
sh("tune", "--data", data, "--open-words", root / "open.txt", "--seed", 0, "--out", root / "model")
sh("infer", "--data", data, "--model", root / "model", "--out", root / "pred.tsv")
sh("report", "--data", data, "--model", root / "model", "--predictions", root / "pred.tsv",
   "--out", root / "report.json", "--csv", root / "hist.csv")

# %% the same without open words, then the signed deltas
sh("tune", "--data", data, "--seed", 0, "--out", root / "model0")
sh("infer", "--data", data, "--model", root / "model0", "--out", root / "pred0.tsv")
sh("report", "--data", data, "--model", root / "model0", "--predictions", root / "pred0.tsv",
   "--out", root / "report0.json")
sh("compare", root / "report0.json", root / "report.json", "--out", root / "compare.json")
print(json.loads((root / "compare.json").read_text())["delta"])
print("artifacts in", root)
