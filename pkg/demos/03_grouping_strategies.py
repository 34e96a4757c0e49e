# Three ways to order classes before cutting them into groups.
#
# id_order sorts class ids, random shuffles with a seed, semantic chains each
# class to its most similar unvisited neighbour using the bare class-token
# embeddings (the encoder with no context).

# %%
from mtuning.ctt import build_groups
from mtuning.io.experiment import load_data, named_manifest, run_experiment

m = named_manifest("large-osr")
m = m.replace(synth=m.synth.replace(n_topics=20, topic_weight=0.5))
loaded = load_data(m)
enc = m.encoder.build(loaded.tokens.dim, loaded.dataset.embeddings.dim)

# %% first group of each strategy
for strategy in ("id_order", "random", "semantic"):
    g = build_groups(loaded.dataset.class_names, 20, strategy, 0, enc, loaded.tokens)
    print(f"{strategy:9s}", g.groups[0][:10], "...")

# %% effect on the metrics
for strategy in ("id_order", "random", "semantic"):
    r = run_experiment(m.replace(strategy=strategy), write=False).report
    print(f"{strategy:9s} closed acc {r.closed_accuracy:.4f}  I_opt hit {r.extra['i_opt_true_group_rate']:.4f}  "
          f"S_open AUROC {r.auroc_open_score:.4f}")
