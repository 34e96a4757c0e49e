# The tuner never differentiates numerically; this checks the hand-written
# backward pass against central differences on a tiny problem.

# %%
import numpy as np

from mtuning.encoder import FrozenEncoder, PromptContext
from mtuning.tuner import loss_and_grad

g = np.random.default_rng(0)
enc = FrozenEncoder(g.normal(size=(6, 5)), g.normal(size=6) * 0.1, g.normal(size=(4, 6)), g.normal(size=4) * 0.1)
ctx = PromptContext(g.normal(size=(2, 5)) * 0.5, "mid")
tokens = g.normal(size=(5, 5))  # 3 closed classes + 2 open words
X = g.normal(size=(8, 4))
y = g.integers(0, 3, size=8)

# %%
loss, analytic = loss_and_grad(ctx, enc, tokens, X, y, T=0.2)
numeric = np.zeros_like(analytic)
delta = 1e-5
for idx in np.ndindex(ctx.vectors.shape):
    up, down = ctx.copy(), ctx.copy()
    up.vectors[idx] += delta
    down.vectors[idx] -= delta
    numeric[idx] = (loss_and_grad(up, enc, tokens, X, y, 0.2)[0] - loss_and_grad(down, enc, tokens, X, y, 0.2)[0]) / (2 * delta)

print("loss", loss)
print("max relative error", np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)))
