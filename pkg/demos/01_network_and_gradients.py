"""
The classifier, from parameters to a gradient check
===================================================

Builds the 43-128-64-32-15 network, counts its parameters, checks backprop
against finite differences on a toy net, and fits a small synthetic problem.
"""

import numpy as np

from varsfl import data as D
from varsfl.nn import ArchitectureSpec, ModelParams, evaluate, init_params, loss_and_grads, train_epochs

# The full-size network and its parameter budget, layer by layer.
spec = ArchitectureSpec()
print("layer dims       ", spec.layer_dims)
print("params per layer ", spec.layer_param_counts())
print("total params     ", spec.param_count)
print("MACs per sample  ", spec.macs_per_sample)

# Gradient check on a toy net. Dropout is off so the loss is deterministic.
toy = ArchitectureSpec((4, 5, 3), 0.0, frozenset())
rng = np.random.default_rng(0)
p = init_params(toy, 0)
x, y = rng.normal(size=(8, 4)), rng.integers(0, 3, 8)
_, grads = loss_and_grads(p, x, y, train=False)

h = 1e-5
fd = np.zeros(toy.param_count)
for i in range(toy.param_count):
    up, dn = p.copy(), p.copy()
    up.flat[i] += h
    dn.flat[i] -= h
    fd[i] = (loss_and_grads(up, x, y, train=False)[0] - loss_and_grads(dn, x, y, train=False)[0]) / (2 * h)
rel = np.linalg.norm(grads.flat - fd) / (np.linalg.norm(grads.flat) + np.linalg.norm(fd))
print(f"\nbackprop vs finite differences: relative error {rel:.2e}")

# A zero network predicts uniformly, so its loss is ln(15).
zero = ModelParams(spec, np.zeros(spec.param_count))
feats = rng.normal(size=(5, 43))
print(f"zero-weight loss {evaluate(zero, feats, np.arange(5))[0]:.6f} vs ln 15 = {np.log(15):.6f}")

# Centralized training on well-separated blobs: loss falls epoch by epoch.
ds = D.generate_synthetic(15, 43, [200] * 15, cluster_spread=1.0, seed=1)
bundle = D.split(ds, seed=1)
train, (test,), _ = D.fit_apply_standardizer(bundle.train, [bundle.test])
model = init_params(spec, 1)
epoch_losses, _ = train_epochs(model, train.features, train.labels, epochs=5, lr=1e-3, batch_size=64,
                               rng=np.random.default_rng(2))
loss, preds = evaluate(model, test.features, test.labels)
print("\nepoch losses", np.round(epoch_losses, 4))
print(f"test loss {loss:.4f}, accuracy {(preds == test.labels).mean():.3f}")
