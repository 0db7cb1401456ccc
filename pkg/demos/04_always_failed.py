"""
Always-failed samples
=====================

Train a handful of PGD-AT models and count, per test point, how many of them
survive their own white-box attack. Then check how well attacks crafted on
one model transfer to the others, split by whether they fooled the surrogate.
"""

import numpy as np

from ducatlab.attacks import AttackSpec
from ducatlab.datasets import gen_gaussians
from ducatlab.evalkit import overlap_histogram, transfer_matrix
from ducatlab.train import PGD_AT, TrainConfig, train

eps = 16 / 255
spec = AttackSpec(epsilon=eps, step_size=eps / 4, steps=10)
train_set = gen_gaussians(4, 2, 300, 1.0, 0.35, seed=0)
test_set = gen_gaussians(4, 2, 125, 1.0, 0.35, seed=0, split="test")

models = []
for seed, hidden in [(0, (32,)), (1, (64,)), (2, (32, 32)), (3, (64, 64))]:
    cfg = TrainConfig(method=PGD_AT, epochs=20, train_attack=spec, lr_decay_epochs=(15,), batch_size=32,
                      hidden=hidden, seed=seed)
    models.append(train(cfg, train_set)[1].final_model)

# %%
hist = overlap_histogram(models, test_set, spec)
for k, count in enumerate(hist.buckets):
    print(f"defended by {k} of {hist.num_models}: {count}")

# %%
# Diagonals are 100 / 0 by construction. Off the diagonal, samples that
# fooled the surrogate transfer far better.
tm = transfer_matrix(models, test_set, spec)
np.set_printoptions(precision=1, suppress=True)
print("success subset\n", tm.success_rate)
print("fail subset\n", tm.fail_rate)
