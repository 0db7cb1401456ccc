"""
Attacks inside the budget
=========================

FGSM, PGD with restarts, and targeted PGD against a small MLP. Every
adversarial point stays in the eps-ball and in [0, 1]. Success is judged on
the projected class.
"""

import numpy as np

from ducatlab.attacks import L2, TARGETED_ORIGINAL, AttackSpec, fgsm, pgd, sample_targets, targeted_pgd
from ducatlab.datasets import gen_gaussians
from ducatlab.train import PGD_AT, TrainConfig, train

train_set = gen_gaussians(4, 2, 150, 1.0, 0.3, seed=0)
test_set = gen_gaussians(4, 2, 150, 1.0, 0.3, seed=0, split="test")
x, y = test_set.features, test_set.labels

# %%
# Plain ERM: a PGD-AT run whose adversary is the identity (zero steps).
identity = AttackSpec(epsilon=0.0, steps=0, random_start=False)
model, _ = train(TrainConfig(method=PGD_AT, epochs=15, train_attack=identity, lr_decay_epochs=(12,),
                             batch_size=32, hidden=(32,)), train_set)

eps = 16 / 255
one_step = AttackSpec(epsilon=eps, step_size=eps, steps=1, random_start=False)
print("FGSM success      ", fgsm(model, x, y, one_step).success_mask.mean())
print("PGD-1 == FGSM     ", np.array_equal(pgd(model, x, y, one_step).x_adv, fgsm(model, x, y, one_step).x_adv))

# %%
# More steps and restarts only help the attacker against a standard head.
for steps, restarts in [(1, 1), (10, 1), (50, 5)]:
    spec = AttackSpec(epsilon=eps, step_size=eps / 4, steps=steps, restarts=restarts)
    out = pgd(model, x, y, spec)
    print(f"PGD-{steps} x{restarts}: success {out.success_mask.mean():.3f}  max |delta| {out.perturbation_norms.max():.4f}")

# %%
# L2 ball instead of L-inf.
out = pgd(model, x, y, AttackSpec(norm=L2, epsilon=0.1, step_size=0.025, steps=20))
print("L2 success", out.success_mask.mean(), "max norm", out.perturbation_norms.max().round(6))

# %%
# Targeted attacks aim at one random wrong class. That is harder than just leaving the true class.
spec = AttackSpec(epsilon=eps, step_size=eps / 4, steps=10, target_mode=TARGETED_ORIGINAL)
targets = sample_targets(y, 4, TARGETED_ORIGINAL, seed=0)
print("targeted success", targeted_pgd(model, x, y, targets, spec).success_mask.mean())
