"""
Dummy classes and two-hot labels
================================

A doubled head has 2C outputs. Slot ``C + perm[k]`` is the dummy twin of
class ``k``. Training targets put mass on both a class and its twin, and
inference folds a dummy prediction back onto its original class.
"""

import numpy as np

from ducatlab.core import DucatHyper, make_two_hot, predict_from_logits, zero_one_risk_from_raw

np.set_printoptions(precision=3, suppress=True)

# %%
# A benign sample of class 2 out of 4, with the default beta1 = 0.75.
print(make_two_hot(2, 4, 0.75))

# %%
# The adversarial label uses 1 - beta2. With beta2 = 1 it is the one-hot of
# the dummy slot.
print(make_two_hot(2, 4, 1.0 - 1.0))

# %%
# A permutation only moves the twin. Here class 0's twin sits at slot 4 + 3.
perm = [3, 0, 1, 2]
print(make_two_hot(0, 4, 0.75, perm))

# %%
# Projection: raw argmax over 2C, then dummy slots map back through the permutation.
logits = np.array([
    [2.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5],   # original class 0 wins
    [0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0],   # slot 7 is class 0's twin
])
p = predict_from_logits(logits, 4, perm)
print("raw", p.raw, "projected", p.projected, "dummy hit", p.is_dummy)

# %%
# The 0-1 risk that the label scheme mirrors. Landing on the original class
# for a benign input still costs (1 - beta1) of the benign weight.
hyper = DucatHyper(alpha=0.5, beta1=0.75, beta2=1.0)
print(zero_one_risk_from_raw([1], [5], [1], 4, hyper))  # 0.125
print(zero_one_risk_from_raw([5], [5], [1], 4, hyper))  # 0.375
