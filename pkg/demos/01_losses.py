"""
Losses on a line
================

Every loss in quitlab works on embeddings of any dimension, but 1-D points
make the arithmetic easy to follow by hand.
"""
# %%
import numpy as np

from quitlab import Margins, MiningBatch, quadruplet_loss, quit_trihard_loss, triplet_loss

m = Margins(alpha=0.3, beta=0.2)

# %%
# A triplet: the positive sits at distance 1, the negative at 1.1.
# Squared distances are 1 and 1.21, so the hinge is 1 - 1.21 + 0.3 = 0.09.
r = triplet_loss([0.0], [1.0], [1.1], m)
print("triplet", r.value, {k: v.tolist() for k, v in r.grads.items()})

# %%
# The quadruplet loss adds a second hinge that compares the positive pair with
# an unrelated negative pair (n1, n2), independent of the anchor.
r = quadruplet_loss([0.0], [2.0], [1.0], [1.5], m)
print("quadruplet", r.value, "hinge arguments", r.hinge_args)

# %%
# quit_trihard mines from a whole batch: the k nearest same-place samples are
# each held against the hardest (closest) other-place sample.
batch = MiningBatch(np.array([[0.0], [0.5], [1.0], [1.2], [3.0]]), ["A", "A", "A", "B", "B"])
for k in (1, 2):
    r = quit_trihard_loss(batch, k, Margins(alpha=1.5))
    print(f"k={k}", "value", round(r.value, 4), "tuple", r.indices)

# %%
# Gradients follow directly from the hinge terms.  For squared distances the
# anchor is pulled toward each positive and pushed from the negative:
# d/da = sum_i 2 (n - p_i).
r = quit_trihard_loss(batch, 2, Margins(alpha=1.5))
print("anchor grad", r.grads["anchor"], "expected", 2 * (1.2 - 0.5) + 2 * (1.2 - 1.0))
