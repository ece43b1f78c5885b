"""
Mining tuples from a batch
==========================
"""
# %%
import numpy as np

from quitlab import MiningBatch, build_tuples, hardest_negative, k_nearest_positives
from quitlab.mining import hardest_pairs

rng = np.random.default_rng(0)
E = rng.standard_normal((12, 2))
places = np.repeat(["A", "B", "C"], 4)
batch = MiningBatch(E, places, anchor_index=0)

# %%
# Nearest positives (sorted) and the hardest negative for anchor 0.
print("positives", k_nearest_positives(batch, 2))
print("hardest negative", hardest_negative(batch))

# %%
# Asking for more positives than the place has clamps and says so.
print(k_nearest_positives(batch, 10))

# %%
# Each strategy composes the miners differently.  The triplet strategy draws
# its negative at random, so it needs a seed.
for strategy in ("trihard", "quad", "msml"):
    print(strategy, build_tuples(batch, 2, strategy))
print("triplet", build_tuples(batch, 1, "triplet", rng=7))

# %%
# MSML looks at the whole batch: farthest same-place pair against the
# closest cross-place pair.
print("hard pairs", hardest_pairs(batch))
