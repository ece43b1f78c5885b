"""
A synthetic city
================

Places sit on a 100 m grid.  Two views per place share the place's content
(covisible); the rest are shifted toward some other place's content, which is
what makes geo-localization by nearest neighbour hard.
"""
# %%
from collections import Counter

import numpy as np

from quitlab import CityParams, generate_city, geo_candidates, split_dataset
from quitlab.dataset import select

records = generate_city(CityParams(seed=0))
print(len(records), "records,", len({r.place_id for r in records}), "places")
print(records[0].id, records[0].position, records[0].features[:4])

# %%
# Covisible views are closer to each other than to the shifted views.
X = {r.id: r.features for r in records[:8]}
d = lambda a, b: float(np.sum((X[a] - X[b]) ** 2))
print("covisible pair", d("p0000-v00", "p0000-v01"))
print("shifted view  ", d("p0000-v00", "p0000-v05"))

# %%
# Geography: within 10 m counts as a potential positive, past 25 m as a
# definite negative.  Place spacing keeps the two sets clean.
pos, neg = geo_candidates(records, records[0])
print(len(pos), "potential positives,", len(neg), "definite negatives")

# %%
# Splits are by place.  Each test place gives one query (its first view) and
# the rest go to the database.
tagged = split_dataset(records, seed=0)
print(Counter(r.split for r in tagged))
print([r.id for r in select(tagged, "query")][:5])
