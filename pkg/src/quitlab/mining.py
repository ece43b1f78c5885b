"""Tuple mining: hardest negatives, nearest positives, batch-global hard pairs, geo neighborhoods.

Every selection breaks ties by lowest batch index.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .embedding import Metric, as_embeddings, pairwise_distances

STRATEGIES = ("triplet", "trihard", "quad", "msml")


class MiningError(ValueError):
    """A batch cannot supply the tuple members a loss needs."""


class NoNegative(MiningError):
    pass


class NoPositive(MiningError):
    pass


class FewerPositivesThanK(MiningError):
    pass


class NotEnoughNegatives(MiningError):
    pass


class NoPositivePair(MiningError):
    pass


class NoNegativePair(MiningError):
    pass


@dataclass
class MiningBatch:
    """Embeddings plus place labels for one batch, viewed from ``anchor_index``.

    ``anchors`` lists the positions allowed to act as anchors (``None`` means
    all of them); the sampler uses it for filler records that only serve as
    positives/negatives.
    """

    embeddings: np.ndarray
    place_ids: Sequence
    anchor_index: int = 0
    geo: np.ndarray | None = None
    ids: tuple | None = None
    anchors: tuple | None = None
    _places: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.embeddings = as_embeddings(self.embeddings)
        n = self.embeddings.shape[0]
        self._places = np.asarray(list(self.place_ids))
        if self._places.shape != (n,):
            raise ValueError(f"{len(self._places)} place ids for {n} embeddings")
        if self.geo is not None:
            self.geo = np.asarray(self.geo, dtype=np.float64)
            if self.geo.shape != (n, 2):
                raise ValueError(f"geo must have shape ({n}, 2), got {self.geo.shape}")
        if self.ids is not None and len(self.ids) != n:
            raise ValueError(f"{len(self.ids)} ids for {n} embeddings")
        if not 0 <= self.anchor_index < n:
            raise ValueError(f"anchor_index {self.anchor_index} out of range for batch of {n}")

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def places(self) -> np.ndarray:
        return self._places

    def anchor_positions(self) -> tuple:
        return tuple(range(len(self))) if self.anchors is None else tuple(self.anchors)

    def with_anchor(self, index: int) -> "MiningBatch":
        return replace(self, anchor_index=index)

    def with_embeddings(self, embeddings) -> "MiningBatch":
        return replace(self, embeddings=embeddings)


class Positives(NamedTuple):
    indices: list
    clamped: bool


@dataclass(frozen=True)
class GeoNeighborhood:
    potential_positive_radius_m: float = 10.0
    definite_negative_radius_m: float = 25.0

    def __post_init__(self):
        pos, neg = self.potential_positive_radius_m, self.definite_negative_radius_m
        if not (np.isfinite(pos) and np.isfinite(neg)) or pos <= 0 or neg <= pos:
            raise ValueError(f"need 0 < positive radius < negative radius, got {pos}, {neg}")


@dataclass(frozen=True)
class TupleSpec:
    """Batch positions selected for one loss evaluation.

    For msml, ``anchor`` is None, ``positives`` is the hardest positive pair and
    ``negatives`` the hardest negative pair.
    """

    strategy: str
    anchor: int | None
    positives: tuple
    negatives: tuple
    clamped: bool = False


def anchor_distances(batch: MiningBatch, metric: Metric = "squared_l2") -> np.ndarray:
    a = batch.anchor_index
    return pairwise_distances(batch.embeddings[a : a + 1], batch.embeddings, metric)[0]


def _negative_positions(batch: MiningBatch) -> np.ndarray:
    return np.flatnonzero(batch.places != batch.places[batch.anchor_index])


def _positive_positions(batch: MiningBatch) -> np.ndarray:
    same = batch.places == batch.places[batch.anchor_index]
    same[batch.anchor_index] = False
    return np.flatnonzero(same)


def _rank(candidates: np.ndarray, dist: np.ndarray) -> np.ndarray:
    # stable sort of ascending candidate indices -> ties resolve to the lowest index
    return candidates[np.argsort(dist[candidates], kind="stable")]


def hardest_negative(batch: MiningBatch, metric: Metric = "squared_l2") -> int:
    """Index of the different-place sample closest to the anchor."""
    neg = _negative_positions(batch)
    if neg.size == 0:
        raise NoNegative(f"no sample outside place {batch.places[batch.anchor_index]!r}")
    dist = anchor_distances(batch, metric)
    return int(neg[np.argmin(dist[neg])])


def nearest_negatives(
    batch: MiningBatch, count: int = 2, metric: Metric = "squared_l2", distinct_places: bool = False
) -> list:
    """The ``count`` closest negatives, nearest first.

    With ``distinct_places`` each returned negative comes from a different place.
    """
    neg = _negative_positions(batch)
    if neg.size == 0:
        raise NoNegative(f"no sample outside place {batch.places[batch.anchor_index]!r}")
    ranked = _rank(neg, anchor_distances(batch, metric))
    if distinct_places:
        chosen, seen = [], set()
        for i in ranked:
            if batch.places[i] not in seen:
                chosen.append(int(i))
                seen.add(batch.places[i])
    else:
        chosen = [int(i) for i in ranked]
    if len(chosen) < count:
        raise NotEnoughNegatives(f"need {count} negatives, batch offers {len(chosen)}")
    return chosen[:count]


def k_nearest_positives(
    batch: MiningBatch, k: int, metric: Metric = "squared_l2", clamp: bool = True
) -> Positives:
    """Up to ``k`` same-place samples sorted by distance to the anchor."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    pos = _positive_positions(batch)
    if pos.size == 0:
        raise NoPositive(f"anchor is the only sample of place {batch.places[batch.anchor_index]!r}")
    if pos.size < k and not clamp:
        raise FewerPositivesThanK(f"k={k} but only {pos.size} positives")
    ranked = _rank(pos, anchor_distances(batch, metric))
    return Positives([int(i) for i in ranked[:k]], bool(pos.size < k))


def hardest_pairs(batch: MiningBatch, metric: Metric = "squared_l2") -> tuple:
    """Batch-global ``((i, j) farthest same-place pair, (i, j) closest cross-place pair)``."""
    dist = pairwise_distances(batch.embeddings, batch.embeddings, metric)
    n = len(batch)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    same = batch.places[:, None] == batch.places[None, :]
    pos_mask = upper & same
    neg_mask = upper & ~same
    if not pos_mask.any():
        raise NoPositivePair("batch has no two samples from the same place")
    if not neg_mask.any():
        raise NoNegativePair("batch has a single place")
    # row-major argmax/argmin return the lexicographically first (i, j) on ties
    p = np.argmax(np.where(pos_mask, dist, -np.inf))
    q = np.argmin(np.where(neg_mask, dist, np.inf))
    return divmod(int(p), n), divmod(int(q), n)


def geo_candidates(records, anchor, neighborhood: GeoNeighborhood = GeoNeighborhood()) -> tuple:
    """Split ``records`` into (potential positive ids, definite negative ids) around ``anchor``.

    Records between the two radii belong to neither set.
    """
    if anchor.position is None:
        raise ValueError(f"anchor {anchor.id!r} has no position")
    ax, ay = anchor.position
    positives, negatives = set(), set()
    for r in records:
        if r.position is None:
            raise ValueError(f"record {r.id!r} has no position")
        if r.id == anchor.id:
            continue
        d = float(np.hypot(r.position[0] - ax, r.position[1] - ay))
        if d <= neighborhood.potential_positive_radius_m:
            positives.add(r.id)
        elif d > neighborhood.definite_negative_radius_m:
            negatives.add(r.id)
    return positives, negatives


def build_tuples(
    batch: MiningBatch,
    k: int = 1,
    strategy: str = "trihard",
    metric: Metric = "squared_l2",
    rng: np.random.Generator | int | None = None,
    clamp: bool = True,
) -> TupleSpec:
    """Compose the miners for one strategy.

    trihard: k nearest positives + hardest negative.  quad: k nearest positives
    + the two nearest negatives.  triplet: nearest positive + a uniformly drawn
    negative (``rng`` required).  msml: batch-global hard pairs.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy == "msml":
        pp, nn = hardest_pairs(batch, metric)
        return TupleSpec("msml", None, pp, nn)
    a = batch.anchor_index
    if strategy == "triplet":
        if rng is None:
            raise ValueError("triplet mining samples its negative; pass rng or a seed")
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        pos = k_nearest_positives(batch, 1, metric)
        neg = _negative_positions(batch)
        if neg.size == 0:
            raise NoNegative(f"no sample outside place {batch.places[a]!r}")
        return TupleSpec("triplet", a, tuple(pos.indices), (int(neg[rng.integers(neg.size)]),))
    pos = k_nearest_positives(batch, k, metric, clamp=clamp)
    if strategy == "trihard":
        negs = (hardest_negative(batch, metric),)
    else:
        negs = tuple(nearest_negatives(batch, 2, metric))
    return TupleSpec(strategy, a, tuple(pos.indices), negs, pos.clamped)
