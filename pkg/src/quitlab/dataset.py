"""Geo-tagged records, JSONL persistence, and the synthetic multi-view city.

A synthetic place has a latent content vector.  Its first ``covisible_views``
views show that content plus view noise; the remaining views are
perspective-shifted: mostly an unrelated view-specific pattern with only a
fraction of the place content left in.  View noise is anisotropic, with extra
variance along a city-wide nuisance subspace (an illumination/season stand-in)
that an embedding network can learn to discard.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .mining import MiningBatch

SPLITS = ("train", "val", "test", "query", "database")
JSONL_FIELDS = frozenset({"id", "features", "x_m", "y_m", "place_id", "split"})


class DatasetError(ValueError):
    pass


@dataclass(eq=False)
class GeoRecord:
    id: str
    features: np.ndarray
    position: tuple
    place_id: str
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 1 or not np.all(np.isfinite(self.features)):
            raise DatasetError(f"record {self.id!r}: features must be a finite 1-D vector")
        x, y = (float(c) for c in self.position)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DatasetError(f"record {self.id!r}: non-finite position")
        self.position = (x, y)
        if self.split not in SPLITS:
            raise DatasetError(f"record {self.id!r}: split {self.split!r} not in {SPLITS}")

    def __eq__(self, other):
        if not isinstance(other, GeoRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.place_id == other.place_id
            and self.split == other.split
            and self.position == other.position
            and np.array_equal(self.features, other.features)
        )

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "features": self.features.tolist(),
            "x_m": self.position[0],
            "y_m": self.position[1],
            "place_id": self.place_id,
            "split": self.split,
        }


@dataclass(frozen=True)
class CityParams:
    num_places: int = 100
    views_per_place: int = 8
    covisible_views: int = 2
    feature_dim: int = 32
    view_noise: float = 0.15
    distractor_overlap: float = 0.9
    perspective_shift: float = 0.4
    nuisance_dims: int = 8
    nuisance_gain: float = 12.0
    place_spacing_m: float = 100.0
    intra_place_spread_m: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.num_places < 1 or self.feature_dim < 1:
            raise DatasetError("num_places and feature_dim must be positive")
        if self.views_per_place < 3:
            raise DatasetError(f"views_per_place must be >= 3, got {self.views_per_place}")
        if not 1 <= self.covisible_views < self.views_per_place:
            raise DatasetError("need 1 <= covisible_views < views_per_place")
        if self.view_noise < 0 or self.nuisance_gain < 0:
            raise DatasetError("view_noise and nuisance_gain must be >= 0")
        if not 0 <= self.distractor_overlap <= 1 or not 0 <= self.perspective_shift <= 1:
            raise DatasetError("distractor_overlap and perspective_shift must lie in [0, 1]")
        if not 0 <= self.nuisance_dims <= self.feature_dim:
            raise DatasetError("nuisance_dims must lie in [0, feature_dim]")
        if self.intra_place_spread_m <= 0 or self.place_spacing_m <= 2 * self.intra_place_spread_m:
            raise DatasetError("need place_spacing_m > 2 * intra_place_spread_m > 0")


def generate_city(p: CityParams) -> list:
    """Synthetic city: places on a square grid, ``views_per_place`` records each.

    View positions are uniform in a disk of diameter ``intra_place_spread_m``
    around the place center, so any two views of a place lie within the spread
    of each other.  Record ids are ``p{place}-v{view}`` with covisible views first.
    """
    rng = np.random.default_rng(p.seed)
    F = p.feature_dim
    scale = 1.0 / math.sqrt(F)
    nuisance = np.linalg.qr(rng.standard_normal((F, F)))[0][:, : p.nuisance_dims]
    contents = rng.standard_normal((p.num_places, F)) * scale
    side = math.ceil(math.sqrt(p.num_places))
    records = []
    for place in range(p.num_places):
        cx = (place % side) * p.place_spacing_m
        cy = (place // side) * p.place_spacing_m
        content = contents[place]
        place_id = f"p{place:04d}"
        for view in range(p.views_per_place):
            iso = rng.standard_normal(F) * scale
            along = nuisance @ rng.standard_normal(p.nuisance_dims) * scale
            noise = p.view_noise * (iso + p.nuisance_gain * along)
            if view < p.covisible_views:
                x = content + noise
            else:
                # the shifted view looks partly like some other place
                lookalike = contents[(place + 1 + rng.integers(p.num_places - 1)) % p.num_places] if p.num_places > 1 else 0.0
                fresh = rng.standard_normal(F) * scale
                other = math.sqrt(p.distractor_overlap) * lookalike + math.sqrt(1 - p.distractor_overlap) * fresh
                x = (1 - p.perspective_shift) * content + p.perspective_shift * other + noise
            r = 0.5 * p.intra_place_spread_m * math.sqrt(rng.random())
            theta = 2 * math.pi * rng.random()
            pos = (cx + r * math.cos(theta), cy + r * math.sin(theta))
            records.append(GeoRecord(f"{place_id}-v{view:02d}", x, pos, place_id, "train"))
    return records


def save_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def load_jsonl(path) -> list:
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or set(obj) != JSONL_FIELDS:
                raise DatasetError(f"{path}: line {lineno}: expected fields {sorted(JSONL_FIELDS)}")
            if obj["id"] in seen:
                raise DatasetError(f"{path}: line {lineno}: duplicate id {obj['id']!r}")
            seen.add(obj["id"])
            try:
                records.append(GeoRecord(obj["id"], obj["features"], (obj["x_m"], obj["y_m"]),
                                         obj["place_id"], obj["split"]))
            except (DatasetError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from None
    return records


def group_by_place(records) -> dict:
    groups = defaultdict(list)
    for r in records:
        groups[r.place_id].append(r)
    return dict(sorted(groups.items()))


def _allocate(n: int, fractions) -> list:
    raw = [f * n for f in fractions]
    counts = [math.floor(x) for x in raw]
    # largest remainder, earlier split wins ties
    for i in sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(records, fractions=(1 / 3, 1 / 3, 1 / 3), seed: int = 0) -> list:
    """Tag records train/val/test by place.

    Test places are then split into one query per place (the view with the
    smallest id) and database entries.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise DatasetError("fractions must be three non-negative numbers (train, val, test)")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DatasetError(f"fractions must sum to 1, got {sum(fractions)}")
    places = sorted({r.place_id for r in records})
    counts = _allocate(len(places), fractions)
    if any(c == 0 and f > 0 for c, f in zip(counts, fractions)):
        raise DatasetError(f"{len(places)} places cannot fill splits with fractions {tuple(fractions)}")
    order = np.random.default_rng(seed).permutation(len(places))
    split_of = {}
    start = 0
    for name, c in zip(("train", "val", "test"), counts):
        for i in order[start : start + c]:
            split_of[places[i]] = name
        start += c
    query_ids = {min(g, key=lambda r: r.id).id
                 for pid, g in group_by_place(records).items() if split_of[pid] == "test"}
    out = []
    for r in records:
        tag = split_of[r.place_id]
        if tag == "test":
            tag = "query" if r.id in query_ids else "database"
        out.append(replace(r, split=tag))
    return out


def query_database_split(records) -> tuple:
    """One query per place (smallest id), the rest as database, input order kept."""
    query_ids = {min(g, key=lambda r: r.id).id for g in group_by_place(records).values()}
    queries = [r for r in records if r.id in query_ids]
    database = [r for r in records if r.id not in query_ids]
    return queries, database


def select(records, *splits) -> list:
    return [r for r in records if r.split in splits]


def batch_sampler(records, places_per_batch: int, views_per_place: int, seed: int, epoch: int = 0):
    """Yield one epoch of P x V batches as :class:`MiningBatch` over raw features.

    Each place contributes ``floor(n_views / V)`` disjoint chunks of V views;
    every chunk is anchored exactly once per epoch.  A final short batch is
    topped up with filler chunks from other places that are excluded from
    ``MiningBatch.anchors``.
    """
    P, V = places_per_batch, views_per_place
    if P < 1 or V < 1:
        raise DatasetError("places_per_batch and views_per_place must be positive")
    groups = {pid: g for pid, g in group_by_place(records).items() if len(g) >= V}
    if len(groups) < P:
        raise DatasetError(f"need {P} places with >= {V} views, have {len(groups)}")
    pids = list(groups)
    rng = np.random.default_rng([seed, epoch])
    chunks_by_place = {}
    for i in rng.permutation(len(pids)):
        g = groups[pids[i]]
        perm = rng.permutation(len(g))
        chunks_by_place[pids[i]] = [[g[j] for j in perm[c * V : (c + 1) * V]] for c in range(len(g) // V)]
    rounds = max(len(c) for c in chunks_by_place.values())
    queue = [(pid, chunks[r]) for r in range(rounds) for pid, chunks in chunks_by_place.items() if r < len(chunks)]
    while queue:
        taken, used, rest = [], set(), []
        for pid, chunk in queue:
            if len(taken) < P and pid not in used:
                taken.append(chunk)
                used.add(pid)
            else:
                rest.append((pid, chunk))
        queue = rest
        n_anchor = sum(len(c) for c in taken)
        if len(taken) < P:
            spare = [pid for pid in pids if pid not in used]
            for i in rng.choice(len(spare), P - len(taken), replace=False):
                g = groups[spare[i]]
                taken.append([g[j] for j in rng.choice(len(g), V, replace=False)])
        recs = [r for chunk in taken for r in chunk]
        yield MiningBatch(
            np.stack([r.features for r in recs]),
            [r.place_id for r in recs],
            anchor_index=0,
            geo=np.array([r.position for r in recs]),
            ids=tuple(r.id for r in recs),
            anchors=tuple(range(n_anchor)),
        )
