"""Triplet-family losses with analytic gradients.

Each function returns a :class:`LossResult` holding the loss value and one
gradient vector per tuple role.  Batch-mined losses also record which batch
position each role came from, so gradients can be scattered back with
:meth:`LossResult.batch_gradient`.

The hinge subgradient at exactly zero is taken as zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import Metric, as_embedding, as_embeddings, check_metric
from .mining import MiningBatch, build_tuples

LOSSES = ("triplet", "quad", "trihard", "msml", "quit_trihard", "quit_quad")


@dataclass(frozen=True)
class Margins:
    alpha: float = 0.3
    beta: float = 0.2

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"margin {name} must be finite and >= 0, got {v}")


@dataclass
class LossResult:
    value: float
    grads: dict
    active_terms: int
    hinge_args: tuple = ()
    indices: dict | None = None

    def batch_gradient(self, n: int) -> np.ndarray:
        """Sum role gradients into an ``(n, D)`` array indexed by batch position."""
        if self.indices is None:
            raise ValueError("loss was not computed from a batch; no positions to scatter to")
        dim = next(iter(self.grads.values())).shape[0]
        out = np.zeros((n, dim))
        for role, g in self.grads.items():
            out[self.indices[role]] += g
        return out


@dataclass
class QuintupletTuple:
    """Anchor, its k positives (nearest first) and role-tagged negatives."""

    anchor: np.ndarray
    positives: np.ndarray
    negatives: dict = field(default_factory=dict)

    def __post_init__(self):
        self.anchor = as_embedding(self.anchor, "anchor")
        self.positives = as_embeddings(self.positives, "positives")
        if self.positives.shape[1] != self.anchor.shape[0]:
            raise ValueError("positives and anchor differ in dimension")
        self.negatives = {r: as_embedding(v, r) for r, v in self.negatives.items()}
        for r, v in self.negatives.items():
            if v.shape != self.anchor.shape:
                raise ValueError(f"negative {r!r} differs in dimension from the anchor")

    @property
    def k(self) -> int:
        return self.positives.shape[0]


def hinge(x: float) -> float:
    return max(float(x), 0.0)


def _pair(x: np.ndarray, y: np.ndarray, metric: str):
    """Distance between x and y and its gradient with respect to x."""
    diff = x - y
    sq = float(np.cumsum(diff * diff)[-1])
    if metric == "squared_l2":
        return sq, 2.0 * diff
    d = float(np.sqrt(sq))
    if d == 0.0:
        return 0.0, np.zeros_like(diff)
    return d, diff / d


class _Terms:
    def __init__(self, roles, dim):
        self.grads = {r: np.zeros(dim) for r in roles}
        self.value = 0.0
        self.active = 0
        self.args = []

    def hinge(self, arg: float) -> bool:
        self.args.append(arg)
        if arg > 0.0:
            self.value += arg
            self.active += 1
            return True
        return False

    def result(self, indices=None) -> LossResult:
        return LossResult(self.value, self.grads, self.active, tuple(self.args), indices)


def _relative_terms(t, a, positives, pos_roles, margin, metric, negative=None, neg_role=None, neg_dist=None):
    # sum_i h(d(a, p_i) - d(a, n) + margin); with negative=None the negative
    # distance is a fixed scalar and carries no gradient
    if negative is not None:
        neg_dist, g_an = _pair(a, negative, metric)
    for p, role in zip(positives, pos_roles):
        d_ap, g_ap = _pair(a, p, metric)
        if not t.hinge(d_ap - neg_dist + margin):
            continue
        if negative is None:
            t.grads["anchor"] += g_ap
        elif metric == "squared_l2":
            t.grads["anchor"] += 2.0 * (negative - p)
        else:
            t.grads["anchor"] += g_ap - g_an
        t.grads[role] -= g_ap
        if negative is not None:
            t.grads[neg_role] += g_an


def _absolute_terms(t, a, positives, pos_roles, n1, n2, margin, metric):
    # sum_i h(d(a, p_i) - d(n1, n2) + margin)
    d_nn, g_nn = _pair(n1, n2, metric)
    for p, role in zip(positives, pos_roles):
        d_ap, g_ap = _pair(a, p, metric)
        if not t.hinge(d_ap - d_nn + margin):
            continue
        t.grads["anchor"] += g_ap
        t.grads[role] -= g_ap
        t.grads["negative_1"] -= g_nn
        t.grads["negative_2"] += g_nn


def _same_dim(*vs):
    arrs = [as_embedding(v) for v in vs]
    if len({v.shape for v in arrs}) != 1:
        raise ValueError("dimension mismatch between tuple members")
    return arrs


def triplet_loss(a, p, n, margins: Margins = Margins(), metric: Metric = "squared_l2") -> LossResult:
    check_metric(metric)
    a, p, n = _same_dim(a, p, n)
    t = _Terms(("anchor", "positive", "negative"), a.shape[0])
    _relative_terms(t, a, [p], ["positive"], margins.alpha, metric, n, "negative")
    return t.result()


def quadruplet_loss(a, p, n1, n2, margins: Margins = Margins(), metric: Metric = "squared_l2") -> LossResult:
    check_metric(metric)
    a, p, n1, n2 = _same_dim(a, p, n1, n2)
    t = _Terms(("anchor", "positive", "negative_1", "negative_2"), a.shape[0])
    _relative_terms(t, a, [p], ["positive"], margins.alpha, metric, n1, "negative_1")
    _absolute_terms(t, a, [p], ["positive"], n1, n2, margins.beta, metric)
    return t.result()


def _positive_roles(k):
    return [f"positive_{i}" for i in range(1, k + 1)]


def quit_loss(tup: QuintupletTuple, neg_distance: float, margins: Margins = Margins(),
              metric: Metric = "squared_l2") -> LossResult:
    """Sum of k hinges against an already-computed negative distance.

    The negative term is treated as a constant, so only the anchor and the
    positives receive gradients.
    """
    check_metric(metric)
    if tup.k == 0:
        raise ValueError("quit_loss needs at least one positive")
    roles = _positive_roles(tup.k)
    t = _Terms(["anchor", *roles], tup.anchor.shape[0])
    _relative_terms(t, tup.anchor, tup.positives, roles, margins.alpha, metric, neg_dist=float(neg_distance))
    return t.result()


def trihard_loss(batch: MiningBatch, margins: Margins = Margins(), metric: Metric = "squared_l2") -> LossResult:
    """Triplet loss on (anchor, nearest positive, hardest negative) mined from the batch."""
    check_metric(metric)
    spec = build_tuples(batch, 1, "trihard", metric)
    E = batch.embeddings
    res = triplet_loss(E[spec.anchor], E[spec.positives[0]], E[spec.negatives[0]], margins, metric)
    res.indices = {"anchor": spec.anchor, "positive": spec.positives[0], "negative": spec.negatives[0]}
    return res


def quit_trihard_loss(batch: MiningBatch, k: int = 2, margins: Margins = Margins(),
                      metric: Metric = "squared_l2", clamp: bool = True) -> LossResult:
    """Hinges of the k nearest positives against the hardest negative."""
    check_metric(metric)
    spec = build_tuples(batch, k, "trihard", metric, clamp=clamp)
    E = batch.embeddings
    roles = _positive_roles(len(spec.positives))
    t = _Terms(["anchor", *roles, "negative"], E.shape[1])
    _relative_terms(t, E[spec.anchor], E[list(spec.positives)], roles, margins.alpha, metric,
                    E[spec.negatives[0]], "negative")
    indices = {"anchor": spec.anchor, **dict(zip(roles, spec.positives)), "negative": spec.negatives[0]}
    return t.result(indices)


def quit_quad_loss(batch: MiningBatch, k: int = 2, margins: Margins = Margins(),
                   metric: Metric = "squared_l2", clamp: bool = True) -> LossResult:
    """k-positive quadruplet loss with n1, n2 the two negatives nearest the anchor."""
    check_metric(metric)
    spec = build_tuples(batch, k, "quad", metric, clamp=clamp)
    E = batch.embeddings
    roles = _positive_roles(len(spec.positives))
    a, ps = E[spec.anchor], E[list(spec.positives)]
    n1, n2 = E[spec.negatives[0]], E[spec.negatives[1]]
    t = _Terms(["anchor", *roles, "negative_1", "negative_2"], E.shape[1])
    _relative_terms(t, a, ps, roles, margins.alpha, metric, n1, "negative_1")
    _absolute_terms(t, a, ps, roles, n1, n2, margins.beta, metric)
    indices = {"anchor": spec.anchor, **dict(zip(roles, spec.positives)),
               "negative_1": spec.negatives[0], "negative_2": spec.negatives[1]}
    return t.result(indices)


def msml_loss(batch: MiningBatch, margins: Margins = Margins(), metric: Metric = "squared_l2") -> LossResult:
    """One hinge per batch: farthest same-place pair against closest cross-place pair."""
    check_metric(metric)
    spec = build_tuples(batch, 1, "msml", metric)
    E = batch.embeddings
    (pa, pb), (na, nb) = spec.positives, spec.negatives
    t = _Terms(("positive_a", "positive_b", "negative_a", "negative_b"), E.shape[1])
    d_pp, g_pp = _pair(E[pa], E[pb], metric)
    d_nn, g_nn = _pair(E[na], E[nb], metric)
    if t.hinge(d_pp - d_nn + margins.alpha):
        t.grads["positive_a"] += g_pp
        t.grads["positive_b"] -= g_pp
        t.grads["negative_a"] -= g_nn
        t.grads["negative_b"] += g_nn
    return t.result({"positive_a": pa, "positive_b": pb, "negative_a": na, "negative_b": nb})


def anchor_loss(name: str, batch: MiningBatch, k: int = 2, margins: Margins = Margins(),
                metric: Metric = "squared_l2", rng: np.random.Generator | None = None) -> LossResult:
    """Evaluate loss ``name`` for ``batch.anchor_index``, mining the tuple from the batch.

    ``triplet`` draws its negative uniformly with ``rng``; ``quad`` uses the
    nearest positive and the two nearest negatives.  ``msml`` ignores the anchor.
    """
    if name == "trihard":
        return trihard_loss(batch, margins, metric)
    if name == "quit_trihard":
        return quit_trihard_loss(batch, k, margins, metric)
    if name == "quit_quad":
        return quit_quad_loss(batch, k, margins, metric)
    if name == "msml":
        return msml_loss(batch, margins, metric)
    if name == "quad":
        spec = build_tuples(batch, 1, "quad", metric)
        E = batch.embeddings
        res = quadruplet_loss(E[spec.anchor], E[spec.positives[0]], E[spec.negatives[0]],
                              E[spec.negatives[1]], margins, metric)
        res.indices = {"anchor": spec.anchor, "positive": spec.positives[0],
                       "negative_1": spec.negatives[0], "negative_2": spec.negatives[1]}
        return res
    if name == "triplet":
        spec = build_tuples(batch, 1, "triplet", metric, rng=rng)
        E = batch.embeddings
        res = triplet_loss(E[spec.anchor], E[spec.positives[0]], E[spec.negatives[0]], margins, metric)
        res.indices = {"anchor": spec.anchor, "positive": spec.positives[0], "negative": spec.negatives[0]}
        return res
    raise ValueError(f"unknown loss {name!r}; expected one of {LOSSES}")
