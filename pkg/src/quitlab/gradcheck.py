"""Central finite-difference verification of the analytic loss and model gradients.

Random instances whose hinge arguments, mining choices, ReLU pre-activations
or pre-normalization output norms sit within ``KINK_MARGIN`` of a switch point
are resampled, since the loss is not differentiable there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import LOSSES, Margins, anchor_loss, quadruplet_loss, triplet_loss
from .mining import MiningBatch, anchor_distances
from .embedding import pairwise_distances
from .model import Mlp, MlpConfig
from .trainer import TrainConfig

STEP = 1e-5
KINK_MARGIN = 1e-3
LOSS_TOL = 1e-5
MODEL_TOL = 1e-4

_PLACES = np.repeat(np.arange(3), 3)
_DIM = 4


@dataclass
class GradcheckReport:
    loss: str
    metric: str
    through_model: bool
    trials: int
    skipped: int
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def numerical_gradient(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (perturbed in place, then restored)."""
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + step
        fp = f()
        x.flat[i] = old - step
        fm = f()
        x.flat[i] = old
        g.flat[i] = (fp - fm) / (2 * step)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(diff / scale)


def _gap(sorted_vals, cut):
    # distance between the cut-th smallest value and its successor
    if cut >= len(sorted_vals):
        return np.inf
    return sorted_vals[cut] - sorted_vals[cut - 1]


def selection_margin(loss: str, batch: MiningBatch, k: int, metric: str) -> float:
    """How far the mined tuple is from changing (smallest competing distance gap)."""
    if loss == "msml":
        dist = pairwise_distances(batch.embeddings, batch.embeddings, metric)
        iu = np.triu_indices(len(batch), 1)
        same = (batch.places[:, None] == batch.places[None, :])[iu]
        pos = np.sort(dist[iu][same])[::-1]
        neg = np.sort(dist[iu][~same])
        return min(_gap(-pos, 1), _gap(neg, 1))
    d = anchor_distances(batch, metric)
    a = batch.anchor_index
    same = batch.places == batch.places[a]
    same[a] = False
    pos = np.sort(d[same])
    neg = np.sort(d[batch.places != batch.places[a]])
    kk = 1 if loss in ("triplet", "trihard", "quad") else k
    gaps = [_gap(pos, kk)]
    if loss in ("trihard", "quit_trihard"):
        gaps.append(_gap(neg, 1))
    elif loss in ("quad", "quit_quad"):
        gaps += [_gap(neg, 1), _gap(neg, 2)]
    return float(min(gaps))


def _tuple_trial(loss, rng, margins, metric):
    roles = 3 if loss == "triplet" else 4
    x = rng.standard_normal((roles, _DIM))
    fn = triplet_loss if loss == "triplet" else quadruplet_loss
    res = fn(*x, margins=margins, metric=metric)
    if min(abs(a) for a in res.hinge_args) < KINK_MARGIN:
        return None
    analytic = np.stack(list(res.grads.values()))
    return analytic, (lambda: fn(*x, margins=margins, metric=metric).value), x


def _batch_trial(loss, rng, k, margins, metric):
    E = rng.standard_normal((len(_PLACES), _DIM))
    batch = MiningBatch(E, _PLACES, anchor_index=int(rng.integers(len(_PLACES))))
    res = anchor_loss(loss, batch, k, margins, metric)
    if min(abs(a) for a in res.hinge_args) < KINK_MARGIN or selection_margin(loss, batch, k, metric) < KINK_MARGIN:
        return None
    return res.batch_gradient(len(batch)), (lambda: anchor_loss(loss, batch, k, margins, metric).value), E


def _model_trial(loss, rng, tc):
    # one anchor's loss differentiated w.r.t. every MLP parameter
    mc = MlpConfig(input_dim=5, hidden_dims=(4,), output_dim=_DIM, seed=int(rng.integers(2**31)))
    # random biases too: zero biases make collinear (coincident once normalized) rows common
    model = Mlp(mc, [rng.standard_normal(p.shape) for p in Mlp(mc).params])
    X = rng.standard_normal((len(_PLACES), mc.input_dim))
    anchor = int(rng.integers(len(_PLACES)))
    rng_seed = int(rng.integers(2**31))
    emb, cache = model.forward(X, return_cache=True)
    if min(np.abs(z).min() for z in cache[1][:-1]) < KINK_MARGIN:
        return None
    if np.linalg.norm(cache[1][-1], axis=1).min() < KINK_MARGIN:
        return None  # normalization is singular at the zero vector

    def loss_at(E):
        b = MiningBatch(E, _PLACES, anchor)
        return b, anchor_loss(tc.loss, b, tc.k, tc.margins, tc.metric, np.random.default_rng(rng_seed))

    batch, res = loss_at(emb)
    if min(abs(v) for v in res.hinge_args) < KINK_MARGIN or selection_margin(tc.loss, batch, tc.k, tc.metric) < KINK_MARGIN:
        return None
    analytic = np.concatenate([g.ravel() for g in model.backward(cache, res.batch_gradient(len(batch)))])
    flat = np.concatenate([p.ravel() for p in model.params])

    def value():
        offset = 0
        for p in model.params:
            p[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size
        return loss_at(model.forward(X))[1].value

    return analytic, value, flat


def gradcheck(loss: str, trials: int = 100, seed: int = 0, through_model: bool = False,
              metric: str = "squared_l2", k: int = 2, margins: Margins = Margins(), perturb=None,
              max_attempts: int = 100_000) -> GradcheckReport:
    """Worst relative error between analytic and finite-difference gradients.

    ``perturb`` (test hook) maps the analytic gradient before comparison.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    rng = np.random.default_rng(seed)
    tc = TrainConfig(loss=loss, k=k, margins=margins, metric=metric)
    worst, done, skipped = 0.0, 0, 0
    while done < trials:
        if done + skipped >= max_attempts:
            raise RuntimeError(f"{loss}: could not draw {trials} kink-free instances")
        if through_model:
            trial = _model_trial(loss, rng, tc)
        elif loss in ("triplet", "quad"):
            trial = _tuple_trial(loss, rng, margins, metric)
        else:
            trial = _batch_trial(loss, rng, k, margins, metric)
        if trial is None:
            skipped += 1
            continue
        analytic, f, x = trial
        if perturb is not None:
            analytic = perturb(analytic)
        worst = max(worst, relative_error(analytic, numerical_gradient(f, x)))
        done += 1
    return GradcheckReport(loss, metric, through_model, trials, skipped, worst,
                           MODEL_TOL if through_model else LOSS_TOL)
