"""A small ReLU MLP embedding network with hand-written backprop."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .embedding import l2_normalize_rows


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 32
    hidden_dims: tuple = (64,)
    output_dim: int = 16
    activation: str = "relu"
    final_l2_normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("layer sizes must be positive")

    @property
    def layer_dims(self) -> list:
        return [self.input_dim, *self.hidden_dims, self.output_dim]


def config_hash(*configs) -> str:
    payload = json.dumps([asdict(c) for c in configs], sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class Mlp:
    """``params`` alternates weight matrices ``(fan_in, fan_out)`` and bias vectors."""

    def __init__(self, config: MlpConfig, params=None):
        self.config = config
        if params is None:
            rng = np.random.default_rng(config.seed)
            params = []
            for fan_in, fan_out in zip(config.layer_dims[:-1], config.layer_dims[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
                params.append(np.zeros(fan_out))
        self.params = [np.array(p, dtype=np.float64) for p in params]
        dims = config.layer_dims
        expected = [s for a, b in zip(dims[:-1], dims[1:]) for s in ((a, b), (b,))]
        if [p.shape for p in self.params] != expected:
            raise ValueError(f"parameter shapes {[p.shape for p in self.params]} do not match {expected}")

    def copy(self) -> "Mlp":
        return Mlp(self.config, [p.copy() for p in self.params])

    def forward(self, X, return_cache: bool = False):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.config.input_dim:
            raise ValueError(f"expected features of shape (n, {self.config.input_dim}), got {X.shape}")
        acts, pre = [X], []
        h = X
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            pre.append(z)
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
            acts.append(h)
        norm_cache = None
        if self.config.final_l2_normalize:
            h, norms, degenerate = l2_normalize_rows(h)
            norm_cache = (h, norms, degenerate)
        if return_cache:
            return h, (acts, pre, norm_cache)
        return h

    def backward(self, cache, grad_out) -> list:
        """Parameter gradients given d(loss)/d(output embeddings)."""
        acts, pre, norm_cache = cache
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != acts[-1].shape:
            raise ValueError(f"gradient shape {g.shape} does not match output {acts[-1].shape}")
        if norm_cache is not None:
            y, norms, degenerate = norm_cache
            proj = g - y * np.sum(y * g, axis=1, keepdims=True)
            g = np.where(degenerate[:, None], g, proj / np.where(degenerate, 1.0, norms)[:, None])
        grads = [None] * len(self.params)
        for i in reversed(range(len(pre))):
            if i < len(pre) - 1:
                g = g * (pre[i] > 0)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i:
                g = g @ self.params[2 * i].T
        return grads

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "params": [p.tolist() for p in self.params]}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        cfg = dict(d["config"])
        cfg["hidden_dims"] = tuple(cfg["hidden_dims"])
        return cls(MlpConfig(**cfg), [np.array(p, dtype=np.float64) for p in d["params"]])
