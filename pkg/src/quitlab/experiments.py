"""Experiment configuration and the seeded train/evaluate/sweep/compare runs behind the CLI."""
from __future__ import annotations

import json
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .dataset import CityParams, DatasetError, generate_city, load_jsonl, select, split_dataset
from .evaluation import DEFAULT_NS, EvalReport, recall_at_n
from .losses import LOSSES, Margins
from .model import Mlp, MlpConfig, config_hash
from .trainer import TrainConfig, embed, train

CONFIG_VERSION = 1

# Desk-scale city is the generator default: strong city-wide nuisance
# variation, and shifted views that mostly show another place's content.
DESK_CITY = CityParams()
# Step schedule (x0.5 every 5 epochs, patience 10) at a desk-scale
# step size; squared distances collapse under hardest-negative mining here.
DESK_TRAIN = TrainConfig(lr0=1.0, metric="l2")


def derive_seed(root: int, component: str) -> int:
    """Stable per-component seed split off the root seed."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(component.encode())])
    return int(ss.generate_state(1)[0])


@dataclass
class ExperimentConfig:
    seed: int = 0
    city: CityParams = DESK_CITY
    data: str | None = None
    split_fractions: tuple = (1 / 3, 1 / 3, 1 / 3)
    mlp: MlpConfig = field(default_factory=MlpConfig)
    train: TrainConfig = DESK_TRAIN
    eval_ns: tuple = DEFAULT_NS
    threshold_m: float = 25.0
    out: str = "runs"
    version: int = CONFIG_VERSION

    def seeded(self) -> "ExperimentConfig":
        """Copy with every component seed derived from ``self.seed``."""
        return replace(
            self,
            city=replace(self.city, seed=derive_seed(self.seed, "city")),
            mlp=replace(self.mlp, input_dim=self.city.feature_dim, seed=derive_seed(self.seed, "mlp")),
            train=replace(self.train, seed=derive_seed(self.seed, "train")),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        d["eval_ns"] = list(self.eval_ns)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("version", None)
        if version != CONFIG_VERSION:
            raise ValueError(f"config version must be {CONFIG_VERSION}, got {version!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        base = cls()
        if "city" in d:
            d["city"] = replace(base.city, **d["city"])
        if "mlp" in d:
            d["mlp"] = replace(base.mlp, **d["mlp"])
        if "train" in d:
            t = dict(d["train"])
            if "margins" in t:
                t["margins"] = Margins(**t["margins"])
            d["train"] = replace(base.train, **t)
        for key in ("split_fractions", "eval_ns"):
            if key in d:
                d[key] = tuple(d[key])
        return replace(base, **d)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def build_records(cfg: ExperimentConfig) -> list:
    """Split-tagged records from ``cfg.data`` or a freshly generated city.

    Files whose records are all tagged ``train`` get split here.
    """
    cfg = cfg.seeded()
    if cfg.data is not None:
        records = load_jsonl(cfg.data)
        if not records:
            raise DatasetError(f"{cfg.data}: no records")
        if {r.split for r in records} != {"train"}:
            return records
    else:
        records = generate_city(cfg.city)
    return split_dataset(records, cfg.split_fractions, derive_seed(cfg.seed, "split"))


def _feature_dim(records) -> int:
    return int(records[0].features.shape[0])


def evaluate_model(model: Mlp, records, cfg: ExperimentConfig, method: str = "", k: int | None = None) -> EvalReport:
    queries, database = select(records, "query"), select(records, "database")
    if not queries or not database:
        raise DatasetError("records contain no query/database split to evaluate on")
    return recall_at_n(queries, embed(model, queries), database, embed(model, database), cfg.eval_ns,
                       cfg.threshold_m, cfg.train.metric, method, k, config_hash(cfg.train, model.config))


def run_training(cfg: ExperimentConfig, records):
    """Train with seeds derived from ``cfg.seed``; returns ``(checkpoint, log rows)``."""
    cfg = cfg.seeded()
    mc = replace(cfg.mlp, input_dim=_feature_dim(records))
    return train(select(records, "train"), select(records, "val"), cfg.train, mc)


def untrained_model(cfg: ExperimentConfig, records) -> Mlp:
    cfg = cfg.seeded()
    return Mlp(replace(cfg.mlp, input_dim=_feature_dim(records)))


def run_experiment(cfg: ExperimentConfig, records=None) -> EvalReport:
    """Train then evaluate on the query/database split; one results-table row."""
    records = build_records(cfg) if records is None else records
    ckpt, _ = run_training(cfg, records)
    return evaluate_model(ckpt.model, records, cfg, cfg.train.loss, cfg.train.k)


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("QUITLAB_THREADS", "1")))
    except ValueError:
        return 1


def _run_all(configs, records) -> list:
    workers = min(_worker_count(), len(configs))
    if workers <= 1:
        return [run_experiment(c, records) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_experiment, configs, [records] * len(configs)))


def sweep_k(cfg: ExperimentConfig, ks, records=None) -> list:
    """One model per k, identical seeds and data otherwise."""
    records = build_records(cfg) if records is None else records
    configs = [replace(cfg, train=replace(cfg.train, k=int(k))) for k in ks]
    return _run_all(configs, records)


def compare_losses(cfg: ExperimentConfig, losses=LOSSES, records=None) -> list:
    """One row per loss under identical seeds and data."""
    for name in losses:
        if name not in LOSSES:
            raise ValueError(f"unknown loss {name!r}; expected one of {LOSSES}")
    records = build_records(cfg) if records is None else records
    configs = [replace(cfg, train=replace(cfg.train, loss=name)) for name in losses]
    return _run_all(configs, records)
