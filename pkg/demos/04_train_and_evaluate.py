"""
Train an embedding and measure Recall@N
=======================================
"""
# %%
from quitlab.experiments import ExperimentConfig, build_records, evaluate_model, run_training, untrained_model

cfg = ExperimentConfig(seed=0)
records = build_records(cfg)
print(cfg.train)

# %%
# Before training, the random MLP already ranks covisible views somewhat well.
before = evaluate_model(untrained_model(cfg, records), records, cfg)
print("untrained", before.recall_at)

# %%
# Training logs one row per epoch and keeps the checkpoint with the best
# validation Recall@1.
ckpt, log = run_training(cfg, records)
for row in log:
    print(row["epoch"], round(row["mean_loss"], 4), row["lr"], round(row["val_recall1"], 3))
print("best epoch", ckpt.epoch)

# %%
after = evaluate_model(ckpt.model, records, cfg, cfg.train.loss, cfg.train.k)
print("trained", after.recall_at)
for q in after.per_query[:3]:
    print(q.query_id, q.top_ids[:3], q.correct)
