"""
Comparing losses and sweeping k
===============================

The same data and seeds for every run, so differences come from the loss.
Set QUITLAB_THREADS to run the variants in parallel.
"""
# %%
from quitlab.evaluation import write_results_csv
from quitlab.experiments import ExperimentConfig, build_records, compare_losses, sweep_k

cfg = ExperimentConfig(seed=1)
records = build_records(cfg)

# %%
reports = compare_losses(cfg, records=records)
write_results_csv(reports, "/dev/stdout")

# %%
# k is the number of nearest positives per anchor.  The city has two
# covisible views per place, so k beyond 2 mostly adds shifted views.
write_results_csv(sweep_k(cfg, [1, 2, 3, 4], records), "/dev/stdout")
