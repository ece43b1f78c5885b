"""Quintuplet-loss metric learning on a synthetic multi-view geo-localization city."""
from .embedding import distance, l2_normalize, pairwise_distances
from .losses import (LOSSES, LossResult, Margins, QuintupletTuple, hinge, msml_loss, quadruplet_loss,
                     quit_loss, quit_quad_loss, quit_trihard_loss, trihard_loss, triplet_loss)
from .mining import (GeoNeighborhood, MiningBatch, MiningError, build_tuples, geo_candidates,
                     hardest_negative, k_nearest_positives)
from .dataset import (CityParams, GeoRecord, batch_sampler, generate_city, load_jsonl, save_jsonl,
                      split_dataset)
from .model import Mlp, MlpConfig
from .trainer import Checkpoint, TrainConfig, learning_rate, load_checkpoint, save_checkpoint, train
from .evaluation import EvalReport, emit_report, recall_at_n, retrieve_top_n
from .gradcheck import gradcheck

__version__ = "0.1.0"
