"""kdrec: compress a multi-modal graph recommender into a lightweight
ID-embedding recommender via prompt-tuned knowledge distillation."""

from .data_io import (DatasetBundle, ModalityFeatureSet, PcaReducer,
                      dataset_stats, fit_pca, gen_synthetic, load_dataset,
                      load_features, load_interactions, save_dataset,
                      save_features)
from .distill import (DisentangledLogits, LossWeights, bpr_loss,
                      disentangled_list_kd, emb_kd_loss, joint_loss,
                      list_kd_loss, pair_kd_loss, soften_list, vanilla_list_kd)
from .evaluation import EvalResult, evaluate, ranking_metrics
from .graph import (BprTriplet, InteractionGraph, RankList, build_graph,
                    normalized_adjacency, sample_bpr_batch, sample_rank_lists)
from .numerics import AdamW, Param, component_rng, dropout_forward, spmm, xavier_init
from .pipeline import TrainConfig, distill_student, run_ablation, train_teacher
from .student import StudentModel, student_param_count, student_score
from .teacher import TeacherModel

__version__ = "0.1.0"

__all__ = [
    "AdamW", "BprTriplet", "DatasetBundle", "DisentangledLogits", "EvalResult",
    "InteractionGraph", "LossWeights", "ModalityFeatureSet", "Param",
    "PcaReducer", "RankList", "StudentModel", "TeacherModel", "TrainConfig",
    "bpr_loss", "build_graph", "component_rng", "dataset_stats",
    "disentangled_list_kd", "distill_student", "dropout_forward", "emb_kd_loss",
    "evaluate", "fit_pca", "gen_synthetic", "joint_loss", "list_kd_loss",
    "load_dataset", "load_features", "load_interactions", "normalized_adjacency",
    "pair_kd_loss", "ranking_metrics", "run_ablation", "sample_bpr_batch",
    "sample_rank_lists", "save_dataset", "save_features", "soften_list", "spmm",
    "student_param_count", "student_score", "train_teacher", "vanilla_list_kd",
    "xavier_init",
]
