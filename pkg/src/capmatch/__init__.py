"""capmatch: text-video retrieval over precomputed embeddings.

The engine trains and evaluates query-video matching enhanced by auxiliary
captions: caption-video pairs augment the training batch, a cross-modal
interaction module folds caption context into the frame embeddings, and a
query-caption branch contributes a fused retrieval score.
"""

from .archive import (EmbeddingArchive, QueryItem, SynthConfig, VideoItem,
                      read_archive, synthesize, write_archive)
from .caption_branch import (CaptionBranchParams, aggregate_captions,
                             init_caption_branch, query_caption_similarity)
from .captions import FilteredCaptions, build_augmentation_pairs, filter_captions
from .evaluator import (FusionConfig, RetrievalReport, evaluate_archive,
                        fused_score, rank_all, retrieve_topk)
from .interaction import (InteractionConfig, enhance, init_interaction_params,
                          interact_coattn, interact_cross, interact_mlp,
                          interact_sum)
from .matching import (MatchMode, PoolingParams, finegrained_similarity,
                       global_similarity, init_pooling_params, similarity_matrix)
from .model import ModelParams, init_model_params
from .objective import (AdamState, Temperature, adam_step, lr_schedule,
                        symmetric_ce, total_loss)
from .tensor import GradTape, Tensor, backward, l2_normalize, layer_norm, softmax_rows
from .trainer import (TrainConfig, Trainer, checkpoint_load, checkpoint_save,
                      run_ablation, standard_grid, train)

__version__ = "0.1.0"

__all__ = [
    "EmbeddingArchive", "QueryItem", "VideoItem", "SynthConfig",
    "read_archive", "write_archive", "synthesize",
    "FilteredCaptions", "filter_captions", "build_augmentation_pairs",
    "MatchMode", "PoolingParams", "init_pooling_params",
    "global_similarity", "finegrained_similarity", "similarity_matrix",
    "InteractionConfig", "init_interaction_params", "enhance",
    "interact_sum", "interact_mlp", "interact_cross", "interact_coattn",
    "CaptionBranchParams", "init_caption_branch", "aggregate_captions",
    "query_caption_similarity",
    "Temperature", "AdamState", "symmetric_ce", "total_loss", "adam_step",
    "lr_schedule",
    "ModelParams", "init_model_params",
    "TrainConfig", "Trainer", "train", "checkpoint_save", "checkpoint_load",
    "run_ablation", "standard_grid",
    "FusionConfig", "RetrievalReport", "fused_score", "rank_all",
    "retrieve_topk", "evaluate_archive",
    "Tensor", "GradTape", "backward", "l2_normalize", "softmax_rows",
    "layer_norm",
]
