"""One-versus-others multimodal attention, baselines, and FLOP accounting."""

from .attention import (MultiHeadParams, cross_attention_fused, cross_attention_pair, multihead_ovo,
                        ovo_context, ovo_layer, ovo_score, scaled_dot_attention, self_attention_fused)
from .estimator import MultimodalFusionClassifier
from .flops import (SCHEMES, FlopCounter, analytic_breakdown, analytic_flops, delta_flops, leading_term,
                    loglog_slope)
from .fusion import FusionConfig, FusionModel, grad_check, load_checkpoint, save_checkpoint
from .simdata import SimConfig, SimDataset, generate, split
from .train import TrainConfig, evaluate, fit, grid_search, multi_seed, t_test

__version__ = "0.1.0"

__all__ = [
    "MultiHeadParams", "cross_attention_fused", "cross_attention_pair", "multihead_ovo", "ovo_context",
    "ovo_layer", "ovo_score", "scaled_dot_attention", "self_attention_fused", "MultimodalFusionClassifier",
    "SCHEMES", "FlopCounter", "analytic_breakdown", "analytic_flops", "delta_flops", "leading_term",
    "loglog_slope", "FusionConfig", "FusionModel", "grad_check", "load_checkpoint", "save_checkpoint",
    "SimConfig", "SimDataset", "generate", "split", "TrainConfig", "evaluate", "fit", "grid_search",
    "multi_seed", "t_test",
]
