"""Token-pooled sequence verification at desk scale.

A small float64 stack: a reverse-mode engine, a multi-head
self-attention encoder with residual key-value memory layers, class
token pooling with a shrinking sampling schedule, teacher-student
distillation, and the verification metrics (EER, minimum DCF) to judge
the result.
"""

from .autodiff import Graph, Tensor, backward, finite_diff_check
from .config import RunConfig, load_config, save_config
from .data import CorpusSpec, FeatureSequence, gen_synthetic_corpus
from .distill import EraseSpec, ModelPair, kld_loss, random_erase
from .encoder import AttentionRecord, EncoderConfig, EncoderParams, encoder_forward
from .metrics import DCF08, DCF10, DcfParams, ScoreSet, compute_eer, compute_min_dcf
from .model import TokenPoolingModel
from .tokens import TokenMatrix, build_schedule, sample_tokens, supervector_view
from .verification import Trial, TrialSet, cosine_score, extract_embedding, score_trials

__all__ = [
    "AttentionRecord", "CorpusSpec", "DCF08", "DCF10", "DcfParams",
    "EncoderConfig", "EncoderParams", "EraseSpec", "FeatureSequence",
    "Graph", "ModelPair", "RunConfig", "ScoreSet", "Tensor",
    "TokenMatrix", "TokenPoolingModel", "Trial", "TrialSet",
    "backward", "build_schedule", "compute_eer", "compute_min_dcf",
    "cosine_score", "encoder_forward", "extract_embedding",
    "finite_diff_check", "gen_synthetic_corpus", "kld_loss",
    "load_config", "random_erase", "sample_tokens", "save_config",
    "score_trials", "supervector_view",
]

__version__ = "0.1.0"
