"""Goal-directed dialogue path planning over a feedback-perturbed bridge latent space."""

from .bridge import (
    BridgeConfig,
    GaussParams,
    alignment_score,
    decay,
    perturbed_bridge,
    sample_point,
    sample_trajectory,
    standard_bridge,
)
from .corpus import (
    Batch,
    BatchItem,
    Corpus,
    Dialogue,
    PathPoint,
    TupleSample,
    build_tuples,
    load_corpus,
    sample_batch,
    save_corpus,
    split_ood,
)
from .embedder import Featurizer, featurize, featurize_pair
from .encoder import (
    EncoderParams,
    EncoderTrainConfig,
    contrastive_loss,
    encode_feedback,
    encode_point,
    loss_gradients,
    train_encoder,
)
from .evaluation import (
    TopicGraph,
    TurnPrediction,
    bigram_f1,
    goal_success,
    micro_f1,
    self_play,
)
from .planner import (
    PlanInput,
    PlannerParams,
    PlannerTrainConfig,
    decode_path,
    format_prompt,
    plan,
    predict_T,
    train_planner,
)

__version__ = "0.1.0"

__all__ = [
    "BridgeConfig",
    "GaussParams",
    "alignment_score",
    "decay",
    "perturbed_bridge",
    "sample_point",
    "sample_trajectory",
    "standard_bridge",
    "Batch",
    "BatchItem",
    "Corpus",
    "Dialogue",
    "PathPoint",
    "TupleSample",
    "build_tuples",
    "load_corpus",
    "sample_batch",
    "save_corpus",
    "split_ood",
    "Featurizer",
    "featurize",
    "featurize_pair",
    "EncoderParams",
    "EncoderTrainConfig",
    "contrastive_loss",
    "encode_feedback",
    "encode_point",
    "loss_gradients",
    "train_encoder",
    "TopicGraph",
    "TurnPrediction",
    "bigram_f1",
    "goal_success",
    "micro_f1",
    "self_play",
    "PlanInput",
    "PlannerParams",
    "PlannerTrainConfig",
    "decode_path",
    "format_prompt",
    "plan",
    "predict_T",
    "train_planner",
]
