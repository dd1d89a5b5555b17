"""Open-vocabulary detection pipeline over region embeddings."""

from .attention import AttentionConfig, AttentionMap, NormalizedMask
from .embedding import CategorySpace, EmbeddingRecord
from .evaluation import EvalReport, GroundTruthBox
from .geometry import BBox, JitterConfig, Proposal
from .infer import Detection, InferenceConfig
from .prototype import ClassifierBank, PrototypeBank, TrainConfig
from .pseudolabel import ClusterModel, PseudoLabel
from .synth import SynthConfig

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "AttentionMap",
    "BBox",
    "CategorySpace",
    "ClassifierBank",
    "ClusterModel",
    "Detection",
    "EmbeddingRecord",
    "EvalReport",
    "GroundTruthBox",
    "InferenceConfig",
    "JitterConfig",
    "NormalizedMask",
    "Proposal",
    "PrototypeBank",
    "PseudoLabel",
    "SynthConfig",
    "TrainConfig",
    "__version__",
]
