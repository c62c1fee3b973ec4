"""Text-conditioned denoising for video moment retrieval."""

from .config import ABLATIONS, RunConfig, ablation_config, load_config
from .data import Annotation, ClipFeatures, QueryFeatures, Sample, SynthConfig, dataset_statistics, generate_synthetic, load_dataset, save_dataset
from .errors import ConfigError, DataError, NumericError
from .estimator import MomentRetriever, NoiseMaskTransformer
from .metrics import EvalReport, evaluate
from .model import MomentRetrievalNet

__all__ = [
    "ABLATIONS",
    "Annotation",
    "ClipFeatures",
    "ConfigError",
    "DataError",
    "EvalReport",
    "MomentRetrievalNet",
    "MomentRetriever",
    "NoiseMaskTransformer",
    "NumericError",
    "QueryFeatures",
    "RunConfig",
    "Sample",
    "SynthConfig",
    "ablation_config",
    "dataset_statistics",
    "evaluate",
    "generate_synthetic",
    "load_config",
    "load_dataset",
    "save_dataset",
]

__version__ = "0.1.0"
