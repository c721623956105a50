"""Streaming anomaly detection with a sequence memory and a likelihood filter."""

from ._backend import BACKEND
from .anomaly import AnomalyLikelihood, AnomalyOutput, LikelihoodConfig, raw_score
from .ingest import Detector, PipelineConfig, Record, run_multi, run_stream
from .multi import Combiner, MultiConfig
from .sdr import Sdr
from .tm import TemporalMemory, TmConfig

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AnomalyLikelihood", "AnomalyOutput", "LikelihoodConfig", "raw_score",
    "Detector", "PipelineConfig", "Record", "run_multi", "run_stream",
    "Combiner", "MultiConfig", "Sdr", "TemporalMemory", "TmConfig",
]
