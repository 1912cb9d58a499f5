"""Hybrid flow-based intrusion detection: a Random Forest misuse filter in
front of a variational autoencoder anomaly detector."""

__version__ = "0.1.0"

from .errors import DataError, FlowParseError, HybridNIDSError, SchemaMismatchError, TrainingError
from .evaluation import evaluate, roc_auc, run_filter_comparison, run_hybrid_comparison, run_novelty
from .features import (
    FeatureSchema,
    MinMaxNormalizer,
    SampleSet,
    WindowFeatureExtractor,
    extract_dataset,
    read_samples,
    write_samples,
)
from .flows import ClassLabel, FlowRecord, parse_flow_line, stream_flows, write_flows
from .forest import RandomForest, balance_binary, balance_multiclass, load_forest, save_forest
from .pipeline import DetectionResult, HybridDetector, load_detector, run_pipeline
from .synth import GenConfig, generate, generate_flows
from .vae import VariationalAutoencoder, load_vae, save_vae, select_threshold

__all__ = [
    "ClassLabel", "DataError", "DetectionResult", "FeatureSchema", "FlowParseError", "FlowRecord",
    "GenConfig", "HybridDetector", "HybridNIDSError", "MinMaxNormalizer", "RandomForest", "SampleSet",
    "SchemaMismatchError", "TrainingError", "VariationalAutoencoder", "WindowFeatureExtractor",
    "balance_binary", "balance_multiclass", "evaluate", "extract_dataset", "generate",
    "generate_flows", "load_detector", "load_forest", "load_vae", "parse_flow_line", "read_samples",
    "roc_auc", "run_filter_comparison", "run_hybrid_comparison", "run_novelty", "run_pipeline",
    "save_forest", "save_vae", "select_threshold", "stream_flows", "write_flows", "write_samples",
]
