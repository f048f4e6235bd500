"""Dynamic heterogeneous registration graphs and GCN-family detectors for account-registration fraud."""
from .graph import DynamicHeteroGraph, NodeType, normalize_adjacency
from .ingest import RegistrationRecord, TimeWindowing, build_graph, parse_records
from .models import ModelConfig, build_model
from .evaluation import TrainConfig, average_precision, train, week_split
from .partition import partition
from .synthgen import GeneratorConfig, generate

__version__ = "0.1.0"

__all__ = [
    "DynamicHeteroGraph",
    "GeneratorConfig",
    "ModelConfig",
    "NodeType",
    "RegistrationRecord",
    "TimeWindowing",
    "TrainConfig",
    "average_precision",
    "build_graph",
    "build_model",
    "generate",
    "normalize_adjacency",
    "parse_records",
    "partition",
    "train",
    "week_split",
]
