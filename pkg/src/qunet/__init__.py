"""Qu-Net: U-Net segmentation with a quantum feature-extraction bottleneck."""
from .data import Partition, Sample, bilinear_resize, load_dataset, make_partitions, synth_dataset
from .estimators import QuFeXTransformer, QuNetSegmenter
from .exceptions import ConfigurationError, IngestionError, ShapeError, UsageError
from .harness import RunResult, SummaryStats, aggregate_stats, iou, mean_iou, run_protocol, train
from .models import ModelConfig, Scale, SegmentationNet, Variant, build_model, count_params, reconcile_params
from .qsim import CircuitTemplate, Gate, GateKind, StateVector, apply_gate, param_shift_grad, run_circuit
from .qufex import QuFeX, QuFeXLayer, build_template

__version__ = "0.1.0"

__all__ = [
    "CircuitTemplate", "ConfigurationError", "Gate", "GateKind", "IngestionError", "ModelConfig",
    "Partition", "QuFeX", "QuFeXLayer", "QuFeXTransformer", "QuNetSegmenter", "RunResult", "Sample",
    "Scale", "SegmentationNet", "ShapeError", "StateVector", "SummaryStats", "UsageError", "Variant",
    "aggregate_stats", "apply_gate", "bilinear_resize", "build_model", "build_template", "count_params",
    "iou", "load_dataset", "make_partitions", "mean_iou", "param_shift_grad", "reconcile_params",
    "run_circuit", "run_protocol", "synth_dataset", "train",
]
