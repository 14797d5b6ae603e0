"""Multimodal behavioral-sensing features and joint construct prediction."""

from .core import (
    Construct,
    ConstructId,
    ModalityKind,
    PipelineConfig,
    clamp_to_range,
    construct_registry,
    load_config,
    validate_config,
)
from .ensemble import (
    FoldPlan,
    PredictionBundle,
    build_bundle,
    make_fold_plan,
    run_joint_model,
)
from .evaluation import (
    MonotoneComposite,
    delta_tau,
    discriminant_matrix,
    expected_value_baseline,
    gemm_tau,
    kendall_tau,
    reliability_report,
    smape,
)
from .ingest import FeatureMatrix, GroundTruthTable, TimeSeries, Universe
from .synth import CohortSpec, generate

__version__ = "0.1.0"

__all__ = [
    "Construct", "ConstructId", "ModalityKind", "PipelineConfig",
    "clamp_to_range", "construct_registry", "load_config", "validate_config",
    "FoldPlan", "PredictionBundle", "build_bundle", "make_fold_plan",
    "run_joint_model", "MonotoneComposite", "delta_tau", "discriminant_matrix",
    "expected_value_baseline", "gemm_tau", "kendall_tau", "reliability_report",
    "smape", "FeatureMatrix", "GroundTruthTable", "TimeSeries", "Universe",
    "CohortSpec", "generate", "__version__",
]
