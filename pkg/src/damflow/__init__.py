"""damflow: LSTM-based daily streamflow modeling for basins with reservoirs."""

from .data import (
    BasinRecord,
    DamRecord,
    Dataset,
    FlowSeries,
    ForcingSeries,
    NormalizationSpec,
    apply_normalization,
    degaussianize,
    fit_normalization,
    gaussianize,
    ingest_dataset,
    to_runoff_ratio,
)
from .experiments import ExperimentPlan, build_plan, run_experiment, split_pub
from .lstm import DropoutMasks, LstmDims, LstmWeights, backward, forward, init_weights
from .metrics import MetricsRecord, bias_and_corr, fhv, flv, kge, nse, summarize
from .reservoirs import compute_dor, aggregate_purposes, detect_diversion, stratify
from .synthetic import SyntheticBasinSpec, generate_basin, generate_suite
from .training import (
    AdadeltaState,
    EnsembleModel,
    TrainingConfig,
    adadelta_step,
    predict_ensemble,
    rmse_loss,
    sample_minibatch,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdadeltaState",
    "BasinRecord",
    "DamRecord",
    "Dataset",
    "DropoutMasks",
    "EnsembleModel",
    "ExperimentPlan",
    "FlowSeries",
    "ForcingSeries",
    "LstmDims",
    "LstmWeights",
    "MetricsRecord",
    "NormalizationSpec",
    "SyntheticBasinSpec",
    "TrainingConfig",
    "adadelta_step",
    "aggregate_purposes",
    "apply_normalization",
    "backward",
    "bias_and_corr",
    "build_plan",
    "compute_dor",
    "degaussianize",
    "detect_diversion",
    "fhv",
    "fit_normalization",
    "flv",
    "forward",
    "gaussianize",
    "generate_basin",
    "generate_suite",
    "ingest_dataset",
    "init_weights",
    "kge",
    "nse",
    "predict_ensemble",
    "rmse_loss",
    "run_experiment",
    "sample_minibatch",
    "split_pub",
    "stratify",
    "summarize",
    "to_runoff_ratio",
    "train",
]
