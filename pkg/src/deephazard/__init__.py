"""Continuous-time neural hazard models trained by importance sampling."""

from .data import (
    DataError,
    SplitPlan,
    Standardization,
    SurvivalDataset,
    SurvivalRecord,
    load_csv,
    make_splits,
    save_csv,
    standardize,
)
from .estimator import (
    ImportanceSampleSet,
    LossValue,
    cumulative_hazard_estimate,
    loglik_estimate,
    minibatch_loss,
    sample_times,
    survival_curve,
    survival_predict,
)
from .hazard import (
    ArchitectureVariant,
    HazardModel,
    density,
    hazard,
    log_hazard,
    make_architecture,
    phi,
)
from .metrics import (
    CensoringEstimator,
    MetricReport,
    PairedResults,
    brier_ipcw,
    c_index_ipcw,
    corrected_ttest,
    event_quantile_horizons,
    km_censoring,
    roc_auc_ipcw,
)
from .nn import NetworkSpec, ParameterSet, backward, forward, init_parameters
from .synth import GeneratorSpec, GroundTruth, generate, ground_truth_c_index
from .trainer import DivergenceError, TrainConfig, TrainHistory, adaptive_update, train, validation_loglik

__version__ = "0.1.0"
