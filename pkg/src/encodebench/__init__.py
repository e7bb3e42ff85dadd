"""Banded ridge encoding models with leakage-aware cross-validation,
autocorrelation controls, and variance-partitioning metrics."""

__version__ = "0.1.0"

from .errors import DataError, ManifestError, MatrixDataError, MatrixFormatError
from .features import (
    FeatureSpace,
    OasmConfig,
    build_oasm,
    build_sentence_length,
    build_sentence_position,
    build_word_position,
    mean_pool_variants,
    oasm_sigma_grid,
    sum_pool,
    sweep_oasm_sigma,
    zscore_fit_apply,
)
from .matrixio import (
    LoadedDataset,
    Manifest,
    NeuralRecording,
    load_manifest,
    load_matrix,
    save_manifest,
    save_matrix,
)
from .metrics import (
    build_comparison_report,
    clip_and_average,
    omega,
    phi,
    r2_oos,
    submodel_max,
)
from .ridge import (
    BandedSearchConfig,
    FitResult,
    RidgeConfig,
    apply_band_scaling,
    banded_search,
    default_alpha_grid,
    enumerate_masks,
    ridge_solve,
    ridge_weights,
    select_best_layer,
)
from .splits import (
    SplitPlan,
    plan_blank,
    plan_fedorenko,
    plan_grouped,
    plan_pereira,
    shuffle_plan,
    validate_plan,
)
from .stats import bh_fdr, chance_level_test, paired_squared_error_ttest
from .synthgen import SynthSpec, generate, preset, write_dataset
from .pipeline import AnalysisConfig, layered_best, run_analysis, star_predictions
