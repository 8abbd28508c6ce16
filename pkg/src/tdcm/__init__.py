"""Time-delayed cross-mapping toolkit: causal-strength curves over delay
windows, direct-causality screening via partial cross mapping, validation
driven feature selection, and PLS soft-sensor training."""

__version__ = "0.1.0"

from .dataset import (
    AccessLog,
    Dataset,
    FeatureId,
    NormalizationParams,
    SplitSpec,
    SupervisedMatrix,
    TimeSeries,
    build_supervised,
    chronological_split,
    fit_minmax,
    load_csv,
    normalize_minmax,
)
from .embedding import (
    EmbeddingConfig,
    EmbeddingSelection,
    FnnProfile,
    Manifold,
    embed,
    fnn_profile,
    select_embedding_dim,
)
from .crossmap import (
    CausalCurve,
    CrossMapPrediction,
    CurveSet,
    ManifoldSet,
    NeighborSet,
    NeighborTable,
    ccm_rho,
    compute_tdccm_curves,
    convergence_scan,
    cross_map_predict,
    knn_query,
    pearson,
    simplex_weights,
    tdccm_curve,
)
from .partial_crossmap import (
    DelayDecision,
    DelayResolution,
    PartialCorrelation,
    PrecisionResult,
    TdpcmResult,
    compute_tdpcm_curves,
    local_maxima,
    optimal_delay,
    partial_pcc,
    partial_pcc_detailed,
    path_delay,
    precision_matrix,
    resolve_delays,
    tdpcm_curve,
    tdpcm_optimal_delay,
)
from .feature_selection import (
    SelectionResult,
    build_threshold_candidates,
    monotonicity_check,
    optimize_threshold,
    select_features_for_threshold,
)
from .soft_sensor import (
    Metrics,
    PlsModel,
    StabilitySweep,
    WilcoxonResult,
    metrics_eval,
    pls_fit,
    pls_predict,
    stability_sweep,
    wilcoxon_signed_rank,
)
from .synthetic import (
    GroundTruth,
    SystemSpec,
    chain_spec,
    fork_spec,
    gen_chain,
    gen_fork,
    generate,
)
from .errors import ConfigError, DataError, NumericalError, ToolError
