//! Fidelity metrics for surrogate profiles: pointwise errors, SSIM, MMD,
//! simple statistics with significance tests, feature correlations and
//! Q-Q quantiles, plus the report tables built from them.

mod correlation;
mod features;
mod hmm_hist;
mod metrics;
mod qq;
mod report;
mod stats;

pub use correlation::{
    correlation_index, correlation_matrix, index_from_matrix, mean_average_precision, rank_of, top_k_vote,
    vote_histogram, CorrIndex,
};
pub use features::{
    autocorrelation, extract_features, feature_names, zscore_columns, FeatureManifest, FeatureVector, ZScaler,
    ACF_LAGS, FEATURE_COUNT, FEATURE_SCHEMA_VERSION, QUANTILES,
};
pub use hmm_hist::hmm_state_histogram;
pub use metrics::{
    cosine_similarity, dynamic_range, mae, mape, median_heuristic, mmd2, pearson, pointwise_metrics, rmse, ssim,
    ssim_constants, Bandwidth, PointMetrics, SeriesPair,
};
pub use qq::{pool_quantiles, qq_levels, qq_quantiles, quantile_sorted, QqPoint};
pub use report::{
    evaluate, pair_metrics, AggregateRow, EvalOptions, EvalReport, ModelCorr, ModelSet, PairMetrics, SimpleStatsTable,
    METRIC_NAMES, REAL_LABEL, REPORT_FILES,
};
pub use stats::{
    bonferroni, mann_whitney_u, mean_std, significance_label, simple_stats, MannWhitney, SimpleStats, SIMPLE_STAT_NAMES,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 jointly present slots, got {0}")]
    TooShort(usize),
    #[error("series is constant, correlation undefined")]
    ConstantSeries,
    #[error("window {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("empty sample")]
    EmptyPool,
    #[error("kernel bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("feature vectors have {0} and {1} entries")]
    SchemaMismatch(usize, usize),
    #[error("no real profile pairs with synthetic profile {0}")]
    Unpaired(String),
    #[error("profiles {0} and {1} do not overlap in time")]
    NoOverlap(String, String),
}
