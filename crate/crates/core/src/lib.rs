//! Probabilistic cluster-level latent factor model for cross-domain
//! collaborative filtering.
//!
//! Users and items of several rating domains are co-clustered jointly: user
//! clusters are shared by every domain, common item clusters span all
//! domains and carry the transferable rating pattern, and each domain has
//! its own specific item clusters. Training is annealed EM over the pooled
//! ratings; predictions mix the common and domain-specific rating functions
//! with per-domain weights.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod infer;
pub mod model;

pub use data::{
    build_dataset, given_n_split, normalize_scale, parse_ratings, select_subset,
    CrossDomainDataset, DataError, GivenNSplit, RatingTriple, RawRating, ScaleSpec, SubsetSpec,
};
pub use model::{
    e_step, em_step, init_params, log_likelihood, m_step, train, ModelDims, ModelError, PclfParams,
    Responsibilities, TraceEntry, TrainConfig, TrainedModel,
};
pub use baselines::{
    common_only_train, fmm_train, nmf_predict, nmf_train, ModelKind, NmfConfig, NmfFactors,
    SparseRatings,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use infer::{
    cluster_rating_matrices, memberships, ClusterRatingMatrices, CrossDomainMode,
    MembershipVectors, PredictionWeights, Predictor, Support, DEFAULT_W1,
};
pub use eval::{
    mae, report_table, run_experiment, synth_generate, EvalError, ExperimentConfig, ResultsReport,
    SyntheticSpec, TableFormat,
};
