//! Config-driven orchestration of the full surrogate workflow. Every stage
//! reads its inputs from and writes its outputs to the run's output
//! directory, so any prefix of the pipeline can be resumed from disk.

mod config;
mod error;
mod stages;

pub use config::{
    ExternalSet, GenerateBlock, HmmBlock, MabfBlock, MatchingBlock, RunConfig, SlpBlock, StageToggles, TypingBlock,
    SEED_ENV,
};
pub use error::{ErrorKind, PipelineError, Stage};
pub use stages::{
    clean, evaluate, evaluate_dirs, generate, ingest, match_days, read_assignments, real_test_profiles, report, run,
    scale_slp, train_hmm, train_mabf, typify, write_reference_dataset, Layout, ModelKind, RunManifest, StageTiming,
};
