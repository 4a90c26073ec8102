//! Sequential two-stage subspace estimation for hybrid mmWave MIMO links.
//!
//! The pipeline samples a small block of channel columns through a DFT
//! receive bank, extracts the column subspace by truncated SVD, adapts the
//! stage-2 receive sounders to that subspace, extracts the row subspace, and
//! reconstructs the full channel from a least-squares problem whose size is
//! the square of the path count. [`harness`] wraps the pipeline in a seeded
//! Monte Carlo sweep runner.

pub mod channel;
pub mod error;
pub mod fixture;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod reconstruct;
pub mod sounding;
pub mod subspace;

pub use channel::{
    assemble_channel, numerical_rank, sample_paths, ArrayGeometry, ArrayKind, ChannelInstance,
    PathAngles, PathSet,
};
pub use error::{Result, SaseError};
pub use harness::{
    emit, emit_rank_check, run_rank_check, run_sweep, run_trial, EmitFormat, ExperimentConfig,
    RankCheckResult, SweepKind, SweepResult,
};
pub use metrics::AccuracyReport;
pub use reconstruct::{ChannelEstimate, CoreCoefficient};
pub use sounding::{HybridSounder, NoiseModel, StageOneObservation, StageTwoObservation};
pub use subspace::{
    run_sase, ApproximationMode, AssumedRank, DesignedFrame, Dictionary, HybridFrame, SaseParams,
    SaseRun, SubspaceEstimate,
};
