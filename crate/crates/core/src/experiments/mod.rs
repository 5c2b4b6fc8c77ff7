//! Desk-scale versions of the dataset analyses: the all-pairs distance
//! table, grouping of pair distances by shared metadata, and the
//! replacement studies of the uniformity loss.

pub mod delta_lu;
pub mod grouping;
pub mod sweep;

pub use delta_lu::{
    run_delta_lu_study, study_to_long_csv, DeltaLuConfig, DeltaLuStudy, PerNStats, StudyMode,
};
pub use grouping::{group_pairs, grouping_to_long_csv, Criterion, PairGroupingReport};
pub use sweep::{
    canonical_pairs, pairwise_sweep, read_sweep_table, SweepOptions, SweepRow, SweepSummary,
};
