//! Configuration, run orchestration, persistence and mass scans.

pub mod config;
pub mod run;
pub mod scan;
pub mod snapshot;

pub use config::{BoxLength, RunConfig};
pub use run::{
    read_diagnostics, read_manifest, run_single, simulate, snapshot_path, CompletedSection,
    Failure, Manifest, ResidualRecord, RunOutcome,
};
pub use scan::{convergence_study, rate_table, run_scan, RateRow, RateTable};
pub use snapshot::{decode_snapshot, encode_snapshot, read_snapshot, write_snapshot};

/// Acceptance band for a decay fit at mass `m`: the slope for `m = 0` and
/// `m = 1`, the uniform model bound otherwise.
pub fn decay_acceptable(fit: &crate::diagnostics::DecayFit, m: f64) -> bool {
    if m == 0.0 {
        (-1.15..=-0.85).contains(&fit.slope)
    } else if m == 1.0 {
        (-1.7..=-1.3).contains(&fit.slope)
    } else {
        fit.max_ratio <= 1.25
    }
}
