//! Config ingestion, report types, and the workflow implementations
//! behind the `remest` binary.

// `!(x > 0.0)` rejects NaN along with nonpositive values in validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod report;
pub mod workflows;

/// Process exit codes of the binary.
pub mod exit_codes {
    pub const OK: u8 = 0;
    pub const VALIDATION: u8 = 1;
    pub const NON_CONVERGENCE: u8 = 2;
    pub const SUITE_FAILURE: u8 = 3;
}

/// Exit code for a library error surfaced by a workflow.
pub fn exit_code_for(err: &remest::Error) -> u8 {
    match err {
        remest::Error::NonConvergence { .. } | remest::Error::QuadratureNonConvergence { .. } => {
            exit_codes::NON_CONVERGENCE
        }
        _ => exit_codes::VALIDATION,
    }
}
