use alloc::string::String;
use alloc::vec::Vec;

use crate::panel::CellIndex;

/// Errors raised by estimation, aggregation and testing routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("treatment reverses for unit {unit}: treated in period {from}, untreated in period {to}")]
    TreatmentReversal { unit: usize, from: usize, to: usize },
    #[error("unit {0} is treated in the first period")]
    TreatedInFirstPeriod(String),
    #[error("cohort {0} is not a treatment cohort of this panel")]
    UnknownCohort(u32),
    #[error("design matrix is rank deficient on the cohort {g} and control subsample")]
    RankDeficient { g: u32 },
    #[error("propensity score for cohort {g} did not converge after {iterations} iterations (gradient max-norm {gradient_norm:e}); last iterate {last:?}")]
    NotConverged {
        g: u32,
        iterations: usize,
        gradient_norm: f64,
        last: Vec<f64>,
    },
    #[error("perfect separation detected for cohort {g} (coefficient max-norm {norm:.1}); consider dropping covariates")]
    Separation { g: u32, norm: f64 },
    #[error("fitted propensity score for cohort {g} is numerically one for unit index {unit}")]
    DegenerateOverlap { g: u32, unit: usize },
    #[error("overlap violated for cohort {g}: {count} units above trim threshold {trim}")]
    OverlapViolation { g: u32, count: usize, trim: f64 },
    #[error("no usable control units for cohort {g}")]
    NoControls { g: u32 },
    #[error("cell (g={}, t={}) is not available", .0.g, .0.t)]
    MissingCell(CellIndex),
    #[error("cell (g={}, t={}): {}", .cell.g, .cell.t, .source)]
    Cell {
        cell: CellIndex,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("pre-test undefined: the panel has no placebo cells")]
    PretestUndefined,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),
}

pub type Result<T> = core::result::Result<T, Error>;
