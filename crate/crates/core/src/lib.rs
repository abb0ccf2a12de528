//! Archetypal and archetypoid analysis with robust and functional variants.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archetypes;
pub mod archetypoids;
pub mod cli;
pub mod data;
pub mod detect;
pub mod error;
pub mod export;
pub mod fdbasis;
pub mod finance;
pub mod nnls;
pub mod robust;
pub mod simgen;
pub mod taxonomy;

pub use archetypes::{fit_aa, ArchetypalModel, FitOptions};
pub use archetypoids::fit_ada;
pub use data::DataMatrix;
pub use error::{Error, Result};
pub use export::ModelExport;
pub use robust::{fit_robust_aa, fit_robust_ada, LossFamily, LossSpec, TuningPolicy, TuningSchedule};
