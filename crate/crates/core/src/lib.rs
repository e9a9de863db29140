//! Principal subspace, covariance and mean estimation when every sample may
//! be moved by a bounded amount.
//!
//! The modules follow the data path: [`covmodel`] builds models and samples,
//! [`adversary`] perturbs them within a per-column budget, [`fantope`] and
//! [`estimators`] recover the subspace, and [`metrics`] scores the result.
//! [`harness`] runs parameter sweeps and [`plot`] renders their output. The
//! guide in `book/` walks through each stage.

pub mod adversary;
pub mod covmodel;
pub mod error;
pub mod estimators;
pub mod fantope;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod norms;
pub mod plot;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/norms.md")]
    mod norms {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/perturbations.md")]
    mod perturbations {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/mean.md")]
    mod mean {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
