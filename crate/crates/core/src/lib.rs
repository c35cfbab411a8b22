//! Individual treatment effect estimation with invariant risk minimization
//! over randomly fabricated domains, plus the synthetic benchmark used to
//! compare it with least-squares meta-learners.

pub mod datagen;
pub mod domains;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod learners;
pub mod metalearners;
pub mod numerics;
pub mod plot;

pub use error::{Error, Result};
