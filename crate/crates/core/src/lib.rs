//! Nonstabilizerness (stabilizer Rényi entropy) along unitary and
//! continuously monitored dynamics of the XX/XXZ-staggered chain and the
//! complex SYK model, restricted to the zero-magnetization sector.

pub mod analysis;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod hamiltonian;
pub mod hilbert;
pub mod linalg;
pub mod magic;
pub mod monitoring;
pub mod output;
pub mod randomstates;
pub mod seeding;

pub use error::{Error, Result};
pub use hilbert::{SpinConfig, StateVector, SubspaceBasis};
