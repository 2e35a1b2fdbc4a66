//! Age-structured SIR epidemic coupled to a one-sector growth economy.

pub mod economy;
pub mod epi;
pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod hilbert;
pub mod objectives;
pub mod optimizer;
pub mod scenario;

pub use error::{ModelError, Result};
