//! Hypergraph matching of point sets by block coordinate ascent on a lifted
//! fourth-order score.

pub mod affinity;
pub mod bcagm;
pub mod cli;
pub mod error;
pub mod harness;
pub mod lap;
pub mod qap;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};
pub use lap::{solve_lap_max, AssignmentVector, ProfitMatrix};
pub use tensor::{LiftedOperator, MatchingShape, SparseSymmetricTensor3};
