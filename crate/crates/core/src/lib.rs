//! Group-matrix convolutions for finite groups, the displacement toolkit that
//! measures distance from exact equivariance, and a small explicit-gradient
//! network stack built on top of them.

pub mod displacement;
pub mod dsl;
pub mod error;
pub mod group;
pub mod group_matrix;
pub mod io;
pub mod layers;
pub mod nn;
pub mod sampling;
pub mod checks;

pub use error::{Error, Result};
pub use group::{CosetPartition, ElemId, FiniteGroup, HomogeneousSpace, Subgroup};
pub use group_matrix::{Dense, DiagonalBasisForm, GroupDiagonal, GroupMatrix};
