//! Matrix-free finite element operators applied to sparse, block-compressed
//! (BCSR) tall-and-skinny multivectors, plus the sparse matrix-matrix products
//! needed by orbital-minimization solvers.
//!
//! The crate is organized bottom-up:
//!
//! * [`hilbert`] orders lattice points along a Hilbert space-filling curve.
//! * [`mesh`] builds a structured hexahedral mesh, partitions it over logical
//!   ranks and enumerates Lagrange DoFs into row blocks.
//! * [`localization`] blocks the multivector columns and derives block
//!   sparsity patterns from localization centers.
//! * [`comm`] runs a set of logical ranks with point-to-point messaging.
//! * [`bcsr`] holds the distributed block-CSR matrix, ghost exchange and the
//!   SpMM kernels.
//! * [`matfree`] evaluates mass and Hamiltonian operators cell by cell.
//! * [`energy`] composes everything into the energy functional and gradient.
//! * [`problem`] wires a complete distributed setup together.
//! * [`oracle`] contains dense reference computations used for verification.

pub mod bcsr;
pub mod comm;
pub mod energy;
mod error;
pub mod hilbert;
pub mod localization;
pub mod matfree;
pub mod mesh;
pub mod oracle;
pub mod problem;
pub mod util;

pub use error::{Error, Result};
