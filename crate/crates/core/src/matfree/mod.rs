//! Matrix-free mass and Hamiltonian operators on block-sparse multivectors.

mod accessor;
mod dofmap;
pub mod kernels;
mod operator;
mod reference;
pub mod shape;

pub use accessor::{RowCursor, RowsBlockAccessor};
pub use dofmap::{group_cell, CellDofMap};
pub use kernels::{element_matrix, CellCoefficients, OperatorKind};
pub use operator::{
    cell_coefficients, flop_report, ApplyStats, FlopReport, MatrixFreeOperator, OperatorSpec,
    Potential, PotentialFn, Variant,
};
pub use reference::{assemble_reference, CsrMatrix};
pub use shape::ShapeInfo;
