//! Distributed block-sparse matrices.

mod indices;
mod io;
mod layout;
mod matrix;
mod ops;
mod pattern;
mod spmm;

pub use indices::BlockIndices;
pub use io::{read_values_binary, write_values_binary, MatrixDump};
pub use layout::{
    build_ghost_scheme, group_rows_by_block, GhostBlock, GhostScheme, ImportGroup, RowPartition,
};
pub use matrix::{BlockCsrMatrix, GhostState, DEFAULT_LANE_WIDTH};
pub use pattern::BlockSparsityPattern;
pub use spmm::{mmult, tmmult, tr_tmmult};
