//! Human readable layout dumps and raw little-endian value files.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BlockCsrMatrix, BlockIndices, BlockSparsityPattern, GhostScheme};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDump {
    pub row_block: usize,
    pub col_block: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, without padding.
    pub values: Vec<f64>,
}

/// Local structure and values of one rank's matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixDump {
    pub rank: usize,
    pub lane_width: usize,
    pub owned_block_rows: usize,
    pub global_row_blocks: Vec<usize>,
    pub row_block_sizes: Vec<usize>,
    pub col_block_sizes: Vec<usize>,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub blocks: Vec<BlockDump>,
}

impl BlockCsrMatrix {
    pub fn dump(&self) -> MatrixDump {
        let s = self.scheme();
        let pattern = s.local_pattern();
        let mut blocks = Vec::with_capacity(self.n_blocks_stored());
        for lr in 0..pattern.n_block_rows() {
            let h = pattern.rows().block_size(lr);
            for k in self.row_blocks(lr) {
                let cb = self.block_col(k);
                let (w, st) = (s.cols().block_size(cb), self.stride(cb));
                let blk = self.block(k);
                let values = (0..h)
                    .flat_map(|r| blk[r * st..r * st + w].iter().copied())
                    .collect();
                blocks.push(BlockDump {
                    row_block: lr,
                    col_block: cb,
                    rows: h,
                    cols: w,
                    values,
                });
            }
        }
        MatrixDump {
            rank: s.rank(),
            lane_width: self.lane_width(),
            owned_block_rows: s.n_owned_blocks(),
            global_row_blocks: (0..s.n_local_blocks()).map(|l| s.global_block(l)).collect(),
            row_block_sizes: pattern.rows().sizes(),
            col_block_sizes: s.cols().sizes(),
            row_ptr: pattern.row_ptr().to_vec(),
            col_idx: pattern.col_idx().to_vec(),
            blocks,
        }
    }

    /// Rebuilds a serial matrix from a dump with no ghost rows.
    pub fn from_dump(d: &MatrixDump) -> Result<Self> {
        if d.owned_block_rows != d.row_block_sizes.len() {
            return Err(Error::Config(
                "only dumps without ghost rows can be loaded".into(),
            ));
        }
        let rows = Arc::new(BlockIndices::from_sizes(&d.row_block_sizes)?);
        let cols = Arc::new(BlockIndices::from_sizes(&d.col_block_sizes)?);
        if d.row_ptr.len() != rows.n_blocks() + 1
            || *d.row_ptr.last().unwrap_or(&0) != d.col_idx.len()
        {
            return Err(Error::Shape(
                "row pointer does not match the column indices".into(),
            ));
        }
        let lists = d
            .row_ptr
            .windows(2)
            .map(|w| d.col_idx[w[0]..w[1]].to_vec())
            .collect();
        let pattern = BlockSparsityPattern::from_rows(rows, cols, lists)?;
        let mut m = Self::serial(Arc::new(GhostScheme::serial(pattern)), d.lane_width)?;
        for b in &d.blocks {
            let k = m.find_block(b.row_block, b.col_block).ok_or_else(|| {
                Error::Pattern(format!(
                    "block ({}, {}) not in pattern",
                    b.row_block, b.col_block
                ))
            })?;
            if b.values.len() != b.rows * b.cols {
                return Err(Error::Shape("block value count mismatch".into()));
            }
            let st = m.stride(b.col_block);
            let blk = m.block_mut(k)?;
            for r in 0..b.rows {
                blk[r * st..r * st + b.cols]
                    .copy_from_slice(&b.values[r * b.cols..(r + 1) * b.cols]);
            }
        }
        Ok(m)
    }
}

/// Writes the padded value array as a `u64` count followed by `f64`s, all
/// little-endian.
pub fn write_values_binary<W: Write>(m: &BlockCsrMatrix, mut out: W) -> Result<()> {
    let v = m.raw_values();
    out.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_values_binary<R: Read>(m: &mut BlockCsrMatrix, mut input: R) -> Result<()> {
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    let dst = m.raw_values_mut()?;
    if n != dst.len() {
        return Err(Error::Shape(format!(
            "file holds {n} values, matrix stores {}",
            dst.len()
        )));
    }
    for d in dst.iter_mut() {
        input.read_exact(&mut word)?;
        *d = f64::from_le_bytes(word);
    }
    Ok(())
}
