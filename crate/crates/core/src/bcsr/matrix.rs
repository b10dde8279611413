//! Distributed block-sparse matrix with padded, aligned block storage and a
//! ghost exchange state machine.

use std::sync::Arc;

use super::GhostScheme;
use crate::comm::{decode_f64s, encode_f64s, RankContext, Request, Tag};
use crate::{Error, Result};

pub const DEFAULT_LANE_WIDTH: usize = 8;

#[derive(Clone, Copy)]
#[repr(C, align(64))]
struct CacheLine([f64; 8]);

/// Zero-initialized `f64` buffer whose start is 64-byte aligned.
#[derive(Clone)]
struct AlignedValues {
    lines: Vec<CacheLine>,
    len: usize,
}

impl AlignedValues {
    fn zeros(len: usize) -> Self {
        Self {
            lines: vec![CacheLine([0.0; 8]); len.div_ceil(8)],
            len,
        }
    }

    fn as_slice(&self) -> &[f64] {
        // SAFETY: CacheLine is a repr(C) array of f64 without padding.
        unsafe { std::slice::from_raw_parts(self.lines.as_ptr() as *const f64, self.len) }
    }

    fn as_mut_slice(&mut self) -> &mut [f64] {
        // SAFETY: as above, uniquely borrowed.
        unsafe { std::slice::from_raw_parts_mut(self.lines.as_mut_ptr() as *mut f64, self.len) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GhostState {
    /// Only owned values are meaningful; ghosts hold zeros or partial sums.
    Owned,
    /// Ghost replicas are current and read-only.
    Ghosted,
    UpdateInFlight,
    CompressInFlight,
}

pub struct BlockCsrMatrix {
    scheme: Arc<GhostScheme>,
    lane_width: usize,
    strides: Vec<usize>,
    block_offsets: Vec<usize>,
    data: AlignedValues,
    state: GhostState,
    tag: Tag,
    in_flight: Vec<(usize, Request)>,
}

impl std::fmt::Debug for BlockCsrMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockCsrMatrix")
            .field("rank", &self.scheme.rank())
            .field("local_blocks", &self.scheme.n_local_blocks())
            .field("nonzero_blocks", &self.n_blocks_stored())
            .field("lane_width", &self.lane_width)
            .field("state", &self.state)
            .finish()
    }
}

impl BlockCsrMatrix {
    /// Collective: ranks must create matrices in the same order.
    pub fn new(ctx: &RankContext, scheme: Arc<GhostScheme>) -> Result<Self> {
        Self::with_lane_width(ctx, scheme, DEFAULT_LANE_WIDTH)
    }

    pub fn with_lane_width(
        ctx: &RankContext,
        scheme: Arc<GhostScheme>,
        lane_width: usize,
    ) -> Result<Self> {
        if scheme.rank() != ctx.rank() || scheme.partition().n_ranks() != ctx.n_ranks() {
            return Err(Error::Config(format!(
                "scheme of rank {} used on rank {} of {}",
                scheme.rank(),
                ctx.rank(),
                ctx.n_ranks()
            )));
        }
        let mut m = Self::allocate(scheme, lane_width)?;
        m.tag = ctx.allocate_tags();
        Ok(m)
    }

    /// Matrix outside any communicator; exchanges are unavailable unless the
    /// scheme has no ghosts.
    pub fn serial(scheme: Arc<GhostScheme>, lane_width: usize) -> Result<Self> {
        Self::allocate(scheme, lane_width)
    }

    fn allocate(scheme: Arc<GhostScheme>, lane_width: usize) -> Result<Self> {
        if lane_width == 0 || lane_width > 64 {
            return Err(Error::Config(format!(
                "unsupported lane width {lane_width}"
            )));
        }
        let cols = scheme.cols().clone();
        let strides: Vec<usize> = (0..cols.n_blocks())
            .map(|c| cols.block_size(c).div_ceil(lane_width) * lane_width)
            .collect();
        let pattern = scheme.local_pattern();
        let mut block_offsets = Vec::with_capacity(pattern.n_nonzero_blocks() + 1);
        let mut at = 0;
        for r in 0..pattern.n_block_rows() {
            let h = pattern.rows().block_size(r);
            for &c in pattern.row(r) {
                block_offsets.push(at);
                at += (h * strides[c]).div_ceil(8) * 8;
            }
        }
        block_offsets.push(at);
        Ok(Self {
            scheme,
            lane_width,
            strides,
            block_offsets,
            data: AlignedValues::zeros(at),
            state: GhostState::Owned,
            tag: 0,
            in_flight: Vec::new(),
        })
    }

    pub fn scheme(&self) -> &Arc<GhostScheme> {
        &self.scheme
    }

    pub fn lane_width(&self) -> usize {
        self.lane_width
    }

    pub fn state(&self) -> GhostState {
        self.state
    }

    pub fn n_blocks_stored(&self) -> usize {
        self.block_offsets.len() - 1
    }

    /// Padded row stride of blocks in column block `c`.
    pub fn stride(&self, c: usize) -> usize {
        self.strides[c]
    }

    /// Whole backing array including padding.
    pub fn raw_values(&self) -> &[f64] {
        self.data.as_slice()
    }

    pub fn raw_values_mut(&mut self) -> Result<&mut [f64]> {
        self.require_writable()?;
        Ok(self.data.as_mut_slice())
    }

    /// Range of linear block indices stored for a local block row.
    pub fn row_blocks(&self, local_row: usize) -> std::ops::Range<usize> {
        let p = self.scheme.local_pattern().row_ptr();
        p[local_row]..p[local_row + 1]
    }

    pub fn block_col(&self, k: usize) -> usize {
        self.scheme.local_pattern().col_idx()[k]
    }

    /// Padded row-major values of linear block `k`.
    pub fn block(&self, k: usize) -> &[f64] {
        &self.data.as_slice()[self.block_offsets[k]..self.block_offsets[k + 1]]
    }

    pub fn block_mut(&mut self, k: usize) -> Result<&mut [f64]> {
        self.require_writable()?;
        Ok(self.block_mut_unchecked(k))
    }

    pub(crate) fn block_mut_unchecked(&mut self, k: usize) -> &mut [f64] {
        let (a, b) = (self.block_offsets[k], self.block_offsets[k + 1]);
        &mut self.data.as_mut_slice()[a..b]
    }

    pub(crate) fn require_writable(&self) -> Result<()> {
        match self.state {
            GhostState::Owned => Ok(()),
            s => Err(Error::State(format!(
                "matrix is {s:?}; writes need the owned state"
            ))),
        }
    }

    pub(crate) fn require_readable(&self) -> Result<()> {
        match self.state {
            GhostState::Owned | GhostState::Ghosted => Ok(()),
            s => Err(Error::State(format!(
                "matrix is {s:?}; wait for the exchange to finish"
            ))),
        }
    }

    /// Linear index of block `(local_row, col)`, if stored.
    pub fn find_block(&self, local_row: usize, col: usize) -> Option<usize> {
        self.scheme.local_pattern().find(local_row, col)
    }

    /// Entry at global row `row` and global column `col` if it is stored on
    /// this rank.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let (lr, r) = self.scheme.locate_row(row)?;
        let (cb, c) = self.scheme.cols().global_to_block(col)?;
        let k = self.find_block(lr, cb)?;
        Some(self.block(k)[r * self.strides[cb] + c])
    }

    /// Sets every owned entry from `f(global_row, global_col)`.
    pub fn fill_owned(&mut self, mut f: impl FnMut(usize, usize) -> f64) -> Result<()> {
        self.require_writable()?;
        let cols = self.scheme.cols().clone();
        let scheme = self.scheme.clone();
        for lr in 0..scheme.n_owned_blocks() {
            let h = scheme.local_pattern().rows().block_size(lr);
            for k in self.row_blocks(lr) {
                let cb = self.block_col(k);
                let (c0, w, s) = (cols.block_start(cb), cols.block_size(cb), self.strides[cb]);
                let blk = self.block_mut_unchecked(k);
                for r in 0..h {
                    let gr = scheme.global_row(lr, r);
                    for c in 0..w {
                        blk[r * s + c] = f(gr, c0 + c);
                    }
                }
            }
        }
        Ok(())
    }

    /// Visits every stored entry of owned block rows.
    pub fn for_each_owned(&self, mut f: impl FnMut(usize, usize, f64)) {
        let cols = self.scheme.cols();
        for lr in 0..self.scheme.n_owned_blocks() {
            let h = self.scheme.local_pattern().rows().block_size(lr);
            for k in self.row_blocks(lr) {
                let cb = self.block_col(k);
                let (c0, w, s) = (cols.block_start(cb), cols.block_size(cb), self.strides[cb]);
                let blk = self.block(k);
                for r in 0..h {
                    let gr = self.scheme.global_row(lr, r);
                    for c in 0..w {
                        f(gr, c0 + c, blk[r * s + c]);
                    }
                }
            }
        }
    }

    /// `(row, col, value)` of every stored owned entry.
    pub fn owned_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        self.for_each_owned(|r, c, v| out.push((r, c, v)));
        out
    }

    /// Length of the leading part of the backing array holding owned rows.
    pub(crate) fn owned_len(&self) -> usize {
        self.ghost_range().start
    }

    fn ghost_range(&self) -> std::ops::Range<usize> {
        let first = self.scheme.local_pattern().row_ptr()[self.scheme.n_owned_blocks()];
        self.block_offsets[first]..*self.block_offsets.last().unwrap()
    }

    /// Zeroes owned and ghost values and returns to the owned state.
    pub fn zero_all(&mut self) -> Result<()> {
        self.require_readable()?;
        self.data.as_mut_slice().fill(0.0);
        self.state = GhostState::Owned;
        Ok(())
    }

    /// Drops ghost replicas so owned values may be written again.
    pub fn zero_out_ghosts(&mut self) -> Result<()> {
        self.require_readable()?;
        let g = self.ghost_range();
        self.data.as_mut_slice()[g].fill(0.0);
        self.state = GhostState::Owned;
        Ok(())
    }

    /// Copies values of the rows in `rows` (offsets in local block row `lr`)
    /// for every stored block, in pattern order.
    fn pack_rows(&self, lr: usize, rows: &[usize], out: &mut Vec<f64>) {
        let cols = self.scheme.cols();
        for k in self.row_blocks(lr) {
            let cb = self.block_col(k);
            let (w, s) = (cols.block_size(cb), self.strides[cb]);
            let blk = self.block(k);
            for &r in rows {
                out.extend_from_slice(&blk[r * s..r * s + w]);
            }
        }
    }

    fn unpack_rows(&mut self, lr: usize, rows: &[usize], values: &[f64], add: bool) -> usize {
        let cols = self.scheme.cols().clone();
        let mut at = 0;
        for k in self.row_blocks(lr) {
            let cb = self.block_col(k);
            let (w, s) = (cols.block_size(cb), self.strides[cb]);
            let blk = self.block_mut_unchecked(k);
            for &r in rows {
                let dst = &mut blk[r * s..r * s + w];
                if add {
                    dst.iter_mut()
                        .zip(&values[at..at + w])
                        .for_each(|(d, v)| *d += v);
                } else {
                    dst.copy_from_slice(&values[at..at + w]);
                }
                at += w;
            }
        }
        at
    }

    fn ghost_peers(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self.scheme.ghosts().iter().map(|g| g.owner).collect();
        p.dedup();
        p
    }

    fn import_peers(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self.scheme.imports().iter().map(|g| g.peer).collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    fn check_ctx(&self, ctx: &RankContext) -> Result<()> {
        if ctx.rank() != self.scheme.rank() {
            return Err(Error::Config(
                "matrix used with a context of another rank".into(),
            ));
        }
        if self.tag == 0 && (!self.scheme.ghosts().is_empty() || !self.scheme.imports().is_empty())
        {
            return Err(Error::Config("serial matrix cannot exchange ghosts".into()));
        }
        Ok(())
    }

    /// Starts sending owned rows to the ranks that ghost them.
    pub fn update_ghost_values_start(&mut self, ctx: &RankContext) -> Result<()> {
        self.require_readable()?;
        self.check_ctx(ctx)?;
        let n_owned = self.scheme.n_owned_blocks();
        let first = self.scheme.owned_blocks().start;
        let scheme = self.scheme.clone();
        for peer in self.import_peers() {
            let mut buf = Vec::new();
            for g in scheme.imports().iter().filter(|g| g.peer == peer) {
                debug_assert!(g.block - first < n_owned);
                self.pack_rows(g.block - first, &g.rows, &mut buf);
            }
            ctx.isend(peer, self.tag, encode_f64s(&buf))?;
        }
        self.in_flight = self
            .ghost_peers()
            .into_iter()
            .map(|p| Ok((p, ctx.irecv(p, self.tag)?)))
            .collect::<Result<_>>()?;
        self.state = GhostState::UpdateInFlight;
        Ok(())
    }

    pub fn update_ghost_values_finish(&mut self, ctx: &RankContext) -> Result<()> {
        if self.state != GhostState::UpdateInFlight {
            return Err(Error::State(format!(
                "no ghost update in flight (state {:?})",
                self.state
            )));
        }
        let n_owned = self.scheme.n_owned_blocks();
        let scheme = self.scheme.clone();
        for (peer, req) in std::mem::take(&mut self.in_flight) {
            let values = decode_f64s(&ctx.wait(req)?)?;
            let mut at = 0;
            for (g, gb) in scheme
                .ghosts()
                .iter()
                .enumerate()
                .filter(|(_, g)| g.owner == peer)
            {
                let all: Vec<usize> = (0..gb.rows.len()).collect();
                at += self.unpack_rows(n_owned + g, &all, &values[at.min(values.len())..], false);
                if at > values.len() {
                    return Err(Error::Protocol(format!(
                        "short ghost update from rank {peer}"
                    )));
                }
            }
            if at != values.len() {
                return Err(Error::Protocol(format!(
                    "ghost update size mismatch from rank {peer}"
                )));
            }
        }
        self.state = GhostState::Ghosted;
        Ok(())
    }

    pub fn update_ghost_values(&mut self, ctx: &RankContext) -> Result<()> {
        self.update_ghost_values_start(ctx)?;
        self.update_ghost_values_finish(ctx)
    }

    /// Starts sending ghost contributions to their owners and zeroes them.
    pub fn compress_start(&mut self, ctx: &RankContext) -> Result<()> {
        self.require_writable()?;
        self.check_ctx(ctx)?;
        let n_owned = self.scheme.n_owned_blocks();
        let scheme = self.scheme.clone();
        for peer in self.ghost_peers() {
            let mut buf = Vec::new();
            for (g, gb) in scheme
                .ghosts()
                .iter()
                .enumerate()
                .filter(|(_, g)| g.owner == peer)
            {
                let all: Vec<usize> = (0..gb.rows.len()).collect();
                self.pack_rows(n_owned + g, &all, &mut buf);
            }
            ctx.isend(peer, self.tag + 1, encode_f64s(&buf))?;
        }
        let g = self.ghost_range();
        self.data.as_mut_slice()[g].fill(0.0);
        self.in_flight = self
            .import_peers()
            .into_iter()
            .map(|p| Ok((p, ctx.irecv(p, self.tag + 1)?)))
            .collect::<Result<_>>()?;
        self.state = GhostState::CompressInFlight;
        Ok(())
    }

    /// Adds received contributions in ascending source rank order.
    pub fn compress_finish(&mut self, ctx: &RankContext) -> Result<()> {
        if self.state != GhostState::CompressInFlight {
            return Err(Error::State(format!(
                "no compress in flight (state {:?})",
                self.state
            )));
        }
        let first = self.scheme.owned_blocks().start;
        let scheme = self.scheme.clone();
        for (peer, req) in std::mem::take(&mut self.in_flight) {
            let values = decode_f64s(&ctx.wait(req)?)?;
            let mut at = 0;
            for g in scheme.imports().iter().filter(|g| g.peer == peer) {
                let lr = g.block - first;
                let need: usize = self
                    .row_blocks(lr)
                    .map(|k| scheme.cols().block_size(self.block_col(k)) * g.rows.len())
                    .sum();
                if at + need > values.len() {
                    return Err(Error::Protocol(format!(
                        "short compress message from rank {peer}"
                    )));
                }
                at += self.unpack_rows(lr, &g.rows, &values[at..], true);
            }
            if at != values.len() {
                return Err(Error::Protocol(format!(
                    "compress size mismatch from rank {peer}"
                )));
            }
        }
        self.state = GhostState::Owned;
        Ok(())
    }

    pub fn compress(&mut self, ctx: &RankContext) -> Result<()> {
        self.compress_start(ctx)?;
        self.compress_finish(ctx)
    }

    /// Sum of squares of owned entries on this rank.
    pub fn local_norm_sq(&self) -> f64 {
        let mut s = 0.0;
        self.for_each_owned(|_, _, v| s += v * v);
        s
    }

    pub fn frobenius_norm(&self, ctx: &RankContext) -> Result<f64> {
        Ok(ctx.allreduce_sum(self.local_norm_sq())?.sqrt())
    }

    /// True when all padding entries are exactly zero.
    pub fn padding_is_zero(&self) -> bool {
        let cols = self.scheme.cols();
        let pattern = self.scheme.local_pattern();
        (0..pattern.n_block_rows()).all(|lr| {
            let h = pattern.rows().block_size(lr);
            self.row_blocks(lr).all(|k| {
                let cb = self.block_col(k);
                let (w, s) = (cols.block_size(cb), self.strides[cb]);
                let blk = self.block(k);
                (0..blk.len()).all(|i| (i < h * s && i % s < w) || blk[i] == 0.0)
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bcsr::{build_ghost_scheme, BlockIndices, BlockSparsityPattern, RowPartition};
    use crate::comm::run_ranks;
    use std::collections::BTreeMap;

    fn serial_matrix(w: usize) -> BlockCsrMatrix {
        let rows = Arc::new(BlockIndices::from_sizes(&[3, 5]).unwrap());
        let cols = Arc::new(BlockIndices::from_sizes(&[5, 9, 2]).unwrap());
        let p = BlockSparsityPattern::from_rows(rows, cols, vec![vec![0, 2], vec![1]]).unwrap();
        BlockCsrMatrix::serial(Arc::new(GhostScheme::serial(p)), w).unwrap()
    }

    #[test]
    fn blocks_are_padded_and_aligned() {
        for w in [4, 8] {
            let mut m = serial_matrix(w);
            assert_eq!(m.raw_values().as_ptr() as usize % 64, 0);
            assert_eq!(m.stride(0), w.max(5).div_ceil(w) * w);
            assert_eq!(m.stride(1), 9usize.div_ceil(w) * w);
            for k in 0..m.n_blocks_stored() {
                assert_eq!((m.block(k).as_ptr() as usize) % 64, 0);
            }
            m.fill_owned(|r, c| (r * 100 + c) as f64 + 1.0).unwrap();
            assert!(m.padding_is_zero());
            assert_eq!(m.get(4, 7), Some(408.0));
            assert_eq!(m.get(0, 14), Some(15.0));
            assert_eq!(m.get(0, 7), None);
            assert_eq!(m.owned_entries().len(), 3 * 5 + 3 * 2 + 5 * 9);
        }
    }

    #[test]
    fn serial_exchanges_are_noops_and_states_enforced() {
        let ctx = RankContext::solo();
        let mut m = serial_matrix(8);
        m.fill_owned(|_, _| 1.0).unwrap();
        m.update_ghost_values(&ctx).unwrap();
        assert_eq!(m.state(), GhostState::Ghosted);
        assert!(m.block_mut(0).is_err());
        assert!(m.compress(&ctx).is_err());
        m.zero_out_ghosts().unwrap();
        m.compress_start(&ctx).unwrap();
        assert!(m.compress_start(&ctx).is_err());
        assert!(m.update_ghost_values_start(&ctx).is_err());
        assert!(m.update_ghost_values_finish(&ctx).is_err());
        m.compress_finish(&ctx).unwrap();
        assert_eq!(m.get(1, 1), Some(1.0));
    }

    /// Rows 0..5 on rank 0 in blocks [2,3]; rows 5..9 on rank 1 in [4].
    fn exchange_program(ctx: &RankContext) -> Result<(Vec<Option<f64>>, Vec<Option<f64>>)> {
        let rows = Arc::new(BlockIndices::from_sizes(&[2, 3, 4]).unwrap());
        let cols = Arc::new(BlockIndices::from_sizes(&[3, 2]).unwrap());
        let part = Arc::new(RowPartition::new(rows, vec![0, 2, 3])?);
        let (pattern, ghosts, imports) = if ctx.rank() == 0 {
            (
                vec![vec![0], vec![0, 1]],
                BTreeMap::from([(1, vec![6])]),
                BTreeMap::from([(1, vec![1, 3, 4])]),
            )
        } else {
            (
                vec![vec![1]],
                BTreeMap::from([(0, vec![1, 3, 4])]),
                BTreeMap::from([(0, vec![6])]),
            )
        };
        let scheme = Arc::new(build_ghost_scheme(
            ctx, part, cols, pattern, &ghosts, &imports,
        )?);
        let mut m = BlockCsrMatrix::new(ctx, scheme)?;
        m.fill_owned(|r, c| (10 * r + c) as f64)?;
        m.update_ghost_values(ctx)?;
        let ghosted: Vec<Option<f64>> = [(1, 2), (3, 0), (4, 4), (6, 3), (6, 0)]
            .iter()
            .map(|&(r, c)| m.get(r, c))
            .collect();
        m.zero_all()?;
        let n_local = m.scheme().n_local_blocks();
        for lr in m.scheme().n_owned_blocks()..n_local {
            for k in m.row_blocks(lr) {
                m.block_mut(k)?.iter_mut().for_each(|v| *v = 1.0);
            }
        }
        m.compress(ctx)?;
        assert!(m.padding_is_zero());
        let owned: Vec<Option<f64>> = [(1, 2), (3, 0), (4, 4), (2, 0), (6, 3), (5, 3)]
            .iter()
            .map(|&(r, c)| m.get(r, c))
            .collect();
        Ok((ghosted, owned))
    }

    #[test]
    fn update_and_compress_round_trip() {
        let out = run_ranks(2, exchange_program).unwrap();
        let (g1, o1) = &out[1];
        assert_eq!(g1[..3], [Some(12.0), Some(30.0), Some(44.0)]);
        let (g0, o0) = &out[0];
        assert_eq!(g0[3..], [Some(63.0), None]);
        // each ghosted entry received one contribution
        assert_eq!(o0[..4], [Some(1.0), Some(1.0), Some(1.0), Some(0.0)]);
        assert_eq!(o1[4..], [Some(1.0), Some(0.0)]);
    }
}
