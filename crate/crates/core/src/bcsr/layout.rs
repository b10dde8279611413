//! Row ownership across ranks and the ghost blocking of Alg. 3 style
//! ghost schemes: ghost rows are grouped within the owner's block rows and
//! inherit the owner's block sparsity.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use super::{BlockIndices, BlockSparsityPattern};
use crate::comm::{decode_usizes, encode_usizes, RankContext};
use crate::{Error, Result};

/// Ascending 1D partition of row blocks over ranks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowPartition {
    rows: Arc<BlockIndices>,
    block_starts: Vec<usize>,
}

impl RowPartition {
    pub fn new(rows: Arc<BlockIndices>, block_starts: Vec<usize>) -> Result<Self> {
        let ok = block_starts.len() >= 2
            && block_starts[0] == 0
            && *block_starts.last().unwrap() == rows.n_blocks()
            && block_starts.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(Error::Config(format!(
                "invalid block partition {block_starts:?} for {} blocks",
                rows.n_blocks()
            )));
        }
        Ok(Self { rows, block_starts })
    }

    /// Everything owned by a single rank.
    pub fn single(rows: Arc<BlockIndices>) -> Self {
        let n = rows.n_blocks();
        Self {
            rows,
            block_starts: vec![0, n],
        }
    }

    pub fn rows(&self) -> &Arc<BlockIndices> {
        &self.rows
    }

    pub fn n_ranks(&self) -> usize {
        self.block_starts.len() - 1
    }

    pub fn owned_blocks(&self, rank: usize) -> Range<usize> {
        self.block_starts[rank]..self.block_starts[rank + 1]
    }

    pub fn owned_rows(&self, rank: usize) -> Range<usize> {
        let b = self.owned_blocks(rank);
        self.rows.offsets()[b.start]..self.rows.offsets()[b.end]
    }

    pub fn owner_of_block(&self, block: usize) -> usize {
        self.block_starts.partition_point(|&s| s <= block) - 1
    }

    pub fn owner_of_row(&self, row: usize) -> Option<usize> {
        self.rows
            .global_to_block(row)
            .map(|(b, _)| self.owner_of_block(b))
    }
}

/// Replica of (part of) a block row owned by another rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GhostBlock {
    pub owner: usize,
    /// Global block row on the owner.
    pub block: usize,
    /// Ascending row offsets within the owner's block.
    pub rows: Vec<usize>,
}

/// Owned rows another rank keeps as ghosts, grouped by block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImportGroup {
    pub peer: usize,
    pub block: usize,
    pub rows: Vec<usize>,
}

/// Per-rank view of a distributed block matrix structure: owned block rows
/// followed by ghost block rows, plus the symmetric exchange plan.
#[derive(Clone, Debug)]
pub struct GhostScheme {
    rank: usize,
    partition: Arc<RowPartition>,
    cols: Arc<BlockIndices>,
    ghosts: Vec<GhostBlock>,
    imports: Vec<ImportGroup>,
    local: BlockSparsityPattern,
}

/// Groups ascending global rows by the block containing them.
pub fn group_rows_by_block(
    rows: &[usize],
    blocking: &BlockIndices,
) -> Result<Vec<(usize, Vec<usize>)>> {
    let mut sorted = rows.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for r in sorted {
        let (b, _) = blocking.global_to_block(r).ok_or_else(|| {
            Error::Domain(format!(
                "row {r} outside blocking of {} rows",
                blocking.total()
            ))
        })?;
        match groups.last_mut() {
            Some((gb, list)) if *gb == b => list.push(r),
            _ => groups.push((b, vec![r])),
        }
    }
    Ok(groups)
}

impl GhostScheme {
    /// Scheme for a matrix held entirely by one rank.
    pub fn serial(pattern: BlockSparsityPattern) -> Self {
        let partition = Arc::new(RowPartition::single(pattern.rows().clone()));
        Self {
            rank: 0,
            cols: pattern.cols().clone(),
            partition,
            ghosts: Vec::new(),
            imports: Vec::new(),
            local: pattern,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn partition(&self) -> &Arc<RowPartition> {
        &self.partition
    }

    pub fn cols(&self) -> &Arc<BlockIndices> {
        &self.cols
    }

    pub fn ghosts(&self) -> &[GhostBlock] {
        &self.ghosts
    }

    pub fn imports(&self) -> &[ImportGroup] {
        &self.imports
    }

    /// Local pattern over owned then ghost block rows.
    pub fn local_pattern(&self) -> &BlockSparsityPattern {
        &self.local
    }

    pub fn owned_blocks(&self) -> Range<usize> {
        self.partition.owned_blocks(self.rank)
    }

    pub fn n_owned_blocks(&self) -> usize {
        self.owned_blocks().len()
    }

    pub fn n_local_blocks(&self) -> usize {
        self.n_owned_blocks() + self.ghosts.len()
    }

    /// Global block id of a local block row.
    pub fn global_block(&self, local: usize) -> usize {
        let n_owned = self.n_owned_blocks();
        if local < n_owned {
            self.owned_blocks().start + local
        } else {
            self.ghosts[local - n_owned].block
        }
    }

    /// Local block row holding global block `block`, if it is owned or
    /// ghosted on this rank.
    pub fn local_block(&self, block: usize) -> Option<usize> {
        let owned = self.owned_blocks();
        if owned.contains(&block) {
            return Some(block - owned.start);
        }
        self.ghosts
            .binary_search_by_key(&block, |g| g.block)
            .ok()
            .map(|g| self.n_owned_blocks() + g)
    }

    /// Like [`Self::local_block`] but only if every row of the block is
    /// present locally.
    pub fn local_full_block(&self, block: usize) -> Option<usize> {
        let l = self.local_block(block)?;
        let n_owned = self.n_owned_blocks();
        if l < n_owned
            || self.ghosts[l - n_owned].rows.len() == self.partition.rows().block_size(block)
        {
            Some(l)
        } else {
            None
        }
    }

    /// Local `(block row, row within block)` of a global row.
    pub fn locate_row(&self, row: usize) -> Option<(usize, usize)> {
        let (b, off) = self.partition.rows().global_to_block(row)?;
        let owned = self.owned_blocks();
        if owned.contains(&b) {
            return Some((b - owned.start, off));
        }
        let g = self.ghosts.binary_search_by_key(&b, |g| g.block).ok()?;
        let k = self.ghosts[g].rows.binary_search(&off).ok()?;
        Some((self.n_owned_blocks() + g, k))
    }

    /// Global row of a local `(block row, row within block)`.
    pub fn global_row(&self, local_block: usize, row: usize) -> usize {
        let n_owned = self.n_owned_blocks();
        let rows = self.partition.rows();
        if local_block < n_owned {
            rows.block_start(self.owned_blocks().start + local_block) + row
        } else {
            let g = &self.ghosts[local_block - n_owned];
            rows.block_start(g.block) + g.rows[row]
        }
    }

    /// True when both schemes describe the same local structure.
    pub fn same_structure(&self, other: &Self) -> bool {
        std::ptr::eq(self, other)
            || (self.rank == other.rank
                && self.partition == other.partition
                && self.cols == other.cols
                && self.ghosts == other.ghosts
                && self.local == other.local)
    }
}

/// Builds the ghost blocking and ghost sparsity of one rank.
///
/// Collective: every rank of `ctx` must call it. `owned_pattern` lists the
/// block columns of each owned block row. `ghost_rows` maps an owner rank to
/// the global rows this rank reads from it; `import_rows` maps a peer rank to
/// owned global rows the peer reads. Owners send grouped rows and the owned
/// sparsity of the groups; receivers verify them against their own ghost
/// sets.
pub fn build_ghost_scheme(
    ctx: &RankContext,
    partition: Arc<RowPartition>,
    cols: Arc<BlockIndices>,
    owned_pattern: Vec<Vec<usize>>,
    ghost_rows: &BTreeMap<usize, Vec<usize>>,
    import_rows: &BTreeMap<usize, Vec<usize>>,
) -> Result<GhostScheme> {
    let rank = ctx.rank();
    if partition.n_ranks() != ctx.n_ranks() {
        return Err(Error::Config(format!(
            "partition over {} ranks used with {} ranks",
            partition.n_ranks(),
            ctx.n_ranks()
        )));
    }
    let owned = partition.owned_blocks(rank);
    if owned_pattern.len() != owned.len() {
        return Err(Error::Shape(format!(
            "{} owned pattern rows for {} owned blocks",
            owned_pattern.len(),
            owned.len()
        )));
    }
    let rows = partition.rows().clone();
    let mut owned_lists = owned_pattern;
    for l in owned_lists.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }

    for (&owner, list) in ghost_rows {
        if owner == rank {
            return Err(Error::Protocol(format!(
                "rank {rank} lists its own rows as ghosts"
            )));
        }
        if let Some(&r) = list
            .iter()
            .find(|&&r| partition.owner_of_row(r) != Some(owner))
        {
            return Err(Error::Protocol(format!(
                "ghost row {r} is not owned by rank {owner}"
            )));
        }
    }
    let owned_rows = partition.owned_rows(rank);
    for (&peer, list) in import_rows {
        if peer == rank || peer >= ctx.n_ranks() {
            return Err(Error::Protocol(format!(
                "invalid import peer {peer} on rank {rank}"
            )));
        }
        if let Some(&r) = list.iter().find(|&&r| !owned_rows.contains(&r)) {
            return Err(Error::Protocol(format!(
                "import row {r} is not owned by rank {rank}"
            )));
        }
    }

    // group import rows by owned block, attach sparsity, send to the peers
    let tag = ctx.allocate_tags();
    let mut imports = Vec::new();
    for peer in (0..ctx.n_ranks()).filter(|&p| p != rank) {
        let groups = match import_rows.get(&peer) {
            Some(list) => group_rows_by_block(list, &rows)?,
            None => Vec::new(),
        };
        let mut msg = vec![groups.len()];
        for (block, grows) in &groups {
            let pattern_row = &owned_lists[block - owned.start];
            let nnz: usize = grows.len()
                * pattern_row
                    .iter()
                    .map(|&c| cols.block_size(c))
                    .sum::<usize>();
            msg.push(*block);
            msg.push(grows.len());
            msg.extend(grows.iter().map(|r| r - rows.block_start(*block)));
            msg.push(pattern_row.len());
            msg.extend_from_slice(pattern_row);
            msg.push(nnz);
            imports.push(ImportGroup {
                peer,
                block: *block,
                rows: grows.iter().map(|r| r - rows.block_start(*block)).collect(),
            });
        }
        ctx.isend(peer, tag, encode_usizes(&msg))?;
    }

    let mut ghosts = Vec::new();
    let mut ghost_lists = Vec::new();
    for owner in (0..ctx.n_ranks()).filter(|&p| p != rank) {
        let msg = decode_usizes(&ctx.recv(owner, tag)?)?;
        let mut received = Vec::new();
        let mut it = msg.into_iter();
        let mut next = || {
            it.next().ok_or_else(|| {
                Error::Protocol(format!("truncated ghost message from rank {owner}"))
            })
        };
        let n_groups = next()?;
        for _ in 0..n_groups {
            let block = next()?;
            let n_rows = next()?;
            let grows = (0..n_rows).map(|_| next()).collect::<Result<Vec<_>>>()?;
            let n_cols = next()?;
            let gcols = (0..n_cols).map(|_| next()).collect::<Result<Vec<_>>>()?;
            let nnz = next()?;
            if nnz != n_rows * gcols.iter().map(|&c| cols.block_size(c)).sum::<usize>() {
                return Err(Error::Protocol(format!(
                    "nonzero count mismatch from rank {owner}"
                )));
            }
            received.push((block, grows, gcols));
        }
        let expected = match ghost_rows.get(&owner) {
            Some(list) => group_rows_by_block(list, &rows)?,
            None => Vec::new(),
        };
        let consistent = expected.len() == received.len()
            && expected
                .iter()
                .zip(&received)
                .all(|((eb, erows), (rb, rrows, _))| {
                    eb == rb
                        && erows
                            .iter()
                            .map(|r| r - rows.block_start(*eb))
                            .eq(rrows.iter().copied())
                });
        if !consistent {
            return Err(Error::Protocol(format!(
                "ghost rows of rank {rank} and import rows of rank {owner} disagree"
            )));
        }
        for (block, grows, gcols) in received {
            ghosts.push(GhostBlock {
                owner,
                block,
                rows: grows,
            });
            ghost_lists.push(gcols);
        }
    }

    let sizes: Vec<usize> = owned
        .clone()
        .map(|b| rows.block_size(b))
        .chain(ghosts.iter().map(|g| g.rows.len()))
        .collect();
    let local_rows = Arc::new(BlockIndices::from_sizes(&sizes)?);
    owned_lists.extend(ghost_lists);
    let local = BlockSparsityPattern::from_rows(local_rows, cols.clone(), owned_lists)?;

    Ok(GhostScheme {
        rank,
        partition,
        cols,
        ghosts,
        imports,
        local,
    })
}
