//! Block sparse matrix products restricted to the destination pattern.

use super::BlockCsrMatrix;
use crate::comm::RankContext;
use crate::{Error, Result};

/// `C[h x wc] += A[h x wa] * B[wa x wc]`
#[inline]
fn gemm_nn(
    a: &[f64],
    sa: usize,
    b: &[f64],
    sb: usize,
    c: &mut [f64],
    sc: usize,
    h: usize,
    wa: usize,
    wc: usize,
) {
    for r in 0..h {
        let crow = &mut c[r * sc..r * sc + wc];
        for t in 0..wa {
            let x = a[r * sa + t];
            let brow = &b[t * sb..t * sb + wc];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += x * bv;
            }
        }
    }
}

/// `C[wa x wb] += A[h x wa]^T * B[h x wb]`
#[inline]
fn gemm_tn(
    a: &[f64],
    sa: usize,
    b: &[f64],
    sb: usize,
    c: &mut [f64],
    sc: usize,
    h: usize,
    wa: usize,
    wb: usize,
) {
    for r in 0..h {
        let brow = &b[r * sb..r * sb + wb];
        for t in 0..wa {
            let x = a[r * sa + t];
            let crow = &mut c[t * sc..t * sc + wb];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += x * bv;
            }
        }
    }
}

/// `C = A B` on the pattern of `C`. Contributions to blocks outside that
/// pattern are dropped. Updates the ghosts of `B`, which stays ghosted.
/// Returns the floating point operations performed on this rank.
pub fn mmult(
    ctx: &RankContext,
    a: &BlockCsrMatrix,
    b: &mut BlockCsrMatrix,
    c: &mut BlockCsrMatrix,
) -> Result<u64> {
    let (sa, sb, sc) = (a.scheme().clone(), b.scheme().clone(), c.scheme().clone());
    if sa.partition() != sc.partition()
        || sb.partition().rows() != sa.cols()
        || sc.cols() != sb.cols()
    {
        return Err(Error::Shape("incompatible blockings for C = A B".into()));
    }
    a.require_readable()?;
    c.zero_all()?;
    if b.state() != super::GhostState::Ghosted {
        b.update_ghost_values(ctx)?;
    }
    let rows = sa.local_pattern().rows();
    let mut flops = 0u64;
    for lr in 0..sa.n_owned_blocks() {
        let h = rows.block_size(lr);
        let c_blocks = c.row_blocks(lr);
        for ka in a.row_blocks(lr) {
            let k = a.block_col(ka);
            let wk = sa.cols().block_size(k);
            let lb = sb.local_full_block(k).ok_or_else(|| {
                Error::Pattern(format!(
                    "row block {k} of B is not available on rank {}",
                    sb.rank()
                ))
            })?;
            let mut kc = c_blocks.start;
            for kb in b.row_blocks(lb) {
                let j = b.block_col(kb);
                while kc < c_blocks.end && c.block_col(kc) < j {
                    kc += 1;
                }
                if kc == c_blocks.end {
                    break;
                }
                if c.block_col(kc) != j {
                    continue;
                }
                let wj = sb.cols().block_size(j);
                let (stride_a, stride_b, stride_c) = (a.stride(k), b.stride(j), c.stride(j));
                gemm_nn(
                    a.block(ka),
                    stride_a,
                    b.block(kb),
                    stride_b,
                    c.block_mut_unchecked(kc),
                    stride_c,
                    h,
                    wk,
                    wj,
                );
                flops += 2 * (h * wk * wj) as u64;
            }
        }
    }
    Ok(flops)
}

/// `C = A^T B` where `A` and `B` share a row distribution. Products land in
/// owned or ghost rows of `C` and are then compressed. Every produced block
/// must be in the pattern of `C`.
pub fn tmmult(
    ctx: &RankContext,
    a: &BlockCsrMatrix,
    b: &BlockCsrMatrix,
    c: &mut BlockCsrMatrix,
) -> Result<u64> {
    let (sa, sb, sc) = (a.scheme().clone(), b.scheme().clone(), c.scheme().clone());
    if sa.partition() != sb.partition()
        || sc.partition().rows() != sa.cols()
        || sc.cols() != sb.cols()
    {
        return Err(Error::Shape("incompatible blockings for C = A^T B".into()));
    }
    a.require_readable()?;
    b.require_readable()?;
    c.zero_all()?;
    let rows = sa.local_pattern().rows();
    let mut flops = 0u64;
    for lr in 0..sa.n_owned_blocks() {
        let h = rows.block_size(lr);
        for ka in a.row_blocks(lr) {
            let k = a.block_col(ka);
            let wk = sa.cols().block_size(k);
            let lc = sc.local_full_block(k).ok_or_else(|| {
                Error::Pattern(format!(
                    "row block {k} of C is not stored on rank {}",
                    sc.rank()
                ))
            })?;
            let c_blocks = c.row_blocks(lc);
            let mut kc = c_blocks.start;
            for kb in b.row_blocks(lr) {
                let l = b.block_col(kb);
                while kc < c_blocks.end && c.block_col(kc) < l {
                    kc += 1;
                }
                if kc == c_blocks.end || c.block_col(kc) != l {
                    return Err(Error::Pattern(format!(
                        "block ({k}, {l}) of A^T B is missing from C"
                    )));
                }
                let wl = sb.cols().block_size(l);
                let (stride_a, stride_b, stride_c) = (a.stride(k), b.stride(l), c.stride(l));
                gemm_tn(
                    a.block(ka),
                    stride_a,
                    b.block(kb),
                    stride_b,
                    c.block_mut_unchecked(kc),
                    stride_c,
                    h,
                    wk,
                    wl,
                );
                flops += 2 * (h * wk * wl) as u64;
            }
        }
    }
    c.compress(ctx)?;
    Ok(flops)
}

/// `tr(D^T G)` summed over entries stored in both matrices, reduced over
/// all ranks.
pub fn tr_tmmult(ctx: &RankContext, d: &BlockCsrMatrix, g: &BlockCsrMatrix) -> Result<f64> {
    let (sd, sg) = (d.scheme(), g.scheme());
    if sd.partition() != sg.partition() || sd.cols() != sg.cols() {
        return Err(Error::Shape("incompatible blockings for tr(D^T G)".into()));
    }
    d.require_readable()?;
    g.require_readable()?;
    let rows = sd.local_pattern().rows();
    let mut sum = 0.0;
    for lr in 0..sd.n_owned_blocks() {
        let h = rows.block_size(lr);
        let gb = g.row_blocks(lr);
        let mut kg = gb.start;
        for kd in d.row_blocks(lr) {
            let j = d.block_col(kd);
            while kg < gb.end && g.block_col(kg) < j {
                kg += 1;
            }
            if kg == gb.end {
                break;
            }
            if g.block_col(kg) != j {
                continue;
            }
            let (w, s1, s2) = (sd.cols().block_size(j), d.stride(j), g.stride(j));
            let (x, y) = (d.block(kd), g.block(kg));
            for r in 0..h {
                sum += x[r * s1..r * s1 + w]
                    .iter()
                    .zip(&y[r * s2..r * s2 + w])
                    .map(|(p, q)| p * q)
                    .sum::<f64>();
            }
        }
    }
    Ok(ctx.allreduce_sum(sum)?)
}
