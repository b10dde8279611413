use super::BlockCsrMatrix;
use crate::{Error, Result};

impl BlockCsrMatrix {
    fn require_same_structure(&self, other: &Self) -> Result<()> {
        if !self.scheme().same_structure(other.scheme()) || self.lane_width() != other.lane_width()
        {
            return Err(Error::Shape(
                "matrices do not share a sparsity structure".into(),
            ));
        }
        Ok(())
    }

    fn owned_value_range(&self) -> std::ops::Range<usize> {
        0..self.owned_len()
    }

    /// `self <- a * self + b * x` on owned blocks.
    pub fn scale_add(&mut self, a: f64, b: f64, x: &Self) -> Result<()> {
        self.require_same_structure(x)?;
        self.require_writable()?;
        let r = self.owned_value_range();
        let src = &x.raw_values()[r.clone()];
        for (d, s) in self.raw_values_mut()?[r].iter_mut().zip(src) {
            *d = a * *d + b * s;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) -> Result<()> {
        let r = self.owned_value_range();
        self.raw_values_mut()?[r].iter_mut().for_each(|v| *v *= a);
        Ok(())
    }

    /// Copies entries of `src` into the blocks of `self`; blocks absent in
    /// `src` become zero.
    pub fn copy_pattern_subset(&mut self, src: &Self) -> Result<()> {
        self.require_writable()?;
        src.require_readable()?;
        if self.scheme().partition() != src.scheme().partition()
            || self.scheme().cols() != src.scheme().cols()
        {
            return Err(Error::Shape(
                "copy between differently distributed matrices".into(),
            ));
        }
        for lr in 0..self.scheme().n_owned_blocks() {
            for k in self.row_blocks(lr) {
                let cb = self.block_col(k);
                let (w, sd) = (self.scheme().cols().block_size(cb), self.stride(cb));
                let h = self.scheme().local_pattern().rows().block_size(lr);
                match src.find_block(lr, cb) {
                    Some(ks) => {
                        let ss = src.stride(cb);
                        let from: Vec<f64> = src.block(ks).to_vec();
                        let dst = self.block_mut_unchecked(k);
                        for r in 0..h {
                            dst[r * sd..r * sd + w].copy_from_slice(&from[r * ss..r * ss + w]);
                        }
                    }
                    None => self.block_mut_unchecked(k).fill(0.0),
                }
            }
        }
        Ok(())
    }

    /// Adds `alpha` to every stored diagonal entry of owned rows. Rows and
    /// columns must share a blocking.
    pub fn add_to_diagonal(&mut self, alpha: f64) -> Result<()> {
        self.require_writable()?;
        if self.scheme().partition().rows() != self.scheme().cols() {
            return Err(Error::Shape("diagonal of a non-square blocking".into()));
        }
        let first = self.scheme().owned_blocks().start;
        for lr in 0..self.scheme().n_owned_blocks() {
            let gb = first + lr;
            let Some(k) = self.find_block(lr, gb) else {
                return Err(Error::Pattern(format!("diagonal block {gb} is not stored")));
            };
            let (h, s) = (self.scheme().cols().block_size(gb), self.stride(gb));
            let blk = self.block_mut_unchecked(k);
            for i in 0..h {
                blk[i * s + i] += alpha;
            }
        }
        Ok(())
    }

    /// Sum of diagonal entries over owned rows on this rank.
    pub fn local_trace(&self) -> f64 {
        let first = self.scheme().owned_blocks().start;
        let mut t = 0.0;
        for lr in 0..self.scheme().n_owned_blocks() {
            let gb = first + lr;
            if gb >= self.scheme().cols().n_blocks() {
                break;
            }
            if let Some(k) = self.find_block(lr, gb) {
                let (h, s) = (self.scheme().cols().block_size(gb), self.stride(gb));
                let blk = self.block(k);
                t += (0..h).map(|i| blk[i * s + i]).sum::<f64>();
            }
        }
        t
    }

    /// Owned part of the Frobenius inner product with a matrix of identical
    /// structure.
    pub fn local_frobenius_dot(&self, other: &Self) -> Result<f64> {
        self.require_same_structure(other)?;
        let r = self.owned_value_range();
        Ok(self.raw_values()[r.clone()]
            .iter()
            .zip(&other.raw_values()[r])
            .map(|(a, b)| a * b)
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bcsr::{BlockIndices, BlockSparsityPattern, GhostScheme};
    use std::sync::Arc;

    fn square(rows: &[Vec<usize>]) -> Arc<GhostScheme> {
        let b = Arc::new(BlockIndices::from_sizes(&[2, 3]).unwrap());
        Arc::new(GhostScheme::serial(
            BlockSparsityPattern::from_rows(b.clone(), b, rows.to_vec()).unwrap(),
        ))
    }

    #[test]
    fn scale_add_and_diagonal() {
        let s = square(&[vec![0, 1], vec![1]]);
        let mut a = BlockCsrMatrix::serial(s.clone(), 4).unwrap();
        let mut b = BlockCsrMatrix::serial(s, 4).unwrap();
        a.fill_owned(|r, c| (r + c) as f64).unwrap();
        b.fill_owned(|_, _| 1.0).unwrap();
        a.scale_add(2.0, -1.0, &b).unwrap();
        assert_eq!(a.get(1, 3), Some(7.0));
        a.add_to_diagonal(0.5).unwrap();
        assert_eq!(a.get(3, 3), Some(11.5));
        assert_eq!(a.local_trace(), -1.0 + 3.0 + 7.0 + 11.0 + 15.0 + 2.5);
        assert!(a.padding_is_zero());
        assert_eq!(b.local_frobenius_dot(&b).unwrap(), 4.0 + 6.0 + 9.0);
    }

    #[test]
    fn copy_subset_zeroes_missing_blocks() {
        let mut dst = BlockCsrMatrix::serial(square(&[vec![0, 1], vec![0, 1]]), 8).unwrap();
        let mut src = BlockCsrMatrix::serial(square(&[vec![0], vec![1]]), 8).unwrap();
        dst.fill_owned(|_, _| 9.0).unwrap();
        src.fill_owned(|r, c| (r * 10 + c) as f64).unwrap();
        dst.copy_pattern_subset(&src).unwrap();
        assert_eq!(dst.get(1, 0), Some(10.0));
        assert_eq!(dst.get(0, 3), Some(0.0));
        assert_eq!(dst.get(4, 2), Some(42.0));
        assert!(dst.scale_add(1.0, 1.0, &src).is_err());
    }
}
