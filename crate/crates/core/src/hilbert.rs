//! Hilbert space-filling curve indices for integer lattice points.
//!
//! The encoding follows Skilling's transpose formulation ("Programming the
//! Hilbert curve", 2004). The base orientation is fixed: for `d = 2` and one
//! level the curve visits `(0,0) -> (0,1) -> (1,1) -> (1,0)`, where the first
//! coordinate is the most significant axis. All levels share this top-level
//! orientation, so a key at `levels` shifted right by `d` bits equals the key
//! of the parent point at `levels - 1`.

use crate::{Error, Result};

/// Integer lattice coordinates in grid units.
pub type LatticePoint<const D: usize> = [u64; D];

/// Position along the Hilbert curve, stored as a big-endian multi-word
/// integer (`digits[0]` is the most significant word). Compares
/// lexicographically, which is the curve order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HilbertKey<const D: usize> {
    pub digits: [u64; D],
}

impl<const D: usize> HilbertKey<D> {
    /// The key as a single integer when it fits into 128 bits.
    pub fn to_u128(&self) -> Option<u128> {
        let skip = D.saturating_sub(2);
        if self.digits[..skip].iter().any(|&w| w != 0) {
            return None;
        }
        Some(
            self.digits[skip..]
                .iter()
                .fold(0u128, |acc, &w| (acc << 64) | w as u128),
        )
    }

    /// Drops the lowest `d` bits, i.e. the key of the enclosing curve cell
    /// one level up.
    pub fn parent(&self) -> Self {
        let mut digits = self.digits;
        shift_right(&mut digits, D as u32);
        HilbertKey { digits }
    }
}

fn shift_left_push(words: &mut [u64], bit: u64) {
    let n = words.len();
    for i in 0..n {
        let carry = if i + 1 < n { words[i + 1] >> 63 } else { bit };
        words[i] = (words[i] << 1) | carry;
    }
}

fn shift_right(words: &mut [u64], amount: u32) {
    for _ in 0..amount {
        let mut carry = 0u64;
        for w in words.iter_mut() {
            let next = *w & 1;
            *w = (*w >> 1) | (carry << 63);
            carry = next;
        }
    }
}

/// Position of `p` along the order-`levels` Hilbert curve in `D` dimensions.
pub fn hilbert_index<const D: usize>(p: LatticePoint<D>, levels: u32) -> Result<HilbertKey<D>> {
    if !(1..=3).contains(&D) {
        return Err(Error::Domain(format!("unsupported dimension {D}")));
    }
    if levels == 0 || levels > 64 {
        return Err(Error::Domain(format!(
            "levels must be in 1..=64, got {levels}"
        )));
    }
    if levels < 64 {
        if let Some(c) = p.iter().find(|&&c| c >> levels != 0) {
            return Err(Error::Domain(format!(
                "coordinate {c} out of range for {levels} levels"
            )));
        }
    }

    let mut x = p;
    let top: u64 = 1 << (levels - 1);

    // inverse undo excess work
    let mut q = top;
    while q > 1 {
        let mask = q - 1;
        for i in 0..D {
            if x[i] & q != 0 {
                x[0] ^= mask;
            } else {
                let t = (x[0] ^ x[i]) & mask;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }

    // gray encode
    for i in 1..D {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = top;
    while q > 1 {
        if x[D - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for xi in x.iter_mut() {
        *xi ^= t;
    }

    let mut digits = [0u64; D];
    for bit in (0..levels).rev() {
        for xi in x.iter() {
            shift_left_push(&mut digits, (xi >> bit) & 1);
        }
    }
    Ok(HilbertKey { digits })
}

/// Axis-aligned box used to quantize real coordinates onto the lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox<const D: usize> {
    pub lo: [f64; D],
    pub hi: [f64; D],
}

impl<const D: usize> BoundingBox<D> {
    pub fn new(lo: [f64; D], hi: [f64; D]) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: &[f64; D]) -> bool {
        (0..D).all(|a| x[a] >= self.lo[a] && x[a] <= self.hi[a])
    }
}

/// Quantizes points of a box onto a lattice with `extents` cells per axis and
/// computes their Hilbert keys. The curve resolution is
/// `levels = max(1, ceil(log2(max extent)))`; non-power-of-two extents are
/// embedded in the enclosing power-of-two lattice.
#[derive(Clone, Debug)]
pub struct HilbertQuantizer<const D: usize> {
    pub bbox: BoundingBox<D>,
    pub extents: [usize; D],
    pub levels: u32,
}

impl<const D: usize> HilbertQuantizer<D> {
    pub fn new(bbox: BoundingBox<D>, extents: [usize; D]) -> Result<Self> {
        if extents.iter().any(|&e| e == 0) {
            return Err(Error::Domain("lattice extents must be positive".into()));
        }
        let max_extent = *extents.iter().max().unwrap_or(&1);
        let levels = (usize::BITS - (max_extent - 1).leading_zeros()).max(1);
        Ok(Self {
            bbox,
            extents,
            levels,
        })
    }

    pub fn lattice_point(&self, x: &[f64; D]) -> Result<LatticePoint<D>> {
        if !self.bbox.contains(x) {
            return Err(Error::Domain(format!("point {x:?} outside bounding box")));
        }
        let mut p = [0u64; D];
        for a in 0..D {
            let width = self.bbox.hi[a] - self.bbox.lo[a];
            let cell = if width > 0.0 {
                ((x[a] - self.bbox.lo[a]) / width * self.extents[a] as f64).floor() as usize
            } else {
                0
            };
            p[a] = cell.min(self.extents[a] - 1) as u64;
        }
        Ok(p)
    }

    pub fn key(&self, x: &[f64; D]) -> Result<HilbertKey<D>> {
        hilbert_index(self.lattice_point(x)?, self.levels)
    }
}

/// Returns the indices of `points` sorted along the Hilbert curve; ties keep
/// the original index order.
pub fn order_by_hilbert<const D: usize>(
    points: &[[f64; D]],
    bbox: &BoundingBox<D>,
    extents: [usize; D],
) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let quantizer = HilbertQuantizer::new(*bbox, extents)?;
    let mut keyed = points
        .iter()
        .enumerate()
        .map(|(i, x)| quantizer.key(x).map(|k| (k, i)))
        .collect::<Result<Vec<_>>>()?;
    keyed.sort();
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_u128<const D: usize>(p: [u64; D], levels: u32) -> u128 {
        hilbert_index(p, levels).unwrap().to_u128().unwrap()
    }

    fn all_points<const D: usize>(levels: u32) -> Vec<[u64; D]> {
        let side = 1u64 << levels;
        let total = side.pow(D as u32);
        (0..total)
            .map(|mut n| {
                let mut p = [0u64; D];
                for c in p.iter_mut() {
                    *c = n % side;
                    n /= side;
                }
                p
            })
            .collect()
    }

    #[test]
    fn one_dimensional_curve_is_identity() {
        assert_eq!(key_u128([5], 3), 5);
        for levels in 1..=6 {
            for x in 0..(1u64 << levels) {
                assert_eq!(key_u128([x], levels), x as u128);
            }
        }
    }

    #[test]
    fn order_one_square() {
        let visit = [[0, 0], [0, 1], [1, 1], [1, 0]];
        for (k, p) in visit.iter().enumerate() {
            assert_eq!(key_u128(*p, 1), k as u128);
        }
    }

    #[test]
    fn cube_level_two_is_bijective() {
        let mut keys: Vec<u128> = all_points::<3>(2)
            .into_iter()
            .map(|p| key_u128(p, 2))
            .collect();
        keys.sort();
        assert_eq!(keys, (0..64).collect::<Vec<u128>>());
    }

    #[test]
    fn out_of_range_coordinate_is_rejected() {
        assert!(matches!(hilbert_index([4, 0], 2), Err(Error::Domain(_))));
        assert!(hilbert_index([3, 3], 2).is_ok());
        assert!(hilbert_index([0, 0], 0).is_err());
    }

    #[test]
    fn wide_keys_use_multiple_words() {
        let p = [u64::MAX, 0, 12345];
        let k = hilbert_index(p, 64).unwrap();
        assert_ne!(k.digits[0], 0);
        let q = [u64::MAX, 1, 12345];
        assert_ne!(k, hilbert_index(q, 64).unwrap());
    }

    #[test]
    fn nesting_across_levels() {
        for p in all_points::<3>(3) {
            let fine = hilbert_index(p, 3).unwrap();
            let parent = hilbert_index([p[0] >> 1, p[1] >> 1, p[2] >> 1], 2).unwrap();
            assert_eq!(fine.parent(), parent);
        }
        for p in all_points::<2>(4) {
            let fine = hilbert_index(p, 4).unwrap();
            let parent = hilbert_index([p[0] >> 1, p[1] >> 1], 3).unwrap();
            assert_eq!(fine.parent(), parent);
        }
    }

    #[test]
    fn order_single_and_ties() {
        let bbox = BoundingBox::new([0.0, 0.0], [1.0, 1.0]);
        assert_eq!(
            order_by_hilbert(&[[0.3, 0.3]], &bbox, [4, 4]).unwrap(),
            vec![0]
        );
        assert_eq!(
            order_by_hilbert(&[[0.3, 0.3], [0.3, 0.3]], &bbox, [4, 4]).unwrap(),
            vec![0, 1]
        );
        assert!(order_by_hilbert::<2>(&[], &bbox, [4, 4])
            .unwrap()
            .is_empty());
        assert!(matches!(
            order_by_hilbert(&[[1.5, 0.3]], &bbox, [4, 4]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn grid_centers_are_visited_face_adjacent() {
        let bbox = BoundingBox::new([0.0, 0.0], [4.0, 4.0]);
        let centers: Vec<[f64; 2]> = (0..16)
            .map(|i| [(i % 4) as f64 + 0.5, (i / 4) as f64 + 0.5])
            .collect();
        let order = order_by_hilbert(&centers, &bbox, [4, 4]).unwrap();
        let mut seen = order.clone();
        seen.sort();
        assert_eq!(seen, (0..16).collect::<Vec<_>>());
        for w in order.windows(2) {
            let (a, b) = (centers[w[0]], centers[w[1]]);
            let manhattan = (a[0] - b[0]).abs() + (a[1] - b[1]).abs();
            assert_eq!(manhattan, 1.0);
        }
    }

    #[test]
    fn quantizer_levels() {
        let b = BoundingBox::new([0.0; 3], [1.0; 3]);
        assert_eq!(HilbertQuantizer::new(b, [1, 1, 1]).unwrap().levels, 1);
        assert_eq!(HilbertQuantizer::new(b, [4, 4, 4]).unwrap().levels, 2);
        assert_eq!(HilbertQuantizer::new(b, [5, 4, 4]).unwrap().levels, 3);
        assert_eq!(HilbertQuantizer::new(b, [5, 16, 4]).unwrap().levels, 4);
    }
}
