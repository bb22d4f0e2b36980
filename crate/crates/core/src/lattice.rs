//! Torus geometry: the site torus Z_{WL}^d, its partition into blocks of
//! side W, and the block lattice Z_L^d.
//!
//! Site flat indices are block-major: `flat = block_lin * W^d + offset_lin`,
//! so the sites of one block form a contiguous range. Block linear indices
//! use coordinates reduced mod L in `[0, L)` (row-major), which makes block 0
//! the origin of the block-lattice FFT.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduce every coordinate of `delta` into the canonical interval
/// `[-((side-1)/2), side/2]`.
///
/// For even `side` this is `[-side/2+1, side/2]`; for odd `side` it is the
/// symmetric interval.
pub fn periodic_rep(delta: &[i64], side: i64) -> Vec<i64> {
    delta.iter().map(|&x| rep1(x, side)).collect()
}

/// Scalar version of [`periodic_rep`].
#[inline]
pub fn rep1(x: i64, side: i64) -> i64 {
    debug_assert!(side >= 1);
    let lo = -((side - 1) / 2);
    (x - lo).rem_euclid(side) + lo
}

/// Geometry of the torus Z_{WL}^d with its block decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGeometry {
    pub d: usize,
    pub w: usize,
    pub l: usize,
}

impl TorusGeometry {
    pub fn new(d: usize, w: usize, l: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidGeometry("dimension d must be >= 1".into()));
        }
        if w == 0 {
            return Err(Error::InvalidGeometry("bandwidth W must be >= 1".into()));
        }
        if l < 2 {
            return Err(Error::InvalidGeometry("block side L must be >= 2".into()));
        }
        let n = (w * l)
            .checked_pow(d as u32)
            .ok_or_else(|| Error::InvalidGeometry("N overflows usize".into()))?;
        if n > 1 << 16 {
            return Err(Error::InvalidGeometry(format!(
                "N = {n} is beyond dense desk scale"
            )));
        }
        Ok(Self { d, w, l })
    }

    /// Side length W·L of the site torus.
    pub fn side(&self) -> usize {
        self.w * self.l
    }

    /// Total number of sites N = (WL)^d.
    pub fn n_sites(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    /// Number of sites per block, W^d.
    pub fn block_size(&self) -> usize {
        self.w.pow(self.d as u32)
    }

    /// Number of blocks, L^d.
    pub fn n_blocks(&self) -> usize {
        self.l.pow(self.d as u32)
    }

    /// W^d as a float.
    pub fn wd(&self) -> f64 {
        self.block_size() as f64
    }

    /// Linear index of a block given by arbitrary integer coordinates.
    pub fn block_lin(&self, a: &[i64]) -> usize {
        debug_assert_eq!(a.len(), self.d);
        let l = self.l as i64;
        a.iter()
            .fold(0usize, |acc, &x| acc * self.l + x.rem_euclid(l) as usize)
    }

    /// Canonical block coordinates of a block linear index.
    pub fn block_coords(&self, lin: usize) -> Vec<i64> {
        let mut out = vec![0i64; self.d];
        let mut r = lin;
        for i in (0..self.d).rev() {
            out[i] = rep1((r % self.l) as i64, self.l as i64);
            r /= self.l;
        }
        out
    }

    /// Flat index of a site given by arbitrary integer coordinates.
    pub fn site_lin(&self, x: &[i64]) -> usize {
        debug_assert_eq!(x.len(), self.d);
        let w = self.w as i64;
        let mut blk = 0usize;
        let mut off = 0usize;
        for &xi in x {
            let xi = rep1(xi, (self.w * self.l) as i64);
            let b = ceil_div(xi, w);
            let o = xi - (b - 1) * w - 1;
            blk = blk * self.l + b.rem_euclid(self.l as i64) as usize;
            off = off * self.w + o as usize;
        }
        blk * self.block_size() + off
    }

    /// Canonical site coordinates of a flat index.
    pub fn site_coords(&self, lin: usize) -> Vec<i64> {
        let bs = self.block_size();
        let (mut blk, mut off) = (lin / bs, lin % bs);
        let mut out = vec![0i64; self.d];
        let side = (self.w * self.l) as i64;
        for i in (0..self.d).rev() {
            let b = (blk % self.l) as i64;
            let o = (off % self.w) as i64;
            blk /= self.l;
            off /= self.w;
            out[i] = rep1((b - 1) * self.w as i64 + 1 + o, side);
        }
        out
    }

    /// Canonical coordinates of the block containing site `x`.
    pub fn block_of(&self, x: &[i64]) -> Vec<i64> {
        let w = self.w as i64;
        let side = (self.w * self.l) as i64;
        x.iter()
            .map(|&xi| rep1(ceil_div(rep1(xi, side), w), self.l as i64))
            .collect()
    }

    /// Block linear index of a site flat index.
    #[inline]
    pub fn block_of_lin(&self, site: usize) -> usize {
        site / self.block_size()
    }

    /// Flat indices of the sites of block `a` (a contiguous range).
    pub fn cells_of(&self, a: usize) -> std::ops::Range<usize> {
        let bs = self.block_size();
        a * bs..(a + 1) * bs
    }

    /// Periodic L¹ distance between two sites.
    pub fn dist(&self, x: &[i64], y: &[i64]) -> i64 {
        l1_rep(x, y, (self.w * self.l) as i64)
    }

    /// Periodic L¹ distance between two blocks (coordinates).
    pub fn dist_block(&self, a: &[i64], b: &[i64]) -> i64 {
        l1_rep(a, b, self.l as i64)
    }

    /// Periodic L¹ distance between two blocks given by linear index.
    pub fn dist_block_lin(&self, a: usize, b: usize) -> i64 {
        self.dist_block(&self.block_coords(a), &self.block_coords(b))
    }

    /// Linear index of the block difference `b - a`.
    pub fn block_diff_lin(&self, a: usize, b: usize) -> usize {
        let mut out = 0usize;
        let (mut ra, mut rb) = (a, b);
        let mut stride = 1usize;
        for _ in 0..self.d {
            let da = ra % self.l;
            let db = rb % self.l;
            ra /= self.l;
            rb /= self.l;
            out += ((db + self.l - da) % self.l) * stride;
            stride *= self.l;
        }
        out
    }

    /// Periodic Euclidean norm of a block linear index viewed as a vector.
    pub fn block_norm2(&self, a: usize) -> f64 {
        self.block_coords(a)
            .iter()
            .map(|&x| (x * x) as f64)
            .sum::<f64>()
            .sqrt()
    }
}

fn l1_rep(x: &[i64], y: &[i64], side: i64) -> i64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| rep1(a - b, side).abs())
        .sum()
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rep_examples() {
        assert_eq!(periodic_rep(&[5, 0, 0], 4), vec![1, 0, 0]);
        assert_eq!(periodic_rep(&[0, 0, 0], 8), vec![0, 0, 0]);
        assert_eq!(periodic_rep(&[3, -3, 2], 4), vec![-1, 1, 2]);
    }

    #[test]
    fn rep_odd_side_symmetric() {
        let reps: Vec<i64> = (0..5).map(|x| rep1(x, 5)).collect();
        assert_eq!(reps, vec![0, 1, 2, -2, -1]);
    }

    #[test]
    fn dist_examples() {
        let g = TorusGeometry::new(3, 1, 4).unwrap();
        assert_eq!(g.dist(&[2, 0, 0], &[-1, 0, 0]), 1);
        assert_eq!(g.dist(&[1, 1, 1], &[1, 1, 1]), 0);
        assert_eq!(g.dist(&[2, 2, 2], &[0, 0, 0]), 6);
    }

    #[test]
    fn block_membership_examples() {
        let g = TorusGeometry::new(3, 2, 4).unwrap();
        assert_eq!(g.block_of(&[1, 1, 1]), vec![1, 1, 1]);
        assert_eq!(g.block_of(&[2, 2, 2]), vec![1, 1, 1]);
        assert_eq!(g.block_of(&[3, 1, 2]), vec![2, 1, 1]);
    }

    #[test]
    fn site_lin_roundtrip_and_blocks() {
        let g = TorusGeometry::new(3, 2, 3).unwrap();
        for lin in 0..g.n_sites() {
            let x = g.site_coords(lin);
            assert_eq!(g.site_lin(&x), lin);
            let a = g.block_of(&x);
            assert_eq!(g.block_lin(&a), g.block_of_lin(lin));
            assert!(g.cells_of(g.block_lin(&a)).contains(&lin));
        }
        for a in 0..g.n_blocks() {
            assert_eq!(g.block_lin(&g.block_coords(a)), a);
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(TorusGeometry::new(0, 2, 2).is_err());
        assert!(TorusGeometry::new(3, 0, 2).is_err());
        assert!(TorusGeometry::new(3, 2, 1).is_err());
    }
}
