//! Dense complex tensors over (Z_L^d)^n, stored row-major with block linear
//! indices along every axis.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockTensor {
    pub rank: usize,
    pub nb: usize,
    pub data: Vec<C64>,
}

impl BlockTensor {
    pub fn zeros(rank: usize, nb: usize) -> Self {
        Self {
            rank,
            nb,
            data: vec![C64::new(0.0, 0.0); nb.pow(rank as u32)],
        }
    }

    pub fn from_fn(rank: usize, nb: usize, mut f: impl FnMut(&[usize]) -> C64) -> Self {
        let mut t = Self::zeros(rank, nb);
        let mut idx = vec![0usize; rank];
        for k in 0..t.data.len() {
            t.unflatten_into(k, &mut idx);
            t.data[k] = f(&idx);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank);
        idx.iter().fold(0, |acc, &i| acc * self.nb + i)
    }

    pub fn unflatten_into(&self, mut k: usize, idx: &mut [usize]) {
        for i in (0..self.rank).rev() {
            idx[i] = k % self.nb;
            k /= self.nb;
        }
    }

    pub fn unflatten(&self, k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.rank];
        self.unflatten_into(k, &mut idx);
        idx
    }

    #[inline]
    pub fn get(&self, idx: &[usize]) -> C64 {
        self.data[self.flat(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: &[usize], v: C64) {
        let k = self.flat(idx);
        self.data[k] = v;
    }

    /// Stride of axis `axis` in the flat layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.nb.pow((self.rank - 1 - axis) as u32)
    }

    pub fn check_rank(&self, rank: usize) -> Result<()> {
        if self.rank != rank {
            return Err(Error::RankMismatch {
                expected: rank,
                got: self.rank,
            });
        }
        Ok(())
    }

    /// Apply a dense nb×nb matrix `m` (row-major) along `axis`:
    /// out[.., a, ..] = Σ_b m[a, b] self[.., b, ..].
    pub fn apply_axis(&self, axis: usize, m: &[C64]) -> Self {
        assert!(axis < self.rank);
        assert_eq!(m.len(), self.nb * self.nb);
        let nb = self.nb;
        let stride = self.stride(axis);
        let block = stride * nb;
        let mut out = Self::zeros(self.rank, nb);
        let mut line = vec![C64::new(0.0, 0.0); nb];
        for outer in (0..self.data.len()).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                for (b, slot) in line.iter_mut().enumerate() {
                    *slot = self.data[base + b * stride];
                }
                for a in 0..nb {
                    let row = &m[a * nb..(a + 1) * nb];
                    let mut acc = C64::new(0.0, 0.0);
                    for b in 0..nb {
                        acc += row[b] * line[b];
                    }
                    out.data[base + a * stride] = acc;
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += *y;
        }
    }

    pub fn scale(&mut self, s: C64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn sum(&self) -> C64 {
        self.data.iter().sum()
    }

    /// max |self − other|.
    pub fn max_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// max |self − other| / max(|other|, floor).
    pub fn rel_diff(&self, other: &Self) -> f64 {
        self.max_diff(other) / other.max_abs().max(f64::MIN_POSITIVE)
    }

    /// Cyclic rotation of axes: out[a_2, …, a_n, a_1] = self[a_1, …, a_n].
    pub fn rotate_axes(&self) -> Self {
        let mut idx = vec![0; self.rank];
        let mut rot = vec![0; self.rank];
        let mut out = Self::zeros(self.rank, self.nb);
        for k in 0..self.data.len() {
            self.unflatten_into(k, &mut idx);
            for i in 0..self.rank {
                rot[i] = idx[(i + 1) % self.rank];
            }
            out.set(&rot, self.data[k]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_roundtrip() {
        let t = BlockTensor::zeros(3, 4);
        for k in 0..t.len() {
            assert_eq!(t.flat(&t.unflatten(k)), k);
        }
    }

    #[test]
    fn apply_axis_matches_naive() {
        let nb = 3;
        let t = BlockTensor::from_fn(3, nb, |i| C64::new((i[0] + 2 * i[1]) as f64, i[2] as f64));
        let m: Vec<C64> = (0..nb * nb).map(|k| C64::new(k as f64, -(k as f64) / 3.0)).collect();
        for axis in 0..3 {
            let out = t.apply_axis(axis, &m);
            let mut idx = vec![0; 3];
            for k in 0..t.len() {
                t.unflatten_into(k, &mut idx);
                let mut acc = C64::new(0.0, 0.0);
                let mut j = idx.clone();
                for b in 0..nb {
                    j[axis] = b;
                    acc += m[idx[axis] * nb + b] * t.get(&j);
                }
                assert!((out.data[k] - acc).norm() < 1e-12);
            }
        }
    }
}
