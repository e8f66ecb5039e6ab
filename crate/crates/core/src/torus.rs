//! Periodic lattice `Z_L^d` with flat site indexing.

use serde::{Deserialize, Serialize};

/// Discrete torus of `side^dim` sites. Sites are addressed by a flat index
/// in row-major order (axis 0 varies slowest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Torus {
    side: usize,
    dim: usize,
}

impl Torus {
    /// # Panics
    /// If `side` or `dim` is zero.
    pub fn new(side: usize, dim: usize) -> Self {
        assert!(side > 0 && dim > 0, "torus needs positive side and dimension");
        Self { side, dim }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    /// Flat index of an arbitrary integer vector, wrapped onto the torus.
    pub fn index(&self, coords: &[i64]) -> usize {
        debug_assert_eq!(coords.len(), self.dim);
        let side = self.side as i64;
        coords
            .iter()
            .fold(0usize, |acc, &c| acc * self.side + c.rem_euclid(side) as usize)
    }

    /// Coordinates in `0..side` for each axis.
    pub fn coords(&self, mut index: usize) -> Vec<i64> {
        let mut out = vec![0i64; self.dim];
        for slot in out.iter_mut().rev() {
            *slot = (index % self.side) as i64;
            index /= self.side;
        }
        out
    }

    /// Coordinates mapped into the centered window `[-side/2, side/2)`.
    pub fn centered_coords(&self, index: usize) -> Vec<i64> {
        let side = self.side as i64;
        self.coords(index)
            .into_iter()
            .map(|c| if c >= (side + 1) / 2 { c - side } else { c })
            .collect()
    }

    /// Site reached from `index` after displacement `disp` (wrapped).
    pub fn shift(&self, index: usize, disp: &[i64]) -> usize {
        debug_assert_eq!(disp.len(), self.dim);
        let side = self.side as i64;
        let mut rest = index;
        let mut stride = 1usize;
        let mut out = 0usize;
        for axis in (0..self.dim).rev() {
            let c = (rest % self.side) as i64;
            rest /= self.side;
            let moved = (c + disp[axis]).rem_euclid(side) as usize;
            out += moved * stride;
            stride *= self.side;
        }
        out
    }

    /// Site of the point reflection `x -> -x`.
    pub fn negate(&self, index: usize) -> usize {
        let c: Vec<i64> = self.coords(index).into_iter().map(|c| -c).collect();
        self.index(&c)
    }

    pub fn origin(&self) -> usize {
        0
    }
}
