//! Uniform cubic grid and node-centered scalar lattices.

use crate::error::{Result, SimError};
use crate::math::Vec3;

/// Geometry of the computational cube `[center - hw, center + hw]^3`,
/// discretized into `cells_per_axis` cells per axis. Lattices live on the
/// `cells_per_axis + 1` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub center: Vec3,
    pub half_width: f64,
    pub cells_per_axis: usize,
    pub dx: f64,
}

impl GridSpec {
    pub fn new(center: Vec3, half_width: f64, cells_per_axis: usize) -> Result<Self> {
        if cells_per_axis < 8 || cells_per_axis % 2 != 0 {
            return Err(SimError::InvalidConfig(format!(
                "cells_per_axis must be even and at least 8, got {cells_per_axis}"
            )));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "half_width must be positive and finite, got {half_width}"
            )));
        }
        let dx = 2.0 * half_width / cells_per_axis as f64;
        Ok(Self {
            center,
            half_width,
            cells_per_axis,
            dx,
        })
    }

    /// Nodes per axis (`cells_per_axis + 1`).
    pub fn nodes_per_axis(&self) -> usize {
        self.cells_per_axis + 1
    }

    pub fn num_nodes(&self) -> usize {
        let n = self.nodes_per_axis();
        n * n * n
    }

    pub fn min_corner(&self) -> Vec3 {
        self.center - Vec3::new(self.half_width, self.half_width, self.half_width)
    }

    pub fn node_pos(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let m = self.min_corner();
        Vec3::new(
            m.x + i as f64 * self.dx,
            m.y + j as f64 * self.dx,
            m.z + k as f64 * self.dx,
        )
    }

    /// True if the node has all six neighbors (one cell from every face).
    pub fn is_interior(&self, i: usize, j: usize, k: usize) -> bool {
        let n = self.cells_per_axis;
        (1..n).contains(&i) && (1..n).contains(&j) && (1..n).contains(&k)
    }

    /// Fractional node coordinates of a point.
    pub fn frac_coords(&self, x: Vec3) -> Vec3 {
        (x - self.min_corner()) / self.dx
    }

    /// Locate a point for trilinear interpolation, requiring it to sit at
    /// least one cell inside the boundary so that node-centered central
    /// differences are available at all eight corners.
    pub fn locate_interior(&self, x: Vec3) -> Option<CellLocation> {
        let u = self.frac_coords(x);
        let n = self.cells_per_axis as f64;
        for d in 0..3 {
            if !(u[d] >= 1.0 && u[d] <= n - 1.0) {
                return None;
            }
        }
        let clamp = |v: f64| -> usize { (v.floor() as usize).min(self.cells_per_axis - 2) };
        // Anchor so that base and base+1 are both central-differentiable.
        let i = clamp(u.x).max(1);
        let j = clamp(u.y).max(1);
        let k = clamp(u.z).max(1);
        Some(CellLocation {
            base: [i, j, k],
            frac: [u.x - i as f64, u.y - j as f64, u.z - k as f64],
        })
    }

    /// Cell index for bucketing particles (clamped to the grid).
    pub fn cell_of(&self, x: Vec3) -> [usize; 3] {
        let u = self.frac_coords(x);
        let mut c = [0usize; 3];
        for d in 0..3 {
            c[d] = (u[d].floor().max(0.0) as usize).min(self.cells_per_axis - 1);
        }
        c
    }
}

/// Interpolation anchor: base node and fractional offsets in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct CellLocation {
    pub base: [usize; 3],
    pub frac: [f64; 3],
}

impl CellLocation {
    /// The eight trilinear (cloud-in-cell) corner weights, in fixed corner
    /// order `(di, dj, dk)` with `dk` fastest. They sum to one exactly up
    /// to rounding, which is what makes deposition conservative.
    pub fn weights(&self) -> [([usize; 3], f64); 8] {
        let [fx, fy, fz] = self.frac;
        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        let wz = [1.0 - fz, fz];
        let mut out = [([0usize; 3], 0.0); 8];
        let mut m = 0;
        for di in 0..2 {
            for dj in 0..2 {
                for dk in 0..2 {
                    out[m] = (
                        [self.base[0] + di, self.base[1] + dj, self.base[2] + dk],
                        wx[di] * wy[dj] * wz[dk],
                    );
                    m += 1;
                }
            }
        }
        out
    }
}

/// Node-centered scalar lattice on a `GridSpec`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    n: usize, // nodes per axis
    data: Vec<f64>,
}

impl Lattice {
    pub fn zeros(grid: &GridSpec) -> Self {
        let n = grid.nodes_per_axis();
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    /// Fill from a function of the node position.
    pub fn from_fn(grid: &GridSpec, f: impl Fn(Vec3) -> f64) -> Self {
        let n = grid.nodes_per_axis();
        let mut data = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    data.push(f(grid.node_pos(i, j, k)));
                }
            }
        }
        Self { n, data }
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let m = self.idx(i, j, k);
        self.data[m] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let m = self.idx(i, j, k);
        self.data[m] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        let mut k = crate::quad::KahanSum::new();
        for &v in &self.data {
            k.add(v);
        }
        k.value()
    }

    /// Merge another lattice by nodewise addition.
    pub fn accumulate(&mut self, other: &Lattice) {
        assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Trilinear interpolation at a located point.
    pub fn interp(&self, loc: &CellLocation) -> f64 {
        let mut acc = 0.0;
        for ([i, j, k], w) in loc.weights() {
            acc += w * self.get(i, j, k);
        }
        acc
    }

    /// Central-difference gradient component at a node; caller guarantees
    /// the node is interior along axis `d`.
    #[inline]
    pub fn central_diff(&self, i: usize, j: usize, k: usize, d: usize, inv_2dx: f64) -> f64 {
        let (ip, im) = match d {
            0 => (self.idx(i + 1, j, k), self.idx(i - 1, j, k)),
            1 => (self.idx(i, j + 1, k), self.idx(i, j - 1, k)),
            _ => (self.idx(i, j, k + 1), self.idx(i, j, k - 1)),
        };
        (self.data[ip] - self.data[im]) * inv_2dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(Vec3::zero(), 2.0, 16).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(Vec3::zero(), 1.0, 7).is_err());
        assert!(GridSpec::new(Vec3::zero(), 1.0, 9).is_err());
        assert!(GridSpec::new(Vec3::zero(), -1.0, 16).is_err());
    }

    #[test]
    fn node_positions_span_cube() {
        let g = grid();
        assert_eq!(g.node_pos(0, 0, 0), Vec3::new(-2.0, -2.0, -2.0));
        let n = g.cells_per_axis;
        assert_eq!(g.node_pos(n, n, n), Vec3::new(2.0, 2.0, 2.0));
        assert_eq!(g.node_pos(n / 2, n / 2, n / 2), Vec3::zero());
    }

    #[test]
    fn cic_weights_sum_to_one() {
        let g = grid();
        let loc = g.locate_interior(Vec3::new(0.13, -0.72, 0.55)).unwrap();
        let total: f64 = loc.weights().iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn locate_rejects_near_boundary() {
        let g = grid();
        assert!(g.locate_interior(Vec3::new(1.9, 0.0, 0.0)).is_none());
        assert!(g.locate_interior(Vec3::new(2.5, 0.0, 0.0)).is_none());
        assert!(g.locate_interior(Vec3::new(1.7, 0.0, 0.0)).is_some());
    }

    #[test]
    fn interp_is_exact_at_nodes_and_for_affine_fields() {
        let g = grid();
        let lat = Lattice::from_fn(&g, |x| 1.5 + 2.0 * x.x - 0.5 * x.y + 0.25 * x.z);
        let at_node = g.node_pos(5, 7, 9);
        let loc = g.locate_interior(at_node).unwrap();
        assert!((lat.interp(&loc) - lat.get(5, 7, 9)).abs() < 1e-14);
        let p = Vec3::new(0.3, -0.9, 1.1);
        let loc = g.locate_interior(p).unwrap();
        let exact = 1.5 + 2.0 * p.x - 0.5 * p.y + 0.25 * p.z;
        assert!((lat.interp(&loc) - exact).abs() < 1e-13);
    }
}
