//! Quadrature building blocks: adaptive 1D integration, Gauss-Legendre
//! nodes, sphere rules, and compensated summation.

use crate::error::{Result, SimError};
use crate::math::Vec3;

/// Kahan compensated accumulator. Used wherever a fixed summation order
/// must stay reproducible and well conditioned.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

const MAX_DEPTH: u32 = 48;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    err_out: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth >= MAX_DEPTH || delta.abs() <= 15.0 * tol {
        *err_out += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1, err_out)
        + adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1, err_out)
}

/// Adaptive Simpson integration of `f` over `[a, b]` to the given relative
/// tolerance. Returns the integral and an error estimate; errors out if the
/// achieved tolerance misses the request by more than a factor of ten.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<(f64, f64)> {
    if a == b {
        return Ok((0.0, 0.0));
    }
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    // First pass fixes the absolute tolerance scale; when the coarse
    // estimate was badly off (steep integrands) a second pass rescales.
    let mut scale = whole.abs().max(1e-300);
    let mut err = 0.0;
    let mut value = adapt(&f, a, b, fa, fm, fb, whole, rel_tol * scale, 0, &mut err);
    if value.abs().max(1e-300) < scale / 4.0 {
        scale = value.abs().max(1e-300);
        err = 0.0;
        value = adapt(&f, a, b, fa, fm, fb, whole, rel_tol * scale, 0, &mut err);
    }
    let achieved = err / value.abs().max(scale);
    if achieved > 10.0 * rel_tol {
        return Err(SimError::Quadrature {
            achieved,
            requested: rel_tol,
        });
    }
    Ok((value, err))
}

/// Convenience wrapper returning only the value.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    Ok(adaptive_simpson(f, a, b, rel_tol)?.0)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, computed by Newton
/// iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((-x, w)); // ascending order
    }
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

/// 26-point sphere rule (octahedron + cuboctahedron + cube directions),
/// exact for spherical polynomials up to degree 7. Weights sum to one, so
/// the rule computes spherical means directly.
pub fn lebedev26() -> Vec<(Vec3, f64)> {
    let mut pts = Vec::with_capacity(26);
    let w1 = 1.0 / 21.0;
    let w2 = 4.0 / 105.0;
    let w3 = 27.0 / 840.0;
    for s in [-1.0, 1.0] {
        pts.push((Vec3::new(s, 0.0, 0.0), w1));
        pts.push((Vec3::new(0.0, s, 0.0), w1));
        pts.push((Vec3::new(0.0, 0.0, s), w1));
    }
    let r = 1.0 / f64::sqrt(2.0);
    for s in [-1.0, 1.0] {
        for t in [-1.0, 1.0] {
            pts.push((Vec3::new(s * r, t * r, 0.0), w2));
            pts.push((Vec3::new(s * r, 0.0, t * r), w2));
            pts.push((Vec3::new(0.0, s * r, t * r), w2));
        }
    }
    let c = 1.0 / f64::sqrt(3.0);
    for s in [-1.0, 1.0] {
        for t in [-1.0, 1.0] {
            for u in [-1.0, 1.0] {
                pts.push((Vec3::new(s * c, t * c, u * c), w3));
            }
        }
    }
    pts
}

/// Product sphere rule: `n` Gauss-Legendre nodes in cos(theta) times `2n`
/// uniform azimuthal nodes. Weights sum to one. Antipodally symmetric, so
/// odd integrands average to exactly zero.
pub fn sphere_product_rule(n: usize) -> Vec<(Vec3, f64)> {
    let gl = gauss_legendre(n);
    let m = 2 * n;
    let mut pts = Vec::with_capacity(n * m);
    for &(u, wu) in &gl {
        let s = (1.0 - u * u).max(0.0).sqrt();
        for j in 0..m {
            let phi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / m as f64;
            let dir = Vec3::new(s * phi.cos(), s * phi.sin(), u);
            pts.push((dir, wu / 2.0 / m as f64));
        }
    }
    pts
}

/// Deterministic, near-area-uniform set of `n` directions (Fibonacci
/// lattice). Equal weights `1/n` turn it into a spherical-mean rule.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    assert!(n >= 1);
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}
