//! Admissible initial data: compactly supported polynomial bumps for the
//! matter density and the field, and deterministic midpoint sampling of
//! the matter density into a particle ensemble.
//!
//! The profile `q(s) = (1-s)^k` for `s < 1` (zero otherwise), composed
//! with `s = |x - c|^2 / R^2`, is `C^(k-1)` with exact compact support.
//! Exponent 4 gives the C^3 regularity required of the initial field,
//! exponent 3 the C^2 regularity of its time derivative; the matter
//! density uses exponent 4 in both position and momentum.

use crate::error::{Result, SimError};
use crate::grid::GridSpec;
use crate::math::Vec3;
use crate::state::{Ensemble, PhaseParticle};

/// Bump profile `(1-s)^k` on `s < 1`, zero elsewhere.
pub fn bump_profile(s: f64, k: u32) -> f64 {
    if s < 1.0 {
        (1.0 - s).powi(k as i32)
    } else {
        0.0
    }
}

fn bump_profile_d1(s: f64, k: u32) -> f64 {
    if s < 1.0 {
        -(k as f64) * (1.0 - s).powi(k as i32 - 1)
    } else {
        0.0
    }
}

fn bump_profile_d2(s: f64, k: u32) -> f64 {
    if s < 1.0 {
        (k as f64) * (k as f64 - 1.0) * (1.0 - s).powi(k as i32 - 2)
    } else {
        0.0
    }
}

/// Radially symmetric bump `A * q(|x - c|^2 / R^2)` with closed-form
/// directional derivatives, as needed by the spherical-means evaluator.
#[derive(Debug, Clone, Copy)]
pub struct RadialBump {
    pub amplitude: f64,
    pub radius: f64,
    pub center: Vec3,
    pub exponent: u32,
}

impl RadialBump {
    pub fn value(&self, x: Vec3) -> f64 {
        let s = (x - self.center).norm_sq() / (self.radius * self.radius);
        self.amplitude * bump_profile(s, self.exponent)
    }

    /// Directional derivative along the unit vector `nu`.
    pub fn dir_deriv(&self, x: Vec3, nu: Vec3) -> f64 {
        let r2 = self.radius * self.radius;
        let d = x - self.center;
        let s = d.norm_sq() / r2;
        self.amplitude * bump_profile_d1(s, self.exponent) * 2.0 * d.dot(nu) / r2
    }

    /// Second directional derivative `nu^T Hess nu` along the unit vector.
    pub fn second_dir_deriv(&self, x: Vec3, nu: Vec3) -> f64 {
        let r2 = self.radius * self.radius;
        let d = x - self.center;
        let s = d.norm_sq() / r2;
        let dn = d.dot(nu);
        self.amplitude
            * (bump_profile_d2(s, self.exponent) * 4.0 * dn * dn / (r2 * r2)
                + bump_profile_d1(s, self.exponent) * 2.0 / r2)
    }
}

/// Parameters of the initial-data family.
#[derive(Debug, Clone, Copy)]
pub struct DataParams {
    /// Matter amplitude (must be non-negative).
    pub a_f: f64,
    /// Spatial support radius of the matter bump.
    pub r_x: f64,
    /// Momentum support radius of the matter bump.
    pub r_p: f64,
    /// Field amplitude and support radius.
    pub a_phi: f64,
    pub r_phi: f64,
    /// Field time-derivative amplitude and support radius.
    pub a_pi: f64,
    pub r_pi: f64,
    /// Bump centers (momentum bump is always centered at the origin).
    pub f0_center: Vec3,
    pub phi_center: Vec3,
    pub pi_center: Vec3,
}

impl Default for DataParams {
    fn default() -> Self {
        Self {
            a_f: 0.0,
            r_x: 1.0,
            r_p: 1.0,
            a_phi: 0.0,
            r_phi: 1.0,
            a_pi: 0.0,
            r_pi: 1.0,
            f0_center: Vec3::zero(),
            phi_center: Vec3::zero(),
            pi_center: Vec3::zero(),
        }
    }
}

impl DataParams {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("r_x", self.r_x), ("r_p", self.r_p), ("r_phi", self.r_phi), ("r_pi", self.r_pi)] {
            if !(r > 0.0) || !r.is_finite() {
                return Err(SimError::InvalidConfig(format!(
                    "support radius {name} must be positive, got {r}"
                )));
            }
        }
        for (name, a) in [("a_f", self.a_f), ("a_phi", self.a_phi), ("a_pi", self.a_pi)] {
            if !a.is_finite() {
                return Err(SimError::InvalidConfig(format!("amplitude {name} must be finite")));
            }
        }
        if self.a_f < 0.0 {
            return Err(SimError::InvalidConfig(format!(
                "matter amplitude a_f must be non-negative, got {}",
                self.a_f
            )));
        }
        Ok(())
    }

    pub fn phi0_bump(&self) -> RadialBump {
        RadialBump {
            amplitude: self.a_phi,
            radius: self.r_phi,
            center: self.phi_center,
            exponent: 4,
        }
    }

    pub fn phi1_bump(&self) -> RadialBump {
        RadialBump {
            amplitude: self.a_pi,
            radius: self.r_pi,
            center: self.pi_center,
            exponent: 3,
        }
    }

    /// Largest distance from the grid center at which any datum is
    /// supported, used for causal domain sizing.
    pub fn support_extent(&self, grid_center: Vec3) -> f64 {
        let mut ext: f64 = 0.0;
        if self.a_f > 0.0 {
            ext = ext.max((self.f0_center - grid_center).norm() + self.r_x);
        }
        if self.a_phi != 0.0 {
            ext = ext.max((self.phi_center - grid_center).norm() + self.r_phi);
        }
        if self.a_pi != 0.0 {
            ext = ext.max((self.pi_center - grid_center).norm() + self.r_pi);
        }
        ext
    }
}

/// Initial phase-space density.
pub fn f0_eval(x: Vec3, p: Vec3, params: &DataParams) -> f64 {
    let sx = (x - params.f0_center).norm_sq() / (params.r_x * params.r_x);
    let sp = p.norm_sq() / (params.r_p * params.r_p);
    params.a_f * bump_profile(sx, 4) * bump_profile(sp, 4)
}

/// Initial field.
pub fn phi0_eval(x: Vec3, params: &DataParams) -> f64 {
    params.phi0_bump().value(x)
}

/// Initial field time derivative.
pub fn phi1_eval(x: Vec3, params: &DataParams) -> f64 {
    params.phi1_bump().value(x)
}

/// Deterministic midpoint sampling of the matter density into particles.
///
/// Both position and momentum lattices are midpoint grids over the cubes
/// that bound the respective supports; sample points where the density
/// vanishes are dropped. The assembly order is a fixed nested loop, so
/// identical inputs give bit-identical ensembles.
pub fn sample_ensemble(
    params: &DataParams,
    nx_per_axis: usize,
    np_per_axis: usize,
    grid: &GridSpec,
) -> Result<Ensemble> {
    params.validate()?;
    if nx_per_axis < 4 || np_per_axis < 4 {
        return Err(SimError::InvalidConfig(format!(
            "sampling counts must be at least 4 per axis, got {nx_per_axis} (x), {np_per_axis} (p)"
        )));
    }
    let mut particles = Vec::new();
    if params.a_f == 0.0 {
        return Ok(Ensemble { particles, time: 0.0 });
    }

    let hx = 2.0 * params.r_x / nx_per_axis as f64;
    let hp = 2.0 * params.r_p / np_per_axis as f64;
    let vol = hx * hx * hx * hp * hp * hp;

    let x_coord = |j: usize, c: f64| c - params.r_x + (j as f64 + 0.5) * hx;
    let p_coord = |j: usize| -params.r_p + (j as f64 + 0.5) * hp;

    // Momentum lattice is reused for every spatial point.
    let mut p_samples = Vec::new();
    for a in 0..np_per_axis {
        for b in 0..np_per_axis {
            for c in 0..np_per_axis {
                let p = Vec3::new(p_coord(a), p_coord(b), p_coord(c));
                let qp = bump_profile(p.norm_sq() / (params.r_p * params.r_p), 4);
                if qp > 0.0 {
                    p_samples.push((p, qp));
                }
            }
        }
    }

    for i in 0..nx_per_axis {
        for j in 0..nx_per_axis {
            for k in 0..nx_per_axis {
                let x = Vec3::new(
                    x_coord(i, params.f0_center.x),
                    x_coord(j, params.f0_center.y),
                    x_coord(k, params.f0_center.z),
                );
                let qx = bump_profile((x - params.f0_center).norm_sq() / (params.r_x * params.r_x), 4);
                if qx == 0.0 {
                    continue;
                }
                if grid.locate_interior(x).is_none() {
                    return Err(SimError::InvalidConfig(
                        "matter support extends outside the grid interior".into(),
                    ));
                }
                let phi_birth = phi0_eval(x, params);
                for &(p, qp) in &p_samples {
                    particles.push(PhaseParticle {
                        x,
                        p,
                        f_birth: params.a_f * qx * qp,
                        phi_birth,
                        vol_birth: vol,
                        x_birth: x,
                        p_birth: p,
                    });
                }
            }
        }
    }
    Ok(Ensemble { particles, time: 0.0 })
}
