//! Field solver: source deposition, leapfrog wave stepping, field
//! sampling at particle positions, and the spherical-means evaluator for
//! the homogeneous wave solution.

use crate::error::{Result, SimError};
use crate::grid::{GridSpec, Lattice};
use crate::initial::RadialBump;
use crate::math::Vec3;
use crate::parallel;
use crate::state::{Ensemble, ScalarFieldState};

/// Matter source `mu = integral of f dp / sqrt(1 + |p|^2)` on the grid.
/// Non-negative everywhere by construction.
#[derive(Debug, Clone)]
pub struct SourceLattice {
    pub mu: Lattice,
}

impl SourceLattice {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            mu: Lattice::zeros(grid),
        }
    }

    /// Spatially uniform source, used by solver tests.
    pub fn uniform(grid: &GridSpec, value: f64) -> Result<Self> {
        if value < 0.0 {
            return Err(SimError::InvalidConfig("source must be non-negative".into()));
        }
        Ok(Self {
            mu: Lattice::from_fn(grid, |_| value),
        })
    }

    /// Total deposited source, `sum(mu) * dx^3`.
    pub fn total(&self, grid: &GridSpec) -> f64 {
        self.mu.sum() * grid.dx.powi(3)
    }
}

/// Deposit the matter source from the ensemble by cloud-in-cell weights.
///
/// Each particle carries `f * V / sqrt(1 + |p|^2)` where `f * V`
/// reduces to `f_birth * vol_birth * exp(phi - phi_birth)`: the density
/// grows as `exp(4 dphi)` along characteristics while the phase-space
/// volume contracts as `exp(-3 dphi)`. The trilinear weights partition
/// unity, so the deposited total equals the particle sum exactly.
pub fn deposit_mu(
    ensemble: &Ensemble,
    field: &ScalarFieldState,
    grid: &GridSpec,
    workers: usize,
) -> Result<SourceLattice> {
    let inv_dx3 = 1.0 / grid.dx.powi(3);
    let parts = parallel::accumulate_chunks(
        ensemble.len(),
        workers,
        || (Lattice::zeros(grid), false),
        |(acc, bad), range| {
            for pt in &ensemble.particles[range] {
                let Some(loc) = grid.locate_interior(pt.x) else {
                    *bad = true;
                    return;
                };
                let phi_here = field.phi.interp(&loc);
                let w = pt.weight(phi_here) / (1.0 + pt.p.norm_sq()).sqrt() * inv_dx3;
                for ([i, j, k], cw) in loc.weights() {
                    acc.add(i, j, k, w * cw);
                }
            }
        },
    );
    let mut mu = Lattice::zeros(grid);
    for (part, bad) in parts {
        if bad {
            return Err(SimError::CausalDomainViolated);
        }
        mu.accumulate(&part);
    }
    Ok(SourceLattice { mu })
}

/// Seven-point Laplacian at interior nodes; zero on the boundary.
fn laplacian(phi: &Lattice, grid: &GridSpec) -> Lattice {
    let n = grid.cells_per_axis;
    let inv_dx2 = 1.0 / (grid.dx * grid.dx);
    let mut out = Lattice::zeros(grid);
    for i in 1..n {
        for j in 1..n {
            for k in 1..n {
                let c = phi.get(i, j, k);
                let lap = (phi.get(i + 1, j, k) + phi.get(i - 1, j, k) + phi.get(i, j + 1, k)
                    + phi.get(i, j - 1, k)
                    + phi.get(i, j, k + 1)
                    + phi.get(i, j, k - 1)
                    - 6.0 * c)
                    * inv_dx2;
                out.set(i, j, k, lap);
            }
        }
    }
    out
}

/// Advance the field one step by the explicit leapfrog scheme
///
/// ```text
/// phi_new = 2 phi - phi_prev + dt^2 (lap phi - mu)
/// dphi_dt = (phi_new - phi_prev) / (2 dt)
/// ```
///
/// The first step synthesizes the missing previous level from the Taylor
/// expansion `phi_prev = phi - dt phi_1 + dt^2/2 (lap phi - mu)`, which
/// reproduces the standard second-order bootstrap. Boundary nodes are held
/// at zero; the causal domain sizing keeps them inert.
pub fn step_wave(
    field: &ScalarFieldState,
    source: &SourceLattice,
    dt: f64,
    grid: &GridSpec,
) -> Result<ScalarFieldState> {
    let n = grid.cells_per_axis;
    let lap = laplacian(&field.phi, grid);
    let rhs = |i: usize, j: usize, k: usize| lap.get(i, j, k) - source.mu.get(i, j, k);

    let prev = match &field.phi_prev {
        Some(prev) => prev.clone(),
        None => {
            let mut ghost = Lattice::zeros(grid);
            for i in 1..n {
                for j in 1..n {
                    for k in 1..n {
                        let v = field.phi.get(i, j, k) - dt * field.dphi_dt.get(i, j, k)
                            + 0.5 * dt * dt * rhs(i, j, k);
                        ghost.set(i, j, k, v);
                    }
                }
            }
            ghost
        }
    };

    let mut phi_new = Lattice::zeros(grid);
    let mut dphi_new = Lattice::zeros(grid);
    let inv_2dt = 1.0 / (2.0 * dt);
    for i in 1..n {
        for j in 1..n {
            for k in 1..n {
                let v = 2.0 * field.phi.get(i, j, k) - prev.get(i, j, k) + dt * dt * rhs(i, j, k);
                phi_new.set(i, j, k, v);
                dphi_new.set(i, j, k, (v - prev.get(i, j, k)) * inv_2dt);
            }
        }
    }
    if !phi_new.all_finite() || !dphi_new.all_finite() {
        return Err(SimError::FieldBlowUp);
    }
    Ok(ScalarFieldState {
        phi: phi_new,
        dphi_dt: dphi_new,
        phi_prev: Some(field.phi.clone()),
        time: field.time + dt,
    })
}

/// Field values interpolated to a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub phi: f64,
    pub dphi_dt: f64,
    pub grad_phi: Vec3,
}

/// Anything the particle pusher can sample a field from. Grid-backed
/// samplers ignore `t` (the field is frozen within a step); analytic test
/// fields use it.
pub trait FieldSampler: Sync {
    fn sample(&self, t: f64, x: Vec3) -> Result<FieldSample>;
}

/// Trilinear interpolation of `phi`, `dphi_dt`, and the trilinearly
/// interpolated node-centered central-difference gradient.
pub fn sample_field(field: &ScalarFieldState, grid: &GridSpec, x: Vec3) -> Result<FieldSample> {
    let loc = grid.locate_interior(x).ok_or(SimError::OutOfDomain)?;
    let inv_2dx = 1.0 / (2.0 * grid.dx);
    let mut phi = 0.0;
    let mut dphi = 0.0;
    let mut grad = Vec3::zero();
    for ([i, j, k], w) in loc.weights() {
        phi += w * field.phi.get(i, j, k);
        dphi += w * field.dphi_dt.get(i, j, k);
        for d in 0..3 {
            grad[d] += w * field.phi.central_diff(i, j, k, d, inv_2dx);
        }
    }
    Ok(FieldSample {
        phi,
        dphi_dt: dphi,
        grad_phi: grad,
    })
}

/// Grid-backed sampler with precomputed node gradients. Interpolating the
/// precomputed node values performs the same arithmetic as
/// [`sample_field`], just without recomputing differences per query.
pub struct GridSampler<'a> {
    field: &'a ScalarFieldState,
    grid: &'a GridSpec,
    grad: [Lattice; 3],
}

impl<'a> GridSampler<'a> {
    pub fn new(field: &'a ScalarFieldState, grid: &'a GridSpec) -> Self {
        Self {
            grad: gradient_lattices(&field.phi, grid),
            field,
            grid,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.grid
    }

    pub fn state(&self) -> &ScalarFieldState {
        self.field
    }
}

/// Node-centered central-difference gradient, zero at boundary nodes.
pub fn gradient_lattices(phi: &Lattice, grid: &GridSpec) -> [Lattice; 3] {
    let n = grid.cells_per_axis;
    let inv_2dx = 1.0 / (2.0 * grid.dx);
    let mut out = [Lattice::zeros(grid), Lattice::zeros(grid), Lattice::zeros(grid)];
    for i in 1..n {
        for j in 1..n {
            for k in 1..n {
                for d in 0..3 {
                    out[d].set(i, j, k, phi.central_diff(i, j, k, d, inv_2dx));
                }
            }
        }
    }
    out
}

impl FieldSampler for GridSampler<'_> {
    fn sample(&self, _t: f64, x: Vec3) -> Result<FieldSample> {
        let loc = self.grid.locate_interior(x).ok_or(SimError::OutOfDomain)?;
        let mut phi = 0.0;
        let mut dphi = 0.0;
        let mut grad = Vec3::zero();
        for ([i, j, k], w) in loc.weights() {
            phi += w * self.field.phi.get(i, j, k);
            dphi += w * self.field.dphi_dt.get(i, j, k);
            for d in 0..3 {
                grad[d] += w * self.grad[d].get(i, j, k);
            }
        }
        Ok(FieldSample {
            phi,
            dphi_dt: dphi,
            grad_phi: grad,
        })
    }
}

/// Time derivative of the homogeneous wave solution with data
/// `(phi0, phi1)`, evaluated through spherical means over the sphere of
/// radius `t` around `x`:
///
/// ```text
/// d/dt [ t M_t(phi1) + d/dt ( t M_t(phi0) ) ]
///   = M_t(phi1) + t M_t(dn phi1) + 2 M_t(dn phi0) + t M_t(dnn phi0)
/// ```
///
/// with `dn` the outward radial derivative of the datum. The means are
/// computed by the supplied sphere rule; the radial derivatives come in
/// closed form from the bump data. At `t = 0` antipodal symmetry of the
/// rule makes the odd terms vanish exactly, returning `phi1(x)`.
pub fn eval_dtphi_hom(
    phi0: &RadialBump,
    phi1: &RadialBump,
    t: f64,
    x: Vec3,
    rule: &[(Vec3, f64)],
) -> f64 {
    let mut acc = crate::quad::KahanSum::new();
    for &(nu, w) in rule {
        let y = x + nu * t;
        let term = phi1.value(y)
            + t * phi1.dir_deriv(y, nu)
            + 2.0 * phi0.dir_deriv(y, nu)
            + t * phi0.second_dir_deriv(y, nu);
        acc.add(w * term);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{lebedev26, sphere_product_rule};
    use crate::state::PhaseParticle;

    fn grid() -> GridSpec {
        GridSpec::new(Vec3::zero(), 2.0, 16).unwrap()
    }

    fn particle_at(x: Vec3, p: Vec3, fv: f64) -> PhaseParticle {
        PhaseParticle {
            x,
            p,
            f_birth: fv,
            phi_birth: 0.0,
            vol_birth: 1.0,
            x_birth: x,
            p_birth: p,
        }
    }

    fn zero_field(g: &GridSpec) -> ScalarFieldState {
        ScalarFieldState::new(Lattice::zeros(g), Lattice::zeros(g))
    }

    #[test]
    fn deposit_single_particle_at_node() {
        let g = grid();
        let field = zero_field(&g);
        let node = g.node_pos(8, 8, 8);
        let w = 0.37;
        let ens = Ensemble {
            particles: vec![particle_at(node, Vec3::zero(), w)],
            time: 0.0,
        };
        let src = deposit_mu(&ens, &field, &g, 1).unwrap();
        let expect = w / g.dx.powi(3);
        assert!((src.mu.get(8, 8, 8) - expect).abs() < 1e-12 * expect);
        assert_eq!(src.mu.get(8, 8, 9), 0.0);

        // |p| = sqrt(3) halves the weight: sqrt(1 + 3) = 2.
        let p = Vec3::new(1.0, 1.0, 1.0);
        let ens = Ensemble {
            particles: vec![particle_at(node, p, w)],
            time: 0.0,
        };
        let src = deposit_mu(&ens, &field, &g, 1).unwrap();
        assert!((src.mu.get(8, 8, 8) - expect / 2.0).abs() < 1e-12 * expect);
    }

    #[test]
    fn deposit_empty_ensemble_is_zero() {
        let g = grid();
        let src = deposit_mu(
            &Ensemble {
                particles: vec![],
                time: 0.0,
            },
            &zero_field(&g),
            &g,
            2,
        )
        .unwrap();
        assert_eq!(src.mu.max_abs(), 0.0);
    }

    #[test]
    fn deposit_conserves_total_and_is_nonnegative() {
        let g = grid();
        let field = ScalarFieldState::new(Lattice::from_fn(&g, |x| 0.1 * x.x), Lattice::zeros(&g));
        let mut particles = Vec::new();
        for i in 0..50 {
            let s = i as f64 / 50.0;
            particles.push(particle_at(
                Vec3::new(1.2 * (s - 0.5), 0.9 * (0.5 - s), 0.3 * s),
                Vec3::new(s, -s, 0.2),
                0.1 + s,
            ));
        }
        let ens = Ensemble { particles, time: 0.0 };
        let src = deposit_mu(&ens, &field, &g, 3).unwrap();
        assert!(src.mu.min() >= 0.0);
        let expected: f64 = ens
            .particles
            .iter()
            .map(|pt| {
                let loc = g.locate_interior(pt.x).unwrap();
                pt.weight(field.phi.interp(&loc)) / (1.0 + pt.p.norm_sq()).sqrt()
            })
            .sum();
        let total = src.total(&g);
        assert!((total - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn deposit_rejects_particles_outside_interior() {
        let g = grid();
        let ens = Ensemble {
            particles: vec![particle_at(Vec3::new(1.95, 0.0, 0.0), Vec3::zero(), 1.0)],
            time: 0.0,
        };
        assert!(matches!(
            deposit_mu(&ens, &zero_field(&g), &g, 1),
            Err(SimError::CausalDomainViolated)
        ));
    }

    #[test]
    fn vacuum_field_stays_exactly_zero() {
        let g = grid();
        let mut state = zero_field(&g);
        let src = SourceLattice::zeros(&g);
        for _ in 0..20 {
            state = step_wave(&state, &src, 0.05, &g).unwrap();
            assert_eq!(state.phi.max_abs(), 0.0);
            assert_eq!(state.dphi_dt.max_abs(), 0.0);
        }
    }

    #[test]
    fn uniform_source_follows_quadratic_ode() {
        // d2/dt2 phi = -1 away from boundary influence: phi(t) = -t^2/2,
        // and the discrete leapfrog reproduces the quadratic exactly.
        let g = grid();
        let mut state = zero_field(&g);
        let src = SourceLattice::uniform(&g, 1.0).unwrap();
        let dt = 0.05;
        for n in 1..=5 {
            state = step_wave(&state, &src, dt, &g).unwrap();
            let t = n as f64 * dt;
            let v = state.phi.get(8, 8, 8);
            assert!(
                (v + t * t / 2.0).abs() < 1e-13,
                "step {n}: phi = {v}, expect {}",
                -t * t / 2.0
            );
        }
    }

    #[test]
    fn traveling_planar_wave_converges_at_second_order() {
        // Data phi0 = g(x1), phi1 = -g'(x1) propagate as g(x1 - t). The
        // max error over a causally clean interior region must shrink by
        // about 4x when dx and dt halve together.
        let bump = |s: f64| crate::initial::bump_profile(s, 4);
        let amp = 1.0;
        let rad: f64 = 0.5;
        let g_fn = move |xi: f64| amp * bump(xi * xi / (rad * rad));
        let g_d1 = move |xi: f64| {
            if xi * xi < rad * rad {
                -amp * 4.0 * (1.0 - xi * xi / (rad * rad)).powi(3) * 2.0 * xi / (rad * rad)
            } else {
                0.0
            }
        };
        let mut errs = Vec::new();
        for cells in [16usize, 32, 64] {
            let g = GridSpec::new(Vec3::zero(), 2.0, cells).unwrap();
            let dt = 0.4 * g.dx / 3.0_f64.sqrt();
            let steps = (0.5 / dt).round() as usize;
            let t_final = steps as f64 * dt;
            let mut state = ScalarFieldState::new(
                Lattice::from_fn(&g, |x| g_fn(x.x)),
                Lattice::from_fn(&g, |x| -g_d1(x.x)),
            );
            let src = SourceLattice::zeros(&g);
            for _ in 0..steps {
                state = step_wave(&state, &src, dt, &g).unwrap();
            }
            let mut worst = 0.0f64;
            let n = g.cells_per_axis;
            for i in 0..=n {
                for j in 0..=n {
                    for k in 0..=n {
                        let pos = g.node_pos(i, j, k);
                        // stay a causal margin away from every face
                        if pos.x.abs().max(pos.y.abs()).max(pos.z.abs()) > 2.0 - t_final - 2.0 * g.dx {
                            continue;
                        }
                        let exact = g_fn(pos.x - t_final);
                        worst = worst.max((state.phi.get(i, j, k) - exact).abs());
                    }
                }
            }
            errs.push(worst);
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!(r1 > 3.5, "first refinement ratio {r1} (errors {errs:?})");
        assert!(r2 > 3.5, "second refinement ratio {r2} (errors {errs:?})");
    }

    #[test]
    fn sample_field_exact_for_affine_lattices() {
        let g = grid();
        let field = ScalarFieldState::new(
            Lattice::from_fn(&g, |x| 1.0 + 0.5 * x.x - 0.25 * x.y + 0.125 * x.z),
            Lattice::from_fn(&g, |x| 2.0 * x.y),
        );
        let x = Vec3::new(0.37, -0.82, 0.11);
        let s = sample_field(&field, &g, x).unwrap();
        assert!((s.phi - (1.0 + 0.5 * x.x - 0.25 * x.y + 0.125 * x.z)).abs() < 1e-13);
        assert!((s.dphi_dt - 2.0 * x.y).abs() < 1e-13);
        assert!((s.grad_phi - Vec3::new(0.5, -0.25, 0.125)).norm() < 1e-13);

        // exactly at a node
        let node = g.node_pos(5, 9, 4);
        let s = sample_field(&field, &g, node).unwrap();
        assert!((s.phi - field.phi.get(5, 9, 4)).abs() < 1e-14);

        assert!(matches!(
            sample_field(&field, &g, Vec3::new(1.9, 0.0, 0.0)),
            Err(SimError::OutOfDomain)
        ));
    }

    #[test]
    fn sample_field_interpolation_error_is_second_order() {
        let k = 2.0;
        let mut errs = Vec::new();
        for cells in [16usize, 32] {
            let g = GridSpec::new(Vec3::zero(), 2.0, cells).unwrap();
            let field = ScalarFieldState::new(Lattice::from_fn(&g, |x| (k * x.x).sin()), Lattice::zeros(&g));
            let mut worst = 0.0f64;
            for m in 0..200 {
                let s = -1.0 + 2.0 * m as f64 / 199.0;
                let x = Vec3::new(s, 0.3 * s, -0.2 * s);
                let smp = sample_field(&field, &g, x).unwrap();
                worst = worst.max((smp.phi - (k * x.x).sin()).abs());
            }
            errs.push(worst);
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.4, "interpolation refinement ratio {ratio}");
    }

    #[test]
    fn grid_sampler_matches_direct_sampling_bitwise() {
        let g = grid();
        let field = ScalarFieldState::new(
            Lattice::from_fn(&g, |x| (x.x * 1.3).sin() * (0.7 * x.y).cos() + 0.1 * x.z),
            Lattice::from_fn(&g, |x| x.x * x.y),
        );
        let sampler = GridSampler::new(&field, &g);
        for m in 0..50 {
            let s = -1.0 + 2.0 * m as f64 / 49.0;
            let x = Vec3::new(1.4 * s, -1.2 * s * s + 0.3, 0.8 * s);
            let a = sample_field(&field, &g, x).unwrap();
            let b = sampler.sample(0.0, x).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dtphi_hom_initial_value_and_huygens() {
        let phi0 = RadialBump {
            amplitude: 0.4,
            radius: 1.0,
            center: Vec3::zero(),
            exponent: 4,
        };
        let phi1 = RadialBump {
            amplitude: -0.3,
            radius: 0.8,
            center: Vec3::new(0.2, 0.0, 0.0),
            exponent: 3,
        };
        let rule = lebedev26();
        let x = Vec3::new(0.1, -0.05, 0.2);
        let v0 = eval_dtphi_hom(&phi0, &phi1, 0.0, x, &rule);
        assert!((v0 - phi1.value(x)).abs() < 1e-12);

        // zero data gives zero for all (t, x)
        let zero = RadialBump {
            amplitude: 0.0,
            radius: 1.0,
            center: Vec3::zero(),
            exponent: 4,
        };
        for t in [0.0, 0.3, 1.7] {
            assert_eq!(eval_dtphi_hom(&zero, &zero, t, x, &rule), 0.0);
        }

        // past the Huygens time the sphere misses both supports entirely
        let t_huygens = (x - phi0.center).norm() + phi0.radius + (x - phi1.center).norm() + phi1.radius;
        let v = eval_dtphi_hom(&phi0, &phi1, t_huygens + 0.1, x, &rule);
        assert!(v.abs() < 1e-10, "past Huygens time: {v}");
    }

    #[test]
    fn dtphi_hom_matches_radial_closed_form_at_center() {
        // For radial phi1-only data evaluated at the bump center,
        // d/dt ( t M_t(phi1) ) = q(t) + t q'(t) with q the radial profile.
        let phi0 = RadialBump {
            amplitude: 0.0,
            radius: 1.0,
            center: Vec3::zero(),
            exponent: 4,
        };
        let phi1 = RadialBump {
            amplitude: 0.9,
            radius: 1.0,
            center: Vec3::zero(),
            exponent: 3,
        };
        let rule = sphere_product_rule(16);
        for t in [0.1, 0.4, 0.75] {
            let got = eval_dtphi_hom(&phi0, &phi1, t, Vec3::zero(), &rule);
            let s = t * t;
            let q = 0.9 * (1.0 - s).powi(3);
            let dq = 0.9 * 3.0 * (1.0 - s).powi(2) * (-2.0 * t);
            let expect = q + t * dq;
            assert!((got - expect).abs() < 1e-10, "t={t}: {got} vs {expect}");
        }
    }
}
