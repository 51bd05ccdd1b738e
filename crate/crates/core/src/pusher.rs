//! Characteristics integration: the per-particle right-hand side, the RK4
//! step over a frozen field, and stand-alone checks of the identities the
//! characteristic flow satisfies.

use crate::error::{Result, SimError};
use crate::field::{FieldSample, FieldSampler};
use crate::math::Vec3;
use crate::parallel;
use crate::state::Ensemble;

/// Right-hand side of the characteristic system,
///
/// ```text
/// dx/ds = p_hat
/// dp/ds = -(S phi) p - grad(phi) / sqrt(1 + |p|^2)
/// ```
///
/// where `p_hat = p / sqrt(1 + |p|^2)` and `S phi = dphi_dt + p_hat . grad(phi)`.
pub fn characteristic_rhs(p: Vec3, sample: &FieldSample) -> (Vec3, Vec3) {
    let gamma = (1.0 + p.norm_sq()).sqrt();
    let p_hat = p / gamma;
    let s_phi = sample.dphi_dt + p_hat.dot(sample.grad_phi);
    (p_hat, -(s_phi) * p - sample.grad_phi / gamma)
}

fn rk4_step(sampler: &impl FieldSampler, t: f64, x: Vec3, p: Vec3, dt: f64) -> Result<(Vec3, Vec3)> {
    let h = dt / 2.0;
    let (kx1, kp1) = characteristic_rhs(p, &sampler.sample(t, x)?);
    let (kx2, kp2) = characteristic_rhs(p + kp1 * h, &sampler.sample(t + h, x + kx1 * h)?);
    let (kx3, kp3) = characteristic_rhs(p + kp2 * h, &sampler.sample(t + h, x + kx2 * h)?);
    let (kx4, kp4) = characteristic_rhs(p + kp3 * dt, &sampler.sample(t + dt, x + kx3 * dt)?);
    Ok((
        x + (kx1 + 2.0 * kx2 + 2.0 * kx3 + kx4) * (dt / 6.0),
        p + (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4) * (dt / 6.0),
    ))
}

/// Advance every particle one step with classical RK4. The field is
/// whatever the sampler exposes; grid-backed samplers are frozen within
/// the step. Particles are independent, so the parallel map is
/// deterministic regardless of scheduling.
pub fn push_step(
    ensemble: &Ensemble,
    sampler: &impl FieldSampler,
    dt: f64,
    workers: usize,
) -> Result<Ensemble> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidConfig(format!("push dt must be positive, got {dt}")));
    }
    let t = ensemble.time;
    let mut particles = ensemble.particles.clone();
    parallel::try_for_each_chunk_mut(&mut particles, workers, |_, chunk| {
        for pt in chunk {
            let (x, p) = rk4_step(sampler, t, pt.x, pt.p, dt).map_err(|e| match e {
                SimError::OutOfDomain => SimError::CausalDomainViolated,
                other => other,
            })?;
            pt.x = x;
            pt.p = p;
        }
        Ok(())
    })?;
    Ok(Ensemble {
        particles,
        time: t + dt,
    })
}

/// Sampler backed by a closure; used to inject analytic fields.
pub struct AnalyticSampler<F>(pub F);

impl<F> FieldSampler for AnalyticSampler<F>
where
    F: Fn(f64, Vec3) -> FieldSample + Sync,
{
    fn sample(&self, t: f64, x: Vec3) -> Result<FieldSample> {
        Ok((self.0)(t, x))
    }
}

/// Integrate a single characteristic with fixed-step RK4, returning the
/// `(t, x, p)` states including the initial one.
pub fn integrate_trajectory(
    sampler: &impl FieldSampler,
    x0: Vec3,
    p0: Vec3,
    t0: f64,
    dt: f64,
    steps: usize,
) -> Result<Vec<(f64, Vec3, Vec3)>> {
    let mut out = Vec::with_capacity(steps + 1);
    let (mut x, mut p) = (x0, p0);
    out.push((t0, x, p));
    for n in 0..steps {
        let t = t0 + n as f64 * dt;
        let (xn, pn) = rk4_step(sampler, t, x, p, dt)?;
        x = xn;
        p = pn;
        out.push((t0 + (n + 1) as f64 * dt, x, p));
    }
    Ok(out)
}

/// Along-characteristic invariant `Q(s) = exp(2 phi) (1 + |P(s)|^2)`.
/// Its derivative along the flow is `2 exp(2 phi) dphi_dt`: the chain
/// rule brings in the total derivative `S phi`, but the momentum
/// equation cancels the `p_hat . grad(phi)` part exactly, leaving the
/// partial time derivative evaluated along the curve.
fn q_of(sampler: &impl FieldSampler, t: f64, x: Vec3, p: Vec3) -> Result<f64> {
    let s = sampler.sample(t, x)?;
    Ok((2.0 * s.phi).exp() * (1.0 + p.norm_sq()))
}

fn q_rate(sampler: &impl FieldSampler, t: f64, x: Vec3) -> Result<f64> {
    let s = sampler.sample(t, x)?;
    Ok(2.0 * (2.0 * s.phi).exp() * s.dphi_dt)
}

/// Maximum residual of the differential identity
/// `d/ds [exp(2 phi)(1 + |P|^2)] = 2 exp(2 phi) dphi_dt`
/// measured by centered differences over a trajectory. Second order in
/// `dt` for smooth fields.
pub fn identity_rate_residual(
    sampler: &impl FieldSampler,
    x0: Vec3,
    p0: Vec3,
    t_total: f64,
    dt: f64,
) -> Result<f64> {
    let steps = (t_total / dt).round() as usize;
    let traj = integrate_trajectory(sampler, x0, p0, 0.0, dt, steps)?;
    let q: Vec<f64> = traj
        .iter()
        .map(|&(t, x, p)| q_of(sampler, t, x, p))
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for n in 1..traj.len() - 1 {
        let (t, x, _) = traj[n];
        let centered = (q[n + 1] - q[n - 1]) / (2.0 * dt);
        worst = worst.max((centered - q_rate(sampler, t, x)?).abs());
    }
    Ok(worst)
}

/// Maximum tracking error of the integral identity
/// `Q(t) = Q(0) + 2 int_0^t exp(2 phi) dphi_dt ds`
/// with the right side accumulated by the trapezoid rule.
pub fn identity_integral_residual(
    sampler: &impl FieldSampler,
    x0: Vec3,
    p0: Vec3,
    t_total: f64,
    dt: f64,
) -> Result<f64> {
    let steps = (t_total / dt).round() as usize;
    let traj = integrate_trajectory(sampler, x0, p0, 0.0, dt, steps)?;
    let q0 = q_of(sampler, traj[0].0, traj[0].1, traj[0].2)?;
    let mut acc = 0.0;
    let mut prev_rate = q_rate(sampler, traj[0].0, traj[0].1)?;
    let mut worst = 0.0f64;
    for n in 1..traj.len() {
        let (t, x, p) = traj[n];
        let rate = q_rate(sampler, t, x)?;
        acc += 0.5 * dt * (prev_rate + rate);
        prev_rate = rate;
        worst = worst.max((q_of(sampler, t, x, p)? - q0 - acc).abs());
    }
    Ok(worst)
}

/// Determinant of a small dense matrix by Gaussian elimination with
/// partial pivoting.
fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        if m[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for c in col..n {
                let v = m[col][c];
                m[row][c] -= factor * v;
            }
        }
    }
    det
}

/// Estimate the phase-space flow Jacobian determinant at time `t` by
/// evolving six one-sided perturbed companion trajectories, and compare
/// it with the analytic volume factor `exp(-3 (phi(t, X(t)) - phi(0, x0)))`.
///
/// The divergence of the characteristic flow is `-3 S phi`: the momentum
/// divergence of `(S phi) p` and of the `grad(phi) / sqrt(1 + |p|^2)` term
/// cancel except for `-3 S phi`, and `S phi` is the total derivative of
/// `phi` along the curve. Returns `(measured, expected)`.
pub fn flow_volume_factor(
    sampler: &impl FieldSampler,
    x0: Vec3,
    p0: Vec3,
    t_total: f64,
    dt: f64,
    eps: f64,
) -> Result<(f64, f64)> {
    let steps = (t_total / dt).round() as usize;
    let end = |x: Vec3, p: Vec3| -> Result<(Vec3, Vec3)> {
        let traj = integrate_trajectory(sampler, x, p, 0.0, dt, steps)?;
        let &(_, xe, pe) = traj.last().unwrap();
        Ok((xe, pe))
    };
    let (xb, pb) = end(x0, p0)?;
    let mut jac = vec![vec![0.0; 6]; 6];
    for dir in 0..6 {
        let mut x = x0;
        let mut p = p0;
        if dir < 3 {
            x[dir] += eps;
        } else {
            p[dir - 3] += eps;
        }
        let (xe, pe) = end(x, p)?;
        for row in 0..3 {
            jac[row][dir] = (xe[row] - xb[row]) / eps;
            jac[row + 3][dir] = (pe[row] - pb[row]) / eps;
        }
    }
    let measured = determinant(jac);
    let t_end = steps as f64 * dt;
    let phi_end = sampler.sample(t_end, xb)?.phi;
    let phi_start = sampler.sample(0.0, x0)?.phi;
    Ok((measured, (-3.0 * (phi_end - phi_start)).exp()))
}
