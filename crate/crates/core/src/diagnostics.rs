//! Monitored scalars and the integral-identity verifications: energy
//! densities and totals, support suprema, the null-cone energy identity,
//! and the retarded-integral representation of the field's time
//! derivative.

use crate::error::{Result, SimError};
use crate::field::{eval_dtphi_hom, SourceLattice};
use crate::grid::{CellLocation, GridSpec, Lattice};
use crate::initial::{bump_profile, DataParams};
use crate::math::Vec3;
use crate::parallel;
use crate::quad::{fibonacci_sphere, sphere_product_rule, KahanSum};
use crate::state::{Ensemble, FieldHistory, HistorySlice, ScalarFieldState};

/// Energy and momentum densities on the grid. The kinetic and field
/// contributions are kept separately so the split in the total is exact.
#[derive(Debug, Clone)]
pub struct EnergyLattices {
    /// Matter part of the energy density.
    pub kinetic: Lattice,
    /// Field part `(dphi_dt^2 + |grad phi|^2) / 2`.
    pub field: Lattice,
    /// Nodewise total, `kinetic + field`; non-negative everywhere.
    pub energy: Lattice,
    /// Momentum density `integral(p f dp) - dphi_dt grad(phi)`.
    pub pflux: [Lattice; 3],
}

/// Deposit the energy and momentum densities: cloud-in-cell weights
/// `f V sqrt(1 + |p|^2)` and `f V p` for the matter parts, node values and
/// central differences for the field parts.
pub fn energy_lattices(
    ensemble: &Ensemble,
    field: &ScalarFieldState,
    grid: &GridSpec,
    workers: usize,
) -> Result<EnergyLattices> {
    let inv_dx3 = 1.0 / grid.dx.powi(3);
    let parts = parallel::accumulate_chunks(
        ensemble.len(),
        workers,
        || {
            (
                Lattice::zeros(grid),
                [Lattice::zeros(grid), Lattice::zeros(grid), Lattice::zeros(grid)],
                false,
            )
        },
        |(kin, flux, bad), range| {
            for pt in &ensemble.particles[range] {
                let Some(loc) = grid.locate_interior(pt.x) else {
                    *bad = true;
                    return;
                };
                let fv = pt.weight(field.phi.interp(&loc)) * inv_dx3;
                let gamma = (1.0 + pt.p.norm_sq()).sqrt();
                for ([i, j, k], w) in loc.weights() {
                    kin.add(i, j, k, w * fv * gamma);
                    for d in 0..3 {
                        flux[d].add(i, j, k, w * fv * pt.p[d]);
                    }
                }
            }
        },
    );
    let mut kinetic = Lattice::zeros(grid);
    let mut pflux = [Lattice::zeros(grid), Lattice::zeros(grid), Lattice::zeros(grid)];
    for (kin, flux, bad) in parts {
        if bad {
            return Err(SimError::CausalDomainViolated);
        }
        kinetic.accumulate(&kin);
        for d in 0..3 {
            pflux[d].accumulate(&flux[d]);
        }
    }

    let n = grid.cells_per_axis;
    let inv_2dx = 1.0 / (2.0 * grid.dx);
    let mut field_e = Lattice::zeros(grid);
    let mut energy = kinetic.clone();
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let v = field.dphi_dt.get(i, j, k);
                let grad = if grid.is_interior(i, j, k) {
                    Vec3::new(
                        field.phi.central_diff(i, j, k, 0, inv_2dx),
                        field.phi.central_diff(i, j, k, 1, inv_2dx),
                        field.phi.central_diff(i, j, k, 2, inv_2dx),
                    )
                } else {
                    Vec3::zero()
                };
                let fe = 0.5 * v * v + 0.5 * grad.norm_sq();
                field_e.set(i, j, k, fe);
                energy.add(i, j, k, fe);
                for d in 0..3 {
                    pflux[d].add(i, j, k, -v * grad[d]);
                }
            }
        }
    }
    Ok(EnergyLattices {
        kinetic,
        field: field_e,
        energy,
        pflux,
    })
}

/// Midpoint sums of the energy densities: `(total, kinetic, field)`,
/// with `total = kinetic + field` exactly.
pub fn total_energy(energy: &EnergyLattices, grid: &GridSpec) -> (f64, f64, f64) {
    let dv = grid.dx.powi(3);
    let kinetic = energy.kinetic.sum() * dv;
    let field = energy.field.sum() * dv;
    (kinetic + field, kinetic, field)
}

/// Instantaneous support suprema: `sup exp(phi) sqrt(1 + |p|^2)` and
/// `sup |p|` over particles with positive density. Empty ensembles map to
/// `(0, 0)` by convention.
pub fn support_suprema(
    ensemble: &Ensemble,
    field: &ScalarFieldState,
    grid: &GridSpec,
) -> Result<(f64, f64)> {
    let mut p_sup = 0.0f64;
    let mut ptilde_sup = 0.0f64;
    for pt in &ensemble.particles {
        if pt.f_birth <= 0.0 {
            continue;
        }
        let loc = grid.locate_interior(pt.x).ok_or(SimError::CausalDomainViolated)?;
        let phi = field.phi.interp(&loc);
        p_sup = p_sup.max(phi.exp() * (1.0 + pt.p.norm_sq()).sqrt());
        ptilde_sup = ptilde_sup.max(pt.p.norm());
    }
    Ok((p_sup, ptilde_sup))
}

/// Running suprema over snapshots (the `sup over s <= t` quantities).
#[derive(Debug, Clone, Copy, Default)]
pub struct SupremaTracker {
    pub p_max: f64,
    pub ptilde_max: f64,
}

impl SupremaTracker {
    pub fn update(&mut self, ensemble: &Ensemble, field: &ScalarFieldState, grid: &GridSpec) -> Result<()> {
        let (p, pt) = support_suprema(ensemble, field, grid)?;
        self.p_max = self.p_max.max(p);
        self.ptilde_max = self.ptilde_max.max(pt);
        Ok(())
    }
}

/// Result of the support-equivalence inequalities on one snapshot.
#[derive(Debug, Clone, Copy)]
pub struct SupportEquivalence {
    pub p_inst: f64,
    pub ptilde_inst: f64,
    /// `p <= max(exp(phi)) sqrt(1 + ptilde^2)` over occupied nodes.
    pub upper_ok: bool,
    /// `ptilde <= max(exp(-phi)) p` over occupied nodes.
    pub lower_ok: bool,
}

/// Check the two inequalities tying the energy supremum to the momentum
/// supremum, with the field extrema measured over nodes adjacent to
/// particles. Both hold exactly for interpolated fields, up to rounding.
pub fn support_equivalence_check(
    ensemble: &Ensemble,
    field: &ScalarFieldState,
    grid: &GridSpec,
) -> Result<SupportEquivalence> {
    let mut phi_occ_max = f64::NEG_INFINITY;
    let mut phi_occ_min = f64::INFINITY;
    let mut p_inst = 0.0f64;
    let mut ptilde_inst = 0.0f64;
    let mut any = false;
    for pt in &ensemble.particles {
        if pt.f_birth <= 0.0 {
            continue;
        }
        any = true;
        let loc = grid.locate_interior(pt.x).ok_or(SimError::CausalDomainViolated)?;
        let phi = field.phi.interp(&loc);
        p_inst = p_inst.max(phi.exp() * (1.0 + pt.p.norm_sq()).sqrt());
        ptilde_inst = ptilde_inst.max(pt.p.norm());
        for ([i, j, k], _) in loc.weights() {
            let v = field.phi.get(i, j, k);
            phi_occ_max = phi_occ_max.max(v);
            phi_occ_min = phi_occ_min.min(v);
        }
    }
    if !any {
        return Ok(SupportEquivalence {
            p_inst: 0.0,
            ptilde_inst: 0.0,
            upper_ok: true,
            lower_ok: true,
        });
    }
    let slack = 1.0 + 1e-12;
    Ok(SupportEquivalence {
        p_inst,
        ptilde_inst,
        upper_ok: p_inst <= phi_occ_max.exp() * (1.0 + ptilde_inst * ptilde_inst).sqrt() * slack,
        lower_ok: ptilde_inst <= (-phi_occ_min).exp() * p_inst * slack,
    })
}

/// Closed form of the momentum-ball integral with the `1/sqrt(1+|p|^2)`
/// weight only: `2 pi (R sqrt(1+R^2) - asinh R)`. Cross-checked against
/// the adaptive quadrature of the identities module in tests; used here
/// because the source bound evaluates it at every occupied node.
pub fn ball_mass_integral(r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    2.0 * std::f64::consts::PI * (r * (1.0 + r * r).sqrt() - r.asinh())
}

/// Nodewise source bound: deposited `mu` may not exceed
/// `max(f_birth exp(-4 phi_birth)) * exp(4 phi) * B(exp(-phi) P)`,
/// where `B` is [`ball_mass_integral`] and `P` the running energy
/// supremum. The particle quadrature smooths the density over cells, so a
/// small multiplicative slack is allowed.
pub fn source_bound_check(
    source: &SourceLattice,
    field: &ScalarFieldState,
    grid: &GridSpec,
    conformal_sup: f64,
    p_run: f64,
    slack: f64,
) -> (bool, f64) {
    let n = grid.cells_per_axis;
    let mut worst = 0.0f64;
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let mu = source.mu.get(i, j, k);
                if mu <= 0.0 {
                    continue;
                }
                let phi = field.phi.get(i, j, k);
                let bound = conformal_sup * (4.0 * phi).exp() * ball_mass_integral((-phi).exp() * p_run);
                worst = worst.max(if bound > 0.0 { mu / bound } else { f64::INFINITY });
            }
        }
    }
    (worst <= 1.0 + slack, worst)
}

/// Pointwise residual of the cone-integrand expansion
///
/// ```text
/// e + p_flux . w = m_energy + w . m_p
///                + (w x g)^2 / 2 + (v - w.g)^2 / 2
/// ```
///
/// where the moments and field values must come from the same state.
/// Exact algebraically; the residual is rounding noise.
pub fn cone_integrand_expansion(
    e_val: f64,
    pflux: Vec3,
    omega: Vec3,
    m_energy: f64,
    m_p: Vec3,
    dphi_dt: f64,
    grad_phi: Vec3,
) -> Result<f64> {
    if (omega.norm_sq() - 1.0).abs() > 1e-9 {
        return Err(SimError::NonUnitOmega);
    }
    let lhs = e_val + pflux.dot(omega);
    let wg = omega.cross(grad_phi);
    let rhs = m_energy
        + omega.dot(m_p)
        + 0.5 * wg.norm_sq()
        + 0.5 * (dphi_dt - omega.dot(grad_phi)) * (dphi_dt - omega.dot(grad_phi));
    Ok(lhs - rhs)
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

fn slice_scalar(slice: &HistorySlice, which: SliceField, loc: &CellLocation) -> f64 {
    match which {
        SliceField::DphiDt => slice.field.dphi_dt.interp(loc),
        SliceField::Mu => slice.mu.interp(loc),
        SliceField::Energy => slice.energy.interp(loc),
    }
}

#[derive(Clone, Copy)]
enum SliceField {
    DphiDt,
    Mu,
    Energy,
}

fn history_scalar(history: &FieldHistory, tau: f64, which: SliceField, loc: &CellLocation) -> Result<f64> {
    let (k0, k1, w) = history.bracket(tau)?;
    Ok(lerp(
        slice_scalar(history.slice(k0), which, loc),
        slice_scalar(history.slice(k1), which, loc),
        w,
    ))
}

fn slice_grad(slice: &HistorySlice, grid: &GridSpec, loc: &CellLocation) -> Vec3 {
    let inv_2dx = 1.0 / (2.0 * grid.dx);
    let mut g = Vec3::zero();
    for ([i, j, k], w) in loc.weights() {
        for d in 0..3 {
            g[d] += w * slice.field.phi.central_diff(i, j, k, d, inv_2dx);
        }
    }
    g
}

fn history_grad(history: &FieldHistory, grid: &GridSpec, tau: f64, loc: &CellLocation) -> Result<Vec3> {
    let (k0, k1, w) = history.bracket(tau)?;
    let a = slice_grad(history.slice(k0), grid, loc);
    let b = slice_grad(history.slice(k1), grid, loc);
    Ok(a + (b - a) * w)
}

fn history_pflux(history: &FieldHistory, tau: f64, loc: &CellLocation) -> Result<Vec3> {
    let (k0, k1, w) = history.bracket(tau)?;
    let mut out = Vec3::zero();
    for d in 0..3 {
        out[d] = lerp(
            history.slice(k0).pflux[d].interp(loc),
            history.slice(k1).pflux[d].interp(loc),
            w,
        );
    }
    Ok(out)
}

fn require_ball_inside(grid: &GridSpec, x: Vec3, t: f64) -> Result<()> {
    let margin = grid.half_width - grid.dx * (1.0 + 1e-9);
    for d in 0..3 {
        if (x[d] - grid.center[d]).abs() + t > margin {
            return Err(SimError::ConeExitsGrid);
        }
    }
    Ok(())
}

/// Number of shells of thickness about `dx/2` needed to tile `[0, t]`.
fn shell_partition(t: f64, dx: f64) -> (usize, f64) {
    let n = ((t / (0.5 * dx)).round() as usize).max(1);
    (n, t / n as f64)
}

fn shell_point_count(r: f64, dx: f64) -> usize {
    ((4.0 * std::f64::consts::PI * r * r / (dx * dx)).ceil() as usize).clamp(32, 8192)
}

/// Result of the null-cone energy identity check.
#[derive(Debug, Clone, Copy)]
pub struct NullConeCheck {
    /// Mantle integral of `(e + p_flux . w)` at retarded times.
    pub lhs: f64,
    /// Volume integral of `e(0, y)` over the cone base.
    pub rhs_volume: f64,
    pub rel_residual: f64,
}

/// Verify the null-cone energy identity in its volume form: the mantle
/// integral of `e + p_flux . w` over the past cone of `(t, x)` equals the
/// integral of the initial energy density over the base ball. Quadrature
/// uses concentric shells of thickness about `dx/2`, each sampled with
/// area-uniform points, trilinear interpolation in space and linear in
/// time, with compensated summation in fixed shell order.
pub fn null_cone_check(
    t: f64,
    x: Vec3,
    history: &FieldHistory,
    grid: &GridSpec,
) -> Result<NullConeCheck> {
    if t < 0.0 {
        return Err(SimError::InvalidConfig(format!("cone time must be non-negative, got {t}")));
    }
    if t < 1e-12 {
        return Ok(NullConeCheck {
            lhs: 0.0,
            rhs_volume: 0.0,
            rel_residual: 0.0,
        });
    }
    require_ball_inside(grid, x, t)?;
    if history.is_empty() || !history.covers(t) {
        return Err(SimError::InsufficientHistory(format!(
            "null-cone check at t={t} needs slices through that time"
        )));
    }
    let (n_shells, dr) = shell_partition(t, grid.dx);
    let mut lhs = KahanSum::new();
    let mut rhs = KahanSum::new();
    let base = history.slice(0);
    for s in 0..n_shells {
        let r = (s as f64 + 0.5) * dr;
        let tau = t - r;
        let dirs = fibonacci_sphere(shell_point_count(r, grid.dx));
        let w_point = 4.0 * std::f64::consts::PI * r * r * dr / dirs.len() as f64;
        for dir in dirs {
            let y = x + dir * r;
            let loc = grid.locate_interior(y).ok_or(SimError::ConeExitsGrid)?;
            let e_ret = history_scalar(history, tau, SliceField::Energy, &loc)?;
            let flux_ret = history_pflux(history, tau, &loc)?;
            lhs.add(w_point * (e_ret + flux_ret.dot(dir)));
            rhs.add(w_point * base.energy.interp(&loc));
        }
    }
    let (lhs, rhs) = (lhs.value(), rhs.value());
    let denom = lhs.abs().max(rhs.abs());
    Ok(NullConeCheck {
        lhs,
        rhs_volume: rhs,
        rel_residual: if denom > 1e-30 { (lhs - rhs).abs() / denom } else { 0.0 },
    })
}

/// Momentum moments of the particle density at one retarded point, with
/// kernels depending on the cone direction `w`:
///
/// ```text
/// z1 = int f / (E kappa) dp          z2 = int f / (E^3 kappa^2) dp
/// z3 = int (w.p_hat) f / (E kappa)   z5 = int (w x p_hat) f / (E kappa)
/// ```
///
/// with `E = sqrt(1+|p|^2)` and `kappa = 1 + w.p_hat`. The `z2` moment
/// also serves the term weighted by `(v - w.g)` since its kernel repeats.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZMoments {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
    pub z5: Vec3,
}

impl ZMoments {
    fn lerp(a: Self, b: Self, w: f64) -> Self {
        Self {
            z1: lerp(a.z1, b.z1, w),
            z2: lerp(a.z2, b.z2, w),
            z3: lerp(a.z3, b.z3, w),
            z5: a.z5 + (b.z5 - a.z5) * w,
        }
    }
}

/// Cell-bucketed view of an ensemble at one time, with the deposition
/// weights `f V` evaluated at that time. Supports kernel-moment gathers
/// at arbitrary points through the same cloud-in-cell kernel the solver
/// deposits with.
pub struct ParticleBuckets {
    cells: usize,
    starts: Vec<u32>,
    entries: Vec<(Vec3, Vec3, f64)>,
}

impl ParticleBuckets {
    pub fn build(ensemble: &Ensemble, weights: &[f64], grid: &GridSpec) -> Self {
        assert_eq!(ensemble.len(), weights.len());
        let cells = grid.cells_per_axis;
        let ncells = cells * cells * cells;
        let cell_id = |x: Vec3| -> usize {
            let c = grid.cell_of(x);
            (c[0] * cells + c[1]) * cells + c[2]
        };
        let mut counts = vec![0u32; ncells + 1];
        for pt in &ensemble.particles {
            counts[cell_id(pt.x) + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut entries = vec![(Vec3::zero(), Vec3::zero(), 0.0); ensemble.len()];
        let mut cursor = counts;
        for (pt, &fv) in ensemble.particles.iter().zip(weights) {
            let id = cell_id(pt.x);
            entries[cursor[id] as usize] = (pt.x, pt.p, fv);
            cursor[id] += 1;
        }
        Self {
            cells,
            starts,
            entries,
        }
    }

    /// Gather the kernel moments at `y` for cone direction `omega`.
    pub fn moments_at(&self, y: Vec3, omega: Vec3, grid: &GridSpec) -> ZMoments {
        let inv_dx = 1.0 / grid.dx;
        let inv_dx3 = inv_dx * inv_dx * inv_dx;
        let c = grid.cell_of(y);
        let mut out = ZMoments::default();
        let lo = |v: usize| v.saturating_sub(1);
        let hi = |v: usize| (v + 1).min(self.cells - 1);
        for ci in lo(c[0])..=hi(c[0]) {
            for cj in lo(c[1])..=hi(c[1]) {
                for ck in lo(c[2])..=hi(c[2]) {
                    let id = (ci * self.cells + cj) * self.cells + ck;
                    let (a, b) = (self.starts[id] as usize, self.starts[id + 1] as usize);
                    for &(x, p, fv) in &self.entries[a..b] {
                        let wx = 1.0 - (y.x - x.x).abs() * inv_dx;
                        let wy = 1.0 - (y.y - x.y).abs() * inv_dx;
                        let wz = 1.0 - (y.z - x.z).abs() * inv_dx;
                        if wx <= 0.0 || wy <= 0.0 || wz <= 0.0 {
                            continue;
                        }
                        let w = wx * wy * wz * inv_dx3 * fv;
                        let gamma_sq = 1.0 + p.norm_sq();
                        let energy = gamma_sq.sqrt();
                        let p_hat = p / energy;
                        let kappa = 1.0 + omega.dot(p_hat);
                        let base = w / (energy * kappa);
                        out.z1 += base;
                        out.z2 += w / (gamma_sq * energy * kappa * kappa);
                        out.z3 += base * omega.dot(p_hat);
                        out.z5 += omega.cross(p_hat) * base;
                    }
                }
            }
        }
        out
    }
}

/// One quadrature point on the past cone of a probe.
#[derive(Debug, Clone, Copy)]
pub struct ConePoint {
    pub y: Vec3,
    pub omega: Vec3,
    pub r: f64,
    pub tau: f64,
    pub weight: f64,
    bracket: (usize, usize, f64),
}

/// Shell quadrature plan for the past cone of one probe vertex.
#[derive(Debug, Clone)]
pub struct ConePlan {
    pub t: f64,
    pub x: Vec3,
    pub points: Vec<ConePoint>,
}

/// Build the cone quadrature for a probe at `(t, x)`. Requires the cone
/// to fit inside the grid and at least eight history slices to cover
/// `[0, t]` at spacing `slice_dt`.
pub fn plan_cone(
    t: f64,
    x: Vec3,
    grid: &GridSpec,
    slice_dt: f64,
    slice_count: usize,
) -> Result<ConePlan> {
    if t < 0.0 {
        return Err(SimError::InvalidConfig(format!("probe time must be non-negative, got {t}")));
    }
    if t < 1e-12 {
        return Ok(ConePlan {
            t,
            x,
            points: Vec::new(),
        });
    }
    require_ball_inside(grid, x, t)?;
    let covering = (t / slice_dt).floor() as usize + 1;
    if covering < 8 {
        return Err(SimError::InsufficientHistory(format!(
            "representation probe at t={t} has only {covering} slices over its cone; need 8"
        )));
    }
    if (slice_count.saturating_sub(1)) as f64 * slice_dt < t - 1e-9 {
        return Err(SimError::InsufficientHistory(format!(
            "history will end before probe time {t}"
        )));
    }
    let (n_shells, dr) = shell_partition(t, grid.dx);
    let mut points = Vec::new();
    for s in 0..n_shells {
        let r = (s as f64 + 0.5) * dr;
        let tau = t - r;
        let dirs = fibonacci_sphere(shell_point_count(r, grid.dx));
        let w_point = 4.0 * std::f64::consts::PI * r * r * dr / dirs.len() as f64;
        let u = tau / slice_dt;
        let k0 = (u.floor().max(0.0) as usize).min(slice_count - 1);
        let bracket = if k0 + 1 < slice_count {
            (k0, k0 + 1, u - k0 as f64)
        } else {
            (k0, k0, 0.0)
        };
        for dir in dirs {
            points.push(ConePoint {
                y: x + dir * r,
                omega: dir,
                r,
                tau,
                weight: w_point,
                bracket,
            });
        }
    }
    Ok(ConePlan { t, x, points })
}

/// Streams kernel moments for one probe while the run advances. Each cone
/// point needs the particle moments at its two bracketing slices; the
/// driver feeds slices as they are produced, so no ensemble snapshot is
/// ever stored.
pub struct ConeAccumulator {
    pub plan: ConePlan,
    lo: Vec<Option<ZMoments>>,
    hi: Vec<Option<ZMoments>>,
}

impl ConeAccumulator {
    pub fn new(plan: ConePlan) -> Self {
        let n = plan.points.len();
        Self {
            plan,
            lo: vec![None; n],
            hi: vec![None; n],
        }
    }

    pub fn feed_slice(&mut self, slice_index: usize, buckets: &ParticleBuckets, grid: &GridSpec) {
        for (idx, pt) in self.plan.points.iter().enumerate() {
            if pt.bracket.0 == slice_index && self.lo[idx].is_none() {
                self.lo[idx] = Some(buckets.moments_at(pt.y, pt.omega, grid));
            }
            if pt.bracket.1 == slice_index && self.hi[idx].is_none() {
                self.hi[idx] = Some(buckets.moments_at(pt.y, pt.omega, grid));
            }
        }
    }

    /// Mark a vacuum run: every moment is exactly zero.
    pub fn feed_vacuum(&mut self) {
        for v in self.lo.iter_mut().chain(self.hi.iter_mut()) {
            *v = Some(ZMoments::default());
        }
    }

    pub fn is_complete(&self) -> bool {
        self.lo.iter().all(Option::is_some) && self.hi.iter().all(Option::is_some)
    }

    fn moments(&self, idx: usize) -> Result<ZMoments> {
        let (a, b) = (self.lo[idx], self.hi[idx]);
        match (a, b) {
            (Some(a), Some(b)) => Ok(ZMoments::lerp(a, b, self.plan.points[idx].bracket.2)),
            _ => Err(SimError::InsufficientHistory(
                "cone moments were not fully streamed".into(),
            )),
        }
    }
}

/// Breakdown of the reconstructed field time derivative at a probe.
#[derive(Debug, Clone, Copy)]
pub struct DtphiRepresentation {
    pub t: f64,
    pub x: Vec3,
    /// Data term plus the six retarded cone integrals.
    pub value_repr: f64,
    /// Grid value interpolated from the solver state.
    pub value_grid: f64,
    /// Homogeneous-solution derivative minus the initial-data surface term.
    pub data_term: f64,
    pub z: [f64; 6],
}

/// Momentum moment of the initial matter bump against the retarded
/// kernel, `int q_p(p) dp / (sqrt(1+|p|^2) + w.p)`. Rotation invariance
/// makes it independent of the direction, reducing to
/// `4 pi int r asinh(r) q_p(r^2/R^2) dr`.
fn f0_data_moment(params: &DataParams) -> Result<f64> {
    if params.a_f == 0.0 {
        return Ok(0.0);
    }
    let rp = params.r_p;
    let v = crate::quad::integrate(
        |r| r * r.asinh() * bump_profile(r * r / (rp * rp), 4),
        0.0,
        rp,
        1e-11,
    )?;
    Ok(4.0 * std::f64::consts::PI * v)
}

const DATA_SPHERE_ORDER: usize = 24;

/// Assemble the representation of `dphi_dt(t, x)` from the streamed cone
/// moments plus the field history, and compare with the grid value.
pub fn dtphi_representation(
    acc: &ConeAccumulator,
    history: &FieldHistory,
    params: &DataParams,
    grid: &GridSpec,
) -> Result<DtphiRepresentation> {
    let t = acc.plan.t;
    let x = acc.plan.x;
    let rule = sphere_product_rule(DATA_SPHERE_ORDER);
    let phi0 = params.phi0_bump();
    let phi1 = params.phi1_bump();

    // data term: homogeneous part minus the initial-density surface term
    let hom = eval_dtphi_hom(&phi0, &phi1, t, x, &rule);
    let data_term = if t < 1e-12 {
        hom
    } else {
        let moment = f0_data_moment(params)?;
        let mut surface = KahanSum::new();
        for &(nu, w) in &rule {
            let y = x + nu * t;
            let sx = (y - params.f0_center).norm_sq() / (params.r_x * params.r_x);
            surface.add(w * params.a_f * bump_profile(sx, 4));
        }
        let surface_integral = 4.0 * std::f64::consts::PI * t * t * surface.value() * moment;
        hom - surface_integral / t
    };

    // grid value at the probe
    let loc = grid.locate_interior(x).ok_or(SimError::OutOfDomain)?;
    if !history.covers(t) {
        return Err(SimError::InsufficientHistory(format!(
            "grid value at t={t} requires history through that time"
        )));
    }
    let value_grid = history_scalar(history, t, SliceField::DphiDt, &loc)?;

    // cone terms, in fixed point order with compensated sums
    let mut z = [KahanSum::new(); 6];
    for (idx, pt) in acc.plan.points.iter().enumerate() {
        let m = acc.moments(idx)?;
        let loc = grid.locate_interior(pt.y).ok_or(SimError::ConeExitsGrid)?;
        let v_ret = history_scalar(history, pt.tau, SliceField::DphiDt, &loc)?;
        let mu_ret = history_scalar(history, pt.tau, SliceField::Mu, &loc)?;
        let grad_ret = history_grad(history, grid, pt.tau, &loc)?;
        let b = v_ret - pt.omega.dot(grad_ret);
        let inv_r = 1.0 / pt.r;
        let inv_r2 = inv_r * inv_r;
        z[0].add(pt.weight * (-2.0) * v_ret * mu_ret * inv_r);
        z[1].add(pt.weight * m.z1 * inv_r2);
        z[2].add(pt.weight * (-m.z2) * inv_r2);
        z[3].add(pt.weight * 2.0 * b * m.z3 * inv_r);
        z[4].add(pt.weight * b * m.z2 * inv_r);
        z[5].add(pt.weight * (-2.0) * pt.omega.cross(grad_ret).dot(m.z5) * inv_r);
    }
    let z = [z[0].value(), z[1].value(), z[2].value(), z[3].value(), z[4].value(), z[5].value()];
    Ok(DtphiRepresentation {
        t,
        x,
        value_repr: data_term + z.iter().sum::<f64>(),
        value_grid,
        data_term,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::PhaseParticle;

    fn grid() -> GridSpec {
        GridSpec::new(Vec3::zero(), 2.0, 16).unwrap()
    }

    fn zero_field(g: &GridSpec) -> ScalarFieldState {
        ScalarFieldState::new(Lattice::zeros(g), Lattice::zeros(g))
    }

    fn particle(x: Vec3, p: Vec3, fv: f64) -> PhaseParticle {
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

    fn empty(g: &GridSpec) -> Ensemble {
        let _ = g;
        Ensemble {
            particles: vec![],
            time: 0.0,
        }
    }

    #[test]
    fn vacuum_energy_is_identically_zero() {
        let g = grid();
        let e = energy_lattices(&empty(&g), &zero_field(&g), &g, 1).unwrap();
        assert_eq!(e.energy.max_abs(), 0.0);
        assert_eq!(e.pflux[0].max_abs(), 0.0);
        assert_eq!(total_energy(&e, &g), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_particle_energy_density() {
        let g = grid();
        let node = g.node_pos(8, 8, 8);
        let fv = 0.6;
        let ens = Ensemble {
            particles: vec![particle(node, Vec3::zero(), fv)],
            time: 0.0,
        };
        let e = energy_lattices(&ens, &zero_field(&g), &g, 1).unwrap();
        let expect = fv / g.dx.powi(3);
        assert!((e.energy.get(8, 8, 8) - expect).abs() < 1e-12 * expect);
        assert_eq!(e.pflux[0].get(8, 8, 8), 0.0);
        let (total, kinetic, field) = total_energy(&e, &g);
        assert_eq!(field, 0.0);
        assert_eq!(total, kinetic);
    }

    #[test]
    fn pure_field_energy_is_half_phi1_squared() {
        let g = grid();
        let phi1 = |x: Vec3| 0.5 * crate::initial::bump_profile(x.norm_sq(), 3);
        let field = ScalarFieldState::new(Lattice::zeros(&g), Lattice::from_fn(&g, phi1));
        let e = energy_lattices(&empty(&g), &field, &g, 1).unwrap();
        for (i, j, k) in [(8, 8, 8), (9, 8, 7), (4, 10, 8)] {
            let v = phi1(g.node_pos(i, j, k));
            assert!((e.field.get(i, j, k) - 0.5 * v * v).abs() < 1e-14);
        }
        assert!(e.energy.min() >= 0.0);
    }

    #[test]
    fn suprema_conventions_and_monotonicity() {
        let g = grid();
        assert_eq!(support_suprema(&empty(&g), &zero_field(&g), &g).unwrap(), (0.0, 0.0));
        let mut tracker = SupremaTracker::default();
        let ens1 = Ensemble {
            particles: vec![particle(Vec3::zero(), Vec3::new(0.8, 0.0, 0.0), 1.0)],
            time: 0.0,
        };
        let ens2 = Ensemble {
            particles: vec![particle(Vec3::zero(), Vec3::new(0.3, 0.0, 0.0), 1.0)],
            time: 0.0,
        };
        tracker.update(&ens1, &zero_field(&g), &g).unwrap();
        let after_first = tracker.p_max;
        tracker.update(&ens2, &zero_field(&g), &g).unwrap();
        assert_eq!(tracker.p_max, after_first); // running sup does not decrease
        assert_eq!(tracker.ptilde_max, 0.8);
    }

    #[test]
    fn support_equivalence_holds_on_snapshots() {
        let g = grid();
        let field = ScalarFieldState::new(
            Lattice::from_fn(&g, |x| 0.2 * (x.x - 0.3).sin()),
            Lattice::zeros(&g),
        );
        let ens = Ensemble {
            particles: (0..30)
                .map(|i| {
                    let s = i as f64 / 29.0;
                    particle(
                        Vec3::new(0.8 * (s - 0.5), 0.5 * s, -0.4 * s),
                        Vec3::new(2.0 * s, -1.0 + s, 0.7),
                        0.5 + s,
                    )
                })
                .collect(),
            time: 0.0,
        };
        let chk = support_equivalence_check(&ens, &field, &g).unwrap();
        assert!(chk.upper_ok && chk.lower_ok);
        assert!(chk.p_inst > 0.0 && chk.ptilde_inst > 0.0);
    }

    #[test]
    fn ball_mass_closed_form_matches_quadrature_route() {
        for r in [0.5, 1.5, 4.0] {
            let via_quad = crate::identities::b_ab(r, 0.0, 0.5, Vec3::new(0.0, 0.0, 1.0)).unwrap();
            let closed = ball_mass_integral(r);
            assert!((via_quad - closed).abs() / closed < 1e-8, "R={r}: {via_quad} vs {closed}");
        }
        assert_eq!(ball_mass_integral(0.0), 0.0);
    }

    #[test]
    fn cone_expansion_degenerate_cases() {
        let omega = Vec3::new(0.0, 0.0, 1.0);
        // no matter, no gradient: both sides are v^2/2
        let v = 0.7;
        let r = cone_integrand_expansion(0.5 * v * v, Vec3::zero(), omega, 0.0, Vec3::zero(), v, Vec3::zero())
            .unwrap();
        assert_eq!(r, 0.0);

        // omega parallel to the gradient kills the transverse square
        let gvec = omega * 1.3;
        let m_e = 0.4;
        let e_val = m_e + 0.5 * gvec.norm_sq();
        let pf = Vec3::zero() - gvec * 0.0;
        let r = cone_integrand_expansion(e_val, pf, omega, m_e, Vec3::zero(), 0.0, gvec).unwrap();
        assert!(r.abs() < 1e-15);

        assert!(cone_integrand_expansion(0.0, Vec3::zero(), omega * 1.1, 0.0, Vec3::zero(), 0.0, Vec3::zero())
            .is_err());
    }

    fn trivial_history(g: &GridSpec, slice_dt: f64, n: usize) -> FieldHistory {
        let mut h = FieldHistory::new(1, slice_dt);
        for k in 0..n {
            h.push_slice(HistorySlice {
                time: k as f64 * slice_dt,
                field: zero_field(g),
                mu: Lattice::zeros(g),
                energy: Lattice::zeros(g),
                pflux: [Lattice::zeros(g), Lattice::zeros(g), Lattice::zeros(g)],
            })
            .unwrap();
        }
        h
    }

    #[test]
    fn null_cone_degenerate_and_vacuum() {
        let g = grid();
        let h = trivial_history(&g, 0.05, 21);
        let r = null_cone_check(0.0, Vec3::zero(), &h, &g).unwrap();
        assert_eq!((r.lhs, r.rhs_volume, r.rel_residual), (0.0, 0.0, 0.0));
        let r = null_cone_check(0.8, Vec3::zero(), &h, &g).unwrap();
        assert_eq!((r.lhs, r.rhs_volume, r.rel_residual), (0.0, 0.0, 0.0));
        // cone bigger than the grid
        assert!(matches!(
            null_cone_check(2.5, Vec3::zero(), &h, &g),
            Err(SimError::ConeExitsGrid)
        ));
        // not enough history
        let short = trivial_history(&g, 0.05, 3);
        assert!(matches!(
            null_cone_check(0.8, Vec3::zero(), &short, &g),
            Err(SimError::InsufficientHistory(_))
        ));
    }

    #[test]
    fn cone_plan_prechecks() {
        let g = grid();
        assert!(plan_cone(0.5, Vec3::zero(), &g, 0.2, 40).is_err()); // < 8 slices cover
        assert!(plan_cone(3.0, Vec3::zero(), &g, 0.01, 400).is_err()); // exits grid
        let plan = plan_cone(0.5, Vec3::zero(), &g, 0.05, 40).unwrap();
        assert!(!plan.points.is_empty());
        // weights tile the ball volume to the midpoint-shell accuracy O(dr^2)
        let vol: f64 = plan.points.iter().map(|p| p.weight).sum();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.5f64.powi(3);
        assert!((vol - exact).abs() / exact < 0.02, "shell volume {vol} vs {exact}");
        let empty_plan = plan_cone(0.0, Vec3::zero(), &g, 0.05, 40).unwrap();
        assert!(empty_plan.points.is_empty());
    }

    #[test]
    fn representation_at_t_zero_returns_initial_derivative() {
        let g = grid();
        let params = DataParams {
            a_pi: 0.8,
            ..DataParams::default()
        };
        let phi1 = |x: Vec3| crate::initial::phi1_eval(x, &params);
        let mut h = FieldHistory::new(1, 0.05);
        h.push_slice(HistorySlice {
            time: 0.0,
            field: ScalarFieldState::new(Lattice::zeros(&g), Lattice::from_fn(&g, phi1)),
            mu: Lattice::zeros(&g),
            energy: Lattice::zeros(&g),
            pflux: [Lattice::zeros(&g), Lattice::zeros(&g), Lattice::zeros(&g)],
        })
        .unwrap();
        let acc = ConeAccumulator::new(plan_cone(0.0, Vec3::zero(), &g, 0.05, 1).unwrap());
        let rep = dtphi_representation(&acc, &h, &params, &g).unwrap();
        assert!(rep.z.iter().all(|&v| v == 0.0));
        assert!((rep.value_repr - phi1(Vec3::zero())).abs() < 1e-12);
        assert!((rep.value_grid - phi1(Vec3::zero())).abs() < 1e-12);
    }

    #[test]
    fn particle_buckets_reproduce_cic_density() {
        let g = grid();
        let x0 = Vec3::new(0.1, -0.2, 0.3);
        let ens = Ensemble {
            particles: vec![particle(x0, Vec3::zero(), 1.0)],
            time: 0.0,
        };
        let buckets = ParticleBuckets::build(&ens, &[0.9], &g);
        // at the particle position the kernel value is 1/dx^3 times fv,
        // and with p = 0 the z1 moment equals the plain density
        let m = buckets.moments_at(x0, Vec3::new(0.0, 0.0, 1.0), &g);
        let expect = 0.9 / g.dx.powi(3);
        assert!((m.z1 - expect).abs() < 1e-9 * expect);
        assert!((m.z2 - expect).abs() < 1e-9 * expect);
        assert_eq!(m.z3, 0.0);
        assert_eq!(m.z5, Vec3::zero());
        // far away the moments vanish
        let far = buckets.moments_at(Vec3::new(1.5, 1.5, 1.5), Vec3::new(0.0, 0.0, 1.0), &g);
        assert_eq!(far.z1, 0.0);
    }
}
