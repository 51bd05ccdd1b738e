//! Shared data model: field state, particles, ensembles, field history,
//! diagnostics rows, and the run configuration.

use crate::error::{Result, SimError};
use crate::grid::{GridSpec, Lattice};
use crate::initial::DataParams;
use crate::math::Vec3;

/// Lattice values of the scalar field and its time derivative, plus the
/// previous level needed by the leapfrog update.
///
/// `dphi_dt` holds the centered difference of the two neighboring levels,
/// which is second-order accurate at the level the simulation driver
/// pairs it with (see the driver's stepping notes).
#[derive(Debug, Clone)]
pub struct ScalarFieldState {
    pub phi: Lattice,
    pub dphi_dt: Lattice,
    pub phi_prev: Option<Lattice>,
    pub time: f64,
}

impl ScalarFieldState {
    /// Fresh state at `t = 0` from initial data lattices.
    pub fn new(phi0: Lattice, phi1: Lattice) -> Self {
        Self {
            phi: phi0,
            dphi_dt: phi1,
            phi_prev: None,
            time: 0.0,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.phi.all_finite()
            && self.dphi_dt.all_finite()
            && self.phi_prev.as_ref().map_or(true, |p| p.all_finite())
    }

    /// Second-order central-difference gradient of `phi` at a strictly
    /// interior node.
    pub fn grad_phi(&self, grid: &GridSpec, node: [usize; 3]) -> Result<Vec3> {
        let [i, j, k] = node;
        if !grid.is_interior(i, j, k) {
            return Err(SimError::BoundaryNode);
        }
        let inv_2dx = 1.0 / (2.0 * grid.dx);
        Ok(Vec3::new(
            self.phi.central_diff(i, j, k, 0, inv_2dx),
            self.phi.central_diff(i, j, k, 1, inv_2dx),
            self.phi.central_diff(i, j, k, 2, inv_2dx),
        ))
    }

    /// Copy without the previous level, as stored in the field history.
    pub fn without_prev(&self) -> Self {
        Self {
            phi: self.phi.clone(),
            dphi_dt: self.dphi_dt.clone(),
            phi_prev: None,
            time: self.time,
        }
    }
}

/// One weighted sample of the phase-space density, carrying its birth
/// data. The density value is never stored: it is reconstructed from the
/// field via [`PhaseParticle::reconstruct_f`], which is exact along
/// characteristics.
#[derive(Debug, Clone, Copy)]
pub struct PhaseParticle {
    pub x: Vec3,
    pub p: Vec3,
    pub f_birth: f64,
    pub phi_birth: f64,
    pub vol_birth: f64,
    pub x_birth: Vec3,
    pub p_birth: Vec3,
}

impl PhaseParticle {
    /// Density carried by this particle when the local field value is
    /// `phi_here`: `f_birth * exp(4 (phi_here - phi_birth))`.
    pub fn reconstruct_f(&self, phi_here: f64) -> f64 {
        self.f_birth * (4.0 * (phi_here - self.phi_birth)).exp()
    }

    /// Phase-space volume element carried by this particle; the flow
    /// contracts volumes by `exp(-3 (phi - phi_birth))`.
    pub fn volume(&self, phi_here: f64) -> f64 {
        self.vol_birth * (-3.0 * (phi_here - self.phi_birth)).exp()
    }

    /// Product `f * V = f_birth * vol_birth * exp(phi - phi_birth)`,
    /// the weight every deposition uses.
    pub fn weight(&self, phi_here: f64) -> f64 {
        self.f_birth * self.vol_birth * (phi_here - self.phi_birth).exp()
    }
}

/// The full particle population. The count is constant over a run.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub particles: Vec<PhaseParticle>,
    pub time: f64,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

/// One stored time slice: field, source, and energy lattices.
#[derive(Debug, Clone)]
pub struct HistorySlice {
    pub time: f64,
    pub field: ScalarFieldState,
    pub mu: Lattice,
    pub energy: Lattice,
    pub pflux: [Lattice; 3],
}

/// Ring of past slices at uniform spacing `stride * dt`, enabling
/// evaluation of quantities at retarded times `t - |x - y|`.
#[derive(Debug, Clone)]
pub struct FieldHistory {
    pub stride: usize,
    slice_dt: f64,
    slices: Vec<HistorySlice>,
}

impl FieldHistory {
    pub fn new(stride: usize, slice_dt: f64) -> Self {
        assert!(stride >= 1);
        assert!(slice_dt > 0.0);
        Self {
            stride,
            slice_dt,
            slices: Vec::new(),
        }
    }

    pub fn slice_dt(&self) -> f64 {
        self.slice_dt
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slice(&self, k: usize) -> &HistorySlice {
        &self.slices[k]
    }

    pub fn last_time(&self) -> Option<f64> {
        self.slices.last().map(|s| s.time)
    }

    pub fn push_slice(&mut self, slice: HistorySlice) -> Result<()> {
        let expected = self.slices.len() as f64 * self.slice_dt;
        if (slice.time - expected).abs() > 1e-9 * self.slice_dt.max(1.0) {
            return Err(SimError::InvalidConfig(format!(
                "history slice at t={} breaks uniform spacing (expected {})",
                slice.time, expected
            )));
        }
        self.slices.push(slice);
        Ok(())
    }

    /// True if slices cover `[0, t]` (a slice at or past `t` exists).
    pub fn covers(&self, t: f64) -> bool {
        self.last_time().is_some_and(|last| last >= t - 1e-9 * self.slice_dt)
    }

    /// Bracketing slice indices and interpolation weight for time `tau`:
    /// value = (1 - w) * slice[k0] + w * slice[k1].
    pub fn bracket(&self, tau: f64) -> Result<(usize, usize, f64)> {
        if self.slices.is_empty() || !self.covers(tau) || tau < -1e-12 {
            return Err(SimError::InsufficientHistory(format!(
                "no slices bracket t={tau}"
            )));
        }
        let u = (tau / self.slice_dt).max(0.0);
        let k0 = (u.floor() as usize).min(self.slices.len() - 1);
        if k0 + 1 >= self.slices.len() {
            return Ok((k0, k0, 0.0));
        }
        Ok((k0, k0 + 1, u - k0 as f64))
    }
}

/// One time-stamped row of all monitored scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub total_energy: f64,
    pub kinetic_energy: f64,
    pub field_energy: f64,
    /// Running supremum of `exp(phi) * sqrt(1 + |p|^2)` over the support.
    pub p_max: f64,
    /// Running supremum of `|p|` over the support.
    pub ptilde_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub char_invariant_residual_max: f64,
    pub energy_drift_rel: f64,
}

impl DiagnosticsRecord {
    pub fn new(
        time: f64,
        kinetic_energy: f64,
        field_energy: f64,
        p_max: f64,
        ptilde_max: f64,
        phi_min: f64,
        phi_max: f64,
        char_invariant_residual_max: f64,
        energy_drift_rel: f64,
    ) -> Self {
        Self {
            time,
            total_energy: kinetic_energy + field_energy,
            kinetic_energy,
            field_energy,
            p_max,
            ptilde_max,
            phi_min,
            phi_max,
            char_invariant_residual_max,
            energy_drift_rel,
        }
    }
}

/// Full run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub dt: f64,
    pub t_end: f64,
    pub cfl_safety: f64,
    pub data: DataParams,
    pub nx_per_axis: usize,
    pub np_per_axis: usize,
    /// Store every `history_stride`-th step in the field history
    /// (0 disables history).
    pub history_stride: usize,
    /// Stop storing history slices past this time (defaults to `t_end`).
    pub history_t_max: f64,
    /// Emit a diagnostics record every this many steps.
    pub output_every: usize,
    /// Write field snapshots every this many steps (0 disables).
    pub snapshot_every: usize,
    /// Reserved for future stochastic extensions; unused by default.
    pub rng_seed: u64,
}

impl RunConfig {
    /// CFL stability bound for the 3D leapfrog scheme.
    pub fn cfl_bound(&self) -> f64 {
        self.cfl_safety * self.grid.dx / 3.0_f64.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        let bound = self.cfl_bound();
        if self.dt > bound * (1.0 + 1e-12) {
            return Err(SimError::InvalidConfig(format!(
                "dt = {} violates the stability bound cfl_safety * dx / sqrt(3) = {}",
                self.dt, bound
            )));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "t_end must be non-negative, got {}",
                self.t_end
            )));
        }
        let extent = self.data.support_extent(self.grid.center);
        let needed = extent + self.t_end;
        if self.grid.half_width < needed - 1e-12 {
            return Err(SimError::InvalidConfig(format!(
                "half_width = {} is too small for causal sizing: data extent {} + t_end {} = {} \
                 (signals travel at speed 1, so the boundary must stay out of reach)",
                self.grid.half_width, extent, self.t_end, needed
            )));
        }
        if self.data.a_f > 0.0 && (self.nx_per_axis < 4 || self.np_per_axis < 4) {
            return Err(SimError::InvalidConfig(format!(
                "sampling counts must be at least 4 per axis, got {} (x), {} (p)",
                self.nx_per_axis, self.np_per_axis
            )));
        }
        if self.output_every == 0 {
            return Err(SimError::InvalidConfig("output_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps: `t_end / dt` rounded up, then rounded up again to
    /// a multiple of the history stride so slices stay uniformly spaced
    /// through the final time.
    pub fn num_steps(&self) -> usize {
        let n = (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize;
        if self.history_stride > 1 {
            n.div_ceil(self.history_stride) * self.history_stride
        } else {
            n
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(Vec3::zero(), 2.0, 16).unwrap()
    }

    #[test]
    fn reconstruct_f_matches_birth_value_and_scales() {
        let pt = PhaseParticle {
            x: Vec3::zero(),
            p: Vec3::zero(),
            f_birth: 0.7,
            phi_birth: -0.2,
            vol_birth: 1.0,
            x_birth: Vec3::zero(),
            p_birth: Vec3::zero(),
        };
        assert_eq!(pt.reconstruct_f(pt.phi_birth), pt.f_birth);
        let doubled = pt.reconstruct_f(pt.phi_birth + 2.0_f64.ln() / 4.0);
        assert!((doubled - 2.0 * pt.f_birth).abs() < 1e-14);
        let vacuum = PhaseParticle { f_birth: 0.0, ..pt };
        assert_eq!(vacuum.reconstruct_f(3.7), 0.0);
    }

    #[test]
    fn conformal_density_is_invariant_under_phi() {
        // exp(-4 phi) * f is the same number for any phi value.
        let pt = PhaseParticle {
            x: Vec3::zero(),
            p: Vec3::zero(),
            f_birth: 1.3,
            phi_birth: 0.4,
            vol_birth: 1.0,
            x_birth: Vec3::zero(),
            p_birth: Vec3::zero(),
        };
        let reference = pt.f_birth * (-4.0 * pt.phi_birth).exp();
        for phi in [-1.0, -0.3, 0.0, 0.8, 2.5] {
            let f = pt.reconstruct_f(phi);
            assert!(f >= 0.0);
            assert!((f * (-4.0 * phi).exp() - reference).abs() < 1e-12 * reference);
        }
    }

    #[test]
    fn grad_phi_constant_and_linear_fields() {
        let g = grid();
        let state = ScalarFieldState::new(Lattice::from_fn(&g, |_| 3.25), Lattice::zeros(&g));
        let gr = state.grad_phi(&g, [4, 5, 6]).unwrap();
        assert_eq!(gr, Vec3::zero());

        let a = 0.75;
        let state = ScalarFieldState::new(Lattice::from_fn(&g, |x| a * x.x), Lattice::zeros(&g));
        let gr = state.grad_phi(&g, [4, 5, 6]).unwrap();
        assert!((gr.x - a).abs() < 1e-13);
        assert!(gr.y.abs() < 1e-13 && gr.z.abs() < 1e-13);
    }

    #[test]
    fn grad_phi_rejects_boundary_nodes() {
        let g = grid();
        let state = ScalarFieldState::new(Lattice::zeros(&g), Lattice::zeros(&g));
        assert!(matches!(
            state.grad_phi(&g, [0, 5, 6]),
            Err(SimError::BoundaryNode)
        ));
        assert!(state.grad_phi(&g, [16, 5, 6]).is_err());
    }

    #[test]
    fn grad_phi_second_order_on_smooth_fields() {
        // Error against k cos(k x) shrinks ~4x when dx halves.
        let k = 2.0;
        let mut errs = Vec::new();
        for cells in [16usize, 32] {
            let g = GridSpec::new(Vec3::zero(), 2.0, cells).unwrap();
            let state =
                ScalarFieldState::new(Lattice::from_fn(&g, |x| (k * x.x).sin()), Lattice::zeros(&g));
            let mut worst = 0.0f64;
            let n = g.cells_per_axis;
            for i in 1..n {
                let x = g.node_pos(i, n / 2, n / 2);
                let gr = state.grad_phi(&g, [i, n / 2, n / 2]).unwrap();
                worst = worst.max((gr.x - k * (k * x.x).cos()).abs());
            }
            errs.push(worst);
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.7 && ratio < 4.3, "convergence ratio {ratio}");
    }

    #[test]
    fn history_enforces_uniform_spacing_and_brackets() {
        let g = grid();
        let mk = |t: f64| HistorySlice {
            time: t,
            field: ScalarFieldState::new(Lattice::zeros(&g), Lattice::zeros(&g)),
            mu: Lattice::zeros(&g),
            energy: Lattice::zeros(&g),
            pflux: [Lattice::zeros(&g), Lattice::zeros(&g), Lattice::zeros(&g)],
        };
        let mut h = FieldHistory::new(2, 0.5);
        h.push_slice(mk(0.0)).unwrap();
        h.push_slice(mk(0.5)).unwrap();
        h.push_slice(mk(1.0)).unwrap();
        assert!(h.push_slice(mk(1.7)).is_err());
        assert!(h.covers(1.0));
        assert!(!h.covers(1.2));
        let (k0, k1, w) = h.bracket(0.75).unwrap();
        assert_eq!((k0, k1), (1, 2));
        assert!((w - 0.5).abs() < 1e-12);
        assert!(h.bracket(1.5).is_err());
    }

    #[test]
    fn run_config_validation_catches_violations() {
        let g = grid();
        let mut cfg = RunConfig {
            grid: g,
            dt: 0.4 * g.dx / 3.0_f64.sqrt(),
            t_end: 0.5,
            cfl_safety: 0.4,
            data: DataParams {
                a_f: 1.0,
                ..DataParams::default()
            },
            nx_per_axis: 8,
            np_per_axis: 8,
            history_stride: 0,
            history_t_max: 0.5,
            output_every: 1,
            snapshot_every: 0,
            rng_seed: 0,
        };
        cfg.validate().unwrap();

        let mut bad = cfg.clone();
        bad.dt = 2.0 * bad.cfl_bound();
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("stability bound"), "{err}");

        let mut bad = cfg.clone();
        bad.t_end = 5.0; // 1 + 5 > half_width = 2
        assert!(bad.validate().is_err());

        cfg.history_stride = 3;
        cfg.t_end = 0.5;
        assert_eq!(cfg.num_steps() % 3, 0);
    }

    #[test]
    fn record_total_is_sum_of_parts() {
        let r = DiagnosticsRecord::new(1.0, 2.5, 0.75, 0.0, 0.0, -0.1, 0.0, 0.0, 0.0);
        assert_eq!(r.total_energy, r.kinetic_energy + r.field_energy);
    }
}
