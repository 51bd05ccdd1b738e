//! Simulation driver: the coupled time loop, monitored diagnostics, the
//! homogeneous twin comparison, representation probes, and refinement
//! ladders.
//!
//! # Stepping and time centering
//!
//! One loop iteration at time `t_n` does, in order: deposit `mu` from the
//! ensemble, advance the field by leapfrog, push the particles, emit
//! diagnostics. The wave step runs before the push so that the freshly
//! available centered difference `(phi_next - phi_prev) / (2 dt)` — the
//! second-order time derivative *at `t_n`* — can be paired with `phi` at
//! `t_n` into a fully centered snapshot. That snapshot drives the push,
//! the diagnostics, and the stored history slice. A closing half
//! iteration (deposit and wave step without a push) produces the centered
//! snapshot for the final time.

use crate::diagnostics::{
    dtphi_representation, energy_lattices, plan_cone, source_bound_check, support_equivalence_check,
    total_energy, ConeAccumulator, DtphiRepresentation, ParticleBuckets, SupremaTracker,
};
use crate::error::{Result, SimError};
use crate::field::{deposit_mu, step_wave, FieldSampler, GridSampler, SourceLattice};
use crate::grid::{GridSpec, Lattice};
use crate::initial::{phi0_eval, phi1_eval, sample_ensemble};
use crate::math::Vec3;
use crate::output::write_snapshot;
use crate::state::{DiagnosticsRecord, Ensemble, FieldHistory, HistorySlice, RunConfig, ScalarFieldState};
use std::path::PathBuf;

/// Relative slack allowed in the nodewise source bound; the particle
/// quadrature smooths the density over deposition cells.
const SOURCE_BOUND_SLACK: f64 = 0.05;

/// Cap on the number of particles sampled for the per-step
/// along-characteristic residual monitor.
const CHAR_MONITOR_CAP: usize = 65_536;

/// Result of the nodewise comparison against the homogeneous twin run.
#[derive(Debug, Clone, Copy)]
pub struct PsiCheck {
    /// Largest nodewise `phi - phi_hom` seen over the run.
    pub max_excess: f64,
    /// Worst `excess - tolerance` margin (non-positive means the bound
    /// held at every node and step).
    pub worst_margin: f64,
    pub ok: bool,
}

/// Everything a finished run reports besides the CSV rows.
#[derive(Debug)]
pub struct SimOutputs {
    pub records: Vec<DiagnosticsRecord>,
    pub history: Option<FieldHistory>,
    pub representations: Vec<DtphiRepresentation>,
    /// Smallest deposited source value over all nodes and steps.
    pub mu_min: f64,
    /// Smallest energy density over all nodes and recorded steps.
    pub energy_min: f64,
    pub psi_check: Option<PsiCheck>,
    pub support_equivalence_ok: bool,
    pub source_bound_ok: bool,
    pub source_bound_worst: f64,
    pub max_energy_drift: f64,
    pub final_p_max: f64,
    pub final_ptilde_max: f64,
    pub steps: usize,
}

struct CharMonitor {
    indices: Vec<usize>,
    q_two_back: Vec<f64>,
    q_one_back: Vec<f64>,
    rate_one_back: Vec<f64>,
    filled: usize,
    latest: f64,
}

impl CharMonitor {
    fn new(n_particles: usize) -> Self {
        let step = (n_particles / CHAR_MONITOR_CAP).max(1);
        let indices: Vec<usize> = (0..n_particles).step_by(step).collect();
        let m = indices.len();
        Self {
            indices,
            q_two_back: vec![0.0; m],
            q_one_back: vec![0.0; m],
            rate_one_back: vec![0.0; m],
            filled: 0,
            latest: 0.0,
        }
    }

    /// Feed the snapshot at the current step; once three levels are known
    /// the centered-difference residual of the rate identity updates.
    fn feed(&mut self, ensemble: &Ensemble, sampler: &GridSampler, dt: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        let mut q_now = vec![0.0; self.indices.len()];
        let mut rate_now = vec![0.0; self.indices.len()];
        for (m, &idx) in self.indices.iter().enumerate() {
            let pt = &ensemble.particles[idx];
            let s = sampler.sample(ensemble.time, pt.x)?;
            let q = (2.0 * s.phi).exp() * (1.0 + pt.p.norm_sq());
            q_now[m] = q;
            rate_now[m] = 2.0 * (2.0 * s.phi).exp() * s.dphi_dt;
            if self.filled >= 2 {
                let centered = (q - self.q_two_back[m]) / (2.0 * dt);
                worst = worst.max((centered - self.rate_one_back[m]).abs());
            }
        }
        if self.filled >= 2 {
            self.latest = worst;
        }
        std::mem::swap(&mut self.q_two_back, &mut self.q_one_back);
        self.q_one_back = q_now;
        self.rate_one_back = rate_now;
        self.filled += 1;
        Ok(self.latest)
    }
}

/// A coupled run assembled from a validated configuration.
pub struct Simulation {
    cfg: RunConfig,
    workers: usize,
    field: ScalarFieldState,
    hom_field: Option<ScalarFieldState>,
    ensemble: Ensemble,
    history: Option<FieldHistory>,
    probes: Vec<ConeAccumulator>,
    tracker: SupremaTracker,
    char_monitor: Option<CharMonitor>,
    conformal_sup: f64,
    records: Vec<DiagnosticsRecord>,
    snapshot_dir: Option<PathBuf>,
    e0: Option<f64>,
    mu_min: f64,
    energy_min: f64,
    psi_max_excess: f64,
    psi_worst_margin: f64,
    psi_hom_maxabs: f64,
    support_equivalence_ok: bool,
    source_bound_ok: bool,
    source_bound_worst: f64,
    max_drift: f64,
    finished: bool,
}

impl Simulation {
    pub fn new(cfg: RunConfig, workers: usize) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid;
        let ensemble = sample_ensemble(&cfg.data, cfg.nx_per_axis, cfg.np_per_axis, &grid)?;
        let phi0 = Lattice::from_fn(&grid, |x| phi0_eval(x, &cfg.data));
        let phi1 = Lattice::from_fn(&grid, |x| phi1_eval(x, &cfg.data));
        let field = ScalarFieldState::new(phi0.clone(), phi1.clone());
        let has_matter = !ensemble.is_empty();
        let hom_field = has_matter.then(|| ScalarFieldState::new(phi0, phi1));
        let conformal_sup = ensemble
            .particles
            .iter()
            .map(|pt| pt.f_birth * (-4.0 * pt.phi_birth).exp())
            .fold(0.0f64, f64::max);
        let history = (cfg.history_stride > 0)
            .then(|| FieldHistory::new(cfg.history_stride, cfg.history_stride as f64 * cfg.dt));
        let char_monitor = has_matter.then(|| CharMonitor::new(ensemble.len()));
        Ok(Self {
            workers: workers.max(1),
            field,
            hom_field,
            ensemble,
            history,
            probes: Vec::new(),
            tracker: SupremaTracker::default(),
            char_monitor,
            conformal_sup,
            records: Vec::new(),
            snapshot_dir: None,
            e0: None,
            mu_min: f64::INFINITY,
            energy_min: f64::INFINITY,
            psi_max_excess: f64::NEG_INFINITY,
            psi_worst_margin: f64::NEG_INFINITY,
            psi_hom_maxabs: 0.0,
            support_equivalence_ok: true,
            source_bound_ok: true,
            source_bound_worst: 0.0,
            max_drift: 0.0,
            finished: false,
            cfg,
        })
    }

    /// Write `phi` snapshots under this directory at the snapshot cadence.
    pub fn set_snapshot_dir(&mut self, dir: PathBuf) {
        self.snapshot_dir = Some(dir);
    }

    fn planned_slice_count(&self) -> usize {
        let stride = self.cfg.history_stride;
        if stride == 0 {
            return 0;
        }
        let by_steps = self.cfg.num_steps() / stride;
        let slice_dt = stride as f64 * self.cfg.dt;
        let by_tmax = ((self.cfg.history_t_max + 1e-9) / slice_dt).floor() as usize;
        by_steps.min(by_tmax) + 1
    }

    /// Register a representation probe at `(t, x)`. Requires history to
    /// be enabled and the cone to be resolvable from the slice schedule.
    pub fn add_probe(&mut self, t: f64, x: Vec3) -> Result<()> {
        let stride = self.cfg.history_stride;
        if stride == 0 {
            return Err(SimError::InvalidConfig(
                "representation probes require history_stride >= 1".into(),
            ));
        }
        let slice_dt = stride as f64 * self.cfg.dt;
        let plan = plan_cone(t, x, &self.cfg.grid, slice_dt, self.planned_slice_count())?;
        let mut acc = ConeAccumulator::new(plan);
        if self.ensemble.is_empty() {
            acc.feed_vacuum();
        }
        self.probes.push(acc);
        Ok(())
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    fn particle_weights(&self, field: &ScalarFieldState) -> Result<Vec<f64>> {
        let grid = &self.cfg.grid;
        let ens = &self.ensemble;
        let mut fv = vec![0.0; ens.len()];
        crate::parallel::try_for_each_chunk_mut(&mut fv, self.workers, |start, chunk| {
            for (i, v) in chunk.iter_mut().enumerate() {
                let pt = &ens.particles[start + i];
                let loc = grid
                    .locate_interior(pt.x)
                    .ok_or(SimError::CausalDomainViolated)?;
                *v = pt.weight(field.phi.interp(&loc));
            }
            Ok(())
        })?;
        Ok(fv)
    }

    /// Run the time loop to completion.
    pub fn run(&mut self) -> Result<SimOutputs> {
        let grid = self.cfg.grid;
        let dt = self.cfg.dt;
        let steps = self.cfg.num_steps();
        let has_matter = !self.ensemble.is_empty();
        let vacuum_source = SourceLattice::zeros(&grid);

        for n in 0..=steps {
            let t_n = n as f64 * dt;

            // homogeneous twin comparison at t_n, before anything moves
            if let Some(hom) = &self.hom_field {
                self.psi_hom_maxabs = self.psi_hom_maxabs.max(hom.phi.max_abs());
                let tol = 1e-3 * self.psi_hom_maxabs + grid.dx * grid.dx;
                let mut excess = f64::NEG_INFINITY;
                for (a, b) in self.field.phi.as_slice().iter().zip(hom.phi.as_slice()) {
                    excess = excess.max(a - b);
                }
                self.psi_max_excess = self.psi_max_excess.max(excess);
                self.psi_worst_margin = self.psi_worst_margin.max(excess - tol);
            }

            // deposit at the current state, then advance the field
            let source = if has_matter {
                deposit_mu(&self.ensemble, &self.field, &grid, self.workers)?
            } else {
                vacuum_source.clone()
            };
            self.mu_min = self.mu_min.min(source.mu.min());
            let next = step_wave(&self.field, &source, dt, &grid)?;
            if let Some(hom) = self.hom_field.take() {
                self.hom_field = Some(step_wave(&hom, &vacuum_source, dt, &grid)?);
            }

            // fully centered snapshot at t_n
            let centered = ScalarFieldState {
                phi: self.field.phi.clone(),
                dphi_dt: next.dphi_dt.clone(),
                phi_prev: self.field.phi_prev.clone(),
                time: t_n,
            };
            let sampler = GridSampler::new(&centered, &self.cfg.grid);

            self.tracker.update(&self.ensemble, &centered, &grid)?;
            let char_residual = match &mut self.char_monitor {
                Some(mon) => mon.feed(&self.ensemble, &sampler, dt)?,
                None => 0.0,
            };

            let output_due = n % self.cfg.output_every == 0 || n == steps;
            let history_due = self.cfg.history_stride > 0
                && n % self.cfg.history_stride == 0
                && t_n <= self.cfg.history_t_max + 1e-9;

            if output_due || history_due {
                let energy = energy_lattices(&self.ensemble, &centered, &grid, self.workers)?;
                self.energy_min = self.energy_min.min(energy.energy.min());

                if output_due {
                    let (total, kinetic, field_part) = total_energy(&energy, &grid);
                    let e0 = *self.e0.get_or_insert(total);
                    let drift = if e0.abs() > 1e-30 {
                        (total - e0).abs() / e0.abs()
                    } else {
                        0.0
                    };
                    self.max_drift = self.max_drift.max(drift);

                    if has_matter {
                        let eq = support_equivalence_check(&self.ensemble, &centered, &grid)?;
                        self.support_equivalence_ok &= eq.upper_ok && eq.lower_ok;
                        let (ok, worst) = source_bound_check(
                            &source,
                            &centered,
                            &grid,
                            self.conformal_sup,
                            self.tracker.p_max,
                            SOURCE_BOUND_SLACK,
                        );
                        self.source_bound_ok &= ok;
                        self.source_bound_worst = self.source_bound_worst.max(worst);
                    }

                    self.records.push(DiagnosticsRecord::new(
                        t_n,
                        kinetic,
                        field_part,
                        self.tracker.p_max,
                        self.tracker.ptilde_max,
                        centered.phi.min(),
                        centered.phi.max(),
                        char_residual,
                        drift,
                    ));

                    if let Some(dir) = &self.snapshot_dir {
                        if self.cfg.snapshot_every > 0 && n % self.cfg.snapshot_every == 0 {
                            write_snapshot(&dir.join(format!("phi_{n:06}.snap")), &centered.phi, &grid, t_n)?;
                        }
                    }
                }

                if history_due {
                    let slice_index = n / self.cfg.history_stride;
                    if let Some(history) = &mut self.history {
                        history.push_slice(HistorySlice {
                            time: t_n,
                            field: centered.without_prev(),
                            mu: source.mu.clone(),
                            energy: energy.energy.clone(),
                            pflux: energy.pflux.clone(),
                        })?;
                    }
                    if has_matter && !self.probes.is_empty() {
                        let weights = self.particle_weights(&centered)?;
                        let buckets = ParticleBuckets::build(&self.ensemble, &weights, &grid);
                        for probe in &mut self.probes {
                            probe.feed_slice(slice_index, &buckets, &grid);
                        }
                    }
                }
            }

            // push particles over [t_n, t_n + dt] with the centered field
            if n < steps {
                if has_matter {
                    self.ensemble = crate::pusher::push_step(&self.ensemble, &sampler, dt, self.workers)?;
                    self.ensemble.time = (n + 1) as f64 * dt;
                }
                self.field = next;
                self.field.time = (n + 1) as f64 * dt;
            }
        }
        self.finished = true;

        let mut representations = Vec::new();
        if let Some(history) = &self.history {
            for probe in &self.probes {
                representations.push(dtphi_representation(probe, history, &self.cfg.data, &grid)?);
            }
        }
        let last = self.records.last();
        Ok(SimOutputs {
            records: self.records.clone(),
            history: self.history.take(),
            representations,
            mu_min: if self.mu_min.is_finite() { self.mu_min } else { 0.0 },
            energy_min: if self.energy_min.is_finite() { self.energy_min } else { 0.0 },
            psi_check: self.hom_field.is_some().then(|| PsiCheck {
                max_excess: self.psi_max_excess,
                worst_margin: self.psi_worst_margin,
                ok: self.psi_worst_margin <= 0.0,
            }),
            support_equivalence_ok: self.support_equivalence_ok,
            source_bound_ok: self.source_bound_ok,
            source_bound_worst: self.source_bound_worst,
            max_energy_drift: self.max_drift,
            final_p_max: last.map_or(0.0, |r| r.p_max),
            final_ptilde_max: last.map_or(0.0, |r| r.ptilde_max),
            steps,
        })
    }
}

/// Derive a configuration at a different grid resolution, rescaling `dt`
/// by the same CFL rule. Used by refinement ladders.
pub fn scaled_config(base: &RunConfig, cells_per_axis: usize) -> Result<RunConfig> {
    let grid = GridSpec::new(base.grid.center, base.grid.half_width, cells_per_axis)?;
    Ok(RunConfig {
        grid,
        dt: base.cfl_safety * grid.dx / 3.0_f64.sqrt(),
        ..base.clone()
    })
}

/// One level of the traveling-wave refinement ladder.
#[derive(Debug, Clone, Copy)]
pub struct WaveLadderLevel {
    pub cells: usize,
    pub dx: f64,
    pub error: f64,
}

/// Planar-pulse solver test: data `phi0 = g(x1)`, `phi1 = -g'(x1)`
/// propagate as the right-moving wave `g(x1 - t)`. Returns the max error
/// at the final time over the causally clean interior at each level.
pub fn traveling_wave_ladder(levels: &[usize], t_end: f64) -> Result<Vec<WaveLadderLevel>> {
    let half_width = 2.0;
    let radius: f64 = 0.5;
    let profile = move |xi: f64| crate::initial::bump_profile(xi * xi / (radius * radius), 4);
    let profile_d1 = move |xi: f64| {
        if xi * xi < radius * radius {
            -4.0 * (1.0 - xi * xi / (radius * radius)).powi(3) * 2.0 * xi / (radius * radius)
        } else {
            0.0
        }
    };
    let mut out = Vec::new();
    for &cells in levels {
        let grid = GridSpec::new(Vec3::zero(), half_width, cells)?;
        let dt = 0.4 * grid.dx / 3.0_f64.sqrt();
        let steps = (t_end / dt).round().max(1.0) as usize;
        let t_final = steps as f64 * dt;
        let mut state = ScalarFieldState::new(
            Lattice::from_fn(&grid, |x| profile(x.x)),
            Lattice::from_fn(&grid, |x| -profile_d1(x.x)),
        );
        let source = SourceLattice::zeros(&grid);
        for _ in 0..steps {
            state = step_wave(&state, &source, dt, &grid)?;
        }
        let clean = half_width - t_final - 2.0 * grid.dx;
        let n = grid.cells_per_axis;
        let mut worst = 0.0f64;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let pos = grid.node_pos(i, j, k);
                    if pos.x.abs().max(pos.y.abs()).max(pos.z.abs()) > clean {
                        continue;
                    }
                    worst = worst.max((state.phi.get(i, j, k) - profile(pos.x - t_final)).abs());
                }
            }
        }
        out.push(WaveLadderLevel {
            cells,
            dx: grid.dx,
            error: worst,
        });
    }
    Ok(out)
}

/// Zero-data ladder: the field must stay exactly zero at every level.
pub fn vacuum_ladder(levels: &[usize], t_end: f64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for &cells in levels {
        let grid = GridSpec::new(Vec3::zero(), 2.0, cells)?;
        let dt = 0.4 * grid.dx / 3.0_f64.sqrt();
        let steps = (t_end / dt).round().max(1.0) as usize;
        let mut state = ScalarFieldState::new(Lattice::zeros(&grid), Lattice::zeros(&grid));
        let source = SourceLattice::zeros(&grid);
        for _ in 0..steps {
            state = step_wave(&state, &source, dt, &grid)?;
        }
        out.push(state.phi.max_abs());
    }
    Ok(out)
}

/// Least-squares slope of `log2(error)` against `log2(dx)` — the
/// observed convergence order of a refinement ladder.
pub fn observed_order(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(dx, err) in pairs {
        let x = dx.log2();
        let y = err.max(1e-300).log2();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::DataParams;

    fn small_config() -> RunConfig {
        let grid = GridSpec::new(Vec3::zero(), 2.0, 16).unwrap();
        RunConfig {
            grid,
            dt: 0.4 * grid.dx / 3.0_f64.sqrt(),
            t_end: 0.3,
            cfl_safety: 0.4,
            data: DataParams {
                a_f: 1.0,
                r_x: 0.8,
                r_p: 0.8,
                a_phi: 0.1,
                r_phi: 0.8,
                a_pi: 0.1,
                r_pi: 0.8,
                ..DataParams::default()
            },
            nx_per_axis: 6,
            np_per_axis: 6,
            history_stride: 1,
            history_t_max: 0.3,
            output_every: 2,
            snapshot_every: 0,
            rng_seed: 0,
        }
    }

    #[test]
    fn vacuum_run_produces_zero_records() {
        let mut cfg = small_config();
        cfg.data = DataParams::default();
        cfg.history_stride = 0;
        let mut sim = Simulation::new(cfg, 1).unwrap();
        let out = sim.run().unwrap();
        assert!(!out.records.is_empty());
        for r in &out.records {
            assert_eq!(r.total_energy, 0.0);
            assert_eq!(r.p_max, 0.0);
            assert_eq!(r.phi_max, 0.0);
        }
        assert_eq!(out.mu_min, 0.0);
        assert_eq!(out.energy_min, 0.0);
    }

    #[test]
    fn small_coupled_run_satisfies_monitors() {
        let mut sim = Simulation::new(small_config(), 2).unwrap();
        let out = sim.run().unwrap();
        assert!(out.mu_min >= 0.0);
        assert!(out.energy_min >= 0.0);
        assert!(out.support_equivalence_ok);
        assert!(out.source_bound_ok, "worst source ratio {}", out.source_bound_worst);
        let psi = out.psi_check.expect("matter run has a twin");
        assert!(psi.ok, "psi margin {}", psi.worst_margin);
        // running suprema never decrease
        let mut prev = (0.0, 0.0);
        for r in &out.records {
            assert!(r.p_max >= prev.0 && r.ptilde_max >= prev.1);
            prev = (r.p_max, r.ptilde_max);
        }
        assert!(out.history.is_some());
        assert!(out.final_p_max.is_finite() && out.final_p_max > 0.0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut sim = Simulation::new(small_config(), 1).unwrap();
            sim.run().unwrap()
        };
        let a = run();
        let b = run();
        let csv_a = crate::output::diagnostics_to_csv(&a.records);
        let csv_b = crate::output::diagnostics_to_csv(&b.records);
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn probe_requires_history() {
        let mut cfg = small_config();
        cfg.history_stride = 0;
        let mut sim = Simulation::new(cfg, 1).unwrap();
        assert!(sim.add_probe(0.2, Vec3::zero()).is_err());
    }

    #[test]
    fn vacuum_field_pulse_probe_has_zero_cone_terms() {
        let grid = GridSpec::new(Vec3::zero(), 2.0, 32).unwrap();
        let mut cfg = small_config();
        cfg.grid = grid;
        cfg.dt = 0.4 * grid.dx / 3.0_f64.sqrt();
        cfg.data.a_f = 0.0; // field data only
        cfg.data.a_phi = 0.0;
        cfg.data.a_pi = 1.0;
        cfg.t_end = 0.55;
        cfg.history_t_max = 0.55;
        let mut sim = Simulation::new(cfg, 1).unwrap();
        sim.add_probe(0.5, Vec3::zero()).unwrap();
        let out = sim.run().unwrap();
        let rep = &out.representations[0];
        for z in rep.z {
            assert!(z.abs() <= 1e-10, "cone terms must vanish without matter: {:?}", rep.z);
        }
        // reconstruction agrees with the solver up to discretization error
        let denom = rep.value_grid.abs().max(0.1);
        assert!(
            (rep.value_repr - rep.value_grid).abs() / denom < 0.05,
            "repr {} vs grid {}",
            rep.value_repr,
            rep.value_grid
        );
    }

    #[test]
    fn observed_order_recovers_slope() {
        let pairs = [(0.2, 0.04), (0.1, 0.01), (0.05, 0.0025)];
        let order = observed_order(&pairs);
        assert!((order - 2.0).abs() < 1e-12);
    }

    #[test]
    fn vacuum_ladder_is_exactly_zero() {
        for err in vacuum_ladder(&[8, 16], 0.2).unwrap() {
            assert_eq!(err, 0.0);
        }
    }
}
