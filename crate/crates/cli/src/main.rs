//! Command line front end: orchestrates simulation runs and stand-alone
//! checks from a configuration file, and serializes their outputs.

use clap::{Parser, Subcommand};
use nordvlas::driver::{observed_order, scaled_config, traveling_wave_ladder, vacuum_ladder, Simulation};
use nordvlas::identities::{angular_kernel, b_ab, b_ab_bound_check, run_identity_sweeps};
use nordvlas::math::Vec3;
use nordvlas::output::write_diagnostics_csv;
use nordvlas::{SimError, Vec3 as V3};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "nordvlas", about = "Relativistic kinetic matter coupled to scalar gravity: simulator and verification checks", version)]
struct Cli {
    /// Worker threads for particle loops (results are deterministic for a
    /// fixed count).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Output directory for CSV and snapshots.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a coupled simulation from a configuration file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Randomized residual sweep over all pointwise identities.
    CheckIdentities {
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Momentum-ball integrals against their growth envelopes.
    CheckBab,
    /// Reconstruct the field time derivative at probe points from the
    /// retarded representation and compare with the solver.
    VerifyRepresentation {
        #[arg(long)]
        config: PathBuf,
        /// Probe times, comma separated.
        #[arg(long)]
        times: String,
        /// Probe points, semicolon separated, each "x y z".
        #[arg(long, default_value = "0 0 0")]
        points: String,
    },
    /// Refinement ladders for the wave solver and energy conservation.
    Convergence {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code_for(err: &SimError) -> u8 {
    match err {
        SimError::FieldBlowUp | SimError::CausalDomainViolated => EXIT_RUNTIME,
        _ => EXIT_VALIDATION,
    }
}

fn out_dir(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_simulate(config: &PathBuf, threads: usize, out: &Option<PathBuf>) -> Result<u8, SimError> {
    let cfg = nordvlas::config::load_config(config)?;
    cfg.validate()?;
    let dir = out_dir(out);
    std::fs::create_dir_all(&dir)?;
    let mut sim = Simulation::new(cfg.clone(), threads)?;
    if cfg.snapshot_every > 0 {
        sim.set_snapshot_dir(dir.clone());
    }
    let csv_path = dir.join("diagnostics.csv");
    match sim.run() {
        Ok(outputs) => {
            write_diagnostics_csv(&csv_path, &outputs.records)?;
            println!("steps: {}", outputs.steps);
            println!("particles retained their count; records: {}", outputs.records.len());
            println!("max energy drift: {:.3e}", outputs.max_energy_drift);
            println!("P(t_end) = {:.6} (running sup of exp(phi) sqrt(1+|p|^2))", outputs.final_p_max);
            println!("Ptilde(t_end) = {:.6}", outputs.final_ptilde_max);
            println!("mu_min = {:.3e}, e_min = {:.3e}", outputs.mu_min, outputs.energy_min);
            if let Some(psi) = outputs.psi_check {
                println!(
                    "phi <= phi_hom check: max excess {:.3e}, margin {:.3e} ({})",
                    psi.max_excess,
                    psi.worst_margin,
                    if psi.ok { "ok" } else { "VIOLATED" }
                );
            }
            println!("wrote {}", csv_path.display());
            Ok(0)
        }
        Err(err) => {
            // flush whatever was recorded before the abort
            let _ = write_diagnostics_csv(&csv_path, sim.records());
            eprintln!("run aborted: {err}");
            Ok(exit_code_for(&err))
        }
    }
}

fn cmd_check_identities(trials: usize, seed: u64) -> Result<u8, SimError> {
    let results = run_identity_sweeps(trials, seed);
    let mut ok = true;
    println!("{:<28} {:>8} {:>14}", "identity", "trials", "max rel resid");
    for r in &results {
        println!("{:<28} {:>8} {:>14.3e}", r.name, r.trials, r.max_rel_residual);
        ok &= r.max_rel_residual <= 1e-11;
    }
    if ok {
        println!("all identities within 1e-11");
        Ok(0)
    } else {
        eprintln!("identity residuals exceed 1e-11");
        Ok(EXIT_CHECK)
    }
}

fn cmd_check_bab() -> Result<u8, SimError> {
    let ladder = [10.0, 100.0, 1000.0, 10_000.0];
    let pairs = [(1.0, 0.0), (1.0, 0.5), (0.5, 0.0), (2.0, 0.5), (2.0, 0.0)];
    let mut ok = true;
    println!("ratios of B_ab(R) to the regime envelope over R = 10..10^4:");
    for (a, b) in pairs {
        let ratios = b_ab_bound_check(a, b, &ladder)?;
        let first = ratios[0];
        let bounded = ratios.iter().all(|r| r.is_finite() && *r <= 2.0 * first);
        ok &= bounded;
        println!(
            "  (a={a}, b={b}): {:?} {}",
            ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            if bounded { "ok" } else { "UNBOUNDED" }
        );
    }
    let spot = b_ab(2.0, 0.0, 0.0, V3::new(0.0, 0.0, 1.0))?;
    let exact = 32.0 * std::f64::consts::PI / 3.0;
    let spot_ok = (spot - exact).abs() / exact <= 1e-8;
    ok &= spot_ok;
    println!("  ball volume spot check B_00(2) = {spot:.6} vs {exact:.6} ({})", if spot_ok { "ok" } else { "FAIL" });
    let k = angular_kernel(0.5)?;
    println!(
        "  angular kernel at v=0.5: closed {:.6}, quadrature {:.6}, bound ok: {}",
        k.closed_form, k.quadrature, k.log_bound_ok
    );
    ok &= k.log_bound_ok && k.residual.abs() <= 1e-10 * k.closed_form;
    Ok(if ok { 0 } else { EXIT_CHECK })
}

fn parse_times(text: &str) -> Result<Vec<f64>, SimError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| SimError::InvalidConfig(format!("cannot parse time `{s}`")))
        })
        .collect()
}

fn parse_points(text: &str) -> Result<Vec<Vec3>, SimError> {
    text.split(';')
        .map(|part| {
            let comps: Vec<&str> = part.split_whitespace().collect();
            if comps.len() != 3 {
                return Err(SimError::InvalidConfig(format!(
                    "point `{part}` must have three components"
                )));
            }
            let mut v = Vec3::zero();
            for (d, c) in comps.iter().enumerate() {
                v[d] = c
                    .parse()
                    .map_err(|_| SimError::InvalidConfig(format!("cannot parse coordinate `{c}`")))?;
            }
            Ok(v)
        })
        .collect()
}

fn cmd_verify_representation(
    config: &PathBuf,
    times: &str,
    points: &str,
    threads: usize,
) -> Result<u8, SimError> {
    let mut cfg = nordvlas::config::load_config(config)?;
    if cfg.history_stride == 0 {
        cfg.history_stride = 2;
    }
    let times = parse_times(times)?;
    let points = parse_points(points)?;
    let mut sim = Simulation::new(cfg, threads)?;
    for &t in &times {
        for &x in &points {
            sim.add_probe(t, x)?;
        }
    }
    let outputs = sim.run()?;
    println!(
        "{:>6} {:>22} {:>12} {:>12} {:>10}",
        "t", "x", "repr", "grid", "rel err"
    );
    let mut ok = true;
    for rep in &outputs.representations {
        let denom = rep.value_grid.abs().max(0.1);
        let rel = (rep.value_repr - rep.value_grid).abs() / denom;
        ok &= rel <= 0.10;
        println!(
            "{:>6.3} ({:>6.3},{:>6.3},{:>6.3}) {:>12.5e} {:>12.5e} {:>9.2}%",
            rep.t, rep.x.x, rep.x.y, rep.x.z, rep.value_repr, rep.value_grid, 100.0 * rel
        );
        println!(
            "        data term {:>12.5e}; cone terms {:?}",
            rep.data_term,
            rep.z.map(|z| (z * 1e6).round() / 1e6)
        );
    }
    Ok(if ok { 0 } else { EXIT_CHECK })
}

fn cmd_convergence(config: &PathBuf, threads: usize) -> Result<u8, SimError> {
    let cfg = nordvlas::config::load_config(config)?;
    let mut ok = true;

    let levels = [16, 32, 64, 128];
    let ladder = traveling_wave_ladder(&levels, 0.5)?;
    let pairs: Vec<(f64, f64)> = ladder.iter().map(|l| (l.dx, l.error)).collect();
    let order = observed_order(&pairs);
    println!("traveling wave ladder:");
    for l in &ladder {
        println!("  {:>4} cells: dx = {:.5}, max error = {:.4e}", l.cells, l.dx, l.error);
    }
    println!("  observed order {order:.3}");
    ok &= (1.9..=2.1).contains(&order);

    let zeros = vacuum_ladder(&[16, 32, 64], 0.5)?;
    println!("vacuum ladder max |phi|: {zeros:?}");
    ok &= zeros.iter().all(|&e| e == 0.0);

    println!("energy drift ladder:");
    let base_cells = cfg.grid.cells_per_axis;
    let mut drifts = Vec::new();
    for cells in [base_cells / 4, base_cells / 2, base_cells] {
        let level = scaled_config(&cfg, cells)?;
        let mut sim = Simulation::new(level, threads)?;
        let out = sim.run()?;
        println!("  {:>4} cells: max drift {:.4e}", cells, out.max_energy_drift);
        drifts.push(out.max_energy_drift);
    }
    ok &= drifts.windows(2).all(|w| w[1] < w[0]);

    Ok(if ok { 0 } else { EXIT_CHECK })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config } => cmd_simulate(config, cli.threads, &cli.out),
        Command::CheckIdentities { trials, seed } => cmd_check_identities(*trials, *seed),
        Command::CheckBab => cmd_check_bab(),
        Command::VerifyRepresentation {
            config,
            times,
            points,
        } => cmd_verify_representation(config, times, points, cli.threads),
        Command::Convergence { config } => cmd_convergence(config, cli.threads),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
