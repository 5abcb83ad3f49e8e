//! `phaseslip` — command-line driver.
//!
//! Every subcommand accepts `--config FILE`; keys in the file override the
//! flags. The exit code is 0 iff every criterion of the run passed, 1 if one
//! failed and 2 on errors.

use clap::{Args, Parser, Subcommand};
use phaseslip::dynamics::SimConfig;
use phaseslip::harness::{self, ExperimentConfig, ExperimentId};
use phaseslip::ldp::find_instanton;
use phaseslip::model::{self, OrbitGeometry, SystemConfig};
use phaseslip::par::Parallelism;
use phaseslip::poincare::{estimate_kernel, principal_eigen, simulate_exits};
use phaseslip::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "phaseslip", version, about = "Noise-induced phase slips: simulation and limit-law checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural assumptions of a system and tabulate h_per and θ.
    Validate(ToolArgs),
    /// Compute the optimal path between the orbits and its action.
    Instanton(ToolArgs),
    /// Estimate the random Poincaré kernel and its principal eigenpair.
    Kernel(ToolArgs),
    /// Simulate crossings of the unstable orbit from the stable one.
    Simulate(ToolArgs),
    /// Run one experiment end to end.
    Exp(ExpArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Noise level (a comma-separated ladder for `exp`).
    #[arg(long)]
    sigma: Option<String>,
    /// Replicates (paths per cell for `kernel`).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file whose keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads: 0 = all cores, 1 = sequential.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Args)]
struct ToolArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// Periods before a simulated path is censored.
    #[arg(long)]
    periods: Option<f64>,
}

#[derive(Args)]
struct ExpArgs {
    /// Experiment id, e.g. linear_exit_up.
    id: String,
    #[command(flatten)]
    common: Common,
}

/// Settings of the non-experiment subcommands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToolConfig {
    system: SystemConfig,
    sigma: f64,
    n: usize,
    seed: u64,
    threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    cells: usize,
    delta: f64,
    periods: f64,
    grid: usize,
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            system: SystemConfig::default(),
            sigma: 0.4,
            n: 1000,
            seed: 1,
            threads: 0,
            dt: None,
            cells: phaseslip::poincare::DEFAULT_CELLS,
            delta: 0.05,
            periods: 1e4,
            grid: 64,
        }
    }
}

fn parse_sigmas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::InvalidParameter(format!("bad σ value '{t}'"))))
        .collect()
}

/// Overlay a TOML file on a serializable config.
fn overlay<T: Serialize + for<'de> Deserialize<'de>>(base: &T, path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let bad = |e: &dyn std::fmt::Display| Error::InvalidParameter(format!("{}: {e}", path.display()));
    let file: toml::Table = toml::from_str(&text).map_err(|e| bad(&e))?;
    let mut table = toml::Table::try_from(base).map_err(|e| bad(&e))?;
    for (k, v) in file {
        table.insert(k, v);
    }
    table.try_into().map_err(|e| bad(&e))
}

fn tool_config(args: &ToolArgs) -> Result<ToolConfig> {
    let mut c = ToolConfig::default();
    let c0 = &args.common;
    if let Some(s) = &c0.sigma {
        c.sigma = s.trim().parse().map_err(|_| Error::InvalidParameter(format!("bad σ '{s}'")))?;
    }
    if let SystemConfig::Melnikov { eps, omega } = &mut c.system {
        *eps = args.eps.unwrap_or(*eps);
        *omega = args.omega.unwrap_or(*omega);
    }
    c.n = c0.n.unwrap_or(c.n);
    c.seed = c0.seed.unwrap_or(c.seed);
    c.threads = c0.threads.unwrap_or(c.threads);
    c.dt = c0.dt.or(c.dt);
    c.cells = args.cells.unwrap_or(c.cells);
    c.delta = args.delta.unwrap_or(c.delta);
    c.periods = args.periods.unwrap_or(c.periods);
    if let Some(p) = &c0.config {
        c = overlay(&c, p)?;
    }
    Ok(c)
}

fn out_dir(common: &Common, default: &str) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn sim_config(c: &ToolConfig, geometry: &OrbitGeometry) -> Result<SimConfig> {
    let mut sim = SimConfig::new(c.sigma, &geometry.constants).with_seed(c.seed);
    if let Some(dt) = c.dt {
        sim = sim.with_dt(dt);
    }
    sim.validate(&geometry.constants)?;
    Ok(sim)
}

fn run_validate(args: &ToolArgs) -> Result<bool> {
    let c = tool_config(args)?;
    let spec = c.system.build()?;
    let report = model::validate(&spec, c.grid);
    let dir = out_dir(&args.common, "results/validate")?;
    if report.pass {
        let geometry = OrbitGeometry::new(&spec)?;
        geometry.write_csv(std::fs::File::create(dir.join("geometry.csv"))?)?;
        println!("lambda_plus = {:.10}, T = {:.10}", geometry.constants.lambda_plus, geometry.constants.t_plus);
    }
    write_json(&dir.join("validate.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report.pass)
}

fn run_instanton(args: &ToolArgs) -> Result<bool> {
    let c = tool_config(args)?;
    let spec = c.system.build()?;
    let geometry = OrbitGeometry::new(&spec)?;
    let path = find_instanton(&spec, &geometry)?;
    let dir = out_dir(&args.common, "results/instanton")?;
    path.write_csv(std::fs::File::create(dir.join("instanton.csv"))?)?;
    let energy = path.max_abs_hamiltonian(&spec);
    let mut pass = energy < 1e-5;
    let mut summary = serde_json::json!({
        "system": c.system,
        "action": path.action,
        "phi_init": path.phi_init,
        "degenerate": path.degenerate,
        "max_abs_hamiltonian": energy,
        "delta": c.delta,
        "s_star": path.s_star(c.delta).ok(),
    });
    // exact value for the flat Melnikov system
    if let SystemConfig::Melnikov { eps, .. } = c.system {
        if eps == 0.0 {
            let err = (path.action - 2.0 / std::f64::consts::PI).abs();
            summary["action_error_vs_2_over_pi"] = err.into();
            pass &= err < 1e-5;
        }
    }
    write_json(&dir.join("instanton.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(pass)
}

fn run_kernel(args: &ToolArgs) -> Result<bool> {
    let c = tool_config(args)?;
    let spec = c.system.build()?;
    let geometry = OrbitGeometry::new(&spec)?;
    let sim = sim_config(&c, &geometry)?;
    let mode = Parallelism::from_threads(c.threads);
    let kernel = estimate_kernel(&spec, &sim, c.cells, c.n, c.seed, mode)?;
    let spectral = principal_eigen(&kernel.matrix)?;
    let ci = kernel.lambda0_ci(harness::DEFAULT_RESAMPLES, c.seed ^ 0x5eed)?;
    let dir = out_dir(&args.common, "results/kernel")?;
    kernel.write_csv(std::fs::File::create(dir.join("kernel.csv"))?)?;
    let mut w = csv::Writer::from_path(dir.join("qsd.csv")).map_err(Error::from)?;
    w.write_record(["r", "pi0", "h0"]).map_err(Error::from)?;
    for (i, m) in kernel.midpoints().iter().enumerate() {
        w.write_record(&[m.to_string(), spectral.pi0[i].to_string(), spectral.h0[i].to_string()]).map_err(Error::from)?;
    }
    w.flush()?;
    let summary = serde_json::json!({
        "master_seed": c.seed,
        "sigma": c.sigma,
        "dt": sim.dt,
        "cells": c.cells,
        "paths_per_cell": c.n,
        "lambda0": spectral.lambda0,
        "lambda0_ci": [ci.lo, ci.hi],
        "residual": spectral.residual,
        "iterations": spectral.iterations,
        "gap_warning": spectral.gap_warning,
        "max_kill": kernel.max_kill(),
    });
    write_json(&dir.join("spectral.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(!spectral.gap_warning)
}

fn run_simulate(args: &ToolArgs) -> Result<bool> {
    let c = tool_config(args)?;
    let spec = c.system.build()?;
    let geometry = OrbitGeometry::new(&spec)?;
    let sim = sim_config(&c, &geometry)?;
    let recs = simulate_exits(&spec, &sim, c.n, c.periods, 5.0, c.seed, Parallelism::from_threads(c.threads))?;
    let dir = out_dir(&args.common, "results/simulate")?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("exits.csv"))?);
    use std::io::Write;
    writeln!(w, "# master_seed={}", c.seed)?;
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["index", "phi_exit", "side", "r_probe"]).map_err(Error::from)?;
    for (i, r) in recs.iter().enumerate() {
        w.write_record(&[i.to_string(), r.phi_exit.to_string(), r.side.to_string(), r.r_probe.to_string()]).map_err(Error::from)?;
    }
    w.flush()?;
    let exits: Vec<f64> = recs.iter().filter(|r| r.phi_exit.is_finite()).map(|r| r.phi_exit).collect();
    let summary = serde_json::json!({
        "master_seed": c.seed,
        "sigma": c.sigma,
        "dt": sim.dt,
        "paths": c.n,
        "exits": exits.len(),
        "censored": c.n - exits.len(),
        "mean_exit_phase": phaseslip::stats::mean(&exits),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(true)
}

fn run_exp(args: &ExpArgs) -> Result<bool> {
    let id: ExperimentId = args.id.parse()?;
    let mut cfg = ExperimentConfig::defaults(id);
    let c = &args.common;
    if let Some(s) = &c.sigma {
        cfg.sigmas = parse_sigmas(s)?;
    }
    cfg.n = c.n.unwrap_or(cfg.n);
    cfg.seed = c.seed.unwrap_or(cfg.seed);
    cfg.threads = c.threads.unwrap_or(cfg.threads);
    cfg.dt = c.dt.or(cfg.dt);
    if let Some(p) = &c.config {
        cfg.apply_toml(&std::fs::read_to_string(p)?)?;
    }
    cfg.validate()?;
    let run = harness::run_experiment(&cfg)?;
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from(format!("results/{id}-{}", cfg.seed)));
    harness::persist(&run, &dir)?;
    for line in run.report.summary_lines() {
        println!("{line}");
    }
    for note in &run.report.notes {
        println!("note: {note}");
    }
    println!("{} in {:.1}s → {}", if run.report.pass { "PASS" } else { "FAIL" }, run.report.runtime_secs, dir.display());
    Ok(run.report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(a) => run_validate(a),
        Command::Instanton(a) => run_instanton(a),
        Command::Kernel(a) => run_kernel(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Exp(a) => run_exp(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
