//! `polystab` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or argument error, 3 numeric
//! failure. Data goes to stdout, diagnostics to stderr.

mod config;
mod error;
mod run;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use polystab::diophantine::{dirichlet_approx, ApproxSummary};
use polystab::dynamics::{integrate, write_trajectory_csv, HamiltonianField, IntegrationConfig, PhaseState};
use polystab::experiments::{
    build_certificate, fit_exponent, read_sweep_csv, run_sweep, theorem_exponents, write_loglog_tsv,
    write_sweep_csv, FitQuantity, SweepConfig,
};
use polystab::normalform::local_normal_form;
use polystab::ResonanceModule;

use config::{
    parse, CertificateCommand, FitCommand, NormalFormCommand, ResolvedNormalForm, SimulateConfig,
};
use error::CliError;
use run::{read_manifest, Run};

#[derive(Debug, Parser)]
#[command(name = "polystab", version, about = "Stability experiments for near-integrable Hamiltonians")]
struct Cli {
    /// Seed overriding the one in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Parent directory of the run directories.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one trajectory and write its CSV.
    Simulate { config: PathBuf },
    /// Best periodic approximation of a frequency vector.
    Dirichlet {
        #[arg(required = true, num_args = 2.., allow_negative_numbers = true)]
        omega: Vec<f64>,
        #[arg(short = 'Q', long = "Q")]
        q: f64,
    },
    /// Local resonant normal form around a periodic action.
    Normalform { config: PathBuf },
    /// Stability-time sweep over an ε grid.
    Sweep { config: PathBuf },
    /// Log-log exponent fit of a sweep directory.
    Fit {
        sweep_dir: PathBuf,
        #[arg(long, value_enum, default_value = "exit-time")]
        quantity: QuantityArg,
    },
    /// Three-step stability certificate near a resonance.
    Certificate { config: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QuantityArg {
    ExitTime,
    MaxDrift,
}

impl From<QuantityArg> for FitQuantity {
    fn from(q: QuantityArg) -> Self {
        match q {
            QuantityArg::ExitTime => FitQuantity::ExitTime,
            QuantityArg::MaxDrift => FitQuantity::MaxDrift,
        }
    }
}

fn print_json(value: &serde_json::Value) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn simulate(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let mut cfg: SimulateConfig = parse(path)?;
    let seed = cli.seed.unwrap_or(0);
    cfg.system.resolve_seed(seed);
    let system = cfg.system.build()?;
    let field = HamiltonianField::new(&system.hamiltonian()?);
    let icfg = IntegrationConfig {
        horizon: cfg.horizon,
        h_step: cfg.h_step,
        drift_threshold: cfg.drift_threshold.unwrap_or(f64::INFINITY),
        sample_stride: cfg.sample_stride,
        domain: Some((system.h.center().to_vec(), system.radius)),
    };
    let start = PhaseState::new(cfg.initial.theta.clone(), cfg.initial.action.clone());
    let record = integrate(&field, &start, &icfg)?;
    let mut run = Run::create(&cli.out_dir, "simulate", &cfg, Some(seed))?;
    let csv_path = run.output("trajectory.csv");
    write_trajectory_csv(&record, BufWriter::new(File::create(&csv_path)?))?;
    let dir = run.finish()?;
    print_json(&json!({
        "run_dir": dir,
        "exit_kind": record.exit_kind,
        "exit_time": record.exit_time,
        "max_drift": record.max_drift,
        "energy_drift": record.energy_drift,
        "steps": record.steps,
    }))
}

fn dirichlet(omega: &[f64], q: f64) -> Result<(), CliError> {
    let approx = dirichlet_approx(omega, q)?;
    print_json(&serde_json::to_value(ApproxSummary::from(&approx))?)
}

fn normalform(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let mut cmd: NormalFormCommand = parse(path)?;
    let seed = cli.seed.unwrap_or(0);
    cmd.system.resolve_seed(seed);
    let system = cmd.system.build()?;
    let resolved = ResolvedNormalForm {
        config: cmd.normal_form.resolve(system.k_reg, cmd.mu),
        system: cmd.system,
        action_star: cmd.action_star,
        p: cmd.p,
        period: cmd.period,
        displacement_samples: cmd.displacement_samples,
        seed,
    };
    let nf = local_normal_form(&system, &resolved.action_star, &resolved.p, resolved.period, &resolved.config)?;
    let displacement = if resolved.displacement_samples > 0 {
        Some(nf.generator_displacement(resolved.config.rho, resolved.displacement_samples, seed)?)
    } else {
        None
    };
    let mut run = Run::create(&cli.out_dir, "normalform", &resolved, Some(seed))?;
    write_json(&run.output("normalform.json"), &nf)?;
    let dir = run.finish()?;
    print_json(&json!({
        "run_dir": dir,
        "ledger": nf.scaled.ledger,
        "bounds": nf.bounds,
        "generator_displacement": displacement,
    }))
}

fn sweep(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let mut cfg: SweepConfig = parse(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let records = run_sweep(&cfg, cli.threads)?;
    let mut run = Run::create(&cli.out_dir, "sweep", &cfg, Some(cfg.seed))?;
    let csv_path = run.output("sweep.csv");
    write_sweep_csv(&records, BufWriter::new(File::create(&csv_path)?))?;
    let dir = run.finish()?;
    info!("wrote {} records", records.len());
    let failures = records.iter().filter(|r| r.exit_kind == polystab::dynamics::ExitKind::Failure).count();
    print_json(&json!({ "run_dir": dir, "records": records.len(), "failures": failures }))
}

fn fit(cli: &Cli, sweep_dir: &Path, quantity: FitQuantity) -> Result<(), CliError> {
    let manifest = read_manifest(sweep_dir)?;
    if manifest.command != "sweep" {
        return Err(CliError::Config(format!("{} is not a sweep run", sweep_dir.display())));
    }
    let cfg: SweepConfig = serde_json::from_value(manifest.config.clone())?;
    let exps = theorem_exponents(cfg.k_reg, cfg.n as u32, None)?;
    let target = match quantity {
        FitQuantity::ExitTime => -exps.a_f64(),
        FitQuantity::MaxDrift => exps.b_f64(),
    };
    let records = read_sweep_csv(File::open(sweep_dir.join("sweep.csv"))?)?;
    let result = fit_exponent(&records, quantity, target)?;
    let cmd = FitCommand {
        sweep_config_hash: manifest.config_hash,
        quantity,
        target_exponent: target,
    };
    let mut run = Run::create(&cli.out_dir, "fit", &cmd, manifest.seed)?;
    write_json(&run.output("fit.json"), &result)?;
    write_loglog_tsv(&result.points, BufWriter::new(File::create(run.output("loglog.tsv"))?))?;
    run.finish()?;
    print_json(&serde_json::to_value(&result)?)
}

fn certificate(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let mut cmd: CertificateCommand = parse(path)?;
    let seed = cli.seed.unwrap_or(0);
    cmd.system.resolve_seed(seed);
    let system = cmd.system.build()?;
    let lambda = if cmd.lambda_basis.is_empty() {
        ResonanceModule::trivial(system.dims())
    } else {
        ResonanceModule::new(system.dims(), cmd.lambda_basis.clone())?
    };
    let cert = build_certificate(&system, &cmd.initial_action, &lambda, &cmd.constants, cmd.validate.as_ref())?;
    let mut run = Run::create(&cli.out_dir, "certificate", &cmd, Some(seed))?;
    write_json(&run.output("certificate.json"), &cert)?;
    let dir = run.finish()?;
    let p = &cert.parameters;
    print_json(&json!({
        "run_dir": dir,
        "branch": p.branch,
        "d": p.d,
        "Q": p.q_scale,
        "T": p.period,
        "mu": p.mu,
        "r": p.r,
        "tau": p.tau,
        "a_d": p.a_d.to_string(),
        "b_d": p.b_d.to_string(),
        "validation": cert.validation,
    }))
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { config } => simulate(cli, config),
        Command::Dirichlet { omega, q } => dirichlet(omega, *q),
        Command::Normalform { config } => normalform(cli, config),
        Command::Sweep { config } => sweep(cli, config),
        Command::Fit { sweep_dir, quantity } => fit(cli, sweep_dir, (*quantity).into()),
        Command::Certificate { config } => certificate(cli, config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polystab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
