use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ikfom_sim::config::{ConfigError, FilterKind, Normalization, Scenario, ScenarioConfig};
use ikfom_sim::montecarlo::{self, Comparison};
use ikfom_sim::output::{self, RunSummary};
use ikfom_sim::trajectory::nominal_gravity;
use ikfom_sim::trial::run_trial;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "ikfom-sim", version, about = "Synthetic lidar-inertial runs for the manifold Kalman filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and write a per-step CSV plus a summary JSON.
    Simulate(Flags),
    /// Run seeded trials and write aggregate consistency statistics.
    Montecarlo(Flags),
    /// Run the manifold filter and both quaternion variants on the same trials.
    Compare(Flags),
}

/// Flags override values from `--config`, which override the defaults.
#[derive(Args)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    nmax: Option<usize>,
    #[arg(long)]
    filter: Option<FilterKind>,
    #[arg(long)]
    normalization: Option<Normalization>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

impl Flags {
    fn resolve(&self) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::from_file(path)?,
            None => ScenarioConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),+) => { $(if let Some(v) = self.$field { cfg.$field = v; })+ };
        }
        apply!(scenario, seed, duration, dt, trials, nmax, filter, normalization);
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Config(String),
    Numerical(String),
}

fn write(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))
}

fn prepare(flags: &Flags) -> Result<ScenarioConfig, Failure> {
    let cfg = flags.resolve().map_err(|e| Failure::Config(e.to_string()))?;
    fs::create_dir_all(&flags.out).map_err(|e| Failure::Config(format!("cannot create {}: {e}", flags.out.display())))?;
    Ok(cfg)
}

fn simulate(flags: &Flags) -> Result<(), Failure> {
    let cfg = prepare(flags)?;
    let (_, record) = run_trial(&cfg, cfg.trial_seed(0), true).map_err(|e| Failure::Numerical(format!("truth generation: {e}")))?;
    let mut csv = Vec::new();
    output::write_csv(&mut csv, &record, &nominal_gravity(cfg.gravity)).expect("writing to memory");
    write(&flags.out.join("trial.csv"), &csv)?;
    write(&flags.out.join("summary.json"), output::to_json(&RunSummary::from(&record)).as_bytes())?;
    let s = &record.summary;
    println!(
        "{} {} seed {}: drift {:.4} m, mean NEES {:.2}, containment {:.4}",
        s.filter, cfg.scenario, s.seed, s.final_drift_m, s.mean_nees, s.containment_rate
    );
    match &s.failure {
        Some(f) => Err(Failure::Numerical(f.clone())),
        None => Ok(()),
    }
}

fn run_montecarlo(flags: &Flags) -> Result<(), Failure> {
    let cfg = prepare(flags)?;
    let summary = montecarlo::run_monte_carlo(&cfg);
    write(&flags.out.join("summary.json"), output::to_json(&summary).as_bytes())?;
    println!(
        "{} trials of {}: mean NEES {:.3} (reference {}), containment {:.4}, gravity containment {:.4}, mean drift {:.4} m",
        summary.trials,
        cfg.scenario,
        summary.mean_nees,
        summary.nees_reference,
        summary.containment_rate,
        summary.gravity_containment,
        summary.final_drift_m
    );
    if summary.failed_trials > 0 {
        return Err(Failure::Numerical(format!("{} of {} trials failed", summary.failed_trials, summary.trials)));
    }
    Ok(())
}

fn print_table(c: &Comparison) {
    println!("{:>20} {:>12} {:>12} {:>12}", "seed", "ikfom_m", "rescale_m", "pseudo_m");
    for p in &c.pairs {
        println!("{:>20} {:>12.4} {:>12.4} {:>12.4}", p.seed, p.ikfom_drift_m, p.rescale_drift_m, p.pseudo_measurement_drift_m);
    }
    for v in &c.variants {
        println!(
            "{}: ikfom not worse in {:.0}% of trials, median drift ratio {:.3}",
            v.variant,
            100.0 * v.ikfom_not_worse_rate,
            v.median_drift_ratio
        );
    }
}

fn compare(flags: &Flags) -> Result<(), Failure> {
    let cfg = prepare(flags)?;
    let comparison = montecarlo::compare(&cfg);
    write(&flags.out.join("compare.json"), output::to_json(&comparison).as_bytes())?;
    print_table(&comparison);
    let failed = comparison.pairs.iter().filter(|p| p.ikfom_failure.is_some()).count();
    if failed > 0 {
        return Err(Failure::Numerical(format!("manifold filter failed in {failed} trials")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(f) => simulate(f),
        Command::Montecarlo(f) => run_montecarlo(f),
        Command::Compare(f) => compare(f),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
