use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use psgd_lab::harness::{run_experiment, write_report, ExperimentConfig, ExperimentKind};
use psgd_lab::LabError;

/// Monte Carlo experiments for perturbed SGD.
#[derive(Parser)]
#[command(name = "psgd-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Escape from local minima on the sine-perturbed quadratic.
    Escape(Flags),
    /// Mean trajectories of SGD shadow iterates against perturbed GD.
    Equivalence(Flags),
    /// Theory envelopes for one of the three convergence theorems.
    Convergence(Flags),
    /// Fitted assumption constants against the closed forms.
    Constants(Flags),
    /// Perturbed SGD against SGD with matched additive noise.
    #[command(name = "noise_sweep", alias = "noise-sweep")]
    NoiseSweep(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON file with a flat key namespace.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Output directory for manifest.json and CSV tables.
    #[arg(long, value_name = "DIR")]
    out: Option<String>,
    /// Smoothing width; replaces the whole list for kinds that sweep it.
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=3))]
    theorem: Option<u64>,
}

impl Flags {
    fn overrides(&self, kind: ExperimentKind) -> Vec<(String, Value)> {
        let sweeps = matches!(kind, ExperimentKind::Escape | ExperimentKind::NoiseSweep | ExperimentKind::Constants);
        let mut o = Vec::new();
        let mut put = |k: &str, v: Value| o.push((k.to_string(), v));
        if let Some(s) = self.seed {
            put("seed", json!(s));
        }
        if let Some(r) = self.replicas {
            put("replicas", json!(r));
        }
        if let Some(d) = &self.out {
            put("out", json!(d));
        }
        if let Some(z) = self.zeta {
            if sweeps {
                put("zetas", json!([z]));
            } else {
                put("zeta", json!(z));
            }
        }
        if let Some(g) = self.gamma {
            put("gamma", json!(g));
        }
        if let Some(s) = self.steps {
            put("steps", json!(s));
        }
        if let Some(e) = self.epsilon {
            put("epsilon", json!(e));
        }
        if let Some(t) = self.theorem {
            put("theorem", json!(t));
        }
        o
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, flags) = match &cli.command {
        Command::Escape(f) => (ExperimentKind::Escape, f),
        Command::Equivalence(f) => (ExperimentKind::Equivalence, f),
        Command::Convergence(f) => (ExperimentKind::Convergence, f),
        Command::Constants(f) => (ExperimentKind::Constants, f),
        Command::NoiseSweep(f) => (ExperimentKind::NoiseSweep, f),
    };
    let config = match ExperimentConfig::load(kind, flags.config.as_deref(), &flags.overrides(kind)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match run_experiment(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(match e {
                LabError::Config(_) | LabError::InvalidArgument { .. } => 2,
                _ => 1,
            });
        }
    };
    let out = PathBuf::from(config.values()["out"].as_str().unwrap_or("results"));
    match write_report(&report, &out) {
        Ok(files) => eprintln!("wrote {} file(s) to {}", files.len(), out.display()),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    for v in report.verdicts() {
        println!("{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
