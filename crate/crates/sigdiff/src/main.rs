//! Experiment CLI: configured runs, the measure suite, gradient checks, and
//! posterior comparison of finished runs.

use clap::{Args, Parser, Subcommand};
use sigdiff::harness::{self, ExperimentConfig, ExperimentKind, StatEntry};
use sigdiff::rng::RngKey;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sigdiff", version, about = "conditional diffusion through differentiable forward models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment kind override (e.g. linear-gaussian, measure-suite).
    #[arg(long)]
    kind: Option<String>,
    /// Training step budget override.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a configured experiment run.
    Run(RunFlags),
    /// Run the measure-theory property suite (no training).
    VerifyMeasures(RunFlags),
    /// Check reverse-mode gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute the posterior comparison of a finished run directory.
    Compare {
        /// Run directory containing report.json and the sample files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn effective_config(flags: &RunFlags, default_kind: Option<ExperimentKind>) -> Result<ExperimentConfig, harness::HarnessError> {
    let mut cfg = match &flags.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let kind = match (&flags.kind, default_kind) {
                (Some(k), _) => k.parse()?,
                (None, Some(k)) => k,
                (None, None) => {
                    return Err(harness::HarnessError::InvalidConfig(
                        "need --config or --kind".into(),
                    ))
                }
            };
            ExperimentConfig::default_for(kind)
        }
    };
    if let Some(kind) = &flags.kind {
        cfg.kind = kind.parse()?;
    }
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = flags.steps {
        cfg.train.steps = steps;
    }
    if let Some(out) = &flags.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn print_stats(stats: &[StatEntry]) {
    for s in stats {
        let verdict = match s.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "    ",
        };
        let stderr = s
            .stderr
            .map(|e| format!(" +- {e:.3e}"))
            .unwrap_or_default();
        let threshold = s
            .threshold
            .map(|t| format!(" (threshold {t})"))
            .unwrap_or_default();
        println!("{verdict} {:<42} {:.6}{}{}", s.name, s.value, stderr, threshold);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run(flags) => {
            let cfg = effective_config(&flags, None)?;
            let report = harness::run(&cfg)?;
            println!(
                "run {} (seed {}) finished in {:.1}s",
                cfg.kind, cfg.seed, report.wall_clock_seconds
            );
            print_stats(&report.statistics);
            if let Some(step) = report.failed_step {
                println!("FAILED: non-finite loss at step {step}");
            }
            Ok(report.passed)
        }
        Command::VerifyMeasures(flags) => {
            let mut cfg = effective_config(&flags, Some(ExperimentKind::MeasureSuite))?;
            cfg.kind = ExperimentKind::MeasureSuite;
            if cfg.out_dir.is_some() {
                let report = harness::run(&cfg)?;
                print_stats(&report.statistics);
                Ok(report.passed)
            } else {
                let stats = harness::measure_suite_stats(RngKey::new(cfg.seed))?;
                print_stats(&stats);
                Ok(stats.iter().all(|s| s.pass.unwrap_or(true)))
            }
        }
        Command::Gradcheck { seed } => {
            let key = RngKey::new(seed);
            let mut all_pass = true;
            println!("primitive operations (tolerance 1e-5, 10 points each):");
            for rep in sigdiff::gradcheck::check_primitive_ops(key) {
                all_pass &= rep.pass;
                println!("  {rep}");
            }
            println!("forward models (Jacobian vs finite differences):");
            for rep in sigdiff::gradcheck::check_forward_models(key.child(1), 10) {
                all_pass &= rep.pass;
                println!("  {rep}");
            }
            Ok(all_pass)
        }
        Command::Compare { out } => {
            let report = harness::validate_report_json(&out.join("report.json"))?;
            match report.config.kind {
                ExperimentKind::LinearGaussian => compare_linear_gaussian(&out)?,
                ExperimentKind::DiscreteProp1 => compare_discrete(&out)?,
                other => {
                    return Err(format!(
                        "compare supports linear-gaussian and discrete-prop1 runs, not {other}"
                    )
                    .into())
                }
            }
            Ok(true)
        }
    }
}

fn compare_linear_gaussian(out: &PathBuf) -> Result<(), Box<dyn std::error::Error>> {
    use sigdiff::measures::w1_empirical_vs_gaussian;
    for i in 0.. {
        let meta_path = out.join(format!("posterior_ctx{i}.json"));
        if !meta_path.exists() {
            if i == 0 {
                return Err("no posterior_ctx*.json files in run directory".into());
            }
            break;
        }
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
        let csv = meta["samples_csv"].as_str().ok_or("missing samples_csv")?;
        let means: Vec<f64> = serde_json::from_value(meta["oracle_mean"].clone())?;
        let stds: Vec<f64> = serde_json::from_value(meta["oracle_marginal_std"].clone())?;
        println!("context {i}:");
        for coord in 0..means.len() {
            let xs = sigdiff::io::read_csv_column(&out.join(csv), coord)?;
            let w1 = w1_empirical_vs_gaussian(&xs, means[coord], stds[coord])?;
            println!(
                "  coordinate {coord}: W1 = {w1:.6} vs N({:.4}, {:.4}^2), n = {}",
                means[coord],
                stds[coord],
                xs.len()
            );
        }
    }
    Ok(())
}

fn compare_discrete(out: &PathBuf) -> Result<(), Box<dyn std::error::Error>> {
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("discrete_eval.json"))?)?;
    let counts: Vec<usize> = serde_json::from_value(meta["counts"].clone())?;
    let truth: Vec<f64> = serde_json::from_value(meta["true_posterior"].clone())?;
    let (tv, stderr) =
        harness::compare_posteriors_discrete(&counts, &truth, 200, RngKey::new(0))?;
    println!("TV distance = {tv:.6} +- {stderr:.6} over {} samples", counts.iter().sum::<usize>());
    Ok(())
}
