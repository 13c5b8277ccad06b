//! Command-line front end: synthetic data generation, experiment runs,
//! standalone baselines, and the built-in verification suite.

use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use marketcast::data::{classify_streams, stream_maes, synth_generate};
use marketcast::harness::config::ExperimentSpec;
use marketcast::harness::{
    build_dataset, check, presets, run_experiment, run_prequential, run_seed_range,
    write_multi_seed_reports, write_report_files,
};
use marketcast::harness::metrics::compute_mae;
use marketcast::harness::report::cross_seed_summary;
use marketcast::learner::LearnerSpec;

#[derive(Parser)]
#[command(
    name = "marketcast",
    version,
    about = "Prediction-market ensembles for streaming regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Loads an experiment either from a TOML file or from a shipped preset.
#[derive(Args)]
struct SpecSource {
    /// Path to an experiment spec in TOML.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    spec: Option<PathBuf>,
    /// Name of a shipped experiment preset (see `--preset help`).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

impl SpecSource {
    fn load(&self) -> Result<ExperimentSpec> {
        match (&self.spec, &self.preset) {
            (Some(path), None) => ExperimentSpec::from_path(path)
                .with_context(|| format!("loading {}", path.display())),
            (None, Some(name)) => presets::experiment_preset(name).ok_or_else(|| {
                anyhow!(
                    "unknown preset {name:?}; shipped presets: {}",
                    presets::PRESET_NAMES.join(", ")
                )
            }),
            _ => bail!("pass exactly one of --spec or --preset"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV and print its stream
    /// classification.
    Synth {
        /// Stream preset to generate from.
        #[arg(long, default_value = "type1")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of records to generate.
        #[arg(long, default_value_t = 500)]
        records: usize,
        /// Output CSV path.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Run an experiment and write its reports.
    Run {
        #[command(flatten)]
        source: SpecSource,
        /// Seed for a single run (defaults to the spec's seed).
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Inclusive seed range for replicated runs, e.g. 1..10.
        #[arg(long, value_name = "A..B")]
        seeds: Option<String>,
        /// Override every agent's trading strategy.
        #[arg(long, value_name = "NAME", value_parser = ["constant", "q_learning"])]
        strategy: Option<String>,
        /// Report directory (defaults to reports/<experiment name>).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run standalone prequential baselines over a spec's dataset,
    /// without any market.
    Bench {
        #[command(flatten)]
        source: SpecSource,
        /// Seed override (defaults to the spec's seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the built-in verification suite (slow; build with --release).
    Check,
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Synth {
            preset,
            seed,
            records,
            out,
        } => synth(&preset, seed, records, &out),
        Command::Run {
            source,
            seed,
            seeds,
            strategy,
            out,
        } => run(&source, seed, seeds.as_deref(), strategy.as_deref(), out),
        Command::Bench { source, seed } => bench(&source, seed),
        Command::Check => run_checks(),
    }
}

fn synth(preset: &str, seed: u64, records: usize, out: &PathBuf) -> Result<()> {
    let streams = presets::stream_preset(preset).ok_or_else(|| {
        anyhow!(
            "unknown preset {preset:?}; shipped presets: {}",
            presets::PRESET_NAMES.join(", ")
        )
    })?;
    let data = synth_generate(records, &streams, seed);

    // One column per stream plus the target; loads back via `kind = "csv"`
    // with `target_column = "target"`.
    let mut csv = String::new();
    for spec in &streams {
        csv.push_str(&spec.stream_id);
        csv.push(',');
    }
    csv.push_str("target\n");
    for record in &data {
        for value in record.features.iter() {
            if let Some(v) = value {
                csv.push_str(&format!("{v}"));
            }
            csv.push(',');
        }
        csv.push_str(&format!("{}\n", record.true_value));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "wrote {} records x {} streams to {}",
        data.len(),
        streams.len(),
        out.display()
    );

    let reference = LearnerSpec::SimpleLinear;
    let maes = stream_maes(&data, streams.len(), &reference);
    let tiers = classify_streams(&data, &streams, &reference)?;
    println!("stream classification (reference learner: {}):", reference.name());
    println!("{:<10} {:>12} {:>10} {:>12}", "stream", "mae", "assigned", "configured");
    for (spec, mae) in streams.iter().zip(&maes) {
        println!(
            "{:<10} {:>12.4} {:>10} {:>12}",
            spec.stream_id,
            mae,
            tiers[&spec.stream_id].as_str(),
            spec.quality_tier.as_str()
        );
    }
    Ok(())
}

/// Parses an inclusive seed range of the form `A..B`.
fn parse_seed_range(text: &str) -> Result<Vec<u64>> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| anyhow!("seed range must look like A..B, got {text:?}"))?;
    let a: u64 = a.trim().parse().context("range start")?;
    let b: u64 = b.trim().parse().context("range end")?;
    if a > b {
        bail!("seed range start {a} exceeds end {b}");
    }
    Ok((a..=b).collect())
}

fn run(
    source: &SpecSource,
    seed: Option<u64>,
    seeds: Option<&str>,
    strategy: Option<&str>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut spec = source.load()?;
    if let Some(strategy) = strategy {
        if let Some(roster) = spec.roster.as_mut() {
            roster.strategy = strategy.to_string();
        }
        for agent in &mut spec.agents {
            agent.strategy = strategy.to_string();
        }
        spec.name = format!("{}_{strategy}", spec.name);
    }
    spec.validate()?;
    let out = out.unwrap_or_else(|| PathBuf::from("reports").join(&spec.name));

    match seeds {
        Some(range) => {
            let seeds = parse_seed_range(range)?;
            let reports = run_seed_range(&spec, &seeds)?;
            write_multi_seed_reports(&reports, &out)?;
            print!("{}", cross_seed_summary(&reports));
            println!("wrote {} seed reports under {}", reports.len(), out.display());
        }
        None => {
            let seed = seed.unwrap_or(spec.seed);
            let report = run_experiment(&spec, seed)?;
            write_report_files(&report, &out)?;
            print!("{}", report.summary_string());
            println!("wrote records.csv and summary.txt under {}", out.display());
        }
    }
    Ok(())
}

fn bench(source: &SpecSource, seed: Option<u64>) -> Result<()> {
    let spec = source.load()?;
    spec.validate()?;
    let seed = seed.unwrap_or(spec.seed);
    let dataset = build_dataset(&spec, seed)?;
    let truths: Vec<f64> = dataset.records.iter().map(|r| r.true_value).collect();

    // Fall back to every shipped learner when the spec names no baselines.
    let baselines: Vec<(String, LearnerSpec)> = if spec.baselines.is_empty() {
        LearnerSpec::all_names()
            .iter()
            .map(|n| (n.to_string(), LearnerSpec::by_name(n).expect("shipped name")))
            .collect()
    } else {
        spec.baselines
            .iter()
            .map(|b| Ok((b.label(), b.to_learner_spec().map_err(|e| anyhow!(e))?)))
            .collect::<Result<_>>()?
    };

    println!(
        "prequential baselines over {} records, {} streams (seed {seed}):",
        dataset.records.len(),
        dataset.stream_ids.len()
    );
    println!("{:<16} {:>12} {:>12}", "baseline", "mae", "se");
    for (label, learner) in baselines {
        let predictions = run_prequential(&dataset.records, &learner, dataset.stream_ids.len());
        let (mae, se) = compute_mae(&predictions, &truths)?;
        println!("{label:<16} {mae:>12.4} {se:>12.4}");
    }
    Ok(())
}

fn run_checks() -> Result<()> {
    let outcomes = check::run_all()?;
    let mut failed = 0usize;
    for outcome in &outcomes {
        let status = if outcome.passed { "PASS" } else { "FAIL" };
        println!("[{status}] {}. {}: {}", outcome.id, outcome.name, outcome.detail);
        if !outcome.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", outcomes.len());
    }
    println!("all {} checks passed", outcomes.len());
    Ok(())
}
