//! The experiment harness: builds agents from configuration, loops one
//! market per record, runs standalone baselines prequentially, and emits
//! deterministic reports.
//!
//! Entry points: [`run_experiment`] for one seed, [`run_seed_range`] for
//! independent replicates (parallelized), [`write_report_files`] and
//! [`write_multi_seed_reports`] for the on-disk artifacts.

pub mod check;
pub mod config;
pub mod metrics;
pub mod presets;
pub mod report;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{MarketParticipant, QStrategy, Strategy, DEFAULT_BUCKET_EDGES};
use crate::data::{
    load_csv, synth_generate_with, DataError, QualityTier, Record, SynthTargetParams,
};
use crate::learner::LearnerSpec;
use crate::market::{run_market, AgentId, CapitalLedger, MarketAgent, MarketConfig, MarketError};

use config::{DatasetSpec, ExperimentSpec};
use metrics::{compute_mae, MetricError};
use report::{AgentCell, AgentSummary, BaselineRun, RecordRow, RunReport};

/// Error raised by the harness.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec:\n  - {}", violations.join("\n  - "))]
    InvalidSpec { violations: Vec<String> },
    #[error("failed to parse experiment spec: {0}")]
    SpecParse(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("agent {agent:?} references unknown stream {stream:?}")]
    UnknownStream { agent: String, stream: String },
    #[error("{path}: {source}")]
    ReportIo {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// The dataset, agents, and market configuration of one run, built from
/// a validated spec and a seed.
struct Materialized {
    config: MarketConfig,
    records: Vec<Record>,
    stream_ids: Vec<String>,
    participants: Vec<MarketParticipant>,
    /// Parallel to `participants`.
    metas: Vec<AgentMeta>,
    baselines: Vec<(String, String, LearnerSpec)>,
}

struct AgentMeta {
    name: String,
    learner: String,
    strategy: String,
    tier: Option<QualityTier>,
}

/// The dataset a spec describes, materialized at one seed.
pub struct BuiltDataset {
    pub records: Vec<Record>,
    pub stream_ids: Vec<String>,
    /// Configured tiers, one per stream; `None` for loaded files.
    pub stream_tiers: Option<Vec<QualityTier>>,
}

/// Builds the dataset of a spec: synthetic sections generate from the
/// seed, file sections load from disk (and ignore the seed).
pub fn build_dataset(spec: &ExperimentSpec, seed: u64) -> Result<BuiltDataset, HarnessError> {
    match &spec.dataset {
        DatasetSpec::Synthetic {
            n_records,
            preset,
            streams,
            target,
        } => {
            let specs = match preset {
                Some(name) => presets::stream_preset(name).expect("validated preset"),
                None => streams.iter().map(|s| s.to_stream_spec()).collect(),
            };
            let params = target
                .as_ref()
                .map(|t| t.to_params())
                .unwrap_or_else(SynthTargetParams::default);
            let records = synth_generate_with(*n_records, &specs, seed, &params);
            Ok(BuiltDataset {
                records,
                stream_ids: specs.iter().map(|s| s.stream_id.clone()).collect(),
                stream_tiers: Some(specs.iter().map(|s| s.quality_tier).collect()),
            })
        }
        DatasetSpec::Csv {
            path,
            target_column,
            feature_columns,
        } => {
            let dataset = load_csv(path, target_column, feature_columns.as_deref())?;
            Ok(BuiltDataset {
                records: dataset.records,
                stream_ids: dataset.stream_ids,
                stream_tiers: None,
            })
        }
    }
}

fn materialize(spec: &ExperimentSpec, seed: u64) -> Result<Materialized, HarnessError> {
    spec.validate()?;
    let config = spec.market.to_market_config();
    let BuiltDataset {
        records,
        stream_ids,
        stream_tiers,
    } = build_dataset(spec, seed)?;

    let (participants, metas) = build_agents(spec, &stream_ids, stream_tiers.as_deref())?;
    let baselines = spec
        .baselines
        .iter()
        .map(|b| {
            let learner = b.to_learner_spec().expect("validated baseline learner");
            (b.label(), b.learner.clone(), learner)
        })
        .collect();

    Ok(Materialized {
        config,
        records,
        stream_ids,
        participants,
        metas,
        baselines,
    })
}

fn build_agents(
    spec: &ExperimentSpec,
    stream_ids: &[String],
    stream_tiers: Option<&[QualityTier]>,
) -> Result<(Vec<MarketParticipant>, Vec<AgentMeta>), HarnessError> {
    struct Blueprint {
        name: String,
        learner_name: String,
        learner: LearnerSpec,
        indices: Vec<usize>,
        strategy: String,
        average_delta: bool,
        bucket_edges: Option<Vec<f64>>,
    }

    let mut blueprints: Vec<Blueprint> = Vec::new();
    if let Some(roster) = &spec.roster {
        match roster.mode.as_str() {
            "per_stream" => {
                let learner_name = roster.learner.clone().expect("validated roster");
                let learner = config::learner_spec_with_overrides(
                    &learner_name,
                    roster.eta,
                    roster.steps,
                    roster.k,
                    roster.window,
                )
                .expect("validated roster learner");
                for (i, id) in stream_ids.iter().enumerate() {
                    blueprints.push(Blueprint {
                        name: format!("{learner_name}_{id}"),
                        learner_name: learner_name.clone(),
                        learner: learner.clone(),
                        indices: vec![i],
                        strategy: roster.strategy.clone(),
                        average_delta: false,
                        bucket_edges: None,
                    });
                }
            }
            "per_learner" => {
                for name in roster.learners.as_ref().expect("validated roster") {
                    let learner = config::learner_spec_with_overrides(
                        name,
                        roster.eta,
                        roster.steps,
                        roster.k,
                        roster.window,
                    )
                    .expect("validated roster learner");
                    blueprints.push(Blueprint {
                        name: name.clone(),
                        learner_name: name.clone(),
                        learner,
                        indices: (0..stream_ids.len()).collect(),
                        strategy: roster.strategy.clone(),
                        average_delta: false,
                        bucket_edges: None,
                    });
                }
            }
            _ => unreachable!("validated roster mode"),
        }
    } else {
        for agent in &spec.agents {
            let learner = config::learner_spec_with_overrides(
                &agent.learner,
                agent.eta,
                agent.steps,
                agent.k,
                agent.window,
            )
            .expect("validated agent learner");
            let indices = match &agent.streams {
                None => (0..stream_ids.len()).collect(),
                Some(names) => names
                    .iter()
                    .map(|n| {
                        stream_ids.iter().position(|id| id == n).ok_or_else(|| {
                            HarnessError::UnknownStream {
                                agent: agent.name.clone(),
                                stream: n.clone(),
                            }
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            blueprints.push(Blueprint {
                name: agent.name.clone(),
                learner_name: agent.learner.clone(),
                learner,
                indices,
                strategy: agent.strategy.clone(),
                average_delta: agent.average_delta,
                bucket_edges: agent.bucket_edges.clone(),
            });
        }
    }

    let mut participants = Vec::with_capacity(blueprints.len());
    let mut metas = Vec::with_capacity(blueprints.len());
    for b in blueprints {
        let strategy = match b.strategy.as_str() {
            "constant" => Strategy::Constant,
            _ => Strategy::QLearning(QStrategy::new(
                b.bucket_edges
                    .clone()
                    .unwrap_or_else(|| DEFAULT_BUCKET_EDGES.to_vec()),
                b.average_delta,
            )),
        };
        // An agent has a tier when all its streams share one.
        let tier = stream_tiers.and_then(|tiers| {
            let mut seen = b.indices.iter().map(|&i| tiers[i]);
            let first = seen.next()?;
            seen.all(|t| t == first).then_some(first)
        });
        let learner = b.learner.build(b.indices.len());
        participants.push(MarketParticipant::new(
            AgentId::new(b.name.clone()),
            b.indices,
            learner,
            strategy,
        ));
        metas.push(AgentMeta {
            name: b.name,
            learner: b.learner_name,
            strategy: if matches!(b.strategy.as_str(), "constant") {
                "constant".to_string()
            } else {
                "q_learning".to_string()
            },
            tier,
        });
    }
    Ok((participants, metas))
}

/// Runs one learner prequentially over the records: predict each record
/// from its features, then train on the revealed truth. Returns the
/// predictions in record order.
pub fn run_prequential(records: &[Record], spec: &LearnerSpec, dim: usize) -> Vec<f64> {
    let mut learner = spec.build(dim);
    records
        .iter()
        .map(|record| {
            let prediction = learner
                .predict(&record.features)
                .expect("dimensions match the dataset");
            learner
                .train(&record.features, record.true_value)
                .expect("dimensions match the dataset");
            prediction
        })
        .collect()
}

/// Executes one experiment at a seed: one market per record in order,
/// then baselines, aggregates, and provenance.
pub fn run_experiment(spec: &ExperimentSpec, seed: u64) -> Result<RunReport, HarnessError> {
    let mut m = materialize(spec, seed)?;
    let mut ledger =
        CapitalLedger::with_standard_capital(m.participants.iter().map(|p| p.id().clone()));

    let mut rows: Vec<RecordRow> = Vec::with_capacity(m.records.len());
    for record in &m.records {
        let outcome = run_market(record, &mut m.participants, &m.config, &mut ledger)?;
        let cells: Vec<AgentCell> = m
            .participants
            .iter()
            .zip(&outcome.agents)
            .map(|(participant, entry)| {
                let settled = entry.outcome.as_ref();
                AgentCell {
                    base_prediction: participant.last_base_prediction(),
                    prediction: settled.map(|s| s.prediction),
                    stake: settled.map(|s| s.stake),
                    error: settled.map(|s| s.error),
                    revenue: settled.map(|s| s.revenue),
                    net_revenue: settled.map(|s| s.net_revenue),
                    actions: participant.last_actions().to_string(),
                    capital_after: ledger.capital(participant.id()),
                }
            })
            .collect();
        rows.push(RecordRow {
            record_id: record.id,
            true_value: record.true_value,
            market_prediction: outcome.final_prediction,
            cutoff: outcome.cutoff,
            cells,
        });
    }

    let truths: Vec<f64> = rows.iter().map(|r| r.true_value).collect();
    let market_predictions: Vec<f64> = rows.iter().map(|r| r.market_prediction).collect();
    let (system_mae, system_mae_se) = compute_mae(&market_predictions, &truths)?;

    let agents: Vec<AgentSummary> = m
        .metas
        .iter()
        .enumerate()
        .map(|(idx, meta)| {
            let mut base_pairs: (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
            let mut submitted_pairs: (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
            for row in &rows {
                let cell = &row.cells[idx];
                if let Some(base) = cell.base_prediction {
                    base_pairs.0.push(base);
                    base_pairs.1.push(row.true_value);
                }
                if let Some(pred) = cell.prediction {
                    submitted_pairs.0.push(pred);
                    submitted_pairs.1.push(row.true_value);
                }
            }
            let mae_of = |pairs: &(Vec<f64>, Vec<f64>)| {
                (!pairs.0.is_empty())
                    .then(|| compute_mae(&pairs.0, &pairs.1).expect("aligned pairs").0)
            };
            AgentSummary {
                name: meta.name.clone(),
                learner: meta.learner.clone(),
                strategy: meta.strategy.clone(),
                tier: meta.tier,
                base_mae: mae_of(&base_pairs),
                submitted_mae: mae_of(&submitted_pairs),
                markets_participated: submitted_pairs.0.len(),
                final_capital: ledger.capital(&AgentId::new(meta.name.clone())),
            }
        })
        .collect();

    let baselines: Vec<BaselineRun> = m
        .baselines
        .iter()
        .map(|(label, learner_name, learner)| {
            let predictions = run_prequential(&m.records, learner, m.stream_ids.len());
            let (mae, mae_se) = compute_mae(&predictions, &truths).expect("aligned");
            BaselineRun {
                name: label.clone(),
                learner: learner_name.clone(),
                predictions,
                mae,
                mae_se,
            }
        })
        .collect();

    let spec_hash: String = Sha256::digest(spec.canonical_toml().as_bytes())
        .iter()
        .map(|byte| format!("{byte:02x}"))
        .collect();

    Ok(RunReport {
        experiment_name: spec.name.clone(),
        seed,
        spec_hash,
        version: env!("CARGO_PKG_VERSION").to_string(),
        agents,
        rows,
        baselines,
        system_mae,
        system_mae_se,
    })
}

/// Runs independent same-spec replicates, one per seed, in parallel.
/// Reports come back in seed order.
pub fn run_seed_range(spec: &ExperimentSpec, seeds: &[u64]) -> Result<Vec<RunReport>, HarnessError> {
    seeds
        .par_iter()
        .map(|&seed| run_experiment(spec, seed))
        .collect()
}

/// Writes `records.csv` and `summary.txt` for one run into a directory.
pub fn write_report_files(report: &RunReport, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
    let dir = dir.as_ref();
    let io_err = |path: &Path, source: std::io::Error| HarnessError::ReportIo {
        path: path.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let csv_path = dir.join("records.csv");
    fs::write(&csv_path, report.records_csv_string()).map_err(|e| io_err(&csv_path, e))?;
    let summary_path = dir.join("summary.txt");
    fs::write(&summary_path, report.summary_string()).map_err(|e| io_err(&summary_path, e))?;
    Ok(())
}

/// Writes per-seed report directories plus a cross-seed roll-up.
pub fn write_multi_seed_reports(
    reports: &[RunReport],
    dir: impl AsRef<Path>,
) -> Result<(), HarnessError> {
    let dir = dir.as_ref();
    for report in reports {
        write_report_files(report, dir.join(format!("seed_{}", report.seed)))?;
    }
    let path = dir.join("cross_seed.txt");
    fs::write(&path, report::cross_seed_summary(reports)).map_err(|source| {
        HarnessError::ReportIo {
            path: path.display().to_string(),
            source,
        }
    })?;
    Ok(())
}
