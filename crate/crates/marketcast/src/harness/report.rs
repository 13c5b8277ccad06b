//! Run reports: the in-memory result of an experiment and its
//! deterministic on-disk forms.
//!
//! Two artifacts are written per run: `records.csv` with one row per
//! record (market-level columns, then one column group per agent in
//! roster order) and `summary.txt` with aggregates and provenance as
//! nested key-value text. Both use fixed field order and fixed decimal
//! formatting, so identical runs produce byte-identical files.

use std::io::{self, Write};

use crate::data::QualityTier;
use crate::market::INITIAL_CAPITAL;

/// Formats every float in a report: scientific with 9 significant
/// digits, enough to round-trip the ordering decisions downstream
/// consumers make while staying byte-stable.
pub(crate) fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

/// One agent's entry in one settled market. All financial fields are
/// `None` when the agent abstained.
#[derive(Debug, Clone)]
pub struct AgentCell {
    /// The learner's unmodified prediction for this record.
    pub base_prediction: Option<f64>,
    /// The sealed (final-round) prediction.
    pub prediction: Option<f64>,
    pub stake: Option<f64>,
    pub error: Option<f64>,
    pub revenue: Option<f64>,
    /// `revenue - stake`, the exact amount the ledger applied.
    pub net_revenue: Option<f64>,
    /// Per-round action codes, e.g. `"KP"`; `"A"` when abstained.
    pub actions: String,
    /// Ledger balance after this market settled.
    pub capital_after: f64,
}

/// One record's settled market.
#[derive(Debug, Clone)]
pub struct RecordRow {
    pub record_id: u64,
    pub true_value: f64,
    pub market_prediction: f64,
    pub cutoff: f64,
    /// Roster order.
    pub cells: Vec<AgentCell>,
}

/// Per-agent aggregate results.
#[derive(Debug, Clone)]
pub struct AgentSummary {
    pub name: String,
    pub learner: String,
    /// `q_learning` or `constant`.
    pub strategy: String,
    /// Quality tier of the agent's streams when they share one.
    pub tier: Option<QualityTier>,
    /// MAE of the unmodified learner predictions, over participated
    /// markets.
    pub base_mae: Option<f64>,
    /// MAE of the sealed predictions, over participated markets.
    pub submitted_mae: Option<f64>,
    pub markets_participated: usize,
    pub final_capital: f64,
}

/// One standalone baseline learner, run prequentially over all streams.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub name: String,
    pub learner: String,
    pub predictions: Vec<f64>,
    pub mae: f64,
    pub mae_se: f64,
}

/// Full result of one experiment run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub experiment_name: String,
    pub seed: u64,
    /// Hash of the canonical serialized spec.
    pub spec_hash: String,
    pub version: String,
    pub agents: Vec<AgentSummary>,
    pub rows: Vec<RecordRow>,
    pub baselines: Vec<BaselineRun>,
    /// MAE of the market prediction against the truth, with its
    /// standard error.
    pub system_mae: f64,
    pub system_mae_se: f64,
}

impl RunReport {
    pub fn truths(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.true_value).collect()
    }

    pub fn market_predictions(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.market_prediction).collect()
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.name == name)
    }

    /// Absolute errors of one agent's sealed predictions, `None` on
    /// abstained records; aligned with `rows`.
    pub fn agent_submitted_errors(&self, idx: usize) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.cells[idx].error).collect()
    }

    /// Absolute errors of one agent's base predictions, `None` on
    /// abstained records; aligned with `rows`.
    pub fn agent_base_errors(&self, idx: usize) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| {
                r.cells[idx]
                    .base_prediction
                    .map(|p| (p - r.true_value).abs())
            })
            .collect()
    }

    /// Smallest per-agent base-prediction MAE in the roster.
    pub fn best_agent_base_mae(&self) -> Option<f64> {
        self.agents
            .iter()
            .filter_map(|a| a.base_mae)
            .min_by(f64::total_cmp)
    }

    /// Replays every agent's net revenues over the rows and compares
    /// against the reported final capital. The ledger applies exactly
    /// one `capital += net` per settled market, so the replay must
    /// reproduce the balance bit for bit; any deviation is reported.
    pub fn audit_ledger(&self) -> Result<(), String> {
        for (idx, agent) in self.agents.iter().enumerate() {
            let mut capital = INITIAL_CAPITAL;
            for row in &self.rows {
                if let Some(net) = row.cells[idx].net_revenue {
                    capital += net;
                }
            }
            if capital.to_bits() != agent.final_capital.to_bits()
                && (capital - agent.final_capital).abs() > 1e-9
            {
                return Err(format!(
                    "agent {}: replayed capital {} != reported {}",
                    agent.name, capital, agent.final_capital
                ));
            }
        }
        Ok(())
    }

    /// Writes the per-record CSV.
    pub fn write_records_csv(&self, mut w: impl Write) -> io::Result<()> {
        let mut header = vec![
            "record_id".to_string(),
            "truth".to_string(),
            "market_prediction".to_string(),
            "cutoff".to_string(),
        ];
        for agent in &self.agents {
            for field in [
                "base", "pred", "stake", "error", "revenue", "net", "action", "capital",
            ] {
                header.push(format!("{}_{field}", agent.name));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for row in &self.rows {
            let mut cols = vec![
                row.record_id.to_string(),
                fmt_float(row.true_value),
                fmt_float(row.market_prediction),
                fmt_float(row.cutoff),
            ];
            for cell in &row.cells {
                cols.push(fmt_opt(cell.base_prediction));
                cols.push(fmt_opt(cell.prediction));
                cols.push(fmt_opt(cell.stake));
                cols.push(fmt_opt(cell.error));
                cols.push(fmt_opt(cell.revenue));
                cols.push(fmt_opt(cell.net_revenue));
                cols.push(cell.actions.clone());
                cols.push(fmt_float(cell.capital_after));
            }
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }

    pub fn records_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_records_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Writes the aggregate summary.
    pub fn write_summary(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "experiment: {}", self.experiment_name)?;
        writeln!(w, "seed: {}", self.seed)?;
        writeln!(w, "version: {}", self.version)?;
        writeln!(w, "spec_hash: {}", self.spec_hash)?;
        writeln!(w, "n_records: {}", self.rows.len())?;
        writeln!(w, "n_agents: {}", self.agents.len())?;
        writeln!(w, "system:")?;
        writeln!(w, "  mae: {}", fmt_float(self.system_mae))?;
        writeln!(w, "  mae_se: {}", fmt_float(self.system_mae_se))?;
        writeln!(w, "agents:")?;
        for agent in &self.agents {
            writeln!(w, "  {}:", agent.name)?;
            writeln!(w, "    learner: {}", agent.learner)?;
            writeln!(w, "    strategy: {}", agent.strategy)?;
            if let Some(tier) = agent.tier {
                writeln!(w, "    tier: {tier}")?;
            }
            writeln!(w, "    base_mae: {}", fmt_opt(agent.base_mae))?;
            writeln!(w, "    submitted_mae: {}", fmt_opt(agent.submitted_mae))?;
            writeln!(w, "    markets: {}", agent.markets_participated)?;
            writeln!(w, "    final_capital: {}", fmt_float(agent.final_capital))?;
        }
        if !self.baselines.is_empty() {
            writeln!(w, "baselines:")?;
            for baseline in &self.baselines {
                writeln!(w, "  {}:", baseline.name)?;
                writeln!(w, "    learner: {}", baseline.learner)?;
                writeln!(w, "    mae: {}", fmt_float(baseline.mae))?;
                writeln!(w, "    mae_se: {}", fmt_float(baseline.mae_se))?;
            }
        }
        let shares = super::metrics::action_popularity(self);
        if !shares.is_empty() {
            writeln!(w, "action_popularity:")?;
            for (tier, share) in &shares {
                writeln!(w, "  {tier}:")?;
                writeln!(w, "    preserve: {}", fmt_float(share.preserve))?;
                writeln!(w, "    change: {}", fmt_float(share.change))?;
                writeln!(w, "    decisions: {}", share.decisions)?;
            }
        }
        Ok(())
    }

    pub fn summary_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_summary(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("summary is utf-8")
    }
}

/// Cross-seed roll-up of replicate runs of one spec.
pub fn cross_seed_summary(reports: &[RunReport]) -> String {
    let mut out = String::new();
    if reports.is_empty() {
        return out;
    }
    out.push_str(&format!("experiment: {}\n", reports[0].experiment_name));
    out.push_str(&format!("n_seeds: {}\n", reports.len()));
    out.push_str("per_seed:\n");
    for report in reports {
        out.push_str(&format!("  seed_{}:\n", report.seed));
        out.push_str(&format!("    system_mae: {}\n", fmt_float(report.system_mae)));
        out.push_str(&format!(
            "    best_agent_base_mae: {}\n",
            fmt_opt(report.best_agent_base_mae())
        ));
        for baseline in &report.baselines {
            out.push_str(&format!(
                "    baseline_{}_mae: {}\n",
                baseline.name,
                fmt_float(baseline.mae)
            ));
        }
    }
    let mean = |f: &dyn Fn(&RunReport) -> f64| {
        reports.iter().map(|r| f(r)).sum::<f64>() / reports.len() as f64
    };
    out.push_str("means:\n");
    out.push_str(&format!(
        "  system_mae: {}\n",
        fmt_float(mean(&|r| r.system_mae))
    ));
    out
}
