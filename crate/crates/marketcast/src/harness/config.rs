//! Experiment configuration: the TOML schema, its validation, and the
//! translation into engine types.
//!
//! An experiment file has the sections
//!
//! ```toml
//! name = "demo"
//! seed = 1
//!
//! [dataset]
//! kind = "synthetic"        # or "csv"
//! n_records = 200
//! preset = "type1"          # or explicit [[dataset.streams]] entries
//!
//! [market]
//! rounds = 2
//! max_rpt = 0.9
//! min_rpt = 0.001
//! reward_p = 7.0
//! reward_beta = 4.0
//! cutoff_policy = "quantile"   # or "max_error"
//! cutoff_quantile = 0.6
//!
//! [roster]                  # or explicit [[agents]] entries
//! mode = "per_stream"
//! learner = "sgd"
//! strategy = "q_learning"
//!
//! [[baselines]]
//! learner = "sgd"
//! ```
//!
//! Validation never stops at the first problem: it reports every
//! violation in one error so a broken file can be fixed in one pass.

use serde::{Deserialize, Serialize};

use crate::data::{QualityTier, StreamSpec, SynthTargetParams};
use crate::learner::LearnerSpec;
use crate::market::{CutoffPolicy, MarketConfig};

use super::presets;
use super::HarnessError;

/// A full experiment description, deserialized from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Base seed; the CLI and multi-seed driver may override it per run.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub market: MarketSection,
    /// Shorthand roster; mutually exclusive with explicit `agents`.
    #[serde(default)]
    pub roster: Option<RosterSection>,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub baselines: Vec<BaselineSpec>,
    #[serde(default)]
    pub report: ReportSection,
}

/// Where the records come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Generated stream collection around the seasonal target.
    Synthetic {
        n_records: usize,
        /// Name of a shipped stream collection (`type1` .. `type4`,
        /// `set2`); mutually exclusive with `streams`.
        #[serde(default)]
        preset: Option<String>,
        #[serde(default)]
        streams: Vec<StreamSection>,
        /// Overrides for the target series shape.
        #[serde(default)]
        target: Option<TargetSection>,
    },
    /// Ingested from a CSV file with a header row.
    Csv {
        path: String,
        target_column: String,
        /// Stream columns in order; omitted takes every other column.
        #[serde(default)]
        feature_columns: Option<Vec<String>>,
    },
}

/// One synthetic stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    pub id: String,
    /// `low`, `medium`, or `high`.
    pub tier: String,
    pub noise_sigma: f64,
    #[serde(default)]
    pub corruption_rate: f64,
    #[serde(default)]
    pub lag: u32,
}

impl StreamSection {
    pub fn tier(&self) -> Option<QualityTier> {
        match self.tier.as_str() {
            "low" => Some(QualityTier::Low),
            "medium" => Some(QualityTier::Medium),
            "high" => Some(QualityTier::High),
            _ => None,
        }
    }

    pub fn to_stream_spec(&self) -> StreamSpec {
        StreamSpec::new(
            self.id.clone(),
            self.tier().expect("validated tier"),
            self.noise_sigma,
            self.corruption_rate,
            self.lag,
        )
    }
}

/// Target series shape overrides; fields default to the shipped shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    #[serde(default = "defaults::amplitude_main")]
    pub amplitude_main: f64,
    #[serde(default = "defaults::period_main")]
    pub period_main: f64,
    #[serde(default = "defaults::amplitude_minor")]
    pub amplitude_minor: f64,
    #[serde(default = "defaults::period_minor")]
    pub period_minor: f64,
    #[serde(default = "defaults::trend")]
    pub trend: f64,
    #[serde(default = "defaults::target_noise")]
    pub noise_sigma: f64,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            amplitude_main: defaults::amplitude_main(),
            period_main: defaults::period_main(),
            amplitude_minor: defaults::amplitude_minor(),
            period_minor: defaults::period_minor(),
            trend: defaults::trend(),
            noise_sigma: defaults::target_noise(),
        }
    }
}

impl TargetSection {
    pub fn to_params(&self) -> SynthTargetParams {
        SynthTargetParams {
            amplitude_main: self.amplitude_main,
            period_main: self.period_main,
            amplitude_minor: self.amplitude_minor,
            period_minor: self.period_minor,
            trend: self.trend,
            noise_sigma: self.noise_sigma,
        }
    }
}

/// Market parameters; defaults mirror [`MarketConfig::default`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    #[serde(default = "defaults::rounds")]
    pub rounds: u32,
    #[serde(default = "defaults::max_rpt")]
    pub max_rpt: f64,
    #[serde(default = "defaults::min_rpt")]
    pub min_rpt: f64,
    #[serde(default = "defaults::reward_p")]
    pub reward_p: f64,
    #[serde(default = "defaults::reward_beta")]
    pub reward_beta: f64,
    /// `quantile` or `max_error`.
    #[serde(default = "defaults::cutoff_policy")]
    pub cutoff_policy: String,
    #[serde(default = "defaults::cutoff_quantile")]
    pub cutoff_quantile: f64,
}

impl Default for MarketSection {
    fn default() -> Self {
        Self {
            rounds: defaults::rounds(),
            max_rpt: defaults::max_rpt(),
            min_rpt: defaults::min_rpt(),
            reward_p: defaults::reward_p(),
            reward_beta: defaults::reward_beta(),
            cutoff_policy: defaults::cutoff_policy(),
            cutoff_quantile: defaults::cutoff_quantile(),
        }
    }
}

impl MarketSection {
    pub fn to_market_config(&self) -> MarketConfig {
        let cutoff_policy = match self.cutoff_policy.as_str() {
            "max_error" => CutoffPolicy::MaxError,
            _ => CutoffPolicy::Quantile(self.cutoff_quantile),
        };
        MarketConfig {
            rounds: self.rounds,
            max_rpt: self.max_rpt,
            min_rpt: self.min_rpt,
            reward_p: self.reward_p,
            reward_beta: self.reward_beta,
            cutoff_policy,
        }
    }
}

/// Roster shorthand: builds the agent list from the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterSection {
    /// `per_stream` (one agent per stream, each seeing only its stream)
    /// or `per_learner` (one agent per listed learner, each seeing all
    /// streams).
    pub mode: String,
    /// Learner for `per_stream` mode.
    #[serde(default)]
    pub learner: Option<String>,
    /// Learners for `per_learner` mode.
    #[serde(default)]
    pub learners: Option<Vec<String>>,
    #[serde(default = "defaults::strategy")]
    pub strategy: String,
    /// Hyperparameter overrides applied to every roster learner they
    /// fit; entries for other learner kinds are ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

/// One explicitly configured agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    pub learner: String,
    /// Stream ids this agent sees; omitted means all streams.
    #[serde(default)]
    pub streams: Option<Vec<String>>,
    /// `q_learning` or `constant`.
    #[serde(default = "defaults::strategy")]
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Average the learned shift fraction per state instead of keeping
    /// the latest value.
    #[serde(default)]
    pub average_delta: bool,
    /// Override of the state-discretization bucket boundaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket_edges: Option<Vec<f64>>,
}

/// One standalone baseline learner run over all streams.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    /// Report label; defaults to the learner name.
    #[serde(default)]
    pub name: Option<String>,
    pub learner: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

impl BaselineSpec {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.learner.clone())
    }

    /// The learner this baseline runs, with overrides applied.
    pub fn to_learner_spec(&self) -> Result<LearnerSpec, String> {
        learner_spec_with_overrides(&self.learner, self.eta, self.steps, self.k, self.window)
    }
}

/// Report output options.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Output directory; overridable on the command line.
    #[serde(default)]
    pub out_dir: Option<String>,
}

mod defaults {
    pub fn rounds() -> u32 {
        2
    }
    pub fn max_rpt() -> f64 {
        0.9
    }
    pub fn min_rpt() -> f64 {
        0.001
    }
    pub fn reward_p() -> f64 {
        1.0
    }
    pub fn reward_beta() -> f64 {
        2.0
    }
    pub fn cutoff_policy() -> String {
        "quantile".to_string()
    }
    pub fn cutoff_quantile() -> f64 {
        0.6
    }
    pub fn strategy() -> String {
        "q_learning".to_string()
    }
    pub fn amplitude_main() -> f64 {
        2.0
    }
    pub fn period_main() -> f64 {
        52.0
    }
    pub fn amplitude_minor() -> f64 {
        0.5
    }
    pub fn period_minor() -> f64 {
        13.0
    }
    pub fn trend() -> f64 {
        0.001
    }
    pub fn target_noise() -> f64 {
        0.05
    }
}

/// Builds a learner from a name plus optional hyperparameter overrides.
/// Returns an error string naming the problem for validation collection.
pub(crate) fn learner_spec_with_overrides(
    learner: &str,
    eta: Option<f64>,
    steps: Option<u32>,
    k: Option<usize>,
    window: Option<usize>,
) -> Result<LearnerSpec, String> {
    let mut spec = LearnerSpec::by_name(learner)
        .ok_or_else(|| format!("unknown learner {learner:?} (known: {})", known_learners()))?;
    match &mut spec {
        LearnerSpec::SgdLinear { eta: e, steps: s } => {
            if let Some(v) = eta {
                *e = v;
            }
            if let Some(v) = steps {
                *s = v;
            }
        }
        LearnerSpec::Knn { k: kk, window: w } => {
            if let Some(v) = k {
                *kk = v;
            }
            if let Some(v) = window {
                *w = v;
            }
        }
        LearnerSpec::Stump { window: w } => {
            if let Some(v) = window {
                *w = v;
            }
        }
        LearnerSpec::Mean | LearnerSpec::SimpleLinear => {}
    }
    Ok(spec)
}

fn known_learners() -> String {
    LearnerSpec::all_names().join(", ")
}

impl ExperimentSpec {
    /// Parses an experiment file.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::SpecParse(e.to_string()))
    }

    /// Reads and parses an experiment file.
    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::ReportIo {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Canonical serialized form, used for the provenance hash.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Checks the whole spec and reports every violation at once.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::InvalidSpec { violations })
        }
    }

    /// Every violation in this spec; empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.is_empty() {
            out.push("name must not be empty".to_string());
        }
        for v in self.market.to_market_config().violations() {
            out.push(format!("market: {v}"));
        }
        if !matches!(self.market.cutoff_policy.as_str(), "quantile" | "max_error") {
            out.push(format!(
                "market: cutoff_policy must be \"quantile\" or \"max_error\", got {:?}",
                self.market.cutoff_policy
            ));
        }

        let stream_ids = self.validate_dataset(&mut out);
        self.validate_roster(&mut out, stream_ids.as_deref());

        for baseline in &self.baselines {
            if let Err(msg) = learner_spec_with_overrides(
                &baseline.learner,
                baseline.eta,
                baseline.steps,
                baseline.k,
                baseline.window,
            ) {
                out.push(format!("baseline {:?}: {msg}", baseline.label()));
            }
        }
        out
    }

    /// Dataset checks; returns the stream ids when they are knowable
    /// without touching the filesystem.
    fn validate_dataset(&self, out: &mut Vec<String>) -> Option<Vec<String>> {
        match &self.dataset {
            DatasetSpec::Synthetic {
                n_records,
                preset,
                streams,
                target,
            } => {
                if *n_records == 0 {
                    out.push("dataset: n_records must be at least 1".to_string());
                }
                if let Some(t) = target {
                    if t.noise_sigma < 0.0 {
                        out.push("dataset.target: noise_sigma must be nonnegative".to_string());
                    }
                }
                let resolved: Option<Vec<StreamSpec>> = match (preset, streams.is_empty()) {
                    (Some(name), true) => match presets::stream_preset(name) {
                        Some(s) => Some(s),
                        None => {
                            out.push(format!(
                                "dataset: unknown preset {name:?} (known: {})",
                                presets::PRESET_NAMES.join(", ")
                            ));
                            None
                        }
                    },
                    (None, false) => {
                        let mut specs = Vec::new();
                        for s in streams {
                            if s.tier().is_none() {
                                out.push(format!(
                                    "dataset.streams: {:?} has unknown tier {:?} \
                                     (use low, medium, or high)",
                                    s.id, s.tier
                                ));
                            }
                            if s.noise_sigma < 0.0 {
                                out.push(format!(
                                    "dataset.streams: {:?} has negative noise_sigma",
                                    s.id
                                ));
                            }
                            if !(0.0..=1.0).contains(&s.corruption_rate) {
                                out.push(format!(
                                    "dataset.streams: {:?} corruption_rate must lie in [0, 1]",
                                    s.id
                                ));
                            }
                            if s.tier().is_some() && s.noise_sigma >= 0.0 {
                                specs.push(s.to_stream_spec());
                            }
                        }
                        let mut seen = std::collections::BTreeSet::new();
                        for s in streams {
                            if !seen.insert(&s.id) {
                                out.push(format!("dataset.streams: duplicate id {:?}", s.id));
                            }
                        }
                        Some(specs)
                    }
                    (Some(_), false) => {
                        out.push(
                            "dataset: preset and explicit streams are mutually exclusive"
                                .to_string(),
                        );
                        None
                    }
                    (None, true) => {
                        out.push(
                            "dataset: synthetic requires either a preset or explicit streams"
                                .to_string(),
                        );
                        None
                    }
                };
                if let Some(specs) = &resolved {
                    check_tier_noise_ordering(specs, out);
                }
                resolved.map(|s| s.into_iter().map(|s| s.stream_id).collect())
            }
            DatasetSpec::Csv { path, .. } => {
                if path.is_empty() {
                    out.push("dataset: csv path must not be empty".to_string());
                }
                // Stream ids come from the file header at load time.
                None
            }
        }
    }

    fn validate_roster(&self, out: &mut Vec<String>, stream_ids: Option<&[String]>) {
        match (&self.roster, self.agents.is_empty()) {
            (Some(_), false) => out.push(
                "roster shorthand and explicit agents are mutually exclusive".to_string(),
            ),
            (None, true) => out.push("no agents: provide a roster or agents".to_string()),
            (Some(roster), true) => {
                match roster.mode.as_str() {
                    "per_stream" => match &roster.learner {
                        Some(name) => {
                            if let Err(msg) =
                                learner_spec_with_overrides(name, None, None, None, None)
                            {
                                out.push(format!("roster: {msg}"));
                            }
                        }
                        None => out.push("roster: per_stream mode requires a learner".to_string()),
                    },
                    "per_learner" => match &roster.learners {
                        Some(names) if !names.is_empty() => {
                            for name in names {
                                if let Err(msg) =
                                    learner_spec_with_overrides(name, None, None, None, None)
                                {
                                    out.push(format!("roster: {msg}"));
                                }
                            }
                        }
                        _ => out.push(
                            "roster: per_learner mode requires a nonempty learners list"
                                .to_string(),
                        ),
                    },
                    other => out.push(format!(
                        "roster: unknown mode {other:?} (use per_stream or per_learner)"
                    )),
                }
                if !matches!(roster.strategy.as_str(), "q_learning" | "constant") {
                    out.push(format!(
                        "roster: unknown strategy {:?} (use q_learning or constant)",
                        roster.strategy
                    ));
                }
            }
            (None, false) => {
                let mut seen = std::collections::BTreeSet::new();
                for agent in &self.agents {
                    if !seen.insert(&agent.name) {
                        out.push(format!("agents: duplicate name {:?}", agent.name));
                    }
                    if let Err(msg) = learner_spec_with_overrides(
                        &agent.learner,
                        agent.eta,
                        agent.steps,
                        agent.k,
                        agent.window,
                    ) {
                        out.push(format!("agent {:?}: {msg}", agent.name));
                    }
                    if !matches!(agent.strategy.as_str(), "q_learning" | "constant") {
                        out.push(format!(
                            "agent {:?}: unknown strategy {:?} (use q_learning or constant)",
                            agent.name, agent.strategy
                        ));
                    }
                    if let Some(edges) = &agent.bucket_edges {
                        if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
                            out.push(format!(
                                "agent {:?}: bucket_edges must be nonempty and strictly increasing",
                                agent.name
                            ));
                        }
                    }
                    if let (Some(ids), Some(streams)) = (stream_ids, &agent.streams) {
                        for s in streams {
                            if !ids.contains(s) {
                                out.push(format!(
                                    "agent {:?}: unknown stream {s:?}",
                                    agent.name
                                ));
                            }
                        }
                    }
                    if let Some(streams) = &agent.streams {
                        if streams.is_empty() {
                            out.push(format!(
                                "agent {:?}: streams list must not be empty when given",
                                agent.name
                            ));
                        }
                    }
                }
            }
        }
    }
}

/// Within one dataset every high-tier stream must be less noisy than
/// every medium-tier stream, and medium less noisy than low.
fn check_tier_noise_ordering(streams: &[StreamSpec], out: &mut Vec<String>) {
    let bound = |tier: QualityTier, max: bool| -> Option<f64> {
        streams
            .iter()
            .filter(|s| s.quality_tier == tier)
            .map(|s| s.noise_sigma)
            .fold(None, |acc: Option<f64>, v| {
                Some(match acc {
                    None => v,
                    Some(a) if max => a.max(v),
                    Some(a) => a.min(v),
                })
            })
    };
    if let (Some(high_max), Some(med_min)) =
        (bound(QualityTier::High, true), bound(QualityTier::Medium, false))
    {
        if high_max >= med_min {
            out.push(format!(
                "dataset.streams: high-tier noise ({high_max}) must stay below \
                 medium-tier noise ({med_min})"
            ));
        }
    }
    if let (Some(med_max), Some(low_min)) =
        (bound(QualityTier::Medium, true), bound(QualityTier::Low, false))
    {
        if med_max >= low_min {
            out.push(format!(
                "dataset.streams: medium-tier noise ({med_max}) must stay below \
                 low-tier noise ({low_min})"
            ));
        }
    }
}
