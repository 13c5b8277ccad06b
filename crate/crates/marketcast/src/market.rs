//! The market engine: one market per record, a fixed number of bidding
//! rounds, and a settlement that converts prediction accuracy into capital.
//!
//! Lifecycle of a market:
//!
//! 1. Every agent is offered the record's features and produces bids round
//!    by round. After each non-final round the stake-weighted market
//!    prediction is broadcast, so agents can react to the consensus.
//! 2. Only the final round is financially binding: its bids are sealed,
//!    stakes are deducted, and settlement is computed against the true
//!    value. Earlier rounds exist purely as an information channel.
//! 3. Settlement selects an error cutoff, turns each sealed error into a
//!    reward multiplier, credits `multiplier * stake` back to each
//!    participant, and notifies every agent of the truth and the realized
//!    reward parameters so it can retrain and adapt its strategy.
//!
//! All engine arithmetic is deterministic: given identical inputs and agent
//! order the outcome is bit-for-bit reproducible. Bid computations within a
//! round may not observe one another; the engine evaluates them in agent
//! order, which is indistinguishable from concurrent evaluation.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::data::Record;
use crate::learner::FeatureVector;

/// Fallback cutoff used when every sealed error is zero (or degenerate
/// ties leave no usable cutoff). Keeps `reward_multiplier` well defined.
pub const MIN_CUTOFF: f64 = 1e-9;

/// Capital every agent starts with.
pub const INITIAL_CAPITAL: f64 = 100.0;

/// Error raised by the market engine.
#[derive(Debug, Error)]
pub enum MarketError {
    /// No bids were available where at least one was required.
    #[error("market has no participating agents")]
    NoParticipants,
    /// A market configuration violated its invariants.
    #[error("invalid market configuration: {}", reasons.join("; "))]
    InvalidConfig { reasons: Vec<String> },
}

/// Identifier of an agent, unique within one experiment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// How the settlement cutoff is selected from the sealed errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffPolicy {
    /// Smallest sealed error `e` with at least `ceil(q * n)` errors
    /// strictly below it. Roughly a fraction `q` of participants then
    /// earn a positive reward. Falls back to the maximum error when ties
    /// make the count unreachable.
    Quantile(f64),
    /// The largest sealed error; every other participant earns a
    /// positive reward.
    MaxError,
}

/// Static parameters of a market.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketConfig {
    /// Number of bidding rounds; only the last is financially binding.
    pub rounds: u32,
    /// Largest fraction of its capital an agent may stake in one market.
    pub max_rpt: f64,
    /// Smallest fraction of its capital an agent stakes when it bids at all.
    pub min_rpt: f64,
    /// Exponent of the reward curve; larger values flatten the curve near
    /// zero error and steepen it near the cutoff.
    pub reward_p: f64,
    /// Reward multiplier earned at zero error.
    pub reward_beta: f64,
    /// Cutoff selection policy applied to the sealed errors.
    pub cutoff_policy: CutoffPolicy,
}

impl Default for MarketConfig {
    /// Two rounds and a linear reward curve (`reward_p = 1`,
    /// `reward_beta = 2`), with a cutoff at the 60% quantile.
    fn default() -> Self {
        Self {
            rounds: 2,
            max_rpt: 0.9,
            min_rpt: 0.001,
            reward_p: 1.0,
            reward_beta: 2.0,
            cutoff_policy: CutoffPolicy::Quantile(0.6),
        }
    }
}

impl MarketConfig {
    /// Every invariant violation in this configuration, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rounds < 1 {
            out.push("rounds must be at least 1".to_string());
        }
        if !(self.max_rpt > 0.0 && self.max_rpt <= 1.0) {
            out.push(format!("max_rpt must lie in (0, 1], got {}", self.max_rpt));
        }
        if !(self.min_rpt > 0.0 && self.min_rpt <= self.max_rpt) {
            out.push(format!(
                "min_rpt must lie in (0, max_rpt], got {}",
                self.min_rpt
            ));
        }
        if !(self.reward_p > 0.0) {
            out.push(format!("reward_p must be positive, got {}", self.reward_p));
        }
        if !(self.reward_beta > 0.0) {
            out.push(format!(
                "reward_beta must be positive, got {}",
                self.reward_beta
            ));
        }
        if let CutoffPolicy::Quantile(q) = self.cutoff_policy {
            if !(q > 0.0 && q <= 1.0) {
                out.push(format!("cutoff quantile must lie in (0, 1], got {q}"));
            }
        }
        out
    }

    /// Validates the configuration, reporting every violation at once.
    pub fn validate(&self) -> Result<(), MarketError> {
        let reasons = self.violations();
        if reasons.is_empty() {
            Ok(())
        } else {
            Err(MarketError::InvalidConfig { reasons })
        }
    }
}

/// Reward parameters realized by one settled market.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    /// Error cutoff: errors at or above it earn nothing.
    pub cutoff: f64,
    /// Reward curve exponent.
    pub p: f64,
    /// Multiplier earned at zero error.
    pub beta: f64,
}

impl RewardParams {
    /// Reward multiplier for a sealed error under these parameters.
    pub fn multiplier(&self, error: f64) -> f64 {
        reward_multiplier(error, self.cutoff, self.p, self.beta)
    }
}

/// One agent's submission for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Bid {
    pub agent_id: AgentId,
    pub prediction: f64,
    pub stake: f64,
}

/// One completed bidding round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    /// 1-based round index.
    pub round: u32,
    /// Bids submitted this round, in agent order.
    pub bids: Vec<Bid>,
    /// Stake-weighted market prediction integrated from `bids`.
    pub market_prediction: f64,
}

/// Financial result of one participant in a settled market.
#[derive(Debug, Clone, Copy)]
pub struct SettledBid {
    pub prediction: f64,
    pub stake: f64,
    /// Absolute error of the sealed prediction.
    pub error: f64,
    pub reward_multiplier: f64,
    /// Amount credited back: `reward_multiplier * stake`.
    pub revenue: f64,
    /// `revenue - stake`; what the market did to this agent's capital.
    pub net_revenue: f64,
}

/// Per-agent entry of a settled market, `None` when the agent abstained.
#[derive(Debug, Clone)]
pub struct AgentOutcome {
    pub agent_id: AgentId,
    pub outcome: Option<SettledBid>,
}

/// Full result of one settled market.
#[derive(Debug, Clone)]
pub struct MarketOutcome {
    pub record_id: u64,
    pub true_value: f64,
    /// Market prediction integrated from the sealed (final-round) bids.
    pub final_prediction: f64,
    /// Cutoff selected from the sealed errors.
    pub cutoff: f64,
    /// Every round in order; the last one is the sealed round.
    pub rounds: Vec<RoundOutcome>,
    /// One entry per agent, in agent order.
    pub agents: Vec<AgentOutcome>,
}

/// Tracks every agent's capital across markets.
///
/// Capital never goes negative: stakes are clamped to the available
/// capital before they enter the market, and reward multipliers are
/// nonnegative.
#[derive(Debug, Clone)]
pub struct CapitalLedger {
    accounts: BTreeMap<AgentId, f64>,
}

impl CapitalLedger {
    /// Opens an account per agent, each holding `initial`.
    pub fn new<I: IntoIterator<Item = AgentId>>(agents: I, initial: f64) -> Self {
        Self {
            accounts: agents.into_iter().map(|id| (id, initial)).collect(),
        }
    }

    /// Opens accounts holding the standard initial capital.
    pub fn with_standard_capital<I: IntoIterator<Item = AgentId>>(agents: I) -> Self {
        Self::new(agents, INITIAL_CAPITAL)
    }

    /// Current capital of an agent; zero for unknown agents.
    pub fn capital(&self, id: &AgentId) -> f64 {
        self.accounts.get(id).copied().unwrap_or(0.0)
    }

    /// Applies one settlement to an account.
    ///
    /// The update is a single `capital += revenue - stake`, so replaying
    /// the per-market net revenues in order reproduces the final balance
    /// bit for bit.
    pub fn settle(&mut self, id: &AgentId, stake: f64, revenue: f64) {
        if let Some(capital) = self.accounts.get_mut(id) {
            *capital += revenue - stake;
        }
    }

    /// Iterates accounts in agent-id order.
    pub fn iter(&self) -> impl Iterator<Item = (&AgentId, f64)> {
        self.accounts.iter().map(|(id, c)| (id, *c))
    }

    /// Sum of all balances.
    pub fn total(&self) -> f64 {
        self.accounts.values().sum()
    }
}

/// An agent as the market engine sees it.
///
/// The engine drives one market per record: `begin_market` first, then one
/// `bid` call per round, then `settle` once the truth is known. Returning
/// `false` from `begin_market` abstains from the whole market: the agent
/// places no bids and is excluded from cutoff selection and settlement,
/// but still receives the `settle` notification so it can keep learning.
pub trait MarketAgent {
    fn id(&self) -> &AgentId;

    /// Opens a market on a record. The features are the full vector; the
    /// agent applies its own stream selection.
    fn begin_market(&mut self, features: &FeatureVector) -> bool;

    /// Produces the bid for `round` (1-based). `interim` carries the
    /// previous round's market prediction, `None` in round 1. `capital`
    /// is the agent's current ledger balance.
    fn bid(&mut self, round: u32, interim: Option<f64>, capital: f64, config: &MarketConfig) -> Bid;

    /// Notifies the agent of the settled market: the true value and the
    /// realized reward parameters.
    fn settle(&mut self, true_value: f64, params: &RewardParams, config: &MarketConfig);
}

/// Stake-weighted market prediction of a set of bids.
///
/// When every stake is zero the bids still carry information, so the
/// unweighted mean of the predictions is returned. An empty slice is an
/// error: there is nothing to integrate.
pub fn integrate(bids: &[Bid]) -> Result<f64, MarketError> {
    if bids.is_empty() {
        return Err(MarketError::NoParticipants);
    }
    // Normalizing by the largest stake keeps the weighted sums finite even
    // when capital has grown by hundreds of orders of magnitude.
    let max_stake = bids.iter().fold(0.0_f64, |m, b| m.max(b.stake));
    if max_stake <= 0.0 {
        let sum: f64 = bids.iter().map(|b| b.prediction).sum();
        return Ok(sum / bids.len() as f64);
    }
    let mut weighted = 0.0;
    let mut weight = 0.0;
    for bid in bids {
        let w = bid.stake / max_stake;
        weighted += bid.prediction * w;
        weight += w;
    }
    Ok(weighted / weight)
}

/// Reward multiplier for a sealed error.
///
/// `beta` at zero error, exactly zero at `error = c`, and zero beyond;
/// in between the curve is `beta * (1 - (error / c)^p)`. With `p >= 1`
/// the curve stays above the straight line from `(0, beta)` to `(c, 0)`,
/// with `0 < p < 1` it stays below it.
pub fn reward_multiplier(error: f64, c: f64, p: f64, beta: f64) -> f64 {
    assert!(error >= 0.0, "error must be nonnegative, got {error}");
    assert!(c > 0.0, "cutoff must be positive, got {c}");
    assert!(p > 0.0, "exponent must be positive, got {p}");
    assert!(beta > 0.0, "beta must be positive, got {beta}");
    (beta - beta * (error / c).powf(p)).max(0.0)
}

/// Selects the settlement cutoff from the sealed errors.
///
/// See [`CutoffPolicy`] for the two policies. Whenever the selected value
/// would be zero (all errors zero, or degenerate ties), [`MIN_CUTOFF`] is
/// returned instead so the reward curve stays well defined.
pub fn select_cutoff(errors: &[f64], policy: CutoffPolicy) -> Result<f64, MarketError> {
    if errors.is_empty() {
        return Err(MarketError::NoParticipants);
    }
    let max_error = errors.iter().fold(0.0_f64, |m, &e| m.max(e));
    let selected = match policy {
        CutoffPolicy::MaxError => max_error,
        CutoffPolicy::Quantile(q) => {
            assert!(q > 0.0 && q <= 1.0, "quantile must lie in (0, 1], got {q}");
            let mut sorted = errors.to_vec();
            sorted.sort_unstable_by(f64::total_cmp);
            // Small slack keeps float dust in q * n from inflating the count.
            let need = ((q * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
            let mut found = None;
            for (i, &e) in sorted.iter().enumerate() {
                let first_occurrence = i == 0 || sorted[i - 1] < e;
                // With ascending sort, exactly `i` errors lie strictly below
                // the first occurrence of `e`.
                if first_occurrence && i >= need {
                    found = Some(e);
                    break;
                }
            }
            // Ties can make the count unreachable; fall back to the
            // largest error so the market still settles.
            found.unwrap_or(max_error)
        }
    };
    Ok(if selected > 0.0 { selected } else { MIN_CUTOFF })
}

/// Runs one market over a record and settles it against the ledger.
///
/// Agents are consulted in slice order. An agent abstains for the whole
/// market when `begin_market` returns `false` or when it ever submits a
/// non-finite bid; abstainers place no further bids and are excluded
/// from cutoff selection and settlement. Stakes are clamped to
/// `[0, capital]`. After settlement every agent (including abstainers)
/// receives the truth and the realized reward parameters.
///
/// Fails with [`MarketError::NoParticipants`] when no agent participates.
pub fn run_market<A: MarketAgent>(
    record: &Record,
    agents: &mut [A],
    config: &MarketConfig,
    ledger: &mut CapitalLedger,
) -> Result<MarketOutcome, MarketError> {
    config.validate()?;
    assert!(
        record.true_value.is_finite(),
        "record {} has a non-finite true value",
        record.id
    );

    let mut participating: Vec<bool> = agents
        .iter_mut()
        .map(|agent| agent.begin_market(&record.features))
        .collect();
    if !participating.iter().any(|&p| p) {
        return Err(MarketError::NoParticipants);
    }

    let mut rounds: Vec<RoundOutcome> = Vec::with_capacity(config.rounds as usize);
    let mut interim: Option<f64> = None;
    for round in 1..=config.rounds {
        let mut bids: Vec<Bid> = Vec::new();
        for (agent, active) in agents.iter_mut().zip(participating.iter_mut()) {
            if !*active {
                continue;
            }
            let capital = ledger.capital(agent.id());
            let mut bid = agent.bid(round, interim, capital, config);
            if !bid.prediction.is_finite() || !bid.stake.is_finite() {
                // A malformed bid abstains the agent for the rest of
                // this market.
                *active = false;
                continue;
            }
            bid.stake = bid.stake.clamp(0.0, capital);
            bids.push(bid);
        }
        let market_prediction = integrate(&bids)?;
        interim = Some(market_prediction);
        rounds.push(RoundOutcome {
            round,
            bids,
            market_prediction,
        });
    }

    let sealed = rounds.last().expect("rounds >= 1");
    let final_prediction = sealed.market_prediction;
    let errors: Vec<f64> = sealed
        .bids
        .iter()
        .map(|b| (record.true_value - b.prediction).abs())
        .collect();
    let cutoff = select_cutoff(&errors, config.cutoff_policy)?;

    // Settle in agent order: each account absorbs revenue minus stake in
    // one update, which keeps the ledger audit exact.
    let mut settled: BTreeMap<AgentId, SettledBid> = BTreeMap::new();
    for (bid, &error) in sealed.bids.iter().zip(&errors) {
        let multiplier = reward_multiplier(error, cutoff, config.reward_p, config.reward_beta);
        let revenue = multiplier * bid.stake;
        ledger.settle(&bid.agent_id, bid.stake, revenue);
        settled.insert(
            bid.agent_id.clone(),
            SettledBid {
                prediction: bid.prediction,
                stake: bid.stake,
                error,
                reward_multiplier: multiplier,
                revenue,
                net_revenue: revenue - bid.stake,
            },
        );
    }

    let agent_outcomes: Vec<AgentOutcome> = agents
        .iter()
        .map(|agent| AgentOutcome {
            agent_id: agent.id().clone(),
            outcome: settled.get(agent.id()).copied(),
        })
        .collect();

    let params = RewardParams {
        cutoff,
        p: config.reward_p,
        beta: config.reward_beta,
    };
    for agent in agents.iter_mut() {
        agent.settle(record.true_value, &params, config);
    }

    Ok(MarketOutcome {
        record_id: record.id,
        true_value: record.true_value,
        final_prediction,
        cutoff,
        rounds,
        agents: agent_outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bid(name: &str, prediction: f64, stake: f64) -> Bid {
        Bid {
            agent_id: AgentId::from(name),
            prediction,
            stake,
        }
    }

    /// Test double that bids a fixed prediction with a fixed fraction of
    /// its capital.
    struct ScriptAgent {
        id: AgentId,
        prediction: f64,
        fraction: f64,
    }

    impl ScriptAgent {
        fn new(name: &str, prediction: f64, fraction: f64) -> Self {
            Self {
                id: AgentId::from(name),
                prediction,
                fraction,
            }
        }
    }

    impl MarketAgent for ScriptAgent {
        fn id(&self) -> &AgentId {
            &self.id
        }

        fn begin_market(&mut self, _features: &FeatureVector) -> bool {
            true
        }

        fn bid(&mut self, _round: u32, _interim: Option<f64>, capital: f64, _config: &MarketConfig) -> Bid {
            Bid {
                agent_id: self.id.clone(),
                prediction: self.prediction,
                stake: self.fraction * capital,
            }
        }

        fn settle(&mut self, _true_value: f64, _params: &RewardParams, _config: &MarketConfig) {}
    }

    fn record(true_value: f64) -> Record {
        Record {
            id: 0,
            timestamp: None,
            features: FeatureVector::dense(vec![]),
            true_value,
        }
    }

    #[test]
    fn integrate_weights_by_stake() {
        let bids = [bid("a", 1.0, 3.0), bid("b", 3.0, 1.0)];
        assert_eq!(integrate(&bids).unwrap(), 1.5);
    }

    #[test]
    fn integrate_all_zero_stakes_falls_back_to_plain_mean() {
        let bids = [bid("a", 2.0, 0.0), bid("b", 6.0, 0.0)];
        assert_eq!(integrate(&bids).unwrap(), 4.0);
    }

    #[test]
    fn integrate_empty_is_an_error() {
        assert!(matches!(integrate(&[]), Err(MarketError::NoParticipants)));
    }

    #[test]
    fn reward_curve_hand_values() {
        // 4 * (1 - 0.5^7) = 3.96875
        assert!((reward_multiplier(0.5, 1.0, 7.0, 4.0) - 3.96875).abs() < 1e-12);
        // beta at zero error, exactly zero at the cutoff and beyond.
        assert_eq!(reward_multiplier(0.0, 2.0, 3.0, 5.0), 5.0);
        assert_eq!(reward_multiplier(2.0, 2.0, 3.0, 5.0), 0.0);
        assert_eq!(reward_multiplier(7.5, 2.0, 3.0, 5.0), 0.0);
    }

    #[test]
    #[should_panic(expected = "cutoff must be positive")]
    fn reward_rejects_nonpositive_cutoff() {
        reward_multiplier(0.1, 0.0, 1.0, 2.0);
    }

    #[test]
    fn cutoff_quantile_counts_strictly_below() {
        let errors = [0.1, 0.2, 0.3, 0.4, 0.5];
        // ceil(0.6 * 5) = 3 errors strictly below: smallest such error is 0.4.
        assert_eq!(
            select_cutoff(&errors, CutoffPolicy::Quantile(0.6)).unwrap(),
            0.4
        );
        assert_eq!(select_cutoff(&errors, CutoffPolicy::MaxError).unwrap(), 0.5);
    }

    #[test]
    fn cutoff_all_zero_errors_uses_floor() {
        let errors = [0.0, 0.0, 0.0];
        assert_eq!(
            select_cutoff(&errors, CutoffPolicy::Quantile(0.6)).unwrap(),
            MIN_CUTOFF
        );
        assert_eq!(
            select_cutoff(&errors, CutoffPolicy::MaxError).unwrap(),
            MIN_CUTOFF
        );
    }

    #[test]
    fn cutoff_unreachable_count_falls_back_to_max() {
        // ceil(0.6 * 4) = 3, but no error has three strictly below it.
        let errors = [1.0, 2.0, 2.0, 2.0];
        assert_eq!(
            select_cutoff(&errors, CutoffPolicy::Quantile(0.6)).unwrap(),
            2.0
        );
    }

    #[test]
    fn market_with_unanimous_truth_rewards_everyone_at_beta() {
        let config = MarketConfig {
            rounds: 1,
            ..MarketConfig::default()
        };
        let mut agents = vec![
            ScriptAgent::new("a", 11.0, 0.5),
            ScriptAgent::new("b", 11.0, 0.25),
        ];
        let ids: Vec<AgentId> = agents.iter().map(|a| a.id.clone()).collect();
        let mut ledger = CapitalLedger::with_standard_capital(ids);
        let outcome = run_market(&record(11.0), &mut agents, &config, &mut ledger).unwrap();
        assert_eq!(outcome.final_prediction, 11.0);
        assert_eq!(outcome.cutoff, MIN_CUTOFF);
        for entry in &outcome.agents {
            let settled = entry.outcome.as_ref().unwrap();
            assert_eq!(settled.reward_multiplier, config.reward_beta);
            assert_eq!(settled.revenue, config.reward_beta * settled.stake);
        }
    }

    #[test]
    fn single_agent_market_echoes_the_agent() {
        let config = MarketConfig {
            rounds: 1,
            cutoff_policy: CutoffPolicy::MaxError,
            ..MarketConfig::default()
        };
        let mut agents = vec![ScriptAgent::new("solo", 8.25, 0.9)];
        let mut ledger = CapitalLedger::with_standard_capital([AgentId::from("solo")]);
        let outcome = run_market(&record(9.0), &mut agents, &config, &mut ledger).unwrap();
        assert_eq!(outcome.final_prediction, 8.25);
        assert_eq!(outcome.cutoff, 0.75);
        // Its error sits exactly at the cutoff, so the reward is zero and
        // the stake is lost; capital stays positive because max_rpt < 1.
        let settled = outcome.agents[0].outcome.as_ref().unwrap();
        assert_eq!(settled.reward_multiplier, 0.0);
        let remaining = ledger.capital(&AgentId::from("solo"));
        assert!((remaining - 10.0).abs() < 1e-12 && remaining > 0.0);
    }

    #[test]
    fn three_agent_market_matches_hand_computation() {
        let config = MarketConfig {
            rounds: 1,
            reward_p: 1.0,
            reward_beta: 2.0,
            cutoff_policy: CutoffPolicy::MaxError,
            ..MarketConfig::default()
        };
        // Stakes 9, 9, 0.01 out of capital 100.
        let mut agents = vec![
            ScriptAgent::new("a", 10.0, 0.09),
            ScriptAgent::new("b", 12.0, 0.09),
            ScriptAgent::new("c", 20.0, 0.0001),
        ];
        let ids: Vec<AgentId> = agents.iter().map(|a| a.id.clone()).collect();
        let mut ledger = CapitalLedger::with_standard_capital(ids);
        let outcome = run_market(&record(11.0), &mut agents, &config, &mut ledger).unwrap();

        let expected_final = (10.0 * 9.0 + 12.0 * 9.0 + 20.0 * 0.01) / (9.0 + 9.0 + 0.01);
        assert!((outcome.final_prediction - expected_final).abs() < 1e-12);
        assert_eq!(outcome.cutoff, 9.0);
        let mults: Vec<f64> = outcome
            .agents
            .iter()
            .map(|a| a.outcome.as_ref().unwrap().reward_multiplier)
            .collect();
        assert!((mults[0] - 2.0 * (1.0 - 1.0 / 9.0)).abs() < 1e-12);
        assert!((mults[1] - 2.0 * (1.0 - 1.0 / 9.0)).abs() < 1e-12);
        assert_eq!(mults[2], 0.0);
    }

    #[test]
    fn interim_rounds_do_not_touch_capital() {
        let config = MarketConfig {
            rounds: 3,
            ..MarketConfig::default()
        };
        let mut agents = vec![
            ScriptAgent::new("a", 5.0, 0.5),
            ScriptAgent::new("b", 7.0, 0.5),
        ];
        let ids: Vec<AgentId> = agents.iter().map(|a| a.id.clone()).collect();
        let mut ledger = CapitalLedger::with_standard_capital(ids.clone());
        let outcome = run_market(&record(6.0), &mut agents, &config, &mut ledger).unwrap();
        assert_eq!(outcome.rounds.len(), 3);
        // Only the final round settled: exactly one stake was deducted per
        // agent even though three rounds of bids were placed.
        for id in &ids {
            let settled = outcome
                .agents
                .iter()
                .find(|a| &a.agent_id == id)
                .and_then(|a| a.outcome.as_ref())
                .unwrap();
            let expected = INITIAL_CAPITAL + settled.net_revenue;
            assert_eq!(ledger.capital(id).to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn markets_are_bit_reproducible() {
        let config = MarketConfig::default();
        let run = || {
            let mut agents = vec![
                ScriptAgent::new("a", 1.25, 0.9),
                ScriptAgent::new("b", 0.75, 0.3),
                ScriptAgent::new("c", 2.5, 0.001),
            ];
            let ids: Vec<AgentId> = agents.iter().map(|a| a.id.clone()).collect();
            let mut ledger = CapitalLedger::with_standard_capital(ids);
            let outcome = run_market(&record(1.0), &mut agents, &config, &mut ledger).unwrap();
            (outcome.final_prediction, outcome.cutoff, ledger.total())
        };
        let (f1, c1, t1) = run();
        let (f2, c2, t2) = run();
        assert_eq!(f1.to_bits(), f2.to_bits());
        assert_eq!(c1.to_bits(), c2.to_bits());
        assert_eq!(t1.to_bits(), t2.to_bits());
    }

    proptest! {
        /// Scaling every stake by a common positive factor leaves the
        /// integrated prediction unchanged (up to float rounding).
        #[test]
        fn integration_is_stake_scale_invariant(
            preds in proptest::collection::vec(-100.0f64..100.0, 1..8),
            stakes in proptest::collection::vec(0.01f64..10.0, 1..8),
            lambda in 0.001f64..1000.0,
        ) {
            let n = preds.len().min(stakes.len());
            let base: Vec<Bid> = (0..n).map(|i| bid("x", preds[i], stakes[i])).collect();
            let scaled: Vec<Bid> = (0..n).map(|i| bid("x", preds[i], stakes[i] * lambda)).collect();
            let a = integrate(&base).unwrap();
            let b = integrate(&scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        /// The reward multiplier is nonnegative, equals beta at zero
        /// error, vanishes at and beyond the cutoff, and never increases
        /// as the error grows.
        #[test]
        fn reward_boundaries_and_monotonicity(
            c in 0.01f64..50.0,
            p in 0.1f64..10.0,
            beta in 0.1f64..10.0,
        ) {
            prop_assert_eq!(reward_multiplier(0.0, c, p, beta), beta);
            prop_assert_eq!(reward_multiplier(c, c, p, beta), 0.0);
            let mut prev = f64::INFINITY;
            for i in 0..=200 {
                let e = 1.5 * c * i as f64 / 200.0;
                let m = reward_multiplier(e, c, p, beta);
                prop_assert!(m >= 0.0);
                prop_assert!(m <= prev + 1e-12);
                prev = m;
            }
        }

        /// Revenue rises with stake at fixed error and never rises with
        /// error at fixed stake.
        #[test]
        fn incentives_point_the_right_way(
            c in 0.5f64..5.0,
            e1 in 0.0f64..1.0,
            e2 in 0.0f64..1.0,
            s1 in 0.1f64..10.0,
            s2 in 0.1f64..10.0,
        ) {
            let (lo_err, hi_err) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let (lo_stake, hi_stake) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let m_lo = reward_multiplier(lo_err * c, c, 2.0, 3.0);
            let m_hi = reward_multiplier(hi_err * c, c, 2.0, 3.0);
            prop_assert!(m_hi <= m_lo + 1e-12);
            prop_assert!(m_lo * hi_stake >= m_lo * lo_stake);
        }

        /// Random markets never drive any balance negative, and with
        /// max_rpt < 1 every balance stays strictly positive.
        #[test]
        fn ledger_stays_solvent(
            preds in proptest::collection::vec(-10.0f64..10.0, 2..6),
            fracs in proptest::collection::vec(0.0f64..0.9, 2..6),
            truth in -10.0f64..10.0,
            markets in 1u32..10,
        ) {
            let n = preds.len().min(fracs.len());
            let config = MarketConfig { rounds: 1, ..MarketConfig::default() };
            let mut agents: Vec<ScriptAgent> = (0..n)
                .map(|i| ScriptAgent::new(&format!("a{i}"), preds[i], fracs[i]))
                .collect();
            let ids: Vec<AgentId> = agents.iter().map(|a| a.id.clone()).collect();
            let mut ledger = CapitalLedger::with_standard_capital(ids.clone());
            for m in 0..markets {
                let rec = Record {
                    id: m as u64,
                    timestamp: None,
                    features: FeatureVector::dense(vec![]),
                    true_value: truth,
                };
                run_market(&rec, &mut agents, &config, &mut ledger).unwrap();
            }
            for id in &ids {
                prop_assert!(ledger.capital(id) > 0.0);
            }
        }
    }
}
