//! Participating agents: a learner produces the base prediction, a
//! trading strategy turns it into bids, and settlement drives retraining
//! and strategy adaptation.
//!
//! Two strategies are provided. The constant strategy always submits the
//! base prediction and stakes the maximum allowed fraction of capital.
//! The Q-learning strategy may shift its prediction toward the broadcast
//! market prediction in later rounds, choosing between preserving and
//! changing per discretized state, and sizes its stake by whether it
//! expects the market to pay off.
//!
//! Each settled market is summarized per agent as a string of action
//! codes, one per round: `A` abstained (whole market), `M` first-market
//! minimum-stake rule, `K` constant rule, `P` preserved, `C` changed.

use std::collections::BTreeMap;

use log::warn;

use crate::learner::{FeatureVector, OnlineRegressor};
use crate::market::{AgentId, Bid, MarketAgent, MarketConfig, RewardParams};

/// Default relative-gap bucket boundaries for state discretization.
/// Bucket `i` covers `[edges[i-1], edges[i])`; the final bucket is
/// unbounded above, giving `edges.len() + 1` buckets.
pub const DEFAULT_BUCKET_EDGES: [f64; 6] = [0.01, 0.05, 0.10, 0.25, 0.50, 1.00];

/// Shift fraction applied on a Change action when no learned value
/// exists yet for the state: the midpoint of the valid range.
pub const DEFAULT_DELTA: f64 = 0.5;

/// A discretized decision state: how far the agent's prediction sits
/// from the market consensus, and in which round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct QState {
    /// Index into the configured gap buckets.
    pub diff_bucket: usize,
    /// 1-based round; states exist only from round 2 on, where a
    /// previous-round market prediction is available.
    pub round_index: u32,
}

/// The two actions available in a decision state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyAction {
    /// Keep the current prediction.
    Preserve,
    /// Shift the prediction toward the market consensus.
    Change,
}

/// Fixed-ratio bid: the base prediction staked at the maximum allowed
/// fraction of capital.
pub fn constant_bid(
    agent_id: &AgentId,
    prediction: f64,
    capital: f64,
    config: &MarketConfig,
) -> Bid {
    Bid {
        agent_id: agent_id.clone(),
        prediction,
        stake: config.max_rpt * capital,
    }
}

/// Maps the gap between own and market prediction into a decision state.
///
/// The gap is relative, `|own - market| / max(|market|, 1e-6)`, so states
/// transfer across target magnitudes.
pub fn discretize_state(
    edges: &[f64],
    own_prediction: f64,
    prev_market_prediction: f64,
    round_index: u32,
) -> QState {
    debug_assert!(round_index >= 2, "states exist only from round 2 on");
    let gap =
        (own_prediction - prev_market_prediction).abs() / prev_market_prediction.abs().max(1e-6);
    let diff_bucket = edges.iter().take_while(|&&edge| edge <= gap).count();
    QState {
        diff_bucket,
        round_index,
    }
}

/// Expected reward multiplier under the assumption that the previous
/// round's market prediction is the truth, priced with the reward
/// parameters realized by the previous market.
pub fn estimate_expected_reward(
    own_prediction: f64,
    prev_market_prediction: f64,
    last_params: &RewardParams,
) -> f64 {
    last_params.multiplier((own_prediction - prev_market_prediction).abs())
}

/// Best-in-hindsight shift fraction: how far along the segment from the
/// agent's prediction to the market prediction the truth lay, clamped to
/// [0, 1]. Zero when the two predictions coincide, where shifting is a
/// no-op.
pub fn compute_delta(true_value: f64, agent_prediction: f64, market_prediction: f64) -> f64 {
    if market_prediction == agent_prediction {
        return 0.0;
    }
    ((true_value - agent_prediction).abs() / (market_prediction - agent_prediction).abs()).min(1.0)
}

/// State of the Q-learning trading strategy.
///
/// Q-values hold the counterfactual net revenue each action would have
/// earned the last time the state was visited: settlement overwrites
/// them rather than averaging, and likewise overwrites the stored best
/// shift fraction (optionally a running average via `average_delta`).
#[derive(Debug, Clone)]
pub struct QStrategy {
    bucket_edges: Vec<f64>,
    /// Per state: (net revenue for Preserve, net revenue for Change).
    q_table: BTreeMap<QState, (f64, f64)>,
    delta_store: BTreeMap<QState, f64>,
    average_delta: bool,
    delta_counts: BTreeMap<QState, u64>,
}

impl Default for QStrategy {
    fn default() -> Self {
        Self::new(DEFAULT_BUCKET_EDGES.to_vec(), false)
    }
}

impl QStrategy {
    pub fn new(bucket_edges: Vec<f64>, average_delta: bool) -> Self {
        assert!(
            bucket_edges.windows(2).all(|w| w[0] < w[1]),
            "bucket edges must be strictly increasing"
        );
        Self {
            bucket_edges,
            q_table: BTreeMap::new(),
            delta_store: BTreeMap::new(),
            average_delta,
            delta_counts: BTreeMap::new(),
        }
    }

    fn discretize(&self, own: f64, market: f64, round: u32) -> QState {
        discretize_state(&self.bucket_edges, own, market, round)
    }

    /// Greedy action choice: Change only when its stored value strictly
    /// beats Preserve; ties and unseen states preserve, never distorting
    /// a prediction without evidence.
    fn decide(&self, state: &QState) -> StrategyAction {
        match self.q_table.get(state) {
            Some(&(preserve, change)) if change > preserve => StrategyAction::Change,
            _ => StrategyAction::Preserve,
        }
    }

    fn delta_for(&self, state: &QState) -> f64 {
        self.delta_store.get(state).copied().unwrap_or(DEFAULT_DELTA)
    }

    fn store_delta(&mut self, state: QState, delta: f64) {
        if self.average_delta {
            let count = self.delta_counts.entry(state).or_insert(0);
            let old = self.delta_store.get(&state).copied().unwrap_or(0.0);
            *count += 1;
            self.delta_store
                .insert(state, old + (delta - old) / *count as f64);
        } else {
            self.delta_store.insert(state, delta);
        }
    }
}

/// Trading strategy of one agent.
pub enum Strategy {
    /// Always the base prediction at the maximum stake fraction.
    Constant,
    /// Prediction shifting and stake sizing learned per state.
    QLearning(QStrategy),
}

/// One decision state visited during the current market, with the inputs
/// needed to evaluate both actions in hindsight at settlement.
struct Visited {
    state: QState,
    base_prediction: f64,
    market_prediction: f64,
}

/// Per-market working state, reset by settlement.
struct Scratch {
    /// Features restricted to the agent's streams.
    features: FeatureVector,
    /// Base prediction, computed once when the market opens; `None`
    /// when the agent abstained.
    base: Option<f64>,
    /// The currently submitted prediction; starts at the base and moves
    /// on Change actions.
    current: f64,
    /// Capital observed at bid time, used to reconstruct counterfactual
    /// stakes at settlement.
    capital_at_bid: f64,
    visited: Vec<Visited>,
    actions: String,
}

/// A market participant: learner, stream selection, and strategy.
///
/// Implements [`MarketAgent`]; the market engine drives it through
/// `begin_market`, one `bid` per round, and `settle`. Constant-strategy
/// participants never read or write any Q-learning state (the strategy
/// enum carries none for them).
pub struct MarketParticipant {
    id: AgentId,
    /// Indices of the feature columns this agent sees.
    stream_indices: Vec<usize>,
    learner: Box<dyn OnlineRegressor>,
    strategy: Strategy,
    markets_seen: u64,
    last_reward_params: Option<RewardParams>,
    scratch: Option<Scratch>,
    /// Action codes of the most recently settled market.
    last_actions: String,
    /// Base prediction of the most recently settled market.
    last_base_prediction: Option<f64>,
}

impl MarketParticipant {
    pub fn new(
        id: AgentId,
        stream_indices: Vec<usize>,
        learner: Box<dyn OnlineRegressor>,
        strategy: Strategy,
    ) -> Self {
        assert_eq!(
            learner.dim(),
            stream_indices.len(),
            "learner dimensionality must match the stream selection"
        );
        Self {
            id,
            stream_indices,
            learner,
            strategy,
            markets_seen: 0,
            last_reward_params: None,
            scratch: None,
            last_actions: String::new(),
            last_base_prediction: None,
        }
    }

    pub fn markets_seen(&self) -> u64 {
        self.markets_seen
    }

    /// Action codes of the most recently settled market, e.g. `"KP"`.
    pub fn last_actions(&self) -> &str {
        &self.last_actions
    }

    /// Base prediction of the most recently settled market, `None` when
    /// the agent abstained.
    pub fn last_base_prediction(&self) -> Option<f64> {
        self.last_base_prediction
    }

    pub fn is_q_learning(&self) -> bool {
        matches!(self.strategy, Strategy::QLearning(_))
    }

    /// Stake the betting rule picks for a prediction: the maximum
    /// fraction when the expected multiplier under the previous market's
    /// reward parameters breaks even, the minimum fraction otherwise.
    fn rule_stake(
        prediction: f64,
        market: f64,
        last_params: &RewardParams,
        capital: f64,
        config: &MarketConfig,
    ) -> f64 {
        if estimate_expected_reward(prediction, market, last_params) >= 1.0 {
            config.max_rpt * capital
        } else {
            config.min_rpt * capital
        }
    }

    /// Applies the settled market to the Q-learning state: for every
    /// visited state, both actions are re-priced in hindsight with the
    /// realized reward parameters (cutoff held fixed) and the stake the
    /// betting rule would have chosen, and the results overwrite the
    /// stored values.
    fn update_strategy(scratch: &Scratch, strategy: &mut QStrategy, truth: f64,
        realized: &RewardParams, prior: &RewardParams, config: &MarketConfig) {
        for visited in &scratch.visited {
            let best_delta =
                compute_delta(truth, visited.base_prediction, visited.market_prediction);
            let preserve_pred = visited.base_prediction;
            let change_pred = visited.base_prediction
                + best_delta * (visited.market_prediction - visited.base_prediction);

            let net = |prediction: f64| {
                let stake = Self::rule_stake(
                    prediction,
                    visited.market_prediction,
                    prior,
                    scratch.capital_at_bid,
                    config,
                );
                let multiplier = realized.multiplier((truth - prediction).abs());
                stake * (multiplier - 1.0)
            };
            strategy
                .q_table
                .insert(visited.state, (net(preserve_pred), net(change_pred)));
            strategy.store_delta(visited.state, best_delta);
        }
    }
}

impl MarketAgent for MarketParticipant {
    fn id(&self) -> &AgentId {
        &self.id
    }

    fn begin_market(&mut self, features: &FeatureVector) -> bool {
        let restricted = features.select(&self.stream_indices);
        let base = match self.learner.predict(&restricted) {
            Ok(p) if p.is_finite() => Some(p),
            Ok(p) => {
                warn!("agent {} abstains: non-finite prediction {p}", self.id);
                None
            }
            Err(err) => {
                warn!("agent {} abstains: {err}", self.id);
                None
            }
        };
        let participating = base.is_some();
        self.scratch = Some(Scratch {
            features: restricted,
            base,
            current: base.unwrap_or(0.0),
            capital_at_bid: 0.0,
            visited: Vec::new(),
            actions: if participating {
                String::new()
            } else {
                "A".to_string()
            },
        });
        participating
    }

    fn bid(&mut self, round: u32, interim: Option<f64>, capital: f64, config: &MarketConfig) -> Bid {
        let scratch = self
            .scratch
            .as_mut()
            .expect("bid is only called on an open market");
        scratch.capital_at_bid = capital;

        let (prediction, stake, code) = match &mut self.strategy {
            Strategy::Constant => (scratch.current, config.max_rpt * capital, 'K'),
            Strategy::QLearning(q) => {
                if self.markets_seen == 0 {
                    // First market ever: minimum stake in every round, no
                    // reward history to reason from yet.
                    (scratch.current, config.min_rpt * capital, 'M')
                } else {
                    match interim {
                        None => (scratch.current, config.max_rpt * capital, 'K'),
                        Some(market) => {
                            let state = q.discretize(scratch.current, market, round);
                            scratch.visited.push(Visited {
                                state,
                                base_prediction: scratch.base.expect("participant has a base"),
                                market_prediction: market,
                            });
                            let code = match q.decide(&state) {
                                StrategyAction::Preserve => 'P',
                                StrategyAction::Change => {
                                    let delta = q.delta_for(&state);
                                    scratch.current += delta * (market - scratch.current);
                                    'C'
                                }
                            };
                            let last = self
                                .last_reward_params
                                .as_ref()
                                .expect("markets_seen > 0 implies settled reward params");
                            let stake =
                                Self::rule_stake(scratch.current, market, last, capital, config);
                            (scratch.current, stake, code)
                        }
                    }
                }
            }
        };
        scratch.actions.push(code);
        Bid {
            agent_id: self.id.clone(),
            prediction,
            stake,
        }
    }

    fn settle(&mut self, true_value: f64, params: &RewardParams, config: &MarketConfig) {
        if let Some(scratch) = self.scratch.take() {
            if let (Strategy::QLearning(q), Some(prior)) =
                (&mut self.strategy, self.last_reward_params)
            {
                Self::update_strategy(&scratch, q, true_value, params, &prior, config);
            }
            if let Err(err) = self.learner.train(&scratch.features, true_value) {
                warn!("agent {} skipped retraining: {err}", self.id);
            }
            self.last_actions = scratch.actions;
            self.last_base_prediction = scratch.base;
        }
        self.last_reward_params = Some(*params);
        self.markets_seen += 1;
    }
}
