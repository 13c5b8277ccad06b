//! Built-in verification suite behind the `check` CLI subcommand.
//!
//! Nine checks cover the engine's exact arithmetic (reward curve shape,
//! settlement against a direct recomputation, determinism, ledger audit,
//! learner sanity) and the behavioral claims the shipped presets are
//! tuned to exhibit (the market tracks its best agent, the adaptive
//! strategy pays off, action mixes follow stream quality). The
//! behavioral checks run every shipped preset at seeds 1 through 10,
//! so a full [`run_all`] takes a couple of minutes on a laptop.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{QualityTier, Record};
use crate::learner::{FeatureVector, LearnerSpec, OnlineRegressor, SgdLinear};
use crate::market::{
    run_market, AgentId, Bid, CapitalLedger, CutoffPolicy, MarketAgent, MarketConfig,
    MarketError, RewardParams, MIN_CUTOFF,
};

use super::config::ExperimentSpec;
use super::metrics::{action_popularity, compare_paired, DEFAULT_BOOTSTRAP_RESAMPLES};
use super::presets;
use super::report::RunReport;
use super::{run_experiment, run_seed_range, HarnessError};

/// Seeds used by every behavioral check.
pub const CHECK_SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

/// Result of one check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    /// 1-based position in the suite.
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    /// Human-readable evidence: counts, margins, timings.
    pub detail: String,
}

impl CheckOutcome {
    fn new(id: usize, name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            id,
            name,
            passed,
            detail,
        }
    }
}

/// One preset executed at every check seed with both strategies.
pub struct PresetPair {
    pub preset: &'static str,
    pub adaptive_runs: Vec<RunReport>,
    pub constant_runs: Vec<RunReport>,
}

/// Every report the behavioral checks share.
pub struct HypothesisRuns {
    pub presets: Vec<PresetPair>,
    pub mixed_learner_runs: Vec<RunReport>,
}

/// Runs the four tiered presets (both strategies) and the mixed-learner
/// preset at every check seed. This is the expensive part of the suite;
/// the individual checks only aggregate the reports.
pub fn collect_hypothesis_runs() -> Result<HypothesisRuns, HarnessError> {
    let mut pairs = Vec::new();
    for preset in ["type1", "type2", "type3", "type4"] {
        let spec = presets::experiment_preset(preset).expect("shipped preset");
        let adaptive_runs = run_seed_range(&spec, &CHECK_SEEDS)?;
        let mut constant = spec.clone();
        constant.name = format!("{preset}_constant");
        constant
            .roster
            .as_mut()
            .expect("tiered presets use a roster")
            .strategy = "constant".to_string();
        let constant_runs = run_seed_range(&constant, &CHECK_SEEDS)?;
        pairs.push(PresetPair {
            preset,
            adaptive_runs,
            constant_runs,
        });
    }
    let set2 = presets::experiment_preset("set2").expect("shipped preset");
    let mixed_learner_runs = run_seed_range(&set2, &CHECK_SEEDS)?;
    Ok(HypothesisRuns {
        presets: pairs,
        mixed_learner_runs,
    })
}

/// Runs the full suite in order and returns one outcome per check.
pub fn run_all() -> Result<Vec<CheckOutcome>, HarnessError> {
    let runs = collect_hypothesis_runs()?;
    Ok(vec![
        check_reward_curve(),
        check_market_recomputation(),
        check_system_tracks_best_agent(&runs),
        check_adaptive_vs_constant(&runs),
        check_action_mix_by_tier(&runs),
        check_mixed_learner_market(&runs),
        check_market_vs_standalone(&runs),
        check_determinism_and_audit(&runs)?,
        check_learner_sanity(),
    ])
}

/// Check 1: the reward curve hits its endpoints, never rises, and bends
/// the documented way for every shipped exponent.
pub fn check_reward_curve() -> CheckOutcome {
    const GRID: usize = 1_000;
    const TOL: f64 = 1e-9;
    let start = Instant::now();

    let mut exponents: Vec<f64> = (2..=10).map(|k| 1.0 / k as f64).collect();
    exponents.extend((1..=10).map(|k| k as f64));
    debug_assert_eq!(exponents.len(), 19);

    let mut failures: Vec<String> = Vec::new();
    for &p in &exponents {
        let curve: Vec<f64> = (0..GRID)
            .map(|i| {
                let error = i as f64 / (GRID - 1) as f64;
                crate::market::reward_multiplier(error, 1.0, p, 1.0)
            })
            .collect();
        if (curve[0] - 1.0).abs() > TOL {
            failures.push(format!("p={p}: reward(0) = {} != beta", curve[0]));
        }
        if curve[GRID - 1].abs() > TOL {
            failures.push(format!("p={p}: reward(c) = {} != 0", curve[GRID - 1]));
        }
        if let Some(i) = (1..GRID).find(|&i| curve[i] > curve[i - 1] + TOL) {
            failures.push(format!("p={p}: rises at grid point {i}"));
        }
        // Second differences on the open interval: nonpositive for
        // p >= 1 (curve above the chord), nonnegative for p < 1.
        for i in 1..GRID - 1 {
            let dd = curve[i + 1] - 2.0 * curve[i] + curve[i - 1];
            let bad = if p >= 1.0 { dd > TOL } else { dd < -TOL };
            if bad {
                failures.push(format!("p={p}: curvature sign flips at grid point {i}"));
                break;
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(1) {
        failures.push(format!("took {elapsed:?}, budget 1s"));
    }
    CheckOutcome::new(
        1,
        "reward curve shape",
        failures.is_empty(),
        if failures.is_empty() {
            format!("19 exponents on {GRID}-point grids in {elapsed:?}")
        } else {
            failures.join("; ")
        },
    )
}

/// Scripted one-round bidder for the recomputation check.
struct FixedBidAgent {
    id: AgentId,
    participate: bool,
    prediction: f64,
    stake: f64,
}

impl MarketAgent for FixedBidAgent {
    fn id(&self) -> &AgentId {
        &self.id
    }

    fn begin_market(&mut self, _features: &FeatureVector) -> bool {
        self.participate
    }

    fn bid(&mut self, _round: u32, _interim: Option<f64>, _capital: f64, _config: &MarketConfig) -> Bid {
        Bid {
            agent_id: self.id.clone(),
            prediction: self.prediction,
            stake: self.stake,
        }
    }

    fn settle(&mut self, _true_value: f64, _params: &RewardParams, _config: &MarketConfig) {}
}

/// Relative agreement to 1e-9, with an absolute floor of one so values
/// near zero are compared absolutely.
fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (a.abs().max(b.abs()).max(1.0))
}

/// Check 2: a thousand random one-round markets settle exactly as a
/// direct recomputation of the weighted mean, the cutoff, and the
/// reward arithmetic says they should.
pub fn check_market_recomputation() -> CheckOutcome {
    const MARKETS: usize = 1_000;
    const INITIAL: f64 = 100.0;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let mut failures: Vec<String> = Vec::new();
    let mut settled = 0usize;
    let mut empty = 0usize;

    'market: for market_idx in 0..MARKETS {
        let n = rng.random_range(1..=5usize);
        let policy = if rng.random::<f64>() < 0.2 {
            CutoffPolicy::MaxError
        } else {
            CutoffPolicy::Quantile(rng.random_range(0.05..=1.0))
        };
        let config = MarketConfig {
            rounds: 1,
            reward_p: rng.random_range(0.2..6.0),
            reward_beta: rng.random_range(0.5..5.0),
            cutoff_policy: policy,
            ..MarketConfig::default()
        };
        let truth: f64 = rng.random_range(-10.0..10.0);
        let zero_stakes = rng.random::<f64>() < 0.05;
        let mut agents: Vec<FixedBidAgent> = (0..n)
            .map(|i| FixedBidAgent {
                id: AgentId::new(format!("a{i}")),
                participate: rng.random::<f64>() >= 0.1,
                prediction: rng.random_range(-12.0..12.0),
                stake: if zero_stakes {
                    0.0
                } else {
                    match rng.random_range(0..10u32) {
                        0 => 0.0,
                        1 => rng.random_range(100.0..130.0),
                        _ => rng.random_range(0.0..90.0),
                    }
                },
            })
            .collect();
        let mut ledger =
            CapitalLedger::with_standard_capital(agents.iter().map(|a| a.id.clone()));
        let record = Record {
            id: market_idx as u64,
            timestamp: None,
            features: FeatureVector::dense(vec![]),
            true_value: truth,
        };

        let active: Vec<(f64, f64)> = agents
            .iter()
            .filter(|a| a.participate)
            .map(|a| (a.prediction, a.stake.clamp(0.0, INITIAL)))
            .collect();

        let outcome = match run_market(&record, &mut agents, &config, &mut ledger) {
            Ok(o) => o,
            Err(MarketError::NoParticipants) if active.is_empty() => {
                empty += 1;
                continue;
            }
            Err(e) => {
                failures.push(format!("market {market_idx}: unexpected error {e}"));
                continue;
            }
        };

        // Weighted mean, recomputed the obvious way.
        let stake_sum: f64 = active.iter().map(|&(_, s)| s).sum();
        let expected_final = if stake_sum > 0.0 {
            active.iter().map(|&(p, s)| p * s).sum::<f64>() / stake_sum
        } else {
            active.iter().map(|&(p, _)| p).sum::<f64>() / active.len() as f64
        };
        if !close(outcome.final_prediction, expected_final) {
            failures.push(format!(
                "market {market_idx}: final {} != {expected_final}",
                outcome.final_prediction
            ));
            continue;
        }

        // Cutoff, recomputed with a quadratic strictly-below scan.
        let errors: Vec<f64> = active.iter().map(|&(p, _)| (p - truth).abs()).collect();
        let max_error = errors.iter().fold(0.0_f64, |m, &e| m.max(e));
        let selected = match config.cutoff_policy {
            CutoffPolicy::MaxError => max_error,
            CutoffPolicy::Quantile(q) => {
                let need = ((q * errors.len() as f64) - 1e-9).ceil().max(1.0) as usize;
                let mut sorted = errors.clone();
                sorted.sort_unstable_by(f64::total_cmp);
                sorted
                    .iter()
                    .copied()
                    .find(|&cand| sorted.iter().filter(|&&e| e < cand).count() >= need)
                    .unwrap_or(max_error)
            }
        };
        let expected_cutoff = if selected > 0.0 { selected } else { MIN_CUTOFF };
        if !close(outcome.cutoff, expected_cutoff) {
            failures.push(format!(
                "market {market_idx}: cutoff {} != {expected_cutoff}",
                outcome.cutoff
            ));
            continue;
        }

        // Revenues and ledger deltas per participant.
        let mut cell = 0usize;
        for agent in &agents {
            let entry = outcome
                .agents
                .iter()
                .find(|o| o.agent_id == agent.id)
                .expect("every agent appears in the outcome");
            if !agent.participate {
                if entry.outcome.is_some() {
                    failures.push(format!("market {market_idx}: abstainer settled"));
                    continue 'market;
                }
                if ledger.capital(&agent.id) != INITIAL {
                    failures.push(format!("market {market_idx}: abstainer charged"));
                    continue 'market;
                }
                continue;
            }
            let (prediction, stake) = active[cell];
            cell += 1;
            let error = (prediction - truth).abs();
            let raw = config.reward_beta * (1.0 - (error / expected_cutoff).powf(config.reward_p));
            let mult = if error >= expected_cutoff { 0.0 } else { raw.max(0.0) };
            let revenue = mult * stake;
            let net = revenue - stake;
            let settled_bid = entry.outcome.as_ref().expect("participant settled");
            let checks = [
                ("stake", settled_bid.stake, stake),
                ("error", settled_bid.error, error),
                ("multiplier", settled_bid.reward_multiplier, mult),
                ("revenue", settled_bid.revenue, revenue),
                ("net", settled_bid.net_revenue, net),
                ("capital", ledger.capital(&agent.id), INITIAL + net),
            ];
            for (what, got, expected) in checks {
                if !close(got, expected) {
                    failures.push(format!(
                        "market {market_idx} agent {}: {what} {got} != {expected}",
                        agent.id
                    ));
                    continue 'market;
                }
            }
        }
        settled += 1;
    }

    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(5) {
        failures.push(format!("took {elapsed:?}, budget 5s"));
    }
    CheckOutcome::new(
        2,
        "market matches direct recomputation",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{settled} settled + {empty} all-abstain markets agreed in {elapsed:?}")
        } else {
            failures.join("; ")
        },
    )
}

/// Check 3: on every tiered preset the market's error stays within 2%
/// of its best individual forecaster and usually beats it outright.
pub fn check_system_tracks_best_agent(runs: &HypothesisRuns) -> CheckOutcome {
    let mut passed = true;
    let mut lines = Vec::new();
    for pair in &runs.presets {
        let total = pair.adaptive_runs.len();
        let mut within = 0usize;
        let mut strictly = 0usize;
        for report in &pair.adaptive_runs {
            let best = report
                .best_agent_base_mae()
                .expect("participating agents have a base error");
            if report.system_mae <= 1.02 * best {
                within += 1;
            }
            if report.system_mae < best {
                strictly += 1;
            }
        }
        let ok = within == total && strictly >= 7;
        passed &= ok;
        lines.push(format!(
            "{}: within 1.02x in {within}/{total}, strictly better in {strictly}/{total}",
            pair.preset
        ));
    }
    CheckOutcome::new(3, "system tracks best agent", passed, lines.join("; "))
}

/// Check 4: with the same seeds and agents, the adaptive strategy's
/// market error is at most the constant strategy's in at least 7 of 10
/// seeds per preset. The known type3 exception is tolerated.
pub fn check_adaptive_vs_constant(runs: &HypothesisRuns) -> CheckOutcome {
    let mut passed = true;
    let mut lines = Vec::new();
    for pair in &runs.presets {
        let wins = pair
            .adaptive_runs
            .iter()
            .zip(&pair.constant_runs)
            .filter(|(a, c)| a.system_mae <= c.system_mae)
            .count();
        let total = pair.adaptive_runs.len();
        let tolerated = pair.preset == "type3";
        let ok = wins >= 7 || tolerated;
        passed &= ok;
        lines.push(format!(
            "{}: adaptive <= constant in {wins}/{total}{}",
            pair.preset,
            if wins < 7 && tolerated {
                " (tolerated exception)"
            } else {
                ""
            }
        ));
    }
    CheckOutcome::new(4, "adaptive strategy beats constant", passed, lines.join("; "))
}

/// Check 5: on the type4 preset, low-tier agents abandon their own
/// forecasts visibly more often than high-tier agents (gap >= 0.10 on
/// average), and preserving stays the high tier's most popular action.
pub fn check_action_mix_by_tier(runs: &HypothesisRuns) -> CheckOutcome {
    let pair = runs
        .presets
        .iter()
        .find(|p| p.preset == "type4")
        .expect("type4 preset runs");
    let mut gaps = Vec::new();
    let mut high_preserve = Vec::new();
    let mut missing = 0usize;
    for report in &pair.adaptive_runs {
        let shares = action_popularity(report);
        match (shares.get(&QualityTier::Low), shares.get(&QualityTier::High)) {
            (Some(low), Some(high)) => {
                gaps.push(low.change - high.change);
                high_preserve.push(high.preserve);
            }
            _ => missing += 1,
        }
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    let mean_gap = mean(&gaps);
    let mean_preserve = mean(&high_preserve);
    let passed = missing == 0 && mean_gap >= 0.10 && mean_preserve > 0.5;
    CheckOutcome::new(
        5,
        "action mix follows stream quality",
        passed,
        format!(
            "mean change-fraction gap (low - high) {mean_gap:.3}, high-tier preserve share {mean_preserve:.3}{}",
            if missing > 0 {
                format!(", {missing} seeds missing a tier")
            } else {
                String::new()
            }
        ),
    )
}

/// Check 6: the mixed-learner market stays within 2% of the best
/// standalone learner in at least 7 of 10 seeds.
pub fn check_mixed_learner_market(runs: &HypothesisRuns) -> CheckOutcome {
    let total = runs.mixed_learner_runs.len();
    let mut within = 0usize;
    for report in &runs.mixed_learner_runs {
        let best_baseline = report
            .baselines
            .iter()
            .map(|b| b.mae)
            .fold(f64::INFINITY, f64::min);
        if report.system_mae <= 1.02 * best_baseline {
            within += 1;
        }
    }
    let passed = within >= 7;
    CheckOutcome::new(
        6,
        "mixed-learner market tracks best baseline",
        passed,
        format!("within 1.02x of the best standalone learner in {within}/{total} seeds"),
    )
}

/// Check 7: for at least 3 of the 5 learners, trading in the market
/// lowers the learner's error versus running it standalone, with a
/// pooled paired bootstrap interval that excludes zero.
pub fn check_market_vs_standalone(runs: &HypothesisRuns) -> CheckOutcome {
    let mut improved = 0usize;
    let mut lines = Vec::new();
    for name in LearnerSpec::all_names() {
        let mut submitted: Vec<f64> = Vec::new();
        let mut standalone: Vec<f64> = Vec::new();
        for report in &runs.mixed_learner_runs {
            let idx = report
                .agent_index(name)
                .expect("per-learner roster names agents after learners");
            let baseline = report
                .baselines
                .iter()
                .find(|b| b.learner == name)
                .expect("preset ships one baseline per learner");
            let truths = report.truths();
            for (i, err) in report.agent_submitted_errors(idx).iter().enumerate() {
                if let Some(err) = err {
                    submitted.push(*err);
                    standalone.push((baseline.predictions[i] - truths[i]).abs());
                }
            }
        }
        let cmp = compare_paired(&submitted, &standalone, DEFAULT_BOOTSTRAP_RESAMPLES, 7)
            .expect("pooled runs give thousands of pairs");
        let better = cmp.mean_diff < 0.0 && cmp.excludes_zero();
        if better {
            improved += 1;
        }
        lines.push(format!(
            "{name}: mean diff {:+.4} [{:+.4}, {:+.4}]{}",
            cmp.mean_diff,
            cmp.ci_low,
            cmp.ci_high,
            if better { " improved" } else { "" }
        ));
    }
    CheckOutcome::new(
        7,
        "market participation improves learners",
        improved >= 3,
        format!("{improved}/5 learners improved; {}", lines.join("; ")),
    )
}

/// Check 8: every behavioral run passes the ledger audit, and repeating
/// a run at the same seed reproduces the report byte for byte.
pub fn check_determinism_and_audit(runs: &HypothesisRuns) -> Result<CheckOutcome, HarnessError> {
    let mut failures: Vec<String> = Vec::new();
    let mut audited = 0usize;
    let all_reports = runs
        .presets
        .iter()
        .flat_map(|p| p.adaptive_runs.iter().chain(&p.constant_runs))
        .chain(&runs.mixed_learner_runs);
    for report in all_reports {
        if let Err(e) = report.audit_ledger() {
            failures.push(format!(
                "{} seed {}: {e}",
                report.experiment_name, report.seed
            ));
        }
        audited += 1;
    }

    let spec = presets::experiment_preset("type1").expect("shipped preset");
    let fresh = run_experiment(&spec, CHECK_SEEDS[0])?;
    let original = &runs.presets[0].adaptive_runs[0];
    if fresh.records_csv_string() != original.records_csv_string()
        || fresh.summary_string() != original.summary_string()
    {
        failures.push("repeated same-seed run differs".to_string());
    }

    Ok(CheckOutcome::new(
        8,
        "determinism and ledger audit",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{audited} runs audited; same-seed re-run byte-identical")
        } else {
            failures.join("; ")
        },
    ))
}

/// Check 9: the gradient learner recovers a known slope, its analytic
/// gradient matches finite differences, and a single-agent market is
/// bit-identical to the learner run standalone.
pub fn check_learner_sanity() -> CheckOutcome {
    let mut failures: Vec<String> = Vec::new();

    // Slope recovery on y = 3x + noise.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.1).expect("valid Gaussian");
    let mut model = SgdLinear::new(1, 0.01, 1);
    for _ in 0..500 {
        let x: f64 = rng.random_range(0.0..10.0);
        let y = 3.0 * x + noise.sample(&mut rng);
        model
            .train(&FeatureVector::dense(vec![x]), y)
            .expect("arity matches");
    }
    let at = |x: f64| {
        model
            .predict(&FeatureVector::dense(vec![x]))
            .expect("arity matches")
    };
    let slope = (at(7.0) - at(3.0)) / 4.0;
    if (slope - 3.0).abs() / 3.0 >= 0.05 {
        failures.push(format!("recovered slope {slope:.4}, wanted 3 within 5%"));
    }

    // Analytic gradient versus central finite differences.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-6;
    for _ in 0..50 {
        let dim = 3;
        let weights: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bias: f64 = rng.random_range(-2.0..2.0);
        let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: f64 = rng.random_range(-5.0..5.0);
        let (grad_w, grad_b) = SgdLinear::squared_loss_gradient(&weights, bias, &z, y);
        let mut numeric = Vec::with_capacity(dim + 1);
        for i in 0..dim {
            let mut up = weights.clone();
            let mut down = weights.clone();
            up[i] += h;
            down[i] -= h;
            numeric.push(
                (SgdLinear::squared_loss(&up, bias, &z, y)
                    - SgdLinear::squared_loss(&down, bias, &z, y))
                    / (2.0 * h),
            );
        }
        numeric.push(
            (SgdLinear::squared_loss(&weights, bias + h, &z, y)
                - SgdLinear::squared_loss(&weights, bias - h, &z, y))
                / (2.0 * h),
        );
        for (analytic, numeric) in grad_w.iter().chain([&grad_b]).zip(&numeric) {
            let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
            if rel >= 1e-5 {
                failures.push(format!(
                    "gradient mismatch: analytic {analytic}, finite difference {numeric}"
                ));
            }
        }
    }

    // A single constant agent is the whole market: its sealed forecasts
    // must equal the learner run standalone, bit for bit.
    let spec = ExperimentSpec::from_toml(
        r#"
        name = "parity"

        [dataset]
        kind = "synthetic"
        n_records = 120
        [[dataset.streams]]
        id = "s"
        tier = "medium"
        noise_sigma = 0.3

        [[agents]]
        name = "solo"
        learner = "sgd"
        strategy = "constant"

        [[baselines]]
        learner = "sgd"
    "#,
    )
    .expect("static spec parses");
    match run_experiment(&spec, 9) {
        Ok(report) => {
            let baseline = &report.baselines[0];
            let mismatches = report
                .rows
                .iter()
                .zip(&baseline.predictions)
                .filter(|(row, standalone)| {
                    row.market_prediction.to_bits() != standalone.to_bits()
                })
                .count();
            if mismatches > 0 {
                failures.push(format!(
                    "single-agent market differs from standalone learner on {mismatches}/120 records"
                ));
            }
        }
        Err(e) => failures.push(format!("parity run failed: {e}")),
    }

    CheckOutcome::new(
        9,
        "learner sanity",
        failures.is_empty(),
        if failures.is_empty() {
            "slope within 5%; gradients within 1e-5; single-agent market bit-identical".to_string()
        } else {
            failures.join("; ")
        },
    )
}
