//! Online regression models trained one record at a time.
//!
//! Every model implements [`OnlineRegressor`] and follows the prequential
//! protocol: callers must ask for a prediction of a record before revealing
//! that record's target via [`OnlineRegressor::train`]. Models never buffer
//! future information, so prediction quality can be read directly as
//! out-of-sample error.
//!
//! Shared conventions:
//!
//! * An untrained model predicts `0.0`.
//! * Missing feature entries are imputed with that feature's running mean
//!   (`0.0` before any observation of the feature).
//! * Feature standardization, where a model uses it, relies on running
//!   per-feature moments that are updated only by `train`, never by
//!   `predict`.

use std::collections::VecDeque;

use thiserror::Error;

/// Error raised by [`OnlineRegressor`] implementations.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum LearnerError {
    /// The presented feature vector does not match the model's arity.
    #[error("feature arity mismatch: model expects {expected} features, got {got}")]
    FeatureArity { expected: usize, got: usize },
}

/// One observation's feature readings, in a fixed column order.
///
/// `None` marks a missing reading (for example an unparseable CSV cell).
/// Models impute missing entries; the vector itself only records them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<Option<f64>>,
}

impl FeatureVector {
    /// Builds a vector from optional readings.
    pub fn new(values: Vec<Option<f64>>) -> Self {
        Self { values }
    }

    /// Builds a fully observed vector.
    pub fn dense(values: Vec<f64>) -> Self {
        Self {
            values: values.into_iter().map(Some).collect(),
        }
    }

    /// Number of feature slots (present or missing).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when the vector has no feature slots.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Reading at `index`, `None` when missing or out of range.
    pub fn get(&self, index: usize) -> Option<f64> {
        self.values.get(index).copied().flatten()
    }

    /// Iterates over the optional readings in column order.
    pub fn iter(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.values.iter().copied()
    }

    /// Projects the vector onto the given column indices, in order.
    ///
    /// Out-of-range indices become missing entries.
    pub fn select(&self, indices: &[usize]) -> FeatureVector {
        FeatureVector {
            values: indices.iter().map(|&i| self.get(i)).collect(),
        }
    }
}

/// A regression model consumed one `(features, target)` pair at a time.
pub trait OnlineRegressor: Send {
    /// Number of features the model was configured for.
    fn dim(&self) -> usize;

    /// Predicts the target for `x` without changing any model state.
    fn predict(&self, x: &FeatureVector) -> Result<f64, LearnerError>;

    /// Reveals the true target for `x` and updates the model.
    fn train(&mut self, x: &FeatureVector, y: f64) -> Result<(), LearnerError>;
}

/// Construction recipe for one of the shipped models.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnerSpec {
    /// Running mean of the targets; ignores every feature.
    Mean,
    /// Linear model fit by stochastic gradient descent on squared loss.
    SgdLinear { eta: f64, steps: u32 },
    /// k-nearest-neighbour average over a bounded history window.
    Knn { k: usize, window: usize },
    /// Single-feature least squares on the feature with the lowest
    /// running residual.
    SimpleLinear,
    /// One-split regression stump refit from a bounded window.
    Stump { window: usize },
}

impl LearnerSpec {
    /// Default hyperparameters for the named model kind.
    ///
    /// Recognized names: `mean`, `sgd`, `knn`, `simple_linear`, `stump`.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "mean" => Some(Self::Mean),
            "sgd" => Some(Self::SgdLinear { eta: 0.01, steps: 1 }),
            "knn" => Some(Self::Knn { k: 5, window: 512 }),
            "simple_linear" => Some(Self::SimpleLinear),
            "stump" => Some(Self::Stump { window: 256 }),
            _ => None,
        }
    }

    /// Canonical short name for the model kind.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::SgdLinear { .. } => "sgd",
            Self::Knn { .. } => "knn",
            Self::SimpleLinear => "simple_linear",
            Self::Stump { .. } => "stump",
        }
    }

    /// Names of all shipped model kinds, in canonical order.
    pub fn all_names() -> [&'static str; 5] {
        ["mean", "sgd", "knn", "simple_linear", "stump"]
    }

    /// Builds a fresh model of this kind for `dim` features.
    pub fn build(&self, dim: usize) -> Box<dyn OnlineRegressor> {
        match *self {
            Self::Mean => Box::new(MeanLearner::new(dim)),
            Self::SgdLinear { eta, steps } => Box::new(SgdLinear::new(dim, eta, steps)),
            Self::Knn { k, window } => Box::new(Knn::new(dim, k, window)),
            Self::SimpleLinear => Box::new(SimpleLinear::new(dim)),
            Self::Stump { window } => Box::new(Stump::new(dim, window)),
        }
    }
}

/// Running first and second moments of a scalar sequence (Welford update).
#[derive(Debug, Clone, Default)]
pub struct RunningMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    /// Folds one observation into the moments.
    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Observations folded so far.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Running mean, `0.0` before any observation.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.mean
        }
    }

    /// Population variance, `0.0` with fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    /// Standard deviation used for standardization; falls back to `1.0`
    /// when the variance is not yet informative.
    pub fn std_or_one(&self) -> f64 {
        let var = self.variance();
        if var > 1e-24 {
            var.sqrt()
        } else {
            1.0
        }
    }
}

/// Per-feature moments shared by models that impute or standardize.
#[derive(Debug, Clone)]
struct FeatureMoments {
    per_feature: Vec<RunningMoments>,
}

impl FeatureMoments {
    fn new(dim: usize) -> Self {
        Self {
            per_feature: vec![RunningMoments::default(); dim],
        }
    }

    fn check_arity(&self, x: &FeatureVector) -> Result<(), LearnerError> {
        if x.len() != self.per_feature.len() {
            return Err(LearnerError::FeatureArity {
                expected: self.per_feature.len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Missing entries become the feature's running mean.
    fn impute(&self, x: &FeatureVector) -> Vec<f64> {
        x.iter()
            .zip(&self.per_feature)
            .map(|(v, m)| v.unwrap_or_else(|| m.mean()))
            .collect()
    }

    /// Imputes, then centers and scales by the running moments. Scaled
    /// values are clamped to [-10, 10]: early variance estimates from a
    /// handful of near-identical samples can be arbitrarily small, and an
    /// unbounded z-score would catapult gradient steps and distances.
    fn standardize(&self, x: &FeatureVector) -> Vec<f64> {
        x.iter()
            .zip(&self.per_feature)
            .map(|(v, m)| {
                let raw = v.unwrap_or_else(|| m.mean());
                ((raw - m.mean()) / m.std_or_one()).clamp(-10.0, 10.0)
            })
            .collect()
    }

    /// Folds observed (non-missing) readings into the moments.
    fn update(&mut self, x: &FeatureVector) {
        for (v, m) in x.iter().zip(&mut self.per_feature) {
            if let Some(raw) = v {
                m.update(raw);
            }
        }
    }
}

/// Predicts the running mean of all targets seen so far.
#[derive(Debug, Clone)]
pub struct MeanLearner {
    dim: usize,
    target: RunningMoments,
}

impl MeanLearner {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            target: RunningMoments::default(),
        }
    }
}

impl OnlineRegressor for MeanLearner {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &FeatureVector) -> Result<f64, LearnerError> {
        if x.len() != self.dim {
            return Err(LearnerError::FeatureArity {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.target.mean())
    }

    fn train(&mut self, x: &FeatureVector, y: f64) -> Result<(), LearnerError> {
        if x.len() != self.dim {
            return Err(LearnerError::FeatureArity {
                expected: self.dim,
                got: x.len(),
            });
        }
        self.target.update(y);
        Ok(())
    }
}

/// Linear model `y = w . z + b` on standardized features, fit by SGD on
/// squared loss `0.5 * (prediction - y)^2`.
///
/// `train` takes `steps` gradient steps against the presented pair using
/// the standardization that was in effect when the pair arrived, then
/// folds the raw features into the running moments. The per-sample step
/// size is capped at the inverse squared input norm, so a single outlying
/// sample can never grow the residual. Arrival order is the only order
/// ever used; there is no shuffling, so runs are deterministic.
#[derive(Debug, Clone)]
pub struct SgdLinear {
    weights: Vec<f64>,
    bias: f64,
    eta: f64,
    steps: u32,
    moments: FeatureMoments,
}

impl SgdLinear {
    pub fn new(dim: usize, eta: f64, steps: u32) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            eta,
            steps: steps.max(1),
            moments: FeatureMoments::new(dim),
        }
    }

    /// Squared loss of the parameter vector at one standardized instance.
    pub fn squared_loss(weights: &[f64], bias: f64, z: &[f64], y: f64) -> f64 {
        let pred: f64 = weights.iter().zip(z).map(|(w, zi)| w * zi).sum::<f64>() + bias;
        0.5 * (pred - y) * (pred - y)
    }

    /// Analytic gradient of [`SgdLinear::squared_loss`] with respect to
    /// the weights and the bias.
    pub fn squared_loss_gradient(
        weights: &[f64],
        bias: f64,
        z: &[f64],
        y: f64,
    ) -> (Vec<f64>, f64) {
        let pred: f64 = weights.iter().zip(z).map(|(w, zi)| w * zi).sum::<f64>() + bias;
        let residual = pred - y;
        (z.iter().map(|zi| residual * zi).collect(), residual)
    }

    /// Current weight vector (standardized feature space).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Current bias term.
    pub fn bias(&self) -> f64 {
        self.bias
    }
}

impl OnlineRegressor for SgdLinear {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn predict(&self, x: &FeatureVector) -> Result<f64, LearnerError> {
        self.moments.check_arity(x)?;
        let z = self.moments.standardize(x);
        let pred: f64 = self.weights.iter().zip(&z).map(|(w, zi)| w * zi).sum::<f64>() + self.bias;
        Ok(pred)
    }

    fn train(&mut self, x: &FeatureVector, y: f64) -> Result<(), LearnerError> {
        self.moments.check_arity(x)?;
        let z = self.moments.standardize(x);
        // A single squared-loss step contracts the residual only when the
        // step size stays below 2 / |input|^2 (the +1 counts the constant
        // bias input). Capping at 1 / |input|^2 keeps one-sample updates
        // from overshooting however wide the feature vector is.
        let z2: f64 = z.iter().map(|zi| zi * zi).sum::<f64>() + 1.0;
        let step = self.eta.min(1.0 / z2);
        for _ in 0..self.steps {
            let (grad_w, grad_b) = Self::squared_loss_gradient(&self.weights, self.bias, &z, y);
            for (w, g) in self.weights.iter_mut().zip(&grad_w) {
                *w -= step * g;
            }
            self.bias -= step * grad_b;
        }
        self.moments.update(x);
        Ok(())
    }
}

/// k-nearest-neighbour regression over a bounded window of past pairs.
///
/// Distances are Euclidean on standardized features. Ties are broken by
/// insertion order (older pairs first), which keeps predictions
/// deterministic.
#[derive(Debug, Clone)]
pub struct Knn {
    k: usize,
    window: usize,
    stored: VecDeque<(Vec<f64>, f64)>,
    moments: FeatureMoments,
    dim: usize,
}

impl Knn {
    pub fn new(dim: usize, k: usize, window: usize) -> Self {
        Self {
            k: k.max(1),
            window: window.max(1),
            stored: VecDeque::new(),
            moments: FeatureMoments::new(dim),
            dim,
        }
    }
}

impl OnlineRegressor for Knn {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &FeatureVector) -> Result<f64, LearnerError> {
        self.moments.check_arity(x)?;
        if self.stored.is_empty() {
            return Ok(0.0);
        }
        let query = self.moments.standardize(x);
        let mut ranked: Vec<(f64, usize)> = self
            .stored
            .iter()
            .enumerate()
            .map(|(idx, (raw, _))| {
                let dist: f64 = raw
                    .iter()
                    .zip(&self.moments.per_feature)
                    .zip(&query)
                    .map(|((r, m), q)| {
                        let z = (r - m.mean()) / m.std_or_one();
                        (z - q) * (z - q)
                    })
                    .sum();
                (dist, idx)
            })
            .collect();
        ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let take = self.k.min(ranked.len());
        let sum: f64 = ranked[..take]
            .iter()
            .map(|&(_, idx)| self.stored[idx].1)
            .sum();
        Ok(sum / take as f64)
    }

    fn train(&mut self, x: &FeatureVector, y: f64) -> Result<(), LearnerError> {
        self.moments.check_arity(x)?;
        let raw = self.moments.impute(x);
        self.stored.push_back((raw, y));
        if self.stored.len() > self.window {
            self.stored.pop_front();
        }
        self.moments.update(x);
        Ok(())
    }
}

/// Per-feature sufficient statistics for one-variable least squares.
#[derive(Debug, Clone, Copy, Default)]
struct PairStats {
    sx: f64,
    sxx: f64,
    sxy: f64,
}

/// Single-feature least-squares line on whichever feature currently has
/// the lowest running residual, refit incrementally from sufficient
/// statistics (no pass over history is ever needed).
#[derive(Debug, Clone)]
pub struct SimpleLinear {
    stats: Vec<PairStats>,
    sy: f64,
    syy: f64,
    n: f64,
    moments: FeatureMoments,
}

impl SimpleLinear {
    pub fn new(dim: usize) -> Self {
        Self {
            stats: vec![PairStats::default(); dim],
            sy: 0.0,
            syy: 0.0,
            n: 0.0,
            moments: FeatureMoments::new(dim),
        }
    }

    /// Fitted `(slope, intercept, residual)` for feature `j`, or `None`
    /// while the feature carries no variance.
    fn line(&self, j: usize) -> Option<(f64, f64, f64)> {
        if self.n < 2.0 {
            return None;
        }
        let s = &self.stats[j];
        let denom = self.n * s.sxx - s.sx * s.sx;
        if denom.abs() < 1e-12 {
            return None;
        }
        let slope = (self.n * s.sxy - s.sx * self.sy) / denom;
        let intercept = (self.sy - slope * s.sx) / self.n;
        let sse = self.syy + slope * slope * s.sxx + self.n * intercept * intercept
            - 2.0 * slope * s.sxy
            - 2.0 * intercept * self.sy
            + 2.0 * slope * intercept * s.sx;
        Some((slope, intercept, sse))
    }

    /// Feature index with the lowest running residual, if any line exists.
    fn best_feature(&self) -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64, f64, f64)> = None;
        for j in 0..self.stats.len() {
            if let Some((slope, intercept, sse)) = self.line(j) {
                let better = match best {
                    None => true,
                    Some((_, _, _, best_sse)) => sse < best_sse,
                };
                if better {
                    best = Some((j, slope, intercept, sse));
                }
            }
        }
        best.map(|(j, slope, intercept, _)| (j, slope, intercept))
    }
}

impl OnlineRegressor for SimpleLinear {
    fn dim(&self) -> usize {
        self.stats.len()
    }

    fn predict(&self, x: &FeatureVector) -> Result<f64, LearnerError> {
        self.moments.check_arity(x)?;
        if self.n == 0.0 {
            return Ok(0.0);
        }
        match self.best_feature() {
            Some((j, slope, intercept)) => {
                let raw = x.get(j).unwrap_or_else(|| self.moments.per_feature[j].mean());
                Ok(slope * raw + intercept)
            }
            // No feature carries variance yet: fall back to the target mean.
            None => Ok(self.sy / self.n),
        }
    }

    fn train(&mut self, x: &FeatureVector, y: f64) -> Result<(), LearnerError> {
        self.moments.check_arity(x)?;
        let raw = self.moments.impute(x);
        self.n += 1.0;
        self.sy += y;
        self.syy += y * y;
        for (s, xi) in self.stats.iter_mut().zip(&raw) {
            s.sx += xi;
            s.sxx += xi * xi;
            s.sxy += xi * y;
        }
        self.moments.update(x);
        Ok(())
    }
}

/// Fitted split of a regression stump.
#[derive(Debug, Clone, Copy)]
struct StumpFit {
    feature: usize,
    threshold: f64,
    left_mean: f64,
    right_mean: f64,
}

/// One-split regression stump refit from a bounded window on every
/// training call. Splits minimize the two-leaf sum of squared errors;
/// ties prefer the lower feature index and then the lower threshold.
#[derive(Debug, Clone)]
pub struct Stump {
    window: usize,
    stored: VecDeque<(Vec<f64>, f64)>,
    moments: FeatureMoments,
    fit: Option<StumpFit>,
    dim: usize,
}

impl Stump {
    pub fn new(dim: usize, window: usize) -> Self {
        Self {
            window: window.max(2),
            stored: VecDeque::new(),
            moments: FeatureMoments::new(dim),
            fit: None,
            dim,
        }
    }

    fn refit(&mut self) {
        self.fit = None;
        let n = self.stored.len();
        if n < 2 {
            return;
        }
        let mut best_sse = f64::INFINITY;
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for feature in 0..self.dim {
            order.clear();
            order.extend(0..n);
            order.sort_unstable_by(|&a, &b| {
                self.stored[a].0[feature]
                    .total_cmp(&self.stored[b].0[feature])
                    .then(a.cmp(&b))
            });
            // Prefix sums over targets in feature order.
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            let total_sum: f64 = self.stored.iter().map(|(_, y)| *y).sum();
            let total_sq: f64 = self.stored.iter().map(|(_, y)| y * y).sum();
            for split in 1..n {
                let prev = self.stored[order[split - 1]].0[feature];
                let here = self.stored[order[split]].0[feature];
                left_sum += self.stored[order[split - 1]].1;
                left_sq += self.stored[order[split - 1]].1 * self.stored[order[split - 1]].1;
                if here <= prev {
                    continue; // no boundary between equal readings
                }
                let n_left = split as f64;
                let n_right = (n - split) as f64;
                let right_sum = total_sum - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / n_left)
                    + (right_sq - right_sum * right_sum / n_right);
                if sse < best_sse {
                    best_sse = sse;
                    self.fit = Some(StumpFit {
                        feature,
                        threshold: 0.5 * (prev + here),
                        left_mean: left_sum / n_left,
                        right_mean: right_sum / n_right,
                    });
                }
            }
        }
    }
}

impl OnlineRegressor for Stump {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &FeatureVector) -> Result<f64, LearnerError> {
        self.moments.check_arity(x)?;
        if self.stored.is_empty() {
            return Ok(0.0);
        }
        match self.fit {
            Some(fit) => {
                let raw = x
                    .get(fit.feature)
                    .unwrap_or_else(|| self.moments.per_feature[fit.feature].mean());
                if raw <= fit.threshold {
                    Ok(fit.left_mean)
                } else {
                    Ok(fit.right_mean)
                }
            }
            // No valid split yet: window mean.
            None => {
                let sum: f64 = self.stored.iter().map(|(_, y)| *y).sum();
                Ok(sum / self.stored.len() as f64)
            }
        }
    }

    fn train(&mut self, x: &FeatureVector, y: f64) -> Result<(), LearnerError> {
        self.moments.check_arity(x)?;
        let raw = self.moments.impute(x);
        self.stored.push_back((raw, y));
        if self.stored.len() > self.window {
            self.stored.pop_front();
        }
        self.moments.update(x);
        self.refit();
        Ok(())
    }
}
