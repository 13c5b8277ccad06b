//! Dataset handling: CSV ingestion of real stream collections and a
//! synthetic generator that produces quality-tiered streams around a
//! seasonal target series.
//!
//! A dataset is an ordered list of [`Record`]s. Each record carries the
//! full feature vector across all streams plus the true target value;
//! processing order equals record-id order, and nothing here exposes a
//! record's true value out of order (consumers read records one at a
//! time, training only after the corresponding market has settled).

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::learner::{FeatureVector, LearnerSpec};

/// Error raised while loading or generating datasets.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {name:?} not found in header")]
    MissingColumn { name: String },
    #[error("no parseable target value in data row {row}")]
    MissingTarget { row: usize },
    #[error("dataset has {got} records but at least {need} are required")]
    NotEnoughRecords { got: usize, need: usize },
}

/// One time step of the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Strictly increasing across a dataset; defines processing order.
    pub id: u64,
    /// Optional date label carried through from the source file.
    pub timestamp: Option<String>,
    /// Readings of every stream at this time step; entries may be missing.
    pub features: FeatureVector,
    /// The target the markets predict.
    pub true_value: f64,
}

/// Quality tier of a stream, ordered from least to most informative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QualityTier {
    Low,
    Medium,
    High,
}

impl QualityTier {
    pub fn as_str(&self) -> &'static str {
        match self {
            QualityTier::Low => "low",
            QualityTier::Medium => "medium",
            QualityTier::High => "high",
        }
    }
}

impl std::fmt::Display for QualityTier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Generation parameters of one synthetic stream.
///
/// A stream reports the target with lag, Gaussian noise, and occasional
/// corruption: with probability `corruption_rate` a reading is replaced
/// by a uniform draw from the target's observed range, modeling false
/// alerts in otherwise informative feeds.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub stream_id: String,
    pub quality_tier: QualityTier,
    pub noise_sigma: f64,
    pub corruption_rate: f64,
    /// How many records old the reported value is.
    pub lag: u32,
}

impl StreamSpec {
    pub fn new(
        stream_id: impl Into<String>,
        quality_tier: QualityTier,
        noise_sigma: f64,
        corruption_rate: f64,
        lag: u32,
    ) -> Self {
        let spec = Self {
            stream_id: stream_id.into(),
            quality_tier,
            noise_sigma,
            corruption_rate,
            lag,
        };
        assert!(
            spec.noise_sigma >= 0.0,
            "noise_sigma must be nonnegative, got {}",
            spec.noise_sigma
        );
        assert!(
            (0.0..=1.0).contains(&spec.corruption_rate),
            "corruption_rate must lie in [0, 1], got {}",
            spec.corruption_rate
        );
        spec
    }

    /// A named placeholder spec for streams of unknown provenance, e.g.
    /// columns of an ingested file.
    pub fn named(stream_id: impl Into<String>) -> Self {
        Self::new(stream_id, QualityTier::Medium, 0.0, 0.0, 0)
    }
}

/// Agent counts per quality tier that define one market composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarketTypeSpec {
    pub n_low: usize,
    pub n_medium: usize,
    pub n_high: usize,
}

impl MarketTypeSpec {
    pub fn total(&self) -> usize {
        self.n_low + self.n_medium + self.n_high
    }
}

/// Shape of the synthetic target series
/// `y(t) = A sin(2πt/T) + B sin(2πt/T₂) + trend·t + ε`,
/// a yearly seasonal wave with a quarterly ripple, mild drift, and
/// Gaussian observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTargetParams {
    pub amplitude_main: f64,
    pub period_main: f64,
    pub amplitude_minor: f64,
    pub period_minor: f64,
    pub trend: f64,
    pub noise_sigma: f64,
}

impl Default for SynthTargetParams {
    fn default() -> Self {
        Self {
            amplitude_main: 2.0,
            period_main: 52.0,
            amplitude_minor: 0.5,
            period_minor: 13.0,
            trend: 0.001,
            noise_sigma: 0.05,
        }
    }
}

impl SynthTargetParams {
    fn clean_value(&self, t: f64) -> f64 {
        use std::f64::consts::TAU;
        self.amplitude_main * (TAU * t / self.period_main).sin()
            + self.amplitude_minor * (TAU * t / self.period_minor).sin()
            + self.trend * t
    }
}

/// A loaded dataset: the records plus the stream (feature column) names
/// in feature order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub stream_ids: Vec<String>,
}

/// Loads records from a CSV file with a header row.
///
/// `target_column` names the column holding the true value; it must parse
/// as a real number in every row. `feature_columns` selects and orders
/// the stream columns; `None` takes every other column in header order.
/// A column named `timestamp` is carried through as the record's date
/// label (and never treated as a feature unless explicitly selected).
/// Unparseable or empty feature cells become missing entries; a missing
/// target is a hard error naming the 1-based data row.
pub fn load_csv(
    path: impl AsRef<Path>,
    target_column: &str,
    feature_columns: Option<&[String]>,
) -> Result<Dataset, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let find = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn {
                name: name.to_string(),
            })
    };

    let target_idx = find(target_column)?;
    let timestamp_idx = headers.iter().position(|h| h == "timestamp");
    let feature_idxs: Vec<usize> = match feature_columns {
        Some(names) => names
            .iter()
            .map(|n| find(n))
            .collect::<Result<Vec<_>, _>>()?,
        None => (0..headers.len())
            .filter(|&i| i != target_idx && Some(i) != timestamp_idx)
            .collect(),
    };
    let stream_ids: Vec<String> = feature_idxs.iter().map(|&i| headers[i].clone()).collect();

    let mut records = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let row = row?;
        let data_row = row_idx + 1;
        let true_value = row
            .get(target_idx)
            .and_then(|cell| cell.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or(DataError::MissingTarget { row: data_row })?;
        let values: Vec<Option<f64>> = feature_idxs
            .iter()
            .map(|&i| {
                row.get(i)
                    .and_then(|cell| cell.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        let timestamp = timestamp_idx
            .and_then(|i| row.get(i))
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty());
        records.push(Record {
            id: row_idx as u64,
            timestamp,
            features: FeatureVector::new(values),
            true_value,
        });
    }
    Ok(Dataset {
        records,
        stream_ids,
    })
}

/// Generates a synthetic dataset with the default target shape.
///
/// Fully determined by `(n_records, streams, seed)`: each stream draws
/// from its own independent random substream, so adding or reordering
/// streams never changes the values of the others.
pub fn synth_generate(n_records: usize, streams: &[StreamSpec], seed: u64) -> Vec<Record> {
    synth_generate_with(n_records, streams, seed, &SynthTargetParams::default())
}

/// [`synth_generate`] with an explicit target shape.
pub fn synth_generate_with(
    n_records: usize,
    streams: &[StreamSpec],
    seed: u64,
    target: &SynthTargetParams,
) -> Vec<Record> {
    assert!(n_records >= 1, "n_records must be at least 1");
    let max_lag = streams.iter().map(|s| s.lag as i64).max().unwrap_or(0);

    // The target series extends `max_lag` steps into the past so lagged
    // streams have history at t = 0. Substream 0 holds the target noise;
    // the visible range draws first and history extends backwards
    // afterwards, so y(0..n) never depends on the stream list.
    let mut target_rng = ChaCha8Rng::seed_from_u64(seed);
    target_rng.set_stream(0);
    let target_noise = Normal::new(0.0, target.noise_sigma).expect("valid sigma");
    let visible: Vec<f64> = (0..n_records as i64)
        .map(|t| target.clean_value(t as f64) + target_noise.sample(&mut target_rng))
        .collect();
    let history: Vec<f64> = (1..=max_lag)
        .map(|k| target.clean_value(-k as f64) + target_noise.sample(&mut target_rng))
        .collect();
    let y_at = |t: i64| {
        if t >= 0 {
            visible[t as usize]
        } else {
            history[(-t - 1) as usize]
        }
    };

    // Corrupted readings are drawn from the observed target range.
    let (y_min, y_max) = (0..n_records as i64)
        .map(y_at)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(streams.len());
    for (i, stream) in streams.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let noise = Normal::new(0.0, stream.noise_sigma).expect("valid sigma");
        let column = (0..n_records as i64)
            .map(|t| {
                let reading = y_at(t - stream.lag as i64) + noise.sample(&mut rng);
                if rng.random::<f64>() < stream.corruption_rate {
                    y_min + rng.random::<f64>() * (y_max - y_min)
                } else {
                    reading
                }
            })
            .collect();
        columns.push(column);
    }

    (0..n_records)
        .map(|t| Record {
            id: t as u64,
            timestamp: None,
            features: FeatureVector::dense(columns.iter().map(|col| col[t]).collect()),
            true_value: y_at(t as i64),
        })
        .collect()
}

/// Prequential mean absolute error of a reference learner run per stream.
///
/// For each stream, a fresh learner sees only that stream's reading as
/// its single feature: predict the target first, train afterwards. The
/// resulting MAE ranks how informative each stream is.
pub fn stream_maes(records: &[Record], n_streams: usize, reference: &LearnerSpec) -> Vec<f64> {
    (0..n_streams)
        .map(|i| {
            let mut learner = reference.build(1);
            let mut abs_sum = 0.0;
            for record in records {
                let x = record.features.select(&[i]);
                let pred = learner.predict(&x).expect("arity 1");
                abs_sum += (pred - record.true_value).abs();
                learner.train(&x, record.true_value).expect("arity 1");
            }
            abs_sum / records.len() as f64
        })
        .collect()
}

/// Labels each stream with a quality tier by clustering prequential MAEs.
///
/// Runs `reference` prequentially per stream, then clusters the MAEs into
/// three groups with one-dimensional 3-means initialized at the minimum,
/// median, and maximum MAE. The cluster with the smallest MAEs is the
/// high tier. Fewer than three distinct MAE values defeat clustering, so
/// every stream is labeled medium. Requires at least 30 records.
pub fn classify_streams(
    records: &[Record],
    streams: &[StreamSpec],
    reference: &LearnerSpec,
) -> Result<BTreeMap<String, QualityTier>, DataError> {
    if records.len() < 30 {
        return Err(DataError::NotEnoughRecords {
            got: records.len(),
            need: 30,
        });
    }
    let maes = stream_maes(records, streams.len(), reference);

    let mut distinct = maes.clone();
    distinct.sort_unstable_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Ok(streams
            .iter()
            .map(|s| (s.stream_id.clone(), QualityTier::Medium))
            .collect());
    }

    let assignments = three_means(&maes);
    // Cluster 0 holds the smallest MAEs: the most informative streams.
    let tiers = [QualityTier::High, QualityTier::Medium, QualityTier::Low];
    Ok(streams
        .iter()
        .zip(&assignments)
        .map(|(s, &cluster)| (s.stream_id.clone(), tiers[cluster]))
        .collect())
}

/// One-dimensional 3-means with deterministic initialization at the
/// minimum, median, and maximum. Returns per-value cluster indices with
/// clusters ordered by ascending center; ties go to the lower cluster,
/// and an empty cluster keeps its previous center.
fn three_means(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut centers = [
        sorted[0],
        sorted[sorted.len() / 2],
        sorted[sorted.len() - 1],
    ];

    let mut assignments = vec![0usize; values.len()];
    for _ in 0..100 {
        let next: Vec<usize> = values
            .iter()
            .map(|&v| {
                let mut best = 0;
                let mut best_dist = (v - centers[0]).abs();
                for (k, &c) in centers.iter().enumerate().skip(1) {
                    let d = (v - c).abs();
                    if d < best_dist {
                        best = k;
                        best_dist = d;
                    }
                }
                best
            })
            .collect();
        let converged = next == assignments;
        assignments = next;
        for k in 0..3 {
            let members: Vec<f64> = values
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == k)
                .map(|(&v, _)| v)
                .collect();
            if !members.is_empty() {
                centers[k] = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        if converged {
            break;
        }
    }
    assignments
}
