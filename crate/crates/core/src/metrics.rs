//! Multi-modal evaluation against clustered ground truth.
//!
//! Each test example is paired with every future whose past lies within `ε`
//! of its own past, so a single context can carry several valid futures.
//! Distances are unsquared per-step Euclidean distances throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::{classify_route, DataExample, Route};
use crate::trajectory::{euclidean, Trajectory};

/// All futures whose context lies within `ε` of an anchor example's context.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    pub anchor: usize,
    pub futures: Vec<Trajectory>,
}

/// One set per example: every `j` with `‖h_j − h_i‖ ≤ ε` on flattened pasts,
/// in dataset order.
pub fn cluster_contexts(data: &[DataExample], eps: f64) -> Result<Vec<GroundTruthSet>> {
    if !(eps > 0.0) {
        return Err(Error::config(format!("cluster radius must be positive, got {eps}")));
    }
    Ok(data
        .iter()
        .map(|anchor| GroundTruthSet {
            anchor: anchor.id,
            futures: data
                .iter()
                .filter(|other| euclidean(anchor.context(), other.context()) <= eps)
                .map(|other| other.future.clone())
                .collect(),
        })
        .collect())
}

fn check_inputs(gt: &[Trajectory], samples: &[Trajectory]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Evaluation("forecast set is empty".into()));
    }
    if gt.is_empty() {
        return Err(Error::Evaluation("ground-truth set is empty".into()));
    }
    let shape = gt[0].shape();
    if gt.iter().chain(samples).any(|t| t.shape() != shape) {
        return Err(Error::Evaluation("trajectory shapes differ".into()));
    }
    Ok(())
}

fn mean_closest(gt: &[Trajectory], samples: &[Trajectory], dist: impl Fn(&Trajectory, &Trajectory) -> f64) -> f64 {
    let total: f64 = gt
        .iter()
        .map(|x| samples.iter().map(|s| dist(s, x)).fold(f64::INFINITY, f64::min))
        .sum();
    total / gt.len() as f64
}

/// Mean over ground-truth futures of the closest sample's mean per-step distance.
pub fn ade(gt: &[Trajectory], samples: &[Trajectory]) -> Result<f64> {
    check_inputs(gt, samples)?;
    Ok(mean_closest(gt, samples, Trajectory::mean_step_distance))
}

/// As [`ade`] on final positions only.
pub fn fde(gt: &[Trajectory], samples: &[Trajectory]) -> Result<f64> {
    check_inputs(gt, samples)?;
    Ok(mean_closest(gt, samples, Trajectory::final_distance))
}

fn self_distance(samples: &[Trajectory], dist: impl Fn(&Trajectory, &Trajectory) -> f64) -> Result<f64> {
    check_inputs(samples, samples)?;
    if samples.len() == 1 {
        return Ok(0.0);
    }
    let total: f64 = samples
        .iter()
        .enumerate()
        .map(|(i, a)| {
            samples
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| dist(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// Mean distance from each sample to its nearest other sample; 0 for one sample.
pub fn asd(samples: &[Trajectory]) -> Result<f64> {
    self_distance(samples, Trajectory::mean_step_distance)
}

pub fn fsd(samples: &[Trajectory]) -> Result<f64> {
    self_distance(samples, Trajectory::final_distance)
}

/// Fraction of the three routes present among the classified samples.
pub fn mode_coverage(samples: &[Trajectory]) -> f64 {
    let mut seen = [false; 3];
    for route in samples.iter().filter_map(classify_route) {
        seen[route.index()] = true;
    }
    seen.iter().filter(|&&s| s).count() as f64 / Route::ALL.len() as f64
}

/// A forecasting method as seen by [`evaluate`].
pub trait Forecaster: Sync {
    /// Deterministic methods ignore the seed and are run once.
    fn is_deterministic(&self) -> bool;
    fn forecast(&self, h: &Trajectory, seed: u64) -> Result<Vec<Trajectory>>;
}

impl<F> Forecaster for (bool, F)
where
    F: Fn(&Trajectory, u64) -> Result<Vec<Trajectory>> + Sync,
{
    fn is_deterministic(&self) -> bool {
        self.0
    }

    fn forecast(&self, h: &Trajectory, seed: u64) -> Result<Vec<Trajectory>> {
        (self.1)(h, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValues {
    pub ade: f64,
    pub fde: f64,
    pub asd: f64,
    pub fsd: f64,
    pub coverage: f64,
    /// Mean forecast-set size.
    pub samples: f64,
}

impl MetricValues {
    fn mean(rows: &[MetricValues]) -> MetricValues {
        let n = rows.len() as f64;
        let mut out = MetricValues::default();
        for r in rows {
            out.ade += r.ade / n;
            out.fde += r.fde / n;
            out.asd += r.asd / n;
            out.fsd += r.fsd / n;
            out.coverage += r.coverage / n;
            out.samples += r.samples / n;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub values: MetricValues,
}

/// Context-averaged metrics, averaged again over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean: MetricValues,
    pub per_seed: Vec<SeedReport>,
    /// Training steps skipped for non-finite loss; filled in by the caller.
    pub instability_events: usize,
}

impl MetricsReport {
    pub fn ade(&self) -> f64 {
        self.mean.ade
    }

    pub fn fde(&self) -> f64 {
        self.mean.fde
    }

    pub fn asd(&self) -> f64 {
        self.mean.asd
    }

    pub fn fsd(&self) -> f64 {
        self.mean.fsd
    }

    pub fn coverage(&self) -> f64 {
        self.mean.coverage
    }
}

/// Scores one run: context `i` is forecast with seed `run_seed + i`.
pub fn evaluate_run(
    method: &dyn Forecaster,
    data: &[DataExample],
    clusters: &[GroundTruthSet],
    run_seed: u64,
) -> Result<MetricValues> {
    if data.is_empty() || data.len() != clusters.len() {
        return Err(Error::Evaluation(format!(
            "{} examples for {} ground-truth sets",
            data.len(),
            clusters.len()
        )));
    }
    let mut rows = Vec::with_capacity(data.len());
    for (i, (ex, gt)) in data.iter().zip(clusters).enumerate() {
        let samples = method.forecast(&ex.past, run_seed.wrapping_add(i as u64))?;
        rows.push(MetricValues {
            ade: ade(&gt.futures, &samples)?,
            fde: fde(&gt.futures, &samples)?,
            asd: asd(&samples)?,
            fsd: fsd(&samples)?,
            coverage: mode_coverage(&samples),
            samples: samples.len() as f64,
        });
    }
    Ok(MetricValues::mean(&rows))
}

/// Clusters the contexts and scores `method` once per seed. A deterministic
/// method is run once and its result repeated for every seed.
pub fn evaluate(method: &dyn Forecaster, data: &[DataExample], eps: f64, seeds: &[u64]) -> Result<MetricsReport> {
    if seeds.is_empty() {
        return Err(Error::config("need at least one evaluation seed"));
    }
    let clusters = cluster_contexts(data, eps)?;
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut cached = None;
    for &seed in seeds {
        let values = match cached {
            Some(v) => v,
            None => {
                let v = evaluate_run(method, data, &clusters, seed)?;
                if method.is_deterministic() {
                    cached = Some(v);
                }
                v
            }
        };
        per_seed.push(SeedReport { seed, values });
    }
    let rows: Vec<MetricValues> = per_seed.iter().map(|r| r.values).collect();
    Ok(MetricsReport {
        mean: MetricValues::mean(&rows),
        per_seed,
        instability_events: 0,
    })
}
