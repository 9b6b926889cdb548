//! Replicated simulate-then-estimate experiments and their summaries.

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Estimator, ExperimentConfig};
use crate::data::ProxyId;
use crate::error::{Error, Result};
use crate::estim::effects::{effect_values, effects, EffectEstimate, EffectQuery};
use crate::estim::model::LinearCasf;
use crate::estim::naive::{naive_ols, single_proxy_effects};
use crate::kde::bandwidth;
use crate::rng::replication_seed;
use crate::simgen::{simulate, MisclassCounts, SimDataset};
use crate::spe;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "NETMIS_THREADS";

/// Network statistics of one simulated dataset, or their averages.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DatasetStats {
    pub avg_degree: f64,
    pub max_degree: f64,
    pub false_negative: [f64; 2],
    pub false_positive: [f64; 2],
    /// Misclassified links over latent links, per proxy.
    pub ratio: [f64; 2],
}

impl DatasetStats {
    pub fn of(ds: &SimDataset) -> Self {
        let n = ds.latent_deg.len().max(1) as f64;
        let (m1, m2) = ds.misclass();
        let pair = |f: fn(&MisclassCounts) -> f64| [f(&m1), f(&m2)];
        DatasetStats {
            avg_degree: ds.latent_deg.iter().map(|&d| d as f64).sum::<f64>() / n,
            max_degree: ds.latent_deg.iter().copied().max().unwrap_or(0) as f64,
            false_negative: pair(|m| m.false_negative as f64),
            false_positive: pair(|m| m.false_positive as f64),
            ratio: pair(|m| m.ratio()),
        }
    }

    fn mean(all: &[DatasetStats]) -> Self {
        let m = all.len().max(1) as f64;
        let avg = |f: &dyn Fn(&DatasetStats) -> f64| all.iter().map(f).sum::<f64>() / m;
        DatasetStats {
            avg_degree: avg(&|s| s.avg_degree),
            max_degree: avg(&|s| s.max_degree),
            false_negative: [avg(&|s| s.false_negative[0]), avg(&|s| s.false_negative[1])],
            false_positive: [avg(&|s| s.false_positive[0]), avg(&|s| s.false_positive[1])],
            ratio: [avg(&|s| s.ratio[0]), avg(&|s| s.ratio[1])],
        }
    }
}

/// Effect estimates of one estimator in one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorRun {
    pub estimator: Estimator,
    pub estimates: Vec<EffectEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepResult {
    pub rep: usize,
    pub seed: u64,
    pub stats: DatasetStats,
    /// Estimates of every requested estimator, or why the replication was excluded.
    pub outcome: std::result::Result<Vec<EstimatorRun>, String>,
}

/// Aggregates over included replications for one (estimator, effect).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectSummary {
    pub estimator: Estimator,
    pub effect: String,
    pub truth: f64,
    pub bias: f64,
    /// Sample standard deviation, `M − 1` denominator.
    pub sd: f64,
    /// `bias² + sd²·(M−1)/M`.
    pub mse: f64,
    pub coverage: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub config: ExperimentConfig,
    pub rows: Vec<EffectSummary>,
    pub replications: Vec<RepResult>,
    /// Averages over all replications, excluded ones included.
    pub stats: DatasetStats,
}

impl McSummary {
    pub fn row(&self, estimator: Estimator, effect: &str) -> Option<&EffectSummary> {
        self.rows.iter().find(|r| r.estimator == estimator && r.effect == effect)
    }

    /// `(rep, reason)` of every excluded replication.
    pub fn exclusions(&self) -> Vec<(usize, &str)> {
        self.replications.iter().filter_map(|r| r.outcome.as_ref().err().map(|e| (r.rep, e.as_str()))).collect()
    }

    pub fn excluded_share(&self) -> f64 {
        self.exclusions().len() as f64 / self.replications.len().max(1) as f64
    }

    /// Raw estimates of `estimator` for query `q` across included replications.
    pub fn raw(&self, estimator: Estimator, q: usize) -> Vec<&EffectEstimate> {
        self.replications
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
            .filter_map(|runs| runs.iter().find(|run| run.estimator == estimator))
            .map(|run| &run.estimates[q])
            .collect()
    }
}

/// Runs the requested estimators on one simulated dataset.
pub fn run_estimators(
    ds: &SimDataset,
    config: &ExperimentConfig,
    queries: &[EffectQuery],
) -> Result<Vec<EstimatorRun>> {
    let sample = ds.to_sample();
    let nbrs = ds.dep_neighborhoods();
    let model = LinearCasf::exposure_design();
    config
        .estimators
        .iter()
        .map(|&estimator| {
            let estimates = match estimator {
                Estimator::Spe => {
                    let cfg = config.spe_config().ok_or_else(|| Error::Config("SPE needs a one-type mode".into()))?;
                    let r = spe::estimate(&sample, &model, &nbrs, &cfg)?;
                    effects(&r.fit, &model, queries)
                }
                Estimator::Naive1 => effects(&naive_ols(&sample, ProxyId::First, &model, &nbrs)?, &model, queries),
                Estimator::Naive2 => effects(&naive_ols(&sample, ProxyId::Second, &model, &nbrs)?, &model, queries),
                Estimator::SingleProxy => {
                    let h = bandwidth(sample.len(), config.bandwidth_exp);
                    single_proxy_effects(&sample, ProxyId::First, queries, h)?
                }
            };
            Ok(EstimatorRun { estimator, estimates })
        })
        .collect()
}

/// Simulates and estimates replication `rep`. Estimation failures become an
/// exclusion; simulation failures are errors.
pub fn run_replication(config: &ExperimentConfig, queries: &[EffectQuery], rep: usize) -> Result<RepResult> {
    let seed = replication_seed(config.seed, rep as u64);
    let ds = simulate(&config.sim_config(seed))?;
    let outcome = run_estimators(&ds, config, queries).map_err(|e| e.to_string());
    if let Err(reason) = &outcome {
        log::warn!("replication {rep} excluded: {reason}");
    }
    Ok(RepResult { rep, seed, stats: DatasetStats::of(&ds), outcome })
}

fn summarize(estimator: Estimator, q: usize, label: String, truth: f64, reps: &[RepResult]) -> EffectSummary {
    let est: Vec<&EffectEstimate> = reps
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .filter_map(|runs| runs.iter().find(|run| run.estimator == estimator))
        .map(|run| &run.estimates[q])
        .collect();
    let m = est.len();
    let mf = m as f64;
    let mean = est.iter().map(|e| e.value).sum::<f64>() / mf;
    let bias = mean - truth;
    let sd = if m > 1 { (est.iter().map(|e| (e.value - mean).powi(2)).sum::<f64>() / (mf - 1.0)).sqrt() } else { 0.0 };
    let mse = bias * bias + sd * sd * (mf - 1.0) / mf;
    let coverage = est.iter().filter(|e| e.covers(truth)).count() as f64 / mf;
    EffectSummary { estimator, effect: label, truth, bias, sd, mse, coverage, reps: m }
}

fn worker_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&k| k > 0)
}

/// Runs all replications in parallel and aggregates in replication order.
pub fn run_montecarlo(config: &ExperimentConfig) -> Result<McSummary> {
    config.validate()?;
    let queries = config.parsed_queries()?;
    let run = || -> Result<Vec<RepResult>> {
        (0..config.reps).into_par_iter().map(|rep| run_replication(config, &queries, rep)).collect()
    };
    let replications = match worker_count() {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let model = LinearCasf::exposure_design();
    let truths = effect_values(&model, &config.theta_true, &queries);
    let mut rows = Vec::new();
    for &estimator in &config.estimators {
        for (q, query) in queries.iter().enumerate() {
            rows.push(summarize(estimator, q, query.label(), truths[q], &replications));
        }
    }
    let stats = DatasetStats::mean(&replications.iter().map(|r| r.stats).collect::<Vec<_>>());
    Ok(McSummary { config: config.clone(), rows, replications, stats })
}
