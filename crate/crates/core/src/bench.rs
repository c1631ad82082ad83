//! Synthetic ground truth, mixture sampling, permutation-matched errors and
//! the seeded experiment runner.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_params, MixtureParams, StageFailure};
use crate::moments::{
    moment_sets_from_source, sample_moments, ExactMoments, MomentSource, SampleMoments, V3Method,
};
use crate::recovery::{
    estimate_from_sets, estimate_shared_known_covariance, shared_covariance_inputs, EstimateOptions,
};

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("covariance of component {0} is not positive definite")]
    Factorization(usize),
    #[error("invalid parameters: {0}")]
    Params(String),
}

/// Mixes `parts` into one seed with splitmix64 steps.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random ground truth: weights `|z| / sum |z|`, standard-normal means and
/// covariances `M M^T` with standard-normal `M`.
pub fn generate_params(d: usize, k: usize, diagonal: bool, seed: u64) -> MixtureParams {
    assert!(d >= 1 && k >= 1, "d and k must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..k).map(|_| normal(&mut rng).abs()).collect();
    let total: f64 = z.iter().sum();
    let weights = z.iter().map(|x| x / total).collect();
    let means = (0..k)
        .map(|_| (0..d).map(|_| normal(&mut rng)).collect())
        .collect();
    let covariances = (0..k)
        .map(|_| {
            let m = DMatrix::from_fn(d, d, |_, _| normal(&mut rng));
            let s = &m * m.transpose();
            (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| match (diagonal, i == j) {
                            (true, false) => 0.0,
                            // exact symmetry
                            _ if i > j => s[(j, i)],
                            _ => s[(i, j)],
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    MixtureParams::new(weights, means, covariances)
}

/// `n` independent draws, one row per sample.
pub fn sample_mixture(
    params: &MixtureParams,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, BenchError> {
    let violations = validate_params(params);
    if !violations.is_empty() {
        return Err(BenchError::Params(format!("{violations:?}")));
    }
    let d = params.d;
    let factors = (0..params.k)
        .map(|l| {
            DMatrix::from_fn(d, d, |i, j| params.cov(l, i, j))
                .cholesky()
                .map(|c| c.l())
                .ok_or(BenchError::Factorization(l))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let pick =
        WeightedIndex::new(&params.weights).map_err(|e| BenchError::Params(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; d];
    Ok((0..n)
        .map(|_| {
            let l = rng.sample(&pick);
            z.iter_mut().for_each(|x| *x = normal(&mut rng));
            let lf = &factors[l];
            (0..d)
                .map(|i| params.means[l][i] + (0..=i).map(|j| lf[(i, j)] * z[j]).sum::<f64>())
                .collect()
        })
        .collect())
}

/// Normalized parameter errors after matching components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub weight_error: f64,
    pub mean_error: f64,
    pub covariance_error: f64,
}

/// Errors of `estimate` against `truth` under the component permutation
/// minimizing the weight error; ties (equal weights) fall back to the mean
/// and then the covariance error. Norms are divided by `k`, `k d` and
/// `k d^2`.
pub fn compute_error(
    truth: &MixtureParams,
    estimate: &MixtureParams,
) -> Result<ErrorMetrics, BenchError> {
    if truth.k != estimate.k || truth.d != estimate.d {
        return Err(BenchError::Shape(format!(
            "truth has (k, d) = ({}, {}), estimate ({}, {})",
            truth.k, truth.d, estimate.k, estimate.d
        )));
    }
    let (k, d) = (truth.k, truth.d);
    let norms = |perm: &[usize]| {
        let mut w = 0.0;
        let mut m = 0.0;
        let mut c = 0.0;
        for (l, &p) in perm.iter().enumerate() {
            w += (estimate.weights[p] - truth.weights[l]).powi(2);
            for i in 0..d {
                m += (estimate.mean(p, i) - truth.mean(l, i)).powi(2);
                for j in 0..d {
                    c += (estimate.cov(p, i, j) - truth.cov(l, i, j)).powi(2);
                }
            }
        }
        (w.sqrt(), m.sqrt(), c.sqrt())
    };
    let all: Vec<(f64, f64, f64)> = (0..k).permutations(k).map(|p| norms(&p)).collect();
    let best_w = all.iter().map(|n| n.0).fold(f64::INFINITY, f64::min);
    let tie = 1e-12 * (1.0 + best_w);
    let (w, m, c) = all
        .into_iter()
        .filter(|n| n.0 <= best_w + tie)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)))
        .expect("at least one permutation");
    Ok(ErrorMetrics {
        weight_error: w / k as f64,
        mean_error: m / (k * d) as f64,
        covariance_error: c / (k * d * d) as f64,
    })
}

/// Exact forward moments or a finite sample of the given size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SampleSize {
    Exact,
    Samples(usize),
}

impl SampleSize {
    fn seed_part(self) -> u64 {
        match self {
            SampleSize::Exact => u64::MAX,
            SampleSize::Samples(n) => n as u64,
        }
    }
}

impl fmt::Display for SampleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleSize::Exact => f.write_str("exact"),
            SampleSize::Samples(n) => write!(f, "{n}"),
        }
    }
}

fn default_budget() -> f64 {
    60.0
}

/// One experiment grid: every `d` crossed with every sample size, each
/// repeated `trials` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d_values: Vec<usize>,
    pub k: usize,
    /// Ignored when `exact` is set.
    #[serde(default)]
    pub sample_sizes: Vec<usize>,
    #[serde(default)]
    pub exact: bool,
    pub trials: usize,
    #[serde(default)]
    pub known_weights: bool,
    /// Uniform weights and identity covariances, estimated with the
    /// covariance given.
    #[serde(default)]
    pub shared_known_covariance: bool,
    #[serde(default)]
    pub diagonal_only: bool,
    #[serde(default)]
    pub method: V3Method,
    #[serde(default)]
    pub seed: u64,
    /// Seconds per trial.
    #[serde(default = "default_budget")]
    pub time_budget: f64,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.d_values.is_empty() || self.d_values.contains(&0) {
            return bad("d_values must be non-empty and positive");
        }
        if !self.exact && self.sample_sizes.is_empty() {
            return bad("sample_sizes must be given unless exact is set");
        }
        if self.sample_sizes.contains(&0) {
            return bad("sample sizes must be positive");
        }
        if !(self.time_budget > 0.0) {
            return bad("time_budget must be positive");
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1");
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<SampleSize> {
        if self.exact {
            vec![SampleSize::Exact]
        } else {
            self.sample_sizes
                .iter()
                .map(|&n| SampleSize::Samples(n))
                .collect()
        }
    }

    /// Ground truth for trial `trial` at dimension `d`, shared by all
    /// sample sizes.
    pub fn truth(&self, d: usize, trial: usize) -> MixtureParams {
        let seed = derive_seed(&[self.seed, d as u64, trial as u64]);
        let p = generate_params(d, self.k, self.diagonal_only, seed);
        if self.shared_known_covariance {
            let identity = (0..d)
                .map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect())
                .collect();
            MixtureParams::new(
                vec![1.0 / self.k as f64; self.k],
                p.means,
                vec![identity; self.k],
            )
        } else {
            p
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub d: usize,
    pub k: usize,
    pub n_samples: SampleSize,
    pub trial: usize,
    pub seed: u64,
    pub passed: bool,
    pub stage_failed: StageFailure,
    pub errors: Option<ErrorMetrics>,
    pub elapsed: f64,
}

/// Medians over passed trials and failure counts for one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub d: usize,
    pub n_samples: SampleSize,
    pub trials: usize,
    pub passed: usize,
    pub first_dimension_failures: usize,
    pub timeouts: usize,
    pub median_weight_error: Option<f64>,
    pub median_mean_error: Option<f64>,
    pub median_covariance_error: Option<f64>,
    pub median_elapsed: Option<f64>,
}

impl CellSummary {
    pub fn pass_rate(&self) -> f64 {
        self.passed as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<CellSummary>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn run_trial(cfg: &ExperimentConfig, d: usize, size: SampleSize, trial: usize) -> TrialRecord {
    let started = Instant::now();
    let truth = cfg.truth(d, trial);
    let seed = derive_seed(&[cfg.seed, d as u64, size.seed_part(), trial as u64]);
    let opts = EstimateOptions {
        seed,
        deadline: Some(started + Duration::from_secs_f64(cfg.time_budget)),
        ..Default::default()
    };
    let rows = match size {
        SampleSize::Exact => None,
        SampleSize::Samples(n) => {
            Some(sample_mixture(&truth, n, seed).expect("generated parameters are valid"))
        }
    };
    let report = if cfg.shared_known_covariance {
        let exact = ExactMoments(&truth);
        let sample;
        let src: &dyn MomentSource = match &rows {
            None => &exact,
            Some(r) => {
                sample = SampleMoments::new(r).expect("rectangular sample");
                &sample
            }
        };
        let inputs = shared_covariance_inputs(src, cfg.k).expect("sources cover every index");
        estimate_shared_known_covariance(
            d,
            cfg.k,
            &truth.covariances[0],
            &inputs.m_v1,
            &inputs.m_v2,
            &opts,
        )
    } else {
        let mut sets = match &rows {
            None => moment_sets_from_source(&ExactMoments(&truth), cfg.k, cfg.method)
                .expect("exact moments"),
            Some(r) => sample_moments(r, cfg.k, cfg.method).expect("rectangular sample"),
        };
        if cfg.diagonal_only {
            sets.m_v3.clear();
        }
        let known = cfg.known_weights.then_some(truth.weights.as_slice());
        estimate_from_sets(&sets, cfg.k, known, &opts)
    }
    .expect("generated inputs have valid shapes");
    let elapsed = started.elapsed().as_secs_f64();
    let mut stage_failed = report.stage_failed;
    if elapsed > cfg.time_budget {
        stage_failed = StageFailure::Timeout;
    }
    let errors = match (&report.params, stage_failed) {
        (Some(est), StageFailure::None) => {
            Some(compute_error(&truth, est).expect("matching shapes"))
        }
        _ => None,
    };
    TrialRecord {
        d,
        k: cfg.k,
        n_samples: size,
        trial,
        seed,
        passed: errors.is_some(),
        stage_failed,
        errors,
        elapsed,
    }
}

fn summarize(d: usize, size: SampleSize, records: &[&TrialRecord]) -> CellSummary {
    let passed: Vec<&ErrorMetrics> = records.iter().filter_map(|r| r.errors.as_ref()).collect();
    let med =
        |f: fn(&ErrorMetrics) -> f64| median(&mut passed.iter().map(|e| f(e)).collect::<Vec<_>>());
    CellSummary {
        d,
        n_samples: size,
        trials: records.len(),
        passed: passed.len(),
        first_dimension_failures: records
            .iter()
            .filter(|r| r.stage_failed == StageFailure::Dim1System)
            .count(),
        timeouts: records
            .iter()
            .filter(|r| r.stage_failed == StageFailure::Timeout)
            .count(),
        median_weight_error: med(|e| e.weight_error),
        median_mean_error: med(|e| e.mean_error),
        median_covariance_error: med(|e| e.covariance_error),
        median_elapsed: median(
            &mut records
                .iter()
                .filter(|r| r.passed)
                .map(|r| r.elapsed)
                .collect::<Vec<_>>(),
        ),
    }
}

/// Runs every trial of the grid, concurrently when threads allow, and
/// returns records ordered by (d, sample size, trial).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, BenchError> {
    cfg.validate()?;
    let sizes = cfg.sizes();
    let jobs: Vec<(usize, SampleSize, usize)> = cfg
        .d_values
        .iter()
        .flat_map(|&d| {
            sizes
                .iter()
                .flat_map(move |&s| (0..cfg.trials).map(move |t| (d, s, t)))
        })
        .collect();
    let workers = cfg
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(jobs.len());
    let next = AtomicUsize::new(0);
    let done = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(d, s, t)) = jobs.get(i) else { break };
                let rec = run_trial(cfg, d, s, t);
                done.lock()
                    .expect("no panics while holding the lock")
                    .push((i, rec));
            });
        }
    });
    let mut done = done.into_inner().expect("workers joined");
    done.sort_by_key(|(i, _)| *i);
    let records: Vec<TrialRecord> = done.into_iter().map(|(_, r)| r).collect();
    let summary = cfg
        .d_values
        .iter()
        .flat_map(|&d| sizes.iter().map(move |&s| (d, s)))
        .map(|(d, s)| {
            let cell: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.d == d && r.n_samples == s)
                .collect();
            summarize(d, s, &cell)
        })
        .collect();
    Ok(ExperimentResult { records, summary })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:e}"))
}

impl ExperimentResult {
    /// One row per trial.
    pub fn trials_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "d",
            "k",
            "n_samples",
            "seed",
            "passed",
            "stage_failed",
            "weight_error",
            "mean_error",
            "covariance_error",
            "elapsed_s",
        ])
        .expect("in-memory write");
        for r in &self.records {
            let e = r.errors;
            w.write_record([
                r.d.to_string(),
                r.k.to_string(),
                r.n_samples.to_string(),
                r.seed.to_string(),
                r.passed.to_string(),
                r.stage_failed.tag(),
                fmt_opt(e.map(|e| e.weight_error)),
                fmt_opt(e.map(|e| e.mean_error)),
                fmt_opt(e.map(|e| e.covariance_error)),
                format!("{:.6}", r.elapsed),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }

    /// One row per (metric, sample size), one column per `d`.
    pub fn summary_csv(&self) -> String {
        let mut ds: Vec<usize> = self.summary.iter().map(|c| c.d).collect();
        ds.dedup();
        let mut sizes: Vec<SampleSize> = self.summary.iter().map(|c| c.n_samples).collect();
        sizes.sort();
        sizes.dedup();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_string(), "n_samples".to_string()];
        header.extend(ds.iter().map(|d| format!("d={d}")));
        w.write_record(&header).expect("in-memory write");
        let metrics: [(&str, fn(&CellSummary) -> String); 7] = [
            ("median_weight_error", |c| fmt_opt(c.median_weight_error)),
            ("median_mean_error", |c| fmt_opt(c.median_mean_error)),
            ("median_covariance_error", |c| {
                fmt_opt(c.median_covariance_error)
            }),
            ("pass_rate", |c| format!("{}", c.pass_rate())),
            ("first_dimension_failures", |c| {
                c.first_dimension_failures.to_string()
            }),
            ("timeouts", |c| c.timeouts.to_string()),
            ("median_elapsed_s", |c| fmt_opt(c.median_elapsed)),
        ];
        for (name, f) in metrics {
            for &s in &sizes {
                let mut row = vec![name.to_string(), s.to_string()];
                for &d in &ds {
                    let cell = self.summary.iter().find(|c| c.d == d && c.n_samples == s);
                    row.push(cell.map_or_else(String::new, f));
                }
                w.write_record(&row).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }
}
