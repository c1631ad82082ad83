//! The estimation pipelines: general recovery, recovery with cycling of the
//! weight-determining dimension, and uniform mixtures with a shared known
//! covariance.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::univariate::{solve_known_weights, solve_means_known_variance, solve_unknown_weights};
use super::{
    filter_statistical, offdiagonal_covariances, pair_entries, repair_psd, select_by_extra_moment,
    CandidateSolution, OffDiagonalError, RecoveryError, IMAG_TOL,
};
use crate::model::{validate_params, MixtureParams, MomentIndex, SolveReport, StageFailure};
use crate::moments::{
    gaussian_moments_raw, mixture_moment_polys, moment_sets_from_source, MomentSets, MomentSource,
    ReorderedMoments, V3Entry, V3Method,
};
use crate::polysolve::{solve_linear, TrackerOptions};

/// Knobs shared by the estimators.
#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub tracker: TrackerOptions,
    /// Seed for the positive-definite repair perturbations.
    pub seed: u64,
    /// Wall-clock limit; checked between stages.
    pub deadline: Option<Instant>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            tracker: TrackerOptions::default(),
            seed: 0,
            deadline: None,
        }
    }
}

impl EstimateOptions {
    fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

fn input(msg: impl Into<String>) -> RecoveryError {
    RecoveryError::Input(msg.into())
}

fn check_weights(k: usize, w: &[f64]) -> Result<(), RecoveryError> {
    if w.len() != k {
        return Err(input(format!(
            "expected {k} known weights, got {}",
            w.len()
        )));
    }
    if w.iter().any(|&x| !(x > 0.0)) {
        return Err(input("known weights must be positive"));
    }
    if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(input("known weights must sum to 1"));
    }
    Ok(())
}

fn check_shapes(
    d: usize,
    k: usize,
    m_v1: &[f64],
    m_v2: &[Vec<f64>],
    m_v3: Option<&[V3Entry]>,
    known: bool,
) -> Result<(), RecoveryError> {
    if k == 0 || d == 0 {
        return Err(input("k and d must be at least 1"));
    }
    let need_v1 = if known { 2 * k + 1 } else { 3 * k };
    if m_v1.len() < need_v1 {
        return Err(input(format!(
            "mV1 needs at least {need_v1} entries for k = {k}, got {}",
            m_v1.len()
        )));
    }
    if m_v2.len() != d - 1 {
        return Err(input(format!(
            "mV2 needs {} rows for d = {d}, got {}",
            d - 1,
            m_v2.len()
        )));
    }
    if let Some((i, row)) = m_v2.iter().enumerate().find(|(_, r)| r.len() < 2 * k) {
        return Err(input(format!(
            "mV2 row {} needs at least {} entries, got {}",
            i + 1,
            2 * k,
            row.len()
        )));
    }
    if let Some(v3) = m_v3 {
        if let Some(e) = v3.iter().find(|e| e.index.dim() != d) {
            return Err(input(format!(
                "mV3 index {:?} does not have {d} entries",
                e.index.0
            )));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let rows = pair_entries(v3, i, j);
                if rows.len() != k {
                    return Err(input(format!(
                        "mV3 has {} moments for dimensions ({}, {}), expected {k}",
                        rows.len(),
                        i + 1,
                        j + 1
                    )));
                }
                if let Some(e) = rows.iter().find(|e| e.index.0[i] != 1 && e.index.0[j] != 1) {
                    return Err(input(format!(
                        "mV3 index {:?} is not of the form t e_i + e_j",
                        e.index.0
                    )));
                }
            }
        }
    }
    Ok(())
}

struct Stage {
    candidate: CandidateSolution,
    found: usize,
    residual: f64,
}

/// Filters and selects one univariate stage. `row` holds raw moments
/// `m_0, m_1, ...`; the moment right after the solved ones, if present,
/// selects among the candidates.
fn pick(candidates: Vec<CandidateSolution>, k: usize, row: &[f64], used: usize) -> Option<Stage> {
    let found = candidates.len();
    if found == 0 {
        return None;
    }
    let (idx, residual) = match row.get(used + 1) {
        Some(&extra) => {
            let polys = mixture_moment_polys(k, used + 1);
            select_by_extra_moment(&candidates, &polys.polynomials[used + 1], extra).ok()?
        }
        None => (0, 0.0),
    };
    Some(Stage {
        candidate: candidates.into_iter().nth(idx)?,
        found,
        residual,
    })
}

/// General recovery from moment groups.
///
/// `m_v1` is `[1, m_{e_1}, ..., m_{3k e_1}]` (the last entry may be
/// absent, in which case the first candidate in canonical order is kept);
/// `m_v2[i - 1]` holds orders `1..=2k+1` of dimension `i`. Without `m_v3`
/// the covariances are diagonal. With `known_weights` the first dimension
/// is solved like the others.
pub fn estimate_parameters(
    d: usize,
    k: usize,
    m_v1: &[f64],
    m_v2: &[Vec<f64>],
    m_v3: Option<&[V3Entry]>,
    known_weights: Option<&[f64]>,
    opts: &EstimateOptions,
) -> Result<SolveReport, RecoveryError> {
    let started = Instant::now();
    check_shapes(d, k, m_v1, m_v2, m_v3, known_weights.is_some())?;
    if let Some(w) = known_weights {
        check_weights(k, w)?;
    }
    let finish = |mut r: SolveReport| {
        r.elapsed = started.elapsed().as_secs_f64();
        r
    };
    let fail = |stage: StageFailure, found: usize, per_dim: &[usize]| {
        let mut r = SolveReport::failure(stage, found);
        r.candidates_per_dimension = per_dim.to_vec();
        Ok(finish(r))
    };

    let mut means = vec![vec![0.0; d]; k];
    let mut vars = vec![vec![0.0; d]; k];
    let mut per_dim = Vec::with_capacity(d);
    let mut residuals = Vec::with_capacity(d);
    let mut candidates_found = 0;
    let weights: Vec<f64>;
    let first_known: usize;
    match known_weights {
        Some(w) => {
            weights = w.to_vec();
            first_known = 0;
        }
        None => {
            if opts.expired() {
                return fail(StageFailure::Timeout, 0, &per_dim);
            }
            let sols = solve_unknown_weights(k, &m_v1[..3 * k], &opts.tracker);
            let cands = filter_statistical(&sols, k, None);
            let Some(stage) = pick(cands, k, m_v1, 3 * k - 1) else {
                return fail(StageFailure::Dim1System, 0, &[0]);
            };
            candidates_found = stage.found;
            per_dim.push(stage.found);
            residuals.push(stage.residual);
            for l in 0..k {
                means[l][0] = stage.candidate.means[l];
                vars[l][0] = stage.candidate.variances[l];
            }
            weights = stage.candidate.weights;
            first_known = 1;
        }
    }

    for dim in first_known..d {
        if opts.expired() {
            return fail(StageFailure::Timeout, candidates_found, &per_dim);
        }
        let row: Vec<f64> = if dim == 0 {
            m_v1.to_vec()
        } else {
            std::iter::once(1.0)
                .chain(m_v2[dim - 1].iter().copied())
                .collect()
        };
        let sols = solve_known_weights(&weights, &row[..=2 * k], &opts.tracker);
        let cands = filter_statistical(&sols, k, Some(&weights));
        let stage = pick(cands, k, &row, 2 * k);
        per_dim.push(stage.as_ref().map_or(0, |s| s.found));
        if dim == 0 {
            candidates_found = per_dim[0];
        }
        let Some(stage) = stage else {
            let tag = if dim == 0 {
                StageFailure::Dim1System
            } else {
                StageFailure::DimISystem(dim + 1)
            };
            return fail(tag, candidates_found, &per_dim);
        };
        residuals.push(stage.residual);
        for l in 0..k {
            means[l][dim] = stage.candidate.means[l];
            vars[l][dim] = stage.candidate.variances[l];
        }
    }

    let mut covs: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|l| {
            (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| if i == j { vars[l][i] } else { 0.0 })
                        .collect()
                })
                .collect()
        })
        .collect();
    if let Some(v3) = m_v3 {
        if opts.expired() {
            return fail(StageFailure::Timeout, candidates_found, &per_dim);
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let rows = pair_entries(v3, i, j);
                match offdiagonal_covariances(&weights, &means, &vars, &rows, i, j) {
                    Ok(s) => {
                        for l in 0..k {
                            covs[l][i][j] = s[l];
                            covs[l][j][i] = s[l];
                        }
                    }
                    Err(OffDiagonalError::Linear(_)) => {
                        return fail(StageFailure::OffdiagonalSystem, candidates_found, &per_dim)
                    }
                    Err(e) => return Err(input(e.to_string())),
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let covs = covs.iter().map(|c| repair_psd(c, &mut rng)).collect();
    let params = MixtureParams::new(weights, means, covs);
    Ok(finish(SolveReport {
        params: Some(params),
        stage_failed: StageFailure::None,
        candidates_found,
        candidates_per_dimension: per_dim,
        residuals,
        elapsed: 0.0,
        leading_dimension: 1,
    }))
}

/// [`estimate_parameters`] on a [`MomentSets`] value. An empty `mV3`
/// means diagonal covariances.
pub fn estimate_from_sets(
    sets: &MomentSets,
    k: usize,
    known_weights: Option<&[f64]>,
    opts: &EstimateOptions,
) -> Result<SolveReport, RecoveryError> {
    let v3 = (!sets.m_v3.is_empty()).then_some(sets.m_v3.as_slice());
    estimate_parameters(
        sets.dim(),
        k,
        &sets.m_v1,
        &sets.m_v2,
        v3,
        known_weights,
        opts,
    )
}

/// Recovery that retries with another dimension determining the weights
/// whenever a diagonal stage finds no meaningful candidate. Attempt `n`
/// moves dimension `n` to the front; at most `d` attempts are made.
pub fn estimate_with_cycling(
    k: usize,
    source: &dyn MomentSource,
    method: V3Method,
    known_weights: Option<&[f64]>,
    opts: &EstimateOptions,
) -> Result<SolveReport, RecoveryError> {
    let started = Instant::now();
    let d = source.dim();
    if d < 2 {
        return Err(input("cycling needs at least two dimensions"));
    }
    let mut last = None;
    for n in 0..d {
        let order: Vec<usize> = std::iter::once(n)
            .chain((0..d).filter(|&i| i != n))
            .collect();
        let view = ReorderedMoments {
            inner: source,
            order: order.clone(),
        };
        let sets = moment_sets_from_source(&view, k, method)
            .map_err(|e| RecoveryError::MissingMoment(e.to_string()))?;
        let mut report = estimate_from_sets(&sets, k, known_weights, opts)?;
        report.leading_dimension = n + 1;
        report.elapsed = started.elapsed().as_secs_f64();
        if let Some(p) = report.params.take() {
            let mut inverse = vec![0; d];
            for (i, &o) in order.iter().enumerate() {
                inverse[o] = i;
            }
            report.params = Some(p.with_dimension_order(&inverse));
            return Ok(report);
        }
        match report.stage_failed {
            StageFailure::Dim1System | StageFailure::DimISystem(_) => last = Some(report),
            _ => return Ok(report),
        }
    }
    Ok(last.expect("at least one attempt"))
}

/// Moment inputs for the shared-covariance estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedCovarianceInputs {
    /// `m_{e_1}, ..., m_{k e_1}`.
    pub m_v1: Vec<f64>,
    /// Row `i - 1`: `m_{e_i}, m_{e_1 + e_i}, ..., m_{(k-1) e_1 + e_i}`.
    pub m_v2: Vec<Vec<f64>>,
}

pub fn shared_covariance_inputs(
    src: &dyn MomentSource,
    k: usize,
) -> Result<SharedCovarianceInputs, RecoveryError> {
    let d = src.dim();
    let get = |v: MomentIndex| {
        src.require(&v)
            .map_err(|e| RecoveryError::MissingMoment(e.to_string()))
    };
    let m_v1 = (1..=k as u32)
        .map(|t| get(MomentIndex::axis(d, 0, t)))
        .collect::<Result<_, _>>()?;
    let m_v2 = (1..d)
        .map(|i| {
            (0..k as u32)
                .map(|t| get(MomentIndex::pair(d, 0, t, i, 1)))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(SharedCovarianceInputs { m_v1, m_v2 })
}

/// Means of a uniform mixture whose components share the known covariance
/// `sigma`.
pub fn estimate_shared_known_covariance(
    d: usize,
    k: usize,
    sigma: &[Vec<f64>],
    m_v1: &[f64],
    m_v2: &[Vec<f64>],
    opts: &EstimateOptions,
) -> Result<SolveReport, RecoveryError> {
    let started = Instant::now();
    if k == 0 || d == 0 {
        return Err(input("k and d must be at least 1"));
    }
    if sigma.len() != d || sigma.iter().any(|r| r.len() != d) {
        return Err(input(format!("sigma must be {d} x {d}")));
    }
    let w = vec![1.0 / k as f64; k];
    let probe = MixtureParams::new(vec![1.0], vec![vec![0.0; d]], vec![sigma.to_vec()]);
    if !validate_params(&probe).is_empty() {
        return Err(input("sigma must be symmetric positive definite"));
    }
    if m_v1.len() < k {
        return Err(input(format!(
            "need {k} first-dimension moments, got {}",
            m_v1.len()
        )));
    }
    if m_v2.len() != d - 1 || m_v2.iter().any(|r| r.len() < k) {
        return Err(input(format!("need {} rows of {k} cross moments", d - 1)));
    }
    let finish = |mut r: SolveReport| {
        r.elapsed = started.elapsed().as_secs_f64();
        r
    };
    if opts.expired() {
        return Ok(finish(SolveReport::failure(StageFailure::Timeout, 0)));
    }
    let s11 = sigma[0][0];
    let raw: Vec<f64> = std::iter::once(1.0)
        .chain(m_v1[..k].iter().copied())
        .collect();
    let Ok(sols) = solve_means_known_variance(k, s11, &raw, &opts.tracker) else {
        return Ok(finish(SolveReport::failure(StageFailure::Dim1System, 0)));
    };
    // every real solution is a relabelling of the others in its orbit
    let mut cands: Vec<Vec<f64>> = Vec::new();
    for z in &sols.points {
        if z.iter().any(|x| x.im.abs() > IMAG_TOL) {
            continue;
        }
        let mut mu: Vec<f64> = z.iter().map(|x| x.re).collect();
        mu.sort_by(f64::total_cmp);
        let scale = mu.iter().map(|x| x.abs()).fold(1.0, f64::max);
        if !cands.iter().any(|c| {
            c.iter()
                .zip(&mu)
                .all(|(a, b)| (a - b).abs() <= 1e-8 * scale)
        }) {
            cands.push(mu);
        }
    }
    cands.sort_by(|a, b| super::lex(a, b));
    let found = cands.len();
    let Some(mu1) = cands.into_iter().next() else {
        return Ok(finish(SolveReport::failure(StageFailure::Dim1System, 0)));
    };
    let mut means = vec![vec![0.0; d]; k];
    for l in 0..k {
        means[l][0] = mu1[l];
    }
    let g: Vec<Vec<f64>> = mu1
        .iter()
        .map(|&m| gaussian_moments_raw(m, s11, k))
        .collect();
    for i in 1..d {
        if opts.expired() {
            return Ok(finish(SolveReport::failure(StageFailure::Timeout, found)));
        }
        let s1i = sigma[0][i];
        let mut a = Vec::with_capacity(k);
        let mut b = Vec::with_capacity(k);
        for t in 0..k {
            a.push((0..k).map(|l| w[l] * g[l][t]).collect::<Vec<_>>());
            let shift: f64 = if t == 0 {
                0.0
            } else {
                (0..k).map(|l| w[l] * t as f64 * s1i * g[l][t - 1]).sum()
            };
            b.push(m_v2[i - 1][t] - shift);
        }
        match solve_linear(&a, &b) {
            Ok(sol) => {
                for l in 0..k {
                    means[l][i] = sol.x[l];
                }
            }
            Err(_) => {
                let mut r = SolveReport::failure(StageFailure::DimISystem(i + 1), found);
                r.candidates_per_dimension = vec![found];
                return Ok(finish(r));
            }
        }
    }
    let params = MixtureParams::new(w, means, vec![sigma.to_vec(); k]);
    Ok(finish(SolveReport {
        params: Some(params),
        stage_failed: StageFailure::None,
        candidates_found: found,
        candidates_per_dimension: vec![found],
        residuals: Vec::new(),
        elapsed: 0.0,
        leading_dimension: 1,
    }))
}
