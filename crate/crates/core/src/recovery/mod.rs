//! Parameter recovery: univariate moment solves, candidate filtering and
//! selection, off-diagonal covariance assembly and positive-definite repair.

mod estimate;
pub mod univariate;

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::Normal;
use thiserror::Error;

use crate::model::MomentIndex;
use crate::moments::V3Entry;
use crate::polysolve::{solve_linear, sym_eig, ComplexSolutionSet, LinalgError, Polynomial};

pub use estimate::{
    estimate_from_sets, estimate_parameters, estimate_shared_known_covariance,
    estimate_with_cycling, shared_covariance_inputs, EstimateOptions, SharedCovarianceInputs,
};

/// Largest imaginary part accepted as numerically real.
pub const IMAG_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum RecoveryError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("no statistically meaningful solution")]
    NoMeaningfulSolution,
    #[error("missing moment: {0}")]
    MissingMoment(String),
}

/// One real solution of a univariate stage: per-component weight, mean and
/// variance. With known weights the weights are copied from the input.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSolution {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl CandidateSolution {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    /// `(lambda, mu, sigma)` concatenated, the layout of the mixture moment
    /// polynomials.
    pub fn as_vector(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(&self.means)
            .chain(&self.variances)
            .copied()
            .collect()
    }

    /// Reorders components by ascending mean, then variance.
    fn sort_components(&mut self) {
        let mut idx: Vec<usize> = (0..self.k()).collect();
        idx.sort_by(|&a, &b| {
            self.means[a]
                .total_cmp(&self.means[b])
                .then(self.variances[a].total_cmp(&self.variances[b]))
        });
        self.weights = idx.iter().map(|&i| self.weights[i]).collect();
        self.means = idx.iter().map(|&i| self.means[i]).collect();
        self.variances = idx.iter().map(|&i| self.variances[i]).collect();
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Keeps the real points with positive variances (and positive weights,
/// including the implied last one, when the weights were unknowns).
///
/// Point layout: `(lambda_1..lambda_{k-1}, mu_1..mu_k, sigma_1..sigma_k)`
/// without known weights, `(mu_1..mu_k, sigma_1..sigma_k)` with them.
/// Output is in canonical order: with unknown weights the components of
/// each candidate are sorted by mean, and candidates are sorted
/// lexicographically.
pub fn filter_statistical(
    solutions: &ComplexSolutionSet,
    k: usize,
    known_weights: Option<&[f64]>,
) -> Vec<CandidateSolution> {
    let mut out = Vec::new();
    for z in &solutions.points {
        if z.iter().any(|x| x.im.abs() > IMAG_TOL || !x.re.is_finite()) {
            continue;
        }
        let re: Vec<f64> = z.iter().map(|x| x.re).collect();
        let (weights, rest) = match known_weights {
            Some(w) => (w.to_vec(), &re[..]),
            None => {
                let mut w = re[..k - 1].to_vec();
                w.push(1.0 - w.iter().sum::<f64>());
                (w, &re[k - 1..])
            }
        };
        let means = rest[..k].to_vec();
        let variances = rest[k..2 * k].to_vec();
        if variances.iter().any(|&s| s <= 0.0) {
            continue;
        }
        if known_weights.is_none() && weights.iter().any(|&w| w <= 0.0) {
            continue;
        }
        let mut c = CandidateSolution {
            weights,
            means,
            variances,
        };
        if known_weights.is_none() {
            c.sort_components();
        }
        out.push(c);
    }
    out.sort_by(|a, b| lex(&a.as_vector(), &b.as_vector()));
    out
}

/// Index of the candidate whose value of `extra_poly` (in the
/// [`CandidateSolution::as_vector`] layout) is closest to `extra_value`;
/// ties go to the earlier candidate. Returns the index and its residual.
pub fn select_by_extra_moment(
    candidates: &[CandidateSolution],
    extra_poly: &Polynomial,
    extra_value: f64,
) -> Result<(usize, f64), RecoveryError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let r = (extra_poly.eval(&c.as_vector()) - extra_value).abs();
        let r = if r.is_nan() { f64::INFINITY } else { r };
        if best.is_none_or(|(_, b)| r < b) {
            best = Some((i, r));
        }
    }
    best.ok_or(RecoveryError::NoMeaningfulSolution)
}

/// Replaces non-positive eigenvalues with `|z|`, `z ~ N(0, 1e-3^2)`, and
/// recomposes. Positive definite input is returned unchanged.
pub fn repair_psd<R: Rng + ?Sized>(s: &[Vec<f64>], rng: &mut R) -> Vec<Vec<f64>> {
    let d = s.len();
    let sym: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| 0.5 * (s[i][j] + s[j][i])).collect())
        .collect();
    let eig = sym_eig(&sym).expect("symmetrized input is symmetric");
    if eig.values.iter().all(|&w| w > 0.0) {
        return s.to_vec();
    }
    let normal = Normal::new(0.0, 1e-3).expect("valid normal");
    let values: Vec<f64> = eig
        .values
        .iter()
        .map(|&w| {
            if w > 0.0 {
                return w;
            }
            loop {
                let z: f64 = rng.sample(normal);
                if z != 0.0 {
                    return z.abs();
                }
            }
        })
        .collect();
    eig.recompose(&values)
}

#[derive(Debug, Error, PartialEq)]
pub enum OffDiagonalError {
    #[error("pair ({i}, {j}) has {got} moments, expected {expected}")]
    RowCount {
        i: usize,
        j: usize,
        got: usize,
        expected: usize,
    },
    #[error("moment {0} is not of the form t e_i + e_j")]
    UnsupportedIndex(MomentIndex),
    #[error(transparent)]
    Linear(#[from] LinalgError),
}

/// Whether `v` is supported exactly on `{i, j}` (or on `{i}` alone, which
/// never happens for valid entries).
fn on_pair(v: &MomentIndex, i: usize, j: usize) -> bool {
    v.0.iter()
        .enumerate()
        .all(|(p, &e)| e == 0 || p == i || p == j)
        && v.0[i] > 0
        && v.0[j] > 0
}

/// Entries of `m_v3` belonging to the pair `(i, j)`, in input order.
pub fn pair_entries(m_v3: &[V3Entry], i: usize, j: usize) -> Vec<&V3Entry> {
    m_v3.iter().filter(|e| on_pair(&e.index, i, j)).collect()
}

/// Solves the `k x k` linear system for the covariances `sigma_{l i j}`.
///
/// `means[l]`, `variances[l]` carry component `l`'s mean vector and
/// diagonal variances. A row for `t e_i + e_j` has coefficient
/// `t lambda_l m_{t-1}(mu_{li}, sigma_{lii})` and right-hand side
/// `value - sum_l lambda_l mu_{lj} m_t(mu_{li}, sigma_{lii})`; rows for
/// `e_i + t e_j` swap the roles of `i` and `j`.
pub fn offdiagonal_covariances(
    weights: &[f64],
    means: &[Vec<f64>],
    variances: &[Vec<f64>],
    entries: &[&V3Entry],
    i: usize,
    j: usize,
) -> Result<Vec<f64>, OffDiagonalError> {
    let k = weights.len();
    if entries.len() != k {
        return Err(OffDiagonalError::RowCount {
            i,
            j,
            got: entries.len(),
            expected: k,
        });
    }
    let mut a = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    for e in entries {
        let (ei, ej) = (e.index.0[i], e.index.0[j]);
        // (power dimension, linear dimension, t)
        let (p, q, t) = if ej == 1 {
            (i, j, ei)
        } else if ei == 1 {
            (j, i, ej)
        } else {
            return Err(OffDiagonalError::UnsupportedIndex(e.index.clone()));
        };
        let t = t as usize;
        let mut row = Vec::with_capacity(k);
        let mut rhs = e.value;
        for l in 0..k {
            let g = crate::moments::gaussian_moments_raw(means[l][p], variances[l][p], t);
            row.push(t as f64 * weights[l] * g[t - 1]);
            rhs -= weights[l] * means[l][q] * g[t];
        }
        a.push(row);
        b.push(rhs);
    }
    Ok(solve_linear(&a, &b)?.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polysolve::PathStats;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(points: Vec<Vec<Complex64>>) -> ComplexSolutionSet {
        let n = points.len();
        ComplexSolutionSet {
            points,
            residual_norms: vec![0.0; n],
            conditions: vec![1.0; n],
            path_stats: PathStats::default(),
        }
    }

    fn real(v: &[f64]) -> Vec<Complex64> {
        v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }

    #[test]
    fn filter_examples() {
        let keep = real(&[0.5, 1.0, -1.0, 1.0, 1.0]);
        let neg_var = real(&[0.5, 1.0, -1.0, -0.2, 1.0]);
        let mut complex = keep.clone();
        complex[1].im = 1e-3;
        let out = filter_statistical(&set(vec![keep, neg_var, complex]), 2, None);
        assert_eq!(out.len(), 1);
        // components sorted by mean
        assert_eq!(out[0].means, vec![-1.0, 1.0]);
        assert_eq!(out[0].weights, vec![0.5, 0.5]);
    }

    #[test]
    fn filter_rejects_bad_implied_weight() {
        let p = real(&[1.2, 0.0, 1.0, 1.0, 1.0]);
        assert!(filter_statistical(&set(vec![p]), 2, None).is_empty());
        let p = real(&[0.0, 1.0, 1.0, 1.0]);
        let out = filter_statistical(&set(vec![p]), 2, Some(&[0.1, 0.9]));
        assert_eq!(out[0].weights, vec![0.1, 0.9]);
        assert_eq!(out[0].means, vec![0.0, 1.0]);
    }

    #[test]
    fn selection_is_argmin() {
        let c = |m: f64| CandidateSolution {
            weights: vec![1.0],
            means: vec![m],
            variances: vec![1.0],
        };
        // m1 polynomial lambda * mu
        let poly = crate::moments::mixture_moment_polys(1, 1).polynomials[1].clone();
        assert_eq!(select_by_extra_moment(&[c(5.0)], &poly, 0.0).unwrap().0, 0);
        let (i, r) = select_by_extra_moment(&[c(0.1), c(3.0)], &poly, 0.0).unwrap();
        assert_eq!(i, 0);
        assert!((r - 0.1).abs() < 1e-15);
        let (i, _) = select_by_extra_moment(&[c(1.0), c(-1.0)], &poly, 0.0).unwrap();
        assert_eq!(i, 0);
        assert_eq!(
            select_by_extra_moment(&[], &poly, 0.0),
            Err(RecoveryError::NoMeaningfulSolution)
        );
    }

    #[test]
    fn repair_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spd = vec![vec![2.0, 0.3], vec![0.3, 1.0]];
        assert_eq!(repair_psd(&spd, &mut rng), spd);
        let out = repair_psd(&[vec![1.0, 0.0], vec![0.0, -0.5]], &mut rng);
        assert!((out[0][0] - 1.0).abs() < 1e-12);
        assert!(out[1][1] > 0.0 && out[1][1] <= 5e-3);
        assert!(out[0][1].abs() < 1e-12);
        let out = repair_psd(&[vec![1.0, 2.0], vec![2.0, 1.0]], &mut rng);
        assert_eq!(out[0][1], out[1][0]);
        let e = sym_eig(&out).unwrap();
        assert!(e.values[0] > 0.0 && e.values[0] <= 5e-3);
        assert!((e.values[1] - 3.0).abs() < 1e-12);
        let v = &e.vectors[1];
        assert!((v[0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((v[0] - v[1]).abs() < 1e-12);
    }

    #[test]
    fn offdiagonal_rows_of_both_types() {
        use crate::model::MixtureParams;
        use crate::moments::{exact_moment_sets, V3Method};
        let p = MixtureParams::new(
            vec![0.2, 0.3, 0.5],
            vec![vec![0.1, -1.0], vec![1.2, 0.4], vec![-0.8, 0.9]],
            vec![
                vec![vec![1.0, 0.3], vec![0.3, 2.0]],
                vec![vec![0.5, -0.1], vec![-0.1, 0.7]],
                vec![vec![1.5, 0.6], vec![0.6, 1.1]],
            ],
        );
        let variances: Vec<Vec<f64>> = (0..3)
            .map(|l| vec![p.cov(l, 0, 0), p.cov(l, 1, 1)])
            .collect();
        for method in [V3Method::K, V3Method::Low] {
            let sets = exact_moment_sets(&p, 3, method);
            let rows = pair_entries(&sets.m_v3, 0, 1);
            let s = offdiagonal_covariances(&p.weights, &p.means, &variances, &rows, 0, 1).unwrap();
            for l in 0..3 {
                assert!((s[l] - p.cov(l, 0, 1)).abs() < 1e-12);
            }
        }
    }
}
