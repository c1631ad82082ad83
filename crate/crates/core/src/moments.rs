//! Gaussian and mixture moments: the univariate recursion, mixed moments
//! `E[X_i^t X_j]`, sample moments and the moment index sets used by the
//! recovery pipeline.
//!
//! Variances, not standard deviations, are the second parameter of every
//! univariate Gaussian here.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MixtureParams, MomentIndex};
use crate::polysolve::Polynomial;

#[derive(Debug, Error, PartialEq)]
pub enum MomentsError {
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("mixed moment needs distinct dimensions, got i = j = {0}")]
    SameDimension(usize),
    #[error("dimension {index} out of range for d = {d}")]
    DimensionOutOfRange { index: usize, d: usize },
    #[error("sample is empty")]
    EmptySample,
    #[error("sample row {row} has {got} entries, expected {expected}")]
    RaggedSample {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("moment index must have a positive entry")]
    ZeroIndex,
    #[error("unknown moment method {0:?} (expected \"k\" or \"low\")")]
    UnknownMethod(String),
    #[error("moment {0} is not available")]
    Missing(MomentIndex),
    #[error("k must be at least 1")]
    ZeroComponents,
}

/// Moments `m_0..=m_max_order` of `N(mean, variance)`.
pub fn gaussian_moments_1d(
    mean: f64,
    variance: f64,
    max_order: usize,
) -> Result<Vec<f64>, MomentsError> {
    if !(variance > 0.0) {
        return Err(MomentsError::NonPositiveVariance(variance));
    }
    Ok(gaussian_moments_raw(mean, variance, max_order))
}

/// The recursion without the variance check; also valid for complex-free
/// evaluation at degenerate or negative variances.
pub(crate) fn gaussian_moments_raw(mean: f64, variance: f64, max_order: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(max_order + 1);
    m.push(1.0);
    if max_order >= 1 {
        m.push(mean);
    }
    for i in 2..=max_order {
        let next = mean * m[i - 1] + (i - 1) as f64 * variance * m[i - 2];
        m.push(next);
    }
    m
}

/// Gaussian moment polynomials `P_0..=P_max_order` in the two unknowns
/// `(mu, sigma)`.
pub fn gaussian_moment_polys(max_order: usize) -> Vec<Polynomial> {
    let mu = Polynomial::var(2, 0);
    let sigma = Polynomial::var(2, 1);
    let mut out = vec![Polynomial::constant(2, 1.0)];
    if max_order >= 1 {
        out.push(mu.clone());
    }
    for i in 2..=max_order {
        let a = &mu * &out[i - 1];
        let b = (&sigma * &out[i - 2]).scale((i - 1) as f64);
        out.push(&a + &b);
    }
    out
}

/// Mixture moment polynomials of orders `0..=max_order` in the unknowns
/// `(lambda_1..lambda_k, mu_1..mu_k, sigma_1..sigma_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateMomentPolys {
    pub k: usize,
    pub max_order: usize,
    pub polynomials: Vec<Polynomial>,
}

impl UnivariateMomentPolys {
    pub fn lambda(&self, l: usize) -> usize {
        l
    }

    pub fn mu(&self, l: usize) -> usize {
        self.k + l
    }

    pub fn sigma(&self, l: usize) -> usize {
        2 * self.k + l
    }

    pub fn eval(&self, weights: &[f64], means: &[f64], variances: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = weights
            .iter()
            .chain(means)
            .chain(variances)
            .copied()
            .collect();
        self.polynomials.iter().map(|p| p.eval(&z)).collect()
    }
}

fn build_mixture_polys(k: usize, max_order: usize) -> UnivariateMomentPolys {
    let n = 3 * k;
    let base = gaussian_moment_polys(max_order);
    let mut polys = vec![Polynomial::zero(n); max_order + 1];
    for l in 0..k {
        let images = [Polynomial::var(n, k + l), Polynomial::var(n, 2 * k + l)];
        let lam = Polynomial::var(n, l);
        for (i, p) in base.iter().enumerate() {
            let term = &lam * &p.compose(&images);
            polys[i] = &polys[i] + &term;
        }
    }
    UnivariateMomentPolys {
        k,
        max_order,
        polynomials: polys,
    }
}

/// Cached mixture moment polynomials for `k` components.
pub fn mixture_moment_polys(k: usize, max_order: usize) -> Arc<UnivariateMomentPolys> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<UnivariateMomentPolys>>>> =
        OnceLock::new();
    assert!(k >= 1 && max_order >= 1, "need k >= 1 and max_order >= 1");
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("moment cache poisoned");
    guard
        .entry((k, max_order))
        .or_insert_with(|| Arc::new(build_mixture_polys(k, max_order)))
        .clone()
}

/// Numeric mixture moments `m_0..=max_order` of a univariate mixture.
pub fn univariate_mixture_moments(
    weights: &[f64],
    means: &[f64],
    variances: &[f64],
    max_order: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; max_order + 1];
    for ((w, m), v) in weights.iter().zip(means).zip(variances) {
        for (o, g) in out.iter_mut().zip(gaussian_moments_raw(*m, *v, max_order)) {
            *o += w * g;
        }
    }
    out
}

/// `E[X_i^t X_j]` for the mixture, with zero-based dimensions `i != j`.
pub fn mixed_moment(
    params: &MixtureParams,
    t: u32,
    i: usize,
    j: usize,
) -> Result<f64, MomentsError> {
    if i == j {
        return Err(MomentsError::SameDimension(i));
    }
    for index in [i, j] {
        if index >= params.d {
            return Err(MomentsError::DimensionOutOfRange { index, d: params.d });
        }
    }
    let t = t as usize;
    let mut total = 0.0;
    for l in 0..params.k {
        let g = gaussian_moments_raw(params.mean(l, i), params.cov(l, i, i), t);
        let lower = if t >= 1 { g[t - 1] } else { 0.0 };
        total +=
            params.weights[l] * (params.mean(l, j) * g[t] + t as f64 * params.cov(l, i, j) * lower);
    }
    Ok(total)
}

/// Which off-diagonal moments are used for the covariance systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum V3Method {
    /// `t e_i + e_j` for `t = 1..=k`.
    #[default]
    #[serde(rename = "k")]
    K,
    /// Lower-order mix of `t e_i + e_j` and `e_i + t e_j`.
    #[serde(rename = "low")]
    Low,
}

impl fmt::Display for V3Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            V3Method::K => "k",
            V3Method::Low => "low",
        })
    }
}

impl FromStr for V3Method {
    type Err = MomentsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "k" => Ok(V3Method::K),
            "low" => Ok(V3Method::Low),
            other => Err(MomentsError::UnknownMethod(other.to_string())),
        }
    }
}

/// Off-diagonal index set for one pair `i < j` (zero-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndices {
    pub i: usize,
    pub j: usize,
    pub indices: Vec<MomentIndex>,
}

/// Exponent pairs `(a, b)` for `a e_i + b e_j`, in emission order.
pub fn v3_exponents(k: usize, method: V3Method) -> Vec<(u32, u32)> {
    let k = k as u32;
    match method {
        V3Method::K => (1..=k).map(|t| (t, 1)).collect(),
        V3Method::Low => {
            let (pairs_to, singles_to) = if k % 2 == 0 {
                (k / 2, k / 2 + 1)
            } else {
                ((k + 1) / 2, (k + 1) / 2)
            };
            let mut out: Vec<(u32, u32)> = (1..=singles_to.max(pairs_to)).map(|t| (t, 1)).collect();
            out.extend((2..=pairs_to).map(|t| (1, t)));
            out
        }
    }
}

/// Off-diagonal moment indices for every pair `i < j`, pairs in
/// lexicographic order. Each pair gets exactly `k` indices.
pub fn select_v3_indices(k: usize, d: usize, method: V3Method) -> Vec<PairIndices> {
    let exps = v3_exponents(k, method);
    let mut out = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            out.push(PairIndices {
                i,
                j,
                indices: exps
                    .iter()
                    .map(|&(a, b)| MomentIndex::pair(d, i, a, j, b))
                    .collect(),
            });
        }
    }
    out
}

/// Symmetric tensor position of a moment: its order and the one-based
/// dimension labels repeated by multiplicity, ascending.
pub fn tensor_index(v: &MomentIndex) -> Result<(u32, Vec<usize>), MomentsError> {
    if v.order() == 0 {
        return Err(MomentsError::ZeroIndex);
    }
    let labels = v
        .entries()
        .iter()
        .enumerate()
        .flat_map(|(j, &e)| std::iter::repeat_n(j + 1, e as usize))
        .collect();
    Ok((v.order(), labels))
}

/// One off-diagonal moment value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct V3Entry {
    pub index: MomentIndex,
    pub value: f64,
}

/// The three moment groups consumed by the estimators.
///
/// `m_v1 = [1, m_{e_1}, ..., m_{3k e_1}]`; `m_v2[i - 1]` holds orders
/// `1..=2k+1` of dimension `i` for `i >= 1` (zero-based); `m_v3` holds the
/// off-diagonal moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSets {
    #[serde(rename = "mV1")]
    pub m_v1: Vec<f64>,
    #[serde(rename = "mV2")]
    pub m_v2: Vec<Vec<f64>>,
    #[serde(rename = "mV3")]
    pub m_v3: Vec<V3Entry>,
    pub method: V3Method,
}

impl MomentSets {
    pub fn dim(&self) -> usize {
        1 + self.m_v2.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("moment sets serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Largest `k` for which the first-dimension list is long enough
    /// (`3k + 1` entries).
    pub fn max_k(&self) -> usize {
        self.m_v1.len().saturating_sub(1) / 3
    }
}

/// Anything that can report moments by index.
pub trait MomentSource {
    fn dim(&self) -> usize;
    fn moment(&self, v: &MomentIndex) -> Option<f64>;

    fn require(&self, v: &MomentIndex) -> Result<f64, MomentsError> {
        self.moment(v)
            .ok_or_else(|| MomentsError::Missing(v.clone()))
    }
}

impl MomentSource for MomentSets {
    fn dim(&self) -> usize {
        MomentSets::dim(self)
    }

    fn moment(&self, v: &MomentIndex) -> Option<f64> {
        if v.dim() != self.dim() {
            return None;
        }
        let support = v.support();
        match support.as_slice() {
            [] => Some(1.0),
            [0] => self.m_v1.get(v.0[0] as usize).copied(),
            [i] => self.m_v2.get(i - 1)?.get(v.0[*i] as usize - 1).copied(),
            _ => self.m_v3.iter().find(|e| &e.index == v).map(|e| e.value),
        }
    }
}

/// Exact moments of known parameters. Covers pure powers `t e_i` and the
/// mixed moments `t e_i + e_j`.
#[derive(Debug, Clone, Copy)]
pub struct ExactMoments<'a>(pub &'a MixtureParams);

impl MomentSource for ExactMoments<'_> {
    fn dim(&self) -> usize {
        self.0.d
    }

    fn moment(&self, v: &MomentIndex) -> Option<f64> {
        let p = self.0;
        if v.dim() != p.d {
            return None;
        }
        let support = v.support();
        match support.as_slice() {
            [] => Some(1.0),
            [i] => {
                let t = v.0[*i] as usize;
                let means: Vec<f64> = (0..p.k).map(|l| p.mean(l, *i)).collect();
                let vars: Vec<f64> = (0..p.k).map(|l| p.cov(l, *i, *i)).collect();
                Some(univariate_mixture_moments(&p.weights, &means, &vars, t)[t])
            }
            [a, b] => {
                let (ea, eb) = (v.0[*a], v.0[*b]);
                if eb == 1 {
                    mixed_moment(p, ea, *a, *b).ok()
                } else if ea == 1 {
                    mixed_moment(p, eb, *b, *a).ok()
                } else {
                    None
                }
            }
            _ => None,
        }
    }
}

/// Another source with dimensions relabelled: dimension `i` of this view
/// is dimension `order[i]` of the inner source.
pub struct ReorderedMoments<'a> {
    pub inner: &'a dyn MomentSource,
    pub order: Vec<usize>,
}

impl MomentSource for ReorderedMoments<'_> {
    fn dim(&self) -> usize {
        self.order.len()
    }

    fn moment(&self, v: &MomentIndex) -> Option<f64> {
        if v.dim() != self.order.len() {
            return None;
        }
        let mut w = vec![0; v.dim()];
        for (i, &o) in self.order.iter().enumerate() {
            w[o] = v.0[i];
        }
        self.inner.moment(&MomentIndex(w))
    }
}

/// Another source with some moments replaced.
pub struct OverriddenMoments<'a> {
    pub inner: &'a dyn MomentSource,
    pub overrides: HashMap<MomentIndex, f64>,
}

impl MomentSource for OverriddenMoments<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn moment(&self, v: &MomentIndex) -> Option<f64> {
        self.overrides
            .get(v)
            .copied()
            .or_else(|| self.inner.moment(v))
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sample rows (`n x d`) viewed as a moment source; every lookup is a
/// fresh pass over the data.
#[derive(Debug, Clone, Copy)]
pub struct SampleMoments<'a> {
    rows: &'a [Vec<f64>],
    d: usize,
}

impl<'a> SampleMoments<'a> {
    pub fn new(rows: &'a [Vec<f64>]) -> Result<Self, MomentsError> {
        let d = check_rows(rows)?;
        Ok(Self { rows, d })
    }

    /// Means of the monomials `y^v` for all `indices` in one pass.
    pub fn many(&self, indices: &[MomentIndex]) -> Vec<f64> {
        mean_monomials(self.rows, indices)
    }
}

impl MomentSource for SampleMoments<'_> {
    fn dim(&self) -> usize {
        self.d
    }

    fn moment(&self, v: &MomentIndex) -> Option<f64> {
        if v.dim() != self.d {
            return None;
        }
        Some(mean_monomials(self.rows, std::slice::from_ref(v))[0])
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize, MomentsError> {
    let first = rows.first().ok_or(MomentsError::EmptySample)?;
    let d = first.len();
    if d == 0 {
        return Err(MomentsError::EmptySample);
    }
    for (row, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(MomentsError::RaggedSample {
                row,
                got: r.len(),
                expected: d,
            });
        }
    }
    Ok(d)
}

fn mean_monomials(rows: &[Vec<f64>], indices: &[MomentIndex]) -> Vec<f64> {
    let d = rows.first().map_or(0, Vec::len);
    let factors: Vec<Vec<(usize, usize)>> = indices
        .iter()
        .map(|v| {
            v.support()
                .into_iter()
                .map(|i| (i, v.0[i] as usize))
                .collect()
        })
        .collect();
    let max_exp = indices
        .iter()
        .flat_map(|v| v.0.iter().copied())
        .max()
        .unwrap_or(0) as usize;
    let stride = max_exp + 1;
    let mut powers = vec![1.0; d * stride];
    let mut sums = vec![CompensatedSum::default(); indices.len()];
    for r in rows {
        for (i, &y) in r.iter().enumerate() {
            let row = &mut powers[i * stride..(i + 1) * stride];
            for e in 1..stride {
                row[e] = row[e - 1] * y;
            }
        }
        for (acc, fs) in sums.iter_mut().zip(&factors) {
            let mut prod = 1.0;
            for &(i, e) in fs {
                prod *= powers[i * stride + e];
            }
            acc.add(prod);
        }
    }
    let n = rows.len() as f64;
    sums.iter().map(|s| s.value() / n).collect()
}

/// All indices needed by the estimators for `k` components in `d`
/// dimensions, in `MomentSets` layout order.
fn layout(
    k: usize,
    d: usize,
    method: V3Method,
) -> (Vec<MomentIndex>, Vec<Vec<MomentIndex>>, Vec<MomentIndex>) {
    let v1 = (1..=3 * k as u32)
        .map(|t| MomentIndex::axis(d, 0, t))
        .collect();
    let v2 = (1..d)
        .map(|i| {
            (1..=(2 * k + 1) as u32)
                .map(|t| MomentIndex::axis(d, i, t))
                .collect()
        })
        .collect();
    let v3 = select_v3_indices(k, d, method)
        .into_iter()
        .flat_map(|p| p.indices)
        .collect();
    (v1, v2, v3)
}

/// Sample moment sets from `n x d` rows. With `d = 1` the second and third
/// groups are empty.
pub fn sample_moments(
    rows: &[Vec<f64>],
    k: usize,
    method: V3Method,
) -> Result<MomentSets, MomentsError> {
    if k == 0 {
        return Err(MomentsError::ZeroComponents);
    }
    let d = check_rows(rows)?;
    let (v1, v2, v3) = layout(k, d, method);
    let mut all: Vec<MomentIndex> = v1.clone();
    all.extend(v2.iter().flatten().cloned());
    all.extend(v3.iter().cloned());
    let values = mean_monomials(rows, &all);
    let mut it = values.into_iter();
    let mut m_v1 = vec![1.0];
    m_v1.extend(it.by_ref().take(v1.len()));
    let m_v2 = v2
        .iter()
        .map(|row| it.by_ref().take(row.len()).collect())
        .collect();
    let m_v3 = v3
        .into_iter()
        .zip(it)
        .map(|(index, value)| V3Entry { index, value })
        .collect();
    Ok(MomentSets {
        m_v1,
        m_v2,
        m_v3,
        method,
    })
}

/// Moment sets gathered from any source.
pub fn moment_sets_from_source(
    src: &dyn MomentSource,
    k: usize,
    method: V3Method,
) -> Result<MomentSets, MomentsError> {
    if k == 0 {
        return Err(MomentsError::ZeroComponents);
    }
    let d = src.dim();
    let (v1, v2, v3) = layout(k, d, method);
    let mut m_v1 = vec![1.0];
    for v in &v1 {
        m_v1.push(src.require(v)?);
    }
    let m_v2 = v2
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| src.require(v))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let m_v3 = v3
        .into_iter()
        .map(|index| src.require(&index).map(|value| V3Entry { index, value }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MomentSets {
        m_v1,
        m_v2,
        m_v3,
        method,
    })
}

/// Exact moment sets of known parameters.
pub fn exact_moment_sets(params: &MixtureParams, k: usize, method: V3Method) -> MomentSets {
    moment_sets_from_source(&ExactMoments(params), k, method)
        .expect("exact moments cover every emitted index")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn standard_normal_moments() {
        assert_eq!(
            gaussian_moments_1d(0.0, 1.0, 6).unwrap(),
            vec![1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0]
        );
        let m = gaussian_moments_1d(1.0, 1.0, 4).unwrap();
        assert_eq!((m[3], m[4]), (4.0, 10.0));
        assert_eq!(gaussian_moments_1d(2.0, 0.5, 2).unwrap()[2], 4.5);
        assert_eq!(
            gaussian_moments_1d(0.0, 0.0, 2),
            Err(MomentsError::NonPositiveVariance(0.0))
        );
        assert!(gaussian_moments_1d(0.0, -1.0, 2).is_err());
    }

    #[test]
    fn second_moment_against_monte_carlo() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(2.0, 0.5f64.sqrt()).unwrap();
        let n = 1_000_000;
        let mc: f64 = (0..n).map(|_| normal.sample(&mut rng).powi(2)).sum::<f64>() / n as f64;
        assert!((mc - 4.5).abs() < 1e-2);
    }

    #[test]
    fn mixture_polys_examples() {
        let p = mixture_moment_polys(2, 5);
        let m = p.eval(&[0.5, 0.5], &[1.0, -1.0], &[1.0, 1.0]);
        assert!((m[2] - 2.0).abs() < 1e-14);
        let crab = p.eval(&[0.58, 0.42], &[19.30, 13.40], &[9.67, 20.35]);
        for (got, want) in crab[1..]
            .iter()
            .zip([16.8, 304.9, 5832.0, 116061.0, 2385610.0])
        {
            assert!(((got - want) / want).abs() < 0.01, "{got} vs {want}");
        }
        // orders 0 and 1
        let z = [0.3, 0.7, 2.0, -1.0, 0.5, 0.25];
        assert!((p.polynomials[0].eval(&z) - 1.0).abs() < 1e-15);
        assert!((p.polynomials[1].eval(&z) - (0.6 - 0.7)).abs() < 1e-15);
    }

    #[test]
    fn single_component_matches_recursion() {
        let p = mixture_moment_polys(1, 6);
        let lambda_one = [
            Polynomial::constant(2, 1.0),
            Polynomial::var(2, 0),
            Polynomial::var(2, 1),
        ];
        for (mixed, plain) in p.polynomials.iter().zip(gaussian_moment_polys(6)) {
            assert_eq!(mixed.compose(&lambda_one), plain);
        }
    }

    #[test]
    fn weighted_degree_grading() {
        let p = mixture_moment_polys(2, 6);
        for (i, poly) in p.polynomials.iter().enumerate() {
            for (e, _) in poly.terms() {
                // one lambda factor, then mu weight 1 and sigma weight 2
                let w = e[2] + e[3] + 2 * (e[4] + e[5]);
                assert_eq!(e[0] + e[1], 1);
                assert_eq!(w as usize, i);
            }
        }
    }

    #[test]
    fn mixed_moment_examples() {
        let p = MixtureParams::new(
            vec![1.0],
            vec![vec![0.0, 0.0]],
            vec![vec![vec![1.0, 0.3], vec![0.3, 1.0]]],
        );
        assert!(close(mixed_moment(&p, 1, 0, 1).unwrap(), 0.3, 1e-15));
        let p = MixtureParams::new(
            vec![1.0],
            vec![vec![1.0, 2.0]],
            vec![vec![vec![1.0, 0.5], vec![0.5, 1.0]]],
        );
        assert!(close(mixed_moment(&p, 2, 0, 1).unwrap(), 5.0, 1e-15));
        assert_eq!(
            mixed_moment(&p, 2, 1, 1),
            Err(MomentsError::SameDimension(1))
        );
    }

    #[test]
    fn off_diagonal_index_sets() {
        let e = |a: u32, b: u32| MomentIndex(vec![a, b]);
        let k2 = select_v3_indices(2, 2, V3Method::K);
        assert_eq!(k2[0].indices, vec![e(1, 1), e(2, 1)]);
        let low3 = select_v3_indices(3, 2, V3Method::Low);
        assert_eq!(low3[0].indices, vec![e(1, 1), e(2, 1), e(1, 2)]);
        let low2 = select_v3_indices(2, 2, V3Method::Low);
        assert_eq!(low2[0].indices, vec![e(1, 1), e(2, 1)]);
        assert!(select_v3_indices(3, 1, V3Method::K).is_empty());
    }

    #[test]
    fn tensor_index_examples() {
        let t = |v: Vec<u32>| tensor_index(&MomentIndex(v)).unwrap();
        assert_eq!(t(vec![1, 0, 2]), (3, vec![1, 3, 3]));
        assert_eq!(t(vec![2, 0]), (2, vec![1, 1]));
        assert_eq!(t(vec![0, 1, 1, 0]), (2, vec![2, 3]));
        assert_eq!(
            tensor_index(&MomentIndex(vec![0, 0])),
            Err(MomentsError::ZeroIndex)
        );
    }

    #[test]
    fn point_mass_sample() {
        let rows = vec![vec![2.0, 3.0]; 5];
        let m = sample_moments(&rows, 1, V3Method::K).unwrap();
        assert_eq!(m.m_v1, vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!(m.m_v2, vec![vec![3.0, 9.0, 27.0]]);
        assert_eq!(m.m_v3[0].index, MomentIndex(vec![1, 1]));
        assert_eq!(m.m_v3[0].value, 6.0);
        assert_eq!(
            sample_moments(&[], 1, V3Method::K),
            Err(MomentsError::EmptySample)
        );
    }

    #[test]
    fn single_row_is_exact_monomials() {
        let y = vec![1.5, -0.5, 2.0];
        let m = sample_moments(std::slice::from_ref(&y), 2, V3Method::Low).unwrap();
        for (t, v) in m.m_v1.iter().enumerate() {
            assert_eq!(*v, y[0].powi(t as i32));
        }
        for e in &m.m_v3 {
            let want: f64 = e
                .index
                .0
                .iter()
                .zip(&y)
                .map(|(&p, x)| x.powi(p as i32))
                .product();
            assert_eq!(e.value, want);
        }
    }

    #[test]
    fn univariate_sample_has_no_cross_moments() {
        let rows = vec![vec![1.0], vec![2.0]];
        let m = sample_moments(&rows, 2, V3Method::K).unwrap();
        assert!(m.m_v2.is_empty() && m.m_v3.is_empty());
        assert_eq!(m.m_v1.len(), 7);
    }

    #[test]
    fn json_layout() {
        let rows = vec![vec![1.0, 2.0]];
        let m = sample_moments(&rows, 1, V3Method::Low).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["method"], "low");
        assert_eq!(v["mV3"][0]["index"], serde_json::json!([1, 1]));
        assert!(v["mV1"].is_array() && v["mV2"].is_array());
        assert_eq!(MomentSets::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn sources_agree_with_sets() {
        let p = MixtureParams::new(
            vec![0.4, 0.6],
            vec![vec![0.5, -1.0, 2.0], vec![-0.3, 0.2, 1.0]],
            vec![
                vec![
                    vec![1.0, 0.2, 0.1],
                    vec![0.2, 2.0, -0.3],
                    vec![0.1, -0.3, 1.5],
                ],
                vec![
                    vec![0.8, 0.0, 0.2],
                    vec![0.0, 1.2, 0.1],
                    vec![0.2, 0.1, 0.6],
                ],
            ],
        );
        let sets = exact_moment_sets(&p, 2, V3Method::Low);
        let exact = ExactMoments(&p);
        for e in &sets.m_v3 {
            assert_eq!(sets.moment(&e.index), exact.moment(&e.index));
        }
        let v = MomentIndex::axis(3, 2, 4);
        assert!(close(
            sets.moment(&v).unwrap(),
            exact.moment(&v).unwrap(),
            1e-14
        ));
        assert_eq!(sets.moment(&MomentIndex::zeros(3)), Some(1.0));
    }

    proptest! {
        #[test]
        fn recursion_matches_closed_forms(mu in -5.0f64..5.0, sigma in 0.01f64..5.0) {
            let m = gaussian_moments_1d(mu, sigma, 5).unwrap();
            let closed = [
                mu.powi(3) + 3.0 * mu * sigma,
                mu.powi(4) + 6.0 * mu * mu * sigma + 3.0 * sigma * sigma,
                mu.powi(5) + 10.0 * mu.powi(3) * sigma + 15.0 * mu * sigma * sigma,
            ];
            for (got, want) in m[3..].iter().zip(closed) {
                prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }

        #[test]
        fn v3_cardinality_and_order(k in 1usize..=6, d in 2usize..6) {
            for method in [V3Method::K, V3Method::Low] {
                for pair in select_v3_indices(k, d, method) {
                    prop_assert!(pair.i < pair.j);
                    prop_assert_eq!(pair.indices.len(), k);
                    let mut uniq = pair.indices.clone();
                    uniq.sort();
                    uniq.dedup();
                    prop_assert_eq!(uniq.len(), k);
                    let bound = match method {
                        V3Method::K => k as u32 + 1,
                        V3Method::Low => (k / 2) as u32 + 2,
                    };
                    prop_assert!(pair.indices.iter().all(|v| v.order() <= bound));
                }
            }
            if k >= 3 {
                let max = |m| select_v3_indices(k, d, m)[0].indices.iter().map(MomentIndex::order).max().unwrap();
                prop_assert!(max(V3Method::Low) < max(V3Method::K));
            }
        }

        #[test]
        fn tensor_index_relabels(v in proptest::collection::vec(0u32..4, 1..6), seed in any::<u64>()) {
            prop_assume!(v.iter().any(|&e| e > 0));
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..v.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            // w[perm[i]] = v[i]: dimension i is relabelled perm[i]
            let mut w = vec![0; v.len()];
            for (i, &p) in perm.iter().enumerate() {
                w[p] = v[i];
            }
            let (t, labels) = tensor_index(&MomentIndex(v.clone())).unwrap();
            let (t2, labels2) = tensor_index(&MomentIndex(w)).unwrap();
            prop_assert_eq!(t, t2);
            let mut mapped: Vec<usize> = labels.iter().map(|&l| perm[l - 1] + 1).collect();
            mapped.sort();
            prop_assert_eq!(mapped, labels2);
        }
    }
}
