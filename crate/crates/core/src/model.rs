//! Domain types shared by the moment, solver, recovery and benchmark layers.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Tolerance on `|sum(weights) - 1|`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Entrywise tolerance on `|S[i][j] - S[j][i]|`.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Parameters of a `k`-component Gaussian mixture in `d` dimensions.
///
/// `means[l]` is the mean of component `l`; `covariances[l]` is its `d x d`
/// covariance stored row-major as nested vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub k: usize,
    pub d: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>>) -> Self {
        let k = weights.len();
        let d = means.first().map_or(0, Vec::len);
        Self {
            k,
            d,
            weights,
            means,
            covariances,
        }
    }

    /// Builds a univariate mixture from weights, means and variances.
    pub fn univariate(weights: &[f64], means: &[f64], variances: &[f64]) -> Self {
        Self::new(
            weights.to_vec(),
            means.iter().map(|&m| vec![m]).collect(),
            variances.iter().map(|&v| vec![vec![v]]).collect(),
        )
    }

    pub fn mean(&self, component: usize, dim: usize) -> f64 {
        self.means[component][dim]
    }

    pub fn cov(&self, component: usize, i: usize, j: usize) -> f64 {
        self.covariances[component][i][j]
    }

    /// Covariance of component `l` as a dense matrix.
    pub fn covariance_matrix(&self, l: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.d, |i, j| self.covariances[l][i][j])
    }

    /// Returns a copy with components reordered so that output component `i`
    /// is input component `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            k: self.k,
            d: self.d,
            weights: perm.iter().map(|&p| self.weights[p]).collect(),
            means: perm.iter().map(|&p| self.means[p].clone()).collect(),
            covariances: perm.iter().map(|&p| self.covariances[p].clone()).collect(),
        }
    }

    /// Returns a copy with dimensions relabelled: output dimension `i` is
    /// input dimension `order[i]`.
    pub fn with_dimension_order(&self, order: &[usize]) -> Self {
        let means = self
            .means
            .iter()
            .map(|m| order.iter().map(|&o| m[o]).collect())
            .collect();
        let covariances = self
            .covariances
            .iter()
            .map(|c| {
                order
                    .iter()
                    .map(|&a| order.iter().map(|&b| c[a][b]).collect())
                    .collect()
            })
            .collect();
        Self {
            k: self.k,
            d: self.d,
            weights: self.weights.clone(),
            means,
            covariances,
        }
    }
}

/// One failed invariant of a [`MixtureParams`] value.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroComponents,
    ZeroDimension,
    ShapeMismatch(String),
    NonPositiveWeight {
        component: usize,
        value: f64,
    },
    WeightSum(f64),
    NonFinite(String),
    Asymmetric {
        component: usize,
        i: usize,
        j: usize,
    },
    NotPositiveDefinite {
        component: usize,
        min_eigenvalue: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroComponents => write!(f, "k must be positive"),
            Violation::ZeroDimension => write!(f, "d must be positive"),
            Violation::ShapeMismatch(what) => write!(f, "shape mismatch: {what}"),
            Violation::NonPositiveWeight { component, value } => {
                write!(f, "weight {component} is not positive ({value})")
            }
            Violation::WeightSum(sum) => write!(f, "weights sum ≠ 1 (sum = {sum})"),
            Violation::NonFinite(what) => write!(f, "non-finite entry in {what}"),
            Violation::Asymmetric { component, i, j } => {
                write!(f, "covariance {component} is not symmetric at ({i}, {j})")
            }
            Violation::NotPositiveDefinite {
                component,
                min_eigenvalue,
            } => write!(
                f,
                "covariance {component} not positive definite (smallest eigenvalue {min_eigenvalue})"
            ),
        }
    }
}

/// Checks every [`MixtureParams`] invariant and lists the ones that fail.
///
/// An empty vector means the parameters are valid.
pub fn validate_params(p: &MixtureParams) -> Vec<Violation> {
    let mut out = Vec::new();
    if p.k == 0 {
        out.push(Violation::ZeroComponents);
    }
    if p.d == 0 {
        out.push(Violation::ZeroDimension);
    }
    if p.weights.len() != p.k || p.means.len() != p.k || p.covariances.len() != p.k {
        out.push(Violation::ShapeMismatch(format!(
            "expected {} weights, means and covariances, got {}, {}, {}",
            p.k,
            p.weights.len(),
            p.means.len(),
            p.covariances.len()
        )));
        return out;
    }
    for (l, m) in p.means.iter().enumerate() {
        if m.len() != p.d {
            out.push(Violation::ShapeMismatch(format!(
                "mean {l} has length {}, expected {}",
                m.len(),
                p.d
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFinite(format!("mean {l}")));
        }
    }
    for (l, &w) in p.weights.iter().enumerate() {
        if !w.is_finite() {
            out.push(Violation::NonFinite(format!("weight {l}")));
        } else if w <= 0.0 {
            out.push(Violation::NonPositiveWeight {
                component: l,
                value: w,
            });
        }
    }
    let sum: f64 = p.weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        out.push(Violation::WeightSum(sum));
    }
    for (l, c) in p.covariances.iter().enumerate() {
        if c.len() != p.d || c.iter().any(|row| row.len() != p.d) {
            out.push(Violation::ShapeMismatch(format!(
                "covariance {l} is not {d}x{d}",
                d = p.d
            )));
            continue;
        }
        if c.iter().flatten().any(|x| !x.is_finite()) {
            out.push(Violation::NonFinite(format!("covariance {l}")));
            continue;
        }
        'outer: for i in 0..p.d {
            for j in (i + 1)..p.d {
                if (c[i][j] - c[j][i]).abs() > SYMMETRY_TOL {
                    out.push(Violation::Asymmetric { component: l, i, j });
                    break 'outer;
                }
            }
        }
        let m = DMatrix::from_fn(p.d, p.d, |i, j| 0.5 * (c[i][j] + c[j][i]));
        let eig = SymmetricEigen::new(m);
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            out.push(Violation::NotPositiveDefinite {
                component: l,
                min_eigenvalue: min,
            });
        }
    }
    out
}

/// Multi-index `v` of a moment `E[X_1^{v_1} ... X_d^{v_d}]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MomentIndex(pub Vec<u32>);

impl MomentIndex {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0; d])
    }

    /// `t * e_i` in `d` dimensions (`i` is zero-based).
    pub fn axis(d: usize, i: usize, t: u32) -> Self {
        let mut v = vec![0; d];
        v[i] = t;
        Self(v)
    }

    /// `a * e_i + b * e_j` in `d` dimensions.
    pub fn pair(d: usize, i: usize, a: u32, j: usize, b: u32) -> Self {
        let mut v = vec![0; d];
        v[i] += a;
        v[j] += b;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Positions with a nonzero exponent.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }
}

impl fmt::Display for MomentIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m_")?;
        for e in &self.0 {
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Which stage of the recovery pipeline failed, if any.
///
/// Dimensions in [`StageFailure::DimISystem`] are one-based, matching the
/// serialized tag `dim_i_system(i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageFailure {
    None,
    Dim1System,
    DimISystem(usize),
    OffdiagonalSystem,
    Timeout,
}

impl StageFailure {
    pub fn is_none(&self) -> bool {
        matches!(self, StageFailure::None)
    }

    pub fn tag(&self) -> String {
        match self {
            StageFailure::None => "none".to_string(),
            StageFailure::Dim1System => "dim1_system".to_string(),
            StageFailure::DimISystem(i) => format!("dim_i_system({i})"),
            StageFailure::OffdiagonalSystem => "offdiagonal_system".to_string(),
            StageFailure::Timeout => "timeout".to_string(),
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "none" => Some(StageFailure::None),
            "dim1_system" => Some(StageFailure::Dim1System),
            "offdiagonal_system" => Some(StageFailure::OffdiagonalSystem),
            "timeout" => Some(StageFailure::Timeout),
            other => other
                .strip_prefix("dim_i_system(")
                .and_then(|rest| rest.strip_suffix(')'))
                .and_then(|n| n.parse().ok())
                .map(StageFailure::DimISystem),
        }
    }
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl Serialize for StageFailure {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.tag())
    }
}

impl<'de> Deserialize<'de> for StageFailure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tag = String::deserialize(d)?;
        StageFailure::from_tag(&tag)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown stage tag `{tag}`")))
    }
}

/// Outcome of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub params: Option<MixtureParams>,
    pub stage_failed: StageFailure,
    /// Statistically meaningful candidates at the weight-determining stage.
    pub candidates_found: usize,
    /// Meaningful candidates per diagonal stage, in dimension order.
    #[serde(default)]
    pub candidates_per_dimension: Vec<usize>,
    pub residuals: Vec<f64>,
    /// Wall time in seconds.
    pub elapsed: f64,
    /// One-based dimension that determined the weights.
    #[serde(default = "default_leading")]
    pub leading_dimension: usize,
}

fn default_leading() -> usize {
    1
}

impl SolveReport {
    pub fn failure(stage: StageFailure, candidates_found: usize) -> Self {
        Self {
            params: None,
            stage_failed: stage,
            candidates_found,
            candidates_per_dimension: Vec::new(),
            residuals: Vec::new(),
            elapsed: 0.0,
            leading_dimension: 1,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.params.is_some()
    }
}
