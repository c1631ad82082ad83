//! Polynomial system solving by homotopy continuation, plus the dense
//! linear algebra used by the recovery pipeline.

mod eval;
pub mod linalg;
pub mod parameter;
pub mod poly;
pub mod total_degree;
pub mod tracker;

use num_complex::Complex64;
use thiserror::Error;

pub use linalg::{solve_linear, sym_eig, LinalgError, LinearSolution, SymmetricEig};
pub use parameter::{
    monodromy_solve, solve_from_start, solve_from_start_with_orbit, LinearFamily, MonodromyOptions,
    MonodromyResult, ParameterHomotopy,
};
pub use poly::{PolySystem, Polynomial, Term};
pub use total_degree::{solve_square_system, track_path, MAX_TOTAL_DEGREE};
pub use tracker::{track_homotopy, Homotopy, PathResult, PathStatus, Predictor, TrackerOptions};

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("square violation: {equations} equations in {unknowns} unknowns")]
    SquareViolation { equations: usize, unknowns: usize },
    #[error("total degree {degree} exceeds the limit of {MAX_TOTAL_DEGREE}")]
    TotalDegreeTooLarge { degree: u128 },
    #[error("system contains a constant equation")]
    ConstantEquation,
    #[error("all paths diverged ({paths} tracked)")]
    AllPathsDiverged { paths: usize },
    #[error("invalid tracker options: {0}")]
    InvalidOptions(String),
}

/// Outcome counts over all tracked paths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PathStats {
    pub converged: usize,
    pub diverged: usize,
    pub stalled: usize,
    /// Paths that reached `s = 1` but failed residual certification.
    pub uncertified: usize,
}

/// Certified, deduplicated endpoints of a homotopy run.
#[derive(Debug, Clone, Default)]
pub struct ComplexSolutionSet {
    pub points: Vec<Vec<Complex64>>,
    /// Max absolute residual of the target system at each point.
    pub residual_norms: Vec<f64>,
    /// Jacobian condition estimate at each point.
    pub conditions: Vec<f64>,
    pub path_stats: PathStats,
}

impl ComplexSolutionSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points whose Jacobian condition exceeds `1e10`.
    pub fn singular_flags(&self) -> Vec<bool> {
        self.conditions.iter().map(|&c| c > 1e10).collect()
    }
}

/// Residual certification: `1e-8` absolute, or relative to the summed term
/// magnitudes when those exceed one.
pub(crate) fn is_certified(_abs: f64, rel: f64) -> bool {
    rel <= 1e-8
}

fn lex_cmp(a: &[Complex64], b: &[Complex64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if o.is_ne() {
            return o;
        }
    }
    std::cmp::Ordering::Equal
}

/// Sorts points into canonical order, then merges points within
/// `tol * max(1, |z|)` in max-norm, keeping the smaller residual.
pub(crate) fn dedup_points(
    mut pts: Vec<(Vec<Complex64>, f64, f64)>,
    tol: f64,
    path_stats: PathStats,
) -> ComplexSolutionSet {
    pts.sort_by(|a, b| lex_cmp(&a.0, &b.0));
    let mut kept: Vec<(Vec<Complex64>, f64, f64)> = Vec::new();
    for p in pts {
        let scale = p.0.iter().map(|x| x.norm()).fold(1.0, f64::max);
        let dup = kept.iter().position(|q| {
            q.0.iter()
                .zip(&p.0)
                .all(|(x, y)| (x - y).norm() <= tol * scale)
        });
        match dup {
            Some(i) if kept[i].1 > p.1 => kept[i] = p,
            Some(_) => {}
            None => kept.push(p),
        }
    }
    let mut out = ComplexSolutionSet {
        path_stats,
        ..Default::default()
    };
    for (z, r, c) in kept {
        out.points.push(z);
        out.residual_norms.push(r);
        out.conditions.push(c);
    }
    out
}
