//! Dense linear algebra: pivoted LU solves (real and complex) and the
//! symmetric eigendecomposition.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: matrix is {n}x{n}, right-hand side has {len} entries")]
    DimensionMismatch { n: usize, len: usize },
    #[error("singular to tolerance: pivot {pivot:e} at column {column}")]
    Singular { column: usize, pivot: f64 },
    #[error("matrix is not symmetric: |S[{i}][{j}] - S[{j}][{i}]| = {gap:e}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },
}

/// Relative pivot threshold for [`solve_linear`].
pub const PIVOT_TOL: f64 = 1e-12;

/// Solution of a real linear system with a condition-number estimate.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: Vec<f64>,
    /// Estimate of the infinity-norm condition number (`|A| * |A^-1|`).
    pub condition: f64,
}

fn inf_norm(a: &[Vec<f64>]) -> f64 {
    a.iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `A x = b` by LU with partial pivoting.
///
/// Fails when a pivot falls below `1e-12 * |A|_inf`.
pub fn solve_linear(a: &[Vec<f64>], b: &[f64]) -> Result<LinearSolution, LinalgError> {
    let n = a.len();
    if let Some(row) = a.iter().find(|r| r.len() != n) {
        return Err(LinalgError::NotSquare {
            rows: n,
            cols: row.len(),
        });
    }
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch { n, len: b.len() });
    }
    let anorm = inf_norm(a);
    let mut lu: Vec<Vec<f64>> = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (piv_row, piv_val) =
            (col..n)
                .map(|r| (r, lu[r][col].abs()))
                .fold(
                    (col, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if piv_val <= PIVOT_TOL * anorm || piv_val == 0.0 {
            return Err(LinalgError::Singular {
                column: col,
                pivot: piv_val,
            });
        }
        lu.swap(col, piv_row);
        perm.swap(col, piv_row);
        for r in (col + 1)..n {
            let factor = lu[r][col] / lu[col][col];
            lu[r][col] = factor;
            for c in (col + 1)..n {
                lu[r][c] -= factor * lu[col][c];
            }
        }
    }
    let solve = |rhs: &[f64]| -> Vec<f64> {
        let mut y: Vec<f64> = perm.iter().map(|&p| rhs[p]).collect();
        for r in 0..n {
            for c in 0..r {
                y[r] -= lu[r][c] * y[c];
            }
        }
        for r in (0..n).rev() {
            for c in (r + 1)..n {
                y[r] -= lu[r][c] * y[c];
            }
            y[r] /= lu[r][r];
        }
        y
    };
    let mut x = solve(b);
    // one step of iterative refinement
    let resid: Vec<f64> = (0..n)
        .map(|r| b[r] - a[r].iter().zip(&x).map(|(u, v)| u * v).sum::<f64>())
        .collect();
    let dx = solve(&resid);
    x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
    // |A^-1|_inf from explicit columns; n is small for every caller
    let mut inv_norm_rows = vec![0.0; n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        for (r, v) in solve(&e).into_iter().enumerate() {
            inv_norm_rows[r] += v.abs();
        }
    }
    let inv_norm = inv_norm_rows.into_iter().fold(0.0, f64::max);
    Ok(LinearSolution {
        x,
        condition: anorm * inv_norm,
    })
}

/// Eigenvalues in ascending order and the matching orthonormal eigenvectors
/// (`vectors[i]` pairs with `values[i]`).
#[derive(Debug, Clone)]
pub struct SymmetricEig {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl SymmetricEig {
    /// `V diag(w) V^T` for replacement eigenvalues `w`.
    pub fn recompose(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let d = self.values.len();
        let mut out = vec![vec![0.0; d]; d];
        for (w, v) in values.iter().zip(&self.vectors) {
            for i in 0..d {
                for j in 0..d {
                    out[i][j] += w * v[i] * v[j];
                }
            }
        }
        // exact symmetry
        for i in 0..d {
            for j in (i + 1)..d {
                let m = 0.5 * (out[i][j] + out[j][i]);
                out[i][j] = m;
                out[j][i] = m;
            }
        }
        out
    }
}

/// Symmetric eigendecomposition. Rejects input whose asymmetry exceeds
/// `1e-10` entrywise; the symmetrized matrix is decomposed.
pub fn sym_eig(s: &[Vec<f64>]) -> Result<SymmetricEig, LinalgError> {
    let d = s.len();
    if let Some(row) = s.iter().find(|r| r.len() != d) {
        return Err(LinalgError::NotSquare {
            rows: d,
            cols: row.len(),
        });
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let gap = (s[i][j] - s[j][i]).abs();
            if gap > 1e-10 {
                return Err(LinalgError::NotSymmetric { i, j, gap });
            }
        }
    }
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (s[i][j] + s[j][i]));
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    Ok(SymmetricEig {
        values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors: order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).iter().cloned().collect())
            .collect(),
    })
}

/// In-place complex LU with partial pivoting on a row-major `n x n` matrix,
/// solving `A x = b` with `b` overwritten by `x`. Returns `false` when a
/// pivot is exactly zero or non-finite.
pub(crate) fn complex_solve_in_place(a: &mut [Complex64], b: &mut [Complex64], n: usize) -> bool {
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].norm_sqr();
        for r in (col + 1)..n {
            let v = a[r * n + col].norm_sqr();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return false;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let inv = a[col * n + col].inv();
        for r in (col + 1)..n {
            let factor = a[r * n + col] * inv;
            if factor.norm_sqr() == 0.0 {
                continue;
            }
            for c in (col + 1)..n {
                let u = a[col * n + c];
                a[r * n + c] -= factor * u;
            }
            let bc = b[col];
            b[r] -= factor * bc;
        }
    }
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in (r + 1)..n {
            acc -= a[r * n + c] * b[c];
        }
        b[r] = acc / a[r * n + r];
    }
    true
}

/// Crude 1-norm condition estimate of a complex matrix via explicit inverse
/// columns. Used only to flag singular endpoints.
pub(crate) fn complex_condition(a: &[Complex64], n: usize) -> f64 {
    let norm1 = (0..n)
        .map(|c| (0..n).map(|r| a[r * n + c].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut inv_norm: f64 = 0.0;
    for c in 0..n {
        let mut m = a.to_vec();
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[c] = Complex64::new(1.0, 0.0);
        if !complex_solve_in_place(&mut m, &mut e, n) {
            return f64::INFINITY;
        }
        inv_norm = inv_norm.max(e.iter().map(|x| x.norm()).sum());
    }
    norm1 * inv_norm
}
