//! Sparse multivariate polynomials with real coefficients.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

/// One monomial `coeff * z^exps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub exps: Vec<u32>,
}

/// A polynomial in `nvars` unknowns, stored as a map from exponent vector to
/// coefficient. Zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The unknown `z_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "variable {i} out of range for {nvars} unknowns");
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(e, 1.0);
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = Term>) -> Self {
        let mut p = Self::zero(nvars);
        for t in terms {
            assert_eq!(t.exps.len(), nvars, "exponent vector length mismatch");
            p.add_term(t.exps, t.coeff);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(e, &c)| (e.as_slice(), c))
    }

    /// Total degree; zero for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Largest exponent of each unknown.
    pub fn max_exponents(&self) -> Vec<u32> {
        let mut out = vec![0; self.nvars];
        for e in self.terms.keys() {
            for (o, &x) in out.iter_mut().zip(e) {
                *o = (*o).max(x);
            }
        }
        out
    }

    pub fn add_term(&mut self, exps: Vec<u32>, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        match self.terms.entry(exps) {
            Entry::Vacant(v) => {
                v.insert(coeff);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += coeff;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        if c == 0.0 {
            return Self::zero(self.nvars);
        }
        Self {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(e, &v)| (e.clone(), v * c))
                .collect(),
        }
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = Self::constant(self.nvars, 1.0);
        for _ in 0..n {
            out = &out * self;
        }
        out
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, &c)| {
                c * e
                    .iter()
                    .zip(z)
                    .map(|(&k, &x)| x.powi(k as i32))
                    .product::<f64>()
            })
            .sum()
    }

    pub fn eval_complex(&self, z: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(e, &c)| {
                e.iter()
                    .zip(z)
                    .fold(Complex64::new(c, 0.0), |acc, (&k, x)| acc * x.powu(k))
            })
            .sum()
    }

    /// Partial derivative with respect to `z_i`.
    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, &c) in &self.terms {
            if e[i] > 0 {
                let mut f = e.clone();
                f[i] -= 1;
                out.add_term(f, c * e[i] as f64);
            }
        }
        out
    }

    /// Substitutes `images[i]` for unknown `i`. All images must share the
    /// same number of unknowns, which becomes the result's.
    pub fn compose(&self, images: &[Polynomial]) -> Self {
        assert_eq!(images.len(), self.nvars);
        let nv = images.first().map_or(0, |p| p.nvars);
        let mut out = Self::zero(nv);
        // power cache per variable
        let mut powers: Vec<Vec<Polynomial>> = images
            .iter()
            .map(|p| vec![Polynomial::constant(nv, 1.0), p.clone()])
            .collect();
        for (e, &c) in &self.terms {
            let mut term = Polynomial::constant(nv, c);
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                while powers[i].len() <= k as usize {
                    let next = &powers[i][powers[i].len() - 1] * &images[i];
                    powers[i].push(next);
                }
                term = &term * &powers[i][k as usize];
            }
            out = &out + &term;
        }
        out
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (e, &c) in &rhs.terms {
            out.add_term(e.clone(), c);
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &rhs.scale(-1.0)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = Polynomial::zero(self.nvars);
        for (a, &ca) in &self.terms {
            for (b, &cb) in &rhs.terms {
                let e: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Polynomial {
            type Output = Polynomial;
            fn $m(self, rhs: Polynomial) -> Polynomial {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

/// A list of polynomials in a shared, named set of unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySystem {
    pub unknowns: Vec<String>,
    pub polynomials: Vec<Polynomial>,
}

impl PolySystem {
    pub fn new(unknowns: Vec<String>, polynomials: Vec<Polynomial>) -> Self {
        for p in &polynomials {
            assert_eq!(
                p.nvars(),
                unknowns.len(),
                "polynomial unknown count does not match system"
            );
        }
        Self {
            unknowns,
            polynomials,
        }
    }

    /// Builds a system with unknowns named `z0, z1, ...`.
    pub fn anonymous(polynomials: Vec<Polynomial>) -> Self {
        let n = polynomials.first().map_or(0, Polynomial::nvars);
        Self::new((0..n).map(|i| format!("z{i}")).collect(), polynomials)
    }

    pub fn num_unknowns(&self) -> usize {
        self.unknowns.len()
    }

    pub fn is_square(&self) -> bool {
        self.unknowns.len() == self.polynomials.len()
    }

    pub fn degrees(&self) -> Vec<u32> {
        self.polynomials.iter().map(Polynomial::degree).collect()
    }

    /// Product of the polynomial degrees.
    pub fn bezout_number(&self) -> u128 {
        self.degrees().iter().map(|&d| d as u128).product()
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        self.polynomials.iter().map(|p| p.eval(z)).collect()
    }

    pub fn eval_complex(&self, z: &[Complex64]) -> Vec<Complex64> {
        self.polynomials.iter().map(|p| p.eval_complex(z)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_degree() {
        let x = Polynomial::var(2, 0);
        let y = Polynomial::var(2, 1);
        let p = &(&x * &x) + &(&y * &y); // x^2 + y^2
        let q = &p - &Polynomial::constant(2, 5.0);
        assert_eq!(q.degree(), 2);
        assert_eq!(q.num_terms(), 3);
        assert_eq!(q.eval(&[1.0, 2.0]), 0.0);
        let cancel = &p - &p;
        assert!(cancel.is_zero());
    }

    #[test]
    fn derivative_and_compose() {
        let x = Polynomial::var(1, 0);
        let cube = x.pow(3);
        let d = cube.derivative(0);
        assert_eq!(d.eval(&[2.0]), 12.0);
        // substitute x -> 1 - t into x^2
        let t = Polynomial::var(1, 0);
        let one_minus_t = &Polynomial::constant(1, 1.0) - &t;
        let sq = x.pow(2).compose(&[one_minus_t]);
        assert_eq!(sq.eval(&[3.0]), 4.0);
        assert_eq!(sq.num_terms(), 3);
    }

    #[test]
    fn complex_eval_matches_real() {
        let x = Polynomial::var(2, 0);
        let y = Polynomial::var(2, 1);
        let p = &(&x * &y.pow(2)) - &x.scale(3.0);
        let z = [Complex64::new(1.5, 0.0), Complex64::new(-2.0, 0.0)];
        assert!((p.eval_complex(&z).re - p.eval(&[1.5, -2.0])).abs() < 1e-14);
    }
}
