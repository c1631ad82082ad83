//! Flattened polynomial evaluators for the path tracker's inner loop.

use num_complex::Complex64;

use super::poly::Polynomial;

type C = Complex64;

#[derive(Debug, Clone)]
struct FlatTerm {
    coeff: f64,
    // (unknown, exponent) pairs with exponent > 0
    factors: Vec<(usize, u32)>,
}

/// A polynomial compiled for repeated complex evaluation with its gradient.
#[derive(Debug, Clone)]
pub struct CompiledPoly {
    terms: Vec<FlatTerm>,
    max_exp: u32,
}

impl CompiledPoly {
    pub fn new(p: &Polynomial) -> Self {
        let terms: Vec<FlatTerm> = p
            .terms()
            .map(|(e, c)| FlatTerm {
                coeff: c,
                factors: e
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x > 0)
                    .map(|(i, &x)| (i, x))
                    .collect(),
            })
            .collect();
        let max_exp = p.max_exponents().into_iter().max().unwrap_or(0);
        Self { terms, max_exp }
    }

    pub fn max_exp(&self) -> u32 {
        self.max_exp
    }

    /// Value and gradient given a power table `pw[v * stride + e] = z_v^e`.
    /// The gradient is accumulated (scaled by `scale`) into `grad`; the
    /// return value is the unscaled value together with the sum of
    /// absolute term magnitudes.
    #[inline]
    pub(crate) fn eval_with_powers(
        &self,
        pw: &[C],
        stride: usize,
        scale: C,
        grad: &mut [C],
    ) -> (C, f64) {
        let mut value = C::new(0.0, 0.0);
        let mut magnitude = 0.0;
        for t in &self.terms {
            let mut prod = C::new(t.coeff, 0.0);
            for &(v, e) in &t.factors {
                prod *= pw[v * stride + e as usize];
            }
            value += prod;
            magnitude += prod.norm();
            let sc = scale * t.coeff;
            match t.factors.len() {
                0 => {}
                1 => {
                    let (v, e) = t.factors[0];
                    grad[v] += sc * (e as f64) * pw[v * stride + e as usize - 1];
                }
                _ => {
                    for (a, &(v, e)) in t.factors.iter().enumerate() {
                        let mut d = sc * (e as f64) * pw[v * stride + e as usize - 1];
                        for (b, &(u, f)) in t.factors.iter().enumerate() {
                            if a != b {
                                d *= pw[u * stride + f as usize];
                            }
                        }
                        grad[v] += d;
                    }
                }
            }
        }
        (value, magnitude)
    }
}

/// Scratch power table reused across evaluations.
#[derive(Debug, Clone)]
pub struct PowerTable {
    pub(crate) stride: usize,
    pub(crate) data: Vec<C>,
}

impl PowerTable {
    pub fn new(nvars: usize, max_exp: u32) -> Self {
        let stride = max_exp as usize + 1;
        Self {
            stride,
            data: vec![C::new(0.0, 0.0); nvars * stride],
        }
    }

    pub fn fill(&mut self, z: &[C]) {
        for (v, &x) in z.iter().enumerate() {
            let row = &mut self.data[v * self.stride..(v + 1) * self.stride];
            let mut acc = C::new(1.0, 0.0);
            for slot in row.iter_mut() {
                *slot = acc;
                acc *= x;
            }
        }
    }
}

/// A square or rectangular polynomial system compiled for evaluation.
#[derive(Debug, Clone)]
pub struct CompiledSystem {
    polys: Vec<CompiledPoly>,
    nvars: usize,
    max_exp: u32,
}

impl CompiledSystem {
    pub fn new(polys: &[Polynomial]) -> Self {
        let compiled: Vec<CompiledPoly> = polys.iter().map(CompiledPoly::new).collect();
        let nvars = polys.first().map_or(0, Polynomial::nvars);
        let max_exp = compiled
            .iter()
            .map(CompiledPoly::max_exp)
            .max()
            .unwrap_or(0);
        Self {
            polys: compiled,
            nvars,
            max_exp,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn power_table(&self) -> PowerTable {
        PowerTable::new(self.nvars, self.max_exp.max(1))
    }

    /// Evaluates values into `f` and the row-major Jacobian into `jac`,
    /// both overwritten. `pw` must already hold the powers of `z`.
    pub fn eval_jac(&self, pw: &PowerTable, f: &mut [C], jac: &mut [C]) {
        let n = self.nvars;
        for (i, p) in self.polys.iter().enumerate() {
            let row = &mut jac[i * n..(i + 1) * n];
            row.iter_mut().for_each(|x| *x = C::new(0.0, 0.0));
            f[i] = p
                .eval_with_powers(&pw.data, pw.stride, C::new(1.0, 0.0), row)
                .0;
        }
    }

    /// Values only, with per-polynomial term magnitudes.
    pub fn eval_values(&self, pw: &PowerTable, f: &mut [C], magnitude: &mut [f64]) {
        let mut sink = vec![C::new(0.0, 0.0); self.nvars];
        for (i, p) in self.polys.iter().enumerate() {
            let (v, m) = p.eval_with_powers(&pw.data, pw.stride, C::new(0.0, 0.0), &mut sink);
            f[i] = v;
            magnitude[i] = m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_symbolic_derivative() {
        let x = Polynomial::var(3, 0);
        let y = Polynomial::var(3, 1);
        let w = Polynomial::var(3, 2);
        let p = &(&(&x.pow(3) * &y) + &(&w * &x).scale(-2.0)) + &Polynomial::constant(3, 4.0);
        let sys = CompiledSystem::new(std::slice::from_ref(&p));
        let z = [C::new(0.3, -1.1), C::new(2.0, 0.5), C::new(-0.7, 0.2)];
        let mut pw = sys.power_table();
        pw.fill(&z);
        let mut f = [C::new(0.0, 0.0)];
        let mut jac = [C::new(0.0, 0.0); 3];
        sys.eval_jac(&pw, &mut f, &mut jac);
        assert!((f[0] - p.eval_complex(&z)).norm() < 1e-12);
        for v in 0..3 {
            let exact = p.derivative(v).eval_complex(&z);
            assert!((jac[v] - exact).norm() < 1e-12);
        }
    }
}
