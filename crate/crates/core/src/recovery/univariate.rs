//! Univariate moment systems: building them as parametric families,
//! caching generic start solutions, and solving them for given moments.
//!
//! Every solve first standardizes the data (`x -> (x - a) / b` with the
//! first two moments) so the tracked systems are well scaled, then maps
//! the endpoints back.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use itertools::Itertools;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::moments::gaussian_moment_polys;
use crate::polysolve::{
    monodromy_solve, solve_from_start_with_orbit, solve_square_system, ComplexSolutionSet,
    LinearFamily, MonodromyOptions, PolySystem, Polynomial, SolveError, TrackerOptions,
};

type C = Complex64;

/// A family with a complete list of solutions at a generic base point.
#[derive(Debug)]
pub struct StartSystem {
    pub family: LinearFamily,
    pub base: Vec<C>,
    pub solutions: Vec<Vec<C>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum FamilyKey {
    UnknownWeights(usize, u64),
    KnownWeights(usize, u64),
}

/// Independent start systems tried, in turn, while a solve is incomplete.
pub const START_VARIANTS: u64 = 3;

/// Number of solutions, counted once per relabelling of the components,
/// of the unknown-weights system at generic moments.
pub fn unknown_weights_orbit_count(k: usize) -> Option<usize> {
    match k {
        1 => Some(1),
        2 => Some(9),
        3 => Some(225),
        4 => Some(10350),
        _ => None,
    }
}

/// Number of solutions of the known-weights system at generic weights and
/// moments.
pub fn known_weights_count(k: usize) -> Option<usize> {
    match k {
        1 => Some(1),
        2 => Some(KNOWN_WEIGHTS_K2),
        3 => Some(KNOWN_WEIGHTS_K3),
        _ => None,
    }
}

const KNOWN_WEIGHTS_K2: usize = 6;
const KNOWN_WEIGHTS_K3: usize = 90;

fn cnormal(rng: &mut ChaCha8Rng) -> C {
    C::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Unknowns `(lambda_1..lambda_{k-1}, mu_1..mu_k, sigma_1..sigma_k)` with
/// `lambda_k = 1 - sum`; parameters `m_1..m_{3k-1}`.
pub fn unknown_weights_family(k: usize) -> LinearFamily {
    let n = 3 * k - 1;
    let polys = gaussian_moment_polys(3 * k - 1);
    let lam = |l: usize| -> Polynomial {
        if l + 1 < k {
            Polynomial::var(n, l)
        } else {
            let mut last = Polynomial::constant(n, 1.0);
            for j in 0..k - 1 {
                last = &last - &Polynomial::var(n, j);
            }
            last
        }
    };
    let images = |l: usize| {
        [
            Polynomial::var(n, k - 1 + l),
            Polynomial::var(n, 2 * k - 1 + l),
        ]
    };
    let mut fam = LinearFamily::new(n, n);
    for i in 1..=n {
        let mut row = Polynomial::zero(n);
        for l in 0..k {
            row = &row + &(&lam(l) * &polys[i].compose(&images(l)));
        }
        fam.push_row(vec![
            (None, row),
            (Some(i - 1), Polynomial::constant(n, -1.0)),
        ]);
    }
    fam
}

/// Unknowns `(mu_1..mu_k, sigma_1..sigma_k)`; parameters
/// `(lambda_1..lambda_k, m_1..m_{2k})`.
pub fn known_weights_family(k: usize) -> LinearFamily {
    let n = 2 * k;
    let polys = gaussian_moment_polys(2 * k);
    let mut fam = LinearFamily::new(n, 3 * k);
    for i in 1..=n {
        let mut pieces: Vec<(Option<usize>, Polynomial)> = (0..k)
            .map(|l| {
                let images = [Polynomial::var(n, l), Polynomial::var(n, k + l)];
                (Some(l), polys[i].compose(&images))
            })
            .collect();
        pieces.push((Some(k + i - 1), Polynomial::constant(n, -1.0)));
        fam.push_row(pieces);
    }
    fam
}

/// Complex moments `m_1..=m_order` of a mixture with complex parameters.
fn complex_moments(weights: &[C], means: &[C], vars: &[C], order: usize) -> Vec<C> {
    let mut out = vec![C::new(0.0, 0.0); order];
    for ((w, m), v) in weights.iter().zip(means).zip(vars) {
        let mut prev2 = C::new(1.0, 0.0);
        let mut prev = *m;
        out[0] += w * prev;
        for i in 2..=order {
            let next = m * prev + v * (i - 1) as f64 * prev2;
            out[i - 1] += w * next;
            prev2 = prev;
            prev = next;
        }
    }
    out
}

fn unknown_weights_orbit(k: usize, z: &[C]) -> Vec<Vec<C>> {
    let mut lam: Vec<C> = z[..k - 1].to_vec();
    lam.push(C::new(1.0, 0.0) - lam.iter().sum::<C>());
    let mu = &z[k - 1..2 * k - 1];
    let sg = &z[2 * k - 1..];
    (0..k)
        .permutations(k)
        .map(|p| {
            let mut w: Vec<C> = p[..k - 1].iter().map(|&i| lam[i]).collect();
            w.extend(p.iter().map(|&i| mu[i]));
            w.extend(p.iter().map(|&i| sg[i]));
            w
        })
        .collect()
}

fn build_unknown_start(k: usize, variant: u64) -> StartSystem {
    let family = unknown_weights_family(k);
    let n = 3 * k - 1;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<C> { (0..3 * k).map(|_| cnormal(rng)).collect() };
    let to_params = |theta: &[C]| -> Vec<C> {
        complex_moments(&theta[..k], &theta[k..2 * k], &theta[2 * k..], n)
    };
    let mut rng =
        <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0x6d6f_6d31 + k as u64 + (variant << 16));
    // weights normalized to sum to one
    let mut theta = draw(&mut rng);
    let s: C = theta[..k].iter().sum();
    theta[..k].iter_mut().for_each(|w| *w /= s);
    let base = to_params(&theta);
    let mut seed: Vec<C> = theta[..k - 1].to_vec();
    seed.extend_from_slice(&theta[k..]);
    let mut sample = |rng: &mut ChaCha8Rng| -> Vec<C> {
        let mut t = draw(rng);
        let s: C = t[..k].iter().sum();
        t[..k].iter_mut().for_each(|w| *w /= s);
        to_params(&t)
    };
    let orbit = move |z: &[C]| unknown_weights_orbit(k, z);
    let res = monodromy_solve(
        &family,
        &base,
        vec![seed],
        Some(&orbit),
        &mut sample,
        &MonodromyOptions {
            target_count: unknown_weights_orbit_count(k),
            max_loops: 400,
            stagnation_loops: 40,
            seed: 0xa11 + k as u64 + (variant << 16),
        },
        &TrackerOptions::default(),
    );
    StartSystem {
        family,
        base,
        solutions: res.solutions,
    }
}

fn build_known_start(k: usize, variant: u64) -> StartSystem {
    let family = known_weights_family(k);
    let draw = |rng: &mut ChaCha8Rng| -> (Vec<C>, Vec<C>) {
        let lam: Vec<C> = (0..k).map(|_| cnormal(rng)).collect();
        let theta: Vec<C> = (0..2 * k).map(|_| cnormal(rng)).collect();
        (lam, theta)
    };
    let to_params = |lam: &[C], theta: &[C]| -> Vec<C> {
        let mut p = lam.to_vec();
        p.extend(complex_moments(lam, &theta[..k], &theta[k..], 2 * k));
        p
    };
    let mut rng =
        <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0x6d6f_6d32 + k as u64 + (variant << 16));
    let (lam, theta) = draw(&mut rng);
    let base = to_params(&lam, &theta);
    let mut sample = |rng: &mut ChaCha8Rng| -> Vec<C> {
        let (l, t) = draw(rng);
        to_params(&l, &t)
    };
    let res = monodromy_solve(
        &family,
        &base,
        vec![theta],
        None,
        &mut sample,
        &MonodromyOptions {
            target_count: known_weights_count(k),
            max_loops: 400,
            stagnation_loops: 40,
            seed: 0xb22 + k as u64 + (variant << 16),
        },
        &TrackerOptions::default(),
    );
    StartSystem {
        family,
        base,
        solutions: res.solutions,
    }
}

fn cached(key: FamilyKey) -> Arc<StartSystem> {
    static CACHE: OnceLock<Mutex<HashMap<FamilyKey, Arc<StartSystem>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(s) = cache.lock().expect("start cache poisoned").get(&key) {
        return s.clone();
    }
    // built outside the lock; a concurrent duplicate build is harmless
    let built = Arc::new(match key {
        FamilyKey::UnknownWeights(k, v) => build_unknown_start(k, v),
        FamilyKey::KnownWeights(k, v) => build_known_start(k, v),
    });
    cache
        .lock()
        .expect("start cache poisoned")
        .entry(key)
        .or_insert(built)
        .clone()
}

/// Cached start solutions for the unknown-weights family.
pub fn unknown_weights_start(k: usize) -> Arc<StartSystem> {
    unknown_weights_start_variant(k, 0)
}

/// Start solutions at the `variant`-th independent generic base point.
pub fn unknown_weights_start_variant(k: usize, variant: u64) -> Arc<StartSystem> {
    cached(FamilyKey::UnknownWeights(k, variant))
}

/// Cached start solutions for the known-weights family.
pub fn known_weights_start(k: usize) -> Arc<StartSystem> {
    known_weights_start_variant(k, 0)
}

/// Start solutions at the `variant`-th independent generic base point.
pub fn known_weights_start_variant(k: usize, variant: u64) -> Arc<StartSystem> {
    cached(FamilyKey::KnownWeights(k, variant))
}

/// Relative distance under which endpoints from different start systems
/// are the same solution.
const MERGE_TOL: f64 = 1e-7;

/// Solves from successive start systems until `expected` distinct
/// solutions are known, merging endpoints up to `orbit`.
fn solve_with_variants(
    expected: Option<usize>,
    orbit: Option<&dyn Fn(&[C]) -> Vec<Vec<C>>>,
    start: impl Fn(u64) -> Arc<StartSystem>,
    target: &[C],
    opts: &TrackerOptions,
) -> ComplexSolutionSet {
    let images = |z: &[C]| orbit.map_or_else(|| vec![z.to_vec()], |f| f(z));
    let mut set = ComplexSolutionSet::default();
    for variant in 0..START_VARIANTS {
        if expected.is_some_and(|n| set.len() >= n) {
            break;
        }
        let st = start(variant);
        let found =
            solve_from_start_with_orbit(&st.family, &st.base, &st.solutions, target, orbit, opts);
        if variant == 0 {
            set = found;
            continue;
        }
        for ((z, r), c) in found
            .points
            .into_iter()
            .zip(found.residual_norms)
            .zip(found.conditions)
        {
            let known = images(&z)
                .iter()
                .any(|w| set.points.iter().any(|p| near(w, p)));
            if !known {
                set.points.push(z);
                set.residual_norms.push(r);
                set.conditions.push(c);
            }
        }
    }
    set
}

fn near(a: &[C], b: &[C]) -> bool {
    let scale = a.iter().map(|x| x.norm()).fold(1.0, f64::max);
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).norm() <= MERGE_TOL * scale)
}

/// Affine standardization `y = (x - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub shift: f64,
    pub scale: f64,
}

impl Standardization {
    /// From raw moments `m[0..]` (with `m[0] = 1`). Falls back to unit scale
    /// when the implied variance is not positive.
    pub fn from_moments(m: &[f64]) -> Self {
        let shift = m.get(1).copied().unwrap_or(0.0);
        let var = m.get(2).map_or(1.0, |m2| m2 - shift * shift);
        let scale = if var.is_finite() && var > 0.0 {
            var.sqrt()
        } else {
            1.0
        };
        Self {
            shift: if shift.is_finite() { shift } else { 0.0 },
            scale,
        }
    }

    pub fn identity() -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
        }
    }

    /// Raw moments of the standardized variable.
    pub fn apply(&self, m: &[f64]) -> Vec<f64> {
        let a = self.shift;
        (0..m.len())
            .map(|n| {
                let mut acc = 0.0;
                let mut binom = 1.0;
                for j in 0..=n {
                    acc += binom * m[j] * (-a).powi((n - j) as i32);
                    binom = binom * (n - j) as f64 / (j + 1) as f64;
                }
                acc / self.scale.powi(n as i32)
            })
            .collect()
    }

    pub fn mean_back(&self, mu: C) -> C {
        mu * self.scale + self.shift
    }

    pub fn var_back(&self, s: C) -> C {
        s * (self.scale * self.scale)
    }

    pub fn var_forward(&self, s: f64) -> f64 {
        s / (self.scale * self.scale)
    }
}

fn real_params(p: &[f64]) -> Vec<C> {
    p.iter().map(|&x| C::new(x, 0.0)).collect()
}

/// Complex solutions `(lambda_1..lambda_{k-1}, mu, sigma)` of the
/// unknown-weights system for raw moments `m[0..=3k-1]`, in original
/// coordinates.
pub fn solve_unknown_weights(k: usize, m: &[f64], opts: &TrackerOptions) -> ComplexSolutionSet {
    assert!(m.len() >= 3 * k, "need moments up to order 3k - 1");
    let st = Standardization::from_moments(m);
    let y = st.apply(&m[..3 * k]);
    let target = real_params(&y[1..]);
    let orbit = |z: &[C]| unknown_weights_orbit(k, z);
    let mut set = solve_with_variants(
        unknown_weights_orbit_count(k),
        Some(&orbit),
        |v| unknown_weights_start_variant(k, v),
        &target,
        opts,
    );
    for z in &mut set.points {
        for l in 0..k {
            z[k - 1 + l] = st.mean_back(z[k - 1 + l]);
            z[2 * k - 1 + l] = st.var_back(z[2 * k - 1 + l]);
        }
    }
    set
}

/// Complex solutions `(mu, sigma)` of the known-weights system for raw
/// moments `m[0..=2k]`, in original coordinates.
pub fn solve_known_weights(
    weights: &[f64],
    m: &[f64],
    opts: &TrackerOptions,
) -> ComplexSolutionSet {
    let k = weights.len();
    assert!(m.len() > 2 * k, "need moments up to order 2k");
    let st = Standardization::from_moments(m);
    let y = st.apply(&m[..=2 * k]);
    let mut target = real_params(weights);
    target.extend(real_params(&y[1..]));
    let mut set = solve_with_variants(
        known_weights_count(k),
        None,
        |v| known_weights_start_variant(k, v),
        &target,
        opts,
    );
    for z in &mut set.points {
        for l in 0..k {
            z[l] = st.mean_back(z[l]);
            z[k + l] = st.var_back(z[k + l]);
        }
    }
    set
}

/// Means of a uniform mixture with common known variance: complex
/// solutions `mu_1..mu_k` for raw moments `m[0..=k]`, via total degree.
pub fn solve_means_known_variance(
    k: usize,
    variance: f64,
    m: &[f64],
    opts: &TrackerOptions,
) -> Result<ComplexSolutionSet, SolveError> {
    assert!(m.len() > k, "need moments up to order k");
    let st = Standardization::from_moments(m);
    let y = st.apply(&m[..=k]);
    let v = st.var_forward(variance);
    let polys = gaussian_moment_polys(k);
    let system: Vec<Polynomial> = (1..=k)
        .map(|i| {
            let mut row = Polynomial::constant(k, -y[i]);
            for l in 0..k {
                let images = [Polynomial::var(k, l), Polynomial::constant(k, v)];
                row = &row + &polys[i].compose(&images).scale(1.0 / k as f64);
            }
            row
        })
        .collect();
    let mut set = solve_square_system(&PolySystem::anonymous(system), opts)?;
    for z in &mut set.points {
        for x in z.iter_mut() {
            *x = st.mean_back(*x);
        }
    }
    Ok(set)
}
