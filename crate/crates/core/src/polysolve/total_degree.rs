//! Total-degree homotopy: start system `z_i^{d_i} - 1`, straight-line
//! homotopy with the gamma trick.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eval::{CompiledSystem, PowerTable};
use super::poly::{PolySystem, Polynomial};
use super::tracker::{track_homotopy, Homotopy, PathResult, PathStatus, TrackerOptions};
use super::{dedup_points, ComplexSolutionSet, PathStats, SolveError};

type C = Complex64;

/// Largest total degree accepted by [`solve_square_system`].
pub const MAX_TOTAL_DEGREE: u128 = 100_000;

/// `H(z, s) = (1 - s) * gamma * G(z) + s * F(z)`.
pub struct StraightLineHomotopy {
    target: CompiledSystem,
    start: CompiledSystem,
    gamma: C,
}

pub struct StraightLineScratch {
    pw_target: PowerTable,
    pw_start: PowerTable,
    f: Vec<C>,
    fj: Vec<C>,
    mag: Vec<f64>,
}

impl StraightLineHomotopy {
    pub fn new(target: &PolySystem, start: &PolySystem, gamma: C) -> Self {
        assert_eq!(target.num_unknowns(), start.num_unknowns());
        Self {
            target: CompiledSystem::new(&target.polynomials),
            start: CompiledSystem::new(&start.polynomials),
            gamma,
        }
    }
}

impl Homotopy for StraightLineHomotopy {
    type Scratch = StraightLineScratch;

    fn dim(&self) -> usize {
        self.target.nvars()
    }

    fn scratch(&self) -> StraightLineScratch {
        let n = self.dim();
        StraightLineScratch {
            pw_target: self.target.power_table(),
            pw_start: self.start.power_table(),
            f: vec![C::new(0.0, 0.0); n],
            fj: vec![C::new(0.0, 0.0); n * n],
            mag: vec![0.0; n],
        }
    }

    fn evaluate(
        &self,
        z: &[C],
        s: f64,
        sc: &mut StraightLineScratch,
        h: &mut [C],
        hz: &mut [C],
        hs: &mut [C],
    ) {
        let n = self.dim();
        sc.pw_start.fill(z);
        sc.pw_target.fill(z);
        // start part
        self.start.eval_jac(&sc.pw_start, &mut sc.f, &mut sc.fj);
        let a = self.gamma * (1.0 - s);
        for i in 0..n {
            h[i] = a * sc.f[i];
            hs[i] = -self.gamma * sc.f[i];
        }
        for (o, g) in hz.iter_mut().zip(&sc.fj) {
            *o = a * g;
        }
        // target part
        self.target.eval_jac(&sc.pw_target, &mut sc.f, &mut sc.fj);
        for i in 0..n {
            h[i] += sc.f[i] * s;
            hs[i] += sc.f[i];
        }
        for (o, g) in hz.iter_mut().zip(&sc.fj) {
            *o += g * s;
        }
    }

    fn target_residual(&self, z: &[C], sc: &mut StraightLineScratch) -> (f64, f64) {
        sc.pw_target.fill(z);
        self.target
            .eval_values(&sc.pw_target, &mut sc.f, &mut sc.mag);
        residual_pair(&sc.f, &sc.mag)
    }
}

pub(crate) fn residual_pair(f: &[C], mag: &[f64]) -> (f64, f64) {
    let mut abs: f64 = 0.0;
    let mut rel: f64 = 0.0;
    for (v, m) in f.iter().zip(mag) {
        abs = abs.max(v.norm());
        rel = rel.max(v.norm() / m.max(1.0));
    }
    (abs, rel)
}

/// Tracks one path of the straight-line homotopy from `start_sys` to
/// `target` with the given `gamma`.
pub fn track_path(
    start: &[C],
    target: &PolySystem,
    start_sys: &PolySystem,
    gamma: C,
    opts: &TrackerOptions,
) -> PathResult {
    let hom = StraightLineHomotopy::new(target, start_sys, gamma);
    track_homotopy(&hom, start, opts)
}

/// The start system `z_i^{d_i} - 1` for the given degrees.
pub fn total_degree_start_system(degrees: &[u32]) -> PolySystem {
    let n = degrees.len();
    let polys = degrees
        .iter()
        .enumerate()
        .map(|(i, &d)| &Polynomial::var(n, i).pow(d) - &Polynomial::constant(n, 1.0))
        .collect();
    PolySystem::anonymous(polys)
}

/// All start points: products of `d_i`-th roots of unity, in lexicographic
/// order of the root indices.
pub fn total_degree_start_points(degrees: &[u32]) -> Vec<Vec<C>> {
    let mut out: Vec<Vec<C>> = vec![Vec::new()];
    for &d in degrees {
        let roots: Vec<C> = (0..d)
            .map(|j| C::from_polar(1.0, TAU * j as f64 / d as f64))
            .collect();
        out = out
            .into_iter()
            .flat_map(|p| {
                roots.iter().map(move |r| {
                    let mut q = p.clone();
                    q.push(*r);
                    q
                })
            })
            .collect();
    }
    out
}

/// Random unit-modulus gamma from the options' seed.
pub fn gamma_from_seed(seed: u64) -> C {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    C::from_polar(1.0, rng.random_range(0.0..TAU))
}

/// Tracks every path of `hom` from `starts`, splitting the work across the
/// available cores. Results come back in input order.
pub fn track_all<H>(hom: &H, starts: &[Vec<C>], opts: &TrackerOptions) -> Vec<PathResult>
where
    H: Homotopy + Sync,
{
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(starts.len().max(1));
    if workers <= 1 {
        return starts
            .iter()
            .map(|s| track_homotopy(hom, s, opts))
            .collect();
    }
    let chunk = starts.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = starts
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| track_homotopy(hom, s, opts))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("path tracking worker panicked"))
            .collect()
    })
}

/// Collects certified, deduplicated endpoints from tracked paths.
pub(crate) fn collect_endpoints<H: Homotopy>(
    hom: &H,
    results: Vec<PathResult>,
    dedup_tol: f64,
) -> ComplexSolutionSet {
    let mut stats = PathStats::default();
    let mut scratch = hom.scratch();
    let mut certified = Vec::new();
    for r in results {
        match r.status {
            PathStatus::Diverged => stats.diverged += 1,
            PathStatus::Stalled => stats.stalled += 1,
            PathStatus::Converged => {
                let (abs, rel) = hom.target_residual(&r.endpoint, &mut scratch);
                if super::is_certified(abs, rel) {
                    stats.converged += 1;
                    certified.push((r.endpoint, abs, r.condition));
                } else {
                    stats.uncertified += 1;
                }
            }
        }
    }
    dedup_points(certified, dedup_tol, stats)
}

/// Finds the isolated complex solutions of a square system by total-degree
/// homotopy continuation.
pub fn solve_square_system(
    system: &PolySystem,
    opts: &TrackerOptions,
) -> Result<ComplexSolutionSet, SolveError> {
    opts.validate().map_err(SolveError::InvalidOptions)?;
    if !system.is_square() {
        return Err(SolveError::SquareViolation {
            equations: system.polynomials.len(),
            unknowns: system.num_unknowns(),
        });
    }
    let degrees = system.degrees();
    if degrees.iter().any(|&d| d == 0) {
        return Err(SolveError::ConstantEquation);
    }
    let bezout = system.bezout_number();
    if bezout > MAX_TOTAL_DEGREE {
        return Err(SolveError::TotalDegreeTooLarge { degree: bezout });
    }
    let start_sys = total_degree_start_system(&degrees);
    let starts = total_degree_start_points(&degrees);
    let hom = StraightLineHomotopy::new(system, &start_sys, gamma_from_seed(opts.seed));
    let results = track_all(&hom, &starts, opts);
    let set = collect_endpoints(&hom, results, opts.dedup_tol);
    if set.points.is_empty() {
        return Err(SolveError::AllPathsDiverged {
            paths: starts.len(),
        });
    }
    Ok(set)
}
