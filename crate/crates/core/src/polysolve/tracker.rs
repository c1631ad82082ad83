//! Predictor–corrector tracking of a single homotopy path `H(z, s) = 0`
//! from `s = 0` to `s = 1`.

use num_complex::Complex64;

use super::linalg::{complex_condition, complex_solve_in_place};

type C = Complex64;

/// Tangent predictor used between corrector phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    Euler,
    RungeKutta4,
}

/// Step-size and tolerance settings for path tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub corrector_tol: f64,
    pub max_corrector_iters: usize,
    pub divergence_bound: f64,
    pub final_refine_tol: f64,
    pub dedup_tol: f64,
    /// Seed for the random `gamma` constant.
    pub seed: u64,
    pub predictor: Predictor,
    /// Hard cap on accepted plus rejected steps per path.
    pub max_steps: usize,
}

impl Default for TrackerOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            min_step: 1e-12,
            corrector_tol: 1e-10,
            max_corrector_iters: 3,
            divergence_bound: 1e10,
            final_refine_tol: 1e-13,
            dedup_tol: 1e-8,
            seed: 0x5eed,
            predictor: Predictor::RungeKutta4,
            max_steps: 20_000,
        }
    }
}

impl TrackerOptions {
    pub fn with_predictor(mut self, p: Predictor) -> Self {
        self.predictor = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks `0 < min_step < initial_step <= 1` and positive tolerances.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_step > 0.0 && self.min_step < self.initial_step && self.initial_step <= 1.0) {
            return Err(format!(
                "need 0 < min_step < initial_step <= 1, got min_step={} initial_step={}",
                self.min_step, self.initial_step
            ));
        }
        for (name, v) in [
            ("corrector_tol", self.corrector_tol),
            ("divergence_bound", self.divergence_bound),
            ("final_refine_tol", self.final_refine_tol),
            ("dedup_tol", self.dedup_tol),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_corrector_iters == 0 {
            return Err("max_corrector_iters must be at least 1".into());
        }
        Ok(())
    }
}

/// A homotopy `H(z, s)` in `dim()` unknowns, with `H(., 1)` the target.
pub trait Homotopy {
    type Scratch;

    fn dim(&self) -> usize;

    fn scratch(&self) -> Self::Scratch;

    /// Writes `H(z, s)`, the row-major Jacobian `dH/dz` and `dH/ds`.
    fn evaluate(
        &self,
        z: &[C],
        s: f64,
        scratch: &mut Self::Scratch,
        h: &mut [C],
        hz: &mut [C],
        hs: &mut [C],
    );

    /// Residual of the target system at `z`: returns the max absolute
    /// residual and the max residual relative to the summed term
    /// magnitudes of each equation.
    fn target_residual(&self, z: &[C], scratch: &mut Self::Scratch) -> (f64, f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStatus {
    Converged,
    Diverged,
    Stalled,
}

/// Result of tracking one path.
#[derive(Debug, Clone)]
pub struct PathResult {
    pub status: PathStatus,
    pub endpoint: Vec<C>,
    /// Last `s` reached.
    pub s: f64,
    pub steps: usize,
    /// Condition estimate of the target Jacobian at the endpoint
    /// (converged paths only).
    pub condition: f64,
}

impl PathResult {
    pub fn is_singular(&self) -> bool {
        self.condition > 1e10
    }
}

fn max_norm(z: &[C]) -> f64 {
    z.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

struct Buffers<S> {
    scratch: S,
    h: Vec<C>,
    hz: Vec<C>,
    hs: Vec<C>,
}

impl<S> Buffers<S> {
    fn new<H: Homotopy<Scratch = S>>(hom: &H) -> Self {
        let n = hom.dim();
        Self {
            scratch: hom.scratch(),
            h: vec![C::new(0.0, 0.0); n],
            hz: vec![C::new(0.0, 0.0); n * n],
            hs: vec![C::new(0.0, 0.0); n],
        }
    }
}

/// `dz/ds = -(dH/dz)^-1 dH/ds` at `(z, s)`.
fn tangent<H: Homotopy>(
    hom: &H,
    z: &[C],
    s: f64,
    buf: &mut Buffers<H::Scratch>,
    out: &mut [C],
) -> bool {
    let n = hom.dim();
    hom.evaluate(z, s, &mut buf.scratch, &mut buf.h, &mut buf.hz, &mut buf.hs);
    for i in 0..n {
        out[i] = -buf.hs[i];
    }
    complex_solve_in_place(&mut buf.hz, out, n) && out.iter().all(|x| x.is_finite())
}

/// Largest relative Newton step accepted when the corrector stops contracting.
const NOISE_FLOOR: f64 = 1e-8;

/// Newton corrector at fixed `s`. On success `z` holds the corrected point.

fn correct<H: Homotopy>(
    hom: &H,
    z: &mut [C],
    s: f64,
    opts: &TrackerOptions,
    buf: &mut Buffers<H::Scratch>,
) -> bool {
    let n = hom.dim();
    let mut prev = f64::INFINITY;
    for iter in 0..opts.max_corrector_iters {
        hom.evaluate(z, s, &mut buf.scratch, &mut buf.h, &mut buf.hz, &mut buf.hs);
        let mut dz: Vec<C> = buf.h.iter().map(|x| -x).collect();
        if !complex_solve_in_place(&mut buf.hz, &mut dz, n) {
            return false;
        }
        let step = max_norm(&dz);
        if !step.is_finite() {
            return false;
        }
        let scale = 1.0 + max_norm(z);
        if iter == 0 && step > 0.25 * scale {
            // predictor landed too far from the path
            return false;
        }
        if iter > 0 && step > 0.5 * prev {
            // stagnation at the roundoff floor of an ill-conditioned point
            return prev <= NOISE_FLOOR * scale;
        }
        for (zi, d) in z.iter_mut().zip(&dz) {
            *zi += d;
        }
        if step <= opts.corrector_tol * scale {
            return true;
        }
        prev = step;
    }
    prev <= NOISE_FLOOR * (1.0 + max_norm(z))
}

/// Newton refinement of the target system (`s = 1`). Returns the condition
/// estimate of the final Jacobian.
pub(crate) fn refine_endpoint<H: Homotopy>(
    hom: &H,
    z: &mut [C],
    tol: f64,
    max_iters: usize,
    buf_scratch: &mut H::Scratch,
) -> f64 {
    let n = hom.dim();
    let mut h = vec![C::new(0.0, 0.0); n];
    let mut hz = vec![C::new(0.0, 0.0); n * n];
    let mut hs = vec![C::new(0.0, 0.0); n];
    let mut prev = f64::INFINITY;
    for _ in 0..max_iters {
        hom.evaluate(z, 1.0, buf_scratch, &mut h, &mut hz, &mut hs);
        let mut dz: Vec<C> = h.iter().map(|x| -x).collect();
        let mut a = hz.clone();
        if !complex_solve_in_place(&mut a, &mut dz, n) {
            break;
        }
        let step = max_norm(&dz);
        if !step.is_finite() || step > 2.0 * prev {
            break;
        }
        for (zi, d) in z.iter_mut().zip(&dz) {
            *zi += d;
        }
        prev = step;
        if step <= tol * (1.0 + max_norm(z)) {
            break;
        }
    }
    hom.evaluate(z, 1.0, buf_scratch, &mut h, &mut hz, &mut hs);
    complex_condition(&hz, n)
}

/// Tracks the path of `hom` starting at `start` (a solution at `s = 0`).
///
/// Steps are halved after a failed corrector and grown by 1.5 after four
/// consecutive successes, never above `initial_step`. When the tangent
/// vanishes the whole remaining interval is attempted in one step.
pub fn track_homotopy<H: Homotopy>(hom: &H, start: &[C], opts: &TrackerOptions) -> PathResult {
    let n = hom.dim();
    let mut buf = Buffers::new(hom);
    let mut z = start.to_vec();
    let mut s = 0.0_f64;
    let mut h = opts.initial_step;
    let mut streak = 0usize;
    let mut steps = 0usize;
    let mut dz = vec![C::new(0.0, 0.0); n];
    let mut k = vec![vec![C::new(0.0, 0.0); n]; 4];
    let mut trial = vec![C::new(0.0, 0.0); n];

    let stalled = |z: Vec<C>, s: f64, steps: usize| PathResult {
        status: PathStatus::Stalled,
        endpoint: z,
        s,
        steps,
        condition: f64::INFINITY,
    };

    while s < 1.0 {
        if steps >= opts.max_steps {
            return stalled(z, s, steps);
        }
        steps += 1;
        let tan_ok = tangent(hom, &z, s, &mut buf, &mut dz);
        let flat = tan_ok && max_norm(&dz) <= opts.corrector_tol * (1.0 + max_norm(&z));
        let step = if flat { 1.0 - s } else { h.min(1.0 - s) };
        let s_next = if 1.0 - s - step <= 1e-14 {
            1.0
        } else {
            s + step
        };
        let predicted = match opts.predictor {
            _ if flat => {
                trial.copy_from_slice(&z);
                true
            }
            Predictor::Euler => {
                if tan_ok {
                    for i in 0..n {
                        trial[i] = z[i] + dz[i] * step;
                    }
                    true
                } else {
                    false
                }
            }
            Predictor::RungeKutta4 => rk4(hom, &z, s, step, &mut buf, &mut k, &mut trial),
        };
        let ok = predicted && correct(hom, &mut trial, s_next, opts, &mut buf);
        if ok {
            z.copy_from_slice(&trial);
            s = s_next;
            streak += 1;
            if streak >= 4 {
                h = (h * 1.5).min(opts.initial_step);
                streak = 0;
            }
            if max_norm(&z) > opts.divergence_bound {
                return PathResult {
                    status: PathStatus::Diverged,
                    endpoint: z,
                    s,
                    steps,
                    condition: f64::INFINITY,
                };
            }
        } else {
            h *= 0.5;
            streak = 0;
            if h < opts.min_step {
                return stalled(z, s, steps);
            }
        }
    }
    let condition = refine_endpoint(hom, &mut z, opts.final_refine_tol, 8, &mut buf.scratch);
    PathResult {
        status: PathStatus::Converged,
        endpoint: z,
        s: 1.0,
        steps,
        condition,
    }
}

#[allow(clippy::too_many_arguments)]
fn rk4<H: Homotopy>(
    hom: &H,
    z: &[C],
    s: f64,
    h: f64,
    buf: &mut Buffers<H::Scratch>,
    k: &mut [Vec<C>],
    out: &mut [C],
) -> bool {
    let n = z.len();
    let mut tmp = vec![C::new(0.0, 0.0); n];
    let (k_first, k_rest) = k.split_at_mut(1);
    if !tangent(hom, z, s, buf, &mut k_first[0]) {
        return false;
    }
    for i in 0..n {
        tmp[i] = z[i] + k_first[0][i] * (0.5 * h);
    }
    if !tangent(hom, &tmp, s + 0.5 * h, buf, &mut k_rest[0]) {
        return false;
    }
    for i in 0..n {
        tmp[i] = z[i] + k_rest[0][i] * (0.5 * h);
    }
    if !tangent(hom, &tmp, s + 0.5 * h, buf, &mut k_rest[1]) {
        return false;
    }
    for i in 0..n {
        tmp[i] = z[i] + k_rest[1][i] * h;
    }
    if !tangent(hom, &tmp, s + h, buf, &mut k_rest[2]) {
        return false;
    }
    for i in 0..n {
        out[i] = z[i]
            + (k_first[0][i] + k_rest[0][i] * 2.0 + k_rest[1][i] * 2.0 + k_rest[2][i]) * (h / 6.0);
    }
    true
}
