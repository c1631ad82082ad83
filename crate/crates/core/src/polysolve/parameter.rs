//! Families of square systems that depend linearly on parameters,
//! `F_i(z; p) = f_i0(z) + sum_j p_j f_ij(z)`, with straight-line parameter
//! homotopies between parameter values and monodromy for seeding a
//! complete solution list at a generic parameter point.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eval::{CompiledPoly, PowerTable};
use super::poly::Polynomial;
use super::total_degree::{collect_endpoints, residual_pair, track_all};
use super::tracker::{
    refine_endpoint, track_homotopy, Homotopy, PathResult, PathStatus, TrackerOptions,
};
use super::ComplexSolutionSet;

type C = Complex64;

#[derive(Debug, Clone)]
struct Entry {
    param: Option<usize>,
    poly: CompiledPoly,
}

/// A square polynomial family, linear in its parameters.
#[derive(Debug, Clone)]
pub struct LinearFamily {
    nvars: usize,
    nparams: usize,
    rows: Vec<Vec<Entry>>,
    max_exp: u32,
}

impl LinearFamily {
    pub fn new(nvars: usize, nparams: usize) -> Self {
        Self {
            nvars,
            nparams,
            rows: Vec::new(),
            max_exp: 1,
        }
    }

    /// Appends an equation `base + sum coeff_j * p_j` given as
    /// `(None, base)` and `(Some(j), coeff_j)` pieces.
    pub fn push_row(&mut self, pieces: Vec<(Option<usize>, Polynomial)>) {
        let row = pieces
            .into_iter()
            .filter(|(_, p)| !p.is_zero())
            .map(|(param, p)| {
                assert_eq!(p.nvars(), self.nvars);
                if let Some(j) = param {
                    assert!(j < self.nparams);
                }
                let poly = CompiledPoly::new(&p);
                self.max_exp = self.max_exp.max(poly.max_exp());
                Entry { param, poly }
            })
            .collect();
        self.rows.push(row);
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn nparams(&self) -> usize {
        self.nparams
    }

    pub fn is_square(&self) -> bool {
        self.rows.len() == self.nvars
    }

    fn power_table(&self) -> PowerTable {
        PowerTable::new(self.nvars, self.max_exp)
    }

    /// `F(z; p)`, its Jacobian, and `sum_j dp_j f_ij(z)` into `fp`.
    fn evaluate(
        &self,
        pw: &PowerTable,
        p: &[C],
        dp: &[C],
        f: &mut [C],
        jac: &mut [C],
        fp: &mut [C],
    ) {
        let n = self.nvars;
        for (i, row) in self.rows.iter().enumerate() {
            let grad = &mut jac[i * n..(i + 1) * n];
            grad.iter_mut().for_each(|x| *x = C::new(0.0, 0.0));
            let mut value = C::new(0.0, 0.0);
            let mut dvalue = C::new(0.0, 0.0);
            for e in row {
                let coeff = e.param.map_or(C::new(1.0, 0.0), |j| p[j]);
                let (v, _) = e.poly.eval_with_powers(&pw.data, pw.stride, coeff, grad);
                value += coeff * v;
                if let Some(j) = e.param {
                    dvalue += dp[j] * v;
                }
            }
            f[i] = value;
            fp[i] = dvalue;
        }
    }

    /// Max absolute residual and max residual relative to term magnitudes.
    pub fn residual(&self, z: &[C], p: &[C]) -> (f64, f64) {
        let mut pw = self.power_table();
        pw.fill(z);
        let mut sink = vec![C::new(0.0, 0.0); self.nvars];
        let (f, mag): (Vec<C>, Vec<f64>) = self
            .rows
            .iter()
            .map(|row| {
                let mut value = C::new(0.0, 0.0);
                let mut mag = 0.0;
                for e in row {
                    let coeff = e.param.map_or(C::new(1.0, 0.0), |j| p[j]);
                    let (v, m) =
                        e.poly
                            .eval_with_powers(&pw.data, pw.stride, C::new(0.0, 0.0), &mut sink);
                    value += coeff * v;
                    mag += coeff.norm() * m;
                }
                (value, mag)
            })
            .unzip();
        residual_pair(&f, &mag)
    }
}

/// Straight segment `p(s) = from + s (to - from)` in parameter space.
pub struct ParameterHomotopy<'a> {
    family: &'a LinearFamily,
    from: Vec<C>,
    to: Vec<C>,
    delta: Vec<C>,
}

impl<'a> ParameterHomotopy<'a> {
    pub fn new(family: &'a LinearFamily, from: &[C], to: &[C]) -> Self {
        assert_eq!(from.len(), family.nparams);
        assert_eq!(to.len(), family.nparams);
        Self {
            family,
            from: from.to_vec(),
            to: to.to_vec(),
            delta: to.iter().zip(from).map(|(b, a)| b - a).collect(),
        }
    }
}

pub struct ParameterScratch {
    pw: PowerTable,
    p: Vec<C>,
}

impl Homotopy for ParameterHomotopy<'_> {
    type Scratch = ParameterScratch;

    fn dim(&self) -> usize {
        self.family.nvars
    }

    fn scratch(&self) -> ParameterScratch {
        ParameterScratch {
            pw: self.family.power_table(),
            p: self.from.clone(),
        }
    }

    fn evaluate(
        &self,
        z: &[C],
        s: f64,
        sc: &mut ParameterScratch,
        h: &mut [C],
        hz: &mut [C],
        hs: &mut [C],
    ) {
        for ((p, a), d) in sc.p.iter_mut().zip(&self.from).zip(&self.delta) {
            *p = a + d * s;
        }
        sc.pw.fill(z);
        self.family.evaluate(&sc.pw, &sc.p, &self.delta, h, hz, hs);
    }

    fn target_residual(&self, z: &[C], _sc: &mut ParameterScratch) -> (f64, f64) {
        self.family.residual(z, &self.to)
    }
}

/// Detours tried for a path that fails on the direct segment.
const DETOURS: usize = 16;
/// Stalls this close to `s = 1` are finished by Newton's method at the target.
const POLISH_WINDOW: f64 = 1e-3;

fn certified<H: Homotopy>(hom: &H, z: &[C], sc: &mut H::Scratch) -> bool {
    let (abs, rel) = hom.target_residual(z, sc);
    abs.is_finite() && super::is_certified(abs, rel)
}

/// Newton's method at `s = 1` from a path that stalled just short of it.
/// Rejects refinements that move far from the stalled point.
fn polish<H: Homotopy>(hom: &H, r: &PathResult, opts: &TrackerOptions) -> Option<PathResult> {
    if r.status != PathStatus::Stalled || r.s < 1.0 - POLISH_WINDOW {
        return None;
    }
    let mut sc = hom.scratch();
    let mut z = r.endpoint.clone();
    let condition = refine_endpoint(hom, &mut z, opts.final_refine_tol, 20, &mut sc);
    let scale = z.iter().map(|x| x.norm()).fold(1.0, f64::max);
    let moved = z
        .iter()
        .zip(&r.endpoint)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    (moved <= 0.1 * scale && certified(hom, &z, &mut sc)).then(|| PathResult {
        status: PathStatus::Converged,
        endpoint: z,
        s: 1.0,
        steps: r.steps,
        condition,
    })
}

/// Tracks `start` from `from` to `to` through `mid`.
fn track_detour(
    family: &LinearFamily,
    from: &[C],
    mid: &[C],
    to: &[C],
    start: &[C],
    opts: &TrackerOptions,
) -> Option<PathResult> {
    let first = track_homotopy(&ParameterHomotopy::new(family, from, mid), start, opts);
    if first.status != PathStatus::Converged {
        return None;
    }
    let leg = ParameterHomotopy::new(family, mid, to);
    let second = track_homotopy(&leg, &first.endpoint, opts);
    match second.status {
        PathStatus::Converged => {
            certified(&leg, &second.endpoint, &mut leg.scratch()).then_some(second)
        }
        PathStatus::Stalled => polish(&leg, &second, opts),
        PathStatus::Diverged => None,
    }
}

/// Random complex point at relative distance `radius` from the point
/// `from + s (to - from)` of the segment.
fn detour_point(from: &[C], to: &[C], s: f64, radius: f64, rng: &mut ChaCha8Rng) -> Vec<C> {
    from.iter()
        .zip(to)
        .map(|(a, b)| {
            let scale = radius * (b - a).norm().max(1e-3);
            let offset = C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            a + (b - a) * s + offset * scale
        })
        .collect()
}

/// Detour centres and radii for a path that failed at `s`. Local loops
/// around the trouble spot come first since they keep the path close to
/// its own continuation. Wide detours follow.
fn detour_plan(s: f64) -> Vec<(f64, f64)> {
    let mut plan = Vec::with_capacity(DETOURS);
    if s > 0.0 && s < 1.0 - POLISH_WINDOW {
        for radius in [0.02, 0.05, 0.1, 0.2] {
            plan.extend([(s, radius), (s, radius)]);
        }
    }
    plan.resize(DETOURS, (0.5, 0.5));
    plan
}

/// Moves known solutions at parameter `from` to parameter `to`.
///
/// Distinct starts reach distinct endpoints. A path that fails on the
/// straight segment, or ends on an endpoint another path holds, is
/// repaired by Newton's method when it stalled next to the target and
/// otherwise by retracking through random complex intermediate
/// parameters until it reaches an unclaimed endpoint. A detour winds
/// around different branch points, so it can reach any solution.
pub fn solve_from_start(
    family: &LinearFamily,
    from: &[C],
    starts: &[Vec<C>],
    to: &[C],
    opts: &TrackerOptions,
) -> ComplexSolutionSet {
    solve_from_start_with_orbit(family, from, starts, to, None, opts)
}

/// As [`solve_from_start`] for starts that are one representative per
/// orbit of a symmetry. `orbit` lists the images of a point, and two
/// endpoints coincide when one is close to any image of the other.
pub fn solve_from_start_with_orbit(
    family: &LinearFamily,
    from: &[C],
    starts: &[Vec<C>],
    to: &[C],
    orbit: Option<&dyn Fn(&[C]) -> Vec<Vec<C>>>,
    opts: &TrackerOptions,
) -> ComplexSolutionSet {
    let n = starts.len();
    let hom = ParameterHomotopy::new(family, from, to);
    let mut sc = hom.scratch();
    let mut results = track_all(&hom, starts, opts);
    let mut ok: Vec<bool> = results
        .iter()
        .map(|r| r.status == PathStatus::Converged && certified(&hom, &r.endpoint, &mut sc))
        .collect();
    let images = |z: &[C]| orbit.map_or_else(|| vec![z.to_vec()], |f| f(z));
    let same = |a: &[C], b: &[C]| images(a).iter().any(|w| close(w, b, opts.dedup_tol));

    // two direct paths on one endpoint: retrack both with shorter steps
    let mut strict = opts.clone();
    for round in 0..=COLLISION_ROUNDS {
        let colliding: Vec<usize> = (0..n)
            .filter(|&i| {
                ok[i]
                    && (0..n).any(|j| {
                        j != i && ok[j] && same(&results[i].endpoint, &results[j].endpoint)
                    })
            })
            .collect();
        if colliding.is_empty() {
            break;
        }
        if round == COLLISION_ROUNDS {
            // keep the first path on each endpoint
            for i in colliding {
                if (0..i).any(|j| ok[j] && same(&results[i].endpoint, &results[j].endpoint)) {
                    ok[i] = false;
                    results[i].status = PathStatus::Stalled;
                }
            }
            break;
        }
        strict.initial_step *= 0.1;
        strict.max_steps *= 4;
        for i in colliding {
            results[i] = track_homotopy(&hom, &starts[i], &strict);
            ok[i] = results[i].status == PathStatus::Converged
                && certified(&hom, &results[i].endpoint, &mut sc);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for i in 0..n {
        if ok[i] {
            continue;
        }
        let claimed = |z: &[C]| (0..n).any(|j| ok[j] && same(z, &results[j].endpoint));
        let mut found = polish(&hom, &results[i], opts).filter(|p| !claimed(&p.endpoint));
        for (centre, radius) in detour_plan(results[i].s) {
            if found.is_some() {
                break;
            }
            let mid = detour_point(from, to, centre, radius, &mut rng);
            found = track_detour(family, from, &mid, to, &starts[i], opts)
                .filter(|p| !claimed(&p.endpoint));
        }
        if let Some(p) = found {
            results[i] = p;
            ok[i] = true;
        }
    }
    collect_endpoints(&hom, results, opts.dedup_tol)
}

/// Rounds of shorter-step retracking for colliding direct paths.
const COLLISION_ROUNDS: usize = 2;

#[derive(Debug, Clone)]
pub struct MonodromyOptions {
    /// Stop as soon as this many solutions (orbit representatives) are known.
    pub target_count: Option<usize>,
    pub max_loops: usize,
    /// Stop after this many consecutive loops without a new solution.
    pub stagnation_loops: usize,
    pub seed: u64,
}

impl Default for MonodromyOptions {
    fn default() -> Self {
        Self {
            target_count: None,
            max_loops: 200,
            stagnation_loops: 10,
            seed: 1,
        }
    }
}

fn close(a: &[C], b: &[C], tol: f64) -> bool {
    let scale = a.iter().map(|x| x.norm()).fold(1.0, f64::max);
    a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol * scale)
}

/// Solution list built by monodromy.
#[derive(Debug, Clone)]
pub struct MonodromyResult {
    pub solutions: Vec<Vec<C>>,
    pub loops: usize,
}

/// Populates the solutions of `family` at the generic parameter `base`
/// from one or more seed solutions by tracking them around random loops
/// `base -> a -> b -> base`. `sample` draws loop vertices. When `orbit`
/// is given, solutions are stored as one representative per orbit and a
/// new endpoint counts only if no image of it is already known.
pub fn monodromy_solve(
    family: &LinearFamily,
    base: &[C],
    seeds: Vec<Vec<C>>,
    orbit: Option<&dyn Fn(&[C]) -> Vec<Vec<C>>>,
    sample: &mut dyn FnMut(&mut ChaCha8Rng) -> Vec<C>,
    mopts: &MonodromyOptions,
    topts: &TrackerOptions,
) -> MonodromyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(mopts.seed);
    let known_tol = 1e-6;
    let mut known: Vec<Vec<C>> = Vec::new();
    let contains = |known: &[Vec<C>], z: &[C]| -> bool {
        let images = orbit.map_or_else(|| vec![z.to_vec()], |f| f(z));
        images
            .iter()
            .any(|w| known.iter().any(|k| close(k, w, known_tol)))
    };
    for s in seeds {
        if !contains(&known, &s) {
            known.push(s);
        }
    }
    let done = |n: usize| mopts.target_count.is_some_and(|t| n >= t);
    let mut stagnant = 0usize;
    let mut loops = 0usize;
    while loops < mopts.max_loops && !done(known.len()) && stagnant < mopts.stagnation_loops {
        loops += 1;
        let pa = sample(&mut rng);
        let pb = sample(&mut rng);
        let legs = [
            ParameterHomotopy::new(family, base, &pa),
            ParameterHomotopy::new(family, &pa, &pb),
            ParameterHomotopy::new(family, &pb, base),
        ];
        let before = known.len();
        let snapshot = known.clone();
        for start in snapshot {
            let mut z = start;
            let mut ok = true;
            for leg in &legs {
                let r = track_homotopy(leg, &z, topts);
                if r.status != PathStatus::Converged {
                    ok = false;
                    break;
                }
                z = r.endpoint;
            }
            if !ok {
                continue;
            }
            let (_, rel) = family.residual(&z, base);
            if rel > 1e-9 || contains(&known, &z) {
                continue;
            }
            known.push(z);
            if done(known.len()) {
                break;
            }
        }
        if known.len() == before {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
    }
    MonodromyResult {
        solutions: known,
        loops,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    // z^3 + p0 z + p1 = 0
    fn cubic_family() -> LinearFamily {
        let z = Polynomial::var(1, 0);
        let mut fam = LinearFamily::new(1, 2);
        fam.push_row(vec![
            (None, z.pow(3)),
            (Some(0), z.clone()),
            (Some(1), Polynomial::constant(1, 1.0)),
        ]);
        fam
    }

    #[test]
    fn monodromy_finds_all_cubic_roots() {
        let fam = cubic_family();
        // z = 1 solves z^3 + p0 z + p1 with p0 = 0.3 + 0.2 i, p1 = -1 - p0
        let p0 = c(0.3, 0.2);
        let base = vec![p0, -c(1.0, 0.0) - p0];
        let mut sample = |rng: &mut ChaCha8Rng| -> Vec<C> {
            (0..2)
                .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        };
        let res = monodromy_solve(
            &fam,
            &base,
            vec![vec![c(1.0, 0.0)]],
            None,
            &mut sample,
            &MonodromyOptions {
                target_count: Some(3),
                ..Default::default()
            },
            &TrackerOptions::default(),
        );
        assert_eq!(res.solutions.len(), 3);
        // move to z^3 - 7z + 6 = (z-1)(z-2)(z+3)
        let target = [c(-7.0, 0.0), c(6.0, 0.0)];
        let set = solve_from_start(
            &fam,
            &base,
            &res.solutions,
            &target,
            &TrackerOptions::default(),
        );
        let mut re: Vec<f64> = set.points.iter().map(|p| p[0].re).collect();
        re.sort_by(f64::total_cmp);
        assert_eq!(re.len(), 3);
        for (got, want) in re.iter().zip([-3.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-10);
        }
    }
}
