//! One test per acceptance criterion. Each prints a single PASS/FAIL line
//! to stdout (uncaptured) before asserting.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gmm_moments::bench::{
    compute_error, derive_seed, generate_params, run_experiment, sample_mixture, CellSummary,
    ExperimentConfig, ExperimentResult, TrialRecord,
};
use gmm_moments::cli::run_cli;
use gmm_moments::model::{MixtureParams, MomentIndex, StageFailure};
use gmm_moments::moments::{
    exact_moment_sets, gaussian_moments_1d, moment_sets_from_source, ExactMoments, MomentSource,
    OverriddenMoments, SampleMoments, V3Method,
};
use gmm_moments::polysolve::{solve_square_system, PolySystem, Polynomial, TrackerOptions};
use gmm_moments::recovery::univariate::{
    known_weights_start_variant, unknown_weights_start_variant, START_VARIANTS,
};
use gmm_moments::recovery::{
    estimate_from_sets, estimate_with_cycling, offdiagonal_covariances, pair_entries, repair_psd,
    EstimateOptions,
};

static SERIAL: Mutex<()> = Mutex::new(());

/// Timing-sensitive criteria run one at a time.
fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, ok: bool, detail: &str) {
    let line = format!(
        "criterion {n}: {} | {detail}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn fmt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), |v| format!("{v:.3e}"))
}

fn max_elapsed(res: &ExperimentResult, cell: &CellSummary) -> f64 {
    res.records
        .iter()
        .filter(|r: &&TrialRecord| r.d == cell.d && r.n_samples == cell.n_samples)
        .map(|r| r.elapsed)
        .fold(0.0, f64::max)
}

/// Maximum entrywise distance between `est` and the target after the best
/// label permutation.
fn max_entry_gap(
    est: &MixtureParams,
    weights: &[f64],
    means: &[Vec<f64>],
    covs: &[Vec<Vec<f64>>],
) -> f64 {
    use itertools::Itertools;
    let k = weights.len();
    (0..k)
        .permutations(k)
        .map(|perm| {
            let mut gap: f64 = 0.0;
            for (l, &p) in perm.iter().enumerate() {
                gap = gap.max((est.weights[p] - weights[l]).abs());
                for i in 0..est.d {
                    gap = gap.max((est.mean(p, i) - means[l][i]).abs());
                    for j in 0..est.d {
                        gap = gap.max((est.cov(p, i, j) - covs[l][i][j]).abs());
                    }
                }
            }
            gap
        })
        .fold(f64::INFINITY, f64::min)
}

fn cli_estimate(
    dir: &Path,
    name: &str,
    moments_json: &str,
    k: usize,
) -> (i32, Option<MixtureParams>, f64) {
    let input = dir.join(format!("{name}.json"));
    let output = dir.join(format!("{name}.params.json"));
    fs::write(&input, moments_json).unwrap();
    let started = Instant::now();
    let code = run_cli([
        "gmm-moments".to_string(),
        "estimate".into(),
        "--k".into(),
        k.to_string(),
        "--from-moments".into(),
        input.to_string_lossy().into_owned(),
        "--output".into(),
        output.to_string_lossy().into_owned(),
    ]);
    let secs = started.elapsed().as_secs_f64();
    let params = fs::read_to_string(&output)
        .ok()
        .map(|s| serde_json::from_str(&s).unwrap());
    (code, params, secs)
}

#[test]
fn criterion_1_exact_moments_machine_precision() {
    let _guard = serial();
    let setup = Instant::now();
    for v in 0..START_VARIANTS {
        unknown_weights_start_variant(3, v);
        known_weights_start_variant(3, v);
    }
    let setup = setup.elapsed().as_secs_f64();
    let cfg = ExperimentConfig {
        d_values: vec![2, 5, 10],
        k: 3,
        sample_sizes: vec![],
        exact: true,
        trials: 100,
        known_weights: false,
        shared_known_covariance: false,
        diagonal_only: false,
        method: V3Method::K,
        seed: 1,
        time_budget: 60.0,
        threads: None,
    };
    let res = run_experiment(&cfg).unwrap();
    let mut ok = true;
    let mut detail = vec![format!("one-time start build {setup:.1}s")];
    for c in &res.summary {
        let worst = max_elapsed(&res, c);
        let errs = [
            c.median_weight_error,
            c.median_mean_error,
            c.median_covariance_error,
        ];
        let cell_ok = errs.iter().all(|e| e.is_some_and(|v| v <= 1e-8))
            && c.pass_rate() >= 0.95
            && worst <= 10.0;
        ok &= cell_ok;
        detail.push(format!(
            "d={} pass={:.2} med w/mu/S = {}/{}/{} max {:.2}s",
            c.d,
            c.pass_rate(),
            fmt(errs[0]),
            fmt(errs[1]),
            fmt(errs[2]),
            worst
        ));
    }
    verdict(1, ok, &detail.join("; "));
    assert!(ok, "{detail:?}");
}

const CRAB_TARGET: ([f64; 2], [f64; 2], [f64; 2]) = ([0.58, 0.42], [19.30, 13.40], [9.67, 20.35]);

fn crab_gap(est: &MixtureParams) -> f64 {
    let (w, m, s) = CRAB_TARGET;
    max_entry_gap(
        est,
        &w,
        &m.iter().map(|&x| vec![x]).collect::<Vec<_>>(),
        &s.iter().map(|&x| vec![vec![x]]).collect::<Vec<_>>(),
    )
}

#[test]
fn criterion_2_crab_example() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"mV1": [1.0, 16.799, 304.923, 5831.759, 116061, 2385610], "mV2": [], "mV3": [], "method": "k"}"#;
    let (code, est, secs) = cli_estimate(dir.path(), "crab", json, 2);
    let gap = est.as_ref().map_or(f64::INFINITY, crab_gap);
    let ok = code == 0 && gap <= 0.05 && secs < 5.0;
    let got = est.map_or_else(
        || "no estimate".to_string(),
        |p| {
            format!(
                "lambda={:.4?} mu={:.3?} sigma={:.3?}",
                p.weights,
                p.means.iter().map(|m| m[0]).collect::<Vec<_>>(),
                p.covariances.iter().map(|c| c[0][0]).collect::<Vec<_>>()
            )
        },
    );
    verdict(
        2,
        ok,
        &format!("exit {code}, {got}, max entry gap {gap:.3} (tol 0.05), {secs:.2}s"),
    );
    assert!(ok, "crab estimate misses the printed solution by {gap}");
}

#[test]
fn criterion_2_supporting_rounding_consistent_crab_moments() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"mV1": [1.0, 16.799, 304.923, 5831.759, 116061.428, 2385609.427], "mV2": [], "mV3": [], "method": "k"}"#;
    let (code, est, secs) = cli_estimate(dir.path(), "crab_consistent", json, 2);
    let gap = est.as_ref().map_or(f64::INFINITY, crab_gap);
    let ok = code == 0 && gap <= 0.05 && secs < 5.0;
    verdict(
        2,
        ok,
        &format!("supporting run with m4 = 116061.428, m5 = 2385609.427: exit {code}, gap {gap:.3}, {secs:.2}s"),
    );
    assert!(ok);
}

#[test]
fn criterion_3_two_dimensional_worked_example() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{
        "mV1": [1, 0.266, 5.444, 6.473, 99.398, 214.853, 3126.467],
        "mV2": [[0.624, 2.583, 4.055, 19.880, 44.246]],
        "mV3": [{"index": [2, 1], "value": 1.130}, {"index": [1, 1], "value": -1.790}],
        "method": "k"
    }"#;
    let (code, est, secs) = cli_estimate(dir.path(), "worked_example", json, 2);
    let gap = est.as_ref().map_or(f64::INFINITY, |p| {
        max_entry_gap(
            p,
            &[0.21, 0.79],
            &[vec![-0.50, 0.26], vec![0.47, 0.72]],
            &[
                vec![vec![1.55, 1.73], vec![1.73, 3.12]],
                vec![vec![6.19, -3.03], vec![-3.03, 1.90]],
            ],
        )
    });
    let ok = code == 0 && gap <= 0.05 && secs < 5.0;
    verdict(
        3,
        ok,
        &format!("exit {code}, max entry gap {gap:.4} (tol 0.05), {secs:.2}s"),
    );
    assert!(ok);
}

fn within_factor(x: Option<f64>, target: f64, factor: f64) -> bool {
    x.is_some_and(|v| v >= target / factor && v <= target * factor)
}

#[test]
fn criterion_4_sample_moment_trend() {
    let _guard = serial();
    let started = Instant::now();
    let cfg = ExperimentConfig {
        d_values: vec![10],
        k: 3,
        sample_sizes: vec![1_000, 10_000, 100_000],
        exact: false,
        trials: 100,
        known_weights: true,
        shared_known_covariance: false,
        diagonal_only: false,
        method: V3Method::K,
        seed: 4,
        time_budget: 60.0,
        threads: None,
    };
    let res = run_experiment(&cfg).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let means: Vec<Option<f64>> = res.summary.iter().map(|c| c.median_mean_error).collect();
    let covs: Vec<Option<f64>> = res
        .summary
        .iter()
        .map(|c| c.median_covariance_error)
        .collect();
    let decreasing = means
        .windows(2)
        .all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b < a));
    let mean_ok = means
        .iter()
        .zip([0.127, 0.096, 0.070])
        .all(|(m, t)| within_factor(*m, t, 2.0));
    let cov_ok = covs
        .iter()
        .zip([0.0469, 0.0399, 0.0294])
        .all(|(c, t)| within_factor(*c, t, 2.0));
    let ok = decreasing && mean_ok && cov_ok && secs <= 1800.0;
    let pass: Vec<String> = res
        .summary
        .iter()
        .map(|c| format!("{:.2}", c.pass_rate()))
        .collect();
    verdict(
        4,
        ok,
        &format!(
            "N=1e3/1e4/1e5 median mean err {} {} {}, cov err {} {} {}, pass {}, {secs:.0}s",
            fmt(means[0]),
            fmt(means[1]),
            fmt(means[2]),
            fmt(covs[0]),
            fmt(covs[1]),
            fmt(covs[2]),
            pass.join("/")
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_5_shared_covariance_benchmark() {
    let _guard = serial();
    let cfg = ExperimentConfig {
        d_values: vec![10],
        k: 3,
        sample_sizes: vec![10_000],
        exact: false,
        trials: 200,
        known_weights: false,
        shared_known_covariance: true,
        diagonal_only: false,
        method: V3Method::K,
        seed: 5,
        time_budget: 60.0,
        threads: None,
    };
    let res = run_experiment(&cfg).unwrap();
    let c = &res.summary[0];
    let ok = c.pass_rate() >= 0.60 && within_factor(c.median_mean_error, 0.021, 3.0);
    verdict(
        5,
        ok,
        &format!(
            "pass {}/{} = {:.3}, median mean err {}",
            c.passed,
            c.trials,
            c.pass_rate(),
            fmt(c.median_mean_error)
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_6_v3_method_equivalence() {
    let _guard = serial();
    let d = 3;
    // both systems read the same exact lower-stage parameters
    let mut worst: f64 = 0.0;
    // the same systems fed the pipeline's own diagonal estimates (reported only)
    let mut worst_estimated: f64 = 0.0;
    let mut failures = 0;
    let mut instances = 0;
    let pair_systems = |params: &MixtureParams,
                        by_k: &gmm_moments::moments::MomentSets,
                        by_low: &gmm_moments::moments::MomentSets,
                        truth: &MixtureParams|
     -> Option<f64> {
        let k = params.k;
        let variances: Vec<Vec<f64>> = (0..k)
            .map(|l| (0..d).map(|a| params.cov(l, a, a)).collect())
            .collect();
        let mut worst: f64 = 0.0;
        for a in 0..d {
            for b in (a + 1)..d {
                let solve = |sets: &gmm_moments::moments::MomentSets| {
                    offdiagonal_covariances(
                        &params.weights,
                        &params.means,
                        &variances,
                        &pair_entries(&sets.m_v3, a, b),
                        a,
                        b,
                    )
                };
                let (Ok(x), Ok(y)) = (solve(by_k), solve(by_low)) else {
                    return None;
                };
                for l in 0..k {
                    worst = worst.max((x[l] - y[l]).abs());
                    worst = worst.max((x[l] - truth.cov(l, a, b)).abs());
                }
            }
        }
        Some(worst)
    };
    for k in [2usize, 3] {
        for i in 0..100u64 {
            instances += 1;
            let truth = generate_params(d, k, false, derive_seed(&[6, k as u64, i]));
            let by_k = exact_moment_sets(&truth, k, V3Method::K);
            let by_low = exact_moment_sets(&truth, k, V3Method::Low);
            match pair_systems(&truth, &by_k, &by_low, &truth) {
                Some(w) => worst = worst.max(w),
                None => failures += 1,
            }
            let report = estimate_from_sets(&by_k, k, None, &EstimateOptions::default()).unwrap();
            if let Some(w) = report
                .params
                .as_ref()
                .and_then(|est| pair_systems(est, &by_k, &by_low, &truth))
            {
                worst_estimated = worst_estimated.max(w);
            }
        }
    }
    let ok = failures == 0 && worst <= 1e-9;
    verdict(
        6,
        ok,
        &format!(
            "{instances} instances (k=2,3; d=3): failures {failures}, max |sigma_k - sigma_low|, |sigma - truth| {worst:.2e}; through estimated diagonals {worst_estimated:.2e}"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_7_cycling_recovers_corrupted_first_dimension() {
    let _guard = serial();
    let k = 3;
    let d = 2;
    let mut plain_failed = 0;
    let mut cycled_ok = 0;
    let mut worst: f64 = 0.0;
    let opts = EstimateOptions::default();
    for i in 0..50u64 {
        let truth = generate_params(d, k, false, derive_seed(&[7, i]));
        let exact = ExactMoments(&truth);
        let v = MomentIndex::axis(d, 0, 8);
        let m8 = exact.require(&v).unwrap();
        let src = OverriddenMoments {
            inner: &exact,
            overrides: HashMap::from([(v, -m8.abs())]),
        };
        let sets = moment_sets_from_source(&src, k, V3Method::K).unwrap();
        let plain = estimate_from_sets(&sets, k, None, &opts).unwrap();
        if plain.stage_failed == StageFailure::Dim1System {
            plain_failed += 1;
        }
        let cyc = estimate_with_cycling(k, &src, V3Method::K, None, &opts).unwrap();
        if let Some(est) = &cyc.params {
            let e = compute_error(&truth, est).unwrap();
            let err = e.weight_error.max(e.mean_error).max(e.covariance_error);
            worst = worst.max(err);
            if err <= 1e-8 && cyc.leading_dimension == 2 {
                cycled_ok += 1;
            }
        }
    }
    let ok = plain_failed == 50 && cycled_ok == 50;
    verdict(
        7,
        ok,
        &format!("plain dim1_system {plain_failed}/50, cycling recovered {cycled_ok}/50, worst error {worst:.2e}"),
    );
    assert!(ok);
}

fn random_dense_system(rng: &mut ChaCha8Rng) -> PolySystem {
    let n = rng.random_range(1..=3usize);
    let polys = (0..n)
        .map(|_| {
            let deg = rng.random_range(1..=3u32);
            let mut p = Polynomial::zero(n);
            let mut exps = vec![0u32; n];
            loop {
                if exps.iter().sum::<u32>() <= deg {
                    p.add_term(exps.clone(), rng.sample(StandardNormal));
                }
                // odometer over exponents 0..=deg
                let Some(pos) = exps.iter().position(|&e| e < deg) else {
                    break;
                };
                exps[pos] += 1;
                exps[..pos].iter_mut().for_each(|e| *e = 0);
            }
            p
        })
        .collect();
    PolySystem::anonymous(polys)
}

fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
    let scale = a.iter().map(|x| x.norm()).fold(1.0, f64::max);
    a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol * scale)
}

#[test]
fn criterion_8_solver_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut complete = 0;
    let mut worst_residual: f64 = 0.0;
    let mut gamma_ok = 0;
    for _ in 0..50 {
        let sys = random_dense_system(&mut rng);
        let bezout = sys.bezout_number() as usize;
        let a = solve_square_system(&sys, &TrackerOptions::default().with_seed(11)).unwrap();
        let b = solve_square_system(&sys, &TrackerOptions::default().with_seed(12345)).unwrap();
        if a.len() == bezout {
            complete += 1;
        }
        worst_residual = a
            .residual_norms
            .iter()
            .chain(&b.residual_norms)
            .fold(worst_residual, |m, &r| m.max(r));
        let matched = a.len() == b.len()
            && a.points
                .iter()
                .all(|p| b.points.iter().any(|q| close(p, q, 1e-6)));
        if matched {
            gamma_ok += 1;
        }
    }
    let ok = complete == 50 && worst_residual <= 1e-8 && gamma_ok == 50;
    verdict(
        8,
        ok,
        &format!(
            "Bezout-complete {complete}/50, max residual {worst_residual:.2e}, gamma-independent {gamma_ok}/50"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_9_property_suites() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // recursion against closed forms
    let mut recursion_worst: f64 = 0.0;
    for _ in 0..1000 {
        let mu: f64 = rng.random_range(-5.0..5.0);
        let s: f64 = rng.random_range(0.01..5.0);
        let m = gaussian_moments_1d(mu, s, 5).unwrap();
        let closed = [
            mu.powi(3) + 3.0 * mu * s,
            mu.powi(4) + 6.0 * mu * mu * s + 3.0 * s * s,
            mu.powi(5) + 10.0 * mu.powi(3) * s + 15.0 * mu * s * s,
        ];
        for (got, want) in m[3..=5].iter().zip(closed) {
            recursion_worst = recursion_worst.max((got - want).abs() / want.abs().max(1e-300));
        }
    }
    let recursion_ok = recursion_worst <= 1e-10;

    // Monte Carlo consistency at 5 standard errors
    let truth = generate_params(2, 2, false, 99);
    let n = 200_000;
    let rows = sample_mixture(&truth, n, 7).unwrap();
    let sample = SampleMoments::new(&rows).unwrap();
    let exact = ExactMoments(&truth);
    let sets = exact_moment_sets(&truth, 2, V3Method::K);
    let mut indices: Vec<MomentIndex> = (1..sets.m_v1.len() as u32)
        .map(|t| MomentIndex::axis(2, 0, t))
        .collect();
    indices.extend((1..=sets.m_v2[0].len() as u32).map(|t| MomentIndex::axis(2, 1, t)));
    indices.extend(sets.m_v3.iter().map(|e| e.index.clone()));
    let doubled: Vec<MomentIndex> = indices
        .iter()
        .map(|v| MomentIndex(v.0.iter().map(|e| 2 * e).collect()))
        .collect();
    let means = sample.many(&indices);
    let squares = sample.many(&doubled);
    let mut worst_z: f64 = 0.0;
    for ((v, m), sq) in indices.iter().zip(&means).zip(&squares) {
        let se = ((sq - m * m).max(0.0) / n as f64).sqrt();
        worst_z = worst_z.max((m - exact.require(v).unwrap()).abs() / se);
    }
    let monte_carlo_ok = worst_z <= 5.0;

    // permutation invariance of compute_error
    let mut perm_worst: f64 = 0.0;
    for i in 0..100u64 {
        let t = generate_params(3, 3, false, derive_seed(&[9, i]));
        let e = generate_params(3, 3, false, derive_seed(&[90, i]));
        let mut perm = vec![0, 1, 2];
        perm.shuffle(&mut rng);
        let base = compute_error(&t, &e).unwrap();
        for other in [
            compute_error(&t, &e.permuted(&perm)).unwrap(),
            compute_error(&t.permuted(&perm), &e.permuted(&perm)).unwrap(),
        ] {
            perm_worst = perm_worst
                .max((other.weight_error - base.weight_error).abs())
                .max((other.mean_error - base.mean_error).abs())
                .max((other.covariance_error - base.covariance_error).abs());
        }
    }
    let perm_ok = perm_worst <= 1e-12;

    // repair_psd leaves SPD input unchanged
    let mut fixed = 0;
    for i in 0..100u64 {
        let p = generate_params(4, 1, false, derive_seed(&[19, i]));
        let s = &p.covariances[0];
        if repair_psd(s, &mut rng) == *s {
            fixed += 1;
        }
    }
    let repair_ok = fixed == 100;

    let ok = recursion_ok && monte_carlo_ok && perm_ok && repair_ok;
    verdict(
        9,
        ok,
        &format!(
            "recursion rel err {recursion_worst:.1e}, Monte Carlo max |z| {worst_z:.2} over {} moments, \
             permutation diff {perm_worst:.1e}, repair fixed points {fixed}/100",
            indices.len()
        ),
    );
    assert!(ok);
}
