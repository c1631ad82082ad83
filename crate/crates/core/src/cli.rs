//! Command-line frontend: moment computation, estimation and benchmarks.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::bench::{run_experiment, ExperimentConfig};
use crate::model::{SolveReport, StageFailure};
use crate::moments::{sample_moments, MomentSets, SampleMoments, V3Method};
use crate::recovery::{
    estimate_from_sets, estimate_shared_known_covariance, estimate_with_cycling,
    shared_covariance_inputs, EstimateOptions, RecoveryError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NO_SOLUTION: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_TIMEOUT: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "gmm-moments",
    version,
    about = "Method-of-moments estimation for Gaussian mixtures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the moment groups of a sample CSV.
    Moments(MomentsArgs),
    /// Estimate mixture parameters from moments or samples.
    Estimate(EstimateArgs),
    /// Run a seeded experiment grid.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SampleInput {
    /// Rows are samples, columns are dimensions; a header row is optional.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Read the CSV as rows = dimensions, columns = samples.
    #[arg(long, requires = "input")]
    transpose: bool,
}

#[derive(Debug, Args)]
struct MomentsArgs {
    #[arg(long, required = true)]
    input: PathBuf,
    #[arg(long)]
    transpose: bool,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = V3Method::K)]
    method: V3Method,
    #[arg(long, default_value = "moments.json")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    k: usize,
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    from_moments: Option<PathBuf>,
    #[command(flatten)]
    samples: SampleInput,
    /// Off-diagonal moment family used with --input.
    #[arg(long, default_value_t = V3Method::K)]
    method: V3Method,
    /// JSON array of weights, or an object with a "weights" array.
    #[arg(long)]
    known_weights: Option<PathBuf>,
    /// JSON d x d covariance shared by all components of a uniform mixture.
    #[arg(long, conflicts_with_all = ["known_weights", "cycle"])]
    shared_covariance: Option<PathBuf>,
    /// Retry with other leading dimensions when a diagonal stage fails.
    #[arg(long, requires = "input")]
    cycle: bool,
    /// Seed for the positive-definite repair.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// The report goes to `<stem>.report.json` next to it.
    #[arg(long, default_value = "params.json")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Per-trial CSV; the summary goes to `<stem>.summary.csv` next to it.
    #[arg(long, default_value = "results.csv")]
    output: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Failed(StageFailure),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Failed(StageFailure::Timeout) => EXIT_TIMEOUT,
            CliError::Failed(_) => EXIT_NO_SOLUTION,
        }
    }
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_err(path, e))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "output".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Reads a numeric CSV. A first row that does not parse is taken as a
/// header; any later unparsable field is an error.
pub fn read_samples_csv(text: &str, transpose: bool) -> Result<Vec<Vec<f64>>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        let line = record.position().map_or(n as u64 + 1, |p| p.line());
        let parsed: Result<Vec<f64>, String> = record
            .iter()
            .enumerate()
            .map(|(f, s)| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        format!("line {line}, field {}: {s:?} is not a finite number", f + 1)
                    })
            })
            .collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if n == 0 => continue,
            Err(e) => return Err(e),
        }
    }
    if rows.is_empty() {
        return Err("no numeric rows".into());
    }
    if transpose {
        let n = rows[0].len();
        rows = (0..n)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
    }
    Ok(rows)
}

fn load_samples(path: &Path, transpose: bool) -> Result<Vec<Vec<f64>>, CliError> {
    read_samples_csv(&read(path)?, transpose).map_err(|e| input_err(path, e))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WeightsFile {
    Plain(Vec<f64>),
    Wrapped { weights: Vec<f64> },
}

fn recovery_err(e: RecoveryError) -> CliError {
    CliError::Input(e.to_string())
}

fn run_moments(a: &MomentsArgs) -> Result<(), CliError> {
    let rows = load_samples(&a.input, a.transpose)?;
    let sets = sample_moments(&rows, a.k, a.method).map_err(|e| input_err(&a.input, e))?;
    write(&a.output, &sets.to_json())
}

fn run_estimate(a: &EstimateArgs) -> Result<(), CliError> {
    let opts = EstimateOptions {
        seed: a.seed,
        deadline: a
            .timeout
            .map(|s| Instant::now() + Duration::from_secs_f64(s.max(0.0))),
        ..Default::default()
    };
    let known = match &a.known_weights {
        Some(p) => Some(
            match serde_json::from_str(&read(p)?).map_err(|e| input_err(p, e))? {
                WeightsFile::Plain(w) | WeightsFile::Wrapped { weights: w } => w,
            },
        ),
        None => None,
    };
    let rows = match &a.samples.input {
        Some(p) => Some(load_samples(p, a.samples.transpose)?),
        None => None,
    };
    let sets = match (&a.from_moments, &rows) {
        (Some(p), _) => Some(MomentSets::from_json(&read(p)?).map_err(|e| input_err(p, e))?),
        (None, Some(r)) if !a.cycle => {
            let path = a.samples.input.as_deref().expect("rows come from --input");
            Some(sample_moments(r, a.k, a.method).map_err(|e| input_err(path, e))?)
        }
        _ => None,
    };

    let report: SolveReport = if let Some(p) = &a.shared_covariance {
        let sigma: Vec<Vec<f64>> = serde_json::from_str(&read(p)?).map_err(|e| input_err(p, e))?;
        let rows_src;
        let src: &dyn crate::moments::MomentSource = match (&sets, &rows) {
            (Some(s), _) => s,
            (None, Some(r)) => {
                rows_src = SampleMoments::new(r).map_err(|e| CliError::Input(e.to_string()))?;
                &rows_src
            }
            (None, None) => unreachable!("clap requires a moment source"),
        };
        let inputs = shared_covariance_inputs(src, a.k).map_err(recovery_err)?;
        estimate_shared_known_covariance(src.dim(), a.k, &sigma, &inputs.m_v1, &inputs.m_v2, &opts)
            .map_err(recovery_err)?
    } else if a.cycle {
        let rows = rows.as_ref().expect("clap ties --cycle to --input");
        let src = SampleMoments::new(rows).map_err(|e| CliError::Input(e.to_string()))?;
        estimate_with_cycling(a.k, &src, a.method, known.as_deref(), &opts).map_err(recovery_err)?
    } else {
        let sets = sets.as_ref().expect("a moment source is present");
        estimate_from_sets(sets, a.k, known.as_deref(), &opts).map_err(recovery_err)?
    };

    let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    write(&sibling(&a.output, ".report.json"), &report_json)?;
    match &report.params {
        Some(params) => write(
            &a.output,
            &serde_json::to_string_pretty(params).expect("params serialize"),
        ),
        None => Err(CliError::Failed(report.stage_failed)),
    }
}

fn run_bench(a: &BenchArgs) -> Result<(), CliError> {
    let cfg: ExperimentConfig =
        serde_json::from_str(&read(&a.config)?).map_err(|e| input_err(&a.config, e))?;
    let result = run_experiment(&cfg).map_err(|e| input_err(&a.config, e))?;
    write(&a.output, &result.trials_csv())?;
    write(&sibling(&a.output, ".summary.csv"), &result.summary_csv())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 success, 2 no meaningful solution, 3 input or
/// format error, 4 timeout.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Moments(a) => run_moments(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Input(msg) => eprintln!("error: {msg}"),
                CliError::Failed(stage) => eprintln!("estimation failed: {}", stage.tag()),
            }
            e.code()
        }
    }
}
