//! `bbvi` — fit Gaussian mixtures by black-box variational inference from
//! the command line.
//!
//! Subcommands: `gen-data` simulates a one-dimensional mixture dataset,
//! `fit` runs one optimizer fit and reports metrics as JSON, `variance-study`
//! compares the gradient estimators' bootstrap variances, and `benchmark`
//! fits the bundled datasets.
//!
//! Exit codes: 0 — success (a fit converged), 2 — a fit ran out of budget
//! without converging, 3 — a fit diverged, 64 — bad usage (unknown flags or
//! invalid values), 1 — any other failure (I/O, malformed data).

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use bbvi_core::error::Error;
use bbvi_core::estimators::EstimatorKind;
use bbvi_core::experiments::{
    benchmark, load_benchmark_dataset, load_csv, variance_study, BenchmarkDataset, BenchmarkRow,
    BenchmarkRunConfig, VarianceStudyConfig, DEFAULT_WARMUP_ETA,
};
use bbvi_core::model::{generate_gmm_data, GmmSpec, DEFAULT_COMPONENT_MEANS};
use bbvi_core::optimizer::{
    run, OptimizerConfig, Schedule, DEFAULT_BETA, DEFAULT_EPSILON, DEFAULT_MAX_ITERS,
    DEFAULT_MIN_ITERS, DEFAULT_SAMPLES, DEFAULT_XI,
};

const EXIT_OK: u8 = 0;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_FAILURE: u8 = 1;

#[derive(Parser)]
#[command(
    name = "bbvi",
    version,
    about = "Black-box variational inference for Gaussian mixtures",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a one-dimensional mixture dataset and write it as CSV.
    GenData(GenDataArgs),
    /// Fit the variational approximation to a CSV dataset.
    Fit(FitArgs),
    /// Compare the gradient estimators' bootstrap variances on simulated data.
    VarianceStudy(VarianceStudyArgs),
    /// Fit the bundled benchmark datasets.
    Benchmark(BenchmarkArgs),
}

fn parse_method(s: &str) -> Result<EstimatorKind, String> {
    EstimatorKind::from_str(s).map_err(|e| e.to_string())
}

fn parse_schedule(s: &str) -> Result<Schedule, String> {
    Schedule::from_str(s).map_err(|e| e.to_string())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum OutputFormat {
    Csv,
    Json,
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    match s {
        "csv" => Ok(OutputFormat::Csv),
        "json" => Ok(OutputFormat::Json),
        other => Err(format!("unknown format '{other}' (expected csv or json)")),
    }
}

/// Dataset selector for `benchmark`: one of the bundled names, or `all`.
#[derive(Clone, Copy)]
enum DatasetSel {
    One(BenchmarkDataset),
    All,
}

fn parse_dataset(s: &str) -> Result<DatasetSel, String> {
    if s == "all" {
        return Ok(DatasetSel::All);
    }
    BenchmarkDataset::from_str(s)
        .map(DatasetSel::One)
        .map_err(|_| format!("unknown dataset '{s}' (expected engytime, lsun3d, tetra, or all)"))
}

/// Method selector for `benchmark`: one estimator, or `both` for the two
/// headline ones (shrinkage and Rao-Blackwellized).
#[derive(Clone, Copy)]
enum MethodSel {
    One(EstimatorKind),
    Both,
}

fn parse_method_sel(s: &str) -> Result<MethodSel, String> {
    if s == "both" {
        return Ok(MethodSel::Both);
    }
    EstimatorKind::from_str(s)
        .map(MethodSel::One)
        .map_err(|_| format!("unknown method '{s}' (expected naive, js, rb, rbplus, or both)"))
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of mixture components (1 to 10; component means sit on a fixed
    /// grid).
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Number of observations.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Observation noise variance.
    #[arg(long, default_value_t = 3.0)]
    sigma2: f64,
    /// Seed for the simulation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; a `<out>.meta.json` sidecar records the parameters.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Input dataset (CSV, one row per observation; a non-numeric first row
    /// is treated as a header).
    #[arg(long)]
    data: PathBuf,
    /// Number of mixture components to fit.
    #[arg(long)]
    k: usize,
    /// Gradient estimator: naive, js, rb, or rbplus.
    #[arg(long, default_value = "js", value_parser = parse_method)]
    method: EstimatorKind,
    /// Monte-Carlo draws per iteration.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// Relative-change convergence threshold.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Base learning rate (defaults to the estimator's standard rate).
    #[arg(long)]
    eta: Option<f64>,
    /// RMSProp decay factor.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// Stabilizer inside the adaptive-rate square root.
    #[arg(long, default_value_t = DEFAULT_XI)]
    xi: f64,
    /// Learning-rate schedule: rmsprop or adagrad.
    #[arg(long, default_value = "rmsprop", value_parser = parse_schedule)]
    schedule: Schedule,
    /// Minimum iterations before convergence may trigger.
    #[arg(long, default_value_t = DEFAULT_MIN_ITERS)]
    min_iters: usize,
    /// Iteration budget.
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Seed for the run.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prior variance of the component means.
    #[arg(long, default_value_t = 10.0)]
    tau2: f64,
    /// Observation noise variance (defaults to the data's pooled variance).
    #[arg(long)]
    sigma2: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VarianceStudyArgs {
    /// Smallest component count to sweep.
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    /// Largest component count to sweep.
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    /// Observations per simulated dataset.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Latent draws shared by all estimators.
    #[arg(long, default_value_t = 500)]
    s: usize,
    /// Bootstrap resamples.
    #[arg(long, default_value_t = 100)]
    b: usize,
    /// Root seed for the study.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plain-estimator warm-up iterations before the snapshot.
    #[arg(long, default_value_t = 10)]
    warmup_iters: usize,
    /// Learning rate of the warm-up iterations.
    #[arg(long, default_value_t = DEFAULT_WARMUP_ETA)]
    warmup_eta: f64,
    /// Prior variance of the component means.
    #[arg(long, default_value_t = 10.0)]
    tau2: f64,
    /// Observation noise variance (also used to simulate the data).
    #[arg(long, default_value_t = 3.0)]
    sigma2: f64,
    /// Output format: csv (long-format table) or json.
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: OutputFormat,
    /// Write the table here instead of stdout; CSV output gets a
    /// `<out>.meta.json` sidecar with the effective configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Dataset: engytime, lsun3d, tetra, or all.
    #[arg(long, default_value = "all", value_parser = parse_dataset)]
    dataset: DatasetSel,
    /// Estimator: naive, js, rb, rbplus, or both (js and rb).
    #[arg(long, default_value = "both", value_parser = parse_method_sel)]
    method: MethodSel,
    /// Directory holding the benchmark CSV files.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Monte-Carlo draws per iteration.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// Seed for every run in the sweep.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Convergence threshold override (defaults to the dataset's).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Learning-rate override (defaults to the estimator's).
    #[arg(long)]
    eta: Option<f64>,
    /// Observation-variance override (defaults to the dataset's).
    #[arg(long)]
    sigma2: Option<f64>,
    /// Prior variance of the component means.
    #[arg(long, default_value_t = 10.0)]
    tau2: f64,
    /// RMSProp decay factor.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// Minimum iterations before convergence may trigger.
    #[arg(long, default_value_t = DEFAULT_MIN_ITERS)]
    min_iters: usize,
    /// Iteration budget.
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Output format: csv (one row per run, traces omitted) or json.
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: OutputFormat,
    /// Write the table here instead of stdout; CSV output gets a
    /// `<out>.meta.json` sidecar with the effective configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::GenData(args) => cmd_gen_data(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::VarianceStudy(args) => cmd_variance_study(&args),
        Command::Benchmark(args) => cmd_benchmark(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::InvalidParameter(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            };
            ExitCode::from(code)
        }
    }
}

/// Write `content` to `path`, or to stdout when no path is given.
fn write_output(path: Option<&Path>, content: &str) -> Result<(), Error> {
    match path {
        Some(p) => {
            std::fs::write(p, content)?;
            Ok(())
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            Ok(())
        }
    }
}

/// Write the sidecar `<out>.meta.json` next to a CSV output file.
fn write_meta<T: Serialize>(out: &Path, meta: &T) -> Result<(), Error> {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    let mut body = serde_json::to_string_pretty(meta).expect("meta serializes");
    body.push('\n');
    std::fs::write(PathBuf::from(name), body)?;
    Ok(())
}

fn rows_to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).expect("rows serialize to CSV");
    }
    String::from_utf8(writer.into_inner().expect("csv flush")).expect("csv output is UTF-8")
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<u8, Error> {
    if args.k == 0 || args.k > DEFAULT_COMPONENT_MEANS.len() {
        return Err(Error::InvalidParameter(format!(
            "k must be between 1 and {}, got {}",
            DEFAULT_COMPONENT_MEANS.len(),
            args.k
        )));
    }
    let means = &DEFAULT_COMPONENT_MEANS[..args.k];
    let data = generate_gmm_data(args.k, args.n, means, args.sigma2, args.seed)?;
    let mut csv_body = String::new();
    for i in 0..data.n() {
        csv_body.push_str(&data.observations()[[i, 0]].to_string());
        csv_body.push('\n');
    }
    std::fs::write(&args.out, csv_body)?;

    #[derive(Serialize)]
    struct GenMeta<'a> {
        seed: u64,
        k: usize,
        n: usize,
        sigma2: f64,
        component_means: &'a [f64],
        file: String,
    }
    write_meta(
        &args.out,
        &GenMeta {
            seed: args.seed,
            k: args.k,
            n: args.n,
            sigma2: args.sigma2,
            component_means: means,
            file: args.out.display().to_string(),
        },
    )?;
    Ok(EXIT_OK)
}

fn cmd_fit(args: &FitArgs) -> Result<u8, Error> {
    let data = load_csv(&args.data)?;
    let sigma2 = args.sigma2.unwrap_or_else(|| data.pooled_variance());
    let spec = GmmSpec::new(args.k, data.dim(), args.tau2, sigma2)?;
    let config = OptimizerConfig {
        method: args.method,
        samples: args.samples,
        epsilon: args.epsilon,
        eta: args
            .eta
            .unwrap_or_else(|| bbvi_core::optimizer::default_eta(args.method)),
        beta: args.beta,
        xi: args.xi,
        schedule: args.schedule,
        min_iters: args.min_iters,
        max_iters: args.max_iters,
        seed: args.seed,
    };
    match run(&spec, &data, &config) {
        Ok(fit) => {
            let mut body =
                serde_json::to_string_pretty(&fit.report).expect("report serializes");
            body.push('\n');
            write_output(args.out.as_deref(), &body)?;
            Ok(if fit.report.converged {
                EXIT_OK
            } else {
                EXIT_NOT_CONVERGED
            })
        }
        Err(Error::Diverged { iteration, trace }) => {
            #[derive(Serialize)]
            struct DivergedReport<'a> {
                error: &'static str,
                iteration: usize,
                config: &'a OptimizerConfig,
                trace: Vec<bbvi_core::metrics::TraceRow>,
            }
            let mut body = serde_json::to_string_pretty(&DivergedReport {
                error: "diverged",
                iteration,
                config: &config,
                trace,
            })
            .expect("report serializes");
            body.push('\n');
            write_output(args.out.as_deref(), &body)?;
            Ok(EXIT_DIVERGED)
        }
        Err(other) => Err(other),
    }
}

fn cmd_variance_study(args: &VarianceStudyArgs) -> Result<u8, Error> {
    if args.k_min > args.k_max {
        return Err(Error::InvalidParameter(format!(
            "--k-min {} exceeds --k-max {}",
            args.k_min, args.k_max
        )));
    }
    let config = VarianceStudyConfig {
        ks: (args.k_min..=args.k_max).collect(),
        n: args.n,
        s: args.s,
        b: args.b,
        seed: args.seed,
        warmup_iters: args.warmup_iters,
        warmup_eta: args.warmup_eta,
        tau2: args.tau2,
        sigma2: args.sigma2,
    };
    let rows = variance_study(&config)?;
    match args.format {
        OutputFormat::Csv => {
            write_output(args.out.as_deref(), &rows_to_csv(&rows))?;
            if let Some(out) = &args.out {
                write_meta(out, &config)?;
            }
        }
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct StudyReport<'a> {
                config: &'a VarianceStudyConfig,
                rows: &'a [bbvi_core::experiments::VarianceStudyRow],
            }
            let mut body = serde_json::to_string_pretty(&StudyReport {
                config: &config,
                rows: &rows,
            })
            .expect("study serializes");
            body.push('\n');
            write_output(args.out.as_deref(), &body)?;
        }
    }
    Ok(EXIT_OK)
}

/// Benchmark row without the trace, for CSV output.
#[derive(Serialize)]
struct BenchmarkCsvRow<'a> {
    dataset: &'a str,
    method: EstimatorKind,
    eta: f64,
    beta: f64,
    k: usize,
    d: usize,
    iterations: usize,
    wall_time_s: f64,
    elbo: f64,
    loglik: f64,
    dic: f64,
    converged: bool,
    diverged: bool,
}

impl<'a> From<&'a BenchmarkRow> for BenchmarkCsvRow<'a> {
    fn from(row: &'a BenchmarkRow) -> Self {
        BenchmarkCsvRow {
            dataset: &row.dataset,
            method: row.method,
            eta: row.eta,
            beta: row.beta,
            k: row.k,
            d: row.d,
            iterations: row.iterations,
            wall_time_s: row.wall_time_s,
            elbo: row.elbo,
            loglik: row.loglik,
            dic: row.dic,
            converged: row.converged,
            diverged: row.diverged,
        }
    }
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<u8, Error> {
    let datasets: Vec<BenchmarkDataset> = match args.dataset {
        DatasetSel::One(ds) => vec![ds],
        DatasetSel::All => BenchmarkDataset::ALL.to_vec(),
    };
    let methods: Vec<EstimatorKind> = match args.method {
        MethodSel::One(m) => vec![m],
        MethodSel::Both => vec![EstimatorKind::JsPlus, EstimatorKind::Rb],
    };
    let template = BenchmarkRunConfig {
        method: methods[0],
        samples: args.samples,
        seed: args.seed,
        epsilon: args.epsilon,
        eta: args.eta,
        sigma2: args.sigma2,
        tau2: args.tau2,
        beta: args.beta,
        xi: DEFAULT_XI,
        schedule: Schedule::RmsProp,
        min_iters: args.min_iters,
        max_iters: args.max_iters,
    };

    let mut rows = Vec::with_capacity(datasets.len() * methods.len());
    for &ds in &datasets {
        let data = load_benchmark_dataset(ds, &args.data_dir, args.seed)?;
        for &method in &methods {
            let cfg = BenchmarkRunConfig {
                method,
                ..template.clone()
            };
            rows.push(benchmark(ds, &data, &cfg)?);
        }
    }

    match args.format {
        OutputFormat::Csv => {
            let csv_rows: Vec<BenchmarkCsvRow> = rows.iter().map(BenchmarkCsvRow::from).collect();
            write_output(args.out.as_deref(), &rows_to_csv(&csv_rows))?;
            if let Some(out) = &args.out {
                write_meta(out, &template)?;
            }
        }
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct BenchmarkReport<'a> {
                config: &'a BenchmarkRunConfig,
                rows: &'a [BenchmarkRow],
            }
            let mut body = serde_json::to_string_pretty(&BenchmarkReport {
                config: &template,
                rows: &rows,
            })
            .expect("benchmark serializes");
            body.push('\n');
            write_output(args.out.as_deref(), &body)?;
        }
    }

    let mut code = EXIT_OK;
    for row in &rows {
        if row.diverged {
            code = code.max(EXIT_DIVERGED);
        } else if !row.converged {
            code = code.max(EXIT_NOT_CONVERGED);
        }
    }
    Ok(code)
}
