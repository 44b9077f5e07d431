//! `covadj` command-line tool.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 invalid input
//! (data, config or arguments), 3 at least one method failed to produce an
//! estimate.

mod render;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use covadj::simulation::{
    run_study, run_study_with_threads, true_effect, Scenario, SimConfig, StudyReport,
};
use covadj::{analyze_all, load_csv_with, CovarianceKind, CsvOptions, FitConfig, VarianceMethod};

const EXIT_OUTPUT: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_ESTIMATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "covadj", version)]
#[command(about = "Covariate-adjusted risk difference for randomized trials with binary outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the risk difference in a CSV dataset under several variance methods.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo study described by a TOML config.
    Simulate(SimulateArgs),
    /// True marginal response probabilities and risk difference of a scenario.
    TrueRd(TrueRdArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    /// Write to this file instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    input: PathBuf,
    #[arg(long)]
    outcome: String,
    #[arg(long)]
    treatment: String,
    /// Covariate columns, comma separated, in drop order (last dropped first).
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Methods M1..M9 or Proposed(<kind>), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "M1,M2,M3,M4,M5,M6,M7,M8,M9")]
    methods: Vec<VarianceMethod>,
    /// Extra proposed-estimator variants: model, const, HC0..HC5, HC4m.
    #[arg(long = "hc", value_delimiter = ',')]
    hc: Vec<CovarianceKind>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Treatment-column label of the treated arm when comparing two arms of a multi-arm file.
    #[arg(long = "arm-a", requires = "arm_b")]
    arm_a: Option<String>,
    /// Treatment-column label of the control arm.
    #[arg(long = "arm-b", requires = "arm_a")]
    arm_b: Option<String>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    config: PathBuf,
    /// Worker threads; defaults to all available cores.
    #[arg(long, env = "COVADJ_THREADS")]
    threads: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct TrueRdArgs {
    /// One of the five built-in scenarios.
    #[arg(long, conflicts_with = "beta", required_unless_present = "beta")]
    scenario: Option<u8>,
    /// Coefficients β0..β6, comma separated; missing trailing values are zero.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta: Option<Vec<f64>>,
    #[command(flatten)]
    out: OutputArgs,
}

enum Failure {
    Input(String),
    Output(io::Error),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Output(e)
    }
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn analyze(args: AnalyzeArgs) -> Result<u8, Failure> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Failure::Input(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let covariates: Vec<&str> = args.covariates.iter().map(String::as_str).collect();
    let mut opts = CsvOptions::new(&args.outcome, &args.treatment, &covariates);
    if let (Some(a), Some(b)) = (&args.arm_a, &args.arm_b) {
        opts.arms = Some((a.clone(), b.clone()));
    }
    let data = load_csv_with(&args.input, &opts).map_err(|e| Failure::Input(e.to_string()))?;

    let mut methods = args.methods.clone();
    methods.extend(args.hc.iter().map(|&k| VarianceMethod::ProposedExtended(k)));
    let outcomes = analyze_all(&data, &methods, args.alpha, &FitConfig::default());

    let mut w = open_output(&args.out.output)?;
    render::analysis(&mut w, args.out.format, &outcomes)?;
    w.flush()?;
    Ok(if outcomes.iter().any(Result::is_err) {
        EXIT_ESTIMATION
    } else {
        0
    })
}

fn simulate(args: SimulateArgs) -> Result<u8, Failure> {
    let config = SimConfig::load(&args.config).map_err(|e| Failure::Input(e.to_string()))?;
    let metrics = match args.threads {
        Some(0) => return Err(Failure::Input("threads must be at least 1".into())),
        Some(t) => run_study_with_threads(&config, t)
            .map_err(|e| Failure::Input(format!("cannot start worker threads: {e}")))?,
        None => run_study(&config),
    };
    let report = StudyReport::new(config, metrics);
    let mut w = open_output(&args.out.output)?;
    render::study(&mut w, args.out.format, &report)?;
    w.flush()?;
    Ok(0)
}

fn true_rd(args: TrueRdArgs) -> Result<u8, Failure> {
    let scenario = match (args.scenario, &args.beta) {
        (Some(k), _) => Scenario::preset(k)
            .ok_or_else(|| Failure::Input(format!("no built-in scenario {k} (expected 1-5)")))?,
        (None, Some(beta)) => {
            if beta.is_empty() || beta.len() > 7 {
                return Err(Failure::Input(format!("expected 1 to 7 coefficients, got {}", beta.len())));
            }
            if beta.iter().any(|b| !b.is_finite()) {
                return Err(Failure::Input("coefficients must be finite".into()));
            }
            Scenario::new("custom", beta)
        }
        (None, None) => unreachable!("clap requires one of --scenario/--beta"),
    };
    let effect = true_effect(&scenario);
    let mut w = open_output(&args.out.output)?;
    render::true_effect(&mut w, args.out.format, &scenario, &effect)?;
    w.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::TrueRd(a) => true_rd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Output(e)) => {
            eprintln!("error: cannot write output: {e}");
            ExitCode::from(EXIT_OUTPUT)
        }
    }
}
