#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use capfusion::data::{DataError, SchemeName};
use capfusion::harness::{
    compare, render_comparison, render_report, run_experiment, ExperimentConfig, ExperimentReport, HarnessError,
};
use capfusion::models::{Architecture, Fusion};
use capfusion::synth::{generate_corpus, write_corpus, SeparabilityMode, SynthConfig};
use capfusion::verify::{gradient_suite, EPSILON, TOLERANCE};

#[derive(Parser)]
#[command(name = "capfusion", version, about = "IMU + body-capacitance activity recognition experiments")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-device corpus.
    Synth(SynthArgs),
    /// Run a leave-one-session-out experiment and write its report.
    Run(RunArgs),
    /// Put reports on one scheme side by side.
    Compare(CompareArgs),
    /// Render reports into the scheme × model grid.
    Table(TableArgs),
    /// Finite-difference check of every layer kind and both architectures.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Four activities told apart by the IMU channels only.
    Imu,
    /// Four activities told apart by the capacitance channels only.
    Bcs,
    /// Both modalities carry the activity.
    Both,
    /// Each modality alone splits the activities in two; together they identify them.
    Joint,
}

#[derive(Args)]
struct SynthArgs {
    /// SynthConfig JSON file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in corpus instead of a config file.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Seed for a preset corpus.
    #[arg(long, default_value_t = 0, requires = "preset")]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// ExperimentConfig JSON; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// full12, nonull11, posture4, posture3 or binary2.
    #[arg(long)]
    scheme: Option<String>,
    /// mccnn or deepconvlstm.
    #[arg(long)]
    arch: Option<String>,
    /// early, late or imu-only.
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Folds trained concurrently.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(required = true, num_args = 2..)]
    reports: Vec<PathBuf>,
    /// Also write the merged comparison as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Start step of the extrapolated central differences.
    #[arg(long, default_value_t = EPSILON)]
    epsilon: f64,
}

#[derive(Debug, Error)]
enum CliError {
    /// Bad flags or configuration: exit 2.
    #[error("{0}")]
    Usage(String),
    /// Failure inside the pipeline: exit 1.
    #[error(transparent)]
    Pipeline(#[from] HarnessError),
    #[error("{0}")]
    Failed(String),
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Pipeline(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Pipeline(_) | CliError::Failed(_) => 1,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| DataError::io(path, e).into())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let config = match (&args.config, args.preset) {
        (Some(path), _) => SynthConfig::read(path).map_err(usage)?,
        (None, Some(preset)) => match preset {
            Preset::Imu => SynthConfig::four_activity(SeparabilityMode::ImuDiscriminative, args.seed),
            Preset::Bcs => SynthConfig::four_activity(SeparabilityMode::BcsDiscriminative, args.seed),
            Preset::Both => SynthConfig::four_activity(SeparabilityMode::Both, args.seed),
            Preset::Joint => SynthConfig::jointly_discriminative(args.seed),
        },
        (None, None) => unreachable!("clap requires one of --config and --preset"),
    };
    let corpus = generate_corpus(&config)?;
    write_corpus(&corpus, &config, &args.out)?;
    println!("wrote {} sessions to {}", corpus.sessions.len(), args.out.display());
    Ok(())
}

/// Config file first, then flags on top.
fn experiment_config(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::read(path).map_err(usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &args.data {
        cfg.data = d.clone();
    }
    if let Some(s) = &args.scheme {
        cfg.scheme = s.parse::<SchemeName>().map_err(usage)?;
    }
    if let Some(a) = &args.arch {
        cfg.architecture = a.parse::<Architecture>().map_err(usage)?;
    }
    if let Some(f) = &args.fusion {
        cfg.fusion = f.parse::<Fusion>().map_err(usage)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = experiment_config(args)?;
    let report = run_experiment(&cfg)?;
    let table = render_report(std::slice::from_ref(&report))?;
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out).map_err(|e| DataError::io(out, e))?;
        report.write(out.join("report.json"))?;
        write_file(&out.join("report.txt"), &table)?;
    }
    for fold in &report.per_fold {
        for w in &fold.warnings {
            log::warn!("fold {} (test {}): {w}", fold.fold, fold.test_session);
        }
    }
    print!("{table}");
    Ok(())
}

fn read_reports(paths: &[PathBuf]) -> Result<Vec<ExperimentReport>, CliError> {
    paths.iter().map(|p| ExperimentReport::read(p).map_err(usage)).collect()
}

fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let reports = read_reports(&args.reports)?;
    let merged = compare(&reports).map_err(usage)?;
    if let Some(out) = &args.out {
        let text = serde_json::to_string_pretty(&merged).expect("comparison serializes") + "\n";
        write_file(out, &text)?;
    }
    print!("{}", render_comparison(&merged));
    Ok(())
}

fn cmd_table(args: &TableArgs) -> Result<(), CliError> {
    let reports = read_reports(&args.reports)?;
    print!("{}", render_report(&reports).map_err(usage)?);
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    if args.seeds == 0 || !(args.epsilon > 0.0) {
        return Err(usage("--seeds and --epsilon must be positive"));
    }
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let report = gradient_suite(&seeds, args.epsilon).map_err(HarnessError::from)?;
    println!("{:<14} {:>12}  {:<16} {:>6} {:>8}", "case", "max rel err", "worst at", "seed", "checks");
    for e in &report.entries {
        println!(
            "{:<14} {:>12.3e}  {:<16} {:>6} {:>8}",
            e.name, e.max_relative_error, e.worst_location, e.worst_seed, e.checked
        );
        if e.skipped > 0 {
            println!("{:<14} {} coordinates sat on a kink and were skipped", "", e.skipped);
        }
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: worst {:.3e} (tolerance {TOLERANCE:e}) over {} seeds in {:.1} s",
        report.worst(),
        args.seeds,
        report.elapsed_s
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed("gradient check above tolerance".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Table(a) => cmd_table(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
