use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lens_cli::calibrate::{run_calibrate, CalibrateOptions};
use lens_cli::config::{TrainFile, TEMPLATE};
use lens_cli::report::{build_report, load_metrics};
use lens_cli::CliError;
use lens_core::calibration::{CalibrationConfig, NegativeScale};
use lens_core::simulator::{generate_task, train_with, Algorithm, PASS_AT_K};
use lens_core::theory::{run_suite, Suite, VerifyConfig};
use lens_core::{AdvantageConfig, AdvantageMode, PreferenceSpec};

#[derive(Parser)]
#[command(name = "lens", version, about = "Confidence-calibrated rewards for group-relative RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn trajectory records into advantage records.
    Calibrate(CalibrateArgs),
    /// Run the numerical checks of the likelihood identities.
    Verify(VerifyArgs),
    /// Train on a synthetic task and stream per-step metrics.
    Train(TrainArgs),
    /// Compare metric files from several runs.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    MixedOnly,
    NegativeOnly,
    Grpo,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    OneOverG,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum PreferenceArg {
    None,
    Data,
    Policy,
    Length,
}

#[derive(clap::Args)]
struct CalibrateArgs {
    /// Input file (JSON lines); standard input when omitted or `-`.
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Output file; standard output when omitted or `-`.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25, allow_negative_numbers = true)]
    alpha: f64,
    /// Expected records per group; groups are flushed as soon as they fill.
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    floor_factor: f64,
    #[arg(long, value_enum, default_value = "full")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "one-over-g")]
    negative_scale: ScaleArg,
    #[arg(long, value_enum, default_value = "none")]
    preference: PreferenceArg,
    /// Per-token preference for `--preference length`, in (0, 1).
    #[arg(long)]
    gamma: Option<f64>,
    /// Close a group as soon as a record from another group arrives.
    #[arg(long)]
    strict_contiguous: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Theorem1,
    Theorem2,
    Weight,
    Consistency,
    All,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: SuiteArg,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, env = "LENS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    tol_theorem1: Option<f64>,
    #[arg(long)]
    tol_theorem2: Option<f64>,
    #[arg(long)]
    tol_weight: Option<f64>,
    #[arg(long)]
    tol_consistency: Option<f64>,
    /// Smoothing applied to the optimal policy in the consistency check.
    #[arg(long)]
    smoothing: Option<f64>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(short, long, required_unless_present = "print_config")]
    config: Option<PathBuf>,
    /// Overrides `algorithm` in the config; defaults to lens.
    #[arg(short, long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
    /// Metrics file (JSON lines); standard output when omitted or `-`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long, env = "LENS_SEED")]
    seed: Option<u64>,
    /// Print the effective configuration (or a template) and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(clap::Args)]
struct ReportArgs {
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
    /// Write the negative-group-fraction CSV here instead of standard output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: lens_core::LensError| e.to_string())
}

fn is_stdio(p: &Option<PathBuf>) -> bool {
    p.as_deref().is_none_or(|p| p == Path::new("-"))
}

fn open_input(p: &Option<PathBuf>) -> Result<Box<dyn BufRead>, CliError> {
    if is_stdio(p) {
        return Ok(Box::new(BufReader::new(io::stdin().lock())));
    }
    let path = p.as_ref().expect("path present");
    let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Box::new(BufReader::new(f)))
}

fn open_output(p: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    if is_stdio(p) {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let path = p.as_ref().expect("path present");
    let f = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let preference = match args.preference {
        PreferenceArg::None => PreferenceSpec::None,
        PreferenceArg::Data => PreferenceSpec::DataDistribution,
        PreferenceArg::Policy => PreferenceSpec::PolicyItself,
        PreferenceArg::Length => {
            let gamma = args.gamma.ok_or_else(|| CliError::Config("--preference length needs --gamma".into()))?;
            PreferenceSpec::length_geometric(gamma).map_err(|e| CliError::Config(e.to_string()))?
        }
    };
    let opts = CalibrateOptions {
        calibration: CalibrationConfig {
            difficulty_floor_factor: args.floor_factor,
            negative_scale: match args.negative_scale {
                ScaleArg::OneOverG => NegativeScale::OneOverG,
                ScaleArg::None => NegativeScale::None,
            },
            preference,
            ..Default::default()
        },
        advantage: AdvantageConfig {
            alpha: args.alpha,
            mode: match args.mode {
                ModeArg::Full => AdvantageMode::Full,
                ModeArg::MixedOnly => AdvantageMode::MixedOnly,
                ModeArg::NegativeOnly => AdvantageMode::NegativeOnly,
                ModeArg::Grpo => AdvantageMode::GrpoBaseline,
            },
            ..Default::default()
        },
        group_size: args.group_size,
        strict_contiguous: args.strict_contiguous,
    };
    if let Some(w) = opts.advantage.alpha_warning() {
        eprintln!("warning: {w}");
    }
    let input = open_input(&args.input)?;
    let output = open_output(&args.output)?;
    let summary = run_calibrate(input, output, &opts)?;
    eprintln!("{summary}");
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<(), CliError> {
    let d = VerifyConfig::default();
    let cfg = VerifyConfig {
        trials: args.trials,
        seed: args.seed,
        tol_theorem1: args.tol_theorem1.unwrap_or(d.tol_theorem1),
        tol_theorem2: args.tol_theorem2.unwrap_or(d.tol_theorem2),
        tol_weight: args.tol_weight.unwrap_or(d.tol_weight),
        tol_consistency: args.tol_consistency.unwrap_or(d.tol_consistency),
        smoothing: args.smoothing.unwrap_or(d.smoothing),
    };
    let suite = match args.suite {
        SuiteArg::Theorem1 => Suite::Theorem1,
        SuiteArg::Theorem2 => Suite::Theorem2,
        SuiteArg::Weight => Suite::Weight,
        SuiteArg::Consistency => Suite::Consistency,
        SuiteArg::All => Suite::All,
    };
    let report = run_suite(suite, &cfg).map_err(|e| CliError::Config(e.to_string()))?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{report}");
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed)
    }
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Some(TrainFile::parse(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => other,
            })?)
        }
        None => None,
    };
    if args.print_config {
        match &file {
            Some(f) => print!("{}", f.to_toml()),
            None => print!("{TEMPLATE}"),
        }
        return Ok(());
    }
    let file = file.expect("config required without --print-config");
    let spec = file.task_spec()?;
    let mut cfg = file.train_config()?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let algorithm = args.algorithm.or(file.algorithm).unwrap_or(Algorithm::Lens);
    let task = generate_task(&spec)?;

    let to_stdout = is_stdio(&args.out);
    let mut out = open_output(&args.out)?;
    let mut write_error = None;
    let outcome = train_with(&task, &cfg, algorithm, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(out, "{line}").map_err(|e| {
            let msg = format!("writing metrics: {e}");
            write_error = Some(CliError::Io(msg.clone()));
            lens_core::LensError::DomainError(msg)
        })
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    let outcome = outcome?;
    out.flush()?;
    drop(out);

    let mut summary = String::new();
    summary.push_str(&format!("algorithm {algorithm}, {} steps\n", cfg.steps));
    if let Some(m) = outcome.final_eval() {
        summary.push_str("k     pass@k\n");
        for k in PASS_AT_K {
            if let Some(v) = m.pass_at_k.get(&k) {
                summary.push_str(&format!("{k:<5} {v:.4}\n"));
            }
        }
        if let Some(h) = m.hard_mean_reward {
            summary.push_str(&format!("hard-question mean reward {h:.4}\n"));
        }
    }
    if to_stdout {
        eprint!("{summary}");
    } else {
        print!("{summary}");
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let runs = args.metrics.iter().map(|p| load_metrics(p)).collect::<Result<Vec<_>, _>>()?;
    let r = build_report(&runs);
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", r.table);
    match &args.csv {
        Some(path) => std::fs::write(path, &r.negative_fraction_csv)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        None => print!("\nnegative group fraction\n{}", r.negative_fraction_csv),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Verify(a) => verify(a),
        Command::Train(a) => train(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::VerifyFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
