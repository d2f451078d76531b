//! The `mlguard` command line.
//!
//! Exit codes: 0 success, 1 rejected input or invalid contract, 2 usage
//! error, 3 internal or I/O failure. Diagnostics go to stderr; machine
//! output goes to the files named by the flags.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::bundle::{build_bundle, load_bundle, write_bundle, BuildError, LoadError};
use crate::contract::{parse_contract, validate_contract, SpecDiagnostic};
use crate::data::RecordBatch;
use crate::detectors::{recalibrate_with_feedback, Evidence, FeedbackItem, FeedbackLabel};
use crate::guard::{Guard, GuardError, JsonlSink, NullSink, Status, ViolationSink};
use crate::harness::{replay, synth_dataset, Distribution, HarnessError, ReplayConfig, ShiftSpec};
use crate::resolve::FsResolver;

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mlguard", version, about = "Train, check and enforce ML model contracts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a contract.
    Check {
        contract: PathBuf,
        /// Directory that contract locators resolve against (default: the
        /// contract's directory).
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Build a guard bundle from a contract.
    Train {
        contract: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Guard a CSV file, writing one JSON line per batch.
    Run {
        bundle: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Rows per batch (default: the whole file is one batch).
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Replay a CSV file through the guard with an injected shift.
    Replay {
        bundle: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// none | mean:S[:F] | scale:K[:F] | drop:COL | corrupt:COL:LITERAL
        #[arg(long, default_value = "none")]
        shift: String,
        #[arg(long, default_value_t = 0)]
        onset: usize,
        #[arg(long)]
        batch_size: usize,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Recalibrate a bundle's detectors from labelled feedback batches.
    Calibrate {
        bundle: PathBuf,
        /// CSV with `batch_file,label` columns; label is false_alarm or
        /// true_violation. Batch files resolve against the feedback file's
        /// directory.
        #[arg(long)]
        feedback: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        features: usize,
        #[arg(long, default_value = "standard_normal")]
        distribution: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn rejected(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_REJECTED,
        message: message.into(),
    }
}

fn failed(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_FAILURE,
        message: message.into(),
    }
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| failed(format!("{}: {e}", path.display()))
}

impl From<BuildError> for Failure {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::IoFailure { .. } | BuildError::OutputOccupied(_) => failed(e.to_string()),
            _ => rejected(e.to_string()),
        }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::IoFailure { .. } => failed(e.to_string()),
            _ => rejected(format!("bundle rejected: {e}")),
        }
    }
}

impl From<GuardError> for Failure {
    fn from(e: GuardError) -> Self {
        failed(e.to_string())
    }
}

/// Run the CLI on `argv` (including the program name) and return the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = std::panic::catch_unwind(|| dispatch(cli));
    match result {
        Ok(Ok(code)) => code,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.message);
            f.code
        }
        Err(_) => {
            eprintln!("error: internal failure");
            EXIT_FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::Check { contract, root } => check(&contract, root),
        Command::Train {
            contract,
            out,
            seed,
            root,
        } => train(&contract, &out, seed, root),
        Command::Run {
            bundle,
            input,
            output,
            log,
            batch_size,
        } => run(&bundle, &input, &output, &log, batch_size),
        Command::Replay {
            bundle,
            input,
            shift,
            onset,
            batch_size,
            report,
            seed,
            log,
        } => replay_cmd(&bundle, &input, &shift, onset, batch_size, &report, seed, log),
        Command::Calibrate {
            bundle,
            feedback,
            out,
        } => calibrate(&bundle, &feedback, &out),
        Command::Synth {
            rows,
            features,
            distribution,
            seed,
            out,
        } => synth(rows, features, &distribution, seed, &out),
    }
}

fn resolver_for(contract: &Path, root: Option<PathBuf>) -> FsResolver {
    let root = root.unwrap_or_else(|| match contract.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    });
    FsResolver::new(root)
}

fn load_spec(path: &Path) -> Result<crate::contract::ContractSpec, Failure> {
    let text = std::fs::read_to_string(path).map_err(io_failure(path))?;
    parse_contract(&text).map_err(|e| rejected(format!("{}:\n{e}", path.display())))
}

fn print_diagnostics(diags: &[SpecDiagnostic]) {
    for d in diags {
        eprintln!("{d}");
    }
}

fn check(path: &Path, root: Option<PathBuf>) -> Result<i32, Failure> {
    let spec = load_spec(path)?;
    let diags = validate_contract(&spec, &resolver_for(path, root));
    print_diagnostics(&diags);
    if diags.iter().any(SpecDiagnostic::is_error) {
        return Ok(EXIT_REJECTED);
    }
    println!(
        "OK: {} conditions ({} preconditions, {} postconditions)",
        spec.preconditions.len() + spec.postconditions.len(),
        spec.preconditions.len(),
        spec.postconditions.len()
    );
    Ok(EXIT_OK)
}

fn train(path: &Path, out: &Path, seed: u64, root: Option<PathBuf>) -> Result<i32, Failure> {
    let spec = load_spec(path)?;
    let env = resolver_for(path, root);
    print_diagnostics(
        &validate_contract(&spec, &env)
            .into_iter()
            .filter(|d| !d.is_error())
            .collect::<Vec<_>>(),
    );
    let manifest = build_bundle(&spec, &env, seed, out)?;
    eprintln!(
        "bundle written to {} ({} entries, contract {})",
        out.display(),
        manifest.entries.len(),
        &manifest.contract_digest[..12]
    );
    Ok(EXIT_OK)
}

fn read_csv(path: &Path) -> Result<RecordBatch, Failure> {
    RecordBatch::read_csv_path(path).map_err(|e| match e {
        crate::data::DataError::Io { .. } => failed(format!("{}: {e}", path.display())),
        _ => rejected(format!("{}: {e}", path.display())),
    })
}

fn open_guard(bundle: &Path, sink: Arc<dyn ViolationSink>) -> Result<Guard, Failure> {
    let bundle = load_bundle(bundle)?;
    Ok(Guard::new(bundle, sink)?)
}

fn run(
    bundle: &Path,
    input: &Path,
    output: &Path,
    log: &Path,
    batch_size: Option<usize>,
) -> Result<i32, Failure> {
    if batch_size == Some(0) {
        return Err(Failure {
            code: EXIT_USAGE,
            message: "--batch-size must be at least 1".into(),
        });
    }
    let data = read_csv(input)?;
    let sink = JsonlSink::open(log).map_err(io_failure(log))?;
    let guard = open_guard(bundle, Arc::new(sink))?;
    let file = File::create(output).map_err(io_failure(output))?;
    let mut out = BufWriter::new(file);

    let size = batch_size.unwrap_or(data.len().max(1));
    let mut any_rejected = false;
    let mut start = 0;
    loop {
        let batch = data.slice(start, start + size);
        let result = guard.predict(&batch)?;
        any_rejected |= result.status == Status::Rejected;
        let line = serde_json::to_string(&result).map_err(|e| failed(e.to_string()))?;
        writeln!(out, "{line}").map_err(io_failure(output))?;
        start += size;
        if start >= data.len() {
            break;
        }
    }
    out.flush().map_err(io_failure(output))?;
    Ok(if any_rejected { EXIT_REJECTED } else { EXIT_OK })
}

#[allow(clippy::too_many_arguments)]
fn replay_cmd(
    bundle: &Path,
    input: &Path,
    shift: &str,
    onset: usize,
    batch_size: usize,
    report: &Path,
    seed: u64,
    log: Option<PathBuf>,
) -> Result<i32, Failure> {
    let shift: ShiftSpec = shift.parse().map_err(|e: HarnessError| Failure {
        code: EXIT_USAGE,
        message: e.to_string(),
    })?;
    let data = read_csv(input)?;
    let sink: Arc<dyn ViolationSink> = match &log {
        Some(path) => Arc::new(JsonlSink::open(path).map_err(io_failure(path))?),
        None => Arc::new(NullSink),
    };
    let guard = open_guard(bundle, sink)?;
    let cfg = ReplayConfig {
        shift,
        onset,
        batch_size,
        seed,
    };
    let result = replay(&guard, &data, &cfg).map_err(|e| match e {
        HarnessError::Guard { .. } => failed(e.to_string()),
        _ => rejected(e.to_string()),
    })?;
    let mut text = serde_json::to_string_pretty(&result).map_err(|e| failed(e.to_string()))?;
    text.push('\n');
    std::fs::write(report, text).map_err(io_failure(report))?;
    eprintln!(
        "{} batches, latency {}, false alarm rate {:.3}",
        result.n_batches,
        result
            .detection_latency_batches
            .map_or("n/a".to_string(), |l| l.to_string()),
        result.false_alarm_rate
    );
    Ok(EXIT_OK)
}

#[derive(serde::Deserialize)]
struct FeedbackRow {
    batch_file: PathBuf,
    label: String,
}

fn calibrate(bundle_dir: &Path, feedback: &Path, out: &Path) -> Result<i32, Failure> {
    let mut bundle = load_bundle(bundle_dir)?;
    let base = feedback.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(feedback).map_err(|e| failed(format!("{}: {e}", feedback.display())))?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<FeedbackRow>().enumerate() {
        let row = row.map_err(|e| rejected(format!("{} row {}: {e}", feedback.display(), i + 1)))?;
        let label: FeedbackLabel = row.label.trim().parse().map_err(|()| {
            rejected(format!(
                "{} row {}: label `{}` is not false_alarm or true_violation",
                feedback.display(),
                i + 1,
                row.label
            ))
        })?;
        rows.push((read_csv(&base.join(&row.batch_file))?, label));
    }
    if rows.is_empty() {
        return Err(rejected(format!("{} has no feedback rows", feedback.display())));
    }

    for (name, model) in bundle.detectors.iter_mut() {
        let items = rows
            .iter()
            .map(|(batch, label)| {
                let m = batch
                    .project(&model.features)
                    .map_err(|e| rejected(format!("feedback for `{name}`: {e}")))?;
                Ok(FeedbackItem {
                    evidence: Evidence::Batch(m),
                    label: *label,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        *model = recalibrate_with_feedback(model, &items)
            .map_err(|e| rejected(format!("recalibrating `{name}`: {e}")))?;
    }
    write_bundle(&bundle, out)?;
    eprintln!(
        "recalibrated {} detectors from {} feedback batches into {}",
        bundle.detectors.len(),
        rows.len(),
        out.display()
    );
    Ok(EXIT_OK)
}

fn synth(rows: usize, features: usize, distribution: &str, seed: u64, out: &Path) -> Result<i32, Failure> {
    let dist: Distribution = distribution.parse().map_err(|message| Failure {
        code: EXIT_USAGE,
        message,
    })?;
    if features == 0 {
        return Err(Failure {
            code: EXIT_USAGE,
            message: "--features must be at least 1".into(),
        });
    }
    synth_dataset(rows, features, dist, seed)
        .write_csv_path(out)
        .map_err(|e| failed(format!("{}: {e}", out.display())))?;
    Ok(EXIT_OK)
}
