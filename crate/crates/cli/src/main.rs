use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedunlearn::harness::{
    load_artifacts, read_csv, run_scenario, to_csv, to_jsonl, verify_artifacts, write_artifacts,
    ExperimentConfig, HarnessError, Precision, ScenarioKind, EXIT_CONFIG, EXIT_VERIFICATION_FAILURE,
};
use fedunlearn::ledger::{read_blocks, ConsensusKind};
use fedunlearn::Scalar;

// Output goes to a possibly closed pipe; write errors are dropped.
macro_rules! say {
    ($($a:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($a)*);
    }};
}

macro_rules! say_raw {
    ($($a:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout().lock(), $($a)*);
    }};
}

#[derive(Parser)]
#[command(name = "fedunlearn", version, about = "Verifiable federated unlearning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a federation and write its artifacts.
    Train(RunArgs),
    /// Train, then unlearn the configured targets.
    Unlearn {
        #[command(flatten)]
        run: RunArgs,
        /// Earlier `train` output; its config is the base and its ledger must
        /// be reproduced exactly.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Check the chain and every calibration commitment in an output directory.
    Verify {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Inspect a ledger dump.
    Ledger {
        #[command(subcommand)]
        action: LedgerAction,
    },
    /// Print the metrics of an output directory.
    Metrics {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run a named scenario end to end.
    Scenario {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        name: Option<ScenarioKind>,
    },
}

#[derive(Subcommand)]
enum LedgerAction {
    /// One JSON block per line.
    Dump {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Check hash links, transaction roots and consensus witnesses.
    Verify {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Contract state, or the commitments of a single round.
    State {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        round: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config; built-in defaults if absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<u32>>,
    #[arg(long)]
    consensus: Option<ConsensusKind>,
    #[arg(long)]
    tamper_step: Option<u64>,
    /// Any config key, as `key=value` with a TOML value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(EXIT_CONFIG as u8),
            };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<i32, HarnessError> {
    match cmd {
        Command::Train(args) => {
            let cfg = resolve(&args, None, Some(ScenarioKind::NoUnlearnBaseline))?;
            execute(&cfg, &args.out)
        }
        Command::Unlearn { run, from } => {
            let base = from.as_ref().map(|d| ExperimentConfig::load(d.join("config.toml"))).transpose()?;
            let mut cfg = resolve(&run, base, None)?;
            if !matches!(cfg.scenario, ScenarioKind::Honest | ScenarioKind::Tamper) {
                cfg.scenario = ScenarioKind::Honest;
            }
            let code = execute(&cfg, &run.out)?;
            if let Some(dir) = from {
                check_prefix(&dir, &run.out)?;
            }
            Ok(code)
        }
        Command::Scenario { run, name } => {
            if run.seed.is_none() {
                return Err(HarnessError::Config("scenario runs require --seed".into()));
            }
            let cfg = resolve(&run, None, name)?;
            execute(&cfg, &run.out)
        }
        Command::Verify { dir } => match precision_of(&dir)? {
            Precision::F64 => verify::<f64>(&dir),
            Precision::F32 => verify::<f32>(&dir),
        },
        Command::Ledger { action } => ledger(action),
        Command::Metrics { dir, format } => {
            let records = read_csv(&std::fs::read(dir.join("metrics.csv"))?)?;
            let out = match format {
                Format::Csv => to_csv(&records)?,
                Format::Jsonl => to_jsonl(&records),
            };
            say_raw!("{}", String::from_utf8_lossy(&out));
            Ok(0)
        }
    }
}

/// Config file (or `base`), then the named flags, then `--set` pairs.
fn resolve(
    args: &RunArgs,
    base: Option<ExperimentConfig>,
    scenario: Option<ScenarioKind>,
) -> Result<ExperimentConfig, HarnessError> {
    let cfg = match (&args.config, base) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(b)) => b,
        (None, None) => ExperimentConfig::default(),
    };
    let mut table = toml::Table::try_from(&cfg).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut put = |k: &str, v: toml::Value| {
        table.insert(k.to_string(), v);
    };
    if let Some(s) = args.seed {
        put("seed", toml::Value::Integer(s as i64));
    }
    if let Some(v) = args.clients {
        put("clients", toml::Value::Integer(v as i64));
    }
    if let Some(v) = args.rounds {
        put("rounds", toml::Value::Integer(v as i64));
    }
    if let Some(v) = args.local_epochs {
        put("local_epochs", toml::Value::Integer(v as i64));
    }
    if let Some(v) = args.lambda {
        put("lambda", toml::Value::Integer(v.into()));
    }
    if let Some(v) = &args.targets {
        put("targets", toml::Value::Array(v.iter().map(|&t| toml::Value::Integer(t.into())).collect()));
    }
    if let Some(v) = args.consensus {
        let name = match v {
            ConsensusKind::Dpos => "dpos",
            ConsensusKind::Pow => "pow",
        };
        put("consensus", toml::Value::String(name.into()));
    }
    if let Some(v) = args.tamper_step {
        put("tamper_step", toml::Value::Integer(v as i64));
    }
    if let Some(kind) = scenario {
        put("scenario", toml::Value::String(kind.as_str().into()));
    }
    for pair in &args.sets {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        put(k.trim(), parse_value(v.trim()));
    }
    ExperimentConfig::from_toml(&toml::to_string(&table).expect("table serializes"))
}

fn parse_value(text: &str) -> toml::Value {
    let wrapped = format!("v = {text}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

fn execute(cfg: &ExperimentConfig, out: &Path) -> Result<i32, HarnessError> {
    match cfg.precision {
        Precision::F64 => execute_as::<f64>(cfg, out),
        Precision::F32 => execute_as::<f32>(cfg, out),
    }
}

fn execute_as<T: Scalar>(cfg: &ExperimentConfig, out: &Path) -> Result<i32, HarnessError> {
    let (report, mut fed) = run_scenario::<T>(cfg)?;
    write_artifacts(out, cfg, &report, &mut fed)?;
    let summary = serde_json::json!({ "outcome": report.outcome, "summary": report.summary });
    say!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(report.exit_code())
}

/// The training blocks of `trained` must open the ledger written to `out`.
fn check_prefix(trained: &Path, out: &Path) -> Result<(), HarnessError> {
    let read = |d: &Path| -> Result<Vec<_>, HarnessError> {
        let f = std::fs::File::open(d.join("ledger.jsonl"))?;
        Ok(read_blocks(std::io::BufReader::new(f))?)
    };
    let (old, new) = (read(trained)?, read(out)?);
    if new.len() < old.len() || new[..old.len()] != old[..] {
        return Err(HarnessError::Io(format!(
            "{} does not reproduce the ledger in {}",
            out.display(),
            trained.display()
        )));
    }
    Ok(())
}

fn precision_of(dir: &Path) -> Result<Precision, HarnessError> {
    Ok(ExperimentConfig::load(dir.join("config.toml"))?.precision)
}

fn verify<T: Scalar>(dir: &Path) -> Result<i32, HarnessError> {
    let art = load_artifacts::<T>(dir)?;
    let (chain, verdicts) = verify_artifacts(&art)?;
    let mut ok = true;
    match chain {
        Ok(()) => say!("chain ok ({} blocks)", art.ledger.blocks().len()),
        Err(h) => {
            ok = false;
            say!("chain broken at block {h}");
        }
    }
    for (round, v) in &verdicts {
        match v {
            fedunlearn::unlearning::Verdict::Accept => say!("calibration round {round}: accept"),
            fedunlearn::unlearning::Verdict::Reject(r) => {
                ok = false;
                say!("calibration round {round}: reject ({r})");
            }
        }
    }
    Ok(if ok { 0 } else { EXIT_VERIFICATION_FAILURE })
}

fn ledger(action: LedgerAction) -> Result<i32, HarnessError> {
    match action {
        LedgerAction::Dump { dir } => {
            say_raw!("{}", std::fs::read_to_string(dir.join("ledger.jsonl"))?);
            Ok(0)
        }
        LedgerAction::Verify { dir } => {
            let art = load_artifacts::<f64>(&dir)?;
            match art.ledger.verify_chain() {
                Ok(()) => {
                    say!("chain ok ({} blocks)", art.ledger.blocks().len());
                    Ok(0)
                }
                Err(h) => {
                    say!("chain broken at block {h}");
                    Ok(EXIT_VERIFICATION_FAILURE)
                }
            }
        }
        LedgerAction::State { dir, round } => {
            let art = load_artifacts::<f64>(&dir)?;
            let state = art.ledger.state();
            match round {
                None => say!("{}", state.to_json()),
                Some(r) => {
                    let view = serde_json::json!({
                        "round": r,
                        "local_hashes": state.local_hashes.get(&r),
                        "global_hash": state.global_hashes.get(&r),
                        "calibration": state.calibration_hashes.get(&r),
                    });
                    say!("{}", serde_json::to_string_pretty(&view).expect("state serializes"));
                }
            }
            Ok(0)
        }
    }
}
