use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use locomem_core::config::{load_config, ConfigError, EngineConfig};
use locomem_core::dataset::{load_dataset, scripted_backend, write_dataset, DatasetError, EpisodeRecord};
use locomem_core::eval::{run_ablation, EvalError, EvalReport};
use locomem_core::ltm::{LtmError, LtmStore};
use locomem_core::model::CommandType;
use locomem_core::perception::{BackendError, BackendKind, HttpBackend, PerceptionBackend, TranscriptBackend};
use locomem_core::pipeline::{AblationCondition, Agent, DecisionLog, LogError};
use locomem_core::synth::{synth_generate, SynthError, SynthOracleParams, SyntheticOracle};

#[derive(Parser)]
#[command(name = "locomem", version, about = "Memory-augmented locomotion-intent prediction")]
struct Cli {
    /// Flat `key = value` engine configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one ablation condition over a dataset and write the decision log.
    Run(RunArgs),
    /// Run all three conditions and write their logs plus a combined report.
    Ablate(AblateArgs),
    /// Recompute metrics from a decision log.
    Report(ReportArgs),
    /// Generate a synthetic dataset and its oracle file.
    Synth(SynthArgs),
    /// Validate an LTM snapshot, optionally rewriting it.
    Snapshot(SnapshotArgs),
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Oracle file for the mock backend; defaults to `<dataset stem>.oracle.json`.
    #[arg(long)]
    oracle: Option<PathBuf>,
    /// Recorded replies for the transcript backend.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    condition: AblationCondition,
    #[arg(long)]
    out: PathBuf,
    /// Load this LTM snapshot before the run.
    #[arg(long)]
    ltm_in: Option<PathBuf>,
    /// Save the LTM after the run.
    #[arg(long)]
    ltm_out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    log: PathBuf,
    /// Also write one confusion matrix per command type.
    #[arg(long)]
    by_command_type: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out stem>.oracle.json`.
    #[arg(long)]
    oracle: Option<PathBuf>,
    /// Oracle parameters as JSON; defaults are used otherwise.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct SnapshotArgs {
    #[arg(long)]
    ltm: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Backend(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Backend(m) => f.write_str(m),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(DatasetError, EvalError, LogError, LtmError, SynthError, std::io::Error);

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

/// Files and directories created by a command, removed again if it fails.
#[derive(Default)]
struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl Outputs {
    fn dir(&mut self, path: &Path) -> Result<(), CliError> {
        if !path.exists() {
            fs::create_dir_all(path)?;
            self.dirs.push(path.to_path_buf());
        }
        Ok(())
    }

    fn track(&mut self, path: &Path) -> PathBuf {
        self.files.push(path.to_path_buf());
        path.to_path_buf()
    }

    fn write(&mut self, path: &Path, contents: &str) -> Result<(), CliError> {
        fs::write(self.track(path), contents)?;
        Ok(())
    }

    fn remove(&self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let mut outputs = Outputs::default();
    match run(cli, &mut outputs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            outputs.remove();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli, outputs: &mut Outputs) -> Result<(), CliError> {
    let mut overrides = Vec::new();
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{o}` is not KEY=VALUE")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Run(args) => cmd_run(config_path, overrides, args, outputs),
        Command::Ablate(args) => cmd_ablate(config_path, overrides, args, outputs),
        Command::Report(args) => cmd_report(config_path, overrides, args, outputs),
        Command::Synth(args) => {
            // Synthesis takes no engine settings, but bad global flags still fail.
            config_for(config_path, overrides, None)?;
            cmd_synth(args, outputs)
        }
        Command::Snapshot(args) => cmd_snapshot(config_path, overrides, args, outputs),
    }
}

fn config_for(
    path: Option<&Path>,
    mut overrides: Vec<(String, String)>,
    backend: Option<&BackendArgs>,
) -> Result<EngineConfig, CliError> {
    if let Some(b) = backend {
        overrides.push(("dataset".into(), b.dataset.display().to_string()));
        if let Some(kind) = b.backend {
            overrides.push(("backend".into(), kind.as_str().to_string()));
        }
        if let Some(seed) = b.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
    }
    let refs: Vec<(&str, String)> = overrides.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    Ok(load_config(path, &refs)?)
}

fn default_oracle_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("oracle.json")
}

/// Builds the backend for `condition`. The mock backend prefers scripted
/// responses embedded in the dataset and falls back to the oracle file.
fn make_backend(
    config: &EngineConfig,
    args: &BackendArgs,
    records: &[EpisodeRecord],
    condition: AblationCondition,
    oracle: &mut Option<SyntheticOracle>,
) -> Result<Box<dyn PerceptionBackend>, CliError> {
    match config.backend {
        BackendKind::Mock => {
            if let Some(b) = scripted_backend(records, condition) {
                return Ok(Box::new(b));
            }
            if oracle.is_none() {
                let path = args.oracle.clone().unwrap_or_else(|| default_oracle_path(&args.dataset));
                if !path.exists() {
                    return Err(CliError::Usage(format!(
                        "mock backend needs scripted responses in the dataset or an oracle file (looked for {})",
                        path.display()
                    )));
                }
                let mut o = SyntheticOracle::load(&path)?;
                if args.seed.is_some() {
                    o.seed = config.seed;
                }
                *oracle = Some(o);
            }
            Ok(Box::new(oracle.clone().expect("oracle loaded")))
        }
        BackendKind::Transcript => {
            let path = args
                .transcript
                .as_ref()
                .ok_or_else(|| CliError::Usage("the transcript backend needs --transcript".into()))?;
            Ok(Box::new(TranscriptBackend::open(path)?))
        }
        BackendKind::Http => Ok(Box::new(HttpBackend::new(config.http_backend_config()))),
    }
}

/// The seed recorded for a run: an explicit `--seed`, else the oracle's.
fn effective_config(mut config: EngineConfig, args: &BackendArgs, oracle: &Option<SyntheticOracle>) -> EngineConfig {
    if args.seed.is_none() {
        if let Some(o) = oracle {
            config.seed = o.seed;
        }
    }
    config
}

fn cmd_run(path: Option<&Path>, overrides: Vec<(String, String)>, args: RunArgs, outputs: &mut Outputs) -> Result<(), CliError> {
    let config = config_for(path, overrides, Some(&args.backend))?;
    let records = load_dataset(&args.backend.dataset)?;
    let mut oracle = None;
    let backend = make_backend(&config, &args.backend, &records, args.condition, &mut oracle)?;
    let kind = backend.kind();
    let config = effective_config(config, &args.backend, &oracle);

    let mut agent = Agent::with_hash_embedder(config.clone(), args.condition, backend);
    if let Some(p) = &args.ltm_in {
        agent.ltm_mut().load_snapshot(p)?;
    }
    let mut log = DecisionLog::new(&config, args.condition, kind);
    log.decisions = agent.run_dataset(&records);
    log.write(outputs.track(&args.out))?;
    if let Some(p) = &args.ltm_out {
        agent.ltm().save_snapshot(outputs.track(p))?;
    }

    let errors = log.decisions.iter().filter(|d| d.is_error()).count();
    let refined = log.decisions.iter().filter(|d| d.refined).count();
    println!(
        "{}: {} decisions ({} refined, {} errors) -> {}",
        args.condition,
        log.decisions.len(),
        refined,
        errors,
        args.out.display()
    );
    if errors > 0 && errors == log.decisions.len() {
        return Err(CliError::Backend(format!("every event failed; first error: {}", log.decisions[0].error.as_deref().unwrap_or("?"))));
    }
    Ok(())
}

fn cmd_ablate(path: Option<&Path>, overrides: Vec<(String, String)>, args: AblateArgs, outputs: &mut Outputs) -> Result<(), CliError> {
    let config = config_for(path, overrides, Some(&args.backend))?;
    let records = load_dataset(&args.backend.dataset)?;
    let mut oracle = None;
    let mut backends = Vec::new();
    for c in AblationCondition::ALL {
        backends.push(Some(make_backend(&config, &args.backend, &records, c, &mut oracle)?));
    }
    let config = effective_config(config, &args.backend, &oracle);
    let run = run_ablation(
        &records,
        |c| {
            let i = AblationCondition::ALL.iter().position(|x| *x == c).expect("known condition");
            backends[i].take().ok_or_else(|| format!("backend for {c} already used"))
        },
        &AblationCondition::ALL,
        &config,
    )?;

    outputs.dir(&args.out)?;
    for log in &run.logs {
        log.write(outputs.track(&args.out.join(format!("{}.jsonl", log.header.condition.tag()))))?;
    }
    let text = run.report.to_text();
    outputs.write(&args.out.join("report.txt"), &text)?;
    outputs.write(&args.out.join("report.json"), &run.report.to_json())?;
    print!("{text}");
    Ok(())
}

fn cmd_report(path: Option<&Path>, overrides: Vec<(String, String)>, args: ReportArgs, outputs: &mut Outputs) -> Result<(), CliError> {
    let config = config_for(path, overrides, None)?;
    let log = DecisionLog::read(&args.log)?;
    let report = EvalReport::from_log(&log, config.ece_bins)?;

    outputs.dir(&args.out)?;
    let text = report.to_text();
    outputs.write(&args.out.join("report.txt"), &text)?;
    outputs.write(&args.out.join("report.json"), &report.to_json())?;
    outputs.write(&args.out.join("confusion.csv"), &report.confusion.to_csv())?;
    outputs.write(&args.out.join("score_histograms.csv"), &report.score_distribution.histogram_csv())?;
    if args.by_command_type {
        for t in CommandType::ALL {
            let m = report.per_type.iter().find(|s| s.command_type == t).map(|s| &s.confusion);
            if let Some(m) = m {
                outputs.write(&args.out.join(format!("confusion_{}.csv", t.as_str())), &m.to_csv())?;
            }
        }
    }
    print!("{text}");
    Ok(())
}

fn cmd_synth(args: SynthArgs, outputs: &mut Outputs) -> Result<(), CliError> {
    let params = match &args.params {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<SynthOracleParams>(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => SynthOracleParams::default(),
    };
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let corpus = synth_generate(args.seed, args.n, &params)?;
    let oracle_path = args.oracle.clone().unwrap_or_else(|| default_oracle_path(&args.out));
    write_dataset(outputs.track(&args.out), &corpus.records)?;
    corpus.oracle.save(outputs.track(&oracle_path))?;
    println!("{} events -> {} (oracle {})", corpus.records.len(), args.out.display(), oracle_path.display());
    Ok(())
}

fn cmd_snapshot(path: Option<&Path>, overrides: Vec<(String, String)>, args: SnapshotArgs, outputs: &mut Outputs) -> Result<(), CliError> {
    let config = config_for(path, overrides, None)?;
    let mut store = LtmStore::new(config.ltm.clone(), config.safety_modes.clone());
    store.load_snapshot(&args.ltm)?;
    let safety = store.entries().iter().filter(|e| e.safety_critical).count();
    println!("{}: {} entries ({} safety-critical)", args.ltm.display(), store.len(), safety);
    if let Some(out) = &args.out {
        store.save_snapshot(outputs.track(out))?;
    }
    Ok(())
}
