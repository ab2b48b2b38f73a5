use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use lincoln_core::analysis::{
    overlap_csv, overlap_vs_time_gap, reappearance_csv, reappearance_rate, OverlapMode, SampleOptions,
    DEFAULT_SAMPLE_SIZE,
};
use lincoln_core::diffcore::write_checkpoint;
use lincoln_core::hypercore::{
    parse_simplex_dataset, partition_into_snapshots, DynamicHypergraph, HyperError, PartitionPolicy,
};
use lincoln_core::trainer::{live_update, toy_config, toy_gradient_check, TrainConfig, TrainError};

const SEED_ENV: &str = "LINCOLN_SEED";
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "lincoln", version, about = "Dynamic hypergraph hyperedge prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a nverts/simplices/times triple into a snapshot dataset.
    Ingest {
        #[arg(long)]
        nverts: PathBuf,
        #[arg(long)]
        simplices: PathBuf,
        #[arg(long)]
        times: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "equal_count")]
        policy: Policy,
        #[arg(long)]
        snapshots: usize,
    },
    /// Run the live-update protocol and write metrics and a checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Disable a component (repeatable).
        #[arg(long, value_enum)]
        ablate: Vec<Ablation>,
        #[arg(long)]
        runs: Option<usize>,
        /// Execute independent runs on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Overlap/time-gap and re-appearance statistics as CSV.
    Analyze {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: AnalyzeMode,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
        sample_size: usize,
        /// Leading snapshots to sample from (default: first 20%).
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, value_enum, default_value = "count")]
        overlap: OverlapKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic and finite-difference gradients on the toy instance.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Policy {
    EqualCount,
    EqualDuration,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Ablation {
    Pin,
    Bihe,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum AnalyzeMode {
    O1,
    O2,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum OverlapKind {
    Count,
    Jaccard,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Failed(_) => 1,
            Self::Input(_) => 2,
        }
    }
}

impl From<HyperError> for CliError {
    fn from(e: HyperError) -> Self {
        Self::Input(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::DatasetTooSmall(_) | TrainError::Hyper(_) => {
                Self::Input(e.to_string())
            }
            other => Self::Failed(other.to_string()),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

/// Writes through a temporary sibling and renames into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let fail = |e: std::io::Error| CliError::Failed(format!("{}: {e}", path.display()));
    let mut f = File::create(&tmp).map_err(fail)?;
    f.write_all(bytes).map_err(fail)?;
    f.sync_all().map_err(fail)?;
    fs::rename(&tmp, path).map_err(fail)
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Input(format!("{SEED_ENV} is not an unsigned integer: {v}"))),
        Err(_) => Ok(None),
    }
}

fn load_config(path: Option<&Path>, fallback: TrainConfig) -> Result<TrainConfig> {
    let Some(path) = path else {
        return Ok(fallback);
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<DynamicHypergraph> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(DynamicHypergraph::read_json(BufReader::new(file))?)
}

fn sorted_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_hash: String,
    dataset: String,
    seed: u64,
    tool_version: String,
    wall_clock_secs: f64,
    outputs: Vec<String>,
}

fn config_hash<T: Serialize>(config: &T) -> String {
    let canonical = serde_json::to_string(&serde_json::to_value(config).expect("serializable")).expect("serializable");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        println!("{}", path.display());
        self.written.push(name.to_string());
        Ok(())
    }

    fn finish<T: Serialize>(
        mut self,
        command: &str,
        config: &T,
        dataset: &Path,
        seed: u64,
        started: Instant,
    ) -> Result<()> {
        self.written.push("manifest.json".into());
        let manifest = RunManifest {
            command: command.into(),
            config_hash: config_hash(config),
            dataset: dataset.display().to_string(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_secs: started.elapsed().as_secs_f64(),
            outputs: self.written.clone(),
        };
        let path = self.dir.join("manifest.json");
        write_atomic(&path, sorted_json(&manifest).as_bytes())?;
        println!("{}", path.display());
        Ok(())
    }
}

fn cmd_ingest(
    nverts: &Path,
    simplices: &Path,
    times: &Path,
    out: &Path,
    policy: Policy,
    snapshots: usize,
) -> Result<()> {
    let open = |p: &Path| File::open(p).map(BufReader::new).map_err(io_err(p));
    let parsed = parse_simplex_dataset(open(nverts)?, open(simplices)?, open(times)?)?;
    let policy = match policy {
        Policy::EqualCount => PartitionPolicy::EqualCount(snapshots),
        Policy::EqualDuration => PartitionPolicy::EqualDuration(snapshots),
    };
    let part = partition_into_snapshots(parsed.edges, parsed.id_map, policy)?;
    let g = part.graph;
    let mut buf = Vec::new();
    g.write_json(&mut buf)?;
    buf.push(b'\n');
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_atomic(out, &buf)?;
    println!(
        "nodes={}, edges={}, snapshots={}",
        g.node_count(),
        g.num_edges(),
        g.snapshots().len()
    );
    Ok(())
}

fn cmd_train(
    dataset: &Path,
    config: Option<&Path>,
    out: &Path,
    ablate: &[Ablation],
    runs: Option<usize>,
    parallel: bool,
) -> Result<()> {
    let started = Instant::now();
    let mut cfg = load_config(config, TrainConfig::default())?;
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    cfg.disable_pin |= ablate.contains(&Ablation::Pin);
    cfg.disable_bihe |= ablate.contains(&Ablation::Bihe);
    if let Some(r) = runs {
        cfg.runs = r;
    }
    cfg.validate()?;
    let graph = load_dataset(dataset)?;
    let outcome = live_update(&graph, &cfg, parallel)?;
    let report = &outcome.report;

    let mut outputs = Outputs::new(out)?;
    let mut json = report.to_json();
    json.push('\n');
    outputs.write("report.json", json.as_bytes())?;
    outputs.write("metrics.csv", report.to_csv().as_bytes())?;
    outputs.write("curves.csv", report.curves_csv().as_bytes())?;
    let state = &outcome.states[0];
    let mut ckpt = Vec::new();
    write_checkpoint(&mut ckpt, &state.store, &state.hidden.to_extras())
        .map_err(|e| CliError::Failed(e.to_string()))?;
    outputs.write("checkpoint.bin", &ckpt)?;
    outputs.finish("train", &cfg, dataset, cfg.seed, started)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("mean_auroc={}, mean_ap={}", fmt(report.mean_auroc), fmt(report.mean_ap));
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeConfig {
    mode: &'static str,
    sample_size: usize,
    window: Option<usize>,
    overlap: OverlapMode,
    seed: u64,
}

fn cmd_analyze(dataset: &Path, out: &Path, mode: AnalyzeMode, opts: SampleOptions, seed: u64) -> Result<()> {
    let started = Instant::now();
    let seed = seed_override()?.unwrap_or(seed);
    let graph = load_dataset(dataset)?;
    let input = |e: lincoln_core::analysis::AnalysisError| CliError::Input(e.to_string());
    let mut outputs = Outputs::new(out)?;
    if mode != AnalyzeMode::O2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = overlap_vs_time_gap(&graph, &opts, &mut rng).map_err(input)?;
        outputs.write("overlap_gap.csv", overlap_csv(&rows).as_bytes())?;
    }
    if mode != AnalyzeMode::O1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = reappearance_rate(&graph, &opts, &mut rng).map_err(input)?;
        outputs.write("reappearance.csv", reappearance_csv(&rows).as_bytes())?;
    }
    let cfg = AnalyzeConfig {
        mode: match mode {
            AnalyzeMode::O1 => "o1",
            AnalyzeMode::O2 => "o2",
            AnalyzeMode::Both => "both",
        },
        sample_size: opts.sample_size,
        window: opts.window,
        overlap: opts.mode,
        seed,
    };
    outputs.finish("analyze", &cfg, dataset, seed, started)
}

fn cmd_gradcheck(config: Option<&Path>, epsilon: f64, corrupt: bool) -> Result<()> {
    let mut cfg = load_config(config, toy_config())?;
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(CliError::Input(format!("epsilon must be in (0, 1e-3], got {epsilon}")));
    }
    let started = Instant::now();
    let report = toy_gradient_check(&cfg, epsilon, corrupt)?;
    let pass = report.max_rel_error <= GRAD_TOLERANCE;
    println!(
        "epsilon={epsilon:e} entries={} max_rel_error={:.3e} worst={}[{}] tolerance={GRAD_TOLERANCE:e} {} ({:.2}s)",
        report.entries_checked,
        report.max_rel_error,
        report.worst_param,
        report.worst_index,
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Failed("gradient check failed".into()))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            nverts,
            simplices,
            times,
            out,
            policy,
            snapshots,
        } => cmd_ingest(&nverts, &simplices, &times, &out, policy, snapshots),
        Command::Train {
            dataset,
            config,
            out,
            ablate,
            runs,
            parallel,
        } => cmd_train(&dataset, config.as_deref(), &out, &ablate, runs, parallel),
        Command::Analyze {
            dataset,
            out,
            mode,
            sample_size,
            window,
            overlap,
            seed,
        } => {
            let opts = SampleOptions {
                sample_size,
                window,
                mode: match overlap {
                    OverlapKind::Count => OverlapMode::Count,
                    OverlapKind::Jaccard => OverlapMode::Jaccard,
                },
            };
            cmd_analyze(&dataset, &out, mode, opts, seed)
        }
        Command::Gradcheck {
            config,
            epsilon,
            corrupt_gradient,
        } => cmd_gradcheck(config.as_deref(), epsilon, corrupt_gradient),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
