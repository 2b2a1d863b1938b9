//! Command-line surface: config loading, run manifests, grids and exit codes.
//!
//! Exit codes: 0 ok, 1 I/O, 2 config, 3 data or compatibility, 4 numeric.

pub mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use commands::Outputs;
pub use config::{grid_points, grid_values, Config, SEED_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "txn-nowcast", version, about = "Day-level nowcasting from sampled transaction windows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// Run configuration (`section.key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; falls back to `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted signals.
    Generate(Common),
    /// Export the handcrafted day-feature matrix.
    Featurize(Common),
    /// Train a sequence model or a baseline.
    Train {
        #[command(flatten)]
        common: Common,
        /// Sweep a key over `start..end:step` or `a,b,c`; repeatable.
        #[arg(long, value_name = "KEY=SPEC")]
        grid: Vec<String>,
        /// Grid points run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Score a saved checkpoint or baseline on a dataset split.
    Evaluate(Common),
    /// Write per-day embeddings from a saved model.
    Embed(Common),
    /// Project an embeddings file to 2-D.
    Tsne(Common),
    /// Repeat training and compare the runs' clusterings.
    Stability(Common),
    /// Collect metrics from finished runs into one table.
    Report(Common),
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub grid: Vec<String>,
    #[serde(default = "one")]
    pub jobs: usize,
    pub artifacts: Vec<Artifact>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub version: String,
    /// Set when the command failed after writing some artifacts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn one() -> usize {
    1
}

pub const MANIFEST: &str = "manifest.json";

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Everything a command needs, already resolved.
struct Invocation {
    command: String,
    config: Config,
    out: PathBuf,
    grid: Vec<String>,
    jobs: usize,
}

fn needs_seed(command: &str) -> bool {
    !matches!(command, "featurize" | "report")
}

fn build_config(common: &Common) -> Result<(Config, PathBuf), CliError> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    for s in &common.set {
        cfg.set(s)?;
    }
    // The output location is not part of what a run computes.
    let mut entries = cfg.entries().clone();
    let from_cfg = entries.remove("run.out").map(PathBuf::from);
    let out = common
        .out
        .clone()
        .or(from_cfg)
        .ok_or_else(|| CliError::Config("missing output directory (`--out` or `run.out`)".into()))?;
    Ok((Config::from_map(entries)?, out))
}

fn invocation(cli: Cli) -> Result<Invocation, CliError> {
    let (name, common, grid, jobs) = match cli.command {
        Command::Generate(c) => ("generate", c, Vec::new(), 1),
        Command::Featurize(c) => ("featurize", c, Vec::new(), 1),
        Command::Train { common, grid, jobs } => ("train", common, grid, jobs),
        Command::Evaluate(c) => ("evaluate", c, Vec::new(), 1),
        Command::Embed(c) => ("embed", c, Vec::new(), 1),
        Command::Tsne(c) => ("tsne", c, Vec::new(), 1),
        Command::Stability(c) => ("stability", c, Vec::new(), 1),
        Command::Report(c) => ("report", c, Vec::new(), 1),
        Command::Replay { manifest, out } => {
            let m = RunManifest::load(&manifest)?;
            return Ok(Invocation {
                command: m.command,
                config: Config::from_map(m.config)?,
                out,
                grid: m.grid,
                jobs: m.jobs,
            });
        }
    };
    let (config, out) = build_config(&common)?;
    Ok(Invocation { command: name.to_string(), config, out, grid, jobs })
}

fn dispatch(command: &str, cfg: &Config, seed: Option<u64>, out: &mut Outputs) -> Result<(), CliError> {
    let seed = || seed.ok_or_else(|| CliError::Config("missing config key `run.seed`".into()));
    match command {
        "generate" => commands::generate(cfg, seed()?, out),
        "featurize" => commands::featurize(cfg, out),
        "train" => commands::train(cfg, seed()?, out),
        "evaluate" => commands::evaluate(cfg, seed()?, out),
        "embed" => commands::embed(cfg, seed()?, out),
        "tsne" => commands::tsne(cfg, seed()?, out),
        "stability" => commands::stability(cfg, seed()?, out),
        "report" => commands::report(cfg, out),
        other => Err(CliError::Config(format!("unknown command `{other}`"))),
    }
}

fn grid_dir(point: &[(String, String)]) -> String {
    point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
}

/// Runs every grid point (or the single config) and returns the artifacts
/// written plus the first failure, if any.
fn execute(inv: &Invocation, seed: Option<u64>) -> (Vec<PathBuf>, Option<CliError>) {
    if inv.grid.is_empty() {
        let mut out = match Outputs::new(inv.out.clone()) {
            Ok(o) => o,
            Err(e) => return (Vec::new(), Some(e)),
        };
        let result = dispatch(&inv.command, &inv.config, seed, &mut out);
        return (out.files, result.err());
    }
    let axes = match inv.grid.iter().map(|g| grid_values(g)).collect::<Result<Vec<_>, _>>() {
        Ok(a) => a,
        Err(e) => return (Vec::new(), Some(e)),
    };
    let points = grid_points(&axes);
    let run_point = |point: &Vec<(String, String)>| -> (Vec<PathBuf>, Option<CliError>) {
        let sub = grid_dir(point);
        let mut cfg = inv.config.clone();
        for (k, v) in point {
            if let Err(e) = cfg.insert(k, v) {
                return (Vec::new(), Some(e));
            }
        }
        let mut out = match Outputs::new(inv.out.join(&sub)) {
            Ok(o) => o,
            Err(e) => return (Vec::new(), Some(e)),
        };
        let result = dispatch(&inv.command, &cfg, seed, &mut out);
        if let Err(e) = &result {
            log::error!("grid point {sub}: {e}");
        }
        (out.files.into_iter().map(|f| Path::new(&sub).join(f)).collect(), result.err())
    };
    let mut files = Vec::new();
    let mut first_err = None;
    for chunk in points.chunks(inv.jobs.max(1)) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|p| s.spawn(|| run_point(p))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| (Vec::new(), Some(CliError::Numeric("grid worker panicked".into())))))
                .collect()
        });
        for (f, e) in results {
            files.extend(f);
            if first_err.is_none() {
                first_err = e;
            }
        }
    }
    (files, first_err)
}

fn artifact_list(root: &Path, files: &[PathBuf]) -> Result<Vec<Artifact>, CliError> {
    files
        .iter()
        .map(|f| {
            let bytes = fs::read(root.join(f))?;
            Ok(Artifact { path: f.to_string_lossy().replace('\\', "/"), sha256: sha256_hex(&bytes) })
        })
        .collect()
}

fn run_invocation(mut inv: Invocation) -> Result<(), CliError> {
    if inv.jobs == 0 {
        return Err(CliError::Config("`--jobs` must be at least 1".into()));
    }
    let seed = if needs_seed(&inv.command) { Some(inv.config.resolve_seed()?) } else { None };
    let started = now();
    let (files, err) = execute(&inv, seed);
    fs::create_dir_all(&inv.out)?;
    let manifest = RunManifest {
        command: inv.command.clone(),
        config: inv.config.entries().clone(),
        seed,
        grid: inv.grid.clone(),
        jobs: inv.jobs,
        artifacts: artifact_list(&inv.out, &files)?,
        started_unix: started,
        finished_unix: now(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        error: err.as_ref().map(ToString::to_string),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    fs::write(inv.out.join(MANIFEST), text)?;
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match invocation(cli).and_then(run_invocation) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_map() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Data(String::new()).exit_code(), 3);
        assert_eq!(CliError::Numeric(String::new()).exit_code(), 4);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["txn-nowcast", "bogus"]), 2);
        assert_eq!(run(["txn-nowcast", "--help"]), 0);
    }

    #[test]
    fn grid_dirs_name_every_axis() {
        let p = vec![("train.n".to_string(), "500".to_string()), ("train.lr".to_string(), "0.01".to_string())];
        assert_eq!(grid_dir(&p), "train.n=500,train.lr=0.01");
    }

    #[test]
    fn output_dir_stays_out_of_the_snapshot() {
        let common = Common { set: vec!["run.out=/tmp/x".into(), "run.seed=3".into()], ..Common::default() };
        let (cfg, out) = build_config(&common).unwrap();
        assert_eq!(out, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.snapshot(), "run.seed = 3\n");
    }
}
