//! Line-oriented run configuration: `section.key = value`, `#` comments.

use std::collections::BTreeMap;
use std::str::FromStr;

use super::CliError;
use crate::digest::sha256_hex;

/// Every key a command may read. Anything else is rejected up front.
pub const KNOWN_KEYS: &[&str] = &[
    "run.seed",
    "run.out",
    "gen.task",
    "gen.days",
    "gen.txns_min",
    "gen.txns_max",
    "gen.mcc_vocab",
    "gen.type_vocab",
    "gen.currency_vocab",
    "gen.country_vocab",
    "gen.marginal_strength",
    "gen.motif_strength",
    "gen.noise_std",
    "gen.ar_coeff",
    "data.dataset",
    "data.vocab",
    "data.train_frac",
    "train.model",
    "train.loss",
    "train.margin",
    "train.n",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.lr_decay",
    "train.lr_step",
    "train.inference_samples",
    "train.ma_width",
    "train.eval_every",
    "model.size",
    "model.hidden",
    "model.rnn_layers",
    "model.conv_layers",
    "model.conv_channels",
    "model.conv_kernel",
    "model.conv_pool",
    "model.mcc_dim",
    "model.type_dim",
    "gbt.rounds",
    "gbt.depth",
    "gbt.shrinkage",
    "w2v.mcc_dim",
    "w2v.type_dim",
    "w2v.window",
    "w2v.negatives",
    "w2v.epochs",
    "w2v.lr",
    "eval.checkpoint",
    "eval.split",
    "eval.samples",
    "tsne.input",
    "tsne.perplexity",
    "tsne.iterations",
    "tsne.lr",
    "stability.runs",
    "stability.k",
    "stability.restarts",
    "stability.jobs",
    "stability.control_pairs",
    "report.runs",
];

pub const SEED_ENV: &str = "TXN_NOWCAST_SEED";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<(), CliError> {
    if KNOWN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(CliError::Config(format!("unknown config key `{key}`")))
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `section.key = value`", i + 1)))?;
            let key = key.trim();
            check_key(key).map_err(|e| CliError::Config(format!("line {}: {e}", i + 1)))?;
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_map(entries: BTreeMap<String, String>) -> Result<Self, CliError> {
        entries.keys().try_for_each(|k| check_key(k))?;
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
        self.insert(k.trim(), v.trim())
    }

    pub fn insert(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        check_key(key)?;
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key).ok_or_else(|| CliError::Config(format!("missing config key `{key}`")))
    }

    /// Typed value, or `default` when absent.
    pub fn value<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("`{key}` has invalid value `{v}`"))),
        }
    }

    pub fn required_value<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| CliError::Config(format!("`{key}` has invalid value `{v}`")))
    }

    /// Pins `run.seed`, falling back to the environment, so that the
    /// snapshot alone reproduces the run.
    pub fn resolve_seed(&mut self) -> Result<u64, CliError> {
        if self.get("run.seed").is_none() {
            if let Ok(v) = std::env::var(SEED_ENV) {
                self.insert("run.seed", v.trim())?;
            }
        }
        self.get("run.seed").ok_or_else(|| {
            CliError::Config(format!("missing config key `run.seed` (or set {SEED_ENV})"))
        })?;
        self.required_value("run.seed")
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn snapshot(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.snapshot().as_bytes())
    }
}

/// Expands one `--grid key=spec` argument. `spec` is either a comma list or
/// an inclusive numeric range `start..end:step`.
pub fn grid_values(arg: &str) -> Result<(String, Vec<String>), CliError> {
    let (key, spec) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("grid `{arg}` is not key=spec")))?;
    let key = key.trim().to_string();
    check_key(&key)?;
    let spec = spec.trim();
    let values = if let Some((range, step)) = spec.split_once(':') {
        let (lo, hi) = range
            .split_once("..")
            .ok_or_else(|| CliError::Config(format!("grid range `{spec}` is not start..end:step")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<i64>()
                .map_err(|_| CliError::Config(format!("grid range `{spec}` needs integers")))
        };
        let (lo, hi, step) = (parse(lo)?, parse(hi)?, parse(step)?);
        if step <= 0 || hi < lo {
            return Err(CliError::Config(format!("grid range `{spec}` is empty")));
        }
        (0..).map(|i| lo + i * step).take_while(|v| *v <= hi).map(|v| v.to_string()).collect()
    } else {
        spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect::<Vec<_>>()
    };
    if values.is_empty() {
        return Err(CliError::Config(format!("grid `{arg}` has no values")));
    }
    Ok((key, values))
}

/// Cartesian product of grid axes, first axis slowest.
pub fn grid_points(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for (key, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let c = Config::parse("# header\nrun.seed = 7\n\n  gen.days=14  # two weeks\n").unwrap();
        assert_eq!(c.get("run.seed"), Some("7"));
        assert_eq!(c.value::<usize>("gen.days", 0).unwrap(), 14);
        assert_eq!(c.snapshot(), "gen.days = 14\nrun.seed = 7\n");
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(matches!(Config::parse("gen.dayz = 3"), Err(CliError::Config(_))));
        assert!(matches!(Config::parse("run.seed = 1\nrun.seed = 2"), Err(CliError::Config(_))));
        assert!(matches!(Config::parse("no equals sign"), Err(CliError::Config(_))));
    }

    #[test]
    fn missing_key_is_named() {
        let err = Config::default().require("run.seed").unwrap_err();
        assert!(err.to_string().contains("run.seed"));
    }

    #[test]
    fn overrides_replace_values() {
        let mut c = Config::parse("train.n = 200").unwrap();
        c.set("train.n=500").unwrap();
        assert_eq!(c.get("train.n"), Some("500"));
        assert!(c.set("train.n").is_err());
    }

    #[test]
    fn grid_ranges_and_lists() {
        assert_eq!(grid_values("train.n=500..2000:500").unwrap().1, ["500", "1000", "1500", "2000"]);
        assert_eq!(grid_values("train.model=cnn,lstm").unwrap().1, ["cnn", "lstm"]);
        assert!(grid_values("train.n=5..1:1").is_err());
        let axes = vec![
            ("train.n".to_string(), vec!["1".to_string(), "2".to_string()]),
            ("train.lr".to_string(), vec!["a".to_string(), "b".to_string()]),
        ];
        let pts = grid_points(&axes);
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[1], vec![("train.n".into(), "1".into()), ("train.lr".into(), "b".into())]);
    }
}
