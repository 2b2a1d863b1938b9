//! Embedding stability: independent training runs, k-means on each run's
//! validation-day embeddings, and AMI between every pair of runs.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::partition::{ami, Partition};
use super::AnalysisError;
use crate::data::Dataset;
use crate::rng::{self, tags};
use crate::train::{self, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub runs: usize,
    /// Clusters per run.
    pub k: usize,
    pub restarts: usize,
    /// Runs trained concurrently.
    pub jobs: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { runs: 10, k: 7, restarts: 10, jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAmi {
    pub a: usize,
    pub b: usize,
    pub ami: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub runs: usize,
    /// Runs whose training or clustering failed, with the error text.
    pub failures: Vec<(usize, String)>,
    /// Cluster assignment per run; `None` for failed runs.
    pub partitions: Vec<Option<Partition>>,
    /// One entry per pair of successful runs, `a < b`.
    pub pairs: Vec<PairAmi>,
    /// Mean over `pairs`; `None` when fewer than two runs succeeded.
    pub mean_ami: Option<f64>,
}

impl StabilityReport {
    /// Symmetric `runs x runs` matrix with 1 on the diagonal of successful
    /// runs and NaN wherever a run failed.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![f64::NAN; self.runs]; self.runs];
        for (i, p) in self.partitions.iter().enumerate() {
            if p.is_some() {
                m[i][i] = 1.0;
            }
        }
        for p in &self.pairs {
            m[p.a][p.b] = p.ami;
            m[p.b][p.a] = p.ami;
        }
        m
    }

    pub fn write_pairs_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "run_a,run_b,ami")?;
        for p in &self.pairs {
            writeln!(w, "{},{},{}", p.a, p.b, p.ami)?;
        }
        Ok(())
    }

    pub fn write_matrix_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.runs).map(|r| format!("run{r}")).collect();
        writeln!(w, "run,{}", header.join(","))?;
        for (i, row) in self.matrix().iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{i},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Training seed of run `r`.
pub fn run_seed(base: u64, r: usize) -> u64 {
    rng::derive_key(base, &[tags::STABILITY, r as u64])
}

/// Clusters each run's embeddings and scores all pairs. Failed runs are
/// carried through as failures rather than aborting the protocol.
pub fn stability_from_embeddings(
    runs: Vec<Result<Vec<Vec<f64>>, String>>,
    k: usize,
    restarts: usize,
    seed: u64,
) -> StabilityReport {
    let n_runs = runs.len();
    let mut failures = Vec::new();
    let mut partitions = Vec::with_capacity(n_runs);
    for (r, emb) in runs.into_iter().enumerate() {
        let clustered = emb.and_then(|x| kmeans(&x, k, restarts, run_seed(seed, r)).map_err(|e| e.to_string()));
        match clustered {
            Ok(res) => partitions.push(Some(res.partition)),
            Err(e) => {
                log::warn!("stability run {r} failed: {e}");
                failures.push((r, e));
                partitions.push(None);
            }
        }
    }
    let mut pairs = Vec::new();
    for a in 0..n_runs {
        for b in a + 1..n_runs {
            if let (Some(u), Some(v)) = (&partitions[a], &partitions[b]) {
                match ami(u, v) {
                    Ok(s) => pairs.push(PairAmi { a, b, ami: s }),
                    Err(e) => failures.push((b, format!("AMI against run {a}: {e}"))),
                }
            }
        }
    }
    let mean_ami = (!pairs.is_empty()).then(|| pairs.iter().map(|p| p.ami).sum::<f64>() / pairs.len() as f64);
    StabilityReport { runs: n_runs, failures, partitions, pairs, mean_ami }
}

/// Validation-day embeddings of one freshly seeded training run.
fn run_embeddings(train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<Vec<f64>>, String> {
    let out = train::train(train_ds, val_ds, cfg).map_err(|e| e.to_string())?;
    let model = out.best.model;
    val_ds
        .days
        .iter()
        .map(|d| {
            train::mean_embedding(&model, d, cfg.window, cfg.inference_samples, &mut train::eval_rng(cfg.seed, d.day_index))
                .map_err(|e| e.to_string())
        })
        .collect()
}

/// Trains `runs` models, each from `run_seed(cfg.seed, r)`, at most
/// `jobs` at a time, then compares their clusterings.
pub fn stability_protocol(
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    scfg: &StabilityConfig,
) -> Result<StabilityReport, AnalysisError> {
    if scfg.runs < 2 {
        return Err(AnalysisError::Params(format!("stability needs at least 2 runs, got {}", scfg.runs)));
    }
    if scfg.jobs == 0 || scfg.k == 0 || scfg.restarts == 0 {
        return Err(AnalysisError::Params("jobs, k and restarts must be positive".into()));
    }
    let mut results: Vec<Result<Vec<Vec<f64>>, String>> = Vec::with_capacity(scfg.runs);
    let seeds: Vec<usize> = (0..scfg.runs).collect();
    for chunk in seeds.chunks(scfg.jobs) {
        let batch: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&r| {
                    let run_cfg = TrainConfig { seed: run_seed(cfg.seed, r), ..cfg.clone() };
                    s.spawn(move || run_embeddings(train_ds, val_ds, &run_cfg))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err("training thread panicked".into())))
                .collect()
        });
        results.extend(batch);
    }
    Ok(stability_from_embeddings(results, scfg.k, scfg.restarts, cfg.seed))
}

/// AMI between `pairs` pairs of independent uniform `k`-way partitions of
/// `n` elements.
pub fn random_partition_control(n: usize, k: usize, pairs: usize, seed: u64) -> Result<Vec<f64>, AnalysisError> {
    let mut r = rng::substream(seed, &[tags::STABILITY]);
    let draw = |r: &mut rng::Rng| Partition::new((0..n).map(|_| r.random_range(0..k)).collect(), k);
    (0..pairs)
        .map(|_| {
            let u = draw(&mut r)?;
            let v = draw(&mut r)?;
            ami(&u, &v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clustered(offset: f64) -> Vec<Vec<f64>> {
        (0..30).map(|i| vec![(i % 3) as f64 * 10.0 + offset * (i as f64 / 30.0)]).collect()
    }

    #[test]
    fn ten_runs_give_45_pairs() {
        let runs = (0..10).map(|r| Ok(clustered(r as f64 * 0.1))).collect();
        let rep = stability_from_embeddings(runs, 3, 3, 1);
        assert_eq!(rep.pairs.len(), 45);
        assert!((rep.mean_ami.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_runs_give_one_pair() {
        let runs = vec![Ok(clustered(0.0)), Ok(clustered(0.5))];
        let rep = stability_from_embeddings(runs, 3, 2, 1);
        assert_eq!(rep.pairs.len(), 1);
        assert_eq!(rep.mean_ami, Some(rep.pairs[0].ami));
    }

    #[test]
    fn failures_are_reported_not_fatal() {
        let runs = vec![Ok(clustered(0.0)), Err("boom".to_string()), Ok(clustered(0.2))];
        let rep = stability_from_embeddings(runs, 3, 2, 1);
        assert_eq!(rep.failures, vec![(1, "boom".to_string())]);
        assert_eq!(rep.pairs.len(), 1);
        let m = rep.matrix();
        assert!(m[1][1].is_nan() && m[0][1].is_nan());
        assert_eq!(m[0][2], m[2][0]);
    }

    #[test]
    fn random_control_is_near_zero() {
        let scores = random_partition_control(100, 7, 100, 3).unwrap();
        let mean = scores.iter().sum::<f64>() / 100.0;
        assert!(mean.abs() <= 0.05);
    }

    #[test]
    fn protocol_needs_two_runs() {
        use crate::nn::{Architecture, ModelConfig};
        use crate::synth::{generate, GenConfig};
        let ds = generate(&GenConfig { n_days: 14, txns_per_day: (40, 50), ..GenConfig::dayofweek(1) }).unwrap().dataset;
        let (tr, va) = crate::data::chronological_split(&ds, 0.5).unwrap();
        let cfg = TrainConfig::new(
            ModelConfig::compact(Architecture::Cnn, tr.vocab_sizes, 7),
            crate::train::LossKind::CrossEntropy,
            1,
        );
        let one = StabilityConfig { runs: 1, ..StabilityConfig::default() };
        assert!(stability_protocol(&tr, &va, &cfg, &one).is_err());
        let two = StabilityConfig { runs: 2, k: 3, restarts: 2, jobs: 2 };
        let small = TrainConfig { window: 20, epochs: 1, inference_samples: 2, ..cfg };
        let rep = stability_protocol(&tr, &va, &small, &two).unwrap();
        assert_eq!(rep.pairs.len(), 1);
        assert!(rep.failures.is_empty());
    }
}
