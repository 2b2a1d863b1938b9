//! Day-level baselines: boosted trees over handcrafted features, and boosted
//! trees over SIF-weighted skip-gram day vectors.
//!
//! Both see every transaction of a day at once; neither looks at order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Field, Label, TaskKind, NUM_WEEKDAYS};
use crate::embed::{self, EmbedError, EmbeddingTable, SifConfig, SkipGramParams, TokenFrequency, SIF_A_GRID};
use crate::features;
use crate::gbt::{self, BoostParams, GbtError, TreeEnsemble};
use crate::train::{self, MetricError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("incompatible inputs: {0}")]
    Compat(String),
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Per-day validation output of a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayPrediction {
    pub day_index: i64,
    /// Predicted class index, or the predicted rate.
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineReport {
    pub task: TaskKind,
    /// Accuracy for classification, R² for regression.
    pub metric: f64,
    pub model: TreeEnsemble,
    pub predictions: Vec<DayPrediction>,
}

fn check_pair(train_ds: &Dataset, val_ds: &Dataset) -> Result<(), BaselineError> {
    if train_ds.task != val_ds.task {
        return Err(BaselineError::Compat(format!("tasks {} and {}", train_ds.task, val_ds.task)));
    }
    if train_ds.vocab_sizes != val_ds.vocab_sizes {
        return Err(BaselineError::Compat("vocabulary sizes".into()));
    }
    Ok(())
}

fn class_labels(ds: &Dataset) -> Vec<usize> {
    ds.days.iter().map(|d| d.label.class().unwrap_or(0)).collect()
}

fn rate_labels(ds: &Dataset) -> Vec<f64> {
    ds.days.iter().map(|d| d.label.rate().unwrap_or(f64::NAN)).collect()
}

/// Scores a fitted ensemble on `x_val` with the task's metric.
pub fn score(model: &TreeEnsemble, x_val: &[Vec<f64>], val_ds: &Dataset) -> Result<(f64, Vec<DayPrediction>), BaselineError> {
    let (values, metric) = match val_ds.task {
        TaskKind::Classification => {
            let preds = x_val.iter().map(|x| model.predict_class(x)).collect::<Result<Vec<_>, _>>()?;
            let acc = train::accuracy(&preds, &class_labels(val_ds))?;
            (preds.into_iter().map(|c| c as f64).collect::<Vec<_>>(), acc)
        }
        TaskKind::Regression => {
            let preds = x_val.iter().map(|x| model.predict_value(x)).collect::<Result<Vec<_>, _>>()?;
            let r2 = train::r2(&preds, &rate_labels(val_ds))?;
            (preds, r2)
        }
    };
    let predictions = val_ds
        .days
        .iter()
        .zip(values)
        .map(|(d, value)| DayPrediction { day_index: d.day_index, value })
        .collect();
    Ok((metric, predictions))
}

/// Checks that a saved ensemble fits the dataset's task and feature width.
pub fn check_model(model: &TreeEnsemble, ds: &Dataset, n_features: usize) -> Result<(), BaselineError> {
    let outputs = match ds.task {
        TaskKind::Classification => NUM_WEEKDAYS,
        TaskKind::Regression => 1,
    };
    if model.n_outputs() != outputs {
        return Err(BaselineError::Compat(format!("model has {} outputs, {} task needs {outputs}", model.n_outputs(), ds.task)));
    }
    if model.n_features != n_features {
        return Err(BaselineError::Compat(format!("model expects {} features, dataset yields {n_features}", model.n_features)));
    }
    Ok(())
}

fn fit(train_ds: &Dataset, x_train: &[Vec<f64>], params: &BoostParams) -> Result<TreeEnsemble, BaselineError> {
    Ok(match train_ds.task {
        TaskKind::Classification => gbt::fit_multiclass(x_train, &class_labels(train_ds), NUM_WEEKDAYS, params)?,
        TaskKind::Regression => gbt::fit_regression(x_train, &rate_labels(train_ds), params)?,
    })
}

fn fit_and_score(
    train_ds: &Dataset,
    x_train: &[Vec<f64>],
    val_ds: &Dataset,
    x_val: &[Vec<f64>],
    params: &BoostParams,
) -> Result<BaselineReport, BaselineError> {
    let model = fit(train_ds, x_train, params)?;
    let (metric, predictions) = score(&model, x_val, val_ds)?;
    Ok(BaselineReport { task: train_ds.task, metric, model, predictions })
}

/// Boosted trees over [`features::day_features`].
pub fn feature_baseline(train_ds: &Dataset, val_ds: &Dataset, params: &BoostParams) -> Result<BaselineReport, BaselineError> {
    check_pair(train_ds, val_ds)?;
    let x_train = features::dataset_features(train_ds);
    let x_val = features::dataset_features(val_ds);
    fit_and_score(train_ds, &x_train, val_ds, &x_val, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word2VecConfig {
    pub mcc: SkipGramParams,
    pub txn_type: SkipGramParams,
    pub a_grid: Vec<f64>,
    pub boost: BoostParams,
}

impl Word2VecConfig {
    /// 77-dim mcc and 25-dim type vectors, 75 rounds of depth-4 trees.
    pub fn new(seed: u64) -> Self {
        Self {
            mcc: SkipGramParams::new(77, seed),
            txn_type: SkipGramParams { seed: seed.wrapping_add(1), ..SkipGramParams::new(25, seed) },
            a_grid: SIF_A_GRID.to_vec(),
            boost: BoostParams::for_embeddings(),
        }
    }
}

/// Token tables learned on the training split.
#[derive(Debug, Clone)]
pub struct Word2VecTables {
    pub tables: Vec<(EmbeddingTable, TokenFrequency)>,
}

const EMBEDDED: [Field; 2] = [Field::Mcc, Field::TxnType];

fn corpus(ds: &Dataset, field: Field) -> Vec<Vec<u32>> {
    ds.days
        .iter()
        .map(|d| d.transactions.iter().filter_map(|t| field.get(t)).collect())
        .collect()
}

pub fn train_tables(train_ds: &Dataset, cfg: &Word2VecConfig) -> Result<Word2VecTables, BaselineError> {
    let mut tables = Vec::with_capacity(EMBEDDED.len());
    for field in EMBEDDED {
        let vocab = train_ds.vocab_sizes.get(field).unwrap_or(0);
        let params = if field == Field::Mcc { &cfg.mcc } else { &cfg.txn_type };
        let docs = corpus(train_ds, field);
        let outcome = embed::train_skipgram(&docs, vocab, field, params)?;
        let freq = embed::token_frequency(&docs, vocab)?;
        tables.push((outcome.table, freq));
    }
    Ok(Word2VecTables { tables })
}

/// Raw SIF vectors (before component removal), one row per day.
pub fn sif_rows(ds: &Dataset, tables: &Word2VecTables, a: f64) -> Result<Vec<Vec<f64>>, BaselineError> {
    let cfg = SifConfig::new(a)?;
    let corpora: Vec<Vec<Vec<u32>>> = EMBEDDED.iter().map(|&f| corpus(ds, f)).collect();
    Ok((0..ds.len())
        .map(|i| {
            let fields: Vec<(&[u32], &EmbeddingTable, &TokenFrequency)> = corpora
                .iter()
                .zip(&tables.tables)
                .map(|(c, (t, p))| (c[i].as_slice(), t, p))
                .collect();
            embed::sif_day_embedding(&fields, cfg)
        })
        .collect())
}

/// Everything needed to turn a day into the boosted model's input.
#[derive(Debug, Clone)]
pub struct Word2VecModel {
    pub tables: Word2VecTables,
    pub a: f64,
    /// Direction projected out of every SIF vector.
    pub direction: Vec<f64>,
    pub model: TreeEnsemble,
}

#[derive(Serialize, Deserialize)]
struct SifManifest {
    a: f64,
    direction: Vec<f64>,
    frequencies: Vec<Vec<f64>>,
}

impl Word2VecModel {
    pub fn features(&self, ds: &Dataset) -> Result<Vec<Vec<f64>>, BaselineError> {
        Ok(embed::project_out(&sif_rows(ds, &self.tables, self.a)?, &self.direction))
    }

    /// `tables/<field>.{json,bin}`, `sif.json` and the ensemble under `model/`.
    pub fn save(&self, dir: &Path) -> Result<(), BaselineError> {
        for (table, _) in &self.tables.tables {
            table.save(&dir.join("tables"), table.field.name())?;
        }
        let sif = SifManifest {
            a: self.a,
            direction: self.direction.clone(),
            frequencies: self.tables.tables.iter().map(|(_, f)| f.p.clone()).collect(),
        };
        let json = serde_json::to_string_pretty(&sif).map_err(|e| BaselineError::Compat(e.to_string()))?;
        std::fs::write(dir.join("sif.json"), json + "\n").map_err(EmbedError::Io)?;
        self.model.save(&dir.join("model"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, BaselineError> {
        let text = std::fs::read_to_string(dir.join("sif.json")).map_err(EmbedError::Io)?;
        let sif: SifManifest = serde_json::from_str(&text).map_err(|e| EmbedError::Corrupt(e.to_string()))?;
        if sif.frequencies.len() != EMBEDDED.len() {
            return Err(EmbedError::Corrupt("sif.json must list one frequency vector per field".into()).into());
        }
        let mut tables = Vec::with_capacity(EMBEDDED.len());
        for (field, p) in EMBEDDED.iter().zip(sif.frequencies) {
            let table = EmbeddingTable::load(&dir.join("tables"), field.name())?;
            if table.vocab_size != p.len() {
                return Err(EmbedError::Corrupt(format!("{} frequencies do not match the table", field.name())).into());
            }
            tables.push((table, TokenFrequency { p }));
        }
        Ok(Self { tables: Word2VecTables { tables }, a: sif.a, direction: sif.direction, model: TreeEnsemble::load(&dir.join("model"))? })
    }

    pub fn n_features(&self) -> usize {
        self.tables.tables.iter().map(|(t, _)| t.dim).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Word2VecReport {
    /// Validation metric for every `a` tried, in grid order.
    pub grid: Vec<(f64, f64)>,
    pub best: BaselineReport,
    pub model: Word2VecModel,
}

/// Skip-gram tables on the training split, then for each `a` in the grid:
/// SIF day vectors, the training split's first singular direction removed
/// from both splits, and boosted trees. The `a` with the best validation
/// metric wins; ties keep the earlier grid entry.
pub fn word2vec_baseline(train_ds: &Dataset, val_ds: &Dataset, cfg: &Word2VecConfig) -> Result<Word2VecReport, BaselineError> {
    check_pair(train_ds, val_ds)?;
    if cfg.a_grid.is_empty() {
        return Err(BaselineError::Embed(EmbedError::Params("empty SIF grid".into())));
    }
    let tables = train_tables(train_ds, cfg)?;
    let mut grid = Vec::with_capacity(cfg.a_grid.len());
    let mut best: Option<(f64, Vec<f64>, BaselineReport)> = None;
    for &a in &cfg.a_grid {
        let (x_train, u) = embed::remove_first_component(&sif_rows(train_ds, &tables, a)?)?;
        let x_val = embed::project_out(&sif_rows(val_ds, &tables, a)?, &u);
        let report = fit_and_score(train_ds, &x_train, val_ds, &x_val, &cfg.boost)?;
        grid.push((a, report.metric));
        if best.as_ref().is_none_or(|(_, _, b)| report.metric > b.metric) {
            best = Some((a, u, report));
        }
    }
    let (a, direction, best) = best.expect("grid is non-empty");
    let model = Word2VecModel { tables, a, direction, model: best.model.clone() };
    Ok(Word2VecReport { grid, best, model })
}

/// Label of a day as the value a baseline predicts.
pub fn label_value(label: &Label) -> f64 {
    match label {
        Label::Class(c) => *c as f64,
        Label::Rate(r) => *r,
    }
}

pub fn write_predictions<W: std::io::Write>(
    preds: &[DayPrediction],
    labels: &Dataset,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "day_index,prediction,label")?;
    for (p, d) in preds.iter().zip(&labels.days) {
        writeln!(w, "{},{},{}", p.day_index, p.value, label_value(&d.label))?;
    }
    Ok(())
}
