//! Training loop, validation-time inference protocols and metrics.
//!
//! Every epoch draws one fresh window per training day, shuffles the windows
//! into batches and takes one Adam step per batch. Validation runs on a fixed
//! cadence and the best-scoring parameters are returned.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, DayRecord, Label, TaskKind};
use crate::nn::{loss, Adam, Checkpoint, Graph, ModelConfig, NnError, Schedule, SequenceModel};
use crate::rng::{self, tags};
use crate::sampler::{self, SampleError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("incompatible configuration: {0}")]
    Compat(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite loss at epoch {epoch}; keeping the last good checkpoint")]
    NonFinite { epoch: usize, last_good: Box<Checkpoint> },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    Length(usize, usize),
    #[error("need at least {0} points")]
    TooFew(usize),
    #[error("labels have zero variance")]
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    CrossEntropy,
    /// Triplet loss on embeddings; the head is fit with cross-entropy on
    /// detached embeddings so that the model still predicts classes.
    Triplet { margin: f64 },
    Mse,
}

impl LossKind {
    pub fn task(self) -> TaskKind {
        match self {
            LossKind::CrossEntropy | LossKind::Triplet { .. } => TaskKind::Classification,
            LossKind::Mse => TaskKind::Regression,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Window length N.
    pub window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossKind,
    pub schedule: Schedule,
    /// Inference windows per validation day.
    pub inference_samples: usize,
    /// Trailing moving-average width for regression.
    pub ma_width: usize,
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, loss: LossKind, seed: u64) -> Self {
        let regression = loss == LossKind::Mse;
        Self {
            window: 200,
            epochs: 50,
            batch_size: 10,
            seed,
            model,
            loss,
            schedule: Schedule::new(0.01),
            inference_samples: if regression { 1 } else { 30 },
            ma_width: 7,
            eval_every: 5,
        }
    }

    pub fn check(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.window == 0 {
            return bad("window length must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.inference_samples == 0 {
            return bad("inference samples must be at least 1");
        }
        if self.ma_width == 0 {
            return bad("moving-average width must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("evaluation cadence must be at least 1");
        }
        if !(self.schedule.lr0 > 0.0 && self.schedule.lr0.is_finite()) {
            return bad("learning rate must be positive");
        }
        self.model.check()?;
        if self.window < self.model.min_len() {
            return Err(TrainError::Config(format!(
                "window {} shorter than the model minimum {}",
                self.window,
                self.model.min_len()
            )));
        }
        Ok(())
    }
}

/// Model plus the affine map from head output to label units.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: SequenceModel,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Trained {
    pub fn from_checkpoint(c: &Checkpoint) -> Self {
        let get = |k: &str, d: f64| c.extra.get(k).and_then(|v| v.as_f64()).unwrap_or(d);
        Self { model: c.model.clone(), target_mean: get("target_mean", 0.0), target_std: get("target_std", 1.0) }
    }

    pub fn rate(&self, head: &[f64]) -> f64 {
        self.target_mean + self.target_std * head[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunHistory {
    pub rows: Vec<HistoryRow>,
}

impl RunHistory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.val_metric).fold(None, |b, v| Some(b.map_or(v, |b: f64| b.max(v))))
    }

    /// `epoch,train_loss,val_metric,lr`; unevaluated epochs leave the metric
    /// empty. Wall-clock seconds stay out so reruns match byte for byte.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_metric,lr")?;
        for r in &self.rows {
            let m = r.val_metric.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", r.epoch, r.train_loss, m, r.lr)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: RunHistory,
    /// Day indices whose windows produced gradients.
    pub trained_days: BTreeSet<i64>,
}

impl TrainOutcome {
    pub fn trained(&self) -> Trained {
        Trained::from_checkpoint(&self.best)
    }
}

fn check_compat(ds: &Dataset, cfg: &TrainConfig) -> Result<(), TrainError> {
    if ds.task != cfg.loss.task() {
        return Err(TrainError::Compat(format!("dataset task {:?} does not match loss {:?}", ds.task, cfg.loss)));
    }
    let want = if ds.task == TaskKind::Classification { crate::data::NUM_WEEKDAYS } else { 1 };
    if cfg.model.n_outputs != want {
        return Err(TrainError::Compat(format!("model has {} outputs, task needs {want}", cfg.model.n_outputs)));
    }
    if cfg.model.vocab != ds.vocab_sizes {
        return Err(TrainError::Compat("model vocabulary sizes differ from the dataset's".into()));
    }
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, if var > 0.0 { var.sqrt() } else { 1.0 })
}

/// Runs training and returns the best-validation checkpoint.
pub fn train(train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.check()?;
    check_compat(train_ds, cfg)?;
    check_compat(val_ds, cfg)?;
    let (target_mean, target_std) = match train_ds.task {
        TaskKind::Regression => {
            let y: Vec<f64> = train_ds.days.iter().filter_map(|d| d.label.rate()).collect();
            mean_std(&y)
        }
        TaskKind::Classification => (0.0, 1.0),
    };
    let mut model = SequenceModel::init(cfg.model.clone(), cfg.seed)?;
    let mut opt = Adam::new(&model.params, cfg.schedule);
    let snapshot = |model: &SequenceModel, epoch: usize, steps: u64| Checkpoint {
        model: model.clone(),
        epoch,
        schedule: cfg.schedule,
        optimizer_steps: steps,
        extra: serde_json::json!({
            "task": train_ds.task,
            "window": cfg.window,
            "target_mean": target_mean,
            "target_std": target_std,
        }),
    };
    let mut best = snapshot(&model, 0, 0);
    let mut best_metric: Option<f64> = None;
    let mut history = RunHistory::default();
    let mut trained_days = BTreeSet::new();
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        let windows = sampler::sample_epoch(train_ds, cfg.window, cfg.seed, epoch as u64)?;
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng::substream(cfg.seed, &[tags::EPOCH_SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let mut terms = Vec::with_capacity(batch.len());
            let mut embs = Vec::with_capacity(batch.len());
            let mut classes = Vec::with_capacity(batch.len());
            for &i in batch {
                let w = &windows[i];
                let day = &train_ds.days[i];
                trained_days.insert(w.day_index);
                let x = model.embed_and_concat(&mut g, &bound, &w.txns)?;
                let emb = model.encode(&mut g, &bound, x)?;
                match (cfg.loss, day.label) {
                    (LossKind::CrossEntropy, Label::Class(c)) => {
                        let out = model.head(&mut g, &bound, emb);
                        terms.push(loss::cross_entropy(&mut g, out, c as usize));
                    }
                    (LossKind::Triplet { .. }, Label::Class(c)) => {
                        let frozen = g.detach(emb);
                        let out = model.head(&mut g, &bound, frozen);
                        terms.push(loss::cross_entropy(&mut g, out, c as usize));
                        embs.push(emb);
                        classes.push(c as usize);
                    }
                    (LossKind::Mse, Label::Rate(r)) => {
                        let out = model.head(&mut g, &bound, emb);
                        terms.push(loss::mse(&mut g, out, (r - target_mean) / target_std));
                    }
                    _ => return Err(TrainError::Compat("label kind does not match the loss".into())),
                }
            }
            let stacked = g.stack_rows(&terms);
            let total = g.sum(stacked);
            let mut objective = g.scale(total, 1.0 / terms.len() as f64);
            if let LossKind::Triplet { margin } = cfg.loss {
                if let Some(t) = loss::batch_triplet(&mut g, &embs, &classes, margin) {
                    objective = g.add(objective, t);
                }
            }
            let value = g.value(objective).item();
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, last_good: Box::new(best) });
            }
            let grads = g.backward(objective);
            let grads: Vec<Vec<f64>> = bound
                .vars
                .iter()
                .zip(&model.params.params)
                .map(|(&v, p)| grads.get_or_zeros(v, p.value.len()))
                .collect();
            match opt.step(&mut model.params, &grads, epoch) {
                Ok(()) => {}
                Err(NnError::NonFinite(_)) => {
                    return Err(TrainError::NonFinite { epoch, last_good: Box::new(best) })
                }
                Err(e) => return Err(e.into()),
            }
            model.clip_recurrent(cfg.window);
            loss_sum += value;
            n_batches += 1;
        }
        let train_loss = loss_sum / n_batches.max(1) as f64;
        let evaluate = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let val_metric = if evaluate {
            let trained = Trained { model: model.clone(), target_mean, target_std };
            let m = validation_metric(&trained, val_ds, cfg)?;
            if best_metric.is_none_or(|b| m > b) {
                best_metric = Some(m);
                best = snapshot(&model, epoch + 1, opt.step);
            }
            Some(m)
        } else {
            None
        };
        history.rows.push(HistoryRow {
            epoch: epoch + 1,
            train_loss,
            val_metric,
            lr: cfg.schedule.lr(epoch),
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!("epoch {} loss {train_loss:.5} val {val_metric:?} at {:.1}s", epoch + 1, started.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome { best, history, trained_days })
}

/// Accuracy (classification) or smoothed R² (regression) on `val`.
pub fn validation_metric(model: &Trained, val: &Dataset, cfg: &TrainConfig) -> Result<f64, TrainError> {
    match val.task {
        TaskKind::Classification => Ok(evaluate_classification(model, val, cfg.window, cfg.inference_samples, cfg.seed)?.accuracy),
        TaskKind::Regression => {
            Ok(evaluate_regression(model, val, cfg.window, cfg.ma_width, cfg.inference_samples, cfg.seed)?.smoothed_r2)
        }
    }
}

/// Class probabilities and mean embedding from `k` windows of one day.
pub fn infer_day_class<R: rand::Rng + ?Sized>(
    model: &SequenceModel,
    day: &DayRecord,
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let emb = mean_embedding(model, day, n, k, rng)?;
    let probs = loss::softmax(&model.head_output(&emb));
    Ok((probs, emb))
}

/// Mean day embedding over `k` sampled windows.
pub fn mean_embedding<R: rand::Rng + ?Sized>(
    model: &SequenceModel,
    day: &DayRecord,
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>, TrainError> {
    let windows = sampler::sample_inference(day, n, k, rng)?;
    let mut mean = vec![0.0; model.config.embedding_dim()];
    for w in &windows {
        let e = model.embed_window(&w.txns)?;
        mean.iter_mut().zip(&e).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    Ok(mean)
}

/// Deterministic per-day inference stream.
pub fn eval_rng(seed: u64, day_index: i64) -> rng::Rng {
    rng::substream(seed, &[tags::EVAL_WINDOW, day_index as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrediction {
    pub day_index: i64,
    pub class: usize,
    pub probs: Vec<f64>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationEval {
    pub accuracy: f64,
    pub predictions: Vec<ClassPrediction>,
}

pub fn evaluate_classification(
    model: &Trained,
    ds: &Dataset,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<ClassificationEval, TrainError> {
    let mut predictions = Vec::with_capacity(ds.len());
    for day in &ds.days {
        let (probs, embedding) = infer_day_class(&model.model, day, n, k, &mut eval_rng(seed, day.day_index))?;
        let class = crate::gbt::argmax(&probs);
        predictions.push(ClassPrediction { day_index: day.day_index, class, probs, embedding });
    }
    let labels: Vec<usize> = ds.days.iter().map(|d| d.label.class().unwrap_or(usize::MAX)).collect();
    let preds: Vec<usize> = predictions.iter().map(|p| p.class).collect();
    Ok(ClassificationEval { accuracy: accuracy(&preds, &labels)?, predictions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatePrediction {
    pub day_index: i64,
    pub raw: f64,
    pub smoothed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionEval {
    pub raw_r2: f64,
    pub smoothed_r2: f64,
    pub predictions: Vec<RatePrediction>,
}

/// Raw per-day predictions from `k` averaged windows, then a trailing
/// moving average of width `width` in day order.
pub fn infer_day_rate(
    model: &Trained,
    ds: &Dataset,
    n: usize,
    width: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<RatePrediction>, TrainError> {
    let mut raw = Vec::with_capacity(ds.len());
    for day in &ds.days {
        let emb = mean_embedding(&model.model, day, n, k, &mut eval_rng(seed, day.day_index))?;
        raw.push(model.rate(&model.model.head_output(&emb)));
    }
    let smoothed = moving_average(&raw, width);
    Ok(ds
        .days
        .iter()
        .zip(raw.iter().zip(smoothed))
        .map(|(d, (&raw, smoothed))| RatePrediction { day_index: d.day_index, raw, smoothed })
        .collect())
}

pub fn evaluate_regression(
    model: &Trained,
    ds: &Dataset,
    n: usize,
    width: usize,
    k: usize,
    seed: u64,
) -> Result<RegressionEval, TrainError> {
    let predictions = infer_day_rate(model, ds, n, width, k, seed)?;
    let labels: Vec<f64> = ds.days.iter().map(|d| d.label.rate().unwrap_or(f64::NAN)).collect();
    let raw: Vec<f64> = predictions.iter().map(|p| p.raw).collect();
    let smooth: Vec<f64> = predictions.iter().map(|p| p.smoothed).collect();
    Ok(RegressionEval { raw_r2: r2(&raw, &labels)?, smoothed_r2: r2(&smooth, &labels)?, predictions })
}

/// Trailing mean over the last `width` values, truncated at the start.
pub fn moving_average(raw: &[f64], width: usize) -> Vec<f64> {
    let width = width.max(1);
    (0..raw.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(width);
            // Mean as an offset from the first element: exact on constant runs.
            let x0 = raw[lo];
            x0 + raw[lo..=i].iter().map(|x| x - x0).sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::Length(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::TooFew(1));
    }
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / preds.len() as f64)
}

/// `1 - SS_res / SS_tot`.
pub fn r2(preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::Length(preds.len(), labels.len()));
    }
    if labels.len() < 2 {
        return Err(MetricError::TooFew(2));
    }
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let ss_tot: f64 = labels.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let ss_res: f64 = preds.iter().zip(labels).map(|(p, y)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn write_class_predictions<W: Write>(preds: &[ClassPrediction], mut w: W) -> std::io::Result<()> {
    let k = preds.first().map_or(crate::data::NUM_WEEKDAYS, |p| p.probs.len());
    let cols: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
    writeln!(w, "day_index,pred_class,{}", cols.join(","))?;
    for p in preds {
        write!(w, "{},{}", p.day_index, p.class)?;
        for v in &p.probs {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_rate_predictions<W: Write>(preds: &[RatePrediction], mut w: W) -> std::io::Result<()> {
    writeln!(w, "day_index,raw,smoothed")?;
    for p in preds {
        writeln!(w, "{},{},{}", p.day_index, p.raw, p.smoothed)?;
    }
    Ok(())
}

/// Loads a checkpoint and checks it against a dataset.
pub fn compatible(c: &Checkpoint, ds: &Dataset) -> Result<(), TrainError> {
    let task: Option<TaskKind> = c.extra.get("task").and_then(|t| serde_json::from_value(t.clone()).ok());
    if task != Some(ds.task) {
        return Err(TrainError::Compat(format!("checkpoint task {task:?} does not match dataset task {:?}", ds.task)));
    }
    if c.model.config.vocab != ds.vocab_sizes {
        return Err(TrainError::Compat("checkpoint vocabulary sizes differ from the dataset's".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{chronological_split, VocabSizes};
    use crate::nn::Architecture;
    use crate::synth::{generate, GenConfig};

    fn tiny(task: crate::synth::GenTask, seed: u64) -> (Dataset, Dataset) {
        let mut cfg = match task {
            crate::synth::GenTask::DayOfWeek => GenConfig::dayofweek(seed),
            crate::synth::GenTask::DefaultRate => GenConfig::defaultrate(seed),
        };
        cfg.n_days = 30;
        cfg.txns_per_day = (40, 60);
        let ds = generate(&cfg).unwrap().dataset;
        chronological_split(&ds, 0.8).unwrap()
    }

    fn cnn_cfg(vocab: VocabSizes, loss: LossKind, outputs: usize) -> TrainConfig {
        let mut model = ModelConfig::compact(Architecture::Cnn, vocab, outputs);
        model.conv.channels = 4;
        let mut c = TrainConfig::new(model, loss, 5);
        c.window = 16;
        c.epochs = 3;
        c.inference_samples = 2;
        c.eval_every = 2;
        c
    }

    #[test]
    fn metrics() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]), Ok(1.0));
        assert_eq!(accuracy(&[0, 0], &[1, 1]), Ok(0.0));
        let p = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0];
        assert_eq!(accuracy(&p, &[1; 10]), Ok(0.7));
        assert_eq!(accuracy(&[1], &[1, 2]), Err(MetricError::Length(1, 2)));
        let y = [0.1, 0.4, 0.2, 0.9];
        assert_eq!(r2(&y, &y), Ok(1.0));
        let m = y.iter().sum::<f64>() / 4.0;
        assert_eq!(r2(&[m; 4], &y), Ok(0.0));
        assert!(r2(&[0.9, 0.1, 0.9, 0.1], &y).unwrap() < 0.0);
        assert_eq!(r2(&[1.0, 1.0], &[2.0, 2.0]), Err(MetricError::ZeroVariance));
        assert_eq!(r2(&[1.0], &[2.0]), Err(MetricError::TooFew(2)));
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.0, 1.5, 2.5, 3.5]);
        assert_eq!(moving_average(&[0.3, 0.1, 0.7], 1), vec![0.3, 0.1, 0.7]);
        assert_eq!(moving_average(&[0.2; 9], 7), vec![0.2; 9]);
        // Trailing: changing a later value never alters earlier outputs.
        let a = moving_average(&[1.0, 5.0, 2.0, 8.0, 3.0], 3);
        let b = moving_average(&[1.0, 5.0, 2.0, 99.0, 3.0], 3);
        assert_eq!(a[..3], b[..3]);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (tr, va) = tiny(crate::synth::GenTask::DayOfWeek, 1);
        let mut c = cnn_cfg(tr.vocab_sizes, LossKind::CrossEntropy, 7);
        c.epochs = 0;
        let out = train(&tr, &va, &c).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.best.model, SequenceModel::init(c.model.clone(), c.seed).unwrap());
        assert!(out.trained_days.is_empty());
    }

    #[test]
    fn fixed_seed_reproduces_history() {
        let (tr, va) = tiny(crate::synth::GenTask::DayOfWeek, 2);
        let c = cnn_cfg(tr.vocab_sizes, LossKind::CrossEntropy, 7);
        let a = train(&tr, &va, &c).unwrap();
        let b = train(&tr, &va, &c).unwrap();
        assert_eq!(a.history.len(), 3);
        for (x, y) in a.history.rows.iter().zip(&b.history.rows) {
            assert_eq!((x.epoch, x.train_loss.to_bits(), x.val_metric.map(f64::to_bits), x.lr), (y.epoch, y.train_loss.to_bits(), y.val_metric.map(f64::to_bits), y.lr));
        }
        assert_eq!(a.best.model, b.best.model);
    }

    #[test]
    fn validation_days_never_train_and_best_is_max() {
        let (tr, va) = tiny(crate::synth::GenTask::DayOfWeek, 3);
        let c = cnn_cfg(tr.vocab_sizes, LossKind::CrossEntropy, 7);
        let out = train(&tr, &va, &c).unwrap();
        let val_days: BTreeSet<i64> = va.days.iter().map(|d| d.day_index).collect();
        assert!(out.trained_days.is_disjoint(&val_days));
        assert_eq!(out.trained_days.len(), tr.len());
        let again = validation_metric(&out.trained(), &va, &c).unwrap();
        assert_eq!(Some(again), out.history.best_metric());
    }

    #[test]
    fn triplet_and_regression_runs() {
        let (tr, va) = tiny(crate::synth::GenTask::DayOfWeek, 4);
        let c = cnn_cfg(tr.vocab_sizes, LossKind::Triplet { margin: 1.0 }, 7);
        assert_eq!(train(&tr, &va, &c).unwrap().history.len(), 3);
        let (tr, va) = tiny(crate::synth::GenTask::DefaultRate, 4);
        let c = cnn_cfg(tr.vocab_sizes, LossKind::Mse, 1);
        let out = train(&tr, &va, &c).unwrap();
        assert!(out.history.rows.iter().all(|r| r.train_loss.is_finite()));
        // Regression evaluation uses no future information.
        let model = out.trained();
        let base = infer_day_rate(&model, &va, 16, 3, 1, 9).unwrap();
        let mut perturbed = va.clone();
        let t = 2;
        for txn in &mut perturbed.days[t + 1].transactions {
            txn.amount *= 7.0;
            txn.mcc = (txn.mcc + 1) % tr.vocab_sizes.mcc as u32;
        }
        let after = infer_day_rate(&model, &perturbed, 16, 3, 1, 9).unwrap();
        assert_eq!(base[..=t], after[..=t]);
        assert_ne!(base[t + 1].raw, after[t + 1].raw);
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let (tr, va) = tiny(crate::synth::GenTask::DayOfWeek, 1);
        let c = cnn_cfg(tr.vocab_sizes, LossKind::Mse, 1);
        assert!(matches!(train(&tr, &va, &c), Err(TrainError::Compat(_))));
    }

    #[test]
    fn inference_averaging() {
        let (tr, _) = tiny(crate::synth::GenTask::DayOfWeek, 6);
        let m = SequenceModel::init(ModelConfig::compact(Architecture::Cnn, tr.vocab_sizes, 7), 1).unwrap();
        let day = &tr.days[0];
        // k = 1 equals a plain forward pass on the same window.
        let (p, e) = infer_day_class(&m, day, 16, 1, &mut eval_rng(3, 0)).unwrap();
        let w = sampler::sample_window(day, 16, &mut eval_rng(3, 0)).unwrap();
        assert_eq!(e, m.embed_window(&w.txns).unwrap());
        assert_eq!(p, loss::softmax(&m.head_output(&e)));
        // A day shorter than the window yields identical windows; the mean equals one embedding.
        let short = DayRecord::new(0, day.transactions[..5].to_vec(), day.label);
        let (_, e5) = infer_day_class(&m, &short, 16, 5, &mut eval_rng(1, 0)).unwrap();
        let single = m.embed_window(&sampler::window_at(&short, 16, 0).txns).unwrap();
        for (a, b) in e5.iter().zip(&single) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
