//! Subcommand bodies. Each reads only the config and writes only under its
//! output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::Config;
use super::CliError;
use crate::analysis::{self, export, StabilityConfig, TsneConfig};
use crate::baseline::{self, Word2VecConfig, Word2VecModel};
use crate::data::{self, Dataset, Label, TaskKind, VocabSizes, VocabularySet, NUM_WEEKDAYS};
use crate::embed::SkipGramParams;
use crate::features;
use crate::gbt::{BoostParams, TreeEnsemble};
use crate::nn::{Architecture, Checkpoint, ModelConfig};
use crate::synth::{self, GenConfig};
use crate::train::{self, LossKind, TrainConfig, TrainError, Trained};

/// Output directory plus the files written into it, relative to the root.
pub struct Outputs {
    pub root: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(root: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&root)?;
        Ok(Self { root, files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.path(name), bytes)?;
        self.files.push(PathBuf::from(name));
        Ok(())
    }

    /// Buffers a writer's output and stores it under `name`.
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("json values serialise") + "\n";
        self.write(name, text.as_bytes())
    }

    /// Records every file below `name`, which the caller has just written.
    pub fn record_dir(&mut self, name: &str) -> Result<(), CliError> {
        let mut found = Vec::new();
        collect_files(&self.root, Path::new(name), &mut found)?;
        found.sort();
        self.files.extend(found);
        Ok(())
    }
}

fn collect_files(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(root.join(rel))? {
        let entry = entry?;
        let child = rel.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            collect_files(root, &child, out)?;
        } else {
            out.push(child);
        }
    }
    Ok(())
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn train_err(e: TrainError) -> CliError {
    use crate::nn::NnError;
    match e {
        TrainError::Config(m) => CliError::Config(m),
        TrainError::Nn(NnError::Config(m)) => CliError::Config(m),
        TrainError::Nn(NnError::NonFinite(m)) => CliError::Numeric(format!("non-finite gradient for {m}")),
        TrainError::NonFinite { epoch, .. } => CliError::Numeric(format!("non-finite loss at epoch {epoch}")),
        other => CliError::Data(other.to_string()),
    }
}

fn baseline_err(e: baseline::BaselineError) -> CliError {
    use baseline::BaselineError;
    match e {
        BaselineError::Gbt(crate::gbt::GbtError::Params(m)) => CliError::Config(m),
        BaselineError::Embed(crate::embed::EmbedError::Params(m)) => CliError::Config(m),
        other => CliError::Data(other.to_string()),
    }
}

// ---- shared config readers ----

pub fn load_data(cfg: &Config) -> Result<(Dataset, VocabularySet), CliError> {
    let vocab = VocabularySet::load(Path::new(cfg.require("data.vocab")?)).map_err(data_err)?;
    let ds = data::load_dataset(Path::new(cfg.require("data.dataset")?), &vocab).map_err(data_err)?;
    Ok((ds, vocab))
}

fn split(cfg: &Config, ds: &Dataset) -> Result<(Dataset, Dataset), CliError> {
    let frac = cfg.value("data.train_frac", 0.8)?;
    data::chronological_split(ds, frac).map_err(data_err)
}

/// The split named by `eval.split`: `val` (default), `train` or `all`.
fn eval_split(cfg: &Config, ds: &Dataset, default: &str) -> Result<Dataset, CliError> {
    let which: String = cfg.value("eval.split", default.to_string())?;
    match which.as_str() {
        "all" => Ok(ds.clone()),
        "train" => Ok(split(cfg, ds)?.0),
        "val" => Ok(split(cfg, ds)?.1),
        other => Err(CliError::Config(format!("`eval.split` must be val, train or all, got `{other}`"))),
    }
}

fn gen_config(cfg: &Config, seed: u64) -> Result<GenConfig, CliError> {
    let task: String = cfg.value("gen.task", "dayofweek".to_string())?;
    let mut g = match task.as_str() {
        "dayofweek" => GenConfig::dayofweek(seed),
        "defaultrate" => GenConfig::defaultrate(seed),
        other => return Err(CliError::Config(format!("`gen.task` must be dayofweek or defaultrate, got `{other}`"))),
    };
    g.n_days = cfg.value("gen.days", g.n_days)?;
    g.txns_per_day = (cfg.value("gen.txns_min", g.txns_per_day.0)?, cfg.value("gen.txns_max", g.txns_per_day.1)?);
    let optional = |key: &str, current: Option<usize>| -> Result<Option<usize>, CliError> {
        let v = cfg.value(key, current.unwrap_or(0))?;
        Ok((v > 0).then_some(v))
    };
    g.vocab = VocabSizes {
        mcc: cfg.value("gen.mcc_vocab", g.vocab.mcc)?,
        txn_type: cfg.value("gen.type_vocab", g.vocab.txn_type)?,
        currency: optional("gen.currency_vocab", g.vocab.currency)?,
        country: optional("gen.country_vocab", g.vocab.country)?,
    };
    g.marginal_strength = cfg.value("gen.marginal_strength", g.marginal_strength)?;
    g.motif_strength = cfg.value("gen.motif_strength", g.motif_strength)?;
    g.noise_std = cfg.value("gen.noise_std", g.noise_std)?;
    g.ar_coeff = cfg.value("gen.ar_coeff", g.ar_coeff)?;
    Ok(g)
}

fn n_outputs(task: TaskKind) -> usize {
    match task {
        TaskKind::Classification => NUM_WEEKDAYS,
        TaskKind::Regression => 1,
    }
}

pub fn model_config(cfg: &Config, arch: Architecture, vocab: VocabSizes, outputs: usize) -> Result<ModelConfig, CliError> {
    let size: String = cfg.value("model.size", "compact".to_string())?;
    let mut m = match size.as_str() {
        "compact" => ModelConfig::compact(arch, vocab, outputs),
        "reference" => ModelConfig::reference(arch, vocab, outputs),
        other => return Err(CliError::Config(format!("`model.size` must be compact or reference, got `{other}`"))),
    };
    m.hidden = cfg.value("model.hidden", m.hidden)?;
    m.rnn_layers = cfg.value("model.rnn_layers", m.rnn_layers)?;
    m.conv.layers = cfg.value("model.conv_layers", m.conv.layers)?;
    m.conv.channels = cfg.value("model.conv_channels", m.conv.channels)?;
    m.conv.kernel = cfg.value("model.conv_kernel", m.conv.kernel)?;
    m.conv.pool = cfg.value("model.conv_pool", m.conv.pool)?;
    for (field, dim) in m.embed_dims.iter_mut() {
        let key = match field {
            data::Field::Mcc => "model.mcc_dim",
            data::Field::TxnType => "model.type_dim",
            _ => continue,
        };
        *dim = cfg.value(key, *dim)?;
    }
    Ok(m)
}

pub fn train_config(cfg: &Config, ds: &Dataset, seed: u64) -> Result<TrainConfig, CliError> {
    let name: String = cfg.value("train.model", "cnn".to_string())?;
    let arch = Architecture::parse(&name)
        .ok_or_else(|| CliError::Config(format!("`train.model` must be cnn, indrnn or lstm here, got `{name}`")))?;
    let default_loss = match ds.task {
        TaskKind::Classification => "ce",
        TaskKind::Regression => "mse",
    };
    let loss_name: String = cfg.value("train.loss", default_loss.to_string())?;
    let loss = match loss_name.as_str() {
        "ce" => LossKind::CrossEntropy,
        "triplet" => LossKind::Triplet { margin: cfg.value("train.margin", 1.0)? },
        "mse" => LossKind::Mse,
        other => return Err(CliError::Config(format!("`train.loss` must be ce, triplet or mse, got `{other}`"))),
    };
    let model = model_config(cfg, arch, ds.vocab_sizes, n_outputs(loss.task()))?;
    let mut t = TrainConfig::new(model, loss, seed);
    t.window = cfg.value("train.n", t.window)?;
    t.epochs = cfg.value("train.epochs", t.epochs)?;
    t.batch_size = cfg.value("train.batch_size", t.batch_size)?;
    t.schedule.lr0 = cfg.value("train.lr", t.schedule.lr0)?;
    t.schedule.decay = cfg.value("train.lr_decay", t.schedule.decay)?;
    t.schedule.step_size = cfg.value("train.lr_step", t.schedule.step_size)?;
    t.inference_samples = cfg.value("train.inference_samples", t.inference_samples)?;
    t.ma_width = cfg.value("train.ma_width", t.ma_width)?;
    t.eval_every = cfg.value("train.eval_every", t.eval_every)?;
    t.check().map_err(train_err)?;
    Ok(t)
}

fn boost_params(cfg: &Config, base: BoostParams) -> Result<BoostParams, CliError> {
    Ok(BoostParams {
        n_rounds: cfg.value("gbt.rounds", base.n_rounds)?,
        max_depth: cfg.value("gbt.depth", base.max_depth)?,
        shrinkage: cfg.value("gbt.shrinkage", base.shrinkage)?,
        ..base
    })
}

fn w2v_config(cfg: &Config, seed: u64) -> Result<Word2VecConfig, CliError> {
    let mut w = Word2VecConfig::new(seed);
    let tune = |p: &mut SkipGramParams, dim_key: &str| -> Result<(), CliError> {
        p.dim = cfg.value(dim_key, p.dim)?;
        p.window = cfg.value("w2v.window", p.window)?;
        p.negatives = cfg.value("w2v.negatives", p.negatives)?;
        p.epochs = cfg.value("w2v.epochs", p.epochs)?;
        p.lr = cfg.value("w2v.lr", p.lr)?;
        Ok(())
    };
    tune(&mut w.mcc, "w2v.mcc_dim")?;
    tune(&mut w.txn_type, "w2v.type_dim")?;
    w.boost = boost_params(cfg, w.boost)?;
    Ok(w)
}

fn metric_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Classification => "accuracy",
        TaskKind::Regression => "r2",
    }
}

fn metrics_json(cfg: &Config, task: TaskKind, value: f64, extra: serde_json::Value) -> serde_json::Value {
    let mut m = json!({ "metric": metric_name(task), "value": value, "config_digest": cfg.digest() });
    if let (Some(obj), serde_json::Value::Object(more)) = (m.as_object_mut(), extra) {
        obj.extend(more);
    }
    m
}

// ---- commands ----

pub fn generate(cfg: &Config, seed: u64, out: &mut Outputs) -> Result<(), CliError> {
    let g = synth::generate(&gen_config(cfg, seed)?).map_err(|e| CliError::Config(e.to_string()))?;
    out.write_with("dataset.csv", |w| data::write_dataset(&g.dataset, &g.vocab, w).map_err(std::io::Error::other))?;
    out.write_with("vocab.csv", |w| g.vocab.write(w).map_err(std::io::Error::other))?;
    out.write_with("truth.csv", |w| synth::write_truth(&g.truth, w))?;
    Ok(())
}

pub fn featurize(cfg: &Config, out: &mut Outputs) -> Result<(), CliError> {
    let (ds, _) = load_data(cfg)?;
    out.write_with("features.csv", |w| features::write_feature_csv(&ds, w))
}

pub fn train(cfg: &Config, seed: u64, out: &mut Outputs) -> Result<(), CliError> {
    let (ds, _) = load_data(cfg)?;
    let (tr, va) = split(cfg, &ds)?;
    let model: String = cfg.value("train.model", "cnn".to_string())?;
    match model.as_str() {
        "baseline" => {
            let params = boost_params(cfg, BoostParams::default())?;
            let r = baseline::feature_baseline(&tr, &va, &params).map_err(baseline_err)?;
            r.model.save(&out.path("model")).map_err(data_err)?;
            out.record_dir("model")?;
            out.write_with("predictions.csv", |w| baseline::write_predictions(&r.predictions, &va, w))?;
            out.write_json("metrics.json", &metrics_json(cfg, va.task, r.metric, json!({ "model": "baseline" })))
        }
        "word2vec" => {
            let r = baseline::word2vec_baseline(&tr, &va, &w2v_config(cfg, seed)?).map_err(baseline_err)?;
            r.model.save(&out.root).map_err(baseline_err)?;
            out.files.push("sif.json".into());
            out.record_dir("tables")?;
            out.record_dir("model")?;
            out.write_with("predictions.csv", |w| baseline::write_predictions(&r.best.predictions, &va, w))?;
            let grid: Vec<_> = r.grid.iter().map(|(a, m)| json!({ "a": a, "value": m })).collect();
            let extra = json!({ "model": "word2vec", "sif_a": r.model.a, "sif_grid": grid });
            out.write_json("metrics.json", &metrics_json(cfg, va.task, r.best.metric, extra))
        }
        _ => train_network(cfg, seed, &tr, &va, out),
    }
}

fn train_network(cfg: &Config, seed: u64, tr: &Dataset, va: &Dataset, out: &mut Outputs) -> Result<(), CliError> {
    let tc = train_config(cfg, tr, seed)?;
    let outcome = match train::train(tr, va, &tc) {
        Ok(o) => o,
        Err(TrainError::NonFinite { epoch, last_good }) => {
            last_good.save(&out.path("checkpoint")).map_err(data_err)?;
            out.record_dir("checkpoint")?;
            return Err(CliError::Numeric(format!("non-finite loss at epoch {epoch}; last good checkpoint kept")));
        }
        Err(e) => return Err(train_err(e)),
    };
    outcome.best.save(&out.path("checkpoint")).map_err(data_err)?;
    out.record_dir("checkpoint")?;
    out.write_with("history.csv", |w| outcome.history.write_csv(w))?;
    let trained = outcome.trained();
    let model = json!({ "model": tc.model.architecture.name(), "epoch": outcome.best.epoch });
    match va.task {
        TaskKind::Classification => {
            let ev = train::evaluate_classification(&trained, va, tc.window, tc.inference_samples, seed)
                .map_err(train_err)?;
            out.write_with("predictions.csv", |w| train::write_class_predictions(&ev.predictions, w))?;
            out.write_json("metrics.json", &metrics_json(cfg, va.task, ev.accuracy, model))
        }
        TaskKind::Regression => {
            let ev = train::evaluate_regression(&trained, va, tc.window, tc.ma_width, tc.inference_samples, seed)
                .map_err(train_err)?;
            out.write_with("predictions.csv", |w| train::write_rate_predictions(&ev.predictions, w))?;
            let mut extra = model;
            extra["raw_r2"] = json!(ev.raw_r2);
            out.write_json("metrics.json", &metrics_json(cfg, va.task, ev.smoothed_r2, extra))
        }
    }
}

/// A trained artifact directory, recognised by the files it holds.
enum Saved {
    Network(Checkpoint),
    Features(TreeEnsemble),
    Word2Vec(Box<Word2VecModel>),
}

fn load_saved(dir: &Path, ds: &Dataset) -> Result<Saved, CliError> {
    if dir.join("checkpoint/params.bin").exists() {
        return load_saved(&dir.join("checkpoint"), ds);
    }
    if dir.join("params.bin").exists() {
        let c = Checkpoint::load(dir).map_err(data_err)?;
        train::compatible(&c, ds).map_err(train_err)?;
        Ok(Saved::Network(c))
    } else if dir.join("sif.json").exists() {
        let m = Word2VecModel::load(dir).map_err(baseline_err)?;
        baseline::check_model(&m.model, ds, m.n_features()).map_err(baseline_err)?;
        Ok(Saved::Word2Vec(Box::new(m)))
    } else if dir.join("model/model.json").exists() || dir.join("model.json").exists() {
        let d = if dir.join("model.json").exists() { dir.to_path_buf() } else { dir.join("model") };
        let m = TreeEnsemble::load(&d).map_err(data_err)?;
        baseline::check_model(&m, ds, features::feature_len(&ds.vocab_sizes)).map_err(baseline_err)?;
        Ok(Saved::Features(m))
    } else {
        Err(CliError::Data(format!("{} holds no checkpoint or baseline model", dir.display())))
    }
}

fn window_of(c: &Checkpoint, cfg: &Config) -> Result<usize, CliError> {
    match c.extra.get("window").and_then(|v| v.as_u64()) {
        Some(w) => Ok(w as usize),
        None => cfg.required_value("train.n"),
    }
}

fn default_samples(task: TaskKind) -> usize {
    match task {
        TaskKind::Classification => 30,
        TaskKind::Regression => 1,
    }
}

pub fn evaluate(cfg: &Config, seed: u64, out: &mut Outputs) -> Result<(), CliError> {
    let (ds, _) = load_data(cfg)?;
    let target = eval_split(cfg, &ds, "val")?;
    let saved = load_saved(Path::new(cfg.require("eval.checkpoint")?), &target)?;
    let report = match saved {
        Saved::Network(c) => {
            let n = window_of(&c, cfg)?;
            let k = cfg.value("eval.samples", default_samples(target.task))?;
            let trained = Trained::from_checkpoint(&c);
            match target.task {
                TaskKind::Classification => {
                    let ev = train::evaluate_classification(&trained, &target, n, k, seed).map_err(train_err)?;
                    out.write_with("predictions.csv", |w| train::write_class_predictions(&ev.predictions, w))?;
                    metrics_json(cfg, target.task, ev.accuracy, json!({}))
                }
                TaskKind::Regression => {
                    let width = cfg.value("train.ma_width", 7)?;
                    let ev = train::evaluate_regression(&trained, &target, n, width, k, seed).map_err(train_err)?;
                    out.write_with("predictions.csv", |w| train::write_rate_predictions(&ev.predictions, w))?;
                    metrics_json(cfg, target.task, ev.smoothed_r2, json!({ "raw_r2": ev.raw_r2 }))
                }
            }
        }
        Saved::Features(m) => {
            let (value, preds) =
                baseline::score(&m, &features::dataset_features(&target), &target).map_err(baseline_err)?;
            out.write_with("predictions.csv", |w| baseline::write_predictions(&preds, &target, w))?;
            metrics_json(cfg, target.task, value, json!({}))
        }
        Saved::Word2Vec(m) => {
            let x = m.features(&target).map_err(baseline_err)?;
            let (value, preds) = baseline::score(&m.model, &x, &target).map_err(baseline_err)?;
            out.write_with("predictions.csv", |w| baseline::write_predictions(&preds, &target, w))?;
            metrics_json(cfg, target.task, value, json!({}))
        }
    };
    out.write_json("metrics.json", &report)
}

fn label_text(label: &Label) -> String {
    match label {
        Label::Class(c) => c.to_string(),
        Label::Rate(r) => format!("{r:?}"),
    }
}

fn write_embeddings(days: &Dataset, rows: &[Vec<f64>], w: &mut Vec<u8>) -> std::io::Result<()> {
    let d = rows.first().map_or(0, Vec::len);
    let cols: Vec<String> = (0..d).map(|i| format!("e{i}")).collect();
    writeln!(w, "day_index,label,{}", cols.join(","))?;
    for (day, row) in days.days.iter().zip(rows) {
        write!(w, "{},{}", day.day_index, label_text(&day.label))?;
        for v in row {
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn embed(cfg: &Config, seed: u64, out: &mut Outputs) -> Result<(), CliError> {
    let (ds, _) = load_data(cfg)?;
    let target = eval_split(cfg, &ds, "all")?;
    let rows = match load_saved(Path::new(cfg.require("eval.checkpoint")?), &target)? {
        Saved::Network(c) => {
            let n = window_of(&c, cfg)?;
            let k = cfg.value("eval.samples", default_samples(TaskKind::Classification))?;
            target
                .days
                .iter()
                .map(|d| train::mean_embedding(&c.model, d, n, k, &mut train::eval_rng(seed, d.day_index)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(train_err)?
        }
        Saved::Features(_) => features::dataset_features(&target),
        Saved::Word2Vec(m) => m.features(&target).map_err(baseline_err)?,
    };
    out.write_with("embeddings.csv", |w| write_embeddings(&target, &rows, w))
}

/// Day indices, label strings and vectors of an embeddings CSV.
type EmbeddingRows = (Vec<i64>, Vec<String>, Vec<Vec<f64>>);

fn read_embeddings(path: &Path) -> Result<EmbeddingRows, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(data_err)?;
    let (mut days, mut labels, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(data_err)?;
        let bad = || CliError::Data(format!("{}: malformed row {}", path.display(), i + 2));
        days.push(rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?);
        labels.push(rec.get(1).ok_or_else(bad)?.to_string());
        rows.push(rec.iter().skip(2).map(|v| v.parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>()?);
    }
    Ok((days, labels, rows))
}

/// Colour classes: integer labels as-is, otherwise label rank in sevenths.
fn colour_classes(labels: &[String]) -> Vec<usize> {
    if let Ok(classes) = labels.iter().map(|l| l.parse::<usize>()).collect::<Result<Vec<_>, _>>() {
        return classes;
    }
    let values: Vec<f64> = labels.iter().map(|l| l.parse().unwrap_or(f64::NAN)).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut classes = vec![0; values.len()];
    for (rank, &i) in order.iter().enumerate() {
        classes[i] = rank * export::PALETTE.len() / values.len().max(1);
    }
    classes
}

pub fn tsne(cfg: &Config, seed: u64, out: &mut Outputs) -> Result<(), CliError> {
    let (days, labels, rows) = read_embeddings(Path::new(cfg.require("tsne.input")?))?;
    let base = TsneConfig::new(seed);
    let tc = TsneConfig {
        perplexity: cfg.value("tsne.perplexity", base.perplexity)?,
        iterations: cfg.value("tsne.iterations", base.iterations)?,
        learning_rate: cfg.value("tsne.lr", base.learning_rate)?,
        ..base
    };
    let r = analysis::tsne(&rows, &tc).map_err(|e| CliError::Config(e.to_string()))?;
    out.write_with("tsne.csv", |w| export::write_tsne_csv(&days, &r.coords, &labels, w))?;
    out.write_with("tsne.svg", |w| export::write_scatter_svg(&r.coords, &colour_classes(&labels), w))?;
    out.write_with("kl.csv", |w| {
        writeln!(w, "iteration,kl")?;
        r.kl_trace.iter().try_for_each(|(i, kl)| writeln!(w, "{i},{kl}"))
    })
}

pub fn stability(cfg: &Config, seed: u64, out: &mut Outputs) -> Result<(), CliError> {
    let (ds, _) = load_data(cfg)?;
    let (tr, va) = split(cfg, &ds)?;
    let mut tc = train_config(cfg, &tr, seed)?;
    tc.inference_samples = cfg.value("eval.samples", tc.inference_samples)?;
    let d = StabilityConfig::default();
    let sc = StabilityConfig {
        runs: cfg.value("stability.runs", d.runs)?,
        k: cfg.value("stability.k", d.k)?,
        restarts: cfg.value("stability.restarts", d.restarts)?,
        jobs: cfg.value("stability.jobs", d.jobs)?,
    };
    let report = analysis::stability_protocol(&tr, &va, &tc, &sc).map_err(|e| CliError::Config(e.to_string()))?;
    let pairs: usize = cfg.value("stability.control_pairs", 100)?;
    let control = analysis::random_partition_control(va.len(), sc.k, pairs, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let control_mean = control.iter().sum::<f64>() / control.len().max(1) as f64;
    out.write_with("ami_pairs.csv", |w| report.write_pairs_csv(w))?;
    out.write_with("ami_matrix.csv", |w| report.write_matrix_csv(w))?;
    let failures: Vec<_> = report.failures.iter().map(|(r, e)| json!({ "run": r, "error": e })).collect();
    out.write_json(
        "stability.json",
        &json!({
            "runs": sc.runs,
            "k": sc.k,
            "pairs": report.pairs.len(),
            "mean_ami": report.mean_ami,
            "random_control_mean_ami": control_mean,
            "failures": failures,
            "config_digest": cfg.digest(),
        }),
    )?;
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("{} of {} stability runs failed", report.failures.len(), sc.runs)))
    }
}

pub fn report(cfg: &Config, out: &mut Outputs) -> Result<(), CliError> {
    let runs: Vec<&str> = cfg.require("report.runs")?.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let mut rows = Vec::with_capacity(runs.len());
    for run in &runs {
        let path = Path::new(run).join("metrics.json");
        let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let m: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let name = Path::new(run).file_name().map_or_else(|| run.to_string(), |n| n.to_string_lossy().into_owned());
        rows.push(json!({ "run": name, "metric": m["metric"], "value": m["value"], "config_digest": m["config_digest"] }));
    }
    out.write_json("report.json", &serde_json::Value::Array(rows.clone()))?;
    out.write_with("report.md", |w| {
        writeln!(w, "| run | metric | value |")?;
        writeln!(w, "|---|---|---|")?;
        rows.iter().try_for_each(|r| {
            let metric = r["metric"].as_str().unwrap_or("?");
            let value = r["value"].as_f64().map_or_else(|| "?".to_string(), |v| format!("{v:.4}"));
            writeln!(w, "| {} | {metric} | {value} |", r["run"].as_str().unwrap_or("?"))
        })
    })
}
