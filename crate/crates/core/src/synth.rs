//! Synthetic transaction streams with planted, ground-truth-known signals.
//!
//! Two mechanisms carry label information:
//!
//! * a *marginal* component that draws MCC codes from a label-dependent
//!   rotation of the background unigram, visible to frequency features;
//! * a *motif* component acting on a tier of [`MOTIF_TIER`] equiprobable MCC
//!   codes: when the previous token sits in the tier, the next tier token is
//!   its image under a label-specific cyclic permutation. Tier membership is
//!   still drawn with the background tier mass, so every position keeps the
//!   background unigram marginal and only bigram structure changes.
//!
//! Component weights are `strength / (1 + marginal + motif)`; the remainder
//! is background. For the default-rate task the weights are further scaled by
//! `logistic(z_t)` of a latent AR(1) process.

use rand::Rng as _;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    Dataset, DayRecord, Field, Label, TaskKind, Transaction, VocabSizes, Vocabulary, VocabularySet,
    NUM_WEEKDAYS,
};
use crate::rng::{self, tags};

/// Number of equiprobable MCC codes (indices `1..=MOTIF_TIER`) that carry motifs.
pub const MOTIF_TIER: usize = 11;
/// Background probability mass of the motif tier.
pub const TIER_MASS: f64 = 0.4;
pub const RATE_MIN: f64 = 0.01;
pub const RATE_MAX: f64 = 0.20;
const REFUND_PROB: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("vocabulary too small: {0}")]
    Vocabulary(String),
    #[error("day-of-week generation needs at least 7 days, got {0}")]
    TooFewDays(usize),
    #[error("ar_coeff must satisfy |ar_coeff| < 1, got {0}")]
    ArCoeff(f64),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("generator task is {found:?}, operation expects {expected:?}")]
    WrongTask { found: GenTask, expected: GenTask },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenTask {
    DayOfWeek,
    DefaultRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_days: usize,
    pub txns_per_day: (usize, usize),
    pub vocab: VocabSizes,
    pub marginal_strength: f64,
    pub motif_strength: f64,
    pub noise_std: f64,
    pub task: GenTask,
    pub ar_coeff: f64,
}

impl GenConfig {
    /// Desk-scale day-of-week config with motif-only signal.
    pub fn dayofweek(seed: u64) -> Self {
        Self {
            seed,
            n_days: 700,
            txns_per_day: (1600, 2400),
            vocab: VocabSizes { mcc: 40, txn_type: 8, currency: None, country: None },
            marginal_strength: 0.0,
            motif_strength: 4.0,
            noise_std: 0.0,
            task: GenTask::DayOfWeek,
            ar_coeff: 0.0,
        }
    }

    /// Desk-scale default-rate config: AR(1) latent driving motif intensity.
    pub fn defaultrate(seed: u64) -> Self {
        Self {
            seed,
            n_days: 1000,
            txns_per_day: (800, 1200),
            vocab: VocabSizes { mcc: 40, txn_type: 8, currency: Some(6), country: Some(10) },
            marginal_strength: 0.0,
            motif_strength: 4.0,
            noise_std: 0.5,
            task: GenTask::DefaultRate,
            ar_coeff: 0.9,
        }
    }

    fn check(&self) -> Result<(), GenError> {
        if self.txns_per_day.0 == 0 || self.txns_per_day.0 > self.txns_per_day.1 {
            return Err(GenError::Config(format!(
                "txns_per_day must satisfy 1 <= min <= max, got {:?}",
                self.txns_per_day
            )));
        }
        if self.vocab.mcc < MOTIF_TIER + 2 {
            return Err(GenError::Vocabulary(format!(
                "mcc vocabulary must be at least {}, got {}",
                MOTIF_TIER + 2,
                self.vocab.mcc
            )));
        }
        for (field, n) in self.vocab.present() {
            if n < 2 {
                return Err(GenError::Vocabulary(format!(
                    "{} vocabulary must hold at least one known token",
                    field.name()
                )));
            }
        }
        if self.vocab.currency.is_some() != self.vocab.country.is_some() {
            return Err(GenError::Config(
                "currency and country vocabularies must be both set or both absent".into(),
            ));
        }
        for (name, v) in [
            ("marginal_strength", self.marginal_strength),
            ("motif_strength", self.motif_strength),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GenError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Latent value and label per day, written as the truth sidecar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub day_index: i64,
    pub z: f64,
    pub label: Label,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub vocab: VocabularySet,
    pub truth: Vec<Truth>,
}

/// Token strings used for generated vocabularies.
pub fn token_name(field: Field, index: usize) -> String {
    match field {
        Field::Mcc => format!("{}", 4000 + index),
        Field::TxnType => format!("T{index}"),
        Field::Currency => format!("C{index}"),
        Field::Country => format!("K{index}"),
    }
}

pub fn vocabulary_for(sizes: &VocabSizes) -> VocabularySet {
    let build = |field: Field, n: usize| {
        let tokens: Vec<String> = (1..n).map(|i| token_name(field, i)).collect();
        Vocabulary::from_tokens(field, &tokens).expect("generated tokens are unique")
    };
    VocabularySet {
        mcc: build(Field::Mcc, sizes.mcc),
        txn_type: build(Field::TxnType, sizes.txn_type),
        currency: sizes.currency.map(|n| build(Field::Currency, n)),
        country: sizes.country.map(|n| build(Field::Country, n)),
    }
}

fn zipf_weights(n: usize) -> Vec<f64> {
    (1..=n).map(|r| 1.0 / r as f64).collect()
}

/// Background MCC unigram over indices `0..vocab` (index 0 never drawn).
pub fn background_mcc(vocab: usize) -> Vec<f64> {
    let mut p = vec![0.0; vocab];
    for w in p.iter_mut().skip(1).take(MOTIF_TIER) {
        *w = TIER_MASS / MOTIF_TIER as f64;
    }
    let rest = zipf_weights(vocab - 1 - MOTIF_TIER);
    let total: f64 = rest.iter().sum();
    for (w, r) in p.iter_mut().skip(1 + MOTIF_TIER).zip(rest) {
        *w = (1.0 - TIER_MASS) * r / total;
    }
    p
}

/// Background unigram rotated by `shift` positions over the known indices.
fn rotated(p: &[f64], shift: usize) -> Vec<f64> {
    let known = p.len() - 1;
    let mut q = vec![0.0; p.len()];
    for i in 0..known {
        q[1 + i] = p[1 + (i + shift) % known];
    }
    q
}

/// Label-specific successor inside the motif tier.
pub fn motif_successor(prev: u32, shift: usize) -> u32 {
    let pos = prev as usize - 1;
    (1 + (pos + shift) % MOTIF_TIER) as u32
}

pub fn in_tier(token: u32) -> bool {
    (1..=MOTIF_TIER as u32).contains(&token)
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn rate_from_latent(z: f64) -> f64 {
    RATE_MIN + (RATE_MAX - RATE_MIN) * logistic(z)
}

struct Samplers {
    mcc_background: WeightedAliasIndex<f64>,
    mcc_non_tier: WeightedAliasIndex<f64>,
    mcc_marginal: Vec<WeightedAliasIndex<f64>>,
    txn_type: WeightedAliasIndex<f64>,
    currency: Option<WeightedAliasIndex<f64>>,
    country: Option<WeightedAliasIndex<f64>>,
    amount: LogNormal<f64>,
}

fn alias(weights: Vec<f64>) -> WeightedAliasIndex<f64> {
    WeightedAliasIndex::new(weights).expect("weights are finite, non-negative and non-zero")
}

fn field_weights(n: usize) -> Vec<f64> {
    let mut w = vec![0.0];
    w.extend(zipf_weights(n - 1));
    w
}

impl Samplers {
    fn new(cfg: &GenConfig, marginal_shifts: &[usize]) -> Self {
        let bg = background_mcc(cfg.vocab.mcc);
        let mut non_tier = bg.clone();
        for w in non_tier.iter_mut().take(1 + MOTIF_TIER) {
            *w = 0.0;
        }
        Self {
            mcc_background: alias(bg.clone()),
            mcc_non_tier: alias(non_tier),
            mcc_marginal: marginal_shifts.iter().map(|&s| alias(rotated(&bg, s))).collect(),
            txn_type: alias(field_weights(cfg.vocab.txn_type)),
            currency: cfg.vocab.currency.map(|n| alias(field_weights(n))),
            country: cfg.vocab.country.map(|n| alias(field_weights(n))),
            amount: LogNormal::new(3.0, 1.0).expect("valid lognormal"),
        }
    }
}

/// Per-day mixture: component probabilities and the label-specific parameters.
struct DayMixture {
    p_marginal: f64,
    p_motif: f64,
    marginal: usize,
    motif_shift: usize,
}

fn generate_day(
    cfg: &GenConfig,
    s: &Samplers,
    day_index: i64,
    mix: &DayMixture,
    label: Label,
) -> DayRecord {
    let mut rng = rng::substream(cfg.seed, &[tags::SYNTH_DAY, day_index as u64]);
    let (lo, hi) = cfg.txns_per_day;
    let n = rng.random_range(lo..=hi);
    let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 24.0).collect();
    times.sort_by(f64::total_cmp);
    let mut prev: u32 = 0;
    let mut txns = Vec::with_capacity(n);
    for &time_hours in &times {
        let u: f64 = rng.random();
        let mcc = if u < mix.p_marginal {
            s.mcc_marginal[mix.marginal].sample(&mut rng) as u32
        } else if u < mix.p_marginal + mix.p_motif {
            if rng.random::<f64>() < TIER_MASS {
                if in_tier(prev) {
                    motif_successor(prev, mix.motif_shift)
                } else {
                    rng.random_range(1..=MOTIF_TIER as u32)
                }
            } else {
                s.mcc_non_tier.sample(&mut rng) as u32
            }
        } else {
            s.mcc_background.sample(&mut rng) as u32
        };
        prev = mcc;
        let txn_type = s.txn_type.sample(&mut rng) as u32;
        let currency = s.currency.as_ref().map(|d| d.sample(&mut rng) as u32);
        let country = s.country.as_ref().map(|d| d.sample(&mut rng) as u32);
        let mut amount = s.amount.sample(&mut rng);
        if rng.random::<f64>() < REFUND_PROB {
            amount = -amount;
        }
        // Keep amounts at cent precision so CSV text stays short.
        amount = (amount * 100.0).round() / 100.0;
        txns.push(Transaction { mcc, txn_type, currency, country, time_hours, amount });
    }
    DayRecord { day_index, transactions: txns, label }
}

fn normalised(cfg: &GenConfig) -> (f64, f64) {
    let z = 1.0 + cfg.marginal_strength + cfg.motif_strength;
    (cfg.marginal_strength / z, cfg.motif_strength / z)
}

/// Day-of-week stream: day `d` has class `d mod 7`.
pub fn generate_dayofweek(cfg: &GenConfig) -> Result<Generated, GenError> {
    if cfg.task != GenTask::DayOfWeek {
        return Err(GenError::WrongTask { found: cfg.task, expected: GenTask::DayOfWeek });
    }
    cfg.check()?;
    if cfg.n_days < NUM_WEEKDAYS {
        return Err(GenError::TooFewDays(cfg.n_days));
    }
    let known = cfg.vocab.mcc - 1;
    let shifts: Vec<usize> = (0..NUM_WEEKDAYS).map(|c| c * known / NUM_WEEKDAYS).collect();
    let samplers = Samplers::new(cfg, &shifts);
    let (p_marginal, p_motif) = normalised(cfg);
    let mut days = Vec::with_capacity(cfg.n_days);
    let mut truth = Vec::with_capacity(cfg.n_days);
    for d in 0..cfg.n_days {
        let class = d % NUM_WEEKDAYS;
        let mix = DayMixture { p_marginal, p_motif, marginal: class, motif_shift: class + 1 };
        let label = Label::Class(class as u8);
        days.push(generate_day(cfg, &samplers, d as i64, &mix, label));
        truth.push(Truth { day_index: d as i64, z: 0.0, label });
    }
    Ok(finish(cfg, days, truth, TaskKind::Classification))
}

/// Latent AR(1) series `z_t = ar * z_{t-1} + eps_t`, `z_{-1} = 0`.
pub fn latent_series(cfg: &GenConfig) -> Result<Vec<f64>, GenError> {
    if !(cfg.ar_coeff.abs() < 1.0) {
        return Err(GenError::ArCoeff(cfg.ar_coeff));
    }
    let mut rng = rng::substream(cfg.seed, &[tags::SYNTH_LATENT]);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| GenError::Config(e.to_string()))?;
    let mut z = 0.0;
    Ok((0..cfg.n_days)
        .map(|_| {
            z = cfg.ar_coeff * z + noise.sample(&mut rng);
            z
        })
        .collect())
}

/// Default-rate stream: label `0.01 + 0.19 * logistic(z_t)`, signal weights scale with `logistic(z_t)`.
pub fn generate_defaultrate(cfg: &GenConfig) -> Result<Generated, GenError> {
    if cfg.task != GenTask::DefaultRate {
        return Err(GenError::WrongTask { found: cfg.task, expected: GenTask::DefaultRate });
    }
    cfg.check()?;
    if cfg.n_days == 0 {
        return Err(GenError::Config("n_days must be positive".into()));
    }
    let z = latent_series(cfg)?;
    let known = cfg.vocab.mcc - 1;
    let samplers = Samplers::new(cfg, &[known / 2]);
    let (p_marginal, p_motif) = normalised(cfg);
    let mut days = Vec::with_capacity(cfg.n_days);
    let mut truth = Vec::with_capacity(cfg.n_days);
    for (d, &zt) in z.iter().enumerate() {
        let w = logistic(zt);
        let mix = DayMixture {
            p_marginal: w * p_marginal,
            p_motif: w * p_motif,
            marginal: 0,
            motif_shift: 1,
        };
        let label = Label::Rate(rate_from_latent(zt));
        days.push(generate_day(cfg, &samplers, d as i64, &mix, label));
        truth.push(Truth { day_index: d as i64, z: zt, label });
    }
    Ok(finish(cfg, days, truth, TaskKind::Regression))
}

pub fn generate(cfg: &GenConfig) -> Result<Generated, GenError> {
    match cfg.task {
        GenTask::DayOfWeek => generate_dayofweek(cfg),
        GenTask::DefaultRate => generate_defaultrate(cfg),
    }
}

fn finish(cfg: &GenConfig, days: Vec<DayRecord>, truth: Vec<Truth>, task: TaskKind) -> Generated {
    Generated {
        dataset: Dataset {
            days,
            task,
            vocab_sizes: cfg.vocab,
            provenance: format!("synthetic:seed={}", cfg.seed),
        },
        vocab: vocabulary_for(&cfg.vocab),
        truth,
    }
}

/// Writes the `day_index,z_t,label` sidecar.
pub fn write_truth<W: std::io::Write>(truth: &[Truth], mut w: W) -> std::io::Result<()> {
    writeln!(w, "day_index,z_t,label")?;
    for t in truth {
        match t.label {
            Label::Class(c) => writeln!(w, "{},{:?},{}", t.day_index, t.z, c)?,
            Label::Rate(r) => writeln!(w, "{},{:?},{:?}", t.day_index, t.z, r)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate;

    fn small_dow(seed: u64) -> GenConfig {
        GenConfig {
            n_days: 21,
            txns_per_day: (50, 80),
            ..GenConfig::dayofweek(seed)
        }
    }

    #[test]
    fn dayofweek_labels_and_validity() {
        let g = generate_dayofweek(&small_dow(1)).unwrap();
        assert_eq!(g.dataset.len(), 21);
        for (d, day) in g.dataset.days.iter().enumerate() {
            assert_eq!(day.label, Label::Class((d % 7) as u8));
            assert!((50..=80).contains(&day.len()));
        }
        let report = validate(&g.dataset);
        assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn determinism() {
        let a = generate_dayofweek(&small_dow(5)).unwrap();
        let b = generate_dayofweek(&small_dow(5)).unwrap();
        let c = generate_dayofweek(&small_dow(6)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn config_errors() {
        let mut cfg = small_dow(1);
        cfg.n_days = 6;
        assert_eq!(generate_dayofweek(&cfg).unwrap_err(), GenError::TooFewDays(6));
        let mut cfg = small_dow(1);
        cfg.vocab.mcc = 0;
        assert!(matches!(generate_dayofweek(&cfg), Err(GenError::Vocabulary(_))));
        let mut cfg = GenConfig::defaultrate(1);
        cfg.ar_coeff = 1.0;
        assert_eq!(generate_defaultrate(&cfg).unwrap_err(), GenError::ArCoeff(1.0));
        assert!(generate_dayofweek(&GenConfig::defaultrate(1)).is_err());
    }

    #[test]
    fn zero_noise_gives_constant_labels() {
        let cfg = GenConfig {
            n_days: 30,
            txns_per_day: (10, 20),
            noise_std: 0.0,
            ..GenConfig::defaultrate(3)
        };
        let g = generate_defaultrate(&cfg).unwrap();
        let first = g.dataset.days[0].label;
        assert!(g.dataset.days.iter().all(|d| d.label == first));
        assert_eq!(first, Label::Rate(rate_from_latent(0.0)));
    }

    #[test]
    fn rates_stay_in_range() {
        let cfg = GenConfig {
            n_days: 300,
            txns_per_day: (5, 10),
            noise_std: 3.0,
            ..GenConfig::defaultrate(9)
        };
        let g = generate_defaultrate(&cfg).unwrap();
        for d in &g.dataset.days {
            let r = d.label.rate().unwrap();
            assert!((RATE_MIN..=RATE_MAX).contains(&r));
        }
        assert!(validate(&g.dataset).is_valid());
    }

    #[test]
    fn latent_lag_one_autocorrelation() {
        let cfg = GenConfig { n_days: 2000, ..GenConfig::defaultrate(11) };
        let z = latent_series(&cfg).unwrap();
        // Oracle: empirical lag-1 autocorrelation.
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var: f64 = z.iter().map(|v| (v - mean).powi(2)).sum();
        let cov: f64 = z.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        let rho = cov / var;
        assert!((rho - 0.9).abs() <= 0.05, "lag-1 autocorrelation {rho}");
    }

    #[test]
    fn motif_successor_is_a_full_cycle_per_class() {
        for shift in 1..=7 {
            let mut x = 1u32;
            let mut seen = std::collections::HashSet::new();
            for _ in 0..MOTIF_TIER {
                assert!(seen.insert(x));
                x = motif_successor(x, shift);
                assert!(in_tier(x));
            }
            assert_eq!(x, 1);
        }
    }

    #[test]
    fn background_is_a_distribution() {
        let p = background_mcc(40);
        assert_eq!(p[0], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let tier: f64 = p[1..=MOTIF_TIER].iter().sum();
        assert!((tier - TIER_MASS).abs() < 1e-12);
    }
}
