//! Handcrafted per-day statistical features.
//!
//! Layout: per-field token frequencies (in canonical field order), then the
//! mean and count of each of [`AMOUNT_BINS`] equal-count amount bins, then
//! the day's transaction count.

use std::io::Write;

use crate::data::{Dataset, DayRecord, Field, VocabSizes};

pub const AMOUNT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct DayFeatureVector {
    pub values: Vec<f64>,
}

/// Total feature count for a vocabulary layout.
pub fn feature_len(vocab: &VocabSizes) -> usize {
    vocab.present().iter().map(|&(_, n)| n).sum::<usize>() + 2 * AMOUNT_BINS + 1
}

pub fn feature_names(vocab: &VocabSizes) -> Vec<String> {
    let mut names = Vec::with_capacity(feature_len(vocab));
    for (field, n) in vocab.present() {
        names.extend((0..n).map(|i| format!("{}_{i}", field.name())));
    }
    names.extend((0..AMOUNT_BINS).map(|b| format!("amount_bin{b}_mean")));
    names.extend((0..AMOUNT_BINS).map(|b| format!("amount_bin{b}_count")));
    names.push("n_txn".into());
    names
}

/// Bin `b` holds sorted positions `floor(b*M/10) .. floor((b+1)*M/10)`.
fn decile_bounds(m: usize, b: usize) -> (usize, usize) {
    (b * m / AMOUNT_BINS, (b + 1) * m / AMOUNT_BINS)
}

pub fn day_features(day: &DayRecord, vocab: &VocabSizes) -> DayFeatureVector {
    let mut values = Vec::with_capacity(feature_len(vocab));
    let m = day.transactions.len();
    for (field, n) in vocab.present() {
        let mut block = vec![0.0; n];
        for t in &day.transactions {
            if let Some(idx) = field.get(t) {
                if let Some(slot) = block.get_mut(idx as usize) {
                    *slot += 1.0;
                }
            }
        }
        if m > 0 {
            block.iter_mut().for_each(|v| *v /= m as f64);
        }
        values.extend(block);
    }
    let mut amounts: Vec<f64> = day.transactions.iter().map(|t| t.amount).collect();
    amounts.sort_by(f64::total_cmp);
    let mut means = [0.0; AMOUNT_BINS];
    let mut counts = [0.0; AMOUNT_BINS];
    for b in 0..AMOUNT_BINS {
        let (lo, hi) = decile_bounds(m, b);
        if hi > lo {
            means[b] = amounts[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            counts[b] = (hi - lo) as f64;
        }
    }
    values.extend(means);
    values.extend(counts);
    values.push(m as f64);
    DayFeatureVector { values }
}

pub fn dataset_features(ds: &Dataset) -> Vec<Vec<f64>> {
    ds.days
        .iter()
        .map(|d| day_features(d, &ds.vocab_sizes).values)
        .collect()
}

/// Feature matrix CSV: `day_index,<feature names...>`.
pub fn write_feature_csv<W: Write>(ds: &Dataset, mut w: W) -> std::io::Result<()> {
    let names = feature_names(&ds.vocab_sizes);
    writeln!(w, "day_index,{}", names.join(","))?;
    for day in &ds.days {
        let f = day_features(day, &ds.vocab_sizes);
        write!(w, "{}", day.day_index)?;
        for v in f.values {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Offsets of each frequency block in the layout.
pub fn block_ranges(vocab: &VocabSizes) -> Vec<(Field, std::ops::Range<usize>)> {
    let mut start = 0;
    vocab
        .present()
        .into_iter()
        .map(|(f, n)| {
            let r = start..start + n;
            start += n;
            (f, r)
        })
        .collect()
}
