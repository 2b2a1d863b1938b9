//! Partitions and the information measures used to compare them.
//!
//! All entropies are in nats. Mutual information is computed from the
//! contingency table as `H(U) + H(V) - H(U, V)`, which makes `MI(U, U)`
//! equal `H(U)` bit for bit and so `AMI(U, U)` exactly 1.

use super::AnalysisError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    /// Labels must lie in `0..k`; `k >= 1`.
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self, AnalysisError> {
        if k == 0 {
            return Err(AnalysisError::Params("a partition needs at least one cluster".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(AnalysisError::Params(format!("cluster id {bad} outside 0..{k}")));
        }
        Ok(Self { labels, k })
    }

    /// `k` inferred as the largest label plus one.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let k = labels.iter().max().map_or(1, |m| m + 1);
        Self { labels, k }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// `-Σ (c/n) ln(c/n)` over non-empty counts, accumulated in slice order.
fn entropy_of_counts(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    let n = n as f64;
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let c = c as f64;
            (c / n) * (n / c).ln()
        })
        .sum()
}

pub fn entropy(u: &Partition) -> f64 {
    entropy_of_counts(u.counts().into_iter(), u.len())
}

fn check_pair(u: &Partition, v: &Partition) -> Result<(), AnalysisError> {
    if u.len() != v.len() {
        return Err(AnalysisError::Length { left: u.len(), right: v.len() });
    }
    if u.is_empty() {
        return Err(AnalysisError::Params("partitions are empty".into()));
    }
    Ok(())
}

/// Row-major `u.k() x v.k()` contingency counts.
pub fn contingency(u: &Partition, v: &Partition) -> Result<Vec<Vec<usize>>, AnalysisError> {
    check_pair(u, v)?;
    let mut t = vec![vec![0usize; v.k()]; u.k()];
    for (&a, &b) in u.labels.iter().zip(&v.labels) {
        t[a][b] += 1;
    }
    Ok(t)
}

pub fn mutual_information(u: &Partition, v: &Partition) -> Result<f64, AnalysisError> {
    let table = contingency(u, v)?;
    let n = u.len();
    let joint = entropy_of_counts(table.iter().flatten().copied(), n);
    let mi = entropy(u) + entropy(v) - joint;
    Ok(mi.max(0.0))
}

/// `ln(i!)` for `i` in `0..=n`.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for i in 1..=n {
        t[i] = t[i - 1] + (i as f64).ln();
    }
    t
}

/// Expected mutual information under random permutations with both
/// partitions' cluster sizes held fixed (hypergeometric model).
pub fn expected_mi(u: &Partition, v: &Partition) -> Result<f64, AnalysisError> {
    check_pair(u, v)?;
    let n = u.len();
    let nf = n as f64;
    let lf = ln_factorials(n);
    let a: Vec<usize> = u.counts().into_iter().filter(|&c| c > 0).collect();
    let b: Vec<usize> = v.counts().into_iter().filter(|&c| c > 0).collect();
    let mut emi = 0.0;
    for &ai in &a {
        for &bj in &b {
            let lo = (ai + bj).saturating_sub(n).max(1);
            let hi = ai.min(bj);
            let fixed = lf[ai] + lf[bj] + lf[n - ai] + lf[n - bj] - lf[n];
            for nij in lo..=hi {
                let x = nij as f64;
                let term = (x / nf) * (nf * x / (ai as f64 * bj as f64)).ln();
                let log_p = fixed - lf[nij] - lf[ai - nij] - lf[bj - nij] - lf[n + nij - ai - bj];
                emi += term * log_p.exp();
            }
        }
    }
    Ok(emi.max(0.0))
}

/// Same clustering up to relabelling.
fn equivalent(u: &Partition, v: &Partition) -> bool {
    let mut fwd = vec![None; u.k()];
    let mut back = vec![None; v.k()];
    for (&a, &b) in u.labels.iter().zip(&v.labels) {
        match (fwd[a], back[b]) {
            (None, None) => {
                fwd[a] = Some(b);
                back[b] = Some(a);
            }
            (Some(x), Some(y)) if x == b && y == a => {}
            _ => return false,
        }
    }
    true
}

/// Adjusted mutual information with max-entropy normalisation.
///
/// When the denominator vanishes (both partitions a single cluster) the
/// score is 1 for equivalent partitions and 0 otherwise.
pub fn ami(u: &Partition, v: &Partition) -> Result<f64, AnalysisError> {
    let mi = mutual_information(u, v)?;
    let emi = expected_mi(u, v)?;
    let denom = entropy(u).max(entropy(v)) - emi;
    if denom.abs() <= 1e-15 {
        log::warn!("AMI denominator is zero; falling back to partition equality");
        return Ok(if equivalent(u, v) { 1.0 } else { 0.0 });
    }
    Ok((mi - emi) / denom)
}
