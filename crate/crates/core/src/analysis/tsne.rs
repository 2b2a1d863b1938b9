//! Exact t-SNE for a few hundred points.
//!
//! Per-point Gaussian bandwidths are found by bisection on the conditional
//! entropy; the symmetrised affinities are matched by a Student-t kernel in
//! 2-D with momentum gradient descent and per-coordinate adaptive gains.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kmeans::check_matrix;
use super::AnalysisError;
use crate::rng::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl TsneConfig {
    pub fn new(seed: u64) -> Self {
        Self { perplexity: 30.0, iterations: 1000, learning_rate: 200.0, exaggeration: 12.0, exaggeration_iters: 250, seed }
    }
}

/// KL divergence is recorded every this many iterations.
pub const KL_EVERY: usize = 50;
const MIN_POINTS: usize = 10;
const BISECT_MAX: usize = 200;
const ENTROPY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// `(iteration, KL(P || Q))` with the unexaggerated P; iteration counts
    /// completed steps.
    pub kl_trace: Vec<(usize, f64)>,
    /// Perplexity reached by each conditional distribution.
    pub perplexities: Vec<f64>,
}

fn sq_distances(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Row `i` of the conditional affinities for precision `beta`, with its
/// entropy in nats.
fn conditional_row(d: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let dmin = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(j, &v)| if j == i { 0.0 } else { (-beta * (v - dmin)).exp() })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    let h = -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
    (p, h)
}

/// Conditional affinities `P(j | i)` matching `perplexity` per row, and the
/// perplexity each row actually reached.
pub fn conditional_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>), AnalysisError> {
    let n = x.len();
    if n < MIN_POINTS {
        return Err(AnalysisError::Params(format!("t-SNE needs at least {MIN_POINTS} points, got {n}")));
    }
    check_matrix(x)?;
    if !(perplexity >= 1.0 && perplexity < (n as f64 - 1.0) / 3.0) {
        return Err(AnalysisError::Perplexity { perplexity, n });
    }
    let target = perplexity.ln();
    let d = sq_distances(x);
    let mut rows = Vec::with_capacity(n);
    let mut reached = Vec::with_capacity(n);
    for (i, di) in d.iter().enumerate() {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let (mut p, mut h) = conditional_row(di, i, beta);
        for _ in 0..BISECT_MAX {
            if (h - target).abs() < ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            (p, h) = conditional_row(di, i, beta);
        }
        reached.push(h.exp());
        rows.push(p);
    }
    Ok((rows, reached))
}

fn kl(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (pr, qr) in p.iter().zip(q) {
        for (&a, &b) in pr.iter().zip(qr) {
            if a > 0.0 {
                s += a * (a / b.max(1e-300)).ln();
            }
        }
    }
    s
}

/// Student-t kernel values and normalised Q.
fn low_dim_affinities(y: &[[f64; 2]]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = y.len();
    let mut num = vec![vec![0.0; n]; n];
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i][j] = v;
            num[j][i] = v;
            z += 2.0 * v;
        }
    }
    let q = num.iter().map(|r| r.iter().map(|v| v / z).collect()).collect();
    (num, q)
}

pub fn tsne(x: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult, AnalysisError> {
    let (cond, perplexities) = conditional_affinities(x, cfg.perplexity)?;
    let n = x.len();
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            p[i][j] = (cond[i][j] + cond[j][i]) / (2.0 * n as f64);
        }
    }

    let mut rng = rng::substream(cfg.seed, &[tags::TSNE]);
    let init = Normal::new(0.0, 1e-2).expect("valid sd");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_trace = Vec::new();

    for iter in 0..cfg.iterations {
        let exaggerate = iter < cfg.exaggeration_iters;
        let scale = if exaggerate { cfg.exaggeration } else { 1.0 };
        let momentum = if exaggerate { 0.5 } else { 0.8 };
        if iter == cfg.exaggeration_iters {
            // The second phase starts from rest with fresh gains.
            velocity.iter_mut().for_each(|v| *v = [0.0; 2]);
            gains.iter_mut().for_each(|g| *g = [1.0; 2]);
        }
        let (num, q) = low_dim_affinities(&y);
        if iter % KL_EVERY == 0 {
            kl_trace.push((iter, kl(&p, &q)));
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let m = 4.0 * (scale * p[i][j] - q[i][j]) * num[i][j];
                grad[0] += m * (y[i][0] - y[j][0]);
                grad[1] += m * (y[i][1] - y[j][1]);
            }
            for c in 0..2 {
                let g = &mut gains[i][c];
                *g = if (grad[c] > 0.0) != (velocity[i][c] > 0.0) { *g + 0.2 } else { (*g * 0.8).max(0.01) };
                velocity[i][c] = momentum * velocity[i][c] - cfg.learning_rate * *g * grad[c];
            }
        }
        for (yi, vi) in y.iter_mut().zip(&velocity) {
            yi[0] += vi[0];
            yi[1] += vi[1];
        }
        let mean = y.iter().fold([0.0; 2], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        for yi in &mut y {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
    }
    let (_, q) = low_dim_affinities(&y);
    kl_trace.push((cfg.iterations, kl(&p, &q)));
    Ok(TsneResult { coords: y, kl_trace, perplexities })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Mean silhouette coefficient of `labels` on 2-D points.
    fn silhouette(y: &[[f64; 2]], labels: &[usize]) -> f64 {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut total = 0.0;
        for (i, yi) in y.iter().enumerate() {
            let mut sums = vec![0.0; k];
            let mut counts = vec![0usize; k];
            for (j, yj) in y.iter().enumerate() {
                if i != j {
                    sums[labels[j]] += dist(yi, yj);
                    counts[labels[j]] += 1;
                }
            }
            let own = labels[i];
            if counts[own] == 0 {
                continue;
            }
            let a = sums[own] / counts[own] as f64;
            let b = (0..k)
                .filter(|&c| c != own && counts[c] > 0)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if b.is_finite() {
                total += (b - a) / a.max(b);
            }
        }
        total / y.len() as f64
    }

    fn blobs(seed: u64, k: usize, per: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng::substream(seed, &[1]);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..k {
            let centre: Vec<f64> = (0..5).map(|d| if d == c { spread } else { 0.0 }).collect();
            for _ in 0..per {
                x.push(centre.iter().map(|m| m + unit.sample(&mut r)).collect());
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn bandwidths_hit_the_perplexity() {
        let (x, _) = blobs(1, 3, 20, 5.0);
        let (rows, reached) = conditional_affinities(&x, 15.0).unwrap();
        assert!(reached.iter().all(|p| (p - 15.0).abs() < 1e-5), "{reached:?}");
        for r in &rows {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_infeasible_perplexity() {
        let (x, _) = blobs(1, 2, 10, 5.0);
        assert!(matches!(conditional_affinities(&x, 10.0), Err(AnalysisError::Perplexity { .. })));
        assert!(conditional_affinities(&x[..5], 1.0).is_err());
    }

    #[test]
    fn three_blobs_separate_and_kl_falls() {
        for seed in 0..4 {
            let (x, labels) = blobs(seed, 3, 50, 10.0);
            let r = tsne(&x, &TsneConfig::new(seed)).unwrap();
            assert!(silhouette(&r.coords, &labels) >= 0.5);
            let post: Vec<f64> = r.kl_trace.iter().filter(|(i, _)| *i >= 250).map(|e| e.1).collect();
            assert!(post.windows(2).all(|w| w[1] <= w[0]), "seed {seed}: {:?}", r.kl_trace);
        }
    }

    #[test]
    fn small_sets_descend_with_a_smaller_step() {
        for seed in 0..6 {
            let (x, _) = blobs(seed, 3, 30, 10.0);
            let cfg = TsneConfig { perplexity: 20.0, learning_rate: 50.0, ..TsneConfig::new(seed) };
            let r = tsne(&x, &cfg).unwrap();
            let post: Vec<f64> = r.kl_trace.iter().filter(|(i, _)| *i >= 250).map(|e| e.1).collect();
            assert!(post.windows(2).all(|w| w[1] <= w[0]), "seed {seed}: {:?}", r.kl_trace);
        }
    }

    #[test]
    fn duplicated_points_land_together() {
        let (mut x, _) = blobs(3, 2, 25, 4.0);
        x[49] = x[0].clone();
        let r = tsne(&x, &TsneConfig { perplexity: 10.0, ..TsneConfig::new(3) }).unwrap();
        let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut all: Vec<f64> = (0..50).flat_map(|i| (i + 1..50).map(move |j| (i, j))).map(|(i, j)| d(r.coords[i], r.coords[j])).collect();
        all.sort_by(f64::total_cmp);
        assert!(d(r.coords[0], r.coords[49]) < all[all.len() / 2]);
    }

    #[test]
    fn deterministic_per_seed() {
        let (x, _) = blobs(4, 2, 10, 4.0);
        let cfg = TsneConfig { perplexity: 5.0, iterations: 300, ..TsneConfig::new(4) };
        assert_eq!(tsne(&x, &cfg).unwrap(), tsne(&x, &cfg).unwrap());
    }
}
