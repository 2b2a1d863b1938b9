//! K-means with k-means++ seeding and Lloyd iterations.

use rand::Rng as _;

use super::partition::Partition;
use super::AnalysisError;
use crate::rng::{self, tags};

pub const MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub partition: Partition,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_matrix(x: &[Vec<f64>]) -> Result<usize, AnalysisError> {
    let d = x.first().map_or(0, Vec::len);
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(AnalysisError::Params(format!("row {i} has {} columns, expected {d}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(AnalysisError::Params(format!("row {i} is not finite")));
        }
    }
    Ok(d)
}

/// D² sampling: each new centre drawn with probability proportional to the
/// squared distance to the nearest existing centre.
fn plus_plus(x: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![x[rng.random_range(0..x.len())].clone()];
    let mut nearest: Vec<f64> = x.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = x.len() - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // Fewer distinct points than k: any point will do.
            rng.random_range(0..x.len())
        };
        centroids.push(x[next].clone());
        for (n, p) in nearest.iter_mut().zip(x) {
            *n = n.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Nearest centre per point (ties go to the lower index) and the inertia.
fn assign(x: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (p, l) in x.iter().zip(labels.iter_mut()) {
        let (best, d) = centroids
            .iter()
            .enumerate()
            .map(|(c, m)| (c, sq_dist(p, m)))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        *l = best;
        inertia += d;
    }
    inertia
}

/// Means of assigned points. An empty cluster takes the point farthest from
/// its own centre, which is then claimed so no two clusters share it.
fn update(x: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let d = centroids[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in x.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    let mut claimed = vec![false; x.len()];
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            let far = x
                .iter()
                .enumerate()
                .filter(|(i, _)| !claimed[*i])
                .map(|(i, p)| (i, sq_dist(p, &centroids[labels[i]])))
                .fold((usize::MAX, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
                .0;
            if far != usize::MAX {
                claimed[far] = true;
                centroids[c] = x[far].clone();
            }
        }
    }
}

fn lloyd(x: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> KMeansResult {
    let mut centroids = plus_plus(x, k, rng);
    let mut labels = vec![usize::MAX; x.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut prev: Option<Vec<usize>> = None;
    while iterations < MAX_ITER {
        let inertia = assign(x, &centroids, &mut labels);
        trace.push(inertia);
        iterations += 1;
        if prev.as_deref() == Some(labels.as_slice()) {
            break;
        }
        update(x, &labels, &mut centroids);
        prev = Some(labels.clone());
    }
    let inertia = *trace.last().expect("at least one iteration");
    KMeansResult { partition: Partition::new(labels, k).expect("labels < k"), centroids, inertia, trace, iterations }
}

/// Best-inertia clustering over `restarts` independent k-means++ starts.
/// Each restart draws from its own substream, so results depend only on `seed`.
pub fn kmeans(x: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeansResult, AnalysisError> {
    if k == 0 || x.len() < k {
        return Err(AnalysisError::Params(format!("k-means needs n >= k >= 1, got n={} k={k}", x.len())));
    }
    if restarts == 0 {
        return Err(AnalysisError::Params("restarts must be positive".into()));
    }
    check_matrix(x)?;
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts {
        let mut rng = rng::substream(seed, &[tags::KMEANS, r as u64]);
        let run = lloyd(x, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts > 0"))
}
