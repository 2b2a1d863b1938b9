//! Training objectives built from graph ops.

use super::graph::{Graph, Tensor, Var};

/// `-log softmax(logits)[label]`.
pub fn cross_entropy(g: &mut Graph, logits: Var, label: usize) -> Var {
    assert!(g.shape(logits).1 >= 2, "cross-entropy needs at least two classes");
    g.cross_entropy(logits, label)
}

/// `(pred - target)^2` for a `1 x 1` prediction.
pub fn mse(g: &mut Graph, pred: Var, target: f64) -> Var {
    let t = g.constant(Tensor::scalar(target));
    let d = g.sub(pred, t);
    g.square(d)
}

fn sq_dist(g: &mut Graph, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let s = g.square(d);
    g.sum(s)
}

/// `max(0, |a-p|^2 - |a-n|^2 + margin)`.
pub fn triplet(g: &mut Graph, anchor: Var, positive: Var, negative: Var, margin: f64) -> Var {
    let dp = sq_dist(g, anchor, positive);
    let dn = sq_dist(g, anchor, negative);
    let diff = g.sub(dp, dn);
    let shifted = g.add_scalar(diff, margin);
    g.relu(shifted)
}

/// Mean triplet loss over every (anchor, positive, negative) in the batch.
/// `None` when the batch has no valid triplet.
pub fn batch_triplet(g: &mut Graph, embeddings: &[Var], labels: &[usize], margin: f64) -> Option<Var> {
    let mut terms = Vec::new();
    for (a, &la) in labels.iter().enumerate() {
        for (p, &lp) in labels.iter().enumerate() {
            if p == a || lp != la {
                continue;
            }
            for (n, &ln) in labels.iter().enumerate() {
                if ln == la {
                    continue;
                }
                terms.push(triplet(g, embeddings[a], embeddings[p], embeddings[n], margin));
            }
        }
    }
    if terms.is_empty() {
        return None;
    }
    let count = terms.len() as f64;
    let stacked = g.stack_rows(&terms);
    let total = g.sum(stacked);
    Some(g.scale(total, 1.0 / count))
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(g: &mut Graph, v: &[f64]) -> Var {
        g.param(Tensor::row_vector(v.to_vec()))
    }

    #[test]
    fn mse_values_and_gradient() {
        let mut g = Graph::new();
        let p = row(&mut g, &[0.1]);
        let l = mse(&mut g, p, 0.1);
        assert_eq!(g.value(l).item(), 0.0);
        let p = row(&mut g, &[0.0]);
        let l = mse(&mut g, p, 0.1);
        assert!((g.value(l).item() - 0.01).abs() < 1e-15);
        let grads = g.backward(l);
        assert!((grads.get(p).unwrap()[0] - 2.0 * (0.0 - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn triplet_cases() {
        let mut g = Graph::new();
        let a = row(&mut g, &[1.0, 2.0]);
        let p = row(&mut g, &[1.0, 2.0]);
        let n = row(&mut g, &[3.0, 2.0]);
        let l = triplet(&mut g, a, p, n, 1.0);
        assert_eq!(g.value(l).item(), 0.0);
        // a = n: loss = |a-p|^2 + margin.
        let p2 = row(&mut g, &[0.0, 0.0]);
        let l = triplet(&mut g, a, p2, a, 0.5);
        assert!((g.value(l).item() - 5.5).abs() < 1e-12);
    }

    #[test]
    fn batch_without_negatives_signals_skip() {
        let mut g = Graph::new();
        let e: Vec<Var> = (0..3).map(|i| row(&mut g, &[i as f64])).collect();
        assert!(batch_triplet(&mut g, &e, &[2, 2, 2], 1.0).is_none());
        assert!(batch_triplet(&mut g, &e[..2], &[0, 1], 1.0).is_none());
        assert!(batch_triplet(&mut g, &e, &[0, 0, 1], 1.0).is_some());
    }

    #[test]
    fn softmax_normalizes() {
        let p = softmax(&[1.0, -3.0, 700.0, 0.25, 2.5, -1e3, 8.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
    }
}
