//! Central finite-difference gradient checks.

use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Tensor, Var};
use super::loss;
use super::model::{Architecture, Bound, ConvSpec, ModelConfig, SequenceModel};
use crate::data::{Field, Transaction, VocabSizes};
use crate::rng::Rng;

pub const DELTA: f64 = 1e-5;

/// Relative error with a floor so that two near-zero values compare equal.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between backprop and central differences of the
/// scalar built by `f` over every entry of every input.
pub fn max_rel_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);
    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[i].len());
        for j in 0..inputs[i].len() {
            let x = inputs[i].data[j];
            work[i].data[j] = x + DELTA;
            let up = eval(&work);
            work[i].data[j] = x - DELTA;
            let down = eval(&work);
            work[i].data[j] = x;
            worst = worst.max(rel_err(analytic[j], (up - down) / (2.0 * DELTA)));
        }
    }
    worst
}

fn randn(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    Tensor::new(rows, cols, (0..rows * cols).map(|_| n.sample(rng)).collect())
}

/// Reduces a tensor to a scalar through a fixed random weighting.
fn weighted_sum(g: &mut Graph, x: Var, w: &Tensor) -> Var {
    let c = g.constant(w.clone());
    let p = g.mul(x, c);
    g.sum(p)
}

/// Names of the ops covered by [`op_suite`].
pub const OPS: &[&str] = &[
    "matmul", "add", "sub", "mul", "add_row", "scale", "add_scalar", "relu", "sigmoid", "tanh",
    "square", "conv1d", "max_pool", "mean_rows", "sum", "gather", "concat_cols", "stack_rows",
    "row", "slice_cols", "cross_entropy", "mse", "triplet",
];

/// Worst relative error of `op` over `trials` random shapes.
pub fn check_op(op: &str, seed: u64, trials: usize) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let r = rng.random_range(1..5);
        let c = rng.random_range(1..6);
        let err = match op {
            "matmul" => {
                let k = rng.random_range(1..5);
                let a = randn(&mut rng, r, k);
                let b = randn(&mut rng, k, c);
                let w = randn(&mut rng, r, c);
                max_rel_error(&[a, b], |g, v| {
                    let y = g.matmul(v[0], v[1]);
                    weighted_sum(g, y, &w)
                })
            }
            "add" | "sub" | "mul" => {
                let a = randn(&mut rng, r, c);
                let b = randn(&mut rng, r, c);
                let w = randn(&mut rng, r, c);
                max_rel_error(&[a, b], |g, v| {
                    let y = match op {
                        "add" => g.add(v[0], v[1]),
                        "sub" => g.sub(v[0], v[1]),
                        _ => g.mul(v[0], v[1]),
                    };
                    weighted_sum(g, y, &w)
                })
            }
            "add_row" => {
                let a = randn(&mut rng, r, c);
                let b = randn(&mut rng, 1, c);
                let w = randn(&mut rng, r, c);
                max_rel_error(&[a, b], |g, v| {
                    let y = g.add_row(v[0], v[1]);
                    weighted_sum(g, y, &w)
                })
            }
            "scale" | "add_scalar" | "relu" | "sigmoid" | "tanh" | "square" | "mean_rows" => {
                let a = randn(&mut rng, r, c);
                let s = rng.random_range(-2.0..2.0);
                let w = if op == "mean_rows" { randn(&mut rng, 1, c) } else { randn(&mut rng, r, c) };
                max_rel_error(&[a], |g, v| {
                    let y = match op {
                        "scale" => g.scale(v[0], s),
                        "add_scalar" => g.add_scalar(v[0], s),
                        "relu" => g.relu(v[0]),
                        "sigmoid" => g.sigmoid(v[0]),
                        "tanh" => g.tanh(v[0]),
                        "square" => g.square(v[0]),
                        _ => g.mean_rows(v[0]),
                    };
                    weighted_sum(g, y, &w)
                })
            }
            "conv1d" => {
                let n = rng.random_range(1..9);
                let kernel = [1, 3, 5][rng.random_range(0..3)];
                let x = randn(&mut rng, n, c);
                let wt = randn(&mut rng, r, kernel * c);
                let b = randn(&mut rng, 1, r);
                let w = randn(&mut rng, n, r);
                max_rel_error(&[x, wt, b], |g, v| {
                    let y = g.conv1d(v[0], v[1], v[2], kernel);
                    weighted_sum(g, y, &w)
                })
            }
            "max_pool" => {
                let width = rng.random_range(1..4);
                let n = width * rng.random_range(1..4) + rng.random_range(0..width);
                let x = randn(&mut rng, n, c);
                let w = randn(&mut rng, n / width, c);
                max_rel_error(&[x], |g, v| {
                    let y = g.max_pool(v[0], width);
                    weighted_sum(g, y, &w)
                })
            }
            "sum" => {
                let a = randn(&mut rng, r, c);
                max_rel_error(&[a], |g, v| {
                    let s = g.square(v[0]);
                    g.sum(s)
                })
            }
            "gather" => {
                let idx: Vec<usize> = (0..rng.random_range(1..8)).map(|_| rng.random_range(0..r)).collect();
                let t = randn(&mut rng, r, c);
                let w = randn(&mut rng, idx.len(), c);
                max_rel_error(&[t], |g, v| {
                    let y = g.gather(v[0], &idx);
                    weighted_sum(g, y, &w)
                })
            }
            "concat_cols" => {
                let a = randn(&mut rng, r, c);
                let b = randn(&mut rng, r, 2);
                let w = randn(&mut rng, r, c + 2);
                max_rel_error(&[a, b], |g, v| {
                    let y = g.concat_cols(&[v[0], v[1]]);
                    weighted_sum(g, y, &w)
                })
            }
            "stack_rows" | "row" | "slice_cols" => {
                let a = randn(&mut rng, 1, c);
                let b = randn(&mut rng, 1, c);
                let t = rng.random_range(0..2);
                let start = rng.random_range(0..c);
                let len = rng.random_range(1..=c - start);
                let w2 = randn(&mut rng, 2, c);
                let w1 = randn(&mut rng, 1, c);
                let ws = randn(&mut rng, 1, len);
                max_rel_error(&[a, b], |g, v| {
                    let s = g.stack_rows(&[v[0], v[1]]);
                    match op {
                        "stack_rows" => weighted_sum(g, s, &w2),
                        "row" => {
                            let y = g.row(s, t);
                            weighted_sum(g, y, &w1)
                        }
                        _ => {
                            let y = g.slice_cols(v[t], start, len);
                            weighted_sum(g, y, &ws)
                        }
                    }
                })
            }
            "cross_entropy" => {
                let k = rng.random_range(2..8);
                let z = randn(&mut rng, 1, k);
                let label = rng.random_range(0..k);
                max_rel_error(&[z], |g, v| loss::cross_entropy(g, v[0], label))
            }
            "mse" => {
                let p = randn(&mut rng, 1, 1);
                let target = rng.random_range(-1.0..1.0);
                max_rel_error(&[p], |g, v| loss::mse(g, v[0], target))
            }
            "triplet" => loop {
                let a = randn(&mut rng, 1, c);
                let p = randn(&mut rng, 1, c);
                let n = randn(&mut rng, 1, c);
                let margin = rng.random_range(0.0..3.0);
                let d = |x: &Tensor, y: &Tensor| x.data.iter().zip(&y.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                // Stay away from the hinge.
                if (d(&a, &p) - d(&a, &n) + margin).abs() < 1e-2 {
                    continue;
                }
                break max_rel_error(&[a, p, n], |g, v| loss::triplet(g, v[0], v[1], v[2], margin));
            },
            other => panic!("unknown op {other}"),
        };
        worst = worst.max(err);
    }
    worst
}

fn random_window(rng: &mut Rng, vocab: &VocabSizes, n: usize) -> Vec<Transaction> {
    (0..n)
        .map(|_| Transaction {
            mcc: rng.random_range(0..vocab.mcc as u32),
            txn_type: rng.random_range(0..vocab.txn_type as u32),
            currency: None,
            country: None,
            time_hours: rng.random_range(0.0..24.0),
            amount: rng.random_range(-50.0..300.0),
        })
        .collect()
}

/// Worst relative error over all parameters of a random small model of
/// `arch`, across `trials` random configurations, windows and targets.
pub fn check_architecture(arch: Architecture, seed: u64, trials: usize) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let vocab = VocabSizes { mcc: rng.random_range(3..8), txn_type: rng.random_range(2..4), currency: None, country: None };
        let k = rng.random_range(1..5);
        let (n, cfg) = match arch {
            Architecture::Cnn => {
                let layers = rng.random_range(1..4);
                let pool = rng.random_range(1..3);
                let cfg = ModelConfig {
                    architecture: arch,
                    vocab,
                    embed_dims: vec![(Field::Mcc, rng.random_range(1..4)), (Field::TxnType, 2)],
                    hidden: 0,
                    rnn_layers: 0,
                    conv: ConvSpec { layers, channels: rng.random_range(1..5), kernel: [3, 5][rng.random_range(0..2)], pool },
                    n_outputs: k,
                    numeric_features: true,
                };
                (cfg.min_len() + rng.random_range(0..6), cfg)
            }
            Architecture::Indrnn | Architecture::Lstm => {
                let cfg = ModelConfig {
                    architecture: arch,
                    vocab,
                    embed_dims: vec![(Field::Mcc, rng.random_range(1..4)), (Field::TxnType, 2)],
                    hidden: if arch == Architecture::Indrnn { 7 } else { rng.random_range(1..6) },
                    rnn_layers: rng.random_range(1..3),
                    conv: ConvSpec::default(),
                    n_outputs: k,
                    numeric_features: true,
                };
                (if arch == Architecture::Indrnn { 20 } else { rng.random_range(1..10) }, cfg)
            }
        };
        let mut model = SequenceModel::init(cfg, seed ^ trial as u64).expect("valid config");
        // Non-zero biases so that no pre-activation sits exactly on a kink.
        for p in &mut model.params.params {
            if p.name.ends_with(".b") {
                p.value.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        }
        let window = random_window(&mut rng, &model.config.vocab, n);
        let label = rng.random_range(0..k.max(2));
        let target = rng.random_range(0.0..1.0);
        let inputs: Vec<Tensor> = model.params.params.iter().map(|p| p.value.clone()).collect();
        let err = max_rel_error(&inputs, |g, v| {
            let b = Bound { vars: v.to_vec() };
            let (_, out) = model.forward(g, &b, &window).expect("forward");
            if k >= 2 {
                loss::cross_entropy(g, out, label)
            } else {
                loss::mse(g, out, target)
            }
        });
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        for (i, op) in OPS.iter().enumerate() {
            let err = check_op(op, 100 + i as u64, 20);
            assert!(err <= 1e-4, "{op}: relative error {err:e}");
        }
    }

    #[test]
    fn architectures_match_finite_differences() {
        for arch in [Architecture::Cnn, Architecture::Indrnn, Architecture::Lstm] {
            let err = check_architecture(arch, 7, 5);
            assert!(err <= 1e-4, "{arch:?}: relative error {err:e}");
        }
    }

    #[test]
    fn sum_of_losses_backward_is_linear() {
        let mut rng = Rng::seed_from_u64(1);
        let z = randn(&mut rng, 1, 5);
        let grad = |labels: &[usize]| {
            let mut g = Graph::new();
            let v = g.param(z.clone());
            let ls: Vec<Var> = labels.iter().map(|&l| loss::cross_entropy(&mut g, v, l)).collect();
            let s = g.stack_rows(&ls);
            let total = g.sum(s);
            g.backward(total).get(v).unwrap().to_vec()
        };
        let both = grad(&[1, 3]);
        let a = grad(&[1]);
        let b = grad(&[3]);
        for j in 0..5 {
            assert!((both[j] - a[j] - b[j]).abs() < 1e-14);
        }
    }
}
