//! Second-order gradient-boosted regression trees with exact greedy splits.
//!
//! Squared-error regression and softmax multiclass objectives share one tree
//! learner. Splits send `x[feature] < threshold` left; candidate thresholds
//! are midpoints between consecutive distinct values; ties in gain are broken
//! by lowest feature index, then lowest threshold.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("need at least 2 rows with matching targets, got {rows} rows and {targets} targets")]
    Shape { rows: usize, targets: usize },
    #[error("feature vector has {got} entries, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite feature at row {0}")]
    NonFinite(usize),
    #[error("multiclass needs k >= 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {0} has no training rows")]
    MissingClass(usize),
    #[error("label {label} outside 0..{k}")]
    LabelRange { label: usize, k: usize },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt model: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
    pub shrinkage: f64,
    pub l2_lambda: f64,
}

impl Default for BoostParams {
    /// 50 rounds of depth-3 trees, min child weight 1.
    fn default() -> Self {
        Self { n_rounds: 50, max_depth: 3, min_child_weight: 1.0, shrinkage: 0.1, l2_lambda: 1.0 }
    }
}

impl BoostParams {
    /// Settings used on SIF day embeddings: 75 rounds, depth 4.
    pub fn for_embeddings() -> Self {
        Self { n_rounds: 75, max_depth: 4, ..Self::default() }
    }

    fn check(&self) -> Result<(), GbtError> {
        if self.max_depth == 0 {
            return Err(GbtError::Params("max_depth must be positive".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage.is_finite()) {
            return Err(GbtError::Params("shrinkage must be positive".into()));
        }
        if !(self.min_child_weight >= 0.0 && self.l2_lambda >= 0.0) {
            return Err(GbtError::Params("min_child_weight and l2_lambda must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Nodes stored in pre-order; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self { nodes: vec![TreeNode::Leaf { value }] }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value } => Some(*value),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    SquaredError,
    Softmax { n_classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Value(f64),
    Probabilities(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub objective: Objective,
    pub params: BoostParams,
    pub n_features: usize,
    /// One entry per output (1 for regression, k for multiclass).
    pub base_score: Vec<f64>,
    /// `trees[round][output]`.
    pub trees: Vec<Vec<Tree>>,
    pub shrinkage: f64,
    /// Training loss before round 0 and after every round. Not persisted.
    pub train_loss: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Structure score term `G^2 / (H + lambda)`.
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        g * g / d
    } else {
        0.0
    }
}

pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(gl + gr, hl + hr, lambda))
}

pub fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        -g / d
    } else {
        0.0
    }
}

/// Best exact split of `rows`; `None` when no candidate has positive gain.
pub fn find_best_split(
    x: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    params: &BoostParams,
) -> Option<SplitCandidate> {
    let n_features = x.first().map_or(0, Vec::len);
    let g_total: f64 = rows.iter().map(|&r| grad[r]).sum();
    let h_total: f64 = rows.iter().map(|&r| hess[r]).sum();
    let mut best: Option<SplitCandidate> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
    for f in 0..n_features {
        order.clear();
        order.extend(rows.iter().map(|&r| (x[r][f], r)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut gl, mut hl) = (0.0, 0.0);
        for i in 0..order.len().saturating_sub(1) {
            let r = order[i].1;
            gl += grad[r];
            hl += hess[r];
            let (v, next) = (order[i].0, order[i + 1].0);
            if v == next {
                continue;
            }
            let (gr, hr) = (g_total - gl, h_total - hl);
            if hl < params.min_child_weight || hr < params.min_child_weight {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, params.l2_lambda);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate { feature: f, threshold: 0.5 * (v + next), gain });
            }
        }
    }
    best
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a BoostParams,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0 });
        let split = if depth < self.params.max_depth && rows.len() >= 2 {
            find_best_split(self.x, self.grad, self.hess, &rows, self.params)
        } else {
            None
        };
        match split {
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&i| self.x[i][s.feature] < s.threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] =
                    TreeNode::Split { feature: s.feature, threshold: s.threshold, left, right };
            }
            None => {
                let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
                let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
                self.nodes[id] = TreeNode::Leaf { value: leaf_value(g, h, self.params.l2_lambda) };
            }
        }
        id
    }
}

pub fn fit_tree(x: &[Vec<f64>], grad: &[f64], hess: &[f64], params: &BoostParams) -> Tree {
    let mut b = TreeBuilder { x, grad, hess, params, nodes: Vec::new() };
    b.grow((0..x.len()).collect(), 0);
    Tree { nodes: b.nodes }
}

fn check_matrix(x: &[Vec<f64>], n_targets: usize) -> Result<usize, GbtError> {
    if x.len() < 2 || x.len() != n_targets {
        return Err(GbtError::Shape { rows: x.len(), targets: n_targets });
    }
    let d = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(GbtError::Dimension { expected: d, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(GbtError::NonFinite(i));
        }
    }
    Ok(d)
}

fn squared_loss(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

pub fn fit_regression(x: &[Vec<f64>], y: &[f64], params: &BoostParams) -> Result<TreeEnsemble, GbtError> {
    params.check()?;
    let d = check_matrix(x, y.len())?;
    let base = y.iter().sum::<f64>() / y.len() as f64;
    let mut pred = vec![base; y.len()];
    let hess = vec![1.0; y.len()];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut train_loss = vec![squared_loss(&pred, y)];
    for _ in 0..params.n_rounds {
        let grad: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
        let tree = fit_tree(x, &grad, &hess, params);
        for (p, row) in pred.iter_mut().zip(x) {
            *p += params.shrinkage * tree.predict(row);
        }
        train_loss.push(squared_loss(&pred, y));
        trees.push(vec![tree]);
    }
    Ok(TreeEnsemble {
        objective: Objective::SquaredError,
        params: *params,
        n_features: d,
        base_score: vec![base],
        trees,
        shrinkage: params.shrinkage,
        train_loss,
    })
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn cross_entropy(scores: &[Vec<f64>], y: &[usize]) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(s, &c)| {
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - s[c]
        })
        .sum::<f64>()
        / y.len() as f64
}

pub fn fit_multiclass(
    x: &[Vec<f64>],
    y: &[usize],
    k: usize,
    params: &BoostParams,
) -> Result<TreeEnsemble, GbtError> {
    params.check()?;
    if k < 2 {
        return Err(GbtError::TooFewClasses(k));
    }
    let d = check_matrix(x, y.len())?;
    let mut counts = vec![0usize; k];
    for &c in y {
        if c >= k {
            return Err(GbtError::LabelRange { label: c, k });
        }
        counts[c] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(GbtError::MissingClass(missing));
    }
    let n = y.len();
    let base: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();
    let mut scores = vec![base.clone(); n];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut train_loss = vec![cross_entropy(&scores, y)];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..params.n_rounds {
        let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
        let mut round = Vec::with_capacity(k);
        for class in 0..k {
            for i in 0..n {
                let p = probs[i][class];
                grad[i] = p - if y[i] == class { 1.0 } else { 0.0 };
                hess[i] = (p * (1.0 - p)).max(1e-16);
            }
            round.push(fit_tree(x, &grad, &hess, params));
        }
        for (s, row) in scores.iter_mut().zip(x) {
            for (class, tree) in round.iter().enumerate() {
                s[class] += params.shrinkage * tree.predict(row);
            }
        }
        train_loss.push(cross_entropy(&scores, y));
        trees.push(round);
    }
    Ok(TreeEnsemble {
        objective: Objective::Softmax { n_classes: k },
        params: *params,
        n_features: d,
        base_score: base,
        trees,
        shrinkage: params.shrinkage,
        train_loss,
    })
}

impl TreeEnsemble {
    /// Raw additive scores, one per output.
    pub fn raw_scores(&self, x: &[f64]) -> Result<Vec<f64>, GbtError> {
        if x.len() != self.n_features {
            return Err(GbtError::Dimension { expected: self.n_features, got: x.len() });
        }
        let mut s = self.base_score.clone();
        for round in &self.trees {
            for (out, tree) in s.iter_mut().zip(round) {
                *out += self.shrinkage * tree.predict(x);
            }
        }
        Ok(s)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, GbtError> {
        let s = self.raw_scores(x)?;
        Ok(match self.objective {
            Objective::SquaredError => Prediction::Value(s[0]),
            Objective::Softmax { .. } => Prediction::Probabilities(softmax(&s)),
        })
    }

    pub fn predict_value(&self, x: &[f64]) -> Result<f64, GbtError> {
        Ok(self.raw_scores(x)?[0])
    }

    pub fn predict_class(&self, x: &[f64]) -> Result<usize, GbtError> {
        let s = self.raw_scores(x)?;
        Ok(argmax(&s))
    }

    pub fn n_outputs(&self) -> usize {
        self.base_score.len()
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    objective: Objective,
    params: BoostParams,
    n_features: usize,
    n_outputs: usize,
    base_score: Vec<f64>,
    shrinkage: f64,
    n_rounds: usize,
    /// Node count of every tree in `trees.bin` order.
    tree_sizes: Vec<usize>,
}

const MANIFEST_FORMAT: &str = "gbt-v1";
const NODE_BYTES: usize = 1 + 4 + 8 + 4 + 4 + 8;

fn encode_tree(t: &Tree, out: &mut Vec<u8>) {
    for node in &t.nodes {
        let (kind, feature, threshold, left, right, value) = match *node {
            TreeNode::Split { feature, threshold, left, right } => {
                (1u8, feature as u32, threshold, left as u32, right as u32, 0.0f64)
            }
            TreeNode::Leaf { value } => (0u8, 0, 0.0, 0, 0, value),
        };
        out.push(kind);
        out.extend_from_slice(&feature.to_le_bytes());
        out.extend_from_slice(&threshold.to_bits().to_le_bytes());
        out.extend_from_slice(&left.to_le_bytes());
        out.extend_from_slice(&right.to_le_bytes());
        out.extend_from_slice(&value.to_bits().to_le_bytes());
    }
}

fn decode_tree(bytes: &[u8]) -> Result<Tree, GbtError> {
    let n = bytes.len() / NODE_BYTES;
    let u32_at = |b: &[u8], o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |b: &[u8], o: usize| f64::from_bits(u64::from_le_bytes(b[o..o + 8].try_into().unwrap()));
    let mut nodes = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(NODE_BYTES) {
        let node = match rec[0] {
            0 => TreeNode::Leaf { value: f64_at(rec, 21) },
            1 => {
                let (left, right) = (u32_at(rec, 13), u32_at(rec, 17));
                if left >= n || right >= n {
                    return Err(GbtError::Corrupt("child offset out of range".into()));
                }
                TreeNode::Split { feature: u32_at(rec, 1), threshold: f64_at(rec, 5), left, right }
            }
            k => return Err(GbtError::Corrupt(format!("unknown node kind {k}"))),
        };
        nodes.push(node);
    }
    Ok(Tree { nodes })
}

impl TreeEnsemble {
    /// Writes `model.json` and `trees.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), GbtError> {
        std::fs::create_dir_all(dir)?;
        let mut blob = Vec::new();
        let mut tree_sizes = Vec::new();
        for round in &self.trees {
            for t in round {
                encode_tree(t, &mut blob);
                tree_sizes.push(t.nodes.len());
            }
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            objective: self.objective,
            params: self.params,
            n_features: self.n_features,
            n_outputs: self.n_outputs(),
            base_score: self.base_score.clone(),
            shrinkage: self.shrinkage,
            n_rounds: self.trees.len(),
            tree_sizes,
        };
        let mut f = std::fs::File::create(dir.join("model.json"))?;
        f.write_all(serde_json::to_string_pretty(&manifest).expect("manifest serialises").as_bytes())?;
        f.write_all(b"\n")?;
        std::fs::write(dir.join("trees.bin"), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, GbtError> {
        let text = std::fs::read_to_string(dir.join("model.json"))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| GbtError::Corrupt(e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(GbtError::Corrupt(format!("unknown format {}", m.format)));
        }
        let blob = std::fs::read(dir.join("trees.bin"))?;
        let total: usize = m.tree_sizes.iter().sum();
        if total * NODE_BYTES != blob.len() || m.tree_sizes.len() != m.n_rounds * m.n_outputs {
            return Err(GbtError::Corrupt("tree blob size does not match manifest".into()));
        }
        let mut offset = 0;
        let mut trees = Vec::with_capacity(m.n_rounds);
        for r in 0..m.n_rounds {
            let mut round = Vec::with_capacity(m.n_outputs);
            for o in 0..m.n_outputs {
                let n = m.tree_sizes[r * m.n_outputs + o];
                round.push(decode_tree(&blob[offset..offset + n * NODE_BYTES])?);
                offset += n * NODE_BYTES;
            }
            trees.push(round);
        }
        Ok(Self {
            objective: m.objective,
            params: m.params,
            n_features: m.n_features,
            base_score: m.base_score,
            trees,
            shrinkage: m.shrinkage,
            train_loss: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> crate::rng::Rng {
        crate::rng::Rng::seed_from_u64(seed)
    }

    #[test]
    fn defaults() {
        let p = BoostParams::default();
        assert_eq!((p.n_rounds, p.max_depth, p.min_child_weight), (50, 3, 1.0));
        let p = BoostParams::for_embeddings();
        assert_eq!((p.n_rounds, p.max_depth), (75, 4));
    }

    #[test]
    fn constant_target() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let y = vec![3.25; 20];
        let e = fit_regression(&x, &y, &BoostParams::default()).unwrap();
        assert_eq!(e.base_score, vec![3.25]);
        for round in &e.trees {
            assert!(round[0].leaves().all(|v| v == 0.0));
        }
        for row in &x {
            assert_eq!(e.predict_value(row).unwrap(), 3.25);
        }
    }

    #[test]
    fn constant_features_give_stump() {
        let x = vec![vec![1.0]; 10];
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let e = fit_regression(&x, &y, &BoostParams::default()).unwrap();
        assert!(e.trees.iter().all(|r| r[0].nodes.len() == 1));
    }

    #[test]
    fn four_point_depth_one_matches_exhaustive() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let y = [0.0, 0.1, 5.0, 5.2];
        let params = BoostParams { max_depth: 1, l2_lambda: 0.0, min_child_weight: 0.0, ..Default::default() };
        let grad: Vec<f64> = y.iter().map(|t| 2.575 - t).collect();
        let hess = vec![1.0; 4];
        // Oracle: SSE reduction of each of the 3 candidate cuts.
        let mut best = (f64::NEG_INFINITY, 0.0);
        for cut in 1..4 {
            let (l, r) = grad.split_at(cut);
            let gain = 0.5 * (l.iter().sum::<f64>().powi(2) / l.len() as f64
                + r.iter().sum::<f64>().powi(2) / r.len() as f64
                - grad.iter().sum::<f64>().powi(2) / 4.0);
            if gain > best.0 {
                best = (gain, cut as f64 + 0.5);
            }
        }
        let s = find_best_split(&x, &grad, &hess, &[0, 1, 2, 3], &params).unwrap();
        assert_eq!(s.threshold, best.1);
        assert_eq!(s.threshold, 2.5);
        assert!((s.gain - best.0).abs() < 1e-12);
    }

    #[test]
    fn separable_two_class() {
        let mut r = rng(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            let center = if c == 0 { -2.0 } else { 2.0 };
            x.push(vec![center + r.random::<f64>() - 0.5, r.random::<f64>()]);
            y.push(c);
        }
        let params = BoostParams { n_rounds: 10, ..Default::default() };
        let e = fit_multiclass(&x, &y, 2, &params).unwrap();
        let acc = x.iter().zip(&y).filter(|(row, &c)| e.predict_class(row).unwrap() == c).count();
        assert_eq!(acc, 60);
    }

    #[test]
    fn multiclass_errors() {
        let x = vec![vec![0.0]; 4];
        assert!(matches!(fit_multiclass(&x, &[0, 0, 0, 0], 1, &Default::default()), Err(GbtError::TooFewClasses(1))));
        assert!(matches!(fit_multiclass(&x, &[0, 0, 0, 0], 2, &Default::default()), Err(GbtError::MissingClass(1))));
    }

    #[test]
    fn empty_ensemble_predicts_base_and_dimension_checked() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]];
        let e = fit_regression(&x, &[1.0, 2.0, 6.0], &BoostParams { n_rounds: 0, ..Default::default() }).unwrap();
        assert_eq!(e.predict(&[5.0, 5.0]).unwrap(), Prediction::Value(3.0));
        assert!(matches!(e.predict(&[1.0]), Err(GbtError::Dimension { expected: 2, got: 1 })));
    }

    #[test]
    fn prediction_is_sum_of_trees() {
        let mut r = rng(8);
        let x: Vec<Vec<f64>> = (0..80).map(|_| (0..3).map(|_| r.random::<f64>()).collect()).collect();
        let y: Vec<usize> = x.iter().map(|v| ((v[0] * 2.0 + v[1]) * 1.2) as usize % 3).collect();
        let e = fit_multiclass(&x, &y, 3, &BoostParams { n_rounds: 12, ..Default::default() }).unwrap();
        for row in x.iter().take(10) {
            // Oracle: evaluate every tree on its own and accumulate.
            let mut s = e.base_score.clone();
            for round in &e.trees {
                for (c, t) in round.iter().enumerate() {
                    s[c] += e.shrinkage * t.predict(row);
                }
            }
            let Prediction::Probabilities(p) = e.predict(row).unwrap() else { panic!() };
            let expected = softmax(&s);
            for (a, b) in p.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-15);
            }
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn losses_non_increasing_and_min_child_weight_honoured() {
        let mut r = rng(21);
        let x: Vec<Vec<f64>> = (0..120).map(|_| (0..4).map(|_| r.random::<f64>()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0] * 3.0 - v[2] + 0.3 * r.random::<f64>()).collect();
        let params = BoostParams { min_child_weight: 5.0, ..Default::default() };
        let e = fit_regression(&x, &y, &params).unwrap();
        for w in e.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        // Every leaf receives at least 5 training rows (hessian 1 each).
        for round in &e.trees {
            let tree = &round[0];
            let mut hits = vec![0usize; tree.nodes.len()];
            for row in &x {
                let mut i = 0;
                while let TreeNode::Split { feature, threshold, left, right } = tree.nodes[i] {
                    i = if row[feature] < threshold { left } else { right };
                }
                hits[i] += 1;
            }
            for (i, n) in tree.nodes.iter().enumerate() {
                if matches!(n, TreeNode::Leaf { .. }) && tree.nodes.len() > 1 {
                    assert!(hits[i] >= 5);
                }
            }
            assert!(tree.depth() <= 3);
        }
        let yc: Vec<usize> = x.iter().map(|v| (v[1] * 4.0) as usize).collect();
        let e = fit_multiclass(&x, &yc, 4, &BoostParams::default()).unwrap();
        for w in e.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", e.train_loss);
        }
    }

    #[test]
    fn persistence_round_trip() {
        let mut r = rng(2);
        let x: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| r.random::<f64>()).collect()).collect();
        let y: Vec<usize> = x.iter().map(|v| (v[0] * 3.0) as usize).collect();
        let e = fit_multiclass(&x, &y, 3, &BoostParams { n_rounds: 5, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        e.save(dir.path()).unwrap();
        let back = TreeEnsemble::load(dir.path()).unwrap();
        assert_eq!(back.trees, e.trees);
        assert_eq!(back.base_score, e.base_score);
        for row in &x {
            assert_eq!(back.raw_scores(row).unwrap(), e.raw_scores(row).unwrap());
        }
    }
}
