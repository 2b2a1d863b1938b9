//! Sequence models: token embeddings, the CNN / IndRNN / LSTM encoders and
//! a linear head.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Tensor, Var};
use super::NnError;
use crate::data::{Field, Transaction, VocabSizes};
use crate::rng::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cnn,
    Indrnn,
    Lstm,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::Indrnn => "indrnn",
            Architecture::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cnn" => Some(Architecture::Cnn),
            "indrnn" => Some(Architecture::Indrnn),
            "lstm" => Some(Architecture::Lstm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub layers: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Max-pool width after each block; 1 disables pooling.
    pub pool: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self { layers: 3, channels: 64, kernel: 5, pool: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub vocab: VocabSizes,
    /// Embedded fields in concatenation order with their dimensions.
    pub embed_dims: Vec<(Field, usize)>,
    /// Hidden size for recurrent models.
    pub hidden: usize,
    pub rnn_layers: usize,
    pub conv: ConvSpec,
    pub n_outputs: usize,
    /// Append signed log1p(amount) and time/24 to every position.
    pub numeric_features: bool,
}

impl ModelConfig {
    /// Full-size configuration for an architecture.
    pub fn reference(architecture: Architecture, vocab: VocabSizes, n_outputs: usize) -> Self {
        let (embed_dims, hidden, rnn_layers) = match architecture {
            Architecture::Indrnn => {
                let mut dims = vec![(Field::Mcc, 36), (Field::TxnType, 18)];
                if vocab.country.is_some() {
                    dims.push((Field::Country, 16));
                }
                if vocab.currency.is_some() {
                    dims.push((Field::Currency, 16));
                }
                (dims, 100, 2)
            }
            Architecture::Cnn => (vec![(Field::Mcc, 77), (Field::TxnType, 25)], 64, 0),
            Architecture::Lstm => (vec![(Field::Mcc, 77), (Field::TxnType, 25)], 100, 1),
        };
        Self {
            architecture,
            vocab,
            embed_dims,
            hidden,
            rnn_layers,
            conv: ConvSpec::default(),
            n_outputs,
            numeric_features: true,
        }
    }

    /// Reduced dimensions for single-core runs.
    pub fn compact(architecture: Architecture, vocab: VocabSizes, n_outputs: usize) -> Self {
        let (hidden, rnn_layers) = match architecture {
            Architecture::Cnn => (24, 0),
            Architecture::Indrnn => (24, 2),
            Architecture::Lstm => (24, 1),
        };
        Self {
            architecture,
            vocab,
            embed_dims: vec![(Field::Mcc, 8), (Field::TxnType, 3)],
            hidden,
            rnn_layers,
            conv: ConvSpec { layers: 3, channels: 24, kernel: 5, pool: 2 },
            n_outputs,
            numeric_features: true,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embed_dims.iter().map(|&(_, d)| d).sum::<usize>() + if self.numeric_features { 2 } else { 0 }
    }

    /// Size of the day embedding.
    pub fn embedding_dim(&self) -> usize {
        match self.architecture {
            Architecture::Cnn => self.conv.channels,
            Architecture::Indrnn | Architecture::Lstm => self.hidden,
        }
    }

    /// Shortest window the encoder accepts.
    pub fn min_len(&self) -> usize {
        match self.architecture {
            Architecture::Cnn => self.conv.kernel.max(self.conv.pool.pow(self.conv.layers as u32)),
            _ => 1,
        }
    }

    pub fn check(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.n_outputs == 0 {
            return bad("head output size must be at least 1".into());
        }
        if self.input_dim() == 0 {
            return bad("model has no input features".into());
        }
        for &(f, d) in &self.embed_dims {
            if self.vocab.get(f).is_none() {
                return bad(format!("field {} is embedded but absent from the dataset", f.name()));
            }
            if d == 0 {
                return bad(format!("embedding dimension for {} must be positive", f.name()));
            }
        }
        match self.architecture {
            Architecture::Cnn => {
                let c = &self.conv;
                if c.layers == 0 || c.channels == 0 || c.pool == 0 || c.kernel.is_multiple_of(2) {
                    return bad("conv spec needs layers, channels, pool >= 1 and an odd kernel".into());
                }
            }
            Architecture::Indrnn | Architecture::Lstm => {
                if self.hidden == 0 || self.rnn_layers == 0 {
                    return bad("recurrent models need hidden >= 1 and layers >= 1".into());
                }
            }
        }
        Ok(())
    }

    /// Parameter names and shapes in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for &(f, d) in &self.embed_dims {
            out.push((format!("embed.{}", f.name()), self.vocab.get(f).unwrap_or(0), d));
        }
        let mut width = self.input_dim();
        match self.architecture {
            Architecture::Cnn => {
                let c = &self.conv;
                for l in 0..c.layers {
                    out.push((format!("conv{l}.w"), c.channels, c.kernel * width));
                    out.push((format!("conv{l}.b"), 1, c.channels));
                    width = c.channels;
                }
            }
            Architecture::Indrnn => {
                for l in 0..self.rnn_layers {
                    out.push((format!("indrnn{l}.w"), width, self.hidden));
                    out.push((format!("indrnn{l}.u"), 1, self.hidden));
                    out.push((format!("indrnn{l}.b"), 1, self.hidden));
                    width = self.hidden;
                }
            }
            Architecture::Lstm => {
                for l in 0..self.rnn_layers {
                    out.push((format!("lstm{l}.w"), width, 4 * self.hidden));
                    out.push((format!("lstm{l}.u"), self.hidden, 4 * self.hidden));
                    out.push((format!("lstm{l}.b"), 1, 4 * self.hidden));
                    width = self.hidden;
                }
            }
        }
        out.push(("head.w".into(), width, self.n_outputs));
        out.push(("head.b".into(), 1, self.n_outputs));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub params: Vec<Param>,
}

impl ParamStore {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index(name).map(move |i| &mut self.params[i].value)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Signed log-magnitude amount and fractional time of day.
pub fn numeric_features(t: &Transaction) -> [f64; 2] {
    [t.amount.signum() * t.amount.abs().ln_1p(), t.time_hours / 24.0]
}

/// Graph handles for every parameter, aligned with [`ParamStore::params`].
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl SequenceModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.check()?;
        let mut rng = rng::substream(seed, &[tags::INIT]);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut params = ParamStore::default();
        for (name, rows, cols) in config.param_shapes() {
            let n = rows * cols;
            let data: Vec<f64> = if name.starts_with("embed.") {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            } else if name.ends_with(".u") && name.starts_with("indrnn") {
                // The top layer starts with long memory so its last state can
                // integrate over the whole window.
                let top = name == format!("indrnn{}.u", config.rnn_layers - 1);
                let lo = if top { 0.9 } else { 0.0 };
                (0..n).map(|_| rng.random_range(lo..1.0)).collect()
            } else if name.ends_with(".b") {
                let mut b = vec![0.0; n];
                if name.starts_with("lstm") {
                    // Forget-gate bias starts at 1.
                    let h = n / 4;
                    b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                }
                b
            } else {
                let fan_in = if name.starts_with("conv") { cols } else { rows };
                // Small input weights keep IndRNN pre-activations from saturating the
                // long-memory top layer.
                let gain = if name.starts_with("head") || name.starts_with("lstm") {
                    1.0
                } else if name.starts_with("indrnn") {
                    0.5
                } else {
                    6f64.sqrt()
                };
                let bound = gain / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            params.params.push(Param { name, value: Tensor::new(rows, cols, data) });
        }
        Ok(Self { config, params })
    }

    /// Parameters as trainable leaves.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound { vars: self.params.params.iter().map(|p| g.param(p.value.clone())).collect() }
    }

    /// Parameters as constants, for forward-only passes.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound { vars: self.params.params.iter().map(|p| g.constant(p.value.clone())).collect() }
    }

    fn var(&self, b: &Bound, name: &str) -> Var {
        b.vars[self.params.index(name).unwrap_or_else(|| panic!("missing parameter {name}"))]
    }

    /// `N x d` input matrix: field embeddings followed by numeric features.
    pub fn embed_and_concat(&self, g: &mut Graph, b: &Bound, txns: &[Transaction]) -> Result<Var, NnError> {
        let mut parts = Vec::with_capacity(self.config.embed_dims.len() + 1);
        for &(field, _) in &self.config.embed_dims {
            let size = self.config.vocab.get(field).unwrap_or(0);
            let mut idx = Vec::with_capacity(txns.len());
            for t in txns {
                let i = field.get(t).ok_or(NnError::MissingField(field))? as usize;
                if i >= size {
                    return Err(NnError::TokenRange { field, index: i, size });
                }
                idx.push(i);
            }
            let table = self.var(b, &format!("embed.{}", field.name()));
            parts.push(g.gather(table, &idx));
        }
        if self.config.numeric_features {
            let data = txns.iter().flat_map(numeric_features).collect();
            parts.push(g.constant(Tensor::new(txns.len(), 2, data)));
        }
        Ok(if parts.len() == 1 { parts[0] } else { g.concat_cols(&parts) })
    }

    /// Day embedding (`1 x h`) for an input matrix.
    pub fn encode(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var, NnError> {
        let c = &self.config;
        match c.architecture {
            Architecture::Cnn => {
                let blocks: Vec<(Var, Var)> = (0..c.conv.layers)
                    .map(|l| (self.var(b, &format!("conv{l}.w")), self.var(b, &format!("conv{l}.b"))))
                    .collect();
                cnn_encode(g, x, &blocks, c.conv.kernel, c.conv.pool)
            }
            Architecture::Indrnn => {
                let layers: Vec<[Var; 3]> = (0..c.rnn_layers)
                    .map(|l| {
                        ["w", "u", "b"].map(|p| self.var(b, &format!("indrnn{l}.{p}")))
                    })
                    .collect();
                Ok(indrnn_encode(g, x, &layers))
            }
            Architecture::Lstm => {
                let layers: Vec<[Var; 3]> = (0..c.rnn_layers)
                    .map(|l| ["w", "u", "b"].map(|p| self.var(b, &format!("lstm{l}.{p}"))))
                    .collect();
                Ok(lstm_encode(g, x, &layers, c.hidden))
            }
        }
    }

    pub fn head(&self, g: &mut Graph, b: &Bound, emb: Var) -> Var {
        let w = self.var(b, "head.w");
        let bias = self.var(b, "head.b");
        let z = g.matmul(emb, w);
        g.add(z, bias)
    }

    /// `(embedding, output)` for one window.
    pub fn forward(&self, g: &mut Graph, b: &Bound, txns: &[Transaction]) -> Result<(Var, Var), NnError> {
        let x = self.embed_and_concat(g, b, txns)?;
        let emb = self.encode(g, b, x)?;
        let out = self.head(g, b, emb);
        Ok((emb, out))
    }

    /// Forward-only day embedding for one window.
    pub fn embed_window(&self, txns: &[Transaction]) -> Result<Vec<f64>, NnError> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let x = self.embed_and_concat(&mut g, &b, txns)?;
        let e = self.encode(&mut g, &b, x)?;
        Ok(g.value(e).data.clone())
    }

    /// Head applied to a precomputed embedding.
    pub fn head_output(&self, emb: &[f64]) -> Vec<f64> {
        let w = self.params.get("head.w").expect("head.w");
        let bias = self.params.get("head.b").expect("head.b");
        let k = w.cols;
        let mut out = bias.data.clone();
        for (i, e) in emb.iter().enumerate() {
            for j in 0..k {
                out[j] += e * w.data[i * k + j];
            }
        }
        out
    }

    /// Clips IndRNN recurrent weights to `|u| <= 2^(1/seq_len)`.
    pub fn clip_recurrent(&mut self, seq_len: usize) {
        if self.config.architecture != Architecture::Indrnn {
            return;
        }
        let bound = 2f64.powf(1.0 / seq_len.max(1) as f64);
        for p in &mut self.params.params {
            if p.name.starts_with("indrnn") && p.name.ends_with(".u") {
                p.value.data.iter_mut().for_each(|v| *v = v.clamp(-bound, bound));
            }
        }
    }
}

/// Conv blocks, then a global mean over time.
pub fn cnn_encode(g: &mut Graph, x: Var, blocks: &[(Var, Var)], kernel: usize, pool: usize) -> Result<Var, NnError> {
    let n = g.shape(x).0;
    let min = kernel.max(pool.pow(blocks.len() as u32));
    if n < min {
        return Err(NnError::SequenceTooShort { len: n, min });
    }
    let mut h = x;
    for &(w, b) in blocks {
        let c = g.conv1d(h, w, b, kernel);
        h = g.relu(c);
        if pool > 1 {
            h = g.max_pool(h, pool);
        }
    }
    Ok(g.mean_rows(h))
}

/// Stacked IndRNN: `h_t = relu(x_t W + u * h_{t-1} + b)`; returns the last state.
pub fn indrnn_encode(g: &mut Graph, x: Var, layers: &[[Var; 3]]) -> Var {
    let mut input = x;
    let mut last = x;
    for (l, &[w, u, b]) in layers.iter().enumerate() {
        let n = g.shape(input).0;
        let z = g.matmul(input, w);
        let pre = g.add_row(z, b);
        let mut states = Vec::with_capacity(n);
        let mut h: Option<Var> = None;
        for t in 0..n {
            let mut a = g.row(pre, t);
            if let Some(prev) = h {
                let r = g.mul(u, prev);
                a = g.add(a, r);
            }
            let s = g.relu(a);
            states.push(s);
            h = Some(s);
        }
        last = h.expect("non-empty sequence");
        if l + 1 < layers.len() {
            input = g.stack_rows(&states);
        }
    }
    last
}

/// Stacked LSTM with gate order input, forget, candidate, output.
pub fn lstm_encode(g: &mut Graph, x: Var, layers: &[[Var; 3]], hidden: usize) -> Var {
    let mut input = x;
    let mut last = x;
    for (l, &[w, u, b]) in layers.iter().enumerate() {
        let n = g.shape(input).0;
        let z = g.matmul(input, w);
        let pre = g.add_row(z, b);
        let mut states = Vec::with_capacity(n);
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        for t in 0..n {
            let mut a = g.row(pre, t);
            if let Some(prev) = h {
                let r = g.matmul(prev, u);
                a = g.add(a, r);
            }
            let ig = g.slice_cols(a, 0, hidden);
            let fg = g.slice_cols(a, hidden, hidden);
            let gg = g.slice_cols(a, 2 * hidden, hidden);
            let og = g.slice_cols(a, 3 * hidden, hidden);
            let i = g.sigmoid(ig);
            let cand = g.tanh(gg);
            let o = g.sigmoid(og);
            let mut cell = g.mul(i, cand);
            if let Some(prev) = c {
                let f = g.sigmoid(fg);
                let keep = g.mul(f, prev);
                cell = g.add(keep, cell);
            }
            let tc = g.tanh(cell);
            let hs = g.mul(o, tc);
            states.push(hs);
            h = Some(hs);
            c = Some(cell);
        }
        last = h.expect("non-empty sequence");
        if l + 1 < layers.len() {
            input = g.stack_rows(&states);
        }
    }
    last
}
