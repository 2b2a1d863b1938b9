//! Tape-based reverse-mode autodiff over dense 2-D tensors.
//!
//! Every op appends a node holding its forward value; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients for every node that
//! depends on a parameter. Vectors are `1 x n` tensors; scalars are `1 x 1`.

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match shape {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    Conv1d { x: Var, w: Var, b: Var, kernel: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    MeanRows(Var),
    SumAll(Var),
    Gather { table: Var, index: Vec<usize> },
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    SliceCols(Var, usize),
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of `len` when `v` did not influence the root.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let o = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let br = &b[p * m..(p + 1) * m];
            for (x, y) in o.iter_mut().zip(br) {
                *x += av * y;
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf copy of `v`'s value that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul shape mismatch {n}x{k} * {k2}x{m}");
        let out = matmul(&self.value(a).data, &self.value(b).data, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(n, m, out), Op::MatMul(a, b), ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| f(*x, *y)).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(r, c, data), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (n, m) = self.shape(a);
        assert_eq!(self.shape(row), (1, m), "add_row expects a 1x{m} row");
        let r = &self.value(row).data;
        let data = self.value(a).data.iter().enumerate().map(|(i, x)| x + r[i % m]).collect();
        let ng = self.ng(a) || self.ng(row);
        self.push(Tensor::new(n, m, data), Op::AddRow(a, row), ng)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(Tensor::new(r, c, data), op, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| s * x, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// Same-padded 1-D convolution over time.
    ///
    /// `x` is `N x C_in`, `w` is `C_out x (kernel * C_in)` with column
    /// `k * C_in + c` weighting input channel `c` at offset `k - kernel/2`,
    /// `b` is `1 x C_out`. Output is `N x C_out`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize) -> Var {
        let (n, cin) = self.shape(x);
        let (cout, wk) = self.shape(w);
        assert!(kernel % 2 == 1, "conv1d kernel must be odd");
        assert_eq!(wk, kernel * cin, "conv1d weight shape mismatch");
        assert_eq!(self.shape(b), (1, cout), "conv1d bias shape mismatch");
        let pad = kernel / 2;
        let xv = &self.value(x).data;
        let wv = &self.value(w).data;
        let bv = &self.value(b).data;
        let mut out = vec![0.0; n * cout];
        for t in 0..n {
            let orow = &mut out[t * cout..(t + 1) * cout];
            orow.copy_from_slice(bv);
            for k in 0..kernel {
                let src = t + k;
                if src < pad || src - pad >= n {
                    continue;
                }
                let xr = &xv[(src - pad) * cin..(src - pad + 1) * cin];
                for (o, acc) in orow.iter_mut().enumerate() {
                    let wr = &wv[o * wk + k * cin..o * wk + (k + 1) * cin];
                    *acc += wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(Tensor::new(n, cout, out), Op::Conv1d { x, w, b, kernel }, ng)
    }

    /// Non-overlapping max pooling over time; a trailing partial window is dropped.
    pub fn max_pool(&mut self, x: Var, width: usize) -> Var {
        let (n, c) = self.shape(x);
        let m = n / width;
        assert!(m >= 1, "max_pool width {width} exceeds length {n}");
        let xv = &self.value(x).data;
        let mut out = vec![0.0; m * c];
        let mut argmax = vec![0usize; m * c];
        for i in 0..m {
            for ch in 0..c {
                let mut best = i * width * c + ch;
                for j in 1..width {
                    let idx = (i * width + j) * c + ch;
                    if xv[idx] > xv[best] {
                        best = idx;
                    }
                }
                out[i * c + ch] = xv[best];
                argmax[i * c + ch] = best;
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(m, c, out), Op::MaxPool { x, argmax }, ng)
    }

    /// Column means: `N x C -> 1 x C`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (n, c) = self.shape(x);
        let mut out = vec![0.0; c];
        for r in self.value(x).data.chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let ng = self.ng(x);
        self.push(Tensor::new(1, c, out), Op::MeanRows(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    /// Row lookup: `table[index[i]]` for each `i`.
    pub fn gather(&mut self, table: Var, index: &[usize]) -> Var {
        let (v, d) = self.shape(table);
        let tv = &self.value(table).data;
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index {
            assert!(i < v, "gather index {i} outside table of {v} rows");
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let ng = self.ng(table);
        self.push(
            Tensor::new(index.len(), d, out),
            Op::Gather { table, index: index.to_vec() },
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, n, "concat_cols row mismatch");
                self.shape(p).1
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data[r * w..(r + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::new(n, total, out), Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Stacks `1 x C` rows into an `N x C` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        let c = self.shape(rows[0]).1;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            assert_eq!(self.shape(r), (1, c), "stack_rows expects 1x{c} rows");
            out.extend_from_slice(&self.value(r).data);
        }
        let ng = rows.iter().any(|&r| self.ng(r));
        self.push(Tensor::new(rows.len(), c, out), Op::StackRows(rows.to_vec()), ng)
    }

    pub fn row(&mut self, x: Var, r: usize) -> Var {
        let t = Tensor::row_vector(self.value(x).row(r).to_vec());
        let ng = self.ng(x);
        self.push(t, Op::Row(x, r), ng)
    }

    /// Columns `start..start + len` of a `1 x C` row vector.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, _) = self.shape(x);
        assert_eq!(r, 1, "slice_cols expects a row vector");
        let t = Tensor::row_vector(self.value(x).data[start..start + len].to_vec());
        let ng = self.ng(x);
        self.push(t, Op::SliceCols(x, start), ng)
    }

    /// `-log softmax(logits)[label]` for `1 x k` logits.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let z = &self.value(logits).data;
        assert!(label < z.len(), "label {label} outside {} logits", z.len());
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let loss = m + s.ln() - z[label];
        let probs = e.into_iter().map(|v| v / s).collect();
        let ng = self.ng(logits);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, label, probs }, ng)
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.len()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value.data;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.shape(*a);
                let m = self.shape(*b).1;
                let av = &self.value(*a).data;
                let bv = &self.value(*b).data;
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..n {
                        let gr = &g[r * m..(r + 1) * m];
                        for p in 0..k {
                            let br = &bv[p * m..(p + 1) * m];
                            ga[r * k + p] += gr.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for r in 0..n {
                        let gr = &g[r * m..(r + 1) * m];
                        for p in 0..k {
                            let av = av[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (x, y) in gb[p * m..(p + 1) * m].iter_mut().zip(gr) {
                                *x += av * y;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.acc(grads, v) {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let bv = &self.value(*b).data;
                if let Some(ga) = self.acc(grads, *a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * bv[j];
                    }
                }
                let av = &self.value(*a).data;
                if let Some(gb) = self.acc(grads, *b) {
                    for j in 0..g.len() {
                        gb[j] += g[j] * av[j];
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                let m = self.shape(*row).1;
                if let Some(gr) = self.acc(grads, *row) {
                    for (j, y) in g.iter().enumerate() {
                        gr[j % m] += y;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Relu(a) => {
                let av = &self.value(*a).data;
                if let Some(ga) = self.acc(grads, *a) {
                    for j in 0..g.len() {
                        if av[j] > 0.0 {
                            ga[j] += g[j];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * out[j] * (1.0 - out[j]);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * (1.0 - out[j] * out[j]);
                    }
                }
            }
            Op::Square(a) => {
                let av = &self.value(*a).data;
                if let Some(ga) = self.acc(grads, *a) {
                    for j in 0..g.len() {
                        ga[j] += 2.0 * av[j] * g[j];
                    }
                }
            }
            Op::Conv1d { x, w, b, kernel } => {
                let (n, cin) = self.shape(*x);
                let (cout, wk) = self.shape(*w);
                let pad = kernel / 2;
                let xv = &self.value(*x).data;
                let wv = &self.value(*w).data;
                if let Some(gb) = self.acc(grads, *b) {
                    for t in 0..n {
                        for o in 0..cout {
                            gb[o] += g[t * cout + o];
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, *w) {
                    for t in 0..n {
                        for k in 0..*kernel {
                            let src = t + k;
                            if src < pad || src - pad >= n {
                                continue;
                            }
                            let xr = &xv[(src - pad) * cin..(src - pad + 1) * cin];
                            for o in 0..cout {
                                let go = g[t * cout + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let wr = &mut gw[o * wk + k * cin..o * wk + (k + 1) * cin];
                                wr.iter_mut().zip(xr).for_each(|(a, b)| *a += go * b);
                            }
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    for t in 0..n {
                        for k in 0..*kernel {
                            let src = t + k;
                            if src < pad || src - pad >= n {
                                continue;
                            }
                            let xr = &mut gx[(src - pad) * cin..(src - pad + 1) * cin];
                            for o in 0..cout {
                                let go = g[t * cout + o];
                                if go == 0.0 {
                                    continue;
                                }
                                let wr = &wv[o * wk + k * cin..o * wk + (k + 1) * cin];
                                xr.iter_mut().zip(wr).for_each(|(a, b)| *a += go * b);
                            }
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (j, &src) in argmax.iter().enumerate() {
                        gx[src] += g[j];
                    }
                }
            }
            Op::MeanRows(x) => {
                let (n, c) = self.shape(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..n {
                        for j in 0..c {
                            gx[r * c + j] += g[j] / n as f64;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Gather { table, index } => {
                let d = self.shape(*table).1;
                if let Some(gt) = self.acc(grads, *table) {
                    for (r, &i) in index.iter().enumerate() {
                        for j in 0..d {
                            gt[i * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let n = node.value.rows;
                let total = node.value.cols;
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if let Some(gp) = self.acc(grads, p) {
                        for r in 0..n {
                            for j in 0..w {
                                gp[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::StackRows(rows) => {
                let c = node.value.cols;
                for (r, &v) in rows.iter().enumerate() {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Row(x, r) => {
                let c = node.value.cols;
                if let Some(gx) = self.acc(grads, *x) {
                    gx[r * c..(r + 1) * c].iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::SliceCols(x, start) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx[*start..*start + g.len()].iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::CrossEntropy { logits, label, probs } => {
                if let Some(gl) = self.acc(grads, *logits) {
                    for (j, p) in probs.iter().enumerate() {
                        gl[j] += g[0] * (p - if j == *label { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_and_backward_small() {
        let mut g = Graph::new();
        let a = g.param(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(Tensor::new(2, 1, vec![5.0, 6.0]));
        let c = g.matmul(a, b);
        assert_eq!(g.value(c).data, vec![17.0, 39.0]);
        let s = g.sum(c);
        let grads = g.backward(s);
        assert_eq!(grads.get(a).unwrap(), &[5.0, 6.0, 5.0, 6.0]);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(6, 1, vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]));
        let w = g.param(Tensor::new(1, 5, vec![0.0, 0.0, 1.0, 0.0, 0.0]));
        let b = g.param(Tensor::zeros(1, 1));
        let y = g.conv1d(x, w, b, 5);
        assert_eq!(g.value(y).data, g.value(x).data);
    }

    #[test]
    fn cross_entropy_uniform_and_limits() {
        let mut g = Graph::new();
        let z = g.param(Tensor::row_vector(vec![0.3; 7]));
        let l = g.cross_entropy(z, 2);
        assert!((g.value(l).item() - 7f64.ln()).abs() <= 1e-12);
        let grads = g.backward(l);
        let gz = grads.get(z).unwrap();
        assert!((gz.iter().sum::<f64>()).abs() < 1e-15);
        assert!((gz[2] - (1.0 / 7.0 - 1.0)).abs() < 1e-15);
        let z2 = g.constant(Tensor::row_vector(vec![0.0, 800.0, 0.0]));
        let l2 = g.cross_entropy(z2, 1);
        assert!(g.value(l2).item() >= 0.0 && g.value(l2).item() < 1e-300);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(5, 1, vec![1.0, 3.0, 2.0, -1.0, 9.0]));
        let p = g.max_pool(x, 2);
        assert_eq!(g.value(p).data, vec![3.0, 2.0]);
        let s = g.sum(p);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).unwrap(), &[0.0, 1.0, 1.0, 0.0, 0.0]);
    }
}
