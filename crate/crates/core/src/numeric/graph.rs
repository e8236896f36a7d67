use std::borrow::Cow;

use super::{shape_err, NumericError, ParamGradients, ParamId, ParamStore, Tensor};

/// Index of a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    Transpose { a: NodeId, rows: usize, cols: usize },
    Add { a: NodeId, b: NodeId },
    AddBias { a: NodeId, bias: NodeId },
    Tanh { a: NodeId },
    Softmax { a: NodeId },
    ConcatRows { parts: Vec<NodeId> },
    SliceRows { a: NodeId, offset: usize },
    Reshape { a: NodeId },
    Gather { table: NodeId, ids: Vec<usize> },
    Windows { a: NodeId, n: usize },
    MaxRows { a: NodeId, argmax: Vec<usize> },
    MulConst { a: NodeId, mask: Tensor },
    CrossEntropy { logits: NodeId, label: usize, probs: Vec<f64> },
    Sum { a: NodeId },
    AddN { parts: Vec<NodeId> },
    Scale { a: NodeId, c: f64 },
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
}

/// Operation tape. Nodes are appended in evaluation order, so every node's
/// inputs precede it and a reverse sweep is a valid backward schedule.
///
/// Parameter leaves borrow their tensors from the [`ParamStore`] the graph
/// was built over and are created at most once per parameter.
#[derive(Debug)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    store: Option<&'p ParamStore>,
    param_nodes: Vec<Option<NodeId>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<'p> Graph<'p> {
    /// A graph without parameters; leaves come from [`Graph::input`].
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            store: None,
            param_nodes: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Graph {
            nodes: Vec::new(),
            store: Some(store),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op_name: &'static str, value: Cow<'p, Tensor>, op: Op) -> Result<NodeId, NumericError> {
        if !value.is_finite() {
            return Err(NumericError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn owned(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<NodeId, NumericError> {
        self.push(op_name, Cow::Owned(value), op)
    }

    /// Constant leaf. Receives a gradient but is not a parameter.
    pub fn input(&mut self, t: Tensor) -> Result<NodeId, NumericError> {
        self.owned("input", t, Op::Input)
    }

    /// Leaf for a stored parameter.
    ///
    /// Panics if the graph was created without a parameter store.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.param_nodes[id.0] {
            return node;
        }
        let store = self.store.expect("graph has no parameter store");
        self.nodes.push(Node {
            value: Cow::Borrowed(store.get(id)),
            op: Op::Param,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(node);
        node
    }

    /// Matrix product. Rank-1 operands act as a row vector on the left and a
    /// column vector on the right; the result drops those unit axes.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() > 2 || sb.len() > 2 {
            return Err(shape_err("matmul", "operands must have rank 1 or 2"));
        }
        let (m, k) = if sa.len() == 1 { (1, sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if sb.len() == 1 { (sb[0], 1) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let shape = match (sa.len(), sb.len()) {
            (2, 2) => vec![m, n],
            (1, 2) => vec![n],
            (2, 1) => vec![m],
            _ => vec![1],
        };
        let value = Tensor::new(shape, out)?;
        self.owned("matmul", value, Op::MatMul { a, b, m, k, n })
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NumericError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("need a matrix, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        let value = Tensor::new(vec![cols, rows], out)?;
        self.owned("transpose", value, Op::Transpose { a, rows, cols })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.owned("add", value, Op::Add { a, b })
    }

    /// Adds a bias vector to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NumericError> {
        let cols = self.value(a).cols();
        if self.shape(bias) != [cols] {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + bias {:?}", self.shape(a), self.shape(bias)),
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(cols) {
            for (x, bv) in row.iter_mut().zip(b) {
                *x += bv;
            }
        }
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.owned("add_bias", value, Op::AddBias { a, bias })
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, NumericError> {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.owned("tanh", value, Op::Tanh { a })
    }

    /// Softmax of a vector, max-subtracted.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, NumericError> {
        if self.shape(a).len() != 1 {
            return Err(shape_err("softmax", format!("need a vector, got {:?}", self.shape(a))));
        }
        let data = softmax_raw(self.value(a).data());
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.owned("softmax", value, Op::Softmax { a })
    }

    /// Concatenates along the leading axis. All parts share rank and trailing dims.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericError> {
        let first = *parts.first().ok_or(NumericError::Empty("concat_rows"))?;
        let trailing = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != trailing.len() + 1 || s[1..] != trailing[..] {
                return Err(shape_err(
                    "concat_rows",
                    format!("{:?} incompatible with trailing {trailing:?}", s),
                ));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(trailing);
        let value = Tensor::new(shape, data)?;
        self.owned("concat_rows", value, Op::ConcatRows { parts: parts.to_vec() })
    }

    /// `len` entries of the leading axis starting at `start`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, NumericError> {
        let s = self.shape(a).to_vec();
        if len == 0 || start + len > s[0] {
            return Err(shape_err("slice_rows", format!("[{start}, {}) of {s:?}", start + len)));
        }
        let stride: usize = s[1..].iter().product();
        let offset = start * stride;
        let data = self.value(a).data()[offset..offset + len * stride].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        let value = Tensor::new(shape, data)?;
        self.owned("slice_rows", value, Op::SliceRows { a, offset })
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, NumericError> {
        let data = self.value(a).data().to_vec();
        let value = Tensor::new(shape.to_vec(), data)
            .map_err(|_| shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(a))))?;
        self.owned("reshape", value, Op::Reshape { a })
    }

    /// Row lookup: `out[h] = table[ids[h]]`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, NumericError> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(shape_err("gather", "table must be a matrix"));
        }
        if ids.is_empty() {
            return Err(NumericError::Empty("gather"));
        }
        let (n, e) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            if i >= n {
                return Err(shape_err("gather", format!("row {i} of {n}")));
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![ids.len(), e], data)?;
        self.owned("gather", value, Op::Gather { table, ids: ids.to_vec() })
    }

    /// Sliding windows of `n` consecutive rows, each flattened:
    /// `[L x d] -> [(L - n + 1) x (n * d)]`.
    pub fn windows(&mut self, a: NodeId, n: usize) -> Result<NodeId, NumericError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || n == 0 || n > s[0] {
            return Err(shape_err("windows", format!("width {n} over {s:?}")));
        }
        let (l, d) = (s[0], s[1]);
        let src = self.value(a).data();
        let count = l - n + 1;
        let mut data = Vec::with_capacity(count * n * d);
        for p in 0..count {
            data.extend_from_slice(&src[p * d..(p + n) * d]);
        }
        let value = Tensor::new(vec![count, n * d], data)?;
        self.owned("windows", value, Op::Windows { a, n })
    }

    /// Column-wise maximum over rows: `[P x d] -> [d]`. Ties go to the earliest row.
    pub fn max_rows(&mut self, a: NodeId) -> Result<NodeId, NumericError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(shape_err("max_rows", format!("need a matrix, got {s:?}")));
        }
        let (p, d) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut best = src[..d].to_vec();
        let mut argmax = vec![0; d];
        for r in 1..p {
            for c in 0..d {
                let x = src[r * d + c];
                if x > best[c] {
                    best[c] = x;
                    argmax[c] = r;
                }
            }
        }
        let value = Tensor::vector(best);
        self.owned("max_rows", value, Op::MaxRows { a, argmax })
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, a: NodeId, mask: Tensor) -> Result<NodeId, NumericError> {
        if self.shape(a) != mask.shape() {
            return Err(shape_err("mul_const", format!("{:?} vs {:?}", self.shape(a), mask.shape())));
        }
        let data = zip_map(self.value(a).data(), mask.data(), |x, m| x * m);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.owned("mul_const", value, Op::MulConst { a, mask })
    }

    /// `-log softmax(logits)[label]` via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId, NumericError> {
        let s = self.shape(logits);
        if s.len() != 1 {
            return Err(shape_err("cross_entropy", format!("logits must be a vector, got {s:?}")));
        }
        let classes = s[0];
        if label >= classes {
            return Err(NumericError::LabelOutOfRange { label, classes });
        }
        let z = self.value(logits).data();
        let loss = log_sum_exp(z) - z[label];
        let probs = softmax_raw(z);
        self.owned(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, label, probs },
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, NumericError> {
        let total = self.value(a).data().iter().sum();
        self.owned("sum", Tensor::scalar(total), Op::Sum { a })
    }

    /// Sum of same-shaped nodes, accumulated in the given order.
    pub fn add_n(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericError> {
        let first = *parts.first().ok_or(NumericError::Empty("add_n"))?;
        let shape = self.shape(first).to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(shape_err("add_n", format!("{:?} vs {shape:?}", self.shape(p))));
            }
            for (x, y) in acc.iter_mut().zip(self.value(p).data()) {
                *x += y;
            }
        }
        let value = Tensor::new(shape, acc)?;
        self.owned("add_n", value, Op::AddN { parts: parts.to_vec() })
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, NumericError> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.owned("scale", value, Op::Scale { a, c })
    }

    /// Reverse sweep from a scalar `loss`. Nodes are visited in decreasing
    /// index order and contributions are summed in that fixed order.
    pub fn backward(&self, loss: NodeId) -> Result<NodeGradients, NumericError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param => {}
                Op::MatMul { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    accumulate(&mut grads, *a, m * k, |da| {
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                da[r * k + p] += dot(grow, brow);
                            }
                        }
                    });
                    accumulate(&mut grads, *b, k * n, |db| {
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let x = av[r * k + p];
                                for (dst, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *dst += x * gv;
                                }
                            }
                        }
                    });
                }
                Op::Transpose { a, rows, cols } => {
                    let (rows, cols) = (*rows, *cols);
                    accumulate(&mut grads, *a, rows * cols, |da| {
                        for r in 0..rows {
                            for c in 0..cols {
                                da[r * cols + c] += g[c * rows + r];
                            }
                        }
                    });
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.len(), |da| add_into(da, &g));
                    accumulate(&mut grads, *b, g.len(), |db| add_into(db, &g));
                }
                Op::AddBias { a, bias } => {
                    accumulate(&mut grads, *a, g.len(), |da| add_into(da, &g));
                    let cols = self.value(*bias).len();
                    accumulate(&mut grads, *bias, cols, |db| {
                        for row in g.chunks(cols) {
                            add_into(db, row);
                        }
                    });
                }
                Op::Tanh { a } => {
                    let y = node.value.data();
                    accumulate(&mut grads, *a, g.len(), |da| {
                        for ((d, yv), gv) in da.iter_mut().zip(y).zip(&g) {
                            *d += (1.0 - yv * yv) * gv;
                        }
                    });
                }
                Op::Softmax { a } => {
                    let y = node.value.data();
                    let inner = dot(y, &g);
                    accumulate(&mut grads, *a, g.len(), |da| {
                        for ((d, yv), gv) in da.iter_mut().zip(y).zip(&g) {
                            *d += yv * (gv - inner);
                        }
                    });
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        accumulate(&mut grads, p, len, |dp| add_into(dp, &g[offset..offset + len]));
                        offset += len;
                    }
                }
                Op::SliceRows { a, offset } => {
                    let total = self.value(*a).len();
                    let offset = *offset;
                    accumulate(&mut grads, *a, total, |da| {
                        add_into(&mut da[offset..offset + g.len()], &g)
                    });
                }
                Op::Reshape { a } => {
                    accumulate(&mut grads, *a, g.len(), |da| add_into(da, &g));
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let e = t.shape()[1];
                    accumulate(&mut grads, *table, t.len(), |dt| {
                        for (h, &id) in ids.iter().enumerate() {
                            add_into(&mut dt[id * e..(id + 1) * e], &g[h * e..(h + 1) * e]);
                        }
                    });
                }
                Op::Windows { a, n } => {
                    let src = self.value(*a);
                    let d = src.shape()[1];
                    let width = n * d;
                    accumulate(&mut grads, *a, src.len(), |da| {
                        for (p, grow) in g.chunks(width).enumerate() {
                            add_into(&mut da[p * d..p * d + width], grow);
                        }
                    });
                }
                Op::MaxRows { a, argmax } => {
                    let src = self.value(*a);
                    let d = src.shape()[1];
                    accumulate(&mut grads, *a, src.len(), |da| {
                        for (c, &r) in argmax.iter().enumerate() {
                            da[r * d + c] += g[c];
                        }
                    });
                }
                Op::MulConst { a, mask } => {
                    accumulate(&mut grads, *a, g.len(), |da| {
                        for ((d, m), gv) in da.iter_mut().zip(mask.data()).zip(&g) {
                            *d += m * gv;
                        }
                    });
                }
                Op::CrossEntropy { logits, label, probs } => {
                    let scale = g[0];
                    accumulate(&mut grads, *logits, probs.len(), |dz| {
                        for (c, (d, p)) in dz.iter_mut().zip(probs).enumerate() {
                            let target = if c == *label { 1.0 } else { 0.0 };
                            *d += scale * (p - target);
                        }
                    });
                }
                Op::Sum { a } => {
                    let len = self.value(*a).len();
                    accumulate(&mut grads, *a, len, |da| {
                        for d in da.iter_mut() {
                            *d += g[0];
                        }
                    });
                }
                Op::AddN { parts } => {
                    for &p in parts {
                        accumulate(&mut grads, p, g.len(), |dp| add_into(dp, &g));
                    }
                }
                Op::Scale { a, c } => {
                    accumulate(&mut grads, *a, g.len(), |da| {
                        for (d, gv) in da.iter_mut().zip(&g) {
                            *d += c * gv;
                        }
                    });
                }
            }
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.map(|data| Tensor::new(node.value.shape().to_vec(), data).expect("gradient shape")))
            .collect();
        Ok(NodeGradients { grads })
    }

    /// Dense gradients for every stored parameter; parameters the loss does
    /// not reach get zeros.
    pub fn param_gradients(&self, grads: &NodeGradients) -> ParamGradients {
        let store = self.store.expect("graph has no parameter store");
        let tensors = store
            .ids()
            .map(|id| {
                self.param_nodes[id.0]
                    .and_then(|node| grads.wrt(node).cloned())
                    .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
            })
            .collect();
        ParamGradients(tensors)
    }
}

/// Gradients of the loss with respect to every node reached by the backward sweep.
#[derive(Debug, Clone)]
pub struct NodeGradients {
    grads: Vec<Option<Tensor>>,
}

impl NodeGradients {
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[id.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Four interleaved partial sums, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for p in 0..k {
            let x = a[r * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * bv;
            }
        }
    }
    out
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_raw(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
