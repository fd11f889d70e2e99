use std::fmt;
use std::sync::Arc;

use super::AutodiffError;
use crate::tensor::{gemm, Tensor, TensorError};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A user-supplied differentiable operation.
///
/// `backward` returns one gradient per input, each shaped like that input.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a * b^T`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    ScaledRelu(NodeId),
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    NormaliseRows {
        input: NodeId,
        norms: Vec<f64>,
    },
    Custom {
        inputs: Vec<NodeId>,
        op: Arc<dyn CustomOp>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Sum(a) | Op::ScaledRelu(a) => vec![*a],
            Op::SoftmaxXent { logits, .. } => vec![*logits],
            Op::NormaliseRows { input, .. } => vec![*input],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::ScaledRelu(..) => "scaled_relu",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
            Op::NormaliseRows { .. } => "normalise_rows",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Tape of tensor operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(
                self.nodes
                    .iter()
                    .map(|n| (n.op.tag(), n.value.shape().to_vec())),
            )
            .finish()
    }
}

/// Gradients from one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    TensorError::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
    .into()
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Operation tag and input ids of a node, for inspection.
    pub fn describe(&self, id: NodeId) -> (&'static str, Vec<NodeId>) {
        let op = &self.nodes[id.0].op;
        (op.tag(), op.inputs())
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId, AutodiffError> {
        let tag = op.tag();
        let value = value.check_finite(tag)?;
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId, AutodiffError> {
        let value = value.check_finite("leaf")?;
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<NodeId, AutodiffError> {
        self.leaf(value, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId, AutodiffError> {
        self.leaf(value, false)
    }

    /// `a[r x k] * b[k x c]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (r, k) = va.dims2("matmul")?;
        let (k2, c) = vb.dims2("matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", va, vb));
        }
        let mut out = vec![0.0; r * c];
        gemm(va.data(), r, k, false, vb.data(), k, c, false, &mut out);
        let t = Tensor::new(vec![r, c], out)?;
        self.push(Op::MatMul(a, b), t)
    }

    /// `a[r x k] * b[c x k]^T`, the layout of a batch hitting a weight
    /// matrix whose rows are neurons.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (r, k) = va.dims2("matmul_t")?;
        let (c, k2) = vb.dims2("matmul_t")?;
        if k != k2 {
            return Err(dim_err("matmul_t", va, vb));
        }
        let mut out = vec![0.0; r * c];
        gemm(va.data(), r, k, false, vb.data(), c, k, true, &mut out);
        let t = Tensor::new(vec![r, c], out)?;
        self.push(Op::MatMulT(a, b), t)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err("add", va, vb));
        }
        let t = va.zip_map(vb, |x, y| x + y);
        self.push(Op::Add(a, b), t)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err("mul", va, vb));
        }
        let t = va.zip_map(vb, |x, y| x * y);
        self.push(Op::Mul(a, b), t)
    }

    fn row_broadcast(
        &self,
        op: &'static str,
        x: NodeId,
        row: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, AutodiffError> {
        let (vx, vr) = (self.value(x), self.value(row));
        let (_, c) = vx.dims2(op)?;
        if vr.len() != c {
            return Err(dim_err(op, vx, vr));
        }
        let mut out = vx.clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for (o, &r) in chunk.iter_mut().zip(vr.data()) {
                *o = f(*o, r);
            }
        }
        Ok(out)
    }

    /// Adds a length-`c` vector to every row of `x[r x c]`.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.row_broadcast("add_row", x, row, |a, b| a + b)?;
        self.push(Op::AddRow(x, row), t)
    }

    /// Multiplies every row of `x[r x c]` by a length-`c` vector.
    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.row_broadcast("mul_row", x, row, |a, b| a * b)?;
        self.push(Op::MulRow(x, row), t)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, AutodiffError> {
        let t = self.value(x).scaled(c);
        self.push(Op::Scale(x, c), t)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let t = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(Op::Sum(x), t)
    }

    /// `sqrt(2) * max(0, x)` elementwise.
    pub fn scaled_relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self
            .value(x)
            .map(|v| if v > 0.0 { SQRT_2 * v } else { 0.0 });
        self.push(Op::ScaledRelu(x), t)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId, AutodiffError> {
        let v = self.value(logits);
        let (b, c) = v.dims2("softmax_cross_entropy")?;
        if labels.len() != b {
            return Err(AutodiffError::LabelCount {
                labels: labels.len(),
                batch: b,
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(AutodiffError::LabelOutOfRange { label, classes: c });
        }
        let mut probs = vec![0.0; b * c];
        let mut total = 0.0;
        for (i, (row, &label)) in v.rows().zip(labels).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[i * c..(i + 1) * c];
            let mut z = 0.0;
            for (pj, &x) in p.iter_mut().zip(row) {
                *pj = (x - max).exp();
                z += *pj;
            }
            for pj in p.iter_mut() {
                *pj /= z;
            }
            total += z.ln() + max - row[label];
        }
        let t = Tensor::scalar(total / b as f64);
        self.push(
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            t,
        )
    }

    /// Centres each row to zero mean and scales it to unit norm.
    ///
    /// Fails when a row's centred norm is below `1e-12`.
    pub fn normalise_rows(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let (out, norms) = normalise_rows_forward(self.value(x))?;
        self.push(Op::NormaliseRows { input: x, norms }, out)
    }

    pub fn custom(
        &mut self,
        op: Arc<dyn CustomOp>,
        inputs: &[NodeId],
    ) -> Result<NodeId, AutodiffError> {
        let values: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
        let t = op.forward(&values)?;
        self.push(
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            t,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every node that depends on a [`param`](Self::param) leaf and feeds
    /// into `loss` receives a gradient. Contributions are accumulated in
    /// reverse construction order, so results are deterministic.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let contributions = self.local_grads(node, &g);
            grads[idx] = Some(g);
            for (input, contrib) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.axpy(1.0, &contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (r, k) = (va.shape()[0], va.shape()[1]);
                let c = vb.shape()[1];
                let mut ga = vec![0.0; r * k];
                let mut gb = vec![0.0; k * c];
                // grad_a = g * b^T, grad_b = a^T * g
                gemm(g.data(), r, c, false, vb.data(), k, c, true, &mut ga);
                gemm(va.data(), r, k, true, g.data(), r, c, false, &mut gb);
                vec![
                    (*a, Tensor::new(vec![r, k], ga).expect("shape")),
                    (*b, Tensor::new(vec![k, c], gb).expect("shape")),
                ]
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (r, k) = (va.shape()[0], va.shape()[1]);
                let c = vb.shape()[0];
                let mut ga = vec![0.0; r * k];
                let mut gb = vec![0.0; c * k];
                // y = a b^T: grad_a = g * b, grad_b = g^T * a
                gemm(g.data(), r, c, false, vb.data(), c, k, false, &mut ga);
                gemm(g.data(), r, c, true, va.data(), r, k, false, &mut gb);
                vec![
                    (*a, Tensor::new(vec![r, k], ga).expect("shape")),
                    (*b, Tensor::new(vec![c, k], gb).expect("shape")),
                ]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                vec![
                    (*a, g.zip_map(vb, |x, y| x * y)),
                    (*b, g.zip_map(va, |x, y| x * y)),
                ]
            }
            Op::AddRow(x, row) => {
                let vr = self.value(*row);
                let mut gr = vec![0.0; vr.len()];
                for chunk in g.rows() {
                    for (acc, &v) in gr.iter_mut().zip(chunk) {
                        *acc += v;
                    }
                }
                let gr = Tensor::new(vr.shape().to_vec(), gr).expect("shape");
                vec![(*x, g.clone()), (*row, gr)]
            }
            Op::MulRow(x, row) => {
                let (vx, vr) = (self.value(*x), self.value(*row));
                let c = vr.len();
                let mut gx = g.clone();
                let mut gr = vec![0.0; c];
                for (i, chunk) in gx.data_mut().chunks_mut(c).enumerate() {
                    let xrow = vx.row(i);
                    for j in 0..c {
                        gr[j] += chunk[j] * xrow[j];
                        chunk[j] *= vr.data()[j];
                    }
                }
                let gr = Tensor::new(vr.shape().to_vec(), gr).expect("shape");
                vec![(*x, gx), (*row, gr)]
            }
            Op::Scale(x, c) => vec![(*x, g.scaled(*c))],
            Op::Sum(x) => {
                let upstream = g.item();
                vec![(*x, Tensor::full(self.value(*x).shape(), upstream))]
            }
            Op::ScaledRelu(x) => {
                let gx = self
                    .value(*x)
                    .zip_map(g, |v, gv| if v > 0.0 { SQRT_2 * gv } else { 0.0 });
                vec![(*x, gx)]
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                let v = self.value(*logits);
                let c = v.shape()[1];
                let b = labels.len();
                let scale = g.item() / b as f64;
                let mut gl = probs.clone();
                for (i, &label) in labels.iter().enumerate() {
                    gl[i * c + label] -= 1.0;
                }
                for x in &mut gl {
                    *x *= scale;
                }
                vec![(*logits, Tensor::new(v.shape().to_vec(), gl).expect("shape"))]
            }
            Op::NormaliseRows { input, norms } => {
                let y = &node.value;
                let d = y.shape()[1];
                let mut gx = g.clone();
                for (i, gr) in gx.data_mut().chunks_mut(d).enumerate() {
                    let yr = y.row(i);
                    let proj: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                    for (gv, &yv) in gr.iter_mut().zip(yr) {
                        *gv = (*gv - yv * proj) / norms[i];
                    }
                    let m = gr.iter().sum::<f64>() / d as f64;
                    for gv in gr.iter_mut() {
                        *gv -= m;
                    }
                }
                vec![(*input, gx)]
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
                let gs = op.backward(&values, &node.value, g);
                inputs.iter().copied().zip(gs).collect()
            }
        }
    }
}

/// Row-wise centring and normalisation, returning the centred norms.
pub(crate) fn normalise_rows_forward(x: &Tensor) -> Result<(Tensor, Vec<f64>), AutodiffError> {
    let (_, d) = x.dims2("normalise_rows")?;
    let mut out = x.clone();
    let mut norms = Vec::new();
    for (i, row) in out.data_mut().chunks_mut(d).enumerate() {
        let m = row.iter().sum::<f64>() / d as f64;
        for v in row.iter_mut() {
            *v -= m;
        }
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n >= 1e-12) {
            return Err(AutodiffError::DegenerateRow { row: i, norm: n });
        }
        for v in row.iter_mut() {
            *v /= n;
        }
        norms.push(n);
    }
    Ok((out, norms))
}
