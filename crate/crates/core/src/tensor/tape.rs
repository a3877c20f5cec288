use super::kernels::{self, gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddBroadcast {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MulConst {
        a: Var,
        factor: Vec<f32>,
    },
    Scale {
        a: Var,
        s: f32,
    },
    Gelu {
        a: Var,
    },
    Relu {
        a: Var,
    },
    Sigmoid {
        a: Var,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: Vec<(f64, f64)>,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Select {
        a: Var,
        axis: usize,
        index: usize,
    },
    ExpandLeading {
        a: Var,
        n: usize,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f32>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::BatchMatMul { .. } => "bmm",
            Op::Add { .. } => "add",
            Op::AddBroadcast { .. } => "add_broadcast",
            Op::Mul { .. } => "mul",
            Op::MulConst { .. } => "mul_const",
            Op::Scale { .. } => "scale",
            Op::Gelu { .. } => "gelu",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Select { .. } => "select",
            Op::ExpandLeading { .. } => "expand_leading",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b }
            | Op::BatchMatMul { a, b, .. }
            | Op::Add { a, b }
            | Op::AddBroadcast { a, b }
            | Op::Mul { a, b } => vec![*a, *b],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Concat { parts, .. } => parts.clone(),
            Op::MulConst { a, .. }
            | Op::Scale { a, .. }
            | Op::Gelu { a }
            | Op::Relu { a }
            | Op::Sigmoid { a }
            | Op::Softmax { a, .. }
            | Op::Reshape { a }
            | Op::Permute { a, .. }
            | Op::Select { a, .. }
            | Op::ExpandLeading { a, .. }
            | Op::Sum { a }
            | Op::Mean { a } => vec![*a],
            Op::BceWithLogits { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
    op: Op,
}

/// Public view of one tape entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub op: &'static str,
    pub inputs: Vec<usize>,
    pub output: usize,
}

/// Wengert list of forward operations; `backward` replays it in reverse.
///
/// Node ids are assigned in creation order, so every input id is smaller than
/// the id of the node consuming it.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044_715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn records(&self) -> Vec<NodeRecord> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeRecord {
                op: n.op.name(),
                inputs: n.op.inputs().iter().map(|v| v.0).collect(),
                output: i,
            })
            .collect()
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Snapshot of a node as a standalone tensor (gradient included when present).
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            values: n.value.clone(),
            requires_grad: n.requires_grad,
            grad: n.grad.clone(),
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf; gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad;
        self.nodes.push(Node {
            shape: tensor.shape,
            value: tensor.values,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f32>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, values)?))
    }

    pub fn variable(&mut self, shape: Vec<usize>, values: Vec<f32>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, values)?.with_grad()))
    }

    /// Matrix product contracting the last axis of `a` with the first axis of
    /// a rank-2 `b`; leading axes of `a` are kept.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(&sa) / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        Ok(self.push(shape, out, Op::MatMul { a, b }))
    }

    /// Batched product over a leading group axis: `[g,m,k]·[g,k,n]`, or
    /// `[g,m,k]·[g,n,k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape("bmm", &sa, &sb));
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::shape("bmm", &sa, &sb));
        }
        let mut out = vec![0.0; g * m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for gi in 0..g {
                let asl = &av[gi * m * k..(gi + 1) * m * k];
                let bsl = &bv[gi * k * n..(gi + 1) * k * n];
                let osl = &mut out[gi * m * n..(gi + 1) * m * n];
                if trans_b {
                    gemm_nt(asl, bsl, osl, m, k, n);
                } else {
                    gemm_nn(asl, bsl, osl, m, k, n);
                }
            }
        }
        Ok(self.push(vec![g, m, n], out, Op::BatchMatMul { a, b, trans_b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<f32> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s (b is tiled).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape("add_broadcast", sa, sb));
        }
        let bn = self.value(b).len();
        let bv = self.value(b);
        let out: Vec<f32> = self.value(a).iter().enumerate().map(|(i, x)| x + bv[i % bn]).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddBroadcast { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<f32> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }))
    }

    /// Elementwise product with a non-differentiable factor (dropout masks).
    pub fn mul_const(&mut self, a: Var, factor: Vec<f32>) -> Result<Var> {
        if factor.len() != self.value(a).len() {
            return Err(Error::shape("mul_const", self.shape(a), &[factor.len()]));
        }
        let out: Vec<f32> = self.value(a).iter().zip(&factor).map(|(x, f)| x * f).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::MulConst { a, factor }))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out: Vec<f32> = self.value(a).iter().map(|x| x * s).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale { a, s })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out: Vec<f32> = self.value(a).iter().map(|&x| gelu(x as f64) as f32).collect();
        self.push(self.shape(a).to_vec(), out, Op::Gelu { a })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f32> = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        self.push(self.shape(a).to_vec(), out, Op::Relu { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out: Vec<f32> = self.value(a).iter().map(|&x| sigmoid(x as f64) as f32).collect();
        self.push(self.shape(a).to_vec(), out, Op::Sigmoid { a })
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.value(a);
        let mut out = vec![0.0; x.len()];
        let mut buf = vec![0.0f64; n];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    max = max.max(x[at(j)] as f64);
                }
                let mut total = 0.0;
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = (x[at(j)] as f64 - max).exp();
                    total += *b;
                }
                for (j, b) in buf.iter().enumerate() {
                    out[at(j)] = (b / total) as f32;
                }
            }
        }
        Ok(self.push(shape, out, Op::Softmax { a, axis }))
    }

    /// Layer normalisation over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f32) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap_or(&0);
        if n < 2 {
            return Err(Error::Contract(format!(
                "layer_norm needs a normalised axis of length >= 2, got {shape:?}"
            )));
        }
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::shape("layer_norm", &shape, self.shape(gain)));
        }
        let rows = numel(&shape) / n;
        let xv = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let mut out = vec![0.0; xv.len()];
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = row
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / n as f64;
            let rstd = 1.0 / (var + eps as f64).sqrt();
            for j in 0..n {
                let xhat = (row[j] as f64 - mean) * rstd;
                out[r * n + j] = (xhat * g[j] as f64 + b[j] as f64) as f32;
            }
            stats.push((mean, rstd));
        }
        Ok(self.push(shape, out, Op::LayerNorm { x, gain, bias, stats }))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(a).len() {
            return Err(Error::shape("reshape", self.shape(a), &shape));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(shape, out, Op::Reshape { a }))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::shape("permute", &shape, perm));
        }
        let (out, out_shape) = kernels::permute(self.value(a), &shape, perm);
        Ok(self.push(out_shape, out, Op::Permute { a, perm: perm.to_vec() }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().zip(&first).enumerate().any(|(i, (x, y))| i != axis && x != y) {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Picks `index` along `axis`, dropping that axis.
    pub fn select(&mut self, a: Var, axis: usize, index: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || index >= shape[axis] {
            return Err(Error::shape("select", &shape, &[axis, index]));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.value(a);
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let start = (o * n + index) * inner;
            out.extend_from_slice(&x[start..start + inner]);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.push(out_shape, out, Op::Select { a, axis, index }))
    }

    /// Repeats `a` `n` times along a new leading axis.
    pub fn expand_leading(&mut self, a: Var, n: usize) -> Var {
        let x = self.value(a);
        let mut out = Vec::with_capacity(x.len() * n);
        for _ in 0..n {
            out.extend_from_slice(x);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.shape(a));
        self.push(shape, out, Op::ExpandLeading { a, n })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().map(|&v| v as f64).sum();
        self.push(Vec::new(), vec![s as f32], Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s: f64 = x.iter().map(|&v| v as f64).sum::<f64>() / x.len().max(1) as f64;
        self.push(Vec::new(), vec![s as f32], Op::Mean { a })
    }

    /// Mean binary cross-entropy of `targets` under `sigmoid(logits)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f32]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() || z.is_empty() {
            return Err(Error::shape("bce_with_logits", self.shape(logits), &[targets.len()]));
        }
        let total: f64 = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| softplus(z as f64) - y as f64 * z as f64)
            .sum();
        let loss = total / z.len() as f64;
        Ok(self.push(
            Vec::new(),
            vec![loss as f32],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into every node that
    /// requires a gradient. Existing gradients are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            let Some(gout) = node.grad.as_deref() else {
                continue;
            };
            backprop(node, gout, before);
        }
        Ok(())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Gradient buffer of an input node, allocated on first use; `None` when
/// the input does not track gradients.
fn slot(nodes: &mut [Node], v: Var) -> Option<&mut Vec<f32>> {
    let n = &mut nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    let len = n.value.len();
    Some(n.grad.get_or_insert_with(|| vec![0.0; len]))
}

/// Moves an input's gradient buffer out so the remaining nodes can be read
/// while it is written; pair with [`put`].
fn take(nodes: &mut [Node], v: Var) -> Option<Vec<f32>> {
    let n = &mut nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    let len = n.value.len();
    Some(n.grad.take().unwrap_or_else(|| vec![0.0; len]))
}

fn put(nodes: &mut [Node], v: Var, g: Vec<f32>) {
    nodes[v.0].grad = Some(g);
}

fn backprop(node: &Node, gout: &[f32], nodes: &mut [Node]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let sb = nodes[b.0].shape.clone();
            let (k, n) = (sb[0], sb[1]);
            let m = gout.len() / n.max(1);
            if let Some(mut ga) = take(nodes, *a) {
                // dA = dC · Bᵀ
                gemm_nt(gout, &nodes[b.0].value, &mut ga, m, n, k);
                put(nodes, *a, ga);
            }
            if let Some(mut gb) = take(nodes, *b) {
                // dB = Aᵀ · dC
                gemm_tn(&nodes[a.0].value, gout, &mut gb, m, k, n);
                put(nodes, *b, gb);
            }
        }
        Op::BatchMatMul { a, b, trans_b } => {
            let sa = nodes[a.0].shape.clone();
            let (g, m, k) = (sa[0], sa[1], sa[2]);
            let n = node.shape[2];
            if let Some(mut ga) = take(nodes, *a) {
                let bv = &nodes[b.0].value;
                for gi in 0..g {
                    let dc = &gout[gi * m * n..(gi + 1) * m * n];
                    let bs = &bv[gi * k * n..(gi + 1) * k * n];
                    let da = &mut ga[gi * m * k..(gi + 1) * m * k];
                    if *trans_b {
                        // C = A·Bᵀ with B [n,k]: dA = dC·B
                        gemm_nn(dc, bs, da, m, n, k);
                    } else {
                        gemm_nt(dc, bs, da, m, n, k);
                    }
                }
                put(nodes, *a, ga);
            }
            if let Some(mut gb) = take(nodes, *b) {
                let av = &nodes[a.0].value;
                for gi in 0..g {
                    let dc = &gout[gi * m * n..(gi + 1) * m * n];
                    let asl = &av[gi * m * k..(gi + 1) * m * k];
                    let db = &mut gb[gi * k * n..(gi + 1) * k * n];
                    if *trans_b {
                        // dB[n,k] = dCᵀ·A
                        gemm_tn(dc, asl, db, m, n, k);
                    } else {
                        gemm_tn(asl, dc, db, m, k, n);
                    }
                }
                put(nodes, *b, gb);
            }
        }
        Op::Add { a, b } => {
            if let Some(g) = slot(nodes, *a) {
                add_into(g, gout);
            }
            if let Some(g) = slot(nodes, *b) {
                add_into(g, gout);
            }
        }
        Op::AddBroadcast { a, b } => {
            if let Some(g) = slot(nodes, *a) {
                add_into(g, gout);
            }
            if let Some(g) = slot(nodes, *b) {
                let bn = g.len();
                let mut acc = vec![0.0f64; bn];
                for (i, &v) in gout.iter().enumerate() {
                    acc[i % bn] += v as f64;
                }
                for (d, s) in g.iter_mut().zip(acc) {
                    *d += s as f32;
                }
            }
        }
        Op::Mul { a, b } => {
            if let Some(mut g) = take(nodes, *a) {
                for ((d, &go), &y) in g.iter_mut().zip(gout).zip(&nodes[b.0].value) {
                    *d += go * y;
                }
                put(nodes, *a, g);
            }
            if let Some(mut g) = take(nodes, *b) {
                for ((d, &go), &x) in g.iter_mut().zip(gout).zip(&nodes[a.0].value) {
                    *d += go * x;
                }
                put(nodes, *b, g);
            }
        }
        Op::MulConst { a, factor } => {
            if let Some(g) = slot(nodes, *a) {
                for ((d, &go), &f) in g.iter_mut().zip(gout).zip(factor) {
                    *d += go * f;
                }
            }
        }
        Op::Scale { a, s } => {
            if let Some(g) = slot(nodes, *a) {
                for (d, &go) in g.iter_mut().zip(gout) {
                    *d += go * s;
                }
            }
        }
        Op::Gelu { a } => {
            if let Some(mut g) = take(nodes, *a) {
                for ((d, &go), &xv) in g.iter_mut().zip(gout).zip(&nodes[a.0].value) {
                    *d += (go as f64 * gelu_grad(xv as f64)) as f32;
                }
                put(nodes, *a, g);
            }
        }
        Op::Relu { a } => {
            if let Some(mut g) = take(nodes, *a) {
                for ((d, &go), &xv) in g.iter_mut().zip(gout).zip(&nodes[a.0].value) {
                    if xv > 0.0 {
                        *d += go;
                    }
                }
                put(nodes, *a, g);
            }
        }
        Op::Sigmoid { a } => {
            if let Some(g) = slot(nodes, *a) {
                for ((d, &go), &y) in g.iter_mut().zip(gout).zip(&node.value) {
                    *d += go * y * (1.0 - y);
                }
            }
        }
        Op::Softmax { a, axis } => {
            if let Some(g) = slot(nodes, *a) {
                let (outer, n, inner) = split_axis(&node.shape, *axis);
                let y = &node.value;
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let s: f64 = (0..n).map(|j| gout[at(j)] as f64 * y[at(j)] as f64).sum();
                        for j in 0..n {
                            let k = at(j);
                            g[k] += (y[k] as f64 * (gout[k] as f64 - s)) as f32;
                        }
                    }
                }
            }
        }
        Op::LayerNorm { x, gain, bias, stats } => {
            let n = *node.shape.last().unwrap();
            let rows = gout.len() / n;
            let xv = nodes[x.0].value.clone();
            let gv = nodes[gain.0].value.clone();
            let xhat = |r: usize, j: usize| (xv[r * n + j] as f64 - stats[r].0) * stats[r].1;
            if nodes[gain.0].requires_grad || nodes[bias.0].requires_grad {
                let mut dg = vec![0.0f64; n];
                let mut db = vec![0.0f64; n];
                for r in 0..rows {
                    for j in 0..n {
                        let go = gout[r * n + j] as f64;
                        dg[j] += go * xhat(r, j);
                        db[j] += go;
                    }
                }
                if let Some(g) = slot(nodes, *gain) {
                    for (d, s) in g.iter_mut().zip(&dg) {
                        *d += *s as f32;
                    }
                }
                if let Some(g) = slot(nodes, *bias) {
                    for (d, s) in g.iter_mut().zip(&db) {
                        *d += *s as f32;
                    }
                }
            }
            if let Some(g) = slot(nodes, *x) {
                let mut dxhat = vec![0.0f64; n];
                for r in 0..rows {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..n {
                        dxhat[j] = gout[r * n + j] as f64 * gv[j] as f64;
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat(r, j);
                    }
                    mean_d /= n as f64;
                    mean_dx /= n as f64;
                    let rstd = stats[r].1;
                    for j in 0..n {
                        g[r * n + j] += (rstd * (dxhat[j] - mean_d - xhat(r, j) * mean_dx)) as f32;
                    }
                }
            }
        }
        Op::Reshape { a } => {
            if let Some(g) = slot(nodes, *a) {
                add_into(g, gout);
            }
        }
        Op::Permute { a, perm } => {
            if let Some(g) = slot(nodes, *a) {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (back, _) = kernels::permute(gout, &node.shape, &inverse);
                add_into(g, &back);
            }
        }
        Op::Concat { parts, axis } => {
            let outer: usize = node.shape[..*axis].iter().product();
            let inner: usize = node.shape[axis + 1..].iter().product();
            let total = node.shape[*axis] * inner;
            let mut offset = 0;
            for p in parts {
                let len = nodes[p.0].shape[*axis] * inner;
                if let Some(g) = slot(nodes, *p) {
                    for o in 0..outer {
                        let src = &gout[o * total + offset..o * total + offset + len];
                        add_into(&mut g[o * len..(o + 1) * len], src);
                    }
                }
                offset += len;
            }
        }
        Op::Select { a, axis, index } => {
            let shape = nodes[a.0].shape.clone();
            if let Some(g) = slot(nodes, *a) {
                let (outer, n, inner) = split_axis(&shape, *axis);
                for o in 0..outer {
                    let start = (o * n + index) * inner;
                    add_into(&mut g[start..start + inner], &gout[o * inner..(o + 1) * inner]);
                }
            }
        }
        Op::ExpandLeading { a, n } => {
            if let Some(g) = slot(nodes, *a) {
                let len = g.len();
                let mut acc = vec![0.0f64; len];
                for r in 0..*n {
                    for (d, &v) in acc.iter_mut().zip(&gout[r * len..(r + 1) * len]) {
                        *d += v as f64;
                    }
                }
                for (d, s) in g.iter_mut().zip(acc) {
                    *d += s as f32;
                }
            }
        }
        Op::Sum { a } => {
            if let Some(g) = slot(nodes, *a) {
                g.iter_mut().for_each(|d| *d += gout[0]);
            }
        }
        Op::Mean { a } => {
            if let Some(g) = slot(nodes, *a) {
                let s = gout[0] / g.len() as f32;
                g.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::BceWithLogits { logits, targets } => {
            if let Some(mut g) = take(nodes, *logits) {
                let z = &nodes[logits.0].value;
                let scale = gout[0] as f64 / z.len() as f64;
                for ((d, &zv), &y) in g.iter_mut().zip(z).zip(targets) {
                    *d += ((sigmoid(zv as f64) - y as f64) * scale) as f32;
                }
                put(nodes, *logits, g);
            }
        }
    }
}
