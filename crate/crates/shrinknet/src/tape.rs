//! Recorded-operation reverse-mode automatic differentiation.
//!
//! A [`Tape`] is created per forward pass. Operations append nodes in
//! topological order; [`Tape::backward`] consumes the tape and returns the
//! gradients of every node with respect to a scalar loss.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{strides, Tensor};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Neg,
    Abs,
    Relu,
    Sigmoid,
    Sqrt,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Elementwise op selector for the generic entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EwOp {
    Add,
    Sub,
    Mul,
    Abs,
    Relu,
    Sigmoid,
    Negate,
}

/// How the second operand of a binary op maps onto the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    /// Identical shapes.
    Same,
    /// `b` is a one-element scalar.
    Scalar,
    /// `b` is `[C]` against `a` of shape `[N, C]` or `[N, C, W]`.
    Channel,
    /// `b` is `[N, C]` against `a` of shape `[N, C, W]`.
    SampleChannel,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary {
        kind: UnaryKind,
        a: NodeId,
    },
    Binary {
        kind: BinaryKind,
        a: NodeId,
        b: NodeId,
        bcast: Broadcast,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    ReduceMean {
        a: NodeId,
        axes: Vec<usize>,
    },
    Reshape {
        a: NodeId,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: usize,
    },
    /// `y = x · wᵀ + b` with `x: [N, I]`, `w: [O, I]`, `b: [O]`.
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    /// Soft thresholding with per-sample (`tau: [N]`) or per-sample-per-channel
    /// (`tau: [N, C]`) thresholds against `x: [N, C, W]`.
    SoftThreshold {
        x: NodeId,
        tau: NodeId,
    },
    /// Mean softmax cross-entropy; saves the softmax probabilities.
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of every recorded node, produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
    param_nodes: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    /// Gradient buffer of a node.
    pub fn node(&self, id: NodeId) -> &[f64] {
        &self.grads[id]
    }

    /// Gradients of all parameters registered via [`Tape::param`].
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.param_nodes.iter().map(|&(pid, nid)| (pid, self.grads[nid].as_slice()))
    }

    pub fn param(&self, pid: ParamId) -> Option<&[f64]> {
        self.param_nodes
            .iter()
            .find(|&&(p, _)| p == pid)
            .map(|&(_, nid)| self.grads[nid].as_slice())
    }
}

/// Per-forward-pass operation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: Vec<(ParamId, NodeId)>,
    /// Smallest distance of any piecewise-linear op input to its kink,
    /// over the whole forward pass. Starts at +inf.
    kink_margin: f64,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_nodes: Vec::new(),
            kink_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Minimum distance of any `relu`/`abs`/`soft_threshold` input to its
    /// non-differentiable point during this forward pass.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        #[cfg(debug_assertions)]
        {
            if !matches!(op, Op::Leaf) {
                debug_assert!(
                    value.is_finite(),
                    "non-finite value produced by forward op"
                );
            }
        }
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Record a constant/input leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.leaf(Tensor::scalar(value))
    }

    /// Record a trainable parameter leaf; its gradient is retrievable by
    /// [`ParamId`] after backward.
    pub fn param(&mut self, store: &ParamStore, pid: ParamId) -> NodeId {
        let id = self.leaf(store.value(pid).clone());
        self.param_nodes.push((pid, id));
        id
    }

    /// Generic elementwise entry point over the primitive set.
    pub fn ew_apply(&mut self, op: EwOp, a: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        match (op, b) {
            (EwOp::Add, Some(b)) => self.add(a, b),
            (EwOp::Sub, Some(b)) => self.sub(a, b),
            (EwOp::Mul, Some(b)) => self.mul(a, b),
            (EwOp::Abs, None) => Ok(self.abs(a)),
            (EwOp::Relu, None) => Ok(self.relu(a)),
            (EwOp::Sigmoid, None) => Ok(self.sigmoid(a)),
            (EwOp::Negate, None) => Ok(self.neg(a)),
            (op, Some(_)) => Err(Error::contract(format!("{op:?} takes one operand"))),
            (op, None) => Err(Error::contract(format!("{op:?} takes two operands"))),
        }
    }

    fn unary(&mut self, kind: UnaryKind, a: NodeId) -> NodeId {
        let av = self.nodes[a].value.data();
        let out: Vec<f64> = match kind {
            UnaryKind::Neg => av.iter().map(|v| -v).collect(),
            UnaryKind::Abs => av.iter().map(|v| v.abs()).collect(),
            UnaryKind::Relu => av.iter().map(|v| v.max(0.0)).collect(),
            UnaryKind::Sigmoid => av.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
            UnaryKind::Sqrt => av.iter().map(|v| v.sqrt()).collect(),
            UnaryKind::Square => av.iter().map(|v| v * v).collect(),
        };
        match kind {
            // An input exactly at the origin is not a hazard for abs: the
            // subgradient 0 equals the symmetric difference quotient there.
            UnaryKind::Abs => {
                for v in av {
                    if *v != 0.0 {
                        self.kink_margin = self.kink_margin.min(v.abs());
                    }
                }
            }
            UnaryKind::Relu => {
                for v in av {
                    self.kink_margin = self.kink_margin.min(v.abs());
                }
            }
            _ => {}
        }
        let shape = self.nodes[a].value.shape().to_vec();
        let value = Tensor::new(shape, out).expect("unary preserves shape");
        self.push(value, Op::Unary { kind, a })
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryKind::Neg, a)
    }
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryKind::Abs, a)
    }
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryKind::Relu, a)
    }
    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryKind::Sigmoid, a)
    }
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryKind::Sqrt, a)
    }
    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryKind::Square, a)
    }

    fn resolve_broadcast(&self, a: NodeId, b: NodeId) -> Result<Broadcast> {
        let sa = self.nodes[a].value.shape();
        let sb = self.nodes[b].value.shape();
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        if self.nodes[b].value.numel() == 1 {
            return Ok(Broadcast::Scalar);
        }
        if sb.len() == 1 && (sa.len() == 2 || sa.len() == 3) && sb[0] == sa[1] {
            return Ok(Broadcast::Channel);
        }
        if sb.len() == 2 && sa.len() == 3 && sb[0] == sa[0] && sb[1] == sa[1] {
            return Ok(Broadcast::SampleChannel);
        }
        Err(Error::dimension("elementwise broadcast", sa, sb))
    }

    /// Index into `b` for flat index `i` of `a`.
    fn bcast_index(bcast: Broadcast, shape_a: &[usize], i: usize) -> usize {
        match bcast {
            Broadcast::Same => i,
            Broadcast::Scalar => 0,
            Broadcast::Channel => {
                if shape_a.len() == 2 {
                    i % shape_a[1]
                } else {
                    (i / shape_a[2]) % shape_a[1]
                }
            }
            Broadcast::SampleChannel => i / shape_a[2],
        }
    }

    fn binary(&mut self, kind: BinaryKind, a: NodeId, b: NodeId) -> Result<NodeId> {
        let bcast = self.resolve_broadcast(a, b)?;
        let shape = self.nodes[a].value.shape().to_vec();
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let mut out = Vec::with_capacity(av.len());
        for (i, &x) in av.iter().enumerate() {
            let y = bv[Self::bcast_index(bcast, &shape, i)];
            out.push(match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::Div => x / y,
            });
        }
        let value = Tensor::new(shape, out).expect("binary preserves shape");
        Ok(self.push(value, Op::Binary { kind, a, b, bcast }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Add, a, b)
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Mul, a, b)
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a].value.shape().to_vec();
        let sb = self.nodes[b].value.shape().to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dimension("matmul", &sa, &sb));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let aip = av[i * k + p];
                for j in 0..m {
                    out[i * m + j] += aip * bv[p * m + j];
                }
            }
        }
        let value = Tensor::new(vec![n, m], out).unwrap();
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    pub fn reduce_mean(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let shape = self.nodes[a].value.shape().to_vec();
        let mut seen = vec![false; shape.len()];
        for &ax in axes {
            if ax >= shape.len() || seen[ax] {
                return Err(Error::dimension(
                    format!("reduce_mean axes {axes:?}"),
                    &shape,
                    &[],
                ));
            }
            seen[ax] = true;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !seen[*i])
            .map(|(_, &d)| d)
            .collect();
        let reduced: usize = axes.iter().map(|&ax| shape[ax]).product();
        let in_strides = strides(&shape);
        let out_strides = strides(&out_shape);
        let av = self.nodes[a].value.data();
        let mut out = vec![0.0; out_shape.iter().product::<usize>().max(1)];
        for (i, &v) in av.iter().enumerate() {
            out[reduce_target(i, &shape, &in_strides, &seen, &out_strides)] += v;
        }
        let inv = 1.0 / reduced as f64;
        for v in &mut out {
            *v *= inv;
        }
        let value = Tensor::new(out_shape, out).unwrap();
        Ok(self.push(
            value,
            Op::ReduceMean {
                a,
                axes: axes.to_vec(),
            },
        ))
    }

    /// Reinterpret a node with a new shape of equal element count.
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.nodes[a].value.reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { a }))
    }

    /// 1-D cross-correlation: `x: [N, C_in, W]`, `w: [C_out, C_in, K]`,
    /// `b: [C_out]`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let sx = self.nodes[x].value.shape().to_vec();
        let sw = self.nodes[w].value.shape().to_vec();
        let sb = self.nodes[b].value.shape().to_vec();
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(Error::dimension("conv1d input/weights", &sx, &sw));
        }
        if sb.len() != 1 || sb[0] != sw[0] {
            return Err(Error::dimension("conv1d bias", &sw, &sb));
        }
        let (n, c_in, width) = (sx[0], sx[1], sx[2]);
        let (c_out, k) = (sw[0], sw[2]);
        let padded = width + 2 * padding;
        if padded < k {
            return Err(Error::dimension(
                format!("conv1d width {width} too small for kernel {k} with padding {padding}"),
                &sx,
                &sw,
            ));
        }
        let w_out = (padded - k) / stride + 1;
        let xv = self.nodes[x].value.data();
        let wv = self.nodes[w].value.data();
        let bv = self.nodes[b].value.data();
        let mut out = vec![0.0; n * c_out * w_out];
        for s in 0..n {
            for co in 0..c_out {
                for ow in 0..w_out {
                    let mut acc = bv[co];
                    let start = ow * stride;
                    for ci in 0..c_in {
                        for t in 0..k {
                            let pos = start + t;
                            if pos < padding || pos >= padding + width {
                                continue;
                            }
                            let xi = (s * c_in + ci) * width + (pos - padding);
                            acc += xv[xi] * wv[(co * c_in + ci) * k + t];
                        }
                    }
                    out[(s * c_out + co) * w_out + ow] = acc;
                }
            }
        }
        let value = Tensor::new(vec![n, c_out, w_out], out).unwrap();
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
        ))
    }

    /// Dense layer `y = x · wᵀ + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let sx = self.nodes[x].value.shape().to_vec();
        let sw = self.nodes[w].value.shape().to_vec();
        let sb = self.nodes[b].value.shape().to_vec();
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::dimension("linear input/weights", &sx, &sw));
        }
        if sb.len() != 1 || sb[0] != sw[0] {
            return Err(Error::dimension("linear bias", &sw, &sb));
        }
        let (n, i_dim, o_dim) = (sx[0], sx[1], sw[0]);
        let xv = self.nodes[x].value.data();
        let wv = self.nodes[w].value.data();
        let bv = self.nodes[b].value.data();
        let mut out = vec![0.0; n * o_dim];
        for s in 0..n {
            for o in 0..o_dim {
                let mut acc = bv[o];
                for i in 0..i_dim {
                    acc += xv[s * i_dim + i] * wv[o * i_dim + i];
                }
                out[s * o_dim + o] = acc;
            }
        }
        let value = Tensor::new(vec![n, o_dim], out).unwrap();
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// Soft thresholding per Eq-style shrinkage: values inside `[-τ, τ]` go to
    /// zero, the rest move toward zero by `τ`. `tau` has shape `[N]`
    /// (shared across channels) or `[N, C]` (per channel).
    pub fn soft_threshold(&mut self, x: NodeId, tau: NodeId) -> Result<NodeId> {
        let sx = self.nodes[x].value.shape().to_vec();
        let st = self.nodes[tau].value.shape().to_vec();
        if sx.len() != 3 {
            return Err(Error::dimension("soft_threshold input", &sx, &st));
        }
        let per_channel = match st.as_slice() {
            [n] if *n == sx[0] => false,
            [n, c] if *n == sx[0] && *c == sx[1] => true,
            _ => return Err(Error::dimension("soft_threshold tau", &sx, &st)),
        };
        if self.nodes[tau].value.data().iter().any(|&t| t < 0.0) {
            return Err(Error::contract("soft_threshold requires tau >= 0"));
        }
        let (c, width) = (sx[1], sx[2]);
        let xv = self.nodes[x].value.data();
        let tv = self.nodes[tau].value.data();
        let mut out = Vec::with_capacity(xv.len());
        let mut margin = self.kink_margin;
        for (i, &v) in xv.iter().enumerate() {
            let ti = if per_channel {
                i / width
            } else {
                i / (c * width)
            };
            let t = tv[ti];
            margin = margin.min((v - t).abs()).min((v + t).abs());
            out.push(if v > t {
                v - t
            } else if v < -t {
                v + t
            } else {
                0.0
            });
        }
        self.kink_margin = margin;
        let value = Tensor::new(sx, out).unwrap();
        Ok(self.push(value, Op::SoftThreshold { x, tau }))
    }

    /// Mean softmax cross-entropy over a batch; returns a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let sl = self.nodes[logits].value.shape().to_vec();
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(Error::contract(format!(
                "softmax_cross_entropy: logits {:?} vs {} labels",
                sl,
                labels.len()
            )));
        }
        let (n, classes) = (sl[0], sl[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let lv = self.nodes[logits].value.data();
        let mut probs = vec![0.0; n * classes];
        let mut loss = 0.0;
        for s in 0..n {
            let row = &lv[s * classes..(s + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[s * classes + j] = e;
                denom += e;
            }
            for j in 0..classes {
                probs[s * classes + j] /= denom;
            }
            loss -= probs[s * classes + labels[s]].max(1e-300).ln();
        }
        loss /= n as f64;
        let value = Tensor::scalar(loss);
        Ok(self.push(
            value,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar loss that must be the tape's final node.
    /// Consumes the tape; every node's gradient is returned.
    pub fn backward(self, loss: NodeId) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward on an empty tape"));
        }
        if loss != self.nodes.len() - 1 {
            return Err(Error::contract("loss must be the tape's final node"));
        }
        if self.nodes[loss].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.numel()])
            .collect();
        grads[loss][0] = 1.0;

        for id in (0..self.nodes.len()).rev() {
            // Split off the current node's grad so inputs can be written.
            let g = std::mem::take(&mut grads[id]);
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Unary { kind, a } => {
                    let av = self.nodes[*a].value.data();
                    let yv = node.value.data();
                    let ga = &mut grads[*a];
                    match kind {
                        UnaryKind::Neg => {
                            for i in 0..g.len() {
                                ga[i] -= g[i];
                            }
                        }
                        UnaryKind::Abs => {
                            for i in 0..g.len() {
                                // subgradient 0 at the origin
                                ga[i] += g[i]
                                    * if av[i] > 0.0 {
                                        1.0
                                    } else if av[i] < 0.0 {
                                        -1.0
                                    } else {
                                        0.0
                                    };
                            }
                        }
                        UnaryKind::Relu => {
                            for i in 0..g.len() {
                                if av[i] > 0.0 {
                                    ga[i] += g[i];
                                }
                            }
                        }
                        UnaryKind::Sigmoid => {
                            for i in 0..g.len() {
                                ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
                            }
                        }
                        UnaryKind::Sqrt => {
                            for i in 0..g.len() {
                                ga[i] += g[i] * 0.5 / yv[i];
                            }
                        }
                        UnaryKind::Square => {
                            for i in 0..g.len() {
                                ga[i] += g[i] * 2.0 * av[i];
                            }
                        }
                    }
                }
                Op::Binary { kind, a, b, bcast } => {
                    let shape_a = self.nodes[*a].value.shape().to_vec();
                    let av: Vec<f64> = self.nodes[*a].value.data().to_vec();
                    let bv: Vec<f64> = self.nodes[*b].value.data().to_vec();
                    {
                        let ga = &mut grads[*a];
                        for i in 0..g.len() {
                            let j = Self::bcast_index(*bcast, &shape_a, i);
                            match kind {
                                BinaryKind::Add | BinaryKind::Sub => ga[i] += g[i],
                                BinaryKind::Mul => ga[i] += g[i] * bv[j],
                                BinaryKind::Div => ga[i] += g[i] / bv[j],
                            }
                        }
                    }
                    {
                        let gb = &mut grads[*b];
                        for i in 0..g.len() {
                            let j = Self::bcast_index(*bcast, &shape_a, i);
                            match kind {
                                BinaryKind::Add => gb[j] += g[i],
                                BinaryKind::Sub => gb[j] -= g[i],
                                BinaryKind::Mul => gb[j] += g[i] * av[i],
                                BinaryKind::Div => gb[j] -= g[i] * av[i] / (bv[j] * bv[j]),
                            }
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let sa = self.nodes[*a].value.shape();
                    let sb = self.nodes[*b].value.shape();
                    let (n, k, m) = (sa[0], sa[1], sb[1]);
                    let av: Vec<f64> = self.nodes[*a].value.data().to_vec();
                    let bv: Vec<f64> = self.nodes[*b].value.data().to_vec();
                    {
                        let ga = &mut grads[*a];
                        for i in 0..n {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..m {
                                    acc += g[i * m + j] * bv[p * m + j];
                                }
                                ga[i * k + p] += acc;
                            }
                        }
                    }
                    {
                        let gb = &mut grads[*b];
                        for p in 0..k {
                            for j in 0..m {
                                let mut acc = 0.0;
                                for i in 0..n {
                                    acc += av[i * k + p] * g[i * m + j];
                                }
                                gb[p * m + j] += acc;
                            }
                        }
                    }
                }
                Op::ReduceMean { a, axes } => {
                    let shape = self.nodes[*a].value.shape().to_vec();
                    let mut seen = vec![false; shape.len()];
                    for &ax in axes {
                        seen[ax] = true;
                    }
                    let out_shape: Vec<usize> = shape
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !seen[*i])
                        .map(|(_, &d)| d)
                        .collect();
                    let in_strides = strides(&shape);
                    let out_strides = strides(&out_shape);
                    let reduced: f64 = axes.iter().map(|&ax| shape[ax] as f64).product();
                    let ga = &mut grads[*a];
                    for i in 0..ga.len() {
                        let o = reduce_target(i, &shape, &in_strides, &seen, &out_strides);
                        ga[i] += g[o] / reduced;
                    }
                }
                Op::Reshape { a } => {
                    let ga = &mut grads[*a];
                    for i in 0..g.len() {
                        ga[i] += g[i];
                    }
                }
                Op::Conv1d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let sx = self.nodes[*x].value.shape().to_vec();
                    let sw = self.nodes[*w].value.shape().to_vec();
                    let (n, c_in, width) = (sx[0], sx[1], sx[2]);
                    let (c_out, k) = (sw[0], sw[2]);
                    let w_out = (width + 2 * padding - k) / stride + 1;
                    let xv: Vec<f64> = self.nodes[*x].value.data().to_vec();
                    let wv: Vec<f64> = self.nodes[*w].value.data().to_vec();
                    {
                        let gb = &mut grads[*b];
                        for s in 0..n {
                            for co in 0..c_out {
                                for ow in 0..w_out {
                                    gb[co] += g[(s * c_out + co) * w_out + ow];
                                }
                            }
                        }
                    }
                    {
                        let gw = &mut grads[*w];
                        for s in 0..n {
                            for co in 0..c_out {
                                for ow in 0..w_out {
                                    let go = g[(s * c_out + co) * w_out + ow];
                                    let start = ow * stride;
                                    for ci in 0..c_in {
                                        for t in 0..k {
                                            let pos = start + t;
                                            if pos < *padding || pos >= padding + width {
                                                continue;
                                            }
                                            gw[(co * c_in + ci) * k + t] +=
                                                go * xv[(s * c_in + ci) * width + (pos - padding)];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    {
                        let gx = &mut grads[*x];
                        for s in 0..n {
                            for co in 0..c_out {
                                for ow in 0..w_out {
                                    let go = g[(s * c_out + co) * w_out + ow];
                                    let start = ow * stride;
                                    for ci in 0..c_in {
                                        for t in 0..k {
                                            let pos = start + t;
                                            if pos < *padding || pos >= padding + width {
                                                continue;
                                            }
                                            gx[(s * c_in + ci) * width + (pos - padding)] +=
                                                go * wv[(co * c_in + ci) * k + t];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let sx = self.nodes[*x].value.shape().to_vec();
                    let sw = self.nodes[*w].value.shape().to_vec();
                    let (n, i_dim, o_dim) = (sx[0], sx[1], sw[0]);
                    let xv: Vec<f64> = self.nodes[*x].value.data().to_vec();
                    let wv: Vec<f64> = self.nodes[*w].value.data().to_vec();
                    {
                        let gb = &mut grads[*b];
                        for s in 0..n {
                            for o in 0..o_dim {
                                gb[o] += g[s * o_dim + o];
                            }
                        }
                    }
                    {
                        let gw = &mut grads[*w];
                        for s in 0..n {
                            for o in 0..o_dim {
                                let go = g[s * o_dim + o];
                                for i in 0..i_dim {
                                    gw[o * i_dim + i] += go * xv[s * i_dim + i];
                                }
                            }
                        }
                    }
                    {
                        let gx = &mut grads[*x];
                        for s in 0..n {
                            for o in 0..o_dim {
                                let go = g[s * o_dim + o];
                                for i in 0..i_dim {
                                    gx[s * i_dim + i] += go * wv[o * i_dim + i];
                                }
                            }
                        }
                    }
                }
                Op::SoftThreshold { x, tau } => {
                    let sx = self.nodes[*x].value.shape().to_vec();
                    let (c, width) = (sx[1], sx[2]);
                    let per_channel = self.nodes[*tau].value.rank() == 2;
                    let xv: Vec<f64> = self.nodes[*x].value.data().to_vec();
                    let tv: Vec<f64> = self.nodes[*tau].value.data().to_vec();
                    // Gate is 1 strictly outside the dead zone, 0 inside and
                    // on its boundary.
                    {
                        let gx = &mut grads[*x];
                        for i in 0..g.len() {
                            let ti = if per_channel {
                                i / width
                            } else {
                                i / (c * width)
                            };
                            let t = tv[ti];
                            if xv[i] > t || xv[i] < -t {
                                gx[i] += g[i];
                            }
                        }
                    }
                    {
                        let gt = &mut grads[*tau];
                        for i in 0..g.len() {
                            let ti = if per_channel {
                                i / width
                            } else {
                                i / (c * width)
                            };
                            let t = tv[ti];
                            if xv[i] > t {
                                gt[ti] -= g[i];
                            } else if xv[i] < -t {
                                gt[ti] += g[i];
                            }
                        }
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let classes = self.nodes[*logits].value.shape()[1];
                    let n = labels.len() as f64;
                    let gl = &mut grads[*logits];
                    let go = g[0];
                    for (s, &label) in labels.iter().enumerate() {
                        for j in 0..classes {
                            let mut d = probs[s * classes + j];
                            if j == label {
                                d -= 1.0;
                            }
                            gl[s * classes + j] += go * d / n;
                        }
                    }
                }
            }
            grads[id] = g;
        }

        Ok(Gradients {
            grads,
            param_nodes: self.param_nodes,
        })
    }
}

/// Flat output index for a flat input index under axis reduction.
fn reduce_target(
    i: usize,
    in_shape: &[usize],
    in_strides: &[usize],
    reduced: &[bool],
    out_strides: &[usize],
) -> usize {
    let mut out = 0;
    let mut oax = 0;
    for ax in 0..in_shape.len() {
        let idx = (i / in_strides[ax]) % in_shape[ax];
        if !reduced[ax] {
            out += idx * out_strides[oax];
            oax += 1;
        }
    }
    out
}
