use crate::error::{Error, Result};

use super::kernels::{self, ConvGeometry};
use super::loss;
use super::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Row-wise softmax cross-entropy; targets hold class indices.
    SoftmaxCe,
    /// Binary cross-entropy on logits; targets in `[0, 1]`.
    Bce,
    SmoothL1,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geometry: ConvGeometry,
        columns: Vec<f64>,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample(Var),
    Add(Var, Var),
    Scale(Var, f64),
    Cells {
        input: Var,
        first: usize,
        last: usize,
    },
    GatherRows {
        input: Var,
        rows: Vec<usize>,
    },
    Combine {
        coeffs: Var,
        protos: Var,
        owners: Vec<usize>,
    },
    /// Any loss: the gradient w.r.t. the prediction is precomputed.
    Loss {
        pred: Var,
        grad: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias, .. } => vec![*input, *kernel, *bias],
            Op::Relu(x) | Op::Sigmoid(x) | Op::Upsample(x) | Op::Scale(x, _) => vec![*x],
            Op::MaxPool { input, .. } | Op::Cells { input, .. } | Op::GatherRows { input, .. } => vec![*input],
            Op::Add(a, b) => vec![*a, *b],
            Op::Combine { coeffs, protos, .. } => vec![*coeffs, *protos],
            Op::Loss { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only tape of executed operations.
///
/// Nodes are stored in execution order, which is a topological order, so
/// the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Records a leaf. It receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes[var.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, var: Var) -> Option<Vec<f64>> {
        self.nodes[var.0].grad.take()
    }

    fn push(&mut self, mut value: Tensor, op: Op, needs_grad: bool) -> Var {
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, what: &str) -> Result<Var> {
        value.ensure_finite(what)?;
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(value, op, needs_grad))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let keep = self.nodes[kernel.0].needs_grad;
        let (out, geometry, columns) = kernels::conv2d_forward(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            pad,
            keep,
        )?;
        self.record(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
                columns,
            },
            "conv2d",
        )
    }

    pub fn elementwise(&mut self, activation: Activation, input: Var) -> Result<Var> {
        match activation {
            Activation::Relu => self.relu(input),
            Activation::Sigmoid => self.sigmoid(input),
        }
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = kernels::relu_forward(self.value(input));
        self.record(out, Op::Relu(input), "relu")
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let out = kernels::sigmoid_forward(self.value(input));
        self.record(out, Op::Sigmoid(input), "sigmoid")
    }

    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2d_forward(self.value(input))?;
        self.record(out, Op::MaxPool { input, argmax }, "maxpool2d")
    }

    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let out = kernels::upsample2x_forward(self.value(input))?;
        self.record(out, Op::Upsample(input), "upsample2x")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!("cannot add {:?} and {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.record(out, Op::Add(a, b), "add")
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let x = self.value(input);
        let out = Tensor::new(x.shape(), x.data().iter().map(|v| v * factor).collect())?;
        self.record(out, Op::Scale(input, factor), "scale")
    }

    /// Flattens channels `first..last` of an NCHW tensor into one row per
    /// spatial cell: row `n·h·w + y·w + x`.
    pub fn cells(&mut self, input: Var, first: usize, last: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if first >= last || last > c {
            return Err(Error::Shape(format!("channel range {first}..{last} invalid for {c} channels")));
        }
        let width = last - first;
        let x = self.value(input).data();
        let mut out = vec![0.0; n * h * w * width];
        for b in 0..n {
            for ch in first..last {
                let plane = &x[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                for (p, v) in plane.iter().enumerate() {
                    out[(b * h * w + p) * width + ch - first] = *v;
                }
            }
        }
        let out = Tensor::new(&[n * h * w, width], out)?;
        self.record(out, Op::Cells { input, first, last }, "cells")
    }

    pub fn gather_rows(&mut self, input: Var, rows: &[usize]) -> Result<Var> {
        let [r, c] = self.value(input).dims2()?;
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!("row {bad} out of range for {r} rows")));
        }
        let x = self.value(input).data();
        let data = rows.iter().flat_map(|&i| x[i * c..(i + 1) * c].iter().copied()).collect();
        let out = Tensor::new(&[rows.len(), c], data)?;
        self.record(
            out,
            Op::GatherRows {
                input,
                rows: rows.to_vec(),
            },
            "gather_rows",
        )
    }

    /// Per-instance linear combination of prototype maps; see
    /// [`kernels::combine_prototypes_forward`].
    pub fn combine_prototypes(&mut self, coeffs: Var, protos: Var, owners: &[usize]) -> Result<Var> {
        let out = kernels::combine_prototypes_forward(self.value(coeffs), self.value(protos), owners)?;
        self.record(
            out,
            Op::Combine {
                coeffs,
                protos,
                owners: owners.to_vec(),
            },
            "combine_prototypes",
        )
    }

    /// Unweighted loss of `pred` against `target`.
    ///
    /// For [`LossKind::SoftmaxCe`] `pred` is rows×classes and `target` holds
    /// one integral class index per row.
    pub fn loss(&mut self, kind: LossKind, pred: Var, target: &Tensor) -> Result<Var> {
        match kind {
            LossKind::SoftmaxCe => {
                let classes = target
                    .data()
                    .iter()
                    .map(|&t| {
                        if t >= 0.0 && t.fract() == 0.0 {
                            Ok(t as usize)
                        } else {
                            Err(Error::Domain(format!("class target {t} is not an index")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.softmax_ce(pred, &classes, None)
            }
            LossKind::Bce => self.bce_with_logits(pred, target.data(), None),
            LossKind::SmoothL1 => self.smooth_l1(pred, target.data()),
        }
    }

    pub fn softmax_ce(&mut self, logits: Var, targets: &[usize], weights: Option<&[f64]>) -> Result<Var> {
        let [rows, classes] = self.value(logits).dims2()?;
        if rows != targets.len() {
            return Err(Error::Shape(format!("{} targets for {rows} rows", targets.len())));
        }
        let (value, grad) = loss::softmax_cross_entropy(self.value(logits).data(), classes, targets, weights)?;
        self.record(Tensor::scalar(value), Op::Loss { pred: logits, grad }, "softmax_ce")
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], weights: Option<&[f64]>) -> Result<Var> {
        let (value, grad) = loss::bce_with_logits(self.value(logits).data(), targets, weights)?;
        self.record(Tensor::scalar(value), Op::Loss { pred: logits, grad }, "bce")
    }

    pub fn smooth_l1(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let (value, grad) = loss::smooth_l1(self.value(pred).data(), target)?;
        self.record(Tensor::scalar(value), Op::Loss { pred, grad }, "smooth_l1")
    }

    /// Back-propagates from the scalar `root`, accumulating into every node
    /// that needs a gradient. Each node is visited once, in reverse order.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.needs_grad {
                continue;
            }
            let Some(upstream) = node.grad.as_deref() else {
                continue;
            };
            if let Some(bad) = upstream.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient {bad} at node {i}")));
            }
            propagate(&node.op, &node.value, upstream, before);
        }
        Ok(())
    }
}

fn accumulate(nodes: &mut [Node], var: Var, contribution: Vec<f64>) {
    let node = &mut nodes[var.0];
    match &mut node.grad {
        Some(g) => g.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
        None => node.grad = Some(contribution),
    }
}

fn propagate(op: &Op, value: &Tensor, upstream: &[f64], nodes: &mut [Node]) {
    let wants = |nodes: &[Node], v: Var| nodes[v.0].needs_grad;
    match op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            kernel,
            bias,
            geometry,
            columns,
        } => {
            let want = (wants(nodes, *input), wants(nodes, *kernel), wants(nodes, *bias));
            let grads = kernels::conv2d_backward(
                geometry,
                &nodes[input.0].value,
                &nodes[kernel.0].value,
                columns,
                upstream,
                want,
            );
            for (var, g) in [(*input, grads.input), (*kernel, grads.kernel), (*bias, grads.bias)] {
                if let Some(g) = g {
                    accumulate(nodes, var, g);
                }
            }
        }
        Op::Relu(x) => {
            if wants(nodes, *x) {
                let g = upstream
                    .iter()
                    .zip(nodes[x.0].value.data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(nodes, *x, g);
            }
        }
        Op::Sigmoid(x) => {
            if wants(nodes, *x) {
                let g = upstream
                    .iter()
                    .zip(value.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                accumulate(nodes, *x, g);
            }
        }
        Op::MaxPool { input, argmax } => {
            if wants(nodes, *input) {
                let mut g = vec![0.0; nodes[input.0].value.numel()];
                for (&src, up) in argmax.iter().zip(upstream) {
                    g[src] += up;
                }
                accumulate(nodes, *input, g);
            }
        }
        Op::Upsample(x) => {
            if wants(nodes, *x) {
                let shape = nodes[x.0].value.dims4().expect("upsample input is rank 4");
                accumulate(nodes, *x, kernels::upsample2x_backward(shape, upstream));
            }
        }
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if wants(nodes, v) {
                    accumulate(nodes, v, upstream.to_vec());
                }
            }
        }
        Op::Scale(x, factor) => {
            if wants(nodes, *x) {
                accumulate(nodes, *x, upstream.iter().map(|g| g * factor).collect());
            }
        }
        Op::Cells { input, first, last } => {
            if wants(nodes, *input) {
                let [n, c, h, w] = nodes[input.0].value.dims4().expect("cells input is rank 4");
                let width = last - first;
                let mut g = vec![0.0; n * c * h * w];
                for b in 0..n {
                    for ch in *first..*last {
                        let plane = &mut g[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                        for (p, v) in plane.iter_mut().enumerate() {
                            *v = upstream[(b * h * w + p) * width + ch - first];
                        }
                    }
                }
                accumulate(nodes, *input, g);
            }
        }
        Op::GatherRows { input, rows } => {
            if wants(nodes, *input) {
                let [r, c] = nodes[input.0].value.dims2().expect("gather input is rank 2");
                let mut g = vec![0.0; r * c];
                for (k, &row) in rows.iter().enumerate() {
                    for j in 0..c {
                        g[row * c + j] += upstream[k * c + j];
                    }
                }
                accumulate(nodes, *input, g);
            }
        }
        Op::Combine { coeffs, protos, owners } => {
            let [instances, k] = nodes[coeffs.0].value.dims2().expect("coefficients are rank 2");
            let [n, _, h, w] = nodes[protos.0].value.dims4().expect("prototypes are rank 4");
            let hw = h * w;
            if wants(nodes, *coeffs) {
                let planes = nodes[protos.0].value.data();
                let mut g = vec![0.0; instances * k];
                for (i, &owner) in owners.iter().enumerate() {
                    let maps = &planes[owner * k * hw..(owner + 1) * k * hw];
                    // dC[i,:] = maps (k×hw) · up[i] (hw×1)
                    kernels::gemm(
                        k,
                        hw,
                        1,
                        maps,
                        (hw, 1),
                        &upstream[i * hw..(i + 1) * hw],
                        (1, 1),
                        0.0,
                        &mut g[i * k..(i + 1) * k],
                    );
                }
                accumulate(nodes, *coeffs, g);
            }
            if wants(nodes, *protos) {
                let coef = nodes[coeffs.0].value.data();
                let mut g = vec![0.0; n * k * hw];
                for (i, &owner) in owners.iter().enumerate() {
                    kernels::gemm(
                        k,
                        1,
                        hw,
                        &coef[i * k..(i + 1) * k],
                        (1, 1),
                        &upstream[i * hw..(i + 1) * hw],
                        (hw, 1),
                        1.0,
                        &mut g[owner * k * hw..(owner + 1) * k * hw],
                    );
                }
                accumulate(nodes, *protos, g);
            }
        }
        Op::Loss { pred, grad } => {
            if wants(nodes, *pred) {
                let scale = upstream[0];
                accumulate(nodes, *pred, grad.iter().map(|g| g * scale).collect());
            }
        }
    }
}
