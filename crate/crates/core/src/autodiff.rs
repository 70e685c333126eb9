//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so the tape is already a
//! topological order and `backward` is a single reverse sweep. The tape is
//! cleared after every backward pass.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeometry, Padding};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        if let Some(id) = self.id(&name) {
            self.values[id.0] = value;
            return id;
        }
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }
}

/// Gradients keyed by parameter; absent entries received no gradient.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Drops every gradient whose parameter fails `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(ParamId) -> bool) {
        self.grads.retain(|id, _| keep(*id));
    }

    fn accumulate(&mut self, id: ParamId, g: Tensor) {
        match self.grads.get_mut(&id) {
            Some(acc) => acc.add_assign(&g),
            None => {
                self.grads.insert(id, g);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Input,
    Param(ParamId),
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geo: ConvGeometry,
    },
    Relu(NodeId),
    MaxPool { x: NodeId, argmax: Vec<usize> },
    Reshape(NodeId),
    SoftmaxCe { logits: NodeId, labels: Vec<usize>, probs: Vec<f64> },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    /// A scalar computed outside the graph together with its gradient with
    /// respect to each listed input.
    External(Vec<(NodeId, Tensor)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// A trainable parameter copied from the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = ops::dense_forward(self.value(x), self.value(w), self.value(b))?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Dense { x, w, b }, needs))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let (y, geo) =
            ops::conv2d_forward(self.value(x), self.value(w), Some(self.value(b)), stride, padding)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Conv { x, w, b, geo }, needs))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = ops::relu_forward(self.value(x));
        let needs = self.needs(x);
        self.push(y, Op::Relu(x), needs)
    }

    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (y, argmax) = ops::max_pool2_forward(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::MaxPool { x, argmax }, needs))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let y = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::Reshape(x), needs))
    }

    /// Flattens every axis after the first.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.value(x).shape();
        let batch = shape.first().copied().unwrap_or(1);
        let rest = shape.iter().skip(1).product();
        self.reshape(x, vec![batch, rest])
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let y = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let y = self.value(x).map(|v| v * factor);
        let needs = self.needs(x);
        self.push(y, Op::Scale(x, factor), needs)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let y = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(y, Op::Sum(x), needs)
    }

    /// Records a scalar whose gradient with respect to `inputs` was computed
    /// analytically by the caller.
    pub fn external(&mut self, value: f64, inputs: Vec<(NodeId, Tensor)>) -> Result<NodeId> {
        for (id, g) in &inputs {
            if g.shape() != self.value(*id).shape() {
                return Err(Error::Dimension(format!(
                    "external gradient shape {:?} does not match input shape {:?}",
                    g.shape(),
                    self.value(*id).shape()
                )));
            }
        }
        let needs = inputs.iter().any(|(id, _)| self.needs(*id));
        Ok(self.push(Tensor::scalar(value), Op::External(inputs), needs))
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "operand shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Gradients of the scalar `loss` with respect to every parameter node
    /// that contributed to it. Clears the tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward pass".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("loss node is not on the current tape".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::State(format!(
                "loss must be scalar, found shape {:?}",
                self.value(loss).shape()
            )));
        }
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));
        let mut out = Gradients::default();

        let push = |grads: &mut Vec<Option<Tensor>>, id: NodeId, g: Tensor| {
            if !nodes[id.0].needs_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => out.accumulate(*pid, dy),
                Op::Dense { x, w, b } => {
                    let (dx, dw, db) = ops::dense_backward(
                        &nodes[x.0].value,
                        &nodes[w.0].value,
                        &dy,
                        nodes[x.0].needs_grad,
                    );
                    if let Some(dx) = dx {
                        push(&mut grads, *x, dx);
                    }
                    push(&mut grads, *w, dw);
                    push(&mut grads, *b, db);
                }
                Op::Conv { x, w, b, geo } => {
                    let (dx, dw, db) = ops::conv2d_backward(
                        &nodes[x.0].value,
                        geo,
                        &nodes[w.0].value,
                        &dy,
                        nodes[x.0].needs_grad,
                    );
                    if let Some(dx) = dx {
                        push(&mut grads, *x, dx);
                    }
                    push(&mut grads, *w, dw);
                    push(&mut grads, *b, db);
                }
                Op::Relu(x) => {
                    let mut dx = dy;
                    for (g, v) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if *v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    push(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = Tensor::zeros(nodes[x.0].value.shape());
                    let d = dx.data_mut();
                    for (&src, g) in argmax.iter().zip(dy.data()) {
                        d[src] += g;
                    }
                    push(&mut grads, *x, dx);
                }
                Op::Reshape(x) => {
                    let shape = nodes[x.0].value.shape().to_vec();
                    push(&mut grads, *x, dy.reshape(shape)?);
                }
                Op::SoftmaxCe {
                    logits,
                    labels,
                    probs,
                } => {
                    let upstream = dy.item()?;
                    let classes = nodes[logits.0].value.shape()[1];
                    let batch = labels.len() as f64;
                    let mut g = probs.clone();
                    for (i, &label) in labels.iter().enumerate() {
                        g[i * classes + label] -= 1.0;
                    }
                    for v in &mut g {
                        *v *= upstream / batch;
                    }
                    let shape = nodes[logits.0].value.shape().to_vec();
                    push(&mut grads, *logits, Tensor::new(shape, g)?);
                }
                Op::Add(a, b) => {
                    push(&mut grads, *a, dy.clone());
                    push(&mut grads, *b, dy);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let da = Tensor::new(
                        va.shape().to_vec(),
                        dy.data().iter().zip(vb.data()).map(|(g, v)| g * v).collect(),
                    )?;
                    let db = Tensor::new(
                        vb.shape().to_vec(),
                        dy.data().iter().zip(va.data()).map(|(g, v)| g * v).collect(),
                    )?;
                    push(&mut grads, *a, da);
                    push(&mut grads, *b, db);
                }
                Op::Scale(x, factor) => push(&mut grads, *x, dy.map(|g| g * factor)),
                Op::Sum(x) => {
                    let g = dy.item()?;
                    push(&mut grads, *x, Tensor::full(nodes[x.0].value.shape(), g));
                }
                Op::External(inputs) => {
                    let g = dy.item()?;
                    for (id, local) in inputs {
                        push(&mut grads, *id, local.map(|v| v * g));
                    }
                }
            }
        }
        Ok(out)
    }
}
