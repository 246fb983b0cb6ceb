//! Define-by-run computation graph with reverse-mode gradients.
//!
//! Every primitive is evaluated eagerly when it is recorded, so `value`
//! is available immediately. The recorded node list doubles as a replayable
//! program: [`Graph::forward`] re-evaluates it with rebound leaves, which is
//! also how finite-difference checks perturb parameters.
//!
//! Nodes are appended in evaluation order, so insertion order is a
//! topological order and the backward sweep is a single reverse scan.

use std::collections::{BTreeMap, HashMap};

use super::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Leaf {
    Param(String),
    Input(String),
    Constant,
}

#[derive(Clone, Debug)]
pub enum Op<S> {
    Leaf(Leaf),
    MatMul(NodeId, NodeId),
    /// Elementwise sum; the right operand may be a single row broadcast over
    /// the rows of the left operand.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    Concat {
        parts: Vec<NodeId>,
        axis: Axis,
    },
    Slice {
        input: NodeId,
        axis: Axis,
        start: usize,
        len: usize,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Softplus(NodeId),
    /// Row-wise log-softmax.
    LogSoftmax(NodeId),
    Mean(NodeId),
    Sum(NodeId),
}

impl<S> Op<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "multiply",
            Op::Scale(..) => "scale",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Square(_) => "square",
            Op::Abs(_) => "abs",
            Op::Softplus(_) => "softplus",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<S> {
    op: Op<S>,
    value: Array<S>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    params: HashMap<String, NodeId>,
    inputs: HashMap<String, NodeId>,
    frozen: Vec<String>,
    frozen_ids: HashMap<String, NodeId>,
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softplus<S: Scalar>(x: S) -> S {
    // log(1 + e^x) without overflow
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

fn sign<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            inputs: HashMap::new(),
            frozen: Vec::new(),
            frozen_ids: HashMap::new(),
        }
    }

    /// Parameters whose name starts with `prefix` that are bound after
    /// this call become constants: they take part in the computation but
    /// never receive gradients.
    pub fn freeze(&mut self, prefix: &str) {
        if !self.frozen.iter().any(|p| p == prefix) {
            self.frozen.push(prefix.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array<S> {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op<S> {
        &self.nodes[id.0].op
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> S {
        self.nodes[id.0].value.values()[0]
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn push_leaf(&mut self, leaf: Leaf, value: Array<S>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf(leaf),
            value,
        });
        id
    }

    /// Named parameter leaf. Binding the same name again returns the
    /// existing node so recurrent cells share one leaf per weight.
    pub fn param(&mut self, name: &str, value: &Array<S>) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        if self.frozen.iter().any(|p| name.starts_with(p.as_str())) {
            if let Some(&id) = self.frozen_ids.get(name) {
                return id;
            }
            let id = self.constant(value.clone());
            self.frozen_ids.insert(name.to_string(), id);
            return id;
        }
        let id = self.push_leaf(Leaf::Param(name.to_string()), value.clone());
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn input(&mut self, name: &str, value: Array<S>) -> Result<NodeId> {
        if self.inputs.contains_key(name) {
            return Err(Error::Invalid(format!("input `{name}` bound twice")));
        }
        let id = self.push_leaf(Leaf::Input(name.to_string()), value);
        self.inputs.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn constant(&mut self, value: Array<S>) -> NodeId {
        self.push_leaf(Leaf::Constant, value)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(id.0))
        }
    }

    fn shape(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        self.check(id)?;
        self.value(id).shape2().ok_or_else(|| Error::Shape {
            node: self.nodes.len(),
            op,
            detail: format!("operand {} has rank > 2", id.0),
        })
    }

    fn shape_err<T>(&self, op: &'static str, detail: String) -> Result<T> {
        Err(Error::Shape {
            node: self.nodes.len(),
            op,
            detail,
        })
    }

    fn evaluate(&self, op: &Op<S>) -> Result<Array<S>> {
        let name = op.name();
        match *op {
            Op::Leaf(_) => unreachable!("leaves are pushed directly"),
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(a, name)?;
                let (k2, n) = self.shape(b, name)?;
                if k != k2 {
                    return self.shape_err(
                        name,
                        format!("[{m},{k}] x [{k2},{n}] (nodes {} and {})", a.0, b.0),
                    );
                }
                Ok(Array::matmul_raw(self.value(a), self.value(b), m, k, n))
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (ra, ca) = self.shape(a, name)?;
                let (rb, cb) = self.shape(b, name)?;
                let sub = matches!(op, Op::Sub(..));
                let (va, vb) = (self.value(a), self.value(b));
                if (ra, ca) == (rb, cb) {
                    Ok(if sub {
                        va.zip_map(vb, |x, y| x - y)
                    } else {
                        va.zip_map(vb, |x, y| x + y)
                    })
                } else if rb == 1 && cb == ca {
                    let mut out = va.clone();
                    for (i, v) in out.values_mut().iter_mut().enumerate() {
                        let y = vb.values()[i % ca];
                        *v = if sub { *v - y } else { *v + y };
                    }
                    Ok(out)
                } else {
                    self.shape_err(
                        name,
                        format!(
                            "{:?} vs {:?} (nodes {} and {})",
                            va.dims(),
                            vb.dims(),
                            a.0,
                            b.0
                        ),
                    )
                }
            }
            Op::Mul(a, b) => {
                self.check(a)?;
                self.check(b)?;
                let (va, vb) = (self.value(a), self.value(b));
                if va.len() != vb.len() || va.shape2() != vb.shape2() {
                    return self.shape_err(
                        name,
                        format!("{:?} vs {:?} (nodes {} and {})", va.dims(), vb.dims(), a.0, b.0),
                    );
                }
                Ok(va.zip_map(vb, |x, y| x * y))
            }
            Op::Scale(a, c) => {
                self.check(a)?;
                Ok(self.value(a).map(|x| x * c))
            }
            Op::Concat { ref parts, axis } => {
                if parts.is_empty() {
                    return self.shape_err(name, "no operands".into());
                }
                let shapes = parts
                    .iter()
                    .map(|&p| self.shape(p, name))
                    .collect::<Result<Vec<_>>>()?;
                match axis {
                    Axis::Cols => {
                        let rows = shapes[0].0;
                        if shapes.iter().any(|s| s.0 != rows) {
                            return self.shape_err(name, format!("row counts {shapes:?}"));
                        }
                        let total: usize = shapes.iter().map(|s| s.1).sum();
                        let mut values = Vec::with_capacity(rows * total);
                        for r in 0..rows {
                            for &p in parts {
                                values.extend_from_slice(self.value(p).row(r));
                            }
                        }
                        Array::new(vec![rows, total], values)
                    }
                    Axis::Rows => {
                        let cols = shapes[0].1;
                        if shapes.iter().any(|s| s.1 != cols) {
                            return self.shape_err(name, format!("column counts {shapes:?}"));
                        }
                        let total: usize = shapes.iter().map(|s| s.0).sum();
                        let mut values = Vec::with_capacity(total * cols);
                        for &p in parts {
                            values.extend_from_slice(self.value(p).values());
                        }
                        Array::new(vec![total, cols], values)
                    }
                }
            }
            Op::Slice {
                input,
                axis,
                start,
                len,
            } => {
                let (r, c) = self.shape(input, name)?;
                let extent = if axis == Axis::Rows { r } else { c };
                if len == 0 || start + len > extent {
                    return self.shape_err(
                        name,
                        format!("range {start}..{} of extent {extent} (node {})", start + len, input.0),
                    );
                }
                let v = self.value(input);
                match axis {
                    Axis::Rows => Array::new(
                        vec![len, c],
                        v.values()[start * c..(start + len) * c].to_vec(),
                    ),
                    Axis::Cols => {
                        let mut values = Vec::with_capacity(r * len);
                        for row in 0..r {
                            values.extend_from_slice(&v.row(row)[start..start + len]);
                        }
                        Array::new(vec![r, len], values)
                    }
                }
            }
            Op::Tanh(a) => {
                self.check(a)?;
                Ok(self.value(a).map(|x| x.tanh()))
            }
            Op::Sigmoid(a) => {
                self.check(a)?;
                Ok(self.value(a).map(sigmoid))
            }
            Op::Square(a) => {
                self.check(a)?;
                Ok(self.value(a).map(|x| x * x))
            }
            Op::Abs(a) => {
                self.check(a)?;
                Ok(self.value(a).map(|x| x.abs()))
            }
            Op::Softplus(a) => {
                self.check(a)?;
                Ok(self.value(a).map(softplus))
            }
            Op::LogSoftmax(a) => {
                let (r, c) = self.shape(a, name)?;
                let v = self.value(a);
                let mut out = Vec::with_capacity(r * c);
                for row in 0..r {
                    let xs = v.row(row);
                    let mx = xs.iter().copied().fold(S::neg_infinity(), S::max);
                    let lse = mx + xs.iter().map(|&x| (x - mx).exp()).sum::<S>().ln();
                    out.extend(xs.iter().map(|&x| x - lse));
                }
                Array::new(vec![r, c], out)
            }
            Op::Mean(a) => {
                self.check(a)?;
                Ok(Array::scalar(self.value(a).mean()))
            }
            Op::Sum(a) => {
                self.check(a)?;
                Ok(Array::scalar(self.value(a).sum()))
            }
        }
    }

    fn push(&mut self, op: Op<S>) -> Result<NodeId> {
        let value = self.evaluate(&op)?;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }
    pub fn scale(&mut self, a: NodeId, c: S) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }
    pub fn concat(&mut self, parts: &[NodeId], axis: Axis) -> Result<NodeId> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.push(Op::Concat {
            parts: parts.to_vec(),
            axis,
        })
    }
    pub fn slice(&mut self, input: NodeId, axis: Axis, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::Slice {
            input,
            axis,
            start,
            len,
        })
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }
    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Square(a))
    }
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Abs(a))
    }
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softplus(a))
    }
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LogSoftmax(a))
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    /// `x W + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Mean absolute difference, the `|a - b|` loss averaged over every
    /// element.
    pub fn mean_abs_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let d = self.abs(d)?;
        self.mean(d)
    }

    /// Re-evaluates the recorded program with named leaves rebound.
    ///
    /// Leaves absent from `bindings` keep their recorded values. The
    /// returned graph has identical node ids.
    pub fn forward(&self, bindings: &HashMap<String, Array<S>>) -> Result<Graph<S>> {
        let mut out = Graph {
            nodes: Vec::with_capacity(self.nodes.len()),
            params: self.params.clone(),
            inputs: self.inputs.clone(),
            frozen: self.frozen.clone(),
            frozen_ids: self.frozen_ids.clone(),
        };
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Leaf(leaf) => {
                    let value = match leaf {
                        Leaf::Param(n) | Leaf::Input(n) => match bindings.get(n) {
                            Some(v) if v.dims() == node.value.dims() => v.clone(),
                            Some(v) => {
                                return Err(Error::Shape {
                                    node: i,
                                    op: "leaf",
                                    detail: format!(
                                        "`{n}` rebound with dims {:?}, recorded {:?}",
                                        v.dims(),
                                        node.value.dims()
                                    ),
                                })
                            }
                            None => node.value.clone(),
                        },
                        Leaf::Constant => node.value.clone(),
                    };
                    out.nodes.push(Node {
                        op: node.op.clone(),
                        value,
                    });
                }
                op => {
                    out.push(op.clone())?;
                }
            }
        }
        Ok(out)
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<S>> {
        self.check(output)?;
        let out_dims = self.value(output).dims().to_vec();
        if self.value(output).len() != 1 {
            return Err(Error::NonScalar(out_dims));
        }
        let mut grads: Vec<Option<Array<S>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array::filled(out_dims, S::one())?);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            let mut acc = |id: NodeId, contrib: Array<S>| {
                let slot = &mut grads[id.0];
                match slot {
                    Some(existing) => existing.add_assign(&contrib),
                    None => *slot = Some(contrib),
                }
            };
            match node.op {
                Op::Leaf(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(a), self.value(b));
                    let (m, k) = va.shape2().unwrap();
                    let n = vb.cols();
                    let da = Array::matmul_nt(&g, vb, m, n, k).reshape(va.dims().to_vec())?;
                    let db = Array::matmul_tn(va, &g, m, k, n).reshape(vb.dims().to_vec())?;
                    acc(a, da);
                    acc(b, db);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let neg = matches!(node.op, Op::Sub(..));
                    let vb = self.value(b);
                    let db = if vb.len() == g.len() {
                        g.clone().reshape(vb.dims().to_vec())?
                    } else {
                        let c = vb.len();
                        let mut col = vec![S::zero(); c];
                        for (j, &v) in g.values().iter().enumerate() {
                            col[j % c] = col[j % c] + v;
                        }
                        Array::new(vb.dims().to_vec(), col)?
                    };
                    let db = if neg { db.map(|x| -x) } else { db };
                    acc(b, db);
                    acc(a, g.reshape(self.value(a).dims().to_vec())?);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(a), self.value(b));
                    let da = g.zip_map(vb, |x, y| x * y).reshape(va.dims().to_vec())?;
                    let db = g.zip_map(va, |x, y| x * y).reshape(vb.dims().to_vec())?;
                    acc(a, da);
                    acc(b, db);
                }
                Op::Scale(a, c) => acc(a, g.map(|x| x * c)),
                Op::Concat { ref parts, axis } => {
                    let (rows, cols) = g.shape2().unwrap();
                    let mut offset = 0;
                    for &p in parts {
                        let vp = self.value(p);
                        let (pr, pc) = vp.shape2().unwrap();
                        let values = match axis {
                            Axis::Cols => {
                                let mut v = Vec::with_capacity(pr * pc);
                                for r in 0..rows {
                                    v.extend_from_slice(&g.row(r)[offset..offset + pc]);
                                }
                                offset += pc;
                                v
                            }
                            Axis::Rows => {
                                let v = g.values()[offset * cols..(offset + pr) * cols].to_vec();
                                offset += pr;
                                v
                            }
                        };
                        acc(p, Array::new(vp.dims().to_vec(), values)?);
                    }
                }
                Op::Slice {
                    input,
                    axis,
                    start,
                    len,
                } => {
                    let vi = self.value(input);
                    let (r, c) = vi.shape2().unwrap();
                    let mut d = vec![S::zero(); r * c];
                    match axis {
                        Axis::Rows => d[start * c..(start + len) * c].copy_from_slice(g.values()),
                        Axis::Cols => {
                            for row in 0..r {
                                d[row * c + start..row * c + start + len]
                                    .copy_from_slice(g.row(row));
                            }
                        }
                    }
                    acc(input, Array::new(vi.dims().to_vec(), d)?);
                }
                Op::Tanh(a) => acc(a, g.zip_map(y, |gv, t| gv * (S::one() - t * t))),
                Op::Sigmoid(a) => acc(a, g.zip_map(y, |gv, s| gv * s * (S::one() - s))),
                Op::Square(a) => {
                    acc(a, g.zip_map(self.value(a), |gv, x| gv * (x + x)));
                }
                Op::Abs(a) => acc(a, g.zip_map(self.value(a), |gv, x| gv * sign(x))),
                Op::Softplus(a) => acc(a, g.zip_map(self.value(a), |gv, x| gv * sigmoid(x))),
                Op::LogSoftmax(a) => {
                    let (r, c) = y.shape2().unwrap();
                    let mut d = Vec::with_capacity(r * c);
                    for row in 0..r {
                        let gs = g.row(row);
                        let total: S = gs.iter().copied().sum();
                        d.extend(
                            gs.iter()
                                .zip(y.row(row))
                                .map(|(&gv, &ly)| gv - ly.exp() * total),
                        );
                    }
                    acc(a, Array::new(self.value(a).dims().to_vec(), d)?);
                }
                Op::Mean(a) => {
                    let va = self.value(a);
                    let scale = g.values()[0] / S::of(va.len() as f64);
                    acc(a, Array::filled(va.dims().to_vec(), scale)?);
                }
                Op::Sum(a) => {
                    let va = self.value(a);
                    acc(a, Array::filled(va.dims().to_vec(), g.values()[0])?);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Gradients of `output` with respect to named leaves (params or
    /// inputs). Leaves that do not influence `output` get zero arrays;
    /// names that were never bound are an error.
    pub fn grad(&self, output: NodeId, wrt: &[&str]) -> Result<BTreeMap<String, Array<S>>> {
        let grads = self.backward(output)?;
        let mut out = BTreeMap::new();
        for &name in wrt {
            let id = self
                .params
                .get(name)
                .or_else(|| self.inputs.get(name))
                .copied()
                .ok_or_else(|| Error::MissingParam(name.to_string()))?;
            out.insert(name.to_string(), grads.or_zeros(id, self.value(id)));
        }
        Ok(out)
    }

    /// Gradients for every bound parameter leaf.
    pub fn param_grads(&self, output: NodeId) -> Result<BTreeMap<String, Array<S>>> {
        let grads = self.backward(output)?;
        Ok(self
            .params
            .iter()
            .map(|(name, &id)| (name.clone(), grads.or_zeros(id, self.value(id))))
            .collect())
    }

    fn zeros_like(&mut self, id: NodeId) -> Result<NodeId> {
        let dims = self.value(id).dims().to_vec();
        Ok(self.constant(Array::zeros(dims)?))
    }

    /// Forward-mode tangent propagation recorded as new graph nodes.
    ///
    /// `seeds` pairs leaves with nodes holding their tangents; all other
    /// leaves have zero tangent. Returns the node carrying the directional
    /// derivative of `output`, or `None` if it is identically zero. Because
    /// the tangent is itself part of the graph, a subsequent [`backward`]
    /// differentiates the directional derivative (reverse-over-forward).
    ///
    /// [`backward`]: Graph::backward
    pub fn jvp(&mut self, seeds: &[(NodeId, NodeId)], output: NodeId) -> Result<Option<NodeId>> {
        self.check(output)?;
        let mut tan: Vec<Option<NodeId>> = vec![None; output.0 + 1];
        for &(leaf, t) in seeds {
            self.check(leaf)?;
            self.check(t)?;
            if leaf.0 <= output.0 {
                tan[leaf.0] = Some(t);
            }
        }
        for i in 0..=output.0 {
            let op = self.nodes[i].op.clone();
            let y = NodeId(i);
            let t = match op {
                Op::Leaf(_) => continue,
                Op::MatMul(a, b) => {
                    let l = match tan[a.0] {
                        Some(ta) => Some(self.matmul(ta, b)?),
                        None => None,
                    };
                    let r = match tan[b.0] {
                        Some(tb) => Some(self.matmul(a, tb)?),
                        None => None,
                    };
                    self.sum_opt(l, r)?
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let neg = matches!(op, Op::Sub(..));
                    match (tan[a.0], tan[b.0]) {
                        (None, None) => None,
                        (Some(ta), None) => Some(ta),
                        (ta, Some(tb)) => {
                            let base = match ta {
                                Some(ta) => ta,
                                None => self.zeros_like(a)?,
                            };
                            Some(if neg {
                                self.sub(base, tb)?
                            } else {
                                self.add(base, tb)?
                            })
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let l = match tan[a.0] {
                        Some(ta) => Some(self.mul(ta, b)?),
                        None => None,
                    };
                    let r = match tan[b.0] {
                        Some(tb) => Some(self.mul(a, tb)?),
                        None => None,
                    };
                    self.sum_opt(l, r)?
                }
                Op::Scale(a, c) => match tan[a.0] {
                    Some(ta) => Some(self.scale(ta, c)?),
                    None => None,
                },
                Op::Concat { ref parts, axis } => {
                    if parts.iter().all(|p| tan[p.0].is_none()) {
                        None
                    } else {
                        let mut tp = Vec::with_capacity(parts.len());
                        for &p in parts {
                            tp.push(match tan[p.0] {
                                Some(t) => t,
                                None => self.zeros_like(p)?,
                            });
                        }
                        Some(self.concat(&tp, axis)?)
                    }
                }
                Op::Slice {
                    input,
                    axis,
                    start,
                    len,
                } => match tan[input.0] {
                    Some(ti) => Some(self.slice(ti, axis, start, len)?),
                    None => None,
                },
                Op::Tanh(a) => match tan[a.0] {
                    Some(ta) => {
                        let y2 = self.square(y)?;
                        let y2t = self.mul(y2, ta)?;
                        Some(self.sub(ta, y2t)?)
                    }
                    None => None,
                },
                Op::Sigmoid(a) => match tan[a.0] {
                    Some(ta) => {
                        let y2 = self.square(y)?;
                        let dy = self.sub(y, y2)?;
                        Some(self.mul(dy, ta)?)
                    }
                    None => None,
                },
                Op::Square(a) => match tan[a.0] {
                    Some(ta) => {
                        let xt = self.mul(a, ta)?;
                        Some(self.scale(xt, S::of(2.0))?)
                    }
                    None => None,
                },
                Op::Abs(a) => match tan[a.0] {
                    Some(ta) => {
                        let s = self.value(a).map(sign);
                        let s = self.constant(s);
                        Some(self.mul(s, ta)?)
                    }
                    None => None,
                },
                Op::Softplus(a) => match tan[a.0] {
                    Some(ta) => {
                        let s = self.sigmoid(a)?;
                        Some(self.mul(s, ta)?)
                    }
                    None => None,
                },
                Op::LogSoftmax(a) => match tan[a.0] {
                    Some(_) => return Err(Error::NoTangentRule("log_softmax")),
                    None => None,
                },
                Op::Mean(a) => match tan[a.0] {
                    Some(ta) => Some(self.mean(ta)?),
                    None => None,
                },
                Op::Sum(a) => match tan[a.0] {
                    Some(ta) => Some(self.sum(ta)?),
                    None => None,
                },
            };
            tan[i] = t;
        }
        Ok(tan[output.0])
    }

    fn sum_opt(&mut self, l: Option<NodeId>, r: Option<NodeId>) -> Result<Option<NodeId>> {
        Ok(match (l, r) {
            (Some(l), Some(r)) => Some(self.add(l, r)?),
            (l, None) => l,
            (None, r) => r,
        })
    }
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Array<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: NodeId) -> Option<&Array<S>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Adjoint of `id`, zero-filled when `id` is unreachable.
    pub fn or_zeros(&self, id: NodeId, like: &Array<S>) -> Array<S> {
        self.get(id).cloned().unwrap_or_else(|| {
            Array::zeros(like.dims().to_vec()).expect("dims of an existing array")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(dims: Vec<usize>, v: &[f64]) -> Array<f64> {
        Array::new(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_and_sigmoid_forward() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x", arr(vec![2], &[1.0, 2.0])).unwrap();
        let z = g.constant(arr(vec![2], &[0.0, 0.0]));
        let y = g.add(x, z).unwrap();
        assert_eq!(g.value(y).values(), &[1.0, 2.0]);

        let x0 = g.input("x0", arr(vec![1], &[0.0])).unwrap();
        let s = g.sigmoid(x0).unwrap();
        assert_eq!(g.value(s).values(), &[0.5]);
    }

    #[test]
    fn square_and_abs_derivatives() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x", arr(vec![1], &[3.0])).unwrap();
        let y = g.mul(x, x).unwrap();
        assert_eq!(g.grad(y, &["x"]).unwrap()["x"].values(), &[6.0]);

        let mut g = Graph::<f64>::new();
        let x = g.input("x", arr(vec![1], &[-2.0])).unwrap();
        let y = g.abs(x).unwrap();
        assert_eq!(g.grad(y, &["x"]).unwrap()["x"].values(), &[-1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.input("x", arr(vec![1], &[0.0])).unwrap();
        let y = g.abs(x).unwrap();
        assert_eq!(g.grad(y, &["x"]).unwrap()["x"].values(), &[0.0]);
    }

    #[test]
    fn shape_errors_name_the_node() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a", arr(vec![2, 3], &[0.0; 6])).unwrap();
        let b = g.input("b", arr(vec![2, 3], &[0.0; 6])).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("node 2"), "{err}");
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a", arr(vec![2], &[1.0, 2.0])).unwrap();
        let t = g.tanh(a).unwrap();
        assert!(matches!(g.backward(t), Err(Error::NonScalar(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a", arr(vec![1], &[1.0])).unwrap();
        g.input("b", arr(vec![2], &[1.0, 1.0])).unwrap();
        let y = g.square(a).unwrap();
        let grads = g.grad(y, &["a", "b"]).unwrap();
        assert_eq!(grads["b"].values(), &[0.0, 0.0]);
        assert!(g.grad(y, &["nope"]).is_err());
    }

    #[test]
    fn replay_matches_fresh_build() {
        let build = |xv: f64| {
            let mut g = Graph::<f64>::new();
            let x = g.input("x", arr(vec![1, 2], &[xv, 1.0])).unwrap();
            let w = g.param("w", &arr(vec![2, 1], &[0.3, -0.7]));
            let y = g.matmul(x, w).unwrap();
            let y = g.tanh(y).unwrap();
            let y = g.sum(y).unwrap();
            (g, y)
        };
        let (g, y) = build(0.5);
        let mut b = HashMap::new();
        b.insert("x".to_string(), arr(vec![1, 2], &[2.0, 1.0]));
        let replayed = g.forward(&b).unwrap();
        let (fresh, fy) = build(2.0);
        assert_eq!(replayed.scalar(y), fresh.scalar(fy));
    }

    #[test]
    fn row_broadcast_add_gradient_sums_rows() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x", arr(vec![3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let b = g.param("b", &arr(vec![2], &[0.5, -0.5]));
        let y = g.add(x, b).unwrap();
        let s = g.sum(y).unwrap();
        assert_eq!(g.grad(s, &["b"]).unwrap()["b"].values(), &[3.0, 3.0]);
    }

    #[test]
    fn jvp_matches_gradient_projection() {
        // d/dt f(x + t v) == <grad f, v>
        let mut g = Graph::<f64>::new();
        let x = g.input("x", arr(vec![1, 3], &[0.2, -0.4, 0.9])).unwrap();
        let w = g.param("w", &arr(vec![3, 2], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]));
        let h = g.matmul(x, w).unwrap();
        let h = g.tanh(h).unwrap();
        let s = g.sigmoid(h).unwrap();
        let q = g.square(s).unwrap();
        let out = g.sum(q).unwrap();
        let grad_x = g.grad(out, &["x"]).unwrap()["x"].clone();
        let v = arr(vec![1, 3], &[1.0, 2.0, -1.0]);
        let vid = g.constant(v.clone());
        let t = g.jvp(&[(x, vid)], out).unwrap().unwrap();
        let expect: f64 = grad_x.values().iter().zip(v.values()).map(|(a, b)| a * b).sum();
        assert!((g.scalar(t) - expect).abs() < 1e-14);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        g.freeze("fixed.");
        let a = g.param("fixed.w", &arr(vec![1], &[2.0]));
        let again = g.param("fixed.w", &arr(vec![1], &[2.0]));
        assert_eq!(a, again);
        assert!(g.param_id("fixed.w").is_none());
        let b = g.param("free.w", &arr(vec![1], &[3.0]));
        let y = g.mul(a, b).unwrap();
        let grads = g.param_grads(y).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads["free.w"].values(), &[2.0]);
    }
}
