//! Minimal differentiable-array engine.
//!
//! A [`Graph`] records primitive applications in topological order as they
//! are executed. Leaves are either constants or trainable parameters;
//! [`Graph::backward`] walks the recorded nodes in reverse and returns
//! gradients for every parameter.
//!
//! All primitives operate on matrices. A rank-1 array of length `n` is
//! treated as `1×n` and a rank-0 array as `1×1`; scalars produced by
//! reductions have shape `[1, 1]`.
//!
//! ```
//! use framecl::dcore::{DArray, Graph};
//!
//! let mut g = Graph::new();
//! let x = g.parameter(DArray::row(&[1.0, 2.0, 3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let root = g.sum_all(sq).unwrap();
//! let grads = g.backward(root).unwrap();
//! assert_eq!(grads[&x.id()].data(), &[2.0, 4.0, 6.0]);
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominator floor used when comparing analytic and numeric gradients, so
/// that coordinates whose true gradient is ~0 are compared absolutely.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-4;

/// Shaped, row-major array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DArray {
    /// Checked constructor: `product(shape) == data.len()` and every value finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "DArray::new",
                shapes: vec![shape, vec![data.len()]],
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain {
                op: "DArray::new",
                detail: format!("non-finite value {} at flat index {pos}", data[pos]),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// A `1×n` row vector.
    pub fn row(values: &[f64]) -> Result<Self> {
        Self::new(vec![1, values.len()], values.to_vec())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::usage("from_rows: ragged rows"));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1, 1], vec![value])
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::raw(rows, cols, vec![value; rows * cols])
    }

    pub(crate) fn raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Matrix view of the shape; rank > 2 is rejected.
    pub fn dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [] => Ok((1, 1)),
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::Shape {
                op: "dims",
                shapes: vec![self.shape.clone()],
            }),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims().map_or(0, |d| d.0)
    }

    pub fn cols(&self) -> usize {
        self.dims().map_or(0, |d| d.1)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row_slice(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    /// The single value of a scalar array.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn transpose(&self) -> DArray {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        DArray::raw(c, r, out)
    }
}

/// Identity of a node within one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: NodeId,
}

impl Var {
    pub fn id(self) -> NodeId {
        self.id
    }
}

/// The primitive set. Binary elementwise primitives (`Add`, `Mul`,
/// `Divide`) broadcast size-1 dimensions of either operand.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Mul,
    /// Multiply by a fixed scalar.
    Scale(f64),
    /// Concatenate along the last axis.
    ConcatCols,
    /// Stack along the first axis.
    ConcatRows,
    Exp,
    Log,
    SumAll,
    /// Sum along the last axis: `m×n -> m×1`.
    SumRows,
    Divide,
    Tanh,
    Sigmoid,
    /// `log(1 + exp(x))`, evaluated stably.
    Softplus,
    /// Row-wise `x / max(‖x‖, eps)`; with `eps == 0` a zero row is a domain error.
    L2NormalizeRows { eps: f64 },
    /// Inputs `[x, mask]`: `x ⊙ mask / keep` (inverted dropout).
    MaskedDropout { keep: f64 },
    Transpose,
    /// Output row `r` is input row `indices[r]`.
    GatherRows(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Mul => "elementwise_mul",
            Primitive::Scale(_) => "scalar_mul",
            Primitive::ConcatCols => "concat_last_axis",
            Primitive::ConcatRows => "concat_rows",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::SumAll => "sum_all",
            Primitive::SumRows => "sum_rows",
            Primitive::Divide => "divide",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Softplus => "softplus",
            Primitive::L2NormalizeRows { .. } => "l2_normalize_rows",
            Primitive::MaskedDropout { .. } => "masked_dropout",
            Primitive::Transpose => "transpose",
            Primitive::GatherRows(_) => "gather_rows",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::MatMul
            | Primitive::Add
            | Primitive::Mul
            | Primitive::ConcatCols
            | Primitive::ConcatRows
            | Primitive::Divide
            | Primitive::MaskedDropout { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Option<Primitive>,
    inputs: Vec<NodeId>,
    value: DArray,
    requires_grad: bool,
}

/// Gradients keyed by parameter node.
pub type Gradients = BTreeMap<NodeId, DArray>;

/// Single-writer computation graph.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
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

    fn leaf(&mut self, value: DArray, requires_grad: bool) -> Var {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: None,
            inputs: Vec::new(),
            value,
            requires_grad,
        });
        Var { id }
    }

    pub fn constant(&mut self, value: DArray) -> Var {
        self.leaf(value, false)
    }

    /// Register a trainable leaf.
    pub fn parameter(&mut self, value: DArray) -> Var {
        let v = self.leaf(value, true);
        self.params.push(v.id);
        v
    }

    pub fn parameters(&self) -> &[NodeId] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &DArray {
        &self.nodes[v.id.0].value
    }

    /// Value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id.0].requires_grad
    }

    /// Apply a primitive, recording the node.
    pub fn apply(&mut self, op: Primitive, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != op.arity() {
            return Err(Error::usage(format!(
                "{} expects {} inputs, got {}",
                op.name(),
                op.arity(),
                inputs.len()
            )));
        }
        let values: Vec<&DArray> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = forward(&op, &values)?;
        if let Some(bad) = out.data.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("{} produced {bad}", op.name())));
        }
        let requires_grad = match op {
            // the mask is never differentiated
            Primitive::MaskedDropout { .. } => self.requires_grad(inputs[0]),
            _ => inputs.iter().any(|v| self.requires_grad(*v)),
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Some(op),
            inputs: inputs.iter().map(|v| v.id).collect(),
            value: out,
            requires_grad,
        });
        Ok(Var { id })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        if !factor.is_finite() {
            return Err(Error::Domain {
                op: "scalar_mul",
                detail: format!("non-finite factor {factor}"),
            });
        }
        self.apply(Primitive::Scale(factor), &[a])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::ConcatCols, &[a, b])
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::ConcatRows, &[a, b])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SumAll, &[a])
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SumRows, &[a])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Divide, &[a, b])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softplus, &[a])
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::L2NormalizeRows { eps: 0.0 }, &[a])
    }

    /// Normalization that maps near-zero rows to `x / eps` instead of failing.
    pub fn l2_normalize_rows_clamped(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.apply(Primitive::L2NormalizeRows { eps }, &[a])
    }

    /// Inverted dropout with an explicit 0/1 mask and keep probability.
    pub fn masked_dropout(&mut self, x: Var, mask: Var, keep: f64) -> Result<Var> {
        self.apply(Primitive::MaskedDropout { keep }, &[x, mask])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::GatherRows(indices), &[a])
    }

    /// Reverse-mode gradients of a scalar `root` for every parameter.
    /// Parameters that do not influence `root` receive zeros.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.id.0 >= self.nodes.len() {
            return Err(Error::usage("backward: root is not a node of this graph"));
        }
        if !self.value(root).is_scalar() {
            return Err(Error::usage(format!(
                "backward: root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.id.0 + 1];
        grads[root.id.0] = Some(vec![1.0]);
        for idx in (0..=root.id.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Node> = node.inputs.iter().map(|i| &self.nodes[i.0]).collect();
            let wanted: Vec<bool> = inputs.iter().map(|n| n.requires_grad).collect();
            let local = backward_op(op, &inputs, &node.value, &upstream, &wanted);
            for ((input, want), g) in node.inputs.iter().zip(wanted).zip(local) {
                if !want {
                    continue;
                }
                let Some(g) = g else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let mut out = Gradients::new();
        for &p in &self.params {
            let value = &self.nodes[p.0].value;
            let data = grads
                .get(p.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![0.0; value.len()]);
            out.insert(
                p,
                DArray {
                    shape: value.shape.clone(),
                    data,
                },
            );
        }
        Ok(out)
    }
}

fn shape_err(op: &Primitive, inputs: &[&DArray]) -> Error {
    Error::Shape {
        op: op.name(),
        shapes: inputs.iter().map(|a| a.shape.clone()).collect(),
    }
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    fn one(x: usize, y: usize) -> Option<usize> {
        match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        }
    }
    Some((one(a.0, b.0)?, one(a.1, b.1)?))
}

#[inline]
fn bidx(dims: (usize, usize), i: usize, j: usize) -> usize {
    let r = if dims.0 == 1 { 0 } else { i };
    let c = if dims.1 == 1 { 0 } else { j };
    r * dims.1 + c
}

fn elementwise2(
    op: &Primitive,
    a: &DArray,
    b: &DArray,
    f: impl Fn(f64, f64) -> f64,
) -> Result<DArray> {
    let (ad, bd) = (a.dims()?, b.dims()?);
    let od = broadcast_dims(ad, bd).ok_or_else(|| shape_err(op, &[a, b]))?;
    let mut out = Vec::with_capacity(od.0 * od.1);
    for i in 0..od.0 {
        for j in 0..od.1 {
            out.push(f(a.data[bidx(ad, i, j)], b.data[bidx(bd, i, j)]));
        }
    }
    Ok(DArray::raw(od.0, od.1, out))
}

fn map1(a: &DArray, f: impl Fn(f64) -> f64) -> Result<DArray> {
    let (r, c) = a.dims()?;
    Ok(DArray::raw(r, c, a.data.iter().map(|&x| f(x)).collect()))
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `a (m×k) · b (k×n)`; zero entries of `a` are skipped, which makes sparse
/// feature inputs cheap.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

fn forward(op: &Primitive, inputs: &[&DArray]) -> Result<DArray> {
    match op {
        Primitive::MatMul => {
            let ((m, k), (k2, n)) = (inputs[0].dims()?, inputs[1].dims()?);
            if k != k2 {
                return Err(shape_err(op, inputs));
            }
            Ok(DArray::raw(
                m,
                n,
                matmul_raw(&inputs[0].data, &inputs[1].data, m, k, n),
            ))
        }
        Primitive::Add => elementwise2(op, inputs[0], inputs[1], |x, y| x + y),
        Primitive::Mul => elementwise2(op, inputs[0], inputs[1], |x, y| x * y),
        Primitive::Divide => {
            if let Some(pos) = inputs[1].data.iter().position(|&d| d == 0.0) {
                return Err(Error::Domain {
                    op: "divide",
                    detail: format!("zero denominator at flat index {pos}"),
                });
            }
            elementwise2(op, inputs[0], inputs[1], |x, y| x / y)
        }
        Primitive::Scale(s) => map1(inputs[0], |x| x * s),
        Primitive::ConcatCols => {
            let ((ra, ca), (rb, cb)) = (inputs[0].dims()?, inputs[1].dims()?);
            if ra != rb {
                return Err(shape_err(op, inputs));
            }
            let mut out = Vec::with_capacity(ra * (ca + cb));
            for i in 0..ra {
                out.extend_from_slice(&inputs[0].data[i * ca..(i + 1) * ca]);
                out.extend_from_slice(&inputs[1].data[i * cb..(i + 1) * cb]);
            }
            Ok(DArray::raw(ra, ca + cb, out))
        }
        Primitive::ConcatRows => {
            let ((ra, ca), (rb, cb)) = (inputs[0].dims()?, inputs[1].dims()?);
            if ca != cb {
                return Err(shape_err(op, inputs));
            }
            let mut out = inputs[0].data.clone();
            out.extend_from_slice(&inputs[1].data);
            Ok(DArray::raw(ra + rb, ca, out))
        }
        Primitive::Exp => map1(inputs[0], f64::exp),
        Primitive::Log => {
            if let Some(pos) = inputs[0].data.iter().position(|&x| x <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!(
                        "non-positive input {} at flat index {pos}",
                        inputs[0].data[pos]
                    ),
                });
            }
            map1(inputs[0], f64::ln)
        }
        Primitive::SumAll => Ok(DArray::raw(1, 1, vec![inputs[0].data.iter().sum()])),
        Primitive::SumRows => {
            let (r, c) = inputs[0].dims()?;
            let out = (0..r)
                .map(|i| inputs[0].data[i * c..(i + 1) * c].iter().sum())
                .collect();
            Ok(DArray::raw(r, 1, out))
        }
        Primitive::Tanh => map1(inputs[0], f64::tanh),
        Primitive::Sigmoid => map1(inputs[0], sigmoid),
        Primitive::Softplus => map1(inputs[0], softplus),
        Primitive::L2NormalizeRows { eps } => {
            let (r, c) = inputs[0].dims()?;
            let mut out = inputs[0].data.clone();
            for i in 0..r {
                let row = &mut out[i * c..(i + 1) * c];
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(*eps);
                if norm == 0.0 {
                    return Err(Error::Domain {
                        op: "l2_normalize_rows",
                        detail: format!("row {i} has zero norm"),
                    });
                }
                row.iter_mut().for_each(|x| *x /= norm);
            }
            Ok(DArray::raw(r, c, out))
        }
        Primitive::MaskedDropout { keep } => {
            if !(*keep > 0.0 && *keep <= 1.0) {
                return Err(Error::Domain {
                    op: "masked_dropout",
                    detail: format!("keep probability {keep} outside (0, 1]"),
                });
            }
            if inputs[0].dims()? != inputs[1].dims()? {
                return Err(shape_err(op, inputs));
            }
            if inputs[1].data.iter().any(|&m| m != 0.0 && m != 1.0) {
                return Err(Error::Domain {
                    op: "masked_dropout",
                    detail: "mask entries must be 0 or 1".into(),
                });
            }
            let (r, c) = inputs[0].dims()?;
            let out = inputs[0]
                .data
                .iter()
                .zip(&inputs[1].data)
                .map(|(x, m)| x * m / keep)
                .collect();
            Ok(DArray::raw(r, c, out))
        }
        Primitive::Transpose => {
            inputs[0].dims()?;
            Ok(inputs[0].transpose())
        }
        Primitive::GatherRows(idx) => {
            let (r, c) = inputs[0].dims()?;
            if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
                return Err(Error::usage(format!(
                    "gather_rows: index {bad} out of range for {r} rows"
                )));
            }
            let mut out = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                out.extend_from_slice(&inputs[0].data[i * c..(i + 1) * c]);
            }
            Ok(DArray::raw(idx.len(), c, out))
        }
    }
}

/// Sum a full-size gradient down to a broadcast operand's shape.
fn reduce_to(g: &[f64], out: (usize, usize), target: (usize, usize)) -> Vec<f64> {
    if out == target {
        return g.to_vec();
    }
    let mut acc = vec![0.0; target.0 * target.1];
    for i in 0..out.0 {
        for j in 0..out.1 {
            acc[bidx(target, i, j)] += g[i * out.1 + j];
        }
    }
    acc
}

fn backward_op(
    op: &Primitive,
    inputs: &[&Node],
    out: &DArray,
    up: &[f64],
    wanted: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let val = |i: usize| &inputs[i].value;
    // shapes were validated on the forward pass
    let dims = |i: usize| val(i).dims().expect("validated on forward");
    let od = out.dims().expect("validated on forward");
    let elementwise = |f: &dyn Fn(usize, f64) -> f64| -> Vec<f64> {
        up.iter().enumerate().map(|(k, &u)| f(k, u)).collect()
    };
    match op {
        Primitive::MatMul => {
            let ((m, k), (_, n)) = (dims(0), dims(1));
            let a = &val(0).data;
            let b = &val(1).data;
            let ga = wanted[0].then(|| {
                // up (m×n) · bᵀ (n×k)
                let mut g = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let brow = &b[p * n..(p + 1) * n];
                        let urow = &up[i * n..(i + 1) * n];
                        g[i * k + p] = urow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                g
            });
            let gb = wanted[1].then(|| {
                // aᵀ (k×m) · up (m×n), skipping zeros of a
                let mut g = vec![0.0; k * n];
                for i in 0..m {
                    let urow = &up[i * n..(i + 1) * n];
                    for p in 0..k {
                        let x = a[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for (o, u) in g[p * n..(p + 1) * n].iter_mut().zip(urow) {
                            *o += x * u;
                        }
                    }
                }
                g
            });
            vec![ga, gb]
        }
        Primitive::Add => vec![
            wanted[0].then(|| reduce_to(up, od, dims(0))),
            wanted[1].then(|| reduce_to(up, od, dims(1))),
        ],
        Primitive::Mul | Primitive::Divide => {
            let (ad, bd) = (dims(0), dims(1));
            let a = |k: usize| val(0).data[bidx(ad, k / od.1, k % od.1)];
            let b = |k: usize| val(1).data[bidx(bd, k / od.1, k % od.1)];
            let divide = matches!(op, Primitive::Divide);
            let ga = wanted[0].then(|| {
                let full = if divide {
                    elementwise(&|k, u| u / b(k))
                } else {
                    elementwise(&|k, u| u * b(k))
                };
                reduce_to(&full, od, ad)
            });
            let gb = wanted[1].then(|| {
                let full = if divide {
                    elementwise(&|k, u| -u * a(k) / (b(k) * b(k)))
                } else {
                    elementwise(&|k, u| u * a(k))
                };
                reduce_to(&full, od, bd)
            });
            vec![ga, gb]
        }
        Primitive::Scale(s) => vec![Some(up.iter().map(|u| u * s).collect())],
        Primitive::ConcatCols => {
            let ((r, ca), (_, cb)) = (dims(0), dims(1));
            let c = ca + cb;
            let ga = wanted[0].then(|| {
                (0..r)
                    .flat_map(|i| up[i * c..i * c + ca].iter().copied())
                    .collect()
            });
            let gb = wanted[1].then(|| {
                (0..r)
                    .flat_map(|i| up[i * c + ca..(i + 1) * c].iter().copied())
                    .collect()
            });
            vec![ga, gb]
        }
        Primitive::ConcatRows => {
            let split = val(0).len();
            vec![
                wanted[0].then(|| up[..split].to_vec()),
                wanted[1].then(|| up[split..].to_vec()),
            ]
        }
        Primitive::Exp => vec![Some(elementwise(&|k, u| u * out.data[k]))],
        Primitive::Log => vec![Some(elementwise(&|k, u| u / val(0).data[k]))],
        Primitive::SumAll => vec![Some(vec![up[0]; val(0).len()])],
        Primitive::SumRows => {
            let (r, c) = dims(0);
            vec![Some((0..r * c).map(|k| up[k / c]).collect())]
        }
        Primitive::Tanh => vec![Some(elementwise(&|k, u| {
            u * (1.0 - out.data[k] * out.data[k])
        }))],
        Primitive::Sigmoid => vec![Some(elementwise(&|k, u| {
            u * out.data[k] * (1.0 - out.data[k])
        }))],
        Primitive::Softplus => vec![Some(elementwise(&|k, u| u * sigmoid(val(0).data[k])))],
        Primitive::L2NormalizeRows { eps } => {
            let (r, c) = dims(0);
            let x = &val(0).data;
            let mut g = vec![0.0; r * c];
            for i in 0..r {
                let xs = &x[i * c..(i + 1) * c];
                let ys = &out.data[i * c..(i + 1) * c];
                let us = &up[i * c..(i + 1) * c];
                let norm = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < *eps {
                    // clamped: y = x / eps is linear
                    for j in 0..c {
                        g[i * c + j] = us[j] / eps;
                    }
                    continue;
                }
                let dot: f64 = ys.iter().zip(us).map(|(y, u)| y * u).sum();
                for j in 0..c {
                    g[i * c + j] = (us[j] - ys[j] * dot) / norm;
                }
            }
            vec![Some(g)]
        }
        Primitive::MaskedDropout { keep } => {
            let mask = &val(1).data;
            vec![Some(elementwise(&|k, u| u * mask[k] / keep)), None]
        }
        Primitive::Transpose => {
            let (r, c) = od;
            let mut g = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    g[j * r + i] = up[i * c + j];
                }
            }
            vec![Some(g)]
        }
        Primitive::GatherRows(idx) => {
            let (r, c) = dims(0);
            let mut g = vec![0.0; r * c];
            for (row, &src) in idx.iter().enumerate() {
                for j in 0..c {
                    g[src * c + j] += up[row * c + j];
                }
            }
            vec![Some(g)]
        }
    }
}

/// Central-difference gradient estimate `(f(θ+εe) − f(θ−εe)) / 2ε` for
/// every coordinate of every parameter array.
pub fn finite_difference_gradient<F>(f: F, params: &[DArray], eps: f64) -> Result<Vec<DArray>>
where
    F: Fn(&[DArray]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::usage(format!("finite difference step {eps} must be > 0")));
    }
    let mut work: Vec<DArray> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = vec![0.0; params[p].len()];
        for k in 0..params[p].len() {
            let orig = work[p].data[k];
            work[p].data[k] = orig + eps;
            let hi = f(&work)?;
            work[p].data[k] = orig - eps;
            let lo = f(&work)?;
            work[p].data[k] = orig;
            if !hi.is_finite() || !lo.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite objective while perturbing parameter {p} coordinate {k}"
                )));
            }
            grad[k] = (hi - lo) / (2.0 * eps);
        }
        out.push(DArray {
            shape: params[p].shape.clone(),
            data: grad,
        });
    }
    Ok(out)
}

/// `|a − b| / max(|a|, |b|, GRADIENT_CHECK_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADIENT_CHECK_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// (parameter index, flat coordinate) of the worst disagreement.
    pub worst: (usize, usize),
    pub analytic: Vec<DArray>,
    pub numeric: Vec<DArray>,
}

/// Compare [`Graph::backward`] against [`finite_difference_gradient`] for a
/// scalar objective built from `params` by `build`. `build` must be
/// deterministic (fixed dropout masks).
pub fn check_gradients<F>(build: F, params: &[DArray], eps: f64) -> Result<GradientCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.parameter(p.clone())).collect();
    let root = build(&mut g, &vars)?;
    let grads = g.backward(root)?;
    let analytic: Vec<DArray> = vars.iter().map(|v| grads[&v.id()].clone()).collect();
    let numeric = finite_difference_gradient(
        |ps| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ps.iter().map(|p| g.parameter(p.clone())).collect();
            let root = build(&mut g, &vars)?;
            Ok(g.scalar(root))
        },
        params,
        eps,
    )?;
    Ok(compare_gradients(analytic, numeric))
}

/// Worst-coordinate comparison of two gradient sets with identical shapes.
pub fn compare_gradients(analytic: Vec<DArray>, numeric: Vec<DArray>) -> GradientCheck {
    let mut worst = (0, 0);
    let mut max_rel = 0.0f64;
    for (p, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (k, (x, y)) in a.data.iter().zip(&n.data).enumerate() {
            let e = relative_error(*x, *y);
            if e > max_rel {
                max_rel = e;
                worst = (p, k);
            }
        }
    }
    GradientCheck {
        max_relative_error: max_rel,
        worst,
        analytic,
        numeric,
    }
}

/// Cosine-similarity matrix `S[i][j] = z_i·z_j / (‖z_i‖‖z_j‖)` of the rows of `z`.
pub fn pairwise_cosine_similarity(g: &mut Graph, z: Var) -> Result<Var> {
    let zn = g.l2_normalize_rows(z)?;
    let zt = g.transpose(zn)?;
    g.matmul(zn, zt)
}
