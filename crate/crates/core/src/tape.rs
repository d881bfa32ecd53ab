//! Reverse-mode gradient tape.
//!
//! Every op appends a node holding its output value, so node order is a
//! topological order and the backward pass is a single reverse sweep over
//! the node list. Parameters live in a [`ParamStore`] keyed by stable names;
//! [`Tape::backward`] returns one gradient buffer per registered parameter.

use std::collections::HashMap;

use crate::error::{Result, VlqaError};
use crate::tensor::{axis_layout, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered parameter registry. Registration order is the canonical order
/// for gradients, checkpoints and grad checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(VlqaError::Config(format!(
                "parameter {name} registered twice"
            )));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
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

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// One gradient buffer per registered parameter, same shapes as the store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.values.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            for x in g.data_mut() {
                *x *= c;
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MulScalar(Var, Var),
    AddRow(Var, Var),
    OuterAdd(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    SumAll(Var),
    SumAxis(Var, usize),
    ConcatCols(Var, Var),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    Standardize(Var),
    Reshape(Var),
    Powf(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::MulScalar(..) => "mul_scalar",
            Op::AddRow(..) => "add_row",
            Op::OuterAdd(..) => "outer_add",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::SumAll(_) => "sum_all",
            Op::SumAxis(..) => "sum_axis",
            Op::ConcatCols(..) => "concat_cols",
            Op::Gather(..) => "gather",
            Op::SliceCols(..) => "slice_cols",
            Op::Standardize(_) => "standardize",
            Op::Reshape(_) => "reshape",
            Op::Powf(..) => "powf",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Variance floor inside [`Tape::standardize`].
pub const STANDARDIZE_EPS: f64 = 1e-10;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> VlqaError {
    VlqaError::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(VlqaError::Numeric(format!(
                "non-finite value produced by {}",
                op.name()
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Leaf for a registered parameter; repeated requests share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b))
    }

    /// `x * mul + add` with constant coefficients.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * mul + add);
        self.push(out, Op::Affine(a, mul))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.affine(a, c, 0.0)
    }

    /// Multiply every entry of `a` by the single entry of `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(shape_err("mul_scalar", self.shape(a), sv.shape()));
        }
        let c = sv.item();
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::MulScalar(a, s))
    }

    /// Add a length-`n` row to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if self.value(r).len() != n {
            return Err(shape_err("add_row", self.shape(a), self.shape(r)));
        }
        let mut out = self.value(a).clone();
        let rv = self.value(r).data().to_vec();
        for i in 0..m {
            for (o, b) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(&rv) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, r))
    }

    /// `out[i,j] = col[i] + row[j]` for an `m × 1` column and `1 × n` row.
    pub fn outer_add(&mut self, col: Var, row: Var) -> Result<Var> {
        let (m, one_c) = self.value(col).dims2()?;
        let (one_r, n) = self.value(row).dims2()?;
        if one_c != 1 || one_r != 1 {
            return Err(shape_err("outer_add", self.shape(col), self.shape(row)));
        }
        let c = self.value(col).data();
        let r = self.value(row).data();
        let mut out = Vec::with_capacity(m * n);
        for &ci in c {
            out.extend(r.iter().map(|&rj| ci + rj));
        }
        let out = Tensor::new(vec![m, n], out)?;
        self.push(out, Op::OuterAdd(col, row))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(logistic);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).softmax(axis)?;
        self.push(out, Op::Softmax(a, axis))
    }

    /// Softmax over every entry of `a` jointly.
    pub fn softmax_all(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let flat = self.reshape(a, &[1, shape.iter().product()])?;
        let s = self.softmax(flat, 1)?;
        self.reshape(s, &shape)
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, n, inner) = axis_layout(x.shape(), axis)?;
        let mut out = x.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).fold(f64::NEG_INFINITY, |m, k| m.max(x.data()[idx(k)]));
                let lse = (0..n)
                    .map(|k| (x.data()[idx(k)] - max).exp())
                    .sum::<f64>()
                    .ln()
                    + max;
                for k in 0..n {
                    out[idx(k)] = x.data()[idx(k)] - lse;
                }
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.push(out, Op::LogSoftmax(a, axis))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    /// Sum a matrix over `axis`, keeping it as a unit dimension.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let x = self.value(a);
        let out = match axis {
            0 => {
                let mut out = vec![0.0; n];
                for i in 0..m {
                    for (o, v) in out.iter_mut().zip(x.row(i)) {
                        *o += v;
                    }
                }
                Tensor::new(vec![1, n], out)?
            }
            1 => Tensor::new(vec![m, 1], (0..m).map(|i| x.row(i).iter().sum()).collect())?,
            _ => {
                return Err(VlqaError::Dimension(format!(
                    "sum_axis: axis {axis} on a matrix"
                )))
            }
        };
        self.push(out, Op::SumAxis(a, axis))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let count = if axis == 0 { m } else { n };
        if count == 0 {
            return Err(VlqaError::Dimension("mean over an empty axis".into()));
        }
        let s = self.sum_axis(a, axis)?;
        self.scale(s, 1.0 / count as f64)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, pa) = self.value(a).dims2()?;
        let (mb, pb) = self.value(b).dims2()?;
        if ma != mb {
            return Err(shape_err("concat_cols", self.shape(a), self.shape(b)));
        }
        let mut out = Vec::with_capacity(ma * (pa + pb));
        for i in 0..ma {
            out.extend_from_slice(self.value(a).row(i));
            out.extend_from_slice(self.value(b).row(i));
        }
        let out = Tensor::new(vec![ma, pa + pb], out)?;
        self.push(out, Op::ConcatCols(a, b))
    }

    /// Select flat entries of `a` into a tensor of `shape`.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(VlqaError::Dimension(format!(
                "gather index {bad} out of range for shape {:?}",
                src.shape()
            )));
        }
        let data = indices.iter().map(|&i| src.data()[i]).collect();
        let out = Tensor::new(shape.to_vec(), data)?;
        self.push(out, Op::Gather(a, indices))
    }

    /// Rows `ids` of a matrix, stacked.
    pub fn gather_rows(&mut self, a: Var, ids: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= m) {
            return Err(VlqaError::Dimension(format!(
                "row {bad} out of range for {m} rows"
            )));
        }
        let idx = ids.iter().flat_map(|&r| r * n..(r + 1) * n).collect();
        self.gather(a, idx, &[ids.len(), n])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start > end || end > n {
            return Err(VlqaError::Dimension(format!(
                "slice_cols {start}..{end} of {n} columns"
            )));
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&x.row(i)[start..end]);
        }
        let out = Tensor::new(vec![m, end - start], out)?;
        self.push(out, Op::SliceCols(a, start, end))
    }

    /// Zero mean, unit variance over all entries of `a`.
    pub fn standardize(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(VlqaError::Dimension("standardize of an empty tensor".into()));
        }
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let s = (var + STANDARDIZE_EPS).sqrt();
        let out = x.map(|v| (v - mean) / s);
        self.push(out, Op::Standardize(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.push(out, Op::Reshape(a))
    }

    /// Elementwise `x^p`; `x` must be positive wherever `p` is fractional.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.powf(p));
        self.push(out, Op::Powf(a, p))
    }

    /// Inner product of two equally shaped tensors, as a `[1]` tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum_all(p)
    }

    /// Reverse sweep from a single-entry `loss`.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        self.backward_traced(loss, store, None)
    }

    /// As [`Tape::backward`], recording the node indices in visit order.
    pub fn backward_traced(
        &self,
        loss: Var,
        store: &ParamStore,
        mut trace: Option<&mut Vec<usize>>,
    ) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(VlqaError::Dimension(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        let mut out = Gradients::zeros_like(store);

        for idx in (0..=loss.0).rev() {
            if let Some(t) = trace.as_deref_mut() {
                t.push(idx);
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let y = &node.value;
            let mut acc = |v: Var, d: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if id.0 < out.grads.len() {
                        out.grads[id.0].add_assign(&g);
                    }
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(*a, g.matmul(&bv.transpose()?)?);
                    acc(*b, av.transpose()?.matmul(&g)?);
                }
                Op::Transpose(a) => acc(*a, g.transpose()?),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(*a, g.zip_with(bv, |x, y| x * y)?);
                    acc(*b, g.zip_with(av, |x, y| x * y)?);
                }
                Op::Affine(a, mul) => acc(*a, g.scale(*mul)),
                Op::MulScalar(a, s) => {
                    let av = self.value(*a);
                    let sv = self.value(*s);
                    let ds: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                    acc(*a, g.scale(sv.item()));
                    acc(*s, Tensor::new(sv.shape().to_vec(), vec![ds])?);
                }
                Op::AddRow(a, r) => {
                    let (m, n) = g.dims2()?;
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for (d, v) in dr.iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    let rshape = self.shape(*r).to_vec();
                    acc(*r, Tensor::new(rshape, dr)?);
                    acc(*a, g);
                }
                Op::OuterAdd(c, r) => {
                    let (m, n) = g.dims2()?;
                    let dc = (0..m).map(|i| g.row(i).iter().sum()).collect();
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for (d, v) in dr.iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    acc(*c, Tensor::new(vec![m, 1], dc)?);
                    acc(*r, Tensor::new(vec![1, n], dr)?);
                }
                Op::Tanh(a) => acc(*a, g.zip_with(y, |g, y| g * (1.0 - y * y))?),
                Op::Sigmoid(a) => acc(*a, g.zip_with(y, |g, y| g * y * (1.0 - y))?),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(*a, g.zip_with(x, |g, x| if x > 0.0 { g } else { 0.0 })?)
                }
                Op::Softmax(a, axis) => {
                    let (outer, n, inner) = axis_layout(y.shape(), *axis)?;
                    let mut dx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + i;
                            let dotp: f64 =
                                (0..n).map(|k| g.data()[idx(k)] * y.data()[idx(k)]).sum();
                            for k in 0..n {
                                dx[idx(k)] = y.data()[idx(k)] * (g.data()[idx(k)] - dotp);
                            }
                        }
                    }
                    acc(*a, Tensor::new(y.shape().to_vec(), dx)?);
                }
                Op::LogSoftmax(a, axis) => {
                    let (outer, n, inner) = axis_layout(y.shape(), *axis)?;
                    let mut dx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + i;
                            let gsum: f64 = (0..n).map(|k| g.data()[idx(k)]).sum();
                            for k in 0..n {
                                dx[idx(k)] = g.data()[idx(k)] - y.data()[idx(k)].exp() * gsum;
                            }
                        }
                    }
                    acc(*a, Tensor::new(y.shape().to_vec(), dx)?);
                }
                Op::SumAll(a) => acc(*a, Tensor::filled(self.shape(*a), g.item())),
                Op::SumAxis(a, axis) => {
                    let (m, n) = self.value(*a).dims2()?;
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] = if *axis == 0 { g.data()[j] } else { g.data()[i] };
                        }
                    }
                    acc(*a, Tensor::new(self.shape(*a).to_vec(), dx)?);
                }
                Op::ConcatCols(a, b) => {
                    let (m, pa) = self.value(*a).dims2()?;
                    let (_, pb) = self.value(*b).dims2()?;
                    let mut da = Vec::with_capacity(m * pa);
                    let mut db = Vec::with_capacity(m * pb);
                    for i in 0..m {
                        let r = g.row(i);
                        da.extend_from_slice(&r[..pa]);
                        db.extend_from_slice(&r[pa..]);
                    }
                    acc(*a, Tensor::new(self.shape(*a).to_vec(), da)?);
                    acc(*b, Tensor::new(self.shape(*b).to_vec(), db)?);
                }
                Op::Gather(a, indices) => {
                    let mut dx = Tensor::zeros(self.shape(*a));
                    for (k, &src) in indices.iter().enumerate() {
                        dx.data_mut()[src] += g.data()[k];
                    }
                    acc(*a, dx);
                }
                Op::SliceCols(a, start, end) => {
                    let (m, n) = self.value(*a).dims2()?;
                    let w = end - start;
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        dx[i * n + start..i * n + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    acc(*a, Tensor::new(self.shape(*a).to_vec(), dx)?);
                }
                Op::Standardize(a) => {
                    let x = self.value(*a);
                    let n = x.len() as f64;
                    let mean = x.sum() / n;
                    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let s = (var + STANDARDIZE_EPS).sqrt();
                    let gmean = g.sum() / n;
                    let gy: f64 =
                        g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum::<f64>() / n;
                    acc(*a, g.zip_with(y, |gi, yi| (gi - gmean - yi * gy) / s)?);
                }
                Op::Reshape(a) => acc(*a, g.reshape(self.shape(*a))?),
                Op::Powf(a, p) => {
                    let x = self.value(*a);
                    acc(*a, g.zip_with(x, |g, x| g * p * x.powf(p - 1.0))?)
                }
            }
        }
        Ok(out)
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_visits_in_reverse_recording_order() {
        let mut store = ParamStore::new();
        let w = store.register("w", Tensor::row_vector(vec![0.5, -1.0])).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let t = tape.tanh(wv).unwrap();
        let s = tape.sum_all(t).unwrap();
        let mut trace = Vec::new();
        tape.backward_traced(s, &store, Some(&mut trace)).unwrap();
        assert_eq!(trace, vec![2, 1, 0]);
    }

    #[test]
    fn every_param_gets_a_buffer() {
        let mut store = ParamStore::new();
        let a = store.register("a", Tensor::zeros(&[2, 3])).unwrap();
        store.register("unused", Tensor::zeros(&[4])).unwrap();
        let mut tape = Tape::new();
        let av = tape.param(&store, a);
        let s = tape.sum_all(av).unwrap();
        let g = tape.backward(s, &store).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.get(ParamId(0)).shape(), &[2, 3]);
        assert_eq!(g.get(ParamId(1)).shape(), &[4]);
        assert_eq!(g.get(ParamId(1)).max_abs(), 0.0);
    }

    #[test]
    fn duplicate_param_name_rejected() {
        let mut store = ParamStore::new();
        store.register("x", Tensor::scalar(1.0)).unwrap();
        assert!(store.register("x", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn non_finite_is_caught_at_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(f64::MAX)).unwrap();
        let err = tape.scale(a, 10.0).unwrap_err();
        assert!(matches!(err, VlqaError::Numeric(_)));
    }

    #[test]
    fn standardize_has_unit_variance() {
        let mut tape = Tape::new();
        let a = tape
            .constant(Tensor::row_vector(vec![1.0, 4.0, -2.0, 0.5, 3.0]))
            .unwrap();
        let s = tape.standardize(a).unwrap();
        let y = tape.value(s);
        let n = y.len() as f64;
        let mean = y.sum() / n;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn logistic_is_symmetric_and_bounded() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(3.0) + logistic(-3.0) - 1.0).abs() < 1e-15);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
    }
}
