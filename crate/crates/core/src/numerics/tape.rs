//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Operations are recorded in execution order; [`Tape::backward`] replays
//! them in reverse and returns the gradient of a scalar loss with respect to
//! every registered parameter.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{self, sigmoid, softplus_scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Identifier of a trainable parameter within one tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Softplus,
    Tanh,
    Exp,
    Square,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRowBias(usize, usize),
    Unary(usize, Unary),
    Scale(usize, f64),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    GatherCols(usize, Vec<usize>),
    ConcatCols(usize, usize),
    RowSums(usize),
    Sum(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients keyed by parameter id, each shaped like its parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Gradients in ascending parameter-id order.
    pub fn into_ordered(self) -> Vec<Tensor> {
        self.grads.into_values().collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Contract(
                "variable was not recorded on this tape".into(),
            ));
        }
        Ok(v.index)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor) -> Result<Var> {
        if self.params.contains_key(&id) {
            return Err(Error::Contract(format!(
                "parameter {} registered twice",
                id.0
            )));
        }
        let v = self.push(value, Op::Leaf);
        self.params.insert(id, v.index);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn num_ops(&self) -> usize {
        self.nodes.len()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = tensor::matmul(&self.nodes[ia].value, &self.nodes[ib].value)?;
        Ok(self.push(out, Op::MatMul(ia, ib)))
    }

    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(bias)?);
        let out = tensor::add_row_bias(&self.nodes[ia].value, &self.nodes[ib].value)?;
        Ok(self.push(out, Op::AddRowBias(ia, ib)))
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let out = match kind {
            Unary::Softplus => x.map(softplus_scalar),
            Unary::Tanh => x.map(f64::tanh),
            Unary::Exp => x.map(f64::exp),
            Unary::Square => x.map(|v| v * v),
        };
        Ok(self.push(out, Op::Unary(ia, kind)))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Square)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(|v| v * k);
        Ok(self.push(out, Op::Scale(ia, k)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.nodes[ia]
            .value
            .zip_with(&self.nodes[ib].value, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.nodes[ia]
            .value
            .zip_with(&self.nodes[ib].value, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(ia, ib)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.nodes[ia]
            .value
            .zip_with(&self.nodes[ib].value, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(ia, ib)))
    }

    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = tensor::gather_cols(&self.nodes[ia].value, idx)?;
        Ok(self.push(out, Op::GatherCols(ia, idx.to_vec())))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = tensor::concat_cols(&self.nodes[ia].value, &self.nodes[ib].value)?;
        Ok(self.push(out, Op::ConcatCols(ia, ib)))
    }

    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = tensor::row_sums(&self.nodes[ia].value)?;
        Ok(self.push(out, Op::RowSums(ia)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = Tensor::scalar(self.nodes[ia].value.sum());
        Ok(self.push(out, Op::Sum(ia)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a)?.len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Consumes the tape and returns `∂loss/∂p` for every registered parameter.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss)?;
        if !self.nodes[il].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[il].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; il + 1];
        grads[il] = Some(Tensor::filled(self.nodes[il].value.shape(), 1.0));

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = tensor::matmul_bt(&g, &self.nodes[*b].value)?;
                    let gb = tensor::matmul_at(&self.nodes[*a].value, &g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::AddRowBias(a, b) => {
                    let n = g.cols();
                    let mut gb = vec![0.0; n];
                    for r in 0..g.rows() {
                        for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    let gb = Tensor::new(self.nodes[*b].value.shape().to_vec(), gb)?;
                    accumulate(&mut grads, *a, g)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Unary(a, kind) => {
                    let x = &self.nodes[*a].value;
                    let y = &node.value;
                    let ga = match kind {
                        Unary::Softplus => g.zip_with(x, "softplus'", |g, x| g * sigmoid(x))?,
                        Unary::Tanh => g.zip_with(y, "tanh'", |g, y| g * (1.0 - y * y))?,
                        Unary::Exp => g.zip_with(y, "exp'", |g, y| g * y)?,
                        Unary::Square => g.zip_with(x, "square'", |g, x| 2.0 * g * x)?,
                    };
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, *a, g.map(|v| v * k))?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.map(|v| -v))?;
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_with(&self.nodes[*b].value, "mul'", |g, y| g * y)?;
                    let gb = g.zip_with(&self.nodes[*a].value, "mul'", |g, x| g * x)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::GatherCols(a, idx) => {
                    let src = &self.nodes[*a].value;
                    let n = src.cols();
                    let mut ga = vec![0.0; src.len()];
                    for r in 0..g.rows() {
                        for (&j, &v) in idx.iter().zip(g.row(r)) {
                            ga[r * n + j] += v;
                        }
                    }
                    let ga = Tensor::new(src.shape().to_vec(), ga)?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::ConcatCols(a, b) => {
                    let na = self.nodes[*a].value.cols();
                    let nb = self.nodes[*b].value.cols();
                    let m = g.rows();
                    let mut ga = Vec::with_capacity(m * na);
                    let mut gb = Vec::with_capacity(m * nb);
                    for r in 0..m {
                        let row = g.row(r);
                        ga.extend_from_slice(&row[..na]);
                        gb.extend_from_slice(&row[na..]);
                    }
                    let ga = Tensor::new(self.nodes[*a].value.shape().to_vec(), ga)?;
                    let gb = Tensor::new(self.nodes[*b].value.shape().to_vec(), gb)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::RowSums(a) => {
                    let src = &self.nodes[*a].value;
                    let n = src.cols();
                    let mut ga = Vec::with_capacity(src.len());
                    for r in 0..src.rows() {
                        ga.extend(std::iter::repeat_n(g.data()[r], n));
                    }
                    accumulate(&mut grads, *a, Tensor::new(src.shape().to_vec(), ga)?)?;
                }
                Op::Sum(a) => {
                    let src = &self.nodes[*a].value;
                    let gv = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::filled(src.shape(), gv))?;
                }
            }
        }

        let mut out = BTreeMap::new();
        for (&id, &node) in &self.params {
            let g = grads
                .get_mut(node)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.nodes[node].value.shape()));
            out.insert(id, g);
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], i: usize, g: Tensor) -> Result<()> {
    grads[i] = Some(match grads[i].take() {
        None => g,
        Some(prev) => prev.zip_with(&g, "accumulate", |a, b| a + b)?,
    });
    Ok(())
}
