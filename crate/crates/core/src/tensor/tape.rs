use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use super::ops;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

type Id = usize;

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Id, Id),
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    Affine(Id, Id, Id),
    Scale(Id, S),
    ScaleBy(Id, Id),
    Exp(Id),
    Abs(Id),
    Neg(Id),
    LeakyRelu(Id, S),
    Relu(Id),
    LogSigmoid(Id),
    ConcatLast(Id, Id),
    SoftmaxRows(Id),
    MaskedSoftmaxRows(Id),
    MeanRows(Id),
    Gather(Id, Vec<usize>),
    ScatterAdd(Id, Vec<usize>),
    Submatrix(Id, Vec<usize>, Vec<usize>),
    Dropout(Id, Vec<S>),
    CrossEntropy(Id, Vec<usize>, Tensor<S>),
    Sum(Id),
    RowSqDist(Id, Id),
    Reshape(Id),
    Transpose(Id),
    NormalizeRows(Id, Vec<S>),
    StandardizeCols(Id, Vec<S>),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

struct Inner<S> {
    nodes: Vec<Node<S>>,
    consumed: bool,
    strict_finite: bool,
}

/// Records differentiable operations for one forward pass.
///
/// A tape is single-owner. Once [`Tape::backward`] has run it is consumed and
/// refuses further operations.
pub struct Tape<S: Scalar> {
    inner: RefCell<Inner<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
                strict_finite: false,
            }),
        }
    }

    /// Reject any op whose output contains NaN or infinity.
    pub fn strict_finite(self) -> Self {
        self.inner.borrow_mut().strict_finite = true;
        self
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lifts a trainable tensor onto the tape.
    pub fn param(&self, value: &Tensor<S>) -> Var<'_, S> {
        self.leaf(value.clone(), true)
    }

    /// Lifts a tensor that never receives a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<S>, requires_grad: bool) -> Var<'_, S> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn push(&self, name: &'static str, value: Tensor<S>, op: Op<S>, inputs: &[Id]) -> Result<Var<'_, S>> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::TapeState("operation recorded on a consumed tape"));
        }
        if inner.strict_finite && !value.all_finite() {
            return Err(Error::NumericalFault { op: name });
        }
        let requires_grad = inputs.iter().any(|&i| inner.nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: inner.nodes.len() - 1,
        })
    }

    fn with_value<R>(&self, id: Id, f: impl FnOnce(&Tensor<S>) -> R) -> R {
        f(&self.inner.borrow().nodes[id].value)
    }

    /// Reverse sweep from a scalar `loss`. Every leaf that requires a gradient
    /// gets one; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::TapeState("backward called on a consumed tape"));
        }
        let nodes = &inner.nodes;
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::filled(nodes[loss.id].value.shape(), S::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            for (input, contrib) in backprop(nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, &c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a = *a + c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let mut leaves = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                leaves.insert(id, g);
            }
        }
        inner.consumed = true;
        Ok(Gradients { leaves })
    }
}

/// Per-input gradient contributions of one recorded node.
fn backprop<S: Scalar>(nodes: &[Node<S>], node: &Node<S>, g: &Tensor<S>) -> Vec<(Id, Tensor<S>)> {
    let val = |id: Id| &nodes[id].value;
    match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => vec![
            (*a, ops::matmul_bt(g, val(*b))),
            (*b, ops::matmul_at(val(*a), g)),
        ],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
        Op::Mul(a, b) => vec![
            (*a, ops::zip_map(g, val(*b), |x, y| x * y)),
            (*b, ops::zip_map(g, val(*a), |x, y| x * y)),
        ],
        Op::Affine(x, w, b) => vec![
            (*x, ops::matmul_bt(g, val(*w))),
            (*w, ops::matmul_at(val(*x), g)),
            (*b, ops::column_sums(g)),
        ],
        Op::Scale(a, c) => vec![(*a, g.map(|v| v * *c))],
        Op::ScaleBy(a, s) => {
            let sv = val(*s).item();
            let ds: S = g.data().iter().zip(val(*a).data()).map(|(&x, &y)| x * y).sum();
            vec![(*a, g.map(|v| v * sv)), (*s, Tensor::filled(val(*s).shape(), ds))]
        }
        Op::Exp(a) => vec![(*a, ops::zip_map(g, &node.value, |x, y| x * y))],
        Op::Abs(a) => vec![(*a, ops::zip_map(g, val(*a), |x, y| x * sign(y)))],
        Op::Neg(a) => vec![(*a, g.map(|v| -v))],
        Op::LeakyRelu(a, slope) => vec![(
            *a,
            ops::zip_map(g, val(*a), |x, y| if y > S::zero() { x } else { x * *slope }),
        )],
        Op::LogSigmoid(a) => vec![(
            *a,
            ops::zip_map(g, val(*a), |x, y| x * (S::one() / (S::one() + y.exp()))),
        )],
        Op::Relu(a) => vec![(
            *a,
            ops::zip_map(g, val(*a), |x, y| if y > S::zero() { x } else { S::zero() }),
        )],
        Op::ConcatLast(a, b) => {
            let (ca, cb) = (val(*a).cols(), val(*b).cols());
            let rows = g.rows();
            let mut ga = Vec::with_capacity(rows * ca);
            let mut gb = Vec::with_capacity(rows * cb);
            for r in 0..rows {
                let row = g.row(r);
                ga.extend_from_slice(&row[..ca]);
                gb.extend_from_slice(&row[ca..]);
            }
            vec![
                (*a, Tensor::from_parts(val(*a).shape().to_vec(), ga)),
                (*b, Tensor::from_parts(val(*b).shape().to_vec(), gb)),
            ]
        }
        Op::SoftmaxRows(a) | Op::MaskedSoftmaxRows(a) => {
            vec![(*a, ops::softmax_rows_backward(&node.value, g))]
        }
        Op::MeanRows(a) => {
            let m = val(*a).rows();
            let inv = S::one() / S::from_usize(m).unwrap();
            let scaled = g.map(|v| v * inv);
            let idx = vec![0; m];
            vec![(*a, ops::gather_rows(&scaled, &idx))]
        }
        Op::Gather(a, idx) => vec![(*a, ops::scatter_add_rows(g, idx, val(*a).rows()))],
        Op::ScatterAdd(a, idx) => vec![(*a, ops::gather_rows(g, idx))],
        Op::Submatrix(a, rows, cols) => {
            let src = val(*a);
            let mut out = Tensor::zeros(src.shape());
            for (i, &r) in rows.iter().enumerate() {
                for (j, &c) in cols.iter().enumerate() {
                    let v = out.get(r, c) + g.get(i, j);
                    out.set(r, c, v);
                }
            }
            vec![(*a, out)]
        }
        Op::Dropout(a, mask) => {
            let data = g.data().iter().zip(mask).map(|(&x, &m)| x * m).collect();
            vec![(*a, Tensor::from_parts(g.shape().to_vec(), data))]
        }
        Op::CrossEntropy(a, targets, probs) => {
            let gv = g.item();
            let mut d = probs.clone();
            let c = d.cols();
            for (r, &t) in targets.iter().enumerate() {
                d.data_mut()[r * c + t] = d.data()[r * c + t] - S::one();
            }
            vec![(*a, d.map(|v| v * gv))]
        }
        Op::Sum(a) => vec![(*a, Tensor::filled(val(*a).shape(), g.item()))],
        Op::RowSqDist(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let c = va.cols();
            let mut da = Vec::with_capacity(va.numel());
            for r in 0..va.rows() {
                let two_g = S::lit(2.0) * g.get(r, 0);
                for j in 0..c {
                    da.push(two_g * (va.get(r, j) - vb.get(r, j)));
                }
            }
            let da = Tensor::from_parts(va.shape().to_vec(), da);
            let db = da.map(|v| -v);
            vec![(*a, da), (*b, db)]
        }
        Op::Reshape(a) => vec![(*a, Tensor::from_parts(val(*a).shape().to_vec(), g.data().to_vec()))],
        Op::Transpose(a) => vec![(*a, ops::transpose(g))],
        Op::NormalizeRows(a, norms) => {
            let y = &node.value;
            let (m, n) = (y.rows(), y.cols());
            let mut out = vec![S::zero(); m * n];
            for i in 0..m {
                let (yr, gr) = (y.row(i), g.row(i));
                let dot: S = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                for j in 0..n {
                    out[i * n + j] = (gr[j] - yr[j] * dot) / norms[i];
                }
            }
            vec![(*a, Tensor::from_parts(vec![m, n], out))]
        }
        Op::StandardizeCols(a, sds) => {
            let y = &node.value;
            let (m, n) = (y.rows(), y.cols());
            let inv_m = S::one() / S::from_usize(m).unwrap();
            let mut out = vec![S::zero(); m * n];
            for j in 0..n {
                let (mut mean_g, mut mean_gy) = (S::zero(), S::zero());
                for i in 0..m {
                    mean_g = mean_g + g.get(i, j) * inv_m;
                    mean_gy = mean_gy + g.get(i, j) * y.get(i, j) * inv_m;
                }
                for i in 0..m {
                    out[i * n + j] = (g.get(i, j) - mean_g - y.get(i, j) * mean_gy) / sds[j];
                }
            }
            vec![(*a, Tensor::from_parts(vec![m, n], out))]
        }
    }
}

fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Gradients of the leaves of a consumed tape.
pub struct Gradients<S> {
    leaves: BTreeMap<Id, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `var`, or `None` if it is not a gradient-requiring leaf.
    pub fn get(&self, var: Var<'_, S>) -> Option<&Tensor<S>> {
        self.leaves.get(&var.id)
    }

    pub fn take(&mut self, var: Var<'_, S>) -> Option<Tensor<S>> {
        self.leaves.remove(&var.id)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    id: Id,
}

impl<S: Scalar> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.tape
            .with_value(self.id, |v| write!(f, "Var#{}{:?}", self.id, v.shape()))
    }
}

fn mismatch<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_matrix<S: Scalar>(op: &'static str, a: &Tensor<S>) -> Result<()> {
    if a.shape().len() != 2 {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: vec![],
        });
    }
    Ok(())
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn value(&self) -> Tensor<S> {
        self.tape.with_value(self.id, Tensor::clone)
    }

    /// The tape this value was recorded on.
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |v| v.shape().to_vec())
    }

    pub fn item(&self) -> S {
        self.tape.with_value(self.id, Tensor::item)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    fn same_tape(&self, other: &Self) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract("operands live on different tapes"))
        }
    }

    fn binary(
        &self,
        other: &Self,
        name: &'static str,
        f: impl FnOnce(&Tensor<S>, &Tensor<S>) -> Result<Tensor<S>>,
        op: Op<S>,
    ) -> Result<Self> {
        self.same_tape(other)?;
        let value = {
            let inner = self.tape.inner.borrow();
            f(&inner.nodes[self.id].value, &inner.nodes[other.id].value)?
        };
        self.tape.push(name, value, op, &[self.id, other.id])
    }

    fn unary(
        &self,
        name: &'static str,
        f: impl FnOnce(&Tensor<S>) -> Result<(Tensor<S>, Op<S>)>,
    ) -> Result<Self> {
        let (value, op) = self.tape.with_value(self.id, f)?;
        self.tape.push(name, value, op, &[self.id])
    }

    fn elementwise(&self, other: &Self, name: &'static str, op: Op<S>, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.binary(
            other,
            name,
            |a, b| {
                if a.shape() != b.shape() {
                    return Err(mismatch(name, a, b));
                }
                Ok(ops::zip_map(a, b, f))
            },
            op,
        )
    }

    /// `[m×k] · [k×n] → [m×n]`
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.binary(
            other,
            "matmul",
            |a, b| {
                require_matrix("matmul", a)?;
                require_matrix("matmul", b)?;
                if a.cols() != b.rows() {
                    return Err(mismatch("matmul", a, b));
                }
                Ok(ops::matmul(a, b))
            },
            Op::MatMul(self.id, other.id),
        )
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// `x · W + b` with `x: [m×k]`, `W: [k×n]`, `b: [1×n]` added to every row.
    pub fn affine(&self, weight: &Self, bias: &Self) -> Result<Self> {
        self.same_tape(weight)?;
        self.same_tape(bias)?;
        let value = {
            let inner = self.tape.inner.borrow();
            let (x, w, b) = (
                &inner.nodes[self.id].value,
                &inner.nodes[weight.id].value,
                &inner.nodes[bias.id].value,
            );
            require_matrix("affine", x)?;
            if x.cols() != w.rows() {
                return Err(mismatch("affine", x, w));
            }
            if b.shape() != [1, w.cols()] {
                return Err(mismatch("affine", w, b));
            }
            let mut out = ops::matmul(x, w);
            let n = out.cols();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v = *v + b.data()[i % n];
            }
            out
        };
        self.tape.push(
            "affine",
            value,
            Op::Affine(self.id, weight.id, bias.id),
            &[self.id, weight.id, bias.id],
        )
    }

    pub fn scale(&self, c: S) -> Result<Self> {
        self.unary("scale", |a| Ok((a.map(|v| v * c), Op::Scale(self.id, c))))
    }

    /// Multiplies every entry by the single value of a `[1×1]` var.
    pub fn scale_by(&self, s: &Self) -> Result<Self> {
        self.binary(
            s,
            "scale_by",
            |a, sv| {
                if sv.numel() != 1 {
                    return Err(mismatch("scale_by", a, sv));
                }
                let c = sv.item();
                Ok(a.map(|v| v * c))
            },
            Op::ScaleBy(self.id, s.id),
        )
    }

    pub fn exp(&self) -> Result<Self> {
        self.unary("exp", |a| Ok((a.map(S::exp), Op::Exp(self.id))))
    }

    pub fn abs(&self) -> Result<Self> {
        self.unary("abs", |a| Ok((a.map(S::abs), Op::Abs(self.id))))
    }

    pub fn neg(&self) -> Result<Self> {
        self.unary("neg", |a| Ok((a.map(|v| -v), Op::Neg(self.id))))
    }

    pub fn leaky_relu(&self, slope: S) -> Result<Self> {
        self.unary("leaky_relu", |a| {
            Ok((
                a.map(|v| if v > S::zero() { v } else { v * slope }),
                Op::LeakyRelu(self.id, slope),
            ))
        })
    }

    pub fn relu(&self) -> Result<Self> {
        self.unary("relu", |a| Ok((a.map(|v| v.max(S::zero())), Op::Relu(self.id))))
    }

    /// `ln σ(x)`, evaluated without overflow for either sign of `x`.
    pub fn log_sigmoid(&self) -> Result<Self> {
        self.unary("log_sigmoid", |a| {
            let f = |x: S| x.min(S::zero()) - (-x.abs()).exp().ln_1p();
            Ok((a.map(f), Op::LogSigmoid(self.id)))
        })
    }

    /// Joins `[m×a]` and `[m×b]` into `[m×(a+b)]`.
    pub fn concat_last(&self, other: &Self) -> Result<Self> {
        self.binary(
            other,
            "concat_last",
            |a, b| {
                require_matrix("concat_last", a)?;
                require_matrix("concat_last", b)?;
                if a.rows() != b.rows() {
                    return Err(mismatch("concat_last", a, b));
                }
                let mut data = Vec::with_capacity(a.numel() + b.numel());
                for r in 0..a.rows() {
                    data.extend_from_slice(a.row(r));
                    data.extend_from_slice(b.row(r));
                }
                Ok(Tensor::from_parts(vec![a.rows(), a.cols() + b.cols()], data))
            },
            Op::ConcatLast(self.id, other.id),
        )
    }

    pub fn softmax_rows(&self) -> Result<Self> {
        self.unary("softmax_rows", |a| {
            require_matrix("softmax_rows", a)?;
            if !a.all_finite() {
                return Err(Error::NumericalFault { op: "softmax_rows" });
            }
            Ok((ops::softmax_rows(a, None), Op::SoftmaxRows(self.id)))
        })
    }

    /// Row softmax over the entries where `mask` is true; the rest are exactly
    /// zero. Every row must keep at least one entry.
    pub fn masked_softmax_rows(&self, mask: &[bool]) -> Result<Self> {
        self.unary("masked_softmax_rows", |a| {
            require_matrix("masked_softmax_rows", a)?;
            if mask.len() != a.numel() {
                return Err(Error::Shape {
                    op: "masked_softmax_rows",
                    left: a.shape().to_vec(),
                    right: vec![mask.len()],
                });
            }
            let n = a.cols();
            for r in 0..a.rows() {
                if !mask[r * n..(r + 1) * n].iter().any(|&k| k) {
                    return Err(Error::contract(format!("row {r} has no kept entries")));
                }
            }
            Ok((ops::softmax_rows(a, Some(mask)), Op::MaskedSoftmaxRows(self.id)))
        })
    }

    /// Mean over rows: `[m×n] → [1×n]`.
    pub fn mean_rows(&self) -> Result<Self> {
        self.unary("mean_rows", |a| {
            require_matrix("mean_rows", a)?;
            let inv = S::one() / S::from_usize(a.rows()).unwrap();
            Ok((ops::column_sums(a).map(|v| v * inv), Op::MeanRows(self.id)))
        })
    }

    /// Selects rows by index (embedding lookup when `self` is a table).
    pub fn gather(&self, idx: &[usize]) -> Result<Self> {
        self.unary("gather", |a| {
            require_matrix("gather", a)?;
            if idx.is_empty() {
                return Err(Error::contract("gather with no indices"));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= a.rows()) {
                return Err(Error::contract(format!("gather index {bad} out of {} rows", a.rows())));
            }
            Ok((ops::gather_rows(a, idx), Op::Gather(self.id, idx.to_vec())))
        })
    }

    /// Sums row `r` of `self` into row `idx[r]` of a fresh `[rows×n]` result.
    pub fn scatter_add_rows(&self, idx: &[usize], rows: usize) -> Result<Self> {
        self.unary("scatter_add_rows", |a| {
            require_matrix("scatter_add_rows", a)?;
            if idx.len() != a.rows() || idx.iter().any(|&i| i >= rows) {
                return Err(Error::contract("scatter_add_rows index out of range"));
            }
            Ok((
                ops::scatter_add_rows(a, idx, rows),
                Op::ScatterAdd(self.id, idx.to_vec()),
            ))
        })
    }

    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Result<Self> {
        self.unary("submatrix", |a| {
            require_matrix("submatrix", a)?;
            if rows.is_empty() || cols.is_empty() {
                return Err(Error::contract("empty submatrix"));
            }
            if rows.iter().any(|&r| r >= a.rows()) || cols.iter().any(|&c| c >= a.cols()) {
                return Err(Error::contract("submatrix index out of range"));
            }
            let mut data = Vec::with_capacity(rows.len() * cols.len());
            for &r in rows {
                for &c in cols {
                    data.push(a.get(r, c));
                }
            }
            Ok((
                Tensor::from_parts(vec![rows.len(), cols.len()], data),
                Op::Submatrix(self.id, rows.to_vec(), cols.to_vec()),
            ))
        })
    }

    /// Inverted dropout: each entry is zeroed with probability `rate` and the
    /// survivors scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: S, rng: &mut R) -> Result<Self> {
        if rate <= S::zero() {
            return Ok(*self);
        }
        if rate >= S::one() {
            return Err(Error::contract("dropout rate must be below 1"));
        }
        let keep = S::one() - rate;
        let scale = S::one() / keep;
        let keep_p = keep.to_f64_lossy();
        self.unary("dropout", |a| {
            let mask: Vec<S> = (0..a.numel())
                .map(|_| if rng.gen::<f64>() < keep_p { scale } else { S::zero() })
                .collect();
            let data = a.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
            Ok((
                Tensor::from_parts(a.shape().to_vec(), data),
                Op::Dropout(self.id, mask),
            ))
        })
    }

    /// Summed cross-entropy of row-wise softmax(`self`) against class indices.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Self> {
        self.unary("cross_entropy", |a| {
            require_matrix("cross_entropy", a)?;
            if targets.len() != a.rows() || targets.iter().any(|&t| t >= a.cols()) {
                return Err(Error::contract("cross_entropy targets do not fit logits"));
            }
            let probs = ops::softmax_rows(a, None);
            let mut loss = S::zero();
            for (r, &t) in targets.iter().enumerate() {
                let row = a.row(r);
                let max = row.iter().copied().fold(S::neg_infinity(), S::max);
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
                loss = loss + lse - row[t];
            }
            Ok((
                Tensor::scalar(loss),
                Op::CrossEntropy(self.id, targets.to_vec(), probs),
            ))
        })
    }

    pub fn sum(&self) -> Result<Self> {
        self.unary("sum", |a| Ok((Tensor::scalar(a.data().iter().copied().sum()), Op::Sum(self.id))))
    }

    /// `‖a_i − b_i‖²` per row: `[m×n], [m×n] → [m×1]`.
    pub fn row_sq_dist(&self, other: &Self) -> Result<Self> {
        self.binary(
            other,
            "row_sq_dist",
            |a, b| {
                if a.shape() != b.shape() {
                    return Err(mismatch("row_sq_dist", a, b));
                }
                let data = (0..a.rows())
                    .map(|r| a.row(r).iter().zip(b.row(r)).map(|(&x, &y)| (x - y) * (x - y)).sum())
                    .collect();
                Ok(Tensor::from_parts(vec![a.rows(), 1], data))
            },
            Op::RowSqDist(self.id, other.id),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.unary("reshape", |a| {
            let t = Tensor::new(shape.to_vec(), a.data().to_vec())?;
            Ok((t, Op::Reshape(self.id)))
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        self.unary("transpose", |a| {
            require_matrix("transpose", a)?;
            Ok((ops::transpose(a), Op::Transpose(self.id)))
        })
    }

    /// Scales every row to unit L2 norm. Zero rows are a contract violation.
    pub fn normalize_rows(&self) -> Result<Self> {
        self.unary("normalize_rows", |a| {
            require_matrix("normalize_rows", a)?;
            let mut norms = Vec::with_capacity(a.rows());
            let mut data = Vec::with_capacity(a.numel());
            for r in 0..a.rows() {
                let norm = a.row(r).iter().map(|&v| v * v).sum::<S>().sqrt();
                if norm == S::zero() {
                    return Err(Error::contract(format!("row {r} has zero norm")));
                }
                norms.push(norm);
                data.extend(a.row(r).iter().map(|&v| v / norm));
            }
            Ok((
                Tensor::from_parts(a.shape().to_vec(), data),
                Op::NormalizeRows(self.id, norms),
            ))
        })
    }

    /// Centres every column over the rows and divides by `sqrt(var + eps)`,
    /// with the population variance.
    pub fn standardize_cols(&self, eps: S) -> Result<Self> {
        self.unary("standardize_cols", |a| {
            require_matrix("standardize_cols", a)?;
            let (m, n) = (a.rows(), a.cols());
            let inv_m = S::one() / S::from_usize(m).unwrap();
            let mean = ops::column_sums(a).map(|v| v * inv_m);
            let mut sds = Vec::with_capacity(n);
            for j in 0..n {
                let var: S = (0..m).map(|i| (a.get(i, j) - mean.data()[j]).powi(2)).sum::<S>() * inv_m;
                sds.push((var + eps).sqrt());
            }
            let mut data = Vec::with_capacity(a.numel());
            for i in 0..m {
                data.extend((0..n).map(|j| (a.get(i, j) - mean.data()[j]) / sds[j]));
            }
            Ok((Tensor::from_parts(vec![m, n], data), Op::StandardizeCols(self.id, sds)))
        })
    }
}
