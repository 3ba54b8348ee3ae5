//! Adaptive relation graph over one episode's molecules: pairwise similarity
//! from an MLP on `exp(-|h_i - h_j|)`, top-K sparsification, row
//! normalization and propagation, repeated `T` times.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{glorot, join, Binder, Mlp2, Mlp2Vars, Parameters};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub const ADJACENCY_HIDDEN: usize = 128;
pub const STANDARDIZE_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Learned,
    Cosine,
}

/// Row normalization applied to the kept entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Softmax,
    /// `σ(a_ij) / Σ_k σ(a_ik)` over kept entries.
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationOptions {
    pub iterations: usize,
    pub k: usize,
    /// Keep every off-diagonal entry instead of the top K.
    pub dense: bool,
    pub similarity: Similarity,
    pub normalization: Normalization,
    /// Standardize the input embeddings over the graph's nodes first.
    pub standardize: bool,
    /// Refine with `LeakyReLU(½(Â·H + H)·W_r)` so a node keeps its own features.
    pub self_term: bool,
}

impl RelationOptions {
    pub fn new(iterations: usize, k: usize) -> Self {
        Self {
            iterations,
            k,
            dense: false,
            similarity: Similarity::Learned,
            normalization: Normalization::Softmax,
            standardize: false,
            self_term: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationWeights<S> {
    pub adjacency: Mlp2<S>,
    pub refine: Tensor<S>,
}

impl<S: Scalar> RelationWeights<S> {
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            adjacency: Mlp2::init(dim, ADJACENCY_HIDDEN, 1, rng),
            refine: glorot(dim, dim, rng),
        }
    }

    pub fn bind<'t>(&self, prefix: &str, b: &mut Binder<'t, S>) -> RelationVars<'t, S> {
        RelationVars {
            adjacency: self.adjacency.bind(&join(prefix, "adjacency"), b),
            refine: b.bind(join(prefix, "refine"), &self.refine),
        }
    }
}

impl<S: Scalar> Parameters<S> for RelationWeights<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        self.adjacency.visit(&join(prefix, "adjacency"), f);
        f(join(prefix, "refine"), &self.refine);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.adjacency.visit_mut(&join(prefix, "adjacency"), f);
        f(join(prefix, "refine"), &mut self.refine);
    }
}

#[derive(Clone, Copy)]
pub struct RelationVars<'t, S: Scalar> {
    pub adjacency: Mlp2Vars<'t, S>,
    pub refine: Var<'t, S>,
}

/// Output of [`run_relation_var`].
pub struct RelationOutput<'t, S: Scalar> {
    pub h: Var<'t, S>,
    /// Normalized adjacency of the final iteration; `None` when `T = 0`.
    pub a_hat: Option<Var<'t, S>>,
    pub reg: Var<'t, S>,
}

/// `[A]_ij = MLP(exp(-|h_i - h_j|))`. Each unordered pair is evaluated once, so
/// the result is exactly symmetric.
pub fn estimate_adjacency_var<'t, S: Scalar>(h: &Var<'t, S>, mlp: &Mlp2Vars<'t, S>) -> Result<Var<'t, S>> {
    let n = h.shape()[0];
    if n < 2 {
        return Err(Error::contract("relation graph needs at least two nodes"));
    }
    let (mut left, mut right) = (Vec::new(), Vec::new());
    let mut pair = vec![0; n * n];
    for i in 0..n {
        for j in i..n {
            pair[i * n + j] = left.len();
            pair[j * n + i] = left.len();
            left.push(i);
            right.push(j);
        }
    }
    let features = h.gather(&left)?.sub(&h.gather(&right)?)?.abs()?.neg()?.exp()?;
    let scores = mlp.forward(&features, S::zero(), None)?;
    scores.gather(&pair)?.reshape(&[n, n])
}

/// `[A]_ij = cos(h_i, h_j)`; zero rows are a contract violation.
pub fn cosine_adjacency_var<'t, S: Scalar>(h: &Var<'t, S>) -> Result<Var<'t, S>> {
    let u = h.normalize_rows()?;
    u.matmul(&u.transpose()?)
}

/// Keeps, per row, the `k` largest entries among columns other than the row
/// itself; ties go to the lower column index.
pub fn knn_mask<S: Scalar>(a: &Tensor<S>, k: usize) -> Result<Vec<bool>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::contract("adjacency must be square"));
    }
    if k == 0 || k >= n {
        return Err(Error::contract(format!("K = {k} outside 1..={}", n.saturating_sub(1))));
    }
    let mut mask = vec![false; n * n];
    for i in 0..n {
        let mut cand: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        cand.sort_by(|&x, &y| {
            a.get(i, y)
                .partial_cmp(&a.get(i, x))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(x.cmp(&y))
        });
        for &j in &cand[..k] {
            mask[i * n + j] = true;
        }
    }
    Ok(mask)
}

/// Every off-diagonal entry kept.
pub fn dense_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|idx| idx / n != idx % n).collect()
}

pub fn normalize_var<'t, S: Scalar>(a: &Var<'t, S>, mask: &[bool], normalization: Normalization) -> Result<Var<'t, S>> {
    match normalization {
        Normalization::Softmax => a.masked_softmax_rows(mask),
        Normalization::Sigmoid => a.log_sigmoid()?.masked_softmax_rows(mask),
    }
}

/// `LeakyReLU(Â · H · W_r)`.
pub fn refine_var<'t, S: Scalar>(h: &Var<'t, S>, a_hat: &Var<'t, S>, w: &Var<'t, S>) -> Result<Var<'t, S>> {
    a_hat.matmul(h)?.matmul(w)?.leaky_relu(S::lit(LEAKY_SLOPE))
}

/// `A*_ij = 1` iff support molecules `i` and `j` share a label.
pub fn ground_truth<S: Scalar>(labels: &[bool]) -> Tensor<S> {
    let n = labels.len();
    let data = (0..n * n)
        .map(|idx| if labels[idx / n] == labels[idx % n] { S::one() } else { S::zero() })
        .collect();
    Tensor::from_parts(vec![n, n], data)
}

/// `Σ_i ‖A*_i − Â_i‖²` over support rows and columns (the leading
/// `a_star.rows()` nodes).
pub fn regularizer_var<'t, S: Scalar>(tape: &'t Tape<S>, a_hat: &Var<'t, S>, a_star: &Tensor<S>) -> Result<Var<'t, S>> {
    let s = a_star.rows();
    if s > a_hat.shape()[0] {
        return Err(Error::contract("more support labels than graph nodes"));
    }
    let idx: Vec<usize> = (0..s).collect();
    a_hat
        .submatrix(&idx, &idx)?
        .row_sq_dist(&tape.constant(a_star.clone()))?
        .sum()
}

/// Runs `T` rounds of estimate → sparsify → normalize → refine starting from
/// `p`. The first `support_labels.len()` rows are the support nodes.
pub fn run_relation_var<'t, S: Scalar>(
    tape: &'t Tape<S>,
    p: &Var<'t, S>,
    weights: &RelationVars<'t, S>,
    opts: &RelationOptions,
    support_labels: &[bool],
) -> Result<RelationOutput<'t, S>> {
    let mut h = if opts.standardize {
        p.standardize_cols(S::lit(STANDARDIZE_EPS))?
    } else {
        *p
    };
    let mut a_hat = None;
    for _ in 0..opts.iterations {
        let a = match opts.similarity {
            Similarity::Learned => estimate_adjacency_var(&h, &weights.adjacency)?,
            Similarity::Cosine => cosine_adjacency_var(&h)?,
        };
        let n = a.shape()[0];
        let mask = if opts.dense {
            dense_mask(n)
        } else {
            knn_mask(&a.value(), opts.k.min(n - 1))?
        };
        let normalized = normalize_var(&a, &mask, opts.normalization)?;
        h = if opts.self_term {
            normalized
                .matmul(&h)?
                .add(&h)?
                .scale(S::lit(0.5))?
                .matmul(&weights.refine)?
                .leaky_relu(S::lit(LEAKY_SLOPE))?
        } else {
            refine_var(&h, &normalized, &weights.refine)?
        };
        a_hat = Some(normalized);
    }
    let reg = match &a_hat {
        Some(a) if !support_labels.is_empty() => regularizer_var(tape, a, &ground_truth(support_labels))?,
        _ => tape.constant(Tensor::scalar(S::zero())),
    };
    Ok(RelationOutput { h, a_hat, reg })
}

fn frozen<'t, S: Scalar>(tape: &'t Tape<S>, weights: &RelationWeights<S>) -> RelationVars<'t, S> {
    let mut b = Binder::new(tape);
    b.set_trainable(false);
    weights.bind("", &mut b)
}

pub fn estimate_adjacency<S: Scalar>(h: &Tensor<S>, weights: &RelationWeights<S>) -> Result<Tensor<S>> {
    let tape = Tape::new();
    let w = frozen(&tape, weights);
    Ok(estimate_adjacency_var(&tape.constant(h.clone()), &w.adjacency)?.value())
}

pub fn cosine_adjacency<S: Scalar>(h: &Tensor<S>) -> Result<Tensor<S>> {
    let tape = Tape::new();
    Ok(cosine_adjacency_var(&tape.constant(h.clone()))?.value())
}

/// Top-K entries per row with the rest zeroed, and the kept column indices.
pub fn knn_sparsify<S: Scalar>(a: &Tensor<S>, k: usize) -> Result<(Tensor<S>, Vec<Vec<usize>>)> {
    let mask = knn_mask(a, k)?;
    let n = a.rows();
    let mut kept = a.clone();
    let mut neighbors = vec![Vec::new(); n];
    for (idx, &m) in mask.iter().enumerate() {
        if m {
            neighbors[idx / n].push(idx % n);
        } else {
            kept.data_mut()[idx] = S::zero();
        }
    }
    Ok((kept, neighbors))
}

/// Softmax over each row's `neighbors`; all other entries are exactly zero.
pub fn normalize_rows<S: Scalar>(a: &Tensor<S>, neighbors: &[Vec<usize>]) -> Result<Tensor<S>> {
    let n = a.cols();
    if neighbors.len() != a.rows() {
        return Err(Error::contract("one neighbor set per row"));
    }
    let mut mask = vec![false; a.numel()];
    for (i, row) in neighbors.iter().enumerate() {
        for &j in row {
            if j >= n {
                return Err(Error::contract(format!("neighbor {j} out of range")));
            }
            mask[i * n + j] = true;
        }
    }
    let tape = Tape::new();
    Ok(tape.constant(a.clone()).masked_softmax_rows(&mask)?.value())
}

pub fn refine<S: Scalar>(h: &Tensor<S>, a_hat: &Tensor<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
    let tape = Tape::new();
    let out = refine_var(
        &tape.constant(h.clone()),
        &tape.constant(a_hat.clone()),
        &tape.constant(w.clone()),
    )?;
    Ok(out.value())
}

pub fn regularizer<S: Scalar>(a_hat: &Tensor<S>, a_star: &Tensor<S>) -> Result<S> {
    let tape = Tape::new();
    Ok(regularizer_var(&tape, &tape.constant(a_hat.clone()), a_star)?.item())
}

/// Final embeddings, final normalized adjacency (`None` for `T = 0`) and the
/// regularizer value.
pub fn run_relation<S: Scalar>(
    p: &Tensor<S>,
    weights: &RelationWeights<S>,
    opts: &RelationOptions,
    support_labels: &[bool],
) -> Result<(Tensor<S>, Option<Tensor<S>>, S)> {
    let tape = Tape::new();
    let w = frozen(&tape, weights);
    let out = run_relation_var(&tape, &tape.constant(p.clone()), &w, opts, support_labels)?;
    Ok((out.h.value(), out.a_hat.map(|a| a.value()), out.reg.item()))
}
