//! Property-aware embedding: class prototypes from the support set, dot-product
//! attention of each molecule over itself and the two prototypes, and a
//! projection MLP applied to `[g; b]`.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::nn::{Binder, Mlp2, Mlp2Vars, Parameters};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub const PROJECTION_HIDDEN: usize = 128;
pub const PROJECTION_DIM: usize = 128;
pub const PROJECTION_DROPOUT: f64 = 0.1;

/// How the property-aware embedding is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmbedMode {
    #[default]
    Full,
    /// Skip attention and project `[g; g]`.
    NoContext,
    /// Return `g` unchanged.
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypePair<S> {
    pub c0: Tensor<S>,
    pub c1: Tensor<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionWeights<S> {
    pub mlp: Mlp2<S>,
}

impl<S: Scalar> ProjectionWeights<S> {
    pub fn init<R: Rng + ?Sized>(generic_dim: usize, output: usize, rng: &mut R) -> Self {
        Self {
            mlp: Mlp2::init(2 * generic_dim, PROJECTION_HIDDEN, output, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.second.output_dim()
    }

    pub fn bind<'t>(&self, prefix: &str, b: &mut Binder<'t, S>) -> Mlp2Vars<'t, S> {
        self.mlp.bind(prefix, b)
    }
}

impl<S: Scalar> Parameters<S> for ProjectionWeights<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        self.mlp.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.mlp.visit_mut(prefix, f);
    }
}

fn class_indices(labels: &[bool]) -> Result<(Vec<usize>, Vec<usize>)> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i]);
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::contract("prototypes need both classes in the support set"));
    }
    Ok((neg, pos))
}

/// Class means `(c0, c1)` of the support rows of `g`.
pub fn prototypes_var<'t, S: Scalar>(g: &Var<'t, S>, labels: &[bool]) -> Result<(Var<'t, S>, Var<'t, S>)> {
    if g.shape()[0] != labels.len() {
        return Err(Error::contract("one label per support embedding"));
    }
    let (neg, pos) = class_indices(labels)?;
    Ok((g.gather(&neg)?.mean_rows()?, g.gather(&pos)?.mean_rows()?))
}

/// For each row `g_i`, attention over `[g_i; c0; c1]` read from the row of
/// `g_i`: `softmax([g_i·g_i, g_i·c0, g_i·c1] / √d)` mixed over the same three rows.
pub fn context_attend_var<'t, S: Scalar>(
    tape: &'t Tape<S>,
    g: &Var<'t, S>,
    c0: &Var<'t, S>,
    c1: &Var<'t, S>,
) -> Result<Var<'t, S>> {
    let (m, d) = (g.shape()[0], g.shape()[1]);
    if c0.shape() != [1, d] || c1.shape() != [1, d] {
        return Err(Error::Shape {
            op: "context_attend",
            left: g.shape(),
            right: c0.shape(),
        });
    }
    let ones_col = tape.constant(Tensor::filled(&[d, 1], S::one()));
    let ones_row = tape.constant(Tensor::filled(&[1, d], S::one()));
    let own = g.mul(g)?.matmul(&ones_col)?;
    let to0 = g.matmul(&c0.transpose()?)?;
    let to1 = g.matmul(&c1.transpose()?)?;
    let scale = S::one() / S::from_usize(d).unwrap().sqrt();
    let weights = own.concat_last(&to0)?.concat_last(&to1)?.scale(scale)?.softmax_rows()?;
    let all = (0..m).collect::<Vec<_>>();
    let w = |c: usize| weights.submatrix(&all, &[c]);
    w(0)?
        .matmul(&ones_row)?
        .mul(g)?
        .add(&w(1)?.matmul(c0)?)?
        .add(&w(2)?.matmul(c1)?)
}

/// Property-aware embeddings of every row of `g`, with prototypes taken from
/// the rows listed in `support` labelled by `labels`.
#[allow(clippy::too_many_arguments)]
pub fn embed_var<'t, S: Scalar>(
    tape: &'t Tape<S>,
    g: &Var<'t, S>,
    support: &[usize],
    labels: &[bool],
    projection: Option<&Mlp2Vars<'t, S>>,
    mode: EmbedMode,
    dropout: S,
    train: Option<&mut dyn RngCore>,
) -> Result<Var<'t, S>> {
    let input = match mode {
        EmbedMode::Identity => return Ok(*g),
        EmbedMode::NoContext => g.concat_last(g)?,
        EmbedMode::Full => {
            let (c0, c1) = prototypes_var(&g.gather(support)?, labels)?;
            g.concat_last(&context_attend_var(tape, g, &c0, &c1)?)?
        }
    };
    let projection = projection.ok_or_else(|| Error::contract("projection weights missing"))?;
    projection.forward(&input, dropout, train)
}

pub fn prototypes<S: Scalar>(support: &Tensor<S>, labels: &[bool]) -> Result<PrototypePair<S>> {
    let tape = Tape::new();
    let (c0, c1) = prototypes_var(&tape.constant(support.clone()), labels)?;
    Ok(PrototypePair {
        c0: c0.value(),
        c1: c1.value(),
    })
}

/// Attention output `[m×d]` for each row of `g`.
pub fn context_attend<S: Scalar>(g: &Tensor<S>, protos: &PrototypePair<S>) -> Result<Tensor<S>> {
    let tape = Tape::new();
    let out = context_attend_var(
        &tape,
        &tape.constant(g.clone()),
        &tape.constant(protos.c0.clone()),
        &tape.constant(protos.c1.clone()),
    )?;
    Ok(out.value())
}

/// `MLP([g; b])` row-wise.
pub fn project<S: Scalar>(
    g: &Tensor<S>,
    b: &Tensor<S>,
    weights: &ProjectionWeights<S>,
    train: Option<&mut dyn RngCore>,
) -> Result<Tensor<S>> {
    let tape = Tape::new();
    let mut binder = Binder::new(&tape);
    binder.set_trainable(false);
    let vars = weights.bind("", &mut binder);
    let input = tape.constant(g.clone()).concat_last(&tape.constant(b.clone()))?;
    Ok(vars.forward(&input, S::lit(PROJECTION_DROPOUT), train)?.value())
}
