//! Parameter containers shared by the model components, and the glue that
//! lifts them onto a tape under stable names.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, NamedTensors, Tape, Tensor, Var};

/// Anything that owns named trainable tensors.
pub trait Parameters<S: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>));

    fn named(&self, prefix: &str) -> NamedTensors<S> {
        let mut out = NamedTensors::new();
        self.visit(prefix, &mut |name, t| {
            out.insert(name, t.clone());
        });
        out
    }

    /// Overwrites every tensor from `source`, which must hold each name with
    /// a matching shape.
    fn load_named(&mut self, prefix: &str, source: &NamedTensors<S>) -> Result<()> {
        let mut failure = None;
        self.visit_mut(prefix, &mut |name, t| {
            if failure.is_some() {
                return;
            }
            match source.get(&name) {
                Some(v) if v.shape() == t.shape() => *t = v.clone(),
                Some(v) => {
                    failure = Some(Error::Shape {
                        op: "load_named",
                        left: t.shape().to_vec(),
                        right: v.shape().to_vec(),
                    })
                }
                None => failure = Some(Error::contract(format!("missing tensor {name}"))),
            }
        });
        failure.map_or(Ok(()), Err)
    }

    fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Glorot-uniform matrix.
pub fn glorot<S: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<S> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| S::lit(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_parts(vec![rows, cols], data)
}

/// Lifts parameters onto a tape and remembers which vars carry gradients.
pub struct Binder<'t, S: Scalar> {
    tape: &'t Tape<S>,
    trainable: bool,
    bound: Vec<(String, Var<'t, S>)>,
}

impl<'t, S: Scalar> Binder<'t, S> {
    pub fn new(tape: &'t Tape<S>) -> Self {
        Self {
            tape,
            trainable: true,
            bound: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    /// Tensors bound while this is off enter the tape as constants.
    pub fn set_trainable(&mut self, on: bool) {
        self.trainable = on;
    }

    pub fn bind(&mut self, name: String, value: &Tensor<S>) -> Var<'t, S> {
        if self.trainable {
            let v = self.tape.param(value);
            self.bound.push((name, v));
            v
        } else {
            self.tape.constant(value.clone())
        }
    }

    /// Gradients of every trainable var, keyed by parameter name.
    pub fn collect(&self, grads: &Gradients<S>) -> NamedTensors<S> {
        self.bound
            .iter()
            .map(|(name, v)| {
                let g = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// `x · W + b` with `W: [in×out]`, `b: [1×out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: glorot(input, output, rng),
            bias: Tensor::zeros(&[1, output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[1, output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind<'t>(&self, prefix: &str, b: &mut Binder<'t, S>) -> LinearVars<'t, S> {
        LinearVars {
            weight: b.bind(join(prefix, "weight"), &self.weight),
            bias: b.bind(join(prefix, "bias"), &self.bias),
        }
    }
}

impl<S: Scalar> Parameters<S> for Linear<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Copy)]
pub struct LinearVars<'t, S: Scalar> {
    pub weight: Var<'t, S>,
    pub bias: Var<'t, S>,
}

impl<'t, S: Scalar> LinearVars<'t, S> {
    pub fn forward(&self, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        x.affine(&self.weight, &self.bias)
    }
}

/// Two affine maps with ReLU between.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp2<S> {
    pub first: Linear<S>,
    pub second: Linear<S>,
}

impl<S: Scalar> Mlp2<S> {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            first: Linear::init(input, hidden, rng),
            second: Linear::init(hidden, output, rng),
        }
    }

    pub fn bind<'t>(&self, prefix: &str, b: &mut Binder<'t, S>) -> Mlp2Vars<'t, S> {
        Mlp2Vars {
            first: self.first.bind(&join(prefix, "0"), b),
            second: self.second.bind(&join(prefix, "1"), b),
        }
    }
}

impl<S: Scalar> Parameters<S> for Mlp2<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        self.first.visit(&join(prefix, "0"), f);
        self.second.visit(&join(prefix, "1"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.first.visit_mut(&join(prefix, "0"), f);
        self.second.visit_mut(&join(prefix, "1"), f);
    }
}

#[derive(Clone, Copy)]
pub struct Mlp2Vars<'t, S: Scalar> {
    pub first: LinearVars<'t, S>,
    pub second: LinearVars<'t, S>,
}

impl<'t, S: Scalar> Mlp2Vars<'t, S> {
    /// `second(dropout(relu(first(x))))`; dropout only when `train` holds a
    /// generator.
    pub fn forward(&self, x: &Var<'t, S>, rate: S, train: Option<&mut dyn RngCore>) -> Result<Var<'t, S>> {
        let mut h = self.first.forward(x)?.relu()?;
        if let Some(rng) = train {
            h = h.dropout(rate, rng)?;
        }
        self.second.forward(&h)
    }
}
