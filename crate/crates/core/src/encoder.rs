//! GIN-style message passing with bond features, mean-pooled into one
//! generic embedding per molecule.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::chem::elements::MAX_ATOMIC_NUMBER;
use crate::chem::{BondDirection, BondType, Chirality, MolecularGraph};
use crate::error::{Error, Result};
use crate::nn::{glorot, join, Binder, Mlp2, Mlp2Vars, Parameters};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub epsilon_init: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 5,
            hidden_dim: 300,
            dropout: 0.5,
            epsilon_init: 0.0,
        }
    }
}

impl EncoderConfig {
    /// Small configuration used by tests and the synthetic benchmark.
    pub fn desk() -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("encoder layers and width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("encoder dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<S> {
    pub bond_type: Tensor<S>,
    pub bond_direction: Tensor<S>,
    pub mlp: Mlp2<S>,
    pub epsilon: Tensor<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<S> {
    pub atom: Tensor<S>,
    pub chirality: Tensor<S>,
    pub layers: Vec<EncoderLayer<S>>,
}

impl<S: Scalar> EncoderWeights<S> {
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let d = cfg.hidden_dim;
        let atom = glorot(usize::from(MAX_ATOMIC_NUMBER), d, rng);
        let chirality = glorot(Chirality::COUNT, d, rng);
        let layers = (0..cfg.num_layers)
            .map(|_| EncoderLayer {
                bond_type: glorot(BondType::COUNT, d, rng),
                bond_direction: glorot(BondDirection::COUNT, d, rng),
                mlp: Mlp2::init(d, 2 * d, d, rng),
                epsilon: Tensor::scalar(S::lit(cfg.epsilon_init)),
            })
            .collect();
        Self { atom, chirality, layers }
    }

    pub fn hidden_dim(&self) -> usize {
        self.atom.cols()
    }

    pub fn bind<'t>(&self, prefix: &str, b: &mut Binder<'t, S>) -> EncoderVars<'t, S> {
        EncoderVars {
            atom: b.bind(join(prefix, "atom"), &self.atom),
            chirality: b.bind(join(prefix, "chirality"), &self.chirality),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, layer)| {
                    let p = join(prefix, &format!("layer{l}"));
                    LayerVars {
                        bond_type: b.bind(join(&p, "bond_type"), &layer.bond_type),
                        bond_direction: b.bind(join(&p, "bond_direction"), &layer.bond_direction),
                        mlp: layer.mlp.bind(&join(&p, "mlp"), b),
                        epsilon: b.bind(join(&p, "epsilon"), &layer.epsilon),
                    }
                })
                .collect(),
        }
    }
}

impl<S: Scalar> Parameters<S> for EncoderWeights<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(join(prefix, "atom"), &self.atom);
        f(join(prefix, "chirality"), &self.chirality);
        for (l, layer) in self.layers.iter().enumerate() {
            let p = join(prefix, &format!("layer{l}"));
            f(join(&p, "bond_type"), &layer.bond_type);
            f(join(&p, "bond_direction"), &layer.bond_direction);
            layer.mlp.visit(&join(&p, "mlp"), f);
            f(join(&p, "epsilon"), &layer.epsilon);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(join(prefix, "atom"), &mut self.atom);
        f(join(prefix, "chirality"), &mut self.chirality);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &format!("layer{l}"));
            f(join(&p, "bond_type"), &mut layer.bond_type);
            f(join(&p, "bond_direction"), &mut layer.bond_direction);
            layer.mlp.visit_mut(&join(&p, "mlp"), f);
            f(join(&p, "epsilon"), &mut layer.epsilon);
        }
    }
}

struct LayerVars<'t, S: Scalar> {
    bond_type: Var<'t, S>,
    bond_direction: Var<'t, S>,
    mlp: Mlp2Vars<'t, S>,
    epsilon: Var<'t, S>,
}

pub struct EncoderVars<'t, S: Scalar> {
    atom: Var<'t, S>,
    chirality: Var<'t, S>,
    layers: Vec<LayerVars<'t, S>>,
}

/// Index arrays for a disjoint union of molecules.
struct Batch {
    atoms: Vec<usize>,
    chirality: Vec<usize>,
    src: Vec<usize>,
    dst: Vec<usize>,
    bond_type: Vec<usize>,
    bond_direction: Vec<usize>,
    owner: Vec<usize>,
    sizes: Vec<usize>,
}

impl Batch {
    fn new(graphs: &[&MolecularGraph]) -> Result<Self> {
        let mut b = Batch {
            atoms: Vec::new(),
            chirality: Vec::new(),
            src: Vec::new(),
            dst: Vec::new(),
            bond_type: Vec::new(),
            bond_direction: Vec::new(),
            owner: Vec::new(),
            sizes: Vec::new(),
        };
        for (gi, g) in graphs.iter().enumerate() {
            if g.num_atoms() == 0 {
                return Err(Error::contract("cannot encode a molecule with no atoms"));
            }
            let offset = b.atoms.len();
            for a in g.atoms() {
                b.atoms.push(usize::from(a.atomic_number) - 1);
                b.chirality.push(a.chirality.index());
                b.owner.push(gi);
            }
            for (u, v, feature) in g.directed_edges() {
                b.src.push(offset + u);
                b.dst.push(offset + v);
                b.bond_type.push(feature.bond_type.index());
                b.bond_direction.push(feature.direction.index());
            }
            b.sizes.push(g.num_atoms());
        }
        Ok(b)
    }
}

impl<'t, S: Scalar> EncoderVars<'t, S> {
    /// Generic embeddings `[B×d]`, one row per graph. Dropout follows every
    /// layer when `train` holds a generator.
    pub fn forward(
        &self,
        tape: &'t Tape<S>,
        graphs: &[&MolecularGraph],
        dropout: S,
        mut train: Option<&mut dyn RngCore>,
    ) -> Result<Var<'t, S>> {
        if graphs.is_empty() {
            return Err(Error::contract("encode needs at least one molecule"));
        }
        let batch = Batch::new(graphs)?;
        let n = batch.atoms.len();
        let mut h = self.atom.gather(&batch.atoms)?.add(&self.chirality.gather(&batch.chirality)?)?;
        let last = self.layers.len().saturating_sub(1);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = h.add(&h.scale_by(&layer.epsilon)?)?;
            if !batch.src.is_empty() {
                let bond = layer
                    .bond_type
                    .gather(&batch.bond_type)?
                    .add(&layer.bond_direction.gather(&batch.bond_direction)?)?;
                let messages = h.gather(&batch.src)?.add(&bond)?.relu()?;
                pre = pre.add(&messages.scatter_add_rows(&batch.dst, n)?)?;
            }
            h = layer.mlp.forward(&pre, S::zero(), None)?;
            if l != last {
                h = h.relu()?;
            }
            if let Some(rng) = train.as_deref_mut() {
                h = h.dropout(dropout, rng)?;
            }
        }
        let d = h.shape()[1];
        let mut inv = Vec::with_capacity(graphs.len() * d);
        for &size in &batch.sizes {
            let w = S::one() / S::from_usize(size).unwrap();
            inv.extend(std::iter::repeat(w).take(d));
        }
        let inv = tape.constant(Tensor::new(vec![graphs.len(), d], inv)?);
        h.scatter_add_rows(&batch.owner, graphs.len())?.mul(&inv)
    }
}

/// Generic embedding `[1×d]` of one molecule.
pub fn encode<S: Scalar>(
    graph: &MolecularGraph,
    cfg: &EncoderConfig,
    weights: &EncoderWeights<S>,
    train: Option<&mut dyn RngCore>,
) -> Result<Tensor<S>> {
    encode_batch(&[graph], cfg, weights, train)
}

/// Generic embeddings `[B×d]` without recording gradients.
pub fn encode_batch<S: Scalar>(
    graphs: &[&MolecularGraph],
    cfg: &EncoderConfig,
    weights: &EncoderWeights<S>,
    train: Option<&mut dyn RngCore>,
) -> Result<Tensor<S>> {
    let tape = Tape::new();
    let mut b = Binder::new(&tape);
    b.set_trainable(false);
    let vars = weights.bind("", &mut b);
    Ok(vars.forward(&tape, graphs, S::lit(cfg.dropout), train)?.value())
}
