use rand::Rng;

use super::config::TrainConfig;
use crate::embed::ProjectionWeights;
use crate::encoder::{EncoderVars, EncoderWeights};
use crate::nn::{join, Binder, Linear, LinearVars, Mlp2Vars, Parameters};
use crate::relgraph::{RelationVars, RelationWeights};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Parameters held fixed while adapting to a task: the encoder, the
/// adjacency MLP and the refinement matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Theta<S> {
    pub encoder: EncoderWeights<S>,
    pub relation: RelationWeights<S>,
}

/// Parameters adapted per task: the projection and the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Phi<S> {
    /// Absent under the `no_P` ablation.
    pub projection: Option<ProjectionWeights<S>>,
    pub classifier: Linear<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<S> {
    pub theta: Theta<S>,
    pub phi: Phi<S>,
}

impl<S: Scalar> ParameterStore<S> {
    pub fn init<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Self {
        let d = cfg.encoder.hidden_dim;
        let r = cfg.relation_dim();
        let encoder = EncoderWeights::init(&cfg.encoder, rng);
        let relation = RelationWeights::init(r, rng);
        let projection = (!cfg.ablation.no_p).then(|| ProjectionWeights::init(d, cfg.projection_dim, rng));
        let classifier = Linear::init(r, 2, rng);
        Self {
            theta: Theta { encoder, relation },
            phi: Phi { projection, classifier },
        }
    }
}

impl<S: Scalar> Parameters<S> for Theta<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.relation.visit(&join(prefix, "relation"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.relation.visit_mut(&join(prefix, "relation"), f);
    }
}

impl<S: Scalar> Parameters<S> for Phi<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        if let Some(p) = &self.projection {
            p.visit(&join(prefix, "projection"), f);
        }
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        if let Some(p) = &mut self.projection {
            p.visit_mut(&join(prefix, "projection"), f);
        }
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

pub const THETA: &str = "theta";
pub const PHI: &str = "phi";

impl<S: Scalar> Parameters<S> for ParameterStore<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        self.theta.visit(&join(prefix, THETA), f);
        self.phi.visit(&join(prefix, PHI), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.theta.visit_mut(&join(prefix, THETA), f);
        self.phi.visit_mut(&join(prefix, PHI), f);
    }
}

/// Every parameter lifted onto one tape.
pub(crate) struct BoundModel<'t, S: Scalar> {
    pub encoder: EncoderVars<'t, S>,
    pub relation: RelationVars<'t, S>,
    pub projection: Option<Mlp2Vars<'t, S>>,
    pub classifier: LinearVars<'t, S>,
}

impl<'t, S: Scalar> BoundModel<'t, S> {
    pub fn bind(theta: &Theta<S>, phi: &Phi<S>, b: &mut Binder<'t, S>, train_theta: bool, train_phi: bool) -> Self {
        b.set_trainable(train_theta);
        let encoder = theta.encoder.bind(&join(THETA, "encoder"), b);
        let relation = theta.relation.bind(&join(THETA, "relation"), b);
        b.set_trainable(train_phi);
        let projection = phi.projection.as_ref().map(|p| p.bind(&join(PHI, "projection"), b));
        let classifier = phi.classifier.bind(&join(PHI, "classifier"), b);
        Self {
            encoder,
            relation,
            projection,
            classifier,
        }
    }
}
