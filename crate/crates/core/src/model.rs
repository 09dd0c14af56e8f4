//! Common interface over the scoring models.

use crate::baselines::{DistMult, TransE};
use crate::config::{ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};
use crate::params::ParamStore;
use crate::patreformer::PatReFormer;
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, Tensor, Var};
use crate::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

pub(crate) fn check_ids(heads: &[EntityId], rels: &[RelationId], entities: usize, relations: usize) -> Result<()> {
    if heads.len() != rels.len() || heads.is_empty() {
        return Err(Error::Contract(format!(
            "query batch has {} heads and {} relations",
            heads.len(),
            rels.len()
        )));
    }
    if let Some(&h) = heads.iter().find(|&&h| h >= entities) {
        return Err(Error::Lookup { kind: "entity", id: h, size: entities });
    }
    if let Some(&r) = rels.iter().find(|&&r| r >= relations) {
        return Err(Error::Lookup { kind: "relation", id: r, size: relations });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub enum AnyModel<T> {
    PatReFormer(PatReFormer<T>),
    TransE(TransE<T>),
    DistMult(DistMult<T>),
}

macro_rules! each {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            AnyModel::PatReFormer($m) => $body,
            AnyModel::TransE($m) => $body,
            AnyModel::DistMult($m) => $body,
        }
    };
}

impl<T: Scalar> AnyModel<T> {
    /// Builds and initializes the model selected by `config.model`.
    /// `num_relation_ids` counts reverse relations too.
    pub fn build(config: &ModelConfig, num_entities: usize, num_relation_ids: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(match config.model {
            ModelKind::PatReFormer => AnyModel::PatReFormer(PatReFormer::new(config, num_entities, num_relation_ids, rng)?),
            ModelKind::TransE => AnyModel::TransE(TransE::new(config, num_entities, num_relation_ids, rng)?),
            ModelKind::DistMult => AnyModel::DistMult(DistMult::new(config, num_entities, num_relation_ids, rng)?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        each!(self, m => m.config())
    }

    pub fn num_entities(&self) -> usize {
        each!(self, m => m.num_entities())
    }

    pub fn num_relation_ids(&self) -> usize {
        each!(self, m => m.num_relation_ids())
    }

    pub fn params(&self) -> &ParamStore<T> {
        each!(self, m => m.params())
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        each!(self, m => m.params_mut())
    }

    pub fn entity_embedding(&self) -> ParamId {
        each!(self, m => m.entity_embedding())
    }

    /// Pre-sigmoid scores `[b × |E|]` of every entity for each `(h, r)` query.
    pub fn logits(
        &self,
        g: &Graph<T>,
        heads: &[EntityId],
        rels: &[RelationId],
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        match self {
            AnyModel::PatReFormer(m) => m.logits(g, heads, rels, mode, rng),
            AnyModel::TransE(m) => m.logits(g, heads, rels),
            AnyModel::DistMult(m) => m.logits(g, heads, rels),
        }
    }

    /// Eval-mode logits as a plain tensor.
    pub fn score_logits(&self, heads: &[EntityId], rels: &[RelationId]) -> Result<Tensor<T>> {
        let g = Graph::new();
        // Eval mode never draws from the generator.
        let mut rng = crate::seeded_rng(0);
        let l = self.logits(&g, heads, rels, Mode::Eval, &mut rng)?;
        Ok(g.value(l))
    }

    /// Eval-mode probabilities `[b × |E|]`.
    pub fn score_all(&self, heads: &[EntityId], rels: &[RelationId]) -> Result<Tensor<T>> {
        let g = Graph::new();
        let mut rng = crate::seeded_rng(0);
        let l = self.logits(&g, heads, rels, Mode::Eval, &mut rng)?;
        Ok(g.value(g.sigmoid(l)?))
    }
}
