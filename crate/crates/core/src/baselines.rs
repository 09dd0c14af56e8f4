//! TransE and DistMult scorers sharing the 1-vs-all training path.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};
use crate::model::check_ids;
use crate::params::{glorot_uniform, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Norm, ParamId, Var};
use crate::SeededRng;

/// Embedding tables of a translational or bilinear baseline. Relations
/// use the entity width.
#[derive(Clone, Debug)]
struct Tables<T> {
    config: ModelConfig,
    num_entities: usize,
    num_relation_ids: usize,
    store: ParamStore<T>,
    entity_emb: ParamId,
    relation_emb: ParamId,
}

impl<T: Scalar> Tables<T> {
    fn new(config: &ModelConfig, num_entities: usize, num_relation_ids: usize, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        if num_entities == 0 || num_relation_ids == 0 {
            return Err(Error::Config("model needs at least one entity and relation".into()));
        }
        let d = config.entity_dim;
        let mut store = ParamStore::new();
        let entity_emb = store.add("entity_emb", glorot_uniform(num_entities, d, &[num_entities, d], rng), true);
        let relation_emb = store.add(
            "relation_emb",
            glorot_uniform(num_relation_ids, d, &[num_relation_ids, d], rng),
            true,
        );
        Ok(Tables {
            config: config.clone(),
            num_entities,
            num_relation_ids,
            store,
            entity_emb,
            relation_emb,
        })
    }

    fn lookup(&self, g: &Graph<T>, heads: &[EntityId], rels: &[RelationId]) -> Result<(Var, Var, Var)> {
        check_ids(heads, rels, self.num_entities, self.num_relation_ids)?;
        let table = self.store.leaf(g, self.entity_emb);
        let h = g.gather(table, heads)?;
        let r = g.gather(self.store.leaf(g, self.relation_emb), rels)?;
        Ok((h, r, table))
    }
}

macro_rules! accessors {
    ($name:ident) => {
        impl<T: Scalar> $name<T> {
            pub fn config(&self) -> &ModelConfig {
                &self.0.config
            }

            pub fn num_entities(&self) -> usize {
                self.0.num_entities
            }

            pub fn num_relation_ids(&self) -> usize {
                self.0.num_relation_ids
            }

            pub fn params(&self) -> &ParamStore<T> {
                &self.0.store
            }

            pub fn params_mut(&mut self) -> &mut ParamStore<T> {
                &mut self.0.store
            }

            pub fn entity_embedding(&self) -> ParamId {
                self.0.entity_emb
            }

            pub fn relation_embedding(&self) -> ParamId {
                self.0.relation_emb
            }
        }
    };
}

/// `γ − ‖h + r − t‖`.
#[derive(Clone, Debug)]
pub struct TransE<T>(Tables<T>);

accessors!(TransE);

impl<T: Scalar> TransE<T> {
    pub fn new(config: &ModelConfig, num_entities: usize, num_relation_ids: usize, rng: &mut SeededRng) -> Result<Self> {
        Tables::new(config, num_entities, num_relation_ids, rng).map(TransE)
    }

    pub fn logits(&self, g: &Graph<T>, heads: &[EntityId], rels: &[RelationId]) -> Result<Var> {
        let (h, r, table) = self.0.lookup(g, heads, rels)?;
        let dist = g.distance(g.add(h, r)?, table, self.0.config.transe_norm)?;
        g.affine(dist, -1.0, self.0.config.transe_margin)
    }

    pub fn norm(&self) -> Norm {
        self.0.config.transe_norm
    }
}

/// `⟨h, r, t⟩ = (h ⊙ r) · t`.
#[derive(Clone, Debug)]
pub struct DistMult<T>(Tables<T>);

accessors!(DistMult);

impl<T: Scalar> DistMult<T> {
    pub fn new(config: &ModelConfig, num_entities: usize, num_relation_ids: usize, rng: &mut SeededRng) -> Result<Self> {
        Tables::new(config, num_entities, num_relation_ids, rng).map(DistMult)
    }

    pub fn logits(&self, g: &Graph<T>, heads: &[EntityId], rels: &[RelationId]) -> Result<Var> {
        let (h, r, table) = self.0.lookup(g, heads, rels)?;
        g.matmul_ext(g.mul(h, r)?, table, true)
    }
}
