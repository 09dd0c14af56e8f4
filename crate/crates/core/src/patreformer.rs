//! Patch-refinement transformer: segmentation, two-tower cross-attention
//! encoder, and the similarity scorer.
//!
//! All forward code works on batches. A tower state for `b` queries with
//! `k` patches is a `[b·k × d]` matrix, patch-major within each query.

use rand::Rng;

use crate::config::{AttentionScale, AttentionVariant, ModelConfig, PositionalEncoding, UpdateOrder, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};
use crate::model::{check_ids, Mode};
use crate::params::{glorot_uniform, ParamStore};
use crate::scalar::Scalar;
use crate::segmentation::Segmenter;
use crate::tensor::{Graph, ParamId, Tensor, Var};
use crate::SeededRng;

/// Projections of one multi-head attention module. Each matrix is `d × d`;
/// head `h` owns columns `h·d_s .. (h+1)·d_s` of `wq`, `wk` and `wv`.
#[derive(Clone, Debug)]
pub struct MhaParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Clone, Debug)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

/// Attention + FFN sublayers, each wrapped in residual and layer norm.
#[derive(Clone, Debug)]
pub struct Block {
    pub mha: MhaParams,
    pub ln1: LayerNormParams,
    pub ffn: FfnParams,
    pub ln2: LayerNormParams,
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    /// Entity tower (or the shared block under full self-attention).
    pub entity: Block,
    pub relation: Option<Block>,
}

#[derive(Clone, Debug)]
enum PeSource {
    Trainable(ParamId),
    Sinusoidal,
}

/// Static settings threaded through the forward functions.
#[derive(Clone, Copy, Debug)]
pub struct AttentionSettings {
    pub heads: usize,
    pub scale: f64,
    pub dropout: f64,
}

impl AttentionSettings {
    pub fn from_config(c: &ModelConfig) -> Self {
        let denom = match c.attention_scale {
            AttentionScale::Model => c.patch_dim,
            AttentionScale::Head => c.patch_dim / c.heads.max(1),
        };
        AttentionSettings {
            heads: c.heads,
            scale: 1.0 / (denom as f64).sqrt(),
            dropout: c.p2,
        }
    }
}

fn init_block<T: Scalar, R: Rng + ?Sized>(
    name: &str,
    d: usize,
    d_f: usize,
    store: &mut ParamStore<T>,
    rng: &mut R,
) -> Block {
    let mut sq = |suffix: &str, store: &mut ParamStore<T>| {
        store.add(format!("{name}.{suffix}"), glorot_uniform(d, d, &[d, d], rng), true)
    };
    let mha = MhaParams {
        wq: sq("wq", store),
        wk: sq("wk", store),
        wv: sq("wv", store),
        wo: sq("wo", store),
    };
    let ln = |tag: &str, store: &mut ParamStore<T>| LayerNormParams {
        gamma: store.add(format!("{name}.{tag}.gamma"), Tensor::ones(&[d]), true),
        beta: store.add(format!("{name}.{tag}.beta"), Tensor::zeros(&[d]), true),
    };
    let ln1 = ln("ln1", store);
    let ffn = FfnParams {
        w1: store.add(format!("{name}.ffn.w1"), glorot_uniform(d, d_f, &[d, d_f], rng), true),
        b1: store.add(format!("{name}.ffn.b1"), Tensor::zeros(&[d_f]), true),
        w2: store.add(format!("{name}.ffn.w2"), glorot_uniform(d_f, d, &[d_f, d], rng), true),
        b2: store.add(format!("{name}.ffn.b2"), Tensor::zeros(&[d]), true),
    };
    let ln2 = ln("ln2", store);
    Block { mha, ln1, ffn, ln2 }
}

/// Multi-head attention on a batch of `b` queries: `q_in` is `[b·n × d]`,
/// `kv_in` is `[b·m × d]`, result `[b·n × d]`. Each query's rows only attend
/// to the key rows of the same query.
#[allow(clippy::too_many_arguments)]
pub fn mha<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    p: &MhaParams,
    q_in: Var,
    kv_in: Var,
    batch: usize,
    att: AttentionSettings,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<Var> {
    let (qs, ks) = (g.shape(q_in), g.shape(kv_in));
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] || batch == 0 || qs[0] % batch != 0 || ks[0] % batch != 0 {
        return Err(Error::dim("mha", &qs, &ks));
    }
    let d = qs[1];
    let h = att.heads;
    if h == 0 || d % h != 0 {
        return Err(Error::Config(format!("{h} heads do not divide width {d}")));
    }
    let ds = d / h;
    let (n, m) = (qs[0] / batch, ks[0] / batch);

    let split = |x: Var, len: usize| -> Result<Var> {
        let x = g.reshape(x, &[batch, len, h, ds])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[batch * h, len, ds])
    };
    let q = split(g.matmul(q_in, store.leaf(g, p.wq))?, n)?;
    let k = split(g.matmul(kv_in, store.leaf(g, p.wk))?, m)?;
    let v = split(g.matmul(kv_in, store.leaf(g, p.wv))?, m)?;

    let logits = g.scale(g.bmm(q, k, true)?, att.scale)?;
    let weights = g.softmax(logits)?;
    let weights = g.dropout(weights, att.dropout, mode.is_train(), rng)?;
    let heads = g.bmm(weights, v, false)?;

    let merged = g.reshape(heads, &[batch, h, n, ds])?;
    let merged = g.permute(merged, &[0, 2, 1, 3])?;
    let merged = g.reshape(merged, &[batch * n, d])?;
    g.matmul(merged, store.leaf(g, p.wo))
}

fn layer_norm<T: Scalar>(g: &Graph<T>, store: &ParamStore<T>, p: &LayerNormParams, x: Var) -> Result<Var> {
    g.layer_norm(x, store.leaf(g, p.gamma), store.leaf(g, p.beta), LAYER_NORM_EPS)
}

/// `ReLU(x W1 + b1) W2 + b2`.
pub fn ffn<T: Scalar>(g: &Graph<T>, store: &ParamStore<T>, p: &FfnParams, x: Var) -> Result<Var> {
    let hdn = g.add_bcast(g.matmul(x, store.leaf(g, p.w1))?, store.leaf(g, p.b1))?;
    let hdn = g.relu(hdn)?;
    g.add_bcast(g.matmul(hdn, store.leaf(g, p.w2))?, store.leaf(g, p.b2))
}

/// One tower update: `x ← LN(MHA(x, kv, kv) + x)`, then `x ← LN(FFN(x) + x)`.
#[allow(clippy::too_many_arguments)]
pub fn block_forward<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    blk: &Block,
    x: Var,
    kv: Var,
    batch: usize,
    att: AttentionSettings,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<Var> {
    let a = mha(g, store, &blk.mha, x, kv, batch, att, mode, rng)?;
    let x = layer_norm(g, store, &blk.ln1, g.add(a, x)?)?;
    let f = ffn(g, store, &blk.ffn, x)?;
    let f = g.dropout(f, att.dropout, mode.is_train(), rng)?;
    layer_norm(g, store, &blk.ln2, g.add(f, x)?)
}

/// Fixed sinusoidal table `[k × d]`: even columns `sin(pos / 10000^(2i/d))`,
/// odd columns the matching cosine.
pub fn sinusoidal_table<T: Scalar>(k: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[k, d], |idx| {
        let (pos, col) = (idx / d, idx % d);
        let pair = (col / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        T::of(if col % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Adds a positional table to a `[k × d]` patch matrix (identity for
/// [`PositionalEncoding::None`]).
pub fn positional_encoding<T: Scalar>(
    patches: &Tensor<T>,
    variant: PositionalEncoding,
    table: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let table = match variant {
        PositionalEncoding::None => return Ok(patches.clone()),
        PositionalEncoding::Trainable => table
            .cloned()
            .ok_or_else(|| Error::Config("trainable positional encoding needs a table".into()))?,
        PositionalEncoding::Sinusoidal => {
            let s = patches.shape();
            if s.len() != 2 {
                return Err(Error::dim("positional_encoding", s, &[]));
            }
            sinusoidal_table(s[0], s[1])
        }
    };
    if table.shape() != patches.shape() {
        return Err(Error::dim("positional_encoding", patches.shape(), table.shape()));
    }
    let g = Graph::new();
    let out = g.add(g.constant(patches.clone()), g.constant(table))?;
    Ok(g.value(out))
}

#[derive(Clone, Debug)]
pub struct PatReFormer<T> {
    config: ModelConfig,
    num_entities: usize,
    num_relation_ids: usize,
    store: ParamStore<T>,
    entity_emb: ParamId,
    relation_emb: ParamId,
    seg_entity: Segmenter,
    seg_relation: Segmenter,
    pe_entity: Option<PeSource>,
    pe_relation: Option<PeSource>,
    layers: Vec<EncoderLayer>,
    w_out: ParamId,
    b_out: ParamId,
}

impl<T: Scalar> PatReFormer<T> {
    pub fn new(config: &ModelConfig, num_entities: usize, num_relation_ids: usize, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        if num_entities == 0 || num_relation_ids == 0 {
            return Err(Error::Config("model needs at least one entity and relation".into()));
        }
        let c = config;
        let d = c.patch_dim;
        let mut store = ParamStore::new();
        let entity_emb = store.add(
            "entity_emb",
            glorot_uniform(num_entities, c.entity_dim, &[num_entities, c.entity_dim], rng),
            true,
        );
        let relation_emb = store.add(
            "relation_emb",
            glorot_uniform(num_relation_ids, c.relation_dim, &[num_relation_ids, c.relation_dim], rng),
            true,
        );
        let seg_entity = Segmenter::build(c.segmentation, c.entity_dim, d, "entity", &mut store, rng)?;
        let seg_relation = Segmenter::build(c.segmentation, c.relation_dim, d, "relation", &mut store, rng)?;

        let mut pe = |name: &str, k: usize, store: &mut ParamStore<T>| match c.positional_encoding {
            PositionalEncoding::None => None,
            PositionalEncoding::Sinusoidal => Some(PeSource::Sinusoidal),
            PositionalEncoding::Trainable => Some(PeSource::Trainable(store.add(
                format!("pe.{name}"),
                glorot_uniform(k, d, &[k, d], rng),
                true,
            ))),
        };
        let pe_entity = pe("entity", seg_entity.num_patches(), &mut store);
        let pe_relation = pe("relation", seg_relation.num_patches(), &mut store);

        let layers = (0..c.layers)
            .map(|i| match c.attention {
                AttentionVariant::FullSelf => EncoderLayer {
                    entity: init_block(&format!("layer{i}.joint"), d, c.ffn_dim, &mut store, rng),
                    relation: None,
                },
                _ => EncoderLayer {
                    entity: init_block(&format!("layer{i}.entity"), d, c.ffn_dim, &mut store, rng),
                    relation: Some(init_block(&format!("layer{i}.relation"), d, c.ffn_dim, &mut store, rng)),
                },
            })
            .collect();

        let flat = seg_entity.flat_width() + seg_relation.flat_width();
        let w_out = store.add("scorer.w", glorot_uniform(flat, c.entity_dim, &[flat, c.entity_dim], rng), true);
        let b_out = store.add("scorer.b", Tensor::zeros(&[c.entity_dim]), true);

        Ok(PatReFormer {
            config: c.clone(),
            num_entities,
            num_relation_ids,
            store,
            entity_emb,
            relation_emb,
            seg_entity,
            seg_relation,
            pe_entity,
            pe_relation,
            layers,
            w_out,
            b_out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relation_ids(&self) -> usize {
        self.num_relation_ids
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    pub fn entity_embedding(&self) -> ParamId {
        self.entity_emb
    }

    pub fn relation_embedding(&self) -> ParamId {
        self.relation_emb
    }

    pub fn scorer(&self) -> (ParamId, ParamId) {
        (self.w_out, self.b_out)
    }

    pub fn segmenters(&self) -> (&Segmenter, &Segmenter) {
        (&self.seg_entity, &self.seg_relation)
    }

    pub fn patch_counts(&self) -> (usize, usize) {
        (self.seg_entity.num_patches(), self.seg_relation.num_patches())
    }

    fn add_pe(&self, g: &Graph<T>, x: Var, batch: usize, k: usize, pe: &Option<PeSource>) -> Result<Var> {
        let table = match pe {
            None => return Ok(x),
            Some(PeSource::Trainable(id)) => self.store.leaf(g, *id),
            Some(PeSource::Sinusoidal) => g.constant(sinusoidal_table(k, self.config.patch_dim)),
        };
        let x3 = g.reshape(x, &[batch, k, self.config.patch_dim])?;
        let y = g.add_bcast(x3, table)?;
        g.reshape(y, &[batch * k, self.config.patch_dim])
    }

    /// Segments, adds positional encodings and applies patch dropout:
    /// returns `[b·k_e × d]` and `[b·k_r × d]` patch matrices.
    pub fn patches(
        &self,
        g: &Graph<T>,
        heads: &[EntityId],
        rels: &[RelationId],
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Var, Var)> {
        check_ids(heads, rels, self.num_entities, self.num_relation_ids)?;
        let b = heads.len();
        let (ke, kr) = self.patch_counts();
        let e = g.gather(self.store.leaf(g, self.entity_emb), heads)?;
        let r = g.gather(self.store.leaf(g, self.relation_emb), rels)?;
        let pe = self.seg_entity.apply(g, &self.store, e)?;
        let pr = self.seg_relation.apply(g, &self.store, r)?;
        let pe = self.add_pe(g, pe, b, ke, &self.pe_entity)?;
        let pr = self.add_pe(g, pr, b, kr, &self.pe_relation)?;
        let pe = g.dropout(pe, self.config.p1, mode.is_train(), rng)?;
        let pr = g.dropout(pr, self.config.p1, mode.is_train(), rng)?;
        Ok((pe, pr))
    }

    /// Runs the configured encoder over `[b·k_e × d]` / `[b·k_r × d]` patch
    /// matrices and returns the refined towers in the same layout.
    pub fn encode(
        &self,
        g: &Graph<T>,
        entity_patches: Var,
        relation_patches: Var,
        batch: usize,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Var, Var)> {
        let att = AttentionSettings::from_config(&self.config);
        let d = self.config.patch_dim;
        let (es, rs) = (g.shape(entity_patches), g.shape(relation_patches));
        if es.len() != 2 || rs.len() != 2 || es[1] != d || rs[1] != d || es[0] % batch != 0 || rs[0] % batch != 0 {
            return Err(Error::dim("encoder", &es, &rs));
        }
        let (ke, kr) = (es[0] / batch, rs[0] / batch);
        let (mut he, mut hr) = (entity_patches, relation_patches);

        for layer in &self.layers {
            match (self.config.attention, &layer.relation) {
                (AttentionVariant::FullSelf, _) => {
                    let je = g.reshape(he, &[batch, ke, d])?;
                    let jr = g.reshape(hr, &[batch, kr, d])?;
                    let joint = g.reshape(g.concat(&[je, jr], 1)?, &[batch * (ke + kr), d])?;
                    let joint = block_forward(g, &self.store, &layer.entity, joint, joint, batch, att, mode, rng)?;
                    let joint = g.reshape(joint, &[batch, ke + kr, d])?;
                    he = g.reshape(g.slice(joint, 1, 0, ke)?, &[batch * ke, d])?;
                    hr = g.reshape(g.slice(joint, 1, ke, kr)?, &[batch * kr, d])?;
                }
                (AttentionVariant::SeparateSelf, Some(rel)) => {
                    he = block_forward(g, &self.store, &layer.entity, he, he, batch, att, mode, rng)?;
                    hr = block_forward(g, &self.store, rel, hr, hr, batch, att, mode, rng)?;
                }
                (AttentionVariant::Cross, Some(rel)) => {
                    let prev_e = he;
                    he = block_forward(g, &self.store, &layer.entity, he, hr, batch, att, mode, rng)?;
                    let kv = match self.config.update_order {
                        UpdateOrder::Sequential => he,
                        UpdateOrder::Simultaneous => prev_e,
                    };
                    hr = block_forward(g, &self.store, rel, hr, kv, batch, att, mode, rng)?;
                }
                _ => return Err(Error::Contract("encoder layer lacks a relation tower".into())),
            }
        }
        Ok((he, hr))
    }

    /// Query representation `e'` `[b × d_e]` from refined towers.
    pub fn project(&self, g: &Graph<T>, xe: Var, xr: Var, batch: usize, mode: Mode, rng: &mut SeededRng) -> Result<Var> {
        let fe = g.reshape(xe, &[batch, self.seg_entity.flat_width()])?;
        let fr = g.reshape(xr, &[batch, self.seg_relation.flat_width()])?;
        let joint = g.concat(&[fe, fr], 1)?;
        let joint = g.dropout(joint, self.config.p3, mode.is_train(), rng)?;
        g.add_bcast(
            g.matmul(joint, self.store.leaf(g, self.w_out))?,
            self.store.leaf(g, self.b_out),
        )
    }

    /// Pre-sigmoid scores of every entity as the answer: `[b × |E|]`.
    pub fn logits(
        &self,
        g: &Graph<T>,
        heads: &[EntityId],
        rels: &[RelationId],
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let b = heads.len();
        let (pe, pr) = self.patches(g, heads, rels, mode, rng)?;
        let (xe, xr) = self.encode(g, pe, pr, b, mode, rng)?;
        let q = self.project(g, xe, xr, b, mode, rng)?;
        g.matmul_ext(q, self.store.leaf(g, self.entity_emb), true)
    }

    /// Single-query encoder on explicit patch matrices `[k_e × d]`, `[k_r × d]`.
    pub fn encoder_forward(
        &self,
        entity_patches: &Tensor<T>,
        relation_patches: &Tensor<T>,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let g = Graph::new();
        let e = g.constant(entity_patches.clone());
        let r = g.constant(relation_patches.clone());
        let (xe, xr) = self.encode(&g, e, r, 1, mode, rng)?;
        Ok((g.value(xe), g.value(xr)))
    }

    /// Probabilities `σ(e' · E_t)` for every entity `t`.
    pub fn score_against_all(&self, h: EntityId, r: RelationId, mode: Mode, rng: &mut SeededRng) -> Result<Tensor<T>> {
        let g = Graph::new();
        let l = self.logits(&g, &[h], &[r], mode, rng)?;
        let s = g.sigmoid(l)?;
        g.value(s).reshape(&[self.num_entities])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn tiny(attention: AttentionVariant, order: UpdateOrder, pe: PositionalEncoding) -> PatReFormer<f64> {
        let c = ModelConfig {
            entity_dim: 8,
            relation_dim: 12,
            patch_dim: 4,
            heads: 2,
            layers: 1,
            ffn_dim: 6,
            attention,
            update_order: order,
            positional_encoding: pe,
            ..ModelConfig::default()
        };
        PatReFormer::new(&c, 5, 4, &mut seeded_rng(3)).unwrap()
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = seeded_rng(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_layers_is_identity() {
        for att in [AttentionVariant::Cross, AttentionVariant::FullSelf, AttentionVariant::SeparateSelf] {
            let c = ModelConfig {
                entity_dim: 8,
                relation_dim: 12,
                patch_dim: 4,
                heads: 2,
                layers: 0,
                attention: att,
                ..ModelConfig::default()
            };
            let m = PatReFormer::<f64>::new(&c, 3, 2, &mut seeded_rng(0)).unwrap();
            let (e, r) = (rand_tensor(&[2, 4], 1), rand_tensor(&[3, 4], 2));
            let (xe, xr) = m.encoder_forward(&e, &r, Mode::Eval, &mut seeded_rng(0)).unwrap();
            assert_eq!((xe, xr), (e, r));
        }
    }

    #[test]
    fn sequential_and_simultaneous_share_entity_tower() {
        let (e, r) = (rand_tensor(&[2, 4], 5), rand_tensor(&[3, 4], 6));
        let seq = tiny(AttentionVariant::Cross, UpdateOrder::Sequential, PositionalEncoding::None);
        let sim = tiny(AttentionVariant::Cross, UpdateOrder::Simultaneous, PositionalEncoding::None);
        let (ae, ar) = seq.encoder_forward(&e, &r, Mode::Eval, &mut seeded_rng(0)).unwrap();
        let (be, br) = sim.encoder_forward(&e, &r, Mode::Eval, &mut seeded_rng(0)).unwrap();
        assert_eq!(ae, be);
        assert!(ar.max_abs_diff(&br).unwrap() > 1e-6);
    }

    #[test]
    fn relation_row_permutation_leaves_entity_tower_unchanged() {
        let m = tiny(AttentionVariant::Cross, UpdateOrder::Simultaneous, PositionalEncoding::None);
        let (e, r) = (rand_tensor(&[2, 4], 7), rand_tensor(&[3, 4], 8));
        let perm = [2usize, 0, 1];
        let rp = Tensor::from_fn(&[3, 4], |i| r.at(&[perm[i / 4], i % 4]));
        let (xe, _) = m.encoder_forward(&e, &r, Mode::Eval, &mut seeded_rng(0)).unwrap();
        let (xe_p, _) = m.encoder_forward(&e, &rp, Mode::Eval, &mut seeded_rng(0)).unwrap();
        assert!(xe.max_abs_diff(&xe_p).unwrap() < 1e-12);
    }

    #[test]
    fn separate_self_attention_has_no_cross_flow() {
        let m = tiny(AttentionVariant::SeparateSelf, UpdateOrder::Sequential, PositionalEncoding::None);
        let (e, r) = (rand_tensor(&[2, 4], 9), rand_tensor(&[3, 4], 10));
        let (xe, _) = m.encoder_forward(&e, &r, Mode::Eval, &mut seeded_rng(0)).unwrap();
        let (xe0, _) = m.encoder_forward(&e, &Tensor::zeros(&[3, 4]), Mode::Eval, &mut seeded_rng(0)).unwrap();
        assert_eq!(xe, xe0);
    }

    #[test]
    fn cross_attention_over_zero_relation_patches_still_changes_entities() {
        let m = tiny(AttentionVariant::Cross, UpdateOrder::Sequential, PositionalEncoding::None);
        let e = rand_tensor(&[2, 4], 11);
        let (xe, _) = m.encoder_forward(&e, &Tensor::zeros(&[3, 4]), Mode::Eval, &mut seeded_rng(0)).unwrap();
        assert!(xe.max_abs_diff(&e).unwrap() > 1e-6);
    }

    #[test]
    fn positional_encoding_variants() {
        let p = rand_tensor(&[3, 4], 12);
        assert_eq!(positional_encoding(&p, PositionalEncoding::None, None).unwrap(), p);
        let zeros = Tensor::zeros(&[3, 4]);
        assert_eq!(positional_encoding(&p, PositionalEncoding::Trainable, Some(&zeros)).unwrap(), p);
        let f = positional_encoding(&Tensor::<f64>::zeros(&[3, 4]), PositionalEncoding::Sinusoidal, None).unwrap();
        assert_eq!(&f.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!(positional_encoding(&p, PositionalEncoding::Trainable, Some(&Tensor::zeros(&[2, 4]))).is_err());
    }

    #[test]
    fn zero_scorer_gives_half_everywhere() {
        let mut m = tiny(AttentionVariant::Cross, UpdateOrder::Sequential, PositionalEncoding::None);
        let (w, b) = m.scorer();
        let ws = m.params().get(w).shape().to_vec();
        *m.params_mut().value_mut(w) = Tensor::zeros(&ws);
        *m.params_mut().value_mut(b) = Tensor::zeros(&[8]);
        let s = m.score_against_all(1, 2, Mode::Eval, &mut seeded_rng(0)).unwrap();
        assert!(s.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn out_of_range_ids_are_lookup_errors() {
        let m = tiny(AttentionVariant::Cross, UpdateOrder::Sequential, PositionalEncoding::None);
        assert!(matches!(m.score_against_all(5, 0, Mode::Eval, &mut seeded_rng(0)), Err(Error::Lookup { .. })));
        assert!(matches!(m.score_against_all(0, 4, Mode::Eval, &mut seeded_rng(0)), Err(Error::Lookup { .. })));
    }
}
