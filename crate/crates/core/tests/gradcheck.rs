//! Central finite-difference checks of every differentiable primitive and
//! of the full model loss.

mod common;

use common::{gradcheck, probe, rand_away_from_zero, rand_tensor, rel_error};
use pkge::config::{AttentionVariant, ModelConfig, ModelKind, PositionalEncoding, UpdateOrder};
use pkge::model::{AnyModel, Mode};
use pkge::segmentation::SegmentationKind;
use pkge::tensor::{Graph, Norm, Tensor};
use pkge::train::{batch_loss, QuerySet};
use pkge::{seeded_rng, Tensor64};

const TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;

fn check(name: &str, err: f64) {
    assert!(err < TOL, "{name}: relative error {err:e}");
}

#[test]
fn elementwise_ops() {
    let (a, b) = (rand_tensor(&[3, 4], 1), rand_tensor(&[3, 4], 2));
    check("add", gradcheck(&[a.clone(), b.clone()], |g, v| probe(g, g.add(v[0], v[1])?, 9)));
    check("sub", gradcheck(&[a.clone(), b.clone()], |g, v| probe(g, g.sub(v[0], v[1])?, 9)));
    check("mul", gradcheck(&[a.clone(), b.clone()], |g, v| probe(g, g.mul(v[0], v[1])?, 9)));
    check("affine", gradcheck(std::slice::from_ref(&a), |g, v| probe(g, g.affine(v[0], -1.7, 0.3)?, 9)));
    check("sigmoid", gradcheck(std::slice::from_ref(&a), |g, v| probe(g, g.sigmoid(v[0])?, 9)));
    let kinked = rand_away_from_zero(&[3, 4], 3);
    check("relu", gradcheck(&[kinked], |g, v| probe(g, g.relu(v[0])?, 9)));
    let bias = rand_tensor(&[4], 4);
    check("add_bcast", gradcheck(&[a.clone(), bias], |g, v| probe(g, g.add_bcast(v[0], v[1])?, 9)));
    let table = rand_tensor(&[2, 3, 4], 5);
    let pe = rand_tensor(&[3, 4], 6);
    check("add_bcast_3d", gradcheck(&[table, pe], |g, v| probe(g, g.add_bcast(v[0], v[1])?, 9)));
    check("sum", gradcheck(std::slice::from_ref(&a), |g, v| g.sum(g.mul(v[0], v[0])?)));
    check("mean", gradcheck(&[a], |g, v| g.mean(g.mul(v[0], v[0])?)));
}

#[test]
fn products() {
    let a = rand_tensor(&[3, 5], 1);
    let b = rand_tensor(&[5, 4], 2);
    let bt = rand_tensor(&[4, 5], 3);
    check("matmul", gradcheck(&[a.clone(), b], |g, v| probe(g, g.matmul(v[0], v[1])?, 9)));
    check("matmul_t", gradcheck(&[a, bt], |g, v| probe(g, g.matmul_ext(v[0], v[1], true)?, 9)));
    let x = rand_tensor(&[2, 3, 4], 4);
    let y = rand_tensor(&[2, 4, 5], 5);
    let yt = rand_tensor(&[2, 5, 4], 6);
    check("bmm", gradcheck(&[x.clone(), y], |g, v| probe(g, g.bmm(v[0], v[1], false)?, 9)));
    check("bmm_t", gradcheck(&[x, yt], |g, v| probe(g, g.bmm(v[0], v[1], true)?, 9)));
    // Large enough to leave the naive kernel.
    let p = rand_tensor(&[20, 16], 7);
    let q = rand_tensor(&[16, 18], 8);
    check("matmul_large", gradcheck(&[p, q], |g, v| probe(g, g.matmul(v[0], v[1])?, 9)));
}

#[test]
fn normalizations() {
    let x = rand_tensor(&[2, 3, 5], 1).map(|v| 3.0 * v);
    check("softmax", gradcheck(std::slice::from_ref(&x), |g, v| probe(g, g.softmax(v[0])?, 9)));
    let gamma = rand_tensor(&[5], 2);
    let beta = rand_tensor(&[5], 3);
    check(
        "layer_norm",
        gradcheck(&[x, gamma, beta], |g, v| probe(g, g.layer_norm(v[0], v[1], v[2], 1e-5)?, 9)),
    );
}

#[test]
fn shape_ops() {
    let a = rand_tensor(&[2, 3, 4], 1);
    let b = rand_tensor(&[2, 2, 4], 2);
    check("concat1", gradcheck(&[a.clone(), b], |g, v| probe(g, g.concat(&[v[0], v[1]], 1)?, 9)));
    let c = rand_tensor(&[1, 3, 4], 3);
    check("concat0", gradcheck(&[a.clone(), c], |g, v| probe(g, g.concat(&[v[0], v[1]], 0)?, 9)));
    check("slice", gradcheck(std::slice::from_ref(&a), |g, v| probe(g, g.slice(v[0], 1, 1, 2)?, 9)));
    check("reshape", gradcheck(std::slice::from_ref(&a), |g, v| probe(g, g.reshape(v[0], &[6, 4])?, 9)));
    check("permute", gradcheck(std::slice::from_ref(&a), |g, v| probe(g, g.permute(v[0], &[2, 0, 1])?, 9)));
    let t = rand_tensor(&[5, 3], 4);
    check("gather", gradcheck(&[t], |g, v| probe(g, g.gather(v[0], &[4, 0, 4, 2])?, 9)));
}

#[test]
fn distances_and_loss() {
    let q = rand_tensor(&[3, 4], 1);
    let t = rand_tensor(&[5, 4], 2);
    check("distance_l1", gradcheck(&[q.clone(), t.clone()], |g, v| probe(g, g.distance(v[0], v[1], Norm::L1)?, 9)));
    check("distance_l2", gradcheck(&[q, t], |g, v| probe(g, g.distance(v[0], v[1], Norm::L2)?, 9)));
    let logits = rand_tensor(&[3, 4], 3);
    let targets = Tensor::from_fn(&[3, 4], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
    check(
        "bce",
        gradcheck(&[logits], |g, v| g.bce_smoothed(g.sigmoid(v[0])?, &targets, 0.1)),
    );
}

#[test]
fn dropout_with_fixed_mask() {
    let x = rand_tensor(&[4, 6], 1);
    check(
        "dropout",
        gradcheck(&[x], |g, v| {
            let mut rng = seeded_rng(5);
            probe(g, g.dropout(v[0], 0.3, true, &mut rng)?, 9)
        }),
    );
}

/// Full model loss gradient with respect to every trainable tensor.
fn model_gradcheck(config: &ModelConfig) -> f64 {
    let store = common::synthetic_store(5, 2, 12, 1, false);
    let queries = QuerySet::from_train(&store);
    let idx: Vec<usize> = (0..queries.len()).collect();
    let heads: Vec<_> = queries.queries.iter().map(|q| q.0).collect();
    let rels: Vec<_> = queries.queries.iter().map(|q| q.1).collect();
    let targets: Tensor64 = queries.targets(&idx, store.num_entities());
    let mut model =
        AnyModel::<f64>::build(config, store.num_entities(), store.num_relation_ids(), &mut seeded_rng(2)).unwrap();

    let loss_of = |m: &AnyModel<f64>| -> f64 {
        let g = Graph::new();
        let l = batch_loss(m, &g, &heads, &rels, &targets, 0.1, Mode::Train, &mut seeded_rng(3)).unwrap();
        g.value(l).data()[0]
    };
    let g = Graph::new();
    let l = batch_loss(&model, &g, &heads, &rels, &targets, 0.1, Mode::Train, &mut seeded_rng(3)).unwrap();
    let grads = g.backward(l).unwrap().params();
    assert!(!grads.is_empty());

    let h = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (id, grad) in grads {
        for j in 0..grad.len() {
            let orig = model.params().get(id).data()[j];
            model.params_mut().value_mut(id).data_mut()[j] = orig + h;
            let up = loss_of(&model);
            model.params_mut().value_mut(id).data_mut()[j] = orig - h;
            let down = loss_of(&model);
            model.params_mut().value_mut(id).data_mut()[j] = orig;
            analytic.push(grad.data()[j]);
            numeric.push((up - down) / (2.0 * h));
        }
    }
    rel_error(&analytic, &numeric)
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        entity_dim: 8,
        relation_dim: 12,
        patch_dim: 4,
        heads: 2,
        layers: 2,
        ffn_dim: 6,
        ..ModelConfig::default()
    }
}

#[test]
fn full_model_default() {
    let err = model_gradcheck(&toy_config());
    assert!(err < MODEL_TOL, "model: relative error {err:e}");
}

#[test]
fn full_model_variants() {
    let base = toy_config();
    let variants = [
        ModelConfig { attention: AttentionVariant::FullSelf, ..base.clone() },
        ModelConfig { attention: AttentionVariant::SeparateSelf, ..base.clone() },
        ModelConfig { positional_encoding: PositionalEncoding::Trainable, ..base.clone() },
        ModelConfig { positional_encoding: PositionalEncoding::Sinusoidal, ..base.clone() },
        ModelConfig { segmentation: SegmentationKind::Trainable, ..base.clone() },
        ModelConfig { segmentation: SegmentationKind::Folding, ..base.clone() },
        ModelConfig { segmentation: SegmentationKind::NoSegmentation, ..base.clone() },
        ModelConfig { update_order: UpdateOrder::Simultaneous, ..base.clone() },
        ModelConfig { model: ModelKind::TransE, ..base.clone() },
        ModelConfig { model: ModelKind::DistMult, ..base.clone() },
    ];
    for c in variants {
        let err = model_gradcheck(&c);
        assert!(err < MODEL_TOL, "{c:?}: relative error {err:e}");
    }
}
