mod common;

use common::rand_tensor;
use pkge::config::{ModelConfig, ModelKind};
use pkge::model::AnyModel;
use pkge::seeded_rng;
use pkge::tensor::{Norm, Tensor};

fn build(kind: ModelKind, n: usize, r: usize, seed: u64) -> AnyModel<f64> {
    let c = ModelConfig {
        model: kind,
        entity_dim: 6,
        ..ModelConfig::default()
    };
    AnyModel::build(&c, n, r, &mut seeded_rng(seed)).unwrap()
}

fn tables(m: &AnyModel<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let p = m.params();
    (
        p.get(p.find("entity_emb").unwrap()).clone(),
        p.get(p.find("relation_emb").unwrap()).clone(),
    )
}

#[test]
fn distmult_matches_triple_loop() {
    let m = build(ModelKind::DistMult, 10, 4, 1);
    let (e, r) = tables(&m);
    for h in 0..10 {
        for rel in 0..4 {
            let got = m.score_logits(&[h], &[rel]).unwrap();
            for t in 0..10 {
                let want: f64 = (0..6).map(|k| e.at(&[h, k]) * r.at(&[rel, k]) * e.at(&[t, k])).sum();
                assert!((got.data()[t] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn distmult_special_relations() {
    let mut m = build(ModelKind::DistMult, 5, 2, 2);
    let id = m.params().find("relation_emb").unwrap();
    let mut rel = Tensor::<f64>::zeros(&[2, 6]);
    rel.data_mut()[6..].fill(1.0);
    *m.params_mut().value_mut(id) = rel;
    let probs = m.score_all(&[3], &[0]).unwrap();
    assert!(probs.data().iter().all(|&p| p == 0.5));
    let (e, _) = tables(&m);
    let logits = m.score_logits(&[3], &[1]).unwrap();
    for t in 0..5 {
        let dot: f64 = (0..6).map(|k| e.at(&[3, k]) * e.at(&[t, k])).sum();
        assert!((logits.data()[t] - dot).abs() < 1e-12);
    }
}

#[test]
fn distmult_is_symmetric() {
    let m = build(ModelKind::DistMult, 8, 3, 3);
    for r in 0..3 {
        for h in 0..8 {
            let a = m.score_logits(&[h], &[r]).unwrap();
            for t in 0..8 {
                let b = m.score_logits(&[t], &[r]).unwrap();
                assert!((a.data()[t] - b.data()[h]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn transe_matches_distance_loop() {
    let m = build(ModelKind::TransE, 10, 4, 4);
    let (e, r) = tables(&m);
    for h in 0..10 {
        for rel in 0..4 {
            let got = m.score_logits(&[h], &[rel]).unwrap();
            let mut best = (f64::INFINITY, 0);
            for t in 0..10 {
                let dist: f64 = (0..6).map(|k| (e.at(&[h, k]) + r.at(&[rel, k]) - e.at(&[t, k])).abs()).sum();
                assert!((got.data()[t] - (12.0 - dist)).abs() < 1e-12);
                if dist < best.0 {
                    best = (dist, t);
                }
            }
            let argmax = (0..10).max_by(|&a, &b| got.data()[a].total_cmp(&got.data()[b])).unwrap();
            assert_eq!(argmax, best.1);
        }
    }
}

#[test]
fn transe_exact_translation_scores_margin() {
    let mut m = build(ModelKind::TransE, 4, 2, 5);
    let (mut e, r) = tables(&m);
    for k in 0..6 {
        e.data_mut()[2 * 6 + k] = e.at(&[0, k]) + r.at(&[1, k]);
    }
    let id = m.params().find("entity_emb").unwrap();
    *m.params_mut().value_mut(id) = e;
    let logits = m.score_logits(&[0], &[1]).unwrap();
    assert!((logits.data()[2] - 12.0).abs() < 1e-12);
    assert!(logits.data().iter().all(|&x| x <= logits.data()[2]));
    let p = m.score_all(&[0], &[1]).unwrap();
    assert!((p.data()[2] - 1.0 / (1.0 + (-12f64).exp())).abs() < 1e-12);
}

#[test]
fn transe_ranking_is_translation_invariant() {
    let mut m = build(ModelKind::TransE, 12, 3, 6);
    let argsort = |m: &AnyModel<f64>| -> Vec<Vec<usize>> {
        (0..3)
            .map(|r| {
                let s = m.score_logits(&[5], &[r]).unwrap();
                let mut idx: Vec<usize> = (0..12).collect();
                idx.sort_by(|&a, &b| s.data()[b].total_cmp(&s.data()[a]).then(a.cmp(&b)));
                idx
            })
            .collect()
    };
    let before = argsort(&m);
    let shift = rand_tensor(&[6], 9);
    let id = m.params().find("entity_emb").unwrap();
    let e = m.params().get(id).clone();
    *m.params_mut().value_mut(id) = Tensor::from_fn(&[12, 6], |i| e.data()[i] + shift.data()[i % 6]);
    assert_eq!(argsort(&m), before);
}

#[test]
fn transe_l2_option() {
    let c = ModelConfig {
        model: ModelKind::TransE,
        entity_dim: 6,
        transe_norm: Norm::L2,
        ..ModelConfig::default()
    };
    let m = AnyModel::<f64>::build(&c, 5, 2, &mut seeded_rng(1)).unwrap();
    let (e, r) = tables(&m);
    let got = m.score_logits(&[1], &[0]).unwrap();
    for t in 0..5 {
        let d: f64 = (0..6).map(|k| (e.at(&[1, k]) + r.at(&[0, k]) - e.at(&[t, k])).powi(2)).sum::<f64>().sqrt();
        assert!((got.data()[t] - (12.0 - d)).abs() < 1e-12);
    }
}

#[test]
fn baseline_relations_share_entity_width() {
    for kind in [ModelKind::TransE, ModelKind::DistMult] {
        let m = build(kind, 5, 3, 1);
        let (e, r) = tables(&m);
        assert_eq!(e.shape()[1], r.shape()[1]);
        assert!(matches!(m.score_logits(&[5], &[0]), Err(pkge::Error::Lookup { .. })));
    }
}
