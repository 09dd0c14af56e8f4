mod common;

use pkge::checkpoint::{check_dataset, from_bytes, load, read_header, save, to_bytes, FORMAT_VERSION};
use pkge::config::{ModelConfig, RunConfig};
use pkge::eval::evaluate;
use pkge::kg::Split;
use pkge::model::AnyModel;
use pkge::segmentation::SegmentationKind;
use pkge::{seeded_rng, Error};

fn setup() -> (pkge::kg::TripleStore, RunConfig, AnyModel<f32>) {
    let store = common::synthetic_store(12, 3, 50, 1, false);
    let config = RunConfig {
        model: ModelConfig {
            entity_dim: 8,
            relation_dim: 12,
            patch_dim: 4,
            heads: 2,
            layers: 1,
            ffn_dim: 8,
            ..ModelConfig::default()
        },
        ..RunConfig::default()
    };
    let model = AnyModel::build(&config.model, store.num_entities(), store.num_relation_ids(), &mut seeded_rng(3)).unwrap();
    (store, config, model)
}

fn same_params(a: &AnyModel<f32>, b: &AnyModel<f32>) {
    assert_eq!(a.params().len(), b.params().len());
    for ((_, x), (_, y)) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.trainable, y.trainable);
        let bits = |t: &pkge::tensor::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.value), bits(&y.value), "{}", x.name);
    }
}

#[test]
fn round_trip_is_bit_exact_and_reproduces_reports() {
    let (store, config, model) = setup();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save(&path, &model, &config, 3, Some(0.25)).unwrap();
    let (back, header) = load::<f32>(&path).unwrap();
    same_params(&model, &back);
    assert_eq!(header.epoch, 3);
    assert_eq!(header.valid_mrr, Some(0.25));
    assert_eq!(header.dtype, "f32");
    check_dataset(&header, &store).unwrap();
    let a = evaluate(&model, &store, Split::Test, 16, None).unwrap();
    let b = evaluate(&back, &store, Split::Test, 16, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read(&path).unwrap(), to_bytes(&back, &config, 3, Some(0.25)).unwrap());
}

#[test]
fn every_model_kind_round_trips() {
    let (store, config, _) = setup();
    for kind in ["transe", "distmult", "patreformer"] {
        for seg in [SegmentationKind::Trainable, SegmentationKind::NoSegmentation, SegmentationKind::Folding] {
            let mut c = config.clone();
            c.model.model = kind.parse().unwrap();
            c.model.segmentation = seg;
            let m = AnyModel::<f32>::build(&c.model, store.num_entities(), store.num_relation_ids(), &mut seeded_rng(1)).unwrap();
            let (back, _) = from_bytes::<f32>(&to_bytes(&m, &c, 0, None).unwrap()).unwrap();
            same_params(&m, &back);
        }
    }
}

#[test]
fn manifest_offsets_are_contiguous() {
    let (_, config, model) = setup();
    let bytes = to_bytes(&model, &config, 0, None).unwrap();
    let (header, payload) = read_header(&bytes).unwrap();
    let mut off = 0;
    for t in &header.tensors {
        assert_eq!(t.offset, off);
        off += t.shape.iter().product::<usize>() * 4;
    }
    assert_eq!(off, payload.len());
}

#[test]
fn corruption_is_detected() {
    let (_, config, model) = setup();
    let bytes = to_bytes(&model, &config, 0, None).unwrap();
    let mut flipped = bytes.clone();
    let at = bytes.len() - 10;
    flipped[at] ^= 0x40;
    match from_bytes::<f32>(&flipped) {
        Err(Error::Checkpoint(m)) => assert!(m.contains("checksum"), "{m}"),
        other => panic!("expected checksum error, got {:?}", other.map(|_| ())),
    }
    assert!(matches!(from_bytes::<f32>(&bytes[..bytes.len() / 2]), Err(Error::Checkpoint(_))));
    assert!(matches!(from_bytes::<f32>(&bytes[..8]), Err(Error::Checkpoint(_))));
    let mut wrong_version = bytes.clone();
    wrong_version[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match from_bytes::<f32>(&wrong_version) {
        Err(Error::Checkpoint(m)) => assert!(m.contains("version"), "{m}"),
        other => panic!("expected version error, got {:?}", other.map(|_| ())),
    }
    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    assert!(matches!(from_bytes::<f32>(&bad_magic), Err(Error::Checkpoint(_))));
}

#[test]
fn dataset_mismatch_names_embedding_table() {
    let (_, config, model) = setup();
    let bytes = to_bytes(&model, &config, 0, None).unwrap();
    let (header, _) = read_header(&bytes).unwrap();
    let other = common::synthetic_store(13, 3, 50, 1, false);
    match check_dataset(&header, &other) {
        Err(Error::Mismatch(m)) => assert!(m.contains("entity_emb"), "{m}"),
        other => panic!("expected mismatch, got {other:?}"),
    }
}

#[test]
fn double_precision_checkpoint_loads_as_single() {
    let (_, config, _) = setup();
    let m64 = AnyModel::<f64>::build(&config.model, 12, 6, &mut seeded_rng(3)).unwrap();
    let bytes = to_bytes(&m64, &config, 0, None).unwrap();
    assert_eq!(read_header(&bytes).unwrap().0.dtype, "f64");
    let (m32, _) = from_bytes::<f32>(&bytes).unwrap();
    for ((_, a), (_, b)) in m64.params().iter().zip(m32.params().iter()) {
        for (x, y) in a.value.data().iter().zip(b.value.data()) {
            assert_eq!(*x as f32, *y);
        }
    }
}
