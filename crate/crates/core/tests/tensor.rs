mod common;

use common::rand_tensor;
use pkge::seeded_rng;
use pkge::tensor::{Graph, ParamId, Tensor};
use pkge::Error;
use proptest::prelude::*;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn matmul_examples() {
    let g = Graph::<f64>::new();
    let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let i = g.constant(Tensor::eye(2));
    assert_eq!(g.value(g.matmul(a, i).unwrap()).data(), &[1., 2., 3., 4.]);
    let r = g.constant(t(&[1, 2], &[1., 2.]));
    let c = g.constant(t(&[2, 1], &[3., 4.]));
    assert_eq!(g.value(g.matmul(r, c).unwrap()).data(), &[11.]);
    assert!(matches!(g.matmul(r, r), Err(Error::Dimension { .. })));
}

#[test]
fn matmul_sum_gradient_by_finite_differences() {
    let a = rand_tensor(&[3, 4], 1);
    let b = rand_tensor(&[4, 2], 2);
    let err = common::gradcheck(&[a, b], |g, v| g.sum(g.matmul(v[0], v[1])?));
    assert!(err < 1e-4);
}

#[test]
fn softmax_examples() {
    let g = Graph::<f64>::new();
    let s = |v: &[f64]| g.value(g.softmax(g.constant(t(&[v.len()], v))).unwrap()).to_vec();
    assert_eq!(s(&[0., 0.]), vec![0.5, 0.5]);
    let big = s(&[1e4, 0.]);
    assert!((big[0] - 1.0).abs() < 1e-12 && big[1] >= 0.0 && big[1] < 1e-12);
    close(&s(&[1., 2., 3.]), &[0.09003, 0.24473, 0.66524], 1e-5);
    let g32 = Graph::<f32>::new();
    let y = g32.value(g32.softmax(g32.constant(Tensor::from_f64(&[2], &[1e4, 0.]).unwrap())).unwrap());
    assert!(y.all_finite());
}

#[test]
fn layer_norm_examples() {
    let g = Graph::<f64>::new();
    let ones = g.constant(Tensor::ones(&[4]));
    let zeros = g.constant(Tensor::zeros(&[4]));
    let x = g.constant(t(&[1, 4], &[5., 5., 5., 5.]));
    assert_eq!(g.value(g.layer_norm(x, ones, zeros, 1e-5).unwrap()).data(), &[0., 0., 0., 0.]);
    let (o2, z2) = (g.constant(Tensor::ones(&[2])), g.constant(Tensor::zeros(&[2])));
    let y = g.value(g.layer_norm(g.constant(t(&[1, 2], &[1., 3.])), o2, z2, 1e-12).unwrap());
    close(y.data(), &[-1., 1.], 1e-9);
    assert!(matches!(g.layer_norm(x, ones, zeros, 0.0), Err(Error::Config(_))));
    let err = common::gradcheck(
        &[rand_tensor(&[4, 8], 1), rand_tensor(&[8], 2), rand_tensor(&[8], 3)],
        |g, v| common::probe(g, g.layer_norm(v[0], v[1], v[2], 1e-5)?, 4),
    );
    assert!(err < 1e-4);
}

#[test]
fn dropout_identities_and_expectation() {
    let g = Graph::<f64>::new();
    let x = g.constant(rand_tensor(&[3, 3], 1));
    let mut rng = seeded_rng(0);
    assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert_eq!(g.dropout(x, 0.4, false, &mut rng).unwrap(), x);
    assert!(g.dropout(x, 1.0, true, &mut rng).is_err());

    let n = 100_000;
    let vals = t(&[n], &vec![2.5; n]);
    let y = g.value(g.dropout(g.constant(vals), 0.4, true, &mut rng).unwrap());
    let mean = y.data().iter().sum::<f64>() / n as f64;
    assert!((mean - 2.5).abs() / 2.5 < 0.02, "{mean}");
    let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
    assert!((kept - 0.6).abs() < 0.01);
    assert!(y.data().iter().all(|&v| v == 0.0 || (v - 2.5 / 0.6).abs() < 1e-12));
}

#[test]
fn backward_examples() {
    let g = Graph::<f64>::new();
    let x = g.input(t(&[2, 2], &[1., -2., 3., 0.5]));
    let grads = g.backward(g.sum(x).unwrap()).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[1., 1., 1., 1.]);

    let g = Graph::<f64>::new();
    let w = g.param(ParamId(0), &t(&[1, 1], &[0.]), true);
    let x = g.constant(t(&[1, 1], &[1.]));
    let loss = g.sum(g.sigmoid(g.matmul(w, x).unwrap()).unwrap()).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(ParamId(0)).unwrap().data(), &[0.25]);

    let g = Graph::<f64>::new();
    let x = g.input(t(&[2], &[1., 2.]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn unused_trainable_leaf_gets_zero_gradient() {
    let g = Graph::<f64>::new();
    let a = g.param(ParamId(0), &t(&[2], &[1., 2.]), true);
    let _unused = g.param(ParamId(1), &t(&[3], &[1., 2., 3.]), true);
    let frozen = g.param(ParamId(2), &t(&[2], &[1., 1.]), false);
    let loss = g.sum(g.mul(a, frozen).unwrap()).unwrap();
    let grads = g.backward(loss).unwrap().params();
    let ids: Vec<_> = grads.iter().map(|(id, _)| id.0).collect();
    assert_eq!(ids, vec![0, 1]);
    assert_eq!(grads[1].1.data(), &[0., 0., 0.]);
    // Registering the same parameter twice yields one leaf.
    assert_eq!(g.param(ParamId(0), &t(&[2], &[9., 9.]), true), a);
}

#[test]
fn overflow_is_an_error() {
    let g = Graph::<f32>::new();
    let x = g.constant(Tensor::from_f64(&[2], &[3e38, 3e38]).unwrap());
    assert!(matches!(g.add(x, x), Err(Error::NonFinite(_))));
}

#[test]
fn forward_is_reproducible() {
    let run = || {
        let g = Graph::<f32>::new();
        let a = g.constant(rand_tensor(&[40, 30], 1).cast());
        let b = g.constant(rand_tensor(&[30, 20], 2).cast());
        let y = g.softmax(g.matmul(a, b).unwrap()).unwrap();
        let y = g.dropout(y, 0.3, true, &mut seeded_rng(5)).unwrap();
        g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                out[i * n + j] += a.at(&[i, l]) * b.at(&[l, j]);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..9, scale in 0.1f64..50.0, seed in 0u64..1000) {
        let g = Graph::<f32>::new();
        let x = rand_tensor(&[rows, cols], seed).map(|v| v * scale).cast::<f32>();
        let y = g.value(g.softmax(g.constant(x)).unwrap());
        for r in 0..rows {
            let row = y.row(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_matches_triple_loop(m in 1usize..40, k in 1usize..40, n in 1usize..40, seed in 0u64..1000) {
        let a = rand_tensor(&[m, k], seed);
        let b = rand_tensor(&[k, n], seed + 1);
        let g = Graph::<f64>::new();
        let y = g.value(g.matmul(g.constant(a.clone()), g.constant(b.clone())).unwrap());
        for (x, w) in y.data().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((x - w).abs() < 1e-10);
        }
    }

    #[test]
    fn permute_matches_index_formula(seed in 0u64..1000, p in 0usize..6) {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let perm = perms[p];
        let shape = [2usize, 3, 4];
        let x = rand_tensor(&shape, seed);
        let g = Graph::<f64>::new();
        let y = g.value(g.permute(g.constant(x.clone()), &perm).unwrap());
        let out_shape: Vec<usize> = perm.iter().map(|&a| shape[a]).collect();
        prop_assert_eq!(y.shape(), &out_shape[..]);
        for i in 0..2 {
            for j in 0..3 {
                for l in 0..4 {
                    let src = [i, j, l];
                    let dst: Vec<usize> = perm.iter().map(|&a| src[a]).collect();
                    prop_assert_eq!(y.at(&dst), x.at(&src));
                }
            }
        }
    }

    #[test]
    fn concat_then_slice_round_trips(a in 1usize..4, b in 1usize..4, seed in 0u64..1000) {
        let x = rand_tensor(&[2, a, 3], seed);
        let y = rand_tensor(&[2, b, 3], seed + 1);
        let g = Graph::<f64>::new();
        let c = g.concat(&[g.constant(x.clone()), g.constant(y.clone())], 1).unwrap();
        prop_assert_eq!(g.value(g.slice(c, 1, 0, a).unwrap()), x);
        prop_assert_eq!(g.value(g.slice(c, 1, a, b).unwrap()), y);
    }
}
