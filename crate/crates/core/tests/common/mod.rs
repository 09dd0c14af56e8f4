#![allow(dead_code)]

use pkge::kg::{RawTriple, TripleStore};
use pkge::tensor::{Graph, Tensor, Var};
use pkge::{seeded_rng, Result};
use rand::Rng;

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = seeded_rng(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero, for ops with a kink at 0.
pub fn rand_away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = seeded_rng(seed);
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between two gradient vectors.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric)).max(1e-12);
    norm(&diff) / scale
}

/// Compares reverse-mode gradients of `f` with central differences for
/// every input. `f` must end in a scalar.
pub fn gradcheck(inputs: &[Tensor<f64>], f: impl Fn(&Graph<f64>, &[Var]) -> Result<Var>) -> f64 {
    gradcheck_step(1e-6, inputs, f)
}

/// Central-difference check with step `h`; returns the worst relative error.
pub fn gradcheck_step(h: f64, inputs: &[Tensor<f64>], f: impl Fn(&Graph<f64>, &[Var]) -> Result<Var>) -> f64 {
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&g, &vars).unwrap();
        g.value(out).data()[0]
    };
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = f(&g, &vars).unwrap();
    let grads = g.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]).map(|t| t.to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);
        let mut numeric = Vec::with_capacity(x.len());
        for j in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] += h;
            let up = eval(&xs);
            xs[i].data_mut()[j] -= 2.0 * h;
            let down = eval(&xs);
            numeric.push((up - down) / (2.0 * h));
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Weighted sum `Σ w ⊙ x` with fixed pseudo-random weights, turning any
/// tensor into a scalar without symmetric cancellations.
pub fn probe(g: &Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let w = g.constant(rand_tensor(&g.shape(x), seed));
    g.sum(g.mul(x, w)?)
}

/// Random KG with entities `e0..` and relations `r0..`; every triple is
/// distinct, and the count is capped by the number of possible triples.
/// `train_is_test` copies the training triples into valid and test.
pub fn synthetic_store(entities: usize, relations: usize, triples: usize, seed: u64, train_is_test: bool) -> TripleStore {
    let mut rng = seeded_rng(seed);
    let mut seen = std::collections::HashSet::new();
    let mut all = Vec::new();
    // Mention every entity and relation once so the vocabulary is complete.
    for e in 0..entities {
        let t = (e, e % relations, (e + 1) % entities);
        if seen.insert(t) {
            all.push(t);
        }
    }
    for r in 0..relations {
        let t = (r % entities, r, (r + 2) % entities);
        if seen.insert(t) {
            all.push(t);
        }
    }
    let triples = triples.min(entities * entities * relations);
    while all.len() < triples {
        let t = (rng.random_range(0..entities), rng.random_range(0..relations), rng.random_range(0..entities));
        if seen.insert(t) {
            all.push(t);
        }
    }
    let raw: Vec<RawTriple> = all
        .iter()
        .map(|&(h, r, t)| RawTriple::new(&format!("e{h}"), &format!("r{r}"), &format!("e{t}")))
        .collect();
    if train_is_test {
        TripleStore::build(&raw, &raw, &raw).unwrap()
    } else {
        let n = raw.len();
        let (a, b) = (n * 8 / 10, n * 9 / 10);
        // Training must mention every entity: the seeding triples come first.
        TripleStore::build(&raw[..a], &raw[a..b], &raw[b..]).unwrap()
    }
}
