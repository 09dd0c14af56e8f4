//! Embedding segmentation: turning one embedding vector into a sequence of
//! `k` patches of width `d`.
//!
//! * folding: patch `i` is the contiguous slice `e[i*d .. (i+1)*d]`;
//! * trainable: `p[i][j] = u[i][j] · e` with learned mapping vectors;
//! * frozen: as trainable, but the `d` vectors of each patch are a fixed
//!   orthonormal set taken from the SVD of a Gaussian matrix;
//! * none: a single patch `e · P` through a learned `dim × d` projection.
//!
//! Mapped bases are stored as `[k, d, dim]` tensors, so row `i*d + j` of the
//! flattened basis is `u[i][j]`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{glorot_uniform, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentationKind {
    Folding,
    Trainable,
    Frozen,
    NoSegmentation,
}

impl SegmentationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentationKind::Folding => "folding",
            SegmentationKind::Trainable => "trainable",
            SegmentationKind::Frozen => "frozen",
            SegmentationKind::NoSegmentation => "none",
        }
    }
}

impl std::str::FromStr for SegmentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "folding" => Ok(SegmentationKind::Folding),
            "trainable" => Ok(SegmentationKind::Trainable),
            "frozen" => Ok(SegmentationKind::Frozen),
            "none" => Ok(SegmentationKind::NoSegmentation),
            other => Err(Error::Config(format!(
                "unknown segmentation {other:?} (folding|trainable|frozen|none)"
            ))),
        }
    }
}

fn patch_count(dim: usize, d: usize) -> Result<usize> {
    if d == 0 || !dim.is_multiple_of(d) {
        return Err(Error::Config(format!(
            "embedding dimension {dim} is not divisible into patches of {d}"
        )));
    }
    Ok(dim / d)
}

/// Folding on a batch: `[b × k·d]` → `[b·k × d]`.
pub fn fold<T: Scalar>(g: &Graph<T>, e: Var, d: usize) -> Result<Var> {
    let shape = g.shape(e);
    if shape.len() != 2 || d == 0 || !shape[1].is_multiple_of(d) {
        return Err(Error::dim("segment_folding", &shape, &[d]));
    }
    g.reshape(e, &[shape[0] * (shape[1] / d), d])
}

/// Mapped segmentation on a batch: `[b × dim]` with basis `[k, d, dim]` →
/// `[b·k × d]`.
pub fn map<T: Scalar>(g: &Graph<T>, e: Var, basis: Var) -> Result<Var> {
    let (es, bs) = (g.shape(e), g.shape(basis));
    if es.len() != 2 || bs.len() != 3 || bs[2] != es[1] {
        return Err(Error::dim("segment_mapped", &es, &bs));
    }
    let (k, d) = (bs[0], bs[1]);
    let flat = g.reshape(basis, &[k * d, bs[2]])?;
    let p = g.matmul_ext(e, flat, true)?;
    g.reshape(p, &[es[0] * k, d])
}

/// Single learned patch: `[b × dim]` · `[dim × d]` → `[b × d]`.
pub fn project<T: Scalar>(g: &Graph<T>, e: Var, proj: Var) -> Result<Var> {
    let (es, ps) = (g.shape(e), g.shape(proj));
    if es.len() != 2 || ps.len() != 2 || ps[0] != es[1] {
        return Err(Error::dim("segment_none", &es, &ps));
    }
    g.matmul(e, proj)
}

/// Folds a single embedding `[k·d]` into `[k × d]`.
pub fn segment_folding<T: Scalar>(e: &Tensor<T>, k: usize, d: usize) -> Result<Tensor<T>> {
    if e.len() != k * d {
        return Err(Error::dim("segment_folding", e.shape(), &[k, d]));
    }
    e.reshape(&[k, d])
}

/// `p[i][j] = u[i][j] · e` for a single embedding.
pub fn segment_mapped<T: Scalar>(e: &Tensor<T>, basis: &Tensor<T>) -> Result<Tensor<T>> {
    let g = Graph::new();
    let ev = g.constant(e.reshape(&[1, e.len()])?);
    let bv = g.constant(basis.clone());
    let out = map(&g, ev, bv)?;
    Ok(g.value(out))
}

/// Single-patch projection of one embedding: `[1 × d]`.
pub fn segment_none<T: Scalar>(e: &Tensor<T>, proj: &Tensor<T>) -> Result<Tensor<T>> {
    let g = Graph::new();
    let ev = g.constant(e.reshape(&[1, e.len()])?);
    let pv = g.constant(proj.clone());
    let out = project(&g, ev, pv)?;
    Ok(g.value(out))
}

/// Identity-like basis reproducing folding: `u[i][j]` is the unit vector
/// at `i*d + j`.
pub fn unit_basis<T: Scalar>(k: usize, d: usize) -> Tensor<T> {
    let dim = k * d;
    Tensor::from_fn(&[k, d, dim], |idx| {
        let (row, col) = (idx / dim, idx % dim);
        if row == col {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Frozen basis `[k, d, k·d]`. For every patch a Gaussian `(k·d) × d` matrix
/// is decomposed and its `d` left singular vectors become that patch's
/// mapping vectors, so they are orthonormal within the patch.
pub fn build_frozen_basis<T: Scalar, R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<Tensor<T>> {
    let dim = k * d;
    if k == 0 || d == 0 {
        return Err(Error::Config(format!("frozen basis needs k, d > 0 (got k={k}, d={d})")));
    }
    let mut data = Vec::with_capacity(k * d * dim);
    for _ in 0..k {
        let u = loop {
            let m = DMatrix::<f64>::from_fn(dim, d, |_, _| rng.sample(StandardNormal));
            let svd = m.svd(true, false);
            let min_sv = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_sv > 1e-8 {
                break svd.u.expect("left singular vectors requested");
            }
        };
        for j in 0..d {
            data.extend(u.column(j).iter().map(|&x| T::of(x)));
        }
    }
    Tensor::new(&[k, d, dim], data)
}

/// Largest deviation of any within-patch Gram matrix from the identity.
pub fn max_gram_deviation<T: Scalar>(basis: &Tensor<T>) -> f64 {
    let s = basis.shape();
    let (k, d, dim) = (s[0], s[1], s[2]);
    let data = basis.data();
    let mut worst = 0.0f64;
    for i in 0..k {
        for a in 0..d {
            for b in a..d {
                let ua = &data[(i * d + a) * dim..(i * d + a + 1) * dim];
                let ub = &data[(i * d + b) * dim..(i * d + b + 1) * dim];
                let dot: f64 = ua.iter().zip(ub).map(|(x, y)| x.f64() * y.f64()).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
    }
    worst
}

/// Segmentation bound to one embedding table, with its parameters living in
/// a [`ParamStore`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Segmenter {
    pub kind: SegmentationKind,
    pub dim: usize,
    pub d: usize,
    pub basis: Option<ParamId>,
}

impl Segmenter {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        kind: SegmentationKind,
        dim: usize,
        d: usize,
        name: &str,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let basis = match kind {
            SegmentationKind::Folding => {
                patch_count(dim, d)?;
                None
            }
            SegmentationKind::Trainable => {
                let k = patch_count(dim, d)?;
                let t = glorot_uniform(dim, dim, &[k, d, dim], rng);
                Some(store.add(format!("{name}.seg_basis"), t, true))
            }
            SegmentationKind::Frozen => {
                let k = patch_count(dim, d)?;
                let t = build_frozen_basis(k, d, rng)?;
                Some(store.add(format!("{name}.seg_basis"), t, false))
            }
            SegmentationKind::NoSegmentation => {
                if d == 0 {
                    return Err(Error::Config("patch dimension must be positive".into()));
                }
                let t = glorot_uniform(dim, d, &[dim, d], rng);
                Some(store.add(format!("{name}.seg_proj"), t, true))
            }
        };
        Ok(Segmenter { kind, dim, d, basis })
    }

    pub fn num_patches(&self) -> usize {
        match self.kind {
            SegmentationKind::NoSegmentation => 1,
            _ => self.dim / self.d,
        }
    }

    /// Width of the flattened patch sequence.
    pub fn flat_width(&self) -> usize {
        self.num_patches() * self.d
    }

    /// `[b × dim]` embeddings → `[b·k × d]` patches.
    pub fn apply<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, e: Var) -> Result<Var> {
        match (self.kind, self.basis) {
            (SegmentationKind::Folding, _) => fold(g, e, self.d),
            (SegmentationKind::Trainable | SegmentationKind::Frozen, Some(b)) => map(g, e, store.leaf(g, b)),
            (SegmentationKind::NoSegmentation, Some(p)) => project(g, e, store.leaf(g, p)),
            _ => Err(Error::Contract("segmentation parameters missing".into())),
        }
    }
}
