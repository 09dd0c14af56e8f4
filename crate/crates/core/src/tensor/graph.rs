//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles in
//! creation order, which is already a topological order. [`Graph::backward`]
//! walks the records in reverse and accumulates adjoints. Graphs are rebuilt
//! for each step and are confined to one thread.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{self, LayerNormCache, View};
use super::value::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Index of a tensor inside a [`crate::params::ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
}

enum Op<T> {
    Constant,
    Input,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBcast(Var, Var),
    Affine(Var, T),
    MatMul { a: Var, b: Var, trans_b: bool },
    Bmm { a: Var, b: Var, trans_b: bool },
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, cache: LayerNormCache<T> },
    Relu(Var),
    Sigmoid(Var),
    Dropout { x: Var, mask: Vec<T> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Gather { table: Var, index: Vec<usize> },
    Sum(Var),
    Distance { q: Var, table: Var, norm: Norm },
    Bce { scores: Var, smoothed: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, Var>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Probability bounds applied before taking logarithms in the BCE loss.
pub const BCE_CLAMP: f64 = 1e-7;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {name}")));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, t: Tensor<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: t,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(nodes.len() - 1)
    }

    /// A differentiable leaf not tied to a stored parameter.
    pub fn input(&self, t: Tensor<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: t,
            op: Op::Input,
            requires_grad: true,
        });
        Var(nodes.len() - 1)
    }

    /// Registers a stored parameter as a leaf. Repeated registration of the
    /// same id returns the same node so that its gradient is accumulated once.
    pub fn param(&self, id: ParamId, t: &Tensor<T>, trainable: bool) -> Var {
        if let Some(&v) = self.params.borrow().get(&id) {
            return v;
        }
        let v = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value: t.clone(),
                op: if trainable { Op::Param } else { Op::Constant },
                requires_grad: trainable,
            });
            Var(nodes.len() - 1)
        };
        self.params.borrow_mut().insert(id, v);
        v
    }

    fn binary_same_shape(
        &self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same_shape(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), self.any_grad(&[a, b]), "add")
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same_shape(a, b, "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), self.any_grad(&[a, b]), "sub")
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same_shape(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), self.any_grad(&[a, b]), "mul")
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s (bias rows, position tables).
    pub fn add_bcast(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ash, bsh) = (av.shape(), bv.shape());
        if bsh.len() > ash.len() || ash[ash.len() - bsh.len()..] != *bsh || bv.is_empty() {
            return Err(Error::dim("add_bcast", ash, bsh));
        }
        let w = bv.len();
        let mut out = av.to_vec();
        for chunk in out.chunks_exact_mut(w) {
            for (o, &y) in chunk.iter_mut().zip(bv.data()) {
                *o = *o + y;
            }
        }
        let out = Tensor::new(ash, out)?;
        self.push(out, Op::AddBcast(a, b), self.any_grad(&[a, b]), "add_bcast")
    }

    /// `scale * x + shift`.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let (s, b) = (T::of(scale), T::of(shift));
        let out = self.value(x).map(|v| s * v + b);
        self.push(out, Op::Affine(x, s), self.requires_grad(x), "affine")
    }

    pub fn scale(&self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    /// 2-D product `a · b`, or `a · bᵀ` when `trans_b`.
    pub fn matmul_ext(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ash, bsh) = (av.shape(), bv.shape());
        if ash.len() != 2 || bsh.len() != 2 {
            return Err(Error::dim("matmul", ash, bsh));
        }
        let (m, k) = (ash[0], ash[1]);
        let (kb, n) = if trans_b { (bsh[1], bsh[0]) } else { (bsh[0], bsh[1]) };
        if k != kb {
            return Err(Error::dim("matmul", ash, bsh));
        }
        let mut out = vec![T::zero(); m * n];
        let bview = if trans_b {
            View::transposed(bv.data(), k)
        } else {
            View::rows(bv.data(), n)
        };
        kernels::gemm(m, k, n, View::rows(av.data(), k), bview, &mut out, false);
        let out = Tensor::new(&[m, n], out)?;
        self.push(out, Op::MatMul { a, b, trans_b }, self.any_grad(&[a, b]), "matmul")
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ext(a, b, false)
    }

    /// Batched product over the leading axis: `[g×m×k]·[g×k×n]`, or with
    /// `trans_b` the right operand is `[g×n×k]`.
    pub fn bmm(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ash, bsh) = (av.shape(), bv.shape());
        if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] {
            return Err(Error::dim("bmm", ash, bsh));
        }
        let (g, m, k) = (ash[0], ash[1], ash[2]);
        let (kb, n) = if trans_b { (bsh[2], bsh[1]) } else { (bsh[1], bsh[2]) };
        if k != kb {
            return Err(Error::dim("bmm", ash, bsh));
        }
        let mut out = vec![T::zero(); g * m * n];
        for i in 0..g {
            let a_i = &av.data()[i * m * k..(i + 1) * m * k];
            let b_i = &bv.data()[i * k * n..(i + 1) * k * n];
            let bview = if trans_b {
                View::transposed(b_i, k)
            } else {
                View::rows(b_i, n)
            };
            kernels::gemm(
                m,
                k,
                n,
                View::rows(a_i, k),
                bview,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let out = Tensor::new(&[g, m, n], out)?;
        self.push(out, Op::Bmm { a, b, trans_b }, self.any_grad(&[a, b]), "bmm")
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().unwrap_or(&0);
        if n == 0 {
            return Err(Error::Contract("softmax over an empty axis".into()));
        }
        let mut out = vec![T::zero(); xv.len()];
        kernels::softmax_rows(xv.data(), n, &mut out);
        let out = Tensor::new(xv.shape(), out)?;
        self.push(out, Op::Softmax(x), self.requires_grad(x), "softmax")
    }

    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer norm eps must be positive, got {eps}")));
        }
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = gv.len();
        if gv.ndim() != 1 || bv.shape() != gv.shape() || xv.shape().last() != Some(&d) {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        let mut out = vec![T::zero(); xv.len()];
        let cache = kernels::layer_norm_rows(xv.data(), gv.data(), bv.data(), eps, &mut out);
        let out = Tensor::new(xv.shape(), out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
            rg,
            "layer_norm",
        )
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), self.requires_grad(x), "relu")
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        let out = self.value(x).map(kernels::sigmoid);
        self.push(out, Op::Sigmoid(x), self.requires_grad(x), "sigmoid")
    }

    /// Inverted dropout. Identity (the same node) when `p == 0` or not training.
    pub fn dropout<R: Rng + ?Sized>(&self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(xv.shape(), out)?;
        self.push(out, Op::Dropout { x, mask }, self.requires_grad(x), "dropout")
    }

    pub fn concat(&self, inputs: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let first = vals
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let shape0 = first.shape();
        if axis >= shape0.len() {
            return Err(Error::dim("concat", shape0, &[axis]));
        }
        let mut total = 0;
        for v in &vals {
            let s = v.shape();
            if s.len() != shape0.len()
                || s[..axis] != shape0[..axis]
                || s[axis + 1..] != shape0[axis + 1..]
            {
                return Err(Error::dim("concat", shape0, s));
            }
            total += s[axis];
        }
        let outer: usize = shape0[..axis].iter().product();
        let inner: usize = shape0[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &vals {
                let w = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = shape0.to_vec();
        shape[axis] = total;
        let out = Tensor::new(&shape, out)?;
        let rg = self.any_grad(inputs);
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
            "concat",
        )
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dim("slice", shape, &[axis, start, len]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut oshape = shape.to_vec();
        oshape[axis] = len;
        let out = Tensor::new(&oshape, out)?;
        self.push(out, Op::Slice { x, axis, start }, self.requires_grad(x), "slice")
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push(out, Op::Reshape(x), self.requires_grad(x), "reshape")
    }

    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", shape, perm));
        }
        let oshape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let mut out = vec![T::zero(); xv.len()];
        kernels::permute(xv.data(), shape, perm, &mut out, false);
        let out = Tensor::new(&oshape, out)?;
        self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            self.requires_grad(x),
            "permute",
        )
    }

    /// Rows of a 2-D `table` selected by `index`: `[index.len() × cols]`.
    pub fn gather(&self, table: Var, index: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.ndim() != 2 {
            return Err(Error::dim("gather", tv.shape(), &[index.len()]));
        }
        let (rows, cols) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(Error::Lookup {
                    kind: "row",
                    id: i,
                    size: rows,
                });
            }
            out.extend_from_slice(tv.row(i));
        }
        let out = Tensor::new(&[index.len(), cols], out)?;
        self.push(
            out,
            Op::Gather {
                table,
                index: index.to_vec(),
            },
            self.requires_grad(table),
            "gather",
        )
    }

    /// Sum of all elements as a 0-d tensor.
    pub fn sum(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s: f64 = xv.data().iter().map(|v| v.f64()).sum();
        self.push(Tensor::scalar(T::of(s)), Op::Sum(x), self.requires_grad(x), "sum")
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1);
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Distances from every row of `q` `[b×d]` to every row of `table`
    /// `[n×d]`: `[b×n]`.
    pub fn distance(&self, q: Var, table: Var, norm: Norm) -> Result<Var> {
        let (qv, tv) = (self.value(q), self.value(table));
        if qv.ndim() != 2 || tv.ndim() != 2 || qv.shape()[1] != tv.shape()[1] {
            return Err(Error::dim("distance", qv.shape(), tv.shape()));
        }
        let (b, n) = (qv.shape()[0], tv.shape()[0]);
        let mut out = Vec::with_capacity(b * n);
        for i in 0..b {
            let qr = qv.row(i);
            for j in 0..n {
                let tr = tv.row(j);
                let d = match norm {
                    Norm::L1 => qr.iter().zip(tr).map(|(x, y)| (x.f64() - y.f64()).abs()).sum::<f64>(),
                    Norm::L2 => qr
                        .iter()
                        .zip(tr)
                        .map(|(x, y)| (x.f64() - y.f64()).powi(2))
                        .sum::<f64>()
                        .sqrt(),
                };
                out.push(T::of(d));
            }
        }
        let out = Tensor::new(&[b, n], out)?;
        self.push(out, Op::Distance { q, table, norm }, self.any_grad(&[q, table]), "distance")
    }

    /// Mean binary cross entropy between probabilities `scores` and 0/1
    /// `targets` after mapping labels to `{eps, 1-eps}`. Scores are clamped to
    /// `[1e-7, 1-1e-7]` before the logarithm.
    pub fn bce_smoothed(&self, scores: Var, targets: &Tensor<T>, eps: f64) -> Result<Var> {
        if !(0.0..0.5).contains(&eps) {
            return Err(Error::Config(format!("label smoothing must be in [0, 0.5), got {eps}")));
        }
        let sv = self.value(scores);
        if sv.shape() != targets.shape() {
            return Err(Error::dim("bce_smoothed", sv.shape(), targets.shape()));
        }
        let smoothed: Vec<T> = targets
            .data()
            .iter()
            .map(|&y| T::of((1.0 - eps) * y.f64() + eps * (1.0 - y.f64())))
            .collect();
        let mut total = 0.0f64;
        for (&s, &y) in sv.data().iter().zip(&smoothed) {
            let c = s.f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = y.f64();
            total -= y * c.ln() + (1.0 - y) * (1.0 - c).ln();
        }
        let loss = total / sv.len().max(1) as f64;
        self.push(
            Tensor::scalar(T::of(loss)),
            Op::Bce { scores, smoothed },
            self.requires_grad(scores),
            "bce_smoothed",
        )
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let params = self
            .params
            .borrow()
            .iter()
            .filter(|(_, v)| nodes[v.0].requires_grad)
            .map(|(&p, &v)| (p, v))
            .collect();
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            shapes,
            params,
        })
    }
}

fn slot<'a, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
}

fn backprop_node<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Constant | Op::Input | Op::Param => {}
        Op::Add(a, b) => {
            for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                if let Some(s) = slot(nodes, grads, v) {
                    axpy(s, g, T::of(sign));
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(s) = slot(nodes, grads, *a) {
                axpy(s, g, T::one());
            }
            if let Some(s) = slot(nodes, grads, *b) {
                axpy(s, g, -T::one());
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).clone(), val(*b).clone());
            if let Some(s) = slot(nodes, grads, *a) {
                for ((o, &gi), &y) in s.iter_mut().zip(g).zip(bv.data()) {
                    *o = *o + gi * y;
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                for ((o, &gi), &x) in s.iter_mut().zip(g).zip(av.data()) {
                    *o = *o + gi * x;
                }
            }
        }
        Op::AddBcast(a, b) => {
            if let Some(s) = slot(nodes, grads, *a) {
                axpy(s, g, T::one());
            }
            let w = val(*b).len();
            if let Some(s) = slot(nodes, grads, *b) {
                for chunk in g.chunks_exact(w) {
                    axpy(s, chunk, T::one());
                }
            }
        }
        Op::Affine(x, scale) => {
            if let Some(s) = slot(nodes, grads, *x) {
                axpy(s, g, *scale);
            }
        }
        Op::MatMul { a, b, trans_b } => {
            let (av, bv) = (val(*a).clone(), val(*b).clone());
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = node.value.shape()[1];
            if let Some(s) = slot(nodes, grads, *a) {
                // dA = dC · Bᵀ  (or dC · B when B was used transposed)
                let bview = if *trans_b {
                    View::rows(bv.data(), k)
                } else {
                    View::transposed(bv.data(), n)
                };
                kernels::gemm(m, n, k, View::rows(g, n), bview, s, true);
            }
            if let Some(s) = slot(nodes, grads, *b) {
                if *trans_b {
                    // dB[n×k] = dCᵀ · A
                    kernels::gemm(n, m, k, View::transposed(g, n), View::rows(av.data(), k), s, true);
                } else {
                    // dB[k×n] = Aᵀ · dC
                    kernels::gemm(k, m, n, View::transposed(av.data(), k), View::rows(g, n), s, true);
                }
            }
        }
        Op::Bmm { a, b, trans_b } => {
            let (av, bv) = (val(*a).clone(), val(*b).clone());
            let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
            let n = node.value.shape()[2];
            if let Some(s) = slot(nodes, grads, *a) {
                for i in 0..bs {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                    let bview = if *trans_b {
                        View::rows(bi, k)
                    } else {
                        View::transposed(bi, n)
                    };
                    kernels::gemm(m, n, k, View::rows(gi, n), bview, &mut s[i * m * k..(i + 1) * m * k], true);
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                for i in 0..bs {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let ai = &av.data()[i * m * k..(i + 1) * m * k];
                    let out = &mut s[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        kernels::gemm(n, m, k, View::transposed(gi, n), View::rows(ai, k), out, true);
                    } else {
                        kernels::gemm(k, m, n, View::transposed(ai, k), View::rows(gi, n), out, true);
                    }
                }
            }
        }
        Op::Softmax(x) => {
            let n = *node.value.shape().last().unwrap();
            if let Some(s) = slot(nodes, grads, *x) {
                kernels::softmax_rows_backward(node.value.data(), g, n, s);
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            cache,
        } => {
            let gv = val(*gamma).clone();
            let mut dx = slot(nodes, grads, *x).map(std::mem::take);
            let mut dg = slot(nodes, grads, *gamma).map(std::mem::take);
            let mut db = slot(nodes, grads, *beta).map(std::mem::take);
            kernels::layer_norm_rows_backward(
                cache,
                gv.data(),
                g,
                dx.as_deref_mut(),
                dg.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (v, buf) in [(*x, dx), (*gamma, dg), (*beta, db)] {
                if let Some(buf) = buf {
                    grads[v.0] = Some(buf);
                }
            }
        }
        Op::Relu(x) => {
            let xv = val(*x).clone();
            if let Some(s) = slot(nodes, grads, *x) {
                for ((o, &gi), &xi) in s.iter_mut().zip(g).zip(xv.data()) {
                    if xi > T::zero() {
                        *o = *o + gi;
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                for ((o, &gi), &y) in s.iter_mut().zip(g).zip(node.value.data()) {
                    *o = *o + gi * y * (T::one() - y);
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(s) = slot(nodes, grads, *x) {
                for ((o, &gi), &mi) in s.iter_mut().zip(g).zip(mask) {
                    *o = *o + gi * mi;
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let oshape = node.value.shape();
            let outer: usize = oshape[..*axis].iter().product();
            let inner: usize = oshape[axis + 1..].iter().product();
            let total = oshape[*axis] * inner;
            let mut offset = 0;
            for &v in inputs {
                let w = nodes[v.0].value.shape()[*axis] * inner;
                if let Some(s) = slot(nodes, grads, v) {
                    for o in 0..outer {
                        axpy(&mut s[o * w..(o + 1) * w], &g[o * total + offset..o * total + offset + w], T::one());
                    }
                }
                offset += w;
            }
        }
        Op::Slice { x, axis, start } => {
            let ishape = val(*x).shape().to_vec();
            let len = node.value.shape()[*axis];
            if let Some(s) = slot(nodes, grads, *x) {
                let outer: usize = ishape[..*axis].iter().product();
                let inner: usize = ishape[axis + 1..].iter().product();
                for o in 0..outer {
                    let base = (o * ishape[*axis] + start) * inner;
                    axpy(&mut s[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner], T::one());
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                axpy(s, g, T::one());
            }
        }
        Op::Permute { x, perm } => {
            let ishape = val(*x).shape().to_vec();
            if let Some(s) = slot(nodes, grads, *x) {
                kernels::permute(g, &ishape, perm, s, true);
            }
        }
        Op::Gather { table, index } => {
            let cols = val(*table).shape()[1];
            if let Some(s) = slot(nodes, grads, *table) {
                for (r, &i) in index.iter().enumerate() {
                    axpy(&mut s[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols], T::one());
                }
            }
        }
        Op::Sum(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                let gi = g[0];
                s.iter_mut().for_each(|o| *o = *o + gi);
            }
        }
        Op::Distance { q, table, norm } => {
            let (qv, tv) = (val(*q).clone(), val(*table).clone());
            let (b, d) = (qv.shape()[0], qv.shape()[1]);
            let n = tv.shape()[0];
            // d(dist)/d(q) per pair
            let mut dq = vec![T::zero(); b * d];
            let mut dt = vec![T::zero(); n * d];
            for i in 0..b {
                for j in 0..n {
                    let gij = g[i * n + j];
                    if gij == T::zero() {
                        continue;
                    }
                    let dist = node.value.data()[i * n + j];
                    for c in 0..d {
                        let diff = qv.data()[i * d + c] - tv.data()[j * d + c];
                        let local = match norm {
                            Norm::L1 => {
                                if diff > T::zero() {
                                    T::one()
                                } else if diff < T::zero() {
                                    -T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Norm::L2 => {
                                if dist > T::zero() {
                                    diff / dist
                                } else {
                                    T::zero()
                                }
                            }
                        };
                        dq[i * d + c] = dq[i * d + c] + gij * local;
                        dt[j * d + c] = dt[j * d + c] - gij * local;
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *q) {
                axpy(s, &dq, T::one());
            }
            if let Some(s) = slot(nodes, grads, *table) {
                axpy(s, &dt, T::one());
            }
        }
        Op::Bce { scores, smoothed } => {
            let sv = val(*scores).clone();
            let n = sv.len().max(1) as f64;
            let g0 = g[0].f64();
            if let Some(s) = slot(nodes, grads, *scores) {
                for ((o, &si), &yi) in s.iter_mut().zip(sv.data()).zip(smoothed) {
                    let p = si.f64();
                    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                        continue;
                    }
                    let y = yi.f64();
                    let d = (-y / p + (1.0 - y) / (1.0 - p)) / n;
                    *o = *o + T::of(g0 * d);
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Scalar>(dst: &mut [T], src: &[T], alpha: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + alpha * s;
    }
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to any node; `None` when no path reaches it.
    pub fn wrt(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(&self.shapes[v.0], g.clone()).ok()
    }

    pub fn param(&self, id: ParamId) -> Option<Tensor<T>> {
        let (_, v) = self.params.iter().find(|(p, _)| *p == id)?;
        self.wrt(*v)
    }

    /// Gradients of every trainable parameter leaf that was registered,
    /// sorted by id. Leaves that did not influence the loss get zeros.
    pub fn params(&self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = self
            .params
            .iter()
            .map(|&(p, v)| {
                let t = self
                    .wrt(v)
                    .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]));
                (p, t)
            })
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}
