//! Named parameter storage shared by all scoring models.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Ordered, named collection of model tensors. Ids are dense indices in
/// insertion order; that order is also the checkpoint order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Registers parameter `id` as a graph leaf.
    pub fn leaf(&self, g: &Graph<T>, id: ParamId) -> Var {
        let p = &self.params[id.0];
        g.param(id, &p.value, p.trainable)
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Replaces every tensor with the same-named tensor of `other`, checking
    /// shapes; used when restoring checkpoints into a freshly built model.
    pub fn load_from(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::Mismatch(format!(
                "checkpoint holds {} tensors, model expects {}",
                named.len(),
                self.params.len()
            )));
        }
        for (name, t) in named {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::Mismatch(format!("unknown tensor {name}")))?;
            let slot = &mut self.params[id.0].value;
            if slot.shape() != t.shape() {
                return Err(Error::Mismatch(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(())
    }
}

/// Glorot-uniform matrix: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, shape: &[usize], rng: &mut R) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-a..a)))
}
