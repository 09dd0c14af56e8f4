//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{ParamId, Tensor};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients for frozen parameters are ignored; a
    /// non-finite gradient aborts before any parameter is touched.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        for (id, g) in grads {
            let p = store.param(*id);
            if g.shape() != p.value.shape() {
                return Err(Error::dim("adam", g.shape(), p.value.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        if self.m.len() < store.len() {
            self.m.resize(store.len(), Vec::new());
            self.v.resize(store.len(), Vec::new());
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads {
            if !store.param(*id).trainable {
                continue;
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            if m.is_empty() {
                m.resize(g.len(), 0.0);
                v.resize(g.len(), 0.0);
            }
            let w = store.value_mut(*id).data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                let gi = gi.f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                w[i] = T::of(w[i].f64() - update);
            }
        }
        Ok(())
    }
}
