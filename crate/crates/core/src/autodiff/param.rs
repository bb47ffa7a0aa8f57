use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Stable identifier of a trainable tensor within one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub u32);

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub id: ParamId,
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Frozen parameters enter graphs as constants and never receive gradient.
    pub frozen: bool,
}

impl Parameter {
    pub fn new(id: ParamId, name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            id,
            name: name.into(),
            value,
            grad,
            frozen: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn clamp(&mut self, limit: f64) {
        for v in self.value.data_mut() {
            *v = v.clamp(-limit, limit);
        }
    }
}

/// Hands out parameter ids in creation order.
#[derive(Debug, Default, Clone)]
pub struct IdGen {
    next: u32,
}

impl IdGen {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&mut self) -> ParamId {
        let id = ParamId(self.next);
        self.next += 1;
        id
    }
}

/// Anything that owns parameters.
pub trait Params {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn set_frozen(&mut self, frozen: bool) {
        for p in self.params_mut() {
            p.frozen = frozen;
        }
    }

    fn accumulate(&mut self, grads: &super::Gradients) {
        for p in self.params_mut() {
            if let Some(g) = grads.get(p.id) {
                p.grad.add_assign(g);
            }
        }
    }

    fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

impl Params for Vec<Parameter> {
    fn params(&self) -> Vec<&Parameter> {
        self.iter().collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.iter_mut().collect()
    }
}

impl Params for Parameter {
    fn params(&self) -> Vec<&Parameter> {
        vec![self]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![self]
    }
}

impl<A: Params, B: Params> Params for (A, B) {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.0.params();
        v.extend(self.1.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.0.params_mut();
        v.extend(self.1.params_mut());
        v
    }
}
