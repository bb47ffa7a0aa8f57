use super::layers::{Linear, Mlp, LEAKY_SLOPE};
use super::{ConditionId, NetConfig, SampleBatch};
use crate::autodiff::{Graph, IdGen, Params, Parameter, Var};
use crate::error::{contract, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Reference classifier used by the evaluation metrics.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub body: Mlp,
    pub head: Linear,
    pub trained: bool,
}

impl Classifier {
    pub fn new(
        cfg: &NetConfig,
        data_dim: usize,
        num_conditions: usize,
        ids: &mut IdGen,
        rng: &mut Rng,
    ) -> Self {
        let w = cfg.classifier_hidden;
        Self {
            body: Mlp::new("classifier", &[data_dim, w, w], LEAKY_SLOPE, ids, rng),
            head: Linear::new("classifier.head", w, num_conditions, ids, rng),
            trained: false,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head.fan_out()
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let h = self.body.forward(g, x, trainable);
        self.head.forward(g, h, trainable)
    }

    pub fn logits(&self, x: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let l = self.forward(&mut g, xv, false);
        g.value(l).clone()
    }

    /// Predicted class of every row.
    pub fn classify(&self, x: &SampleBatch) -> Result<Vec<ConditionId>> {
        if !self.trained {
            return Err(contract("classifier has not been trained"));
        }
        Ok(argmax_rows(&self.logits(&x.x)))
    }
}

/// Row-wise argmax; ties go to the lower index.
pub fn argmax_rows(logits: &Tensor) -> Vec<ConditionId> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            ConditionId(best)
        })
        .collect()
}

impl Params for Classifier {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.body.params();
        v.extend(self.head.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.body.params_mut();
        v.extend(self.head.params_mut());
        v
    }
}
