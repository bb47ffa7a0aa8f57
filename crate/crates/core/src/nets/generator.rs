use serde::{Deserialize, Serialize};

use super::layers::Linear;
use super::{ConditionId, LatentBatch, NetConfig, Provenance, SampleBatch};
use crate::autodiff::{Graph, IdGen, Params, Parameter, Var};
use crate::error::{contract, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Optional squashing of generator outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSquash {
    Identity,
    Sigmoid,
}

/// Conditional generator. Each hidden layer's pre-activation is scaled and
/// shifted by per-condition vectors (conditional batch norm without the
/// batch statistics).
#[derive(Debug, Clone)]
pub struct Generator {
    pub l1: Linear,
    pub l2: Linear,
    pub out: Linear,
    pub gamma1: Parameter,
    pub beta1: Parameter,
    pub gamma2: Parameter,
    pub beta2: Parameter,
    pub squash: OutputSquash,
    num_conditions: usize,
}

impl Generator {
    pub fn new(
        cfg: &NetConfig,
        data_dim: usize,
        num_conditions: usize,
        squash: OutputSquash,
        ids: &mut IdGen,
        rng: &mut Rng,
    ) -> Self {
        let h = cfg.generator_hidden;
        let l1 = Linear::new("generator.l1", cfg.latent_dim, h, ids, rng);
        let l2 = Linear::new("generator.l2", h, h, ids, rng);
        let out = Linear::new("generator.out", h, data_dim, ids, rng);
        let ones = || Tensor::full(&[num_conditions, h], 1.0);
        let zeros = || Tensor::zeros(&[num_conditions, h]);
        Self {
            l1,
            l2,
            out,
            gamma1: Parameter::new(ids.next_id(), "generator.gamma1", ones()),
            beta1: Parameter::new(ids.next_id(), "generator.beta1", zeros()),
            gamma2: Parameter::new(ids.next_id(), "generator.gamma2", ones()),
            beta2: Parameter::new(ids.next_id(), "generator.beta2", zeros()),
            squash,
            num_conditions,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.l1.fan_in()
    }

    pub fn data_dim(&self) -> usize {
        self.out.fan_out()
    }

    pub fn num_conditions(&self) -> usize {
        self.num_conditions
    }

    fn modulate(
        &self,
        g: &mut Graph,
        a: Var,
        gamma: &Parameter,
        beta: &Parameter,
        conds: &[usize],
        trainable: bool,
    ) -> Var {
        let gm = g.param(gamma, trainable);
        let bt = g.param(beta, trainable);
        let gm = g.gather_rows(gm, conds);
        let bt = g.gather_rows(bt, conds);
        let scaled = g.mul(a, gm);
        g.add(scaled, bt)
    }

    /// One output row per latent row; `conds[k]` conditions row `k`.
    pub fn forward(&self, g: &mut Graph, conds: &[usize], z: Var, trainable: bool) -> Var {
        assert_eq!(conds.len(), g.value(z).rows(), "one condition per latent row");
        let a1 = self.l1.forward(g, z, trainable);
        let m1 = self.modulate(g, a1, &self.gamma1, &self.beta1, conds, trainable);
        let h1 = g.relu(m1);
        let a2 = self.l2.forward(g, h1, trainable);
        let m2 = self.modulate(g, a2, &self.gamma2, &self.beta2, conds, trainable);
        let h2 = g.relu(m2);
        let o = self.out.forward(g, h2, trainable);
        match self.squash {
            OutputSquash::Identity => o,
            OutputSquash::Sigmoid => g.sigmoid(o),
        }
    }

    /// Samples for a mix of conditions, one per latent row.
    pub fn generate_rows(
        &self,
        conditions: &[ConditionId],
        z: &LatentBatch,
        provenance: Provenance,
    ) -> Result<SampleBatch> {
        if conditions.len() != z.len() {
            return Err(contract("one condition per latent row"));
        }
        if z.z.cols() != self.latent_dim() {
            return Err(contract(format!(
                "latent width {} != {}",
                z.z.cols(),
                self.latent_dim()
            )));
        }
        for c in conditions {
            if c.0 >= self.num_conditions {
                return Err(contract(format!(
                    "condition {} out of range for {} tasks",
                    c.0, self.num_conditions
                )));
            }
        }
        let idx: Vec<usize> = conditions.iter().map(|c| c.0).collect();
        let mut g = Graph::new();
        let zv = g.constant(z.z.clone());
        let x = self.forward(&mut g, &idx, zv, false);
        Ok(SampleBatch {
            x: g.value(x).clone(),
            conditions: conditions.to_vec(),
            provenance,
            latent_tag: Some(z.tag),
        })
    }

    /// Deterministic samples of `condition` from the latent codes.
    pub fn generate(&self, condition: ConditionId, z: &LatentBatch) -> Result<SampleBatch> {
        self.generate_rows(&vec![condition; z.len()], z, Provenance::CurrentModel)
    }
}

impl Params for Generator {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.l1.params();
        v.extend(self.l2.params());
        v.extend(self.out.params());
        v.extend([&self.gamma1, &self.beta1, &self.gamma2, &self.beta2]);
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.l1.params_mut();
        v.extend(self.l2.params_mut());
        v.extend(self.out.params_mut());
        v.extend([
            &mut self.gamma1,
            &mut self.beta1,
            &mut self.gamma2,
            &mut self.beta2,
        ]);
        v
    }
}
