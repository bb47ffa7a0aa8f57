use super::layers::{Linear, Mlp, LEAKY_SLOPE};
use super::{FeatureBatch, FeatureSource, NetConfig, SampleBatch};
use crate::autodiff::{Graph, IdGen, Params, Parameter, Var};
use crate::error::{contract, Result};
use crate::rng::Rng;

/// Maps samples into the feature space used for replay matching. The same
/// architecture serves as the learned encoder and, once pre-fitted and
/// frozen, as the prior encoder.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub body: Mlp,
    pub out: Linear,
    pub aux: Option<Linear>,
    pub source: FeatureSource,
    /// Set once a prior encoder has been pre-fitted.
    pub fitted: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub h: Var,
    pub logits: Option<Var>,
}

impl Encoder {
    pub fn new(
        cfg: &NetConfig,
        data_dim: usize,
        num_conditions: usize,
        name: &str,
        ids: &mut IdGen,
        rng: &mut Rng,
    ) -> Self {
        let w = cfg.encoder_hidden;
        let body = Mlp::new(name, &[data_dim, w, w], LEAKY_SLOPE, ids, rng);
        let out = Linear::new(&format!("{name}.out"), w, cfg.feature_dim, ids, rng);
        let aux = cfg.encoder_aux.then(|| {
            Linear::new(&format!("{name}.aux"), cfg.feature_dim, num_conditions, ids, rng)
        });
        Self {
            body,
            out,
            aux,
            source: FeatureSource::LearnedEncoder,
            fitted: false,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.out.fan_out()
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> EncoderOutput {
        let top = self.body.forward(g, x, trainable);
        let h = self.out.forward(g, top, trainable);
        let logits = self.aux.as_ref().map(|a| a.forward(g, h, trainable));
        EncoderOutput { h, logits }
    }

    pub fn features(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let top = self.body.forward(g, x, trainable);
        self.out.forward(g, top, trainable)
    }

    pub fn encode(&self, x: &SampleBatch) -> Result<FeatureBatch> {
        if x.data_dim() != self.body.layers[0].fan_in() {
            return Err(contract("encoder input width mismatch"));
        }
        let mut g = Graph::new();
        let xv = g.constant(x.x.clone());
        let h = self.features(&mut g, xv, false);
        Ok(FeatureBatch::from_samples(g.value(h).clone(), self.source, x))
    }
}

impl Params for Encoder {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.body.params();
        v.extend(self.out.params());
        if let Some(a) = &self.aux {
            v.extend(a.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.body.params_mut();
        v.extend(self.out.params_mut());
        if let Some(a) = &mut self.aux {
            v.extend(a.params_mut());
        }
        v
    }
}
