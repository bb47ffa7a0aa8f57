use super::layers::{Linear, Mlp, LEAKY_SLOPE};
use super::{FeatureBatch, FeatureSource, NetConfig, SampleBatch};
use crate::autodiff::{Graph, IdGen, Params, Parameter, Var};
use crate::error::{contract, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Image-space Wasserstein critic with an optional auxiliary classifier
/// head. The first hidden layer doubles as the distillation tap.
#[derive(Debug, Clone)]
pub struct Critic {
    pub body: Mlp,
    pub score: Linear,
    pub aux: Option<Linear>,
    num_conditions: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct CriticOutput {
    /// `n x 1` critic values.
    pub score: Var,
    /// `n x T` raw class logits, when the auxiliary head is enabled.
    pub logits: Option<Var>,
    /// Activations of the first hidden layer.
    pub tap: Var,
}

impl Critic {
    pub fn new(
        cfg: &NetConfig,
        data_dim: usize,
        num_conditions: usize,
        ids: &mut IdGen,
        rng: &mut Rng,
    ) -> Self {
        let body = Mlp::new(
            "critic",
            &[data_dim, cfg.critic_tap_width, cfg.critic_hidden],
            LEAKY_SLOPE,
            ids,
            rng,
        );
        let score = Linear::new("critic.score", cfg.critic_hidden, 1, ids, rng);
        let aux = cfg
            .critic_aux
            .then(|| Linear::new("critic.aux", cfg.critic_hidden, num_conditions, ids, rng));
        Self {
            body,
            score,
            aux,
            num_conditions,
        }
    }

    pub fn tap_width(&self) -> usize {
        self.body.layers[0].fan_out()
    }

    pub fn num_conditions(&self) -> usize {
        self.num_conditions
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> CriticOutput {
        let hs = self.body.forward_all(g, x, trainable);
        let top = *hs.last().expect("two layers");
        let score = self.score.forward(g, top, trainable);
        let logits = self.aux.as_ref().map(|a| a.forward(g, top, trainable));
        CriticOutput {
            score,
            logits,
            tap: hs[0],
        }
    }

    /// Only the tap layer, for feature distillation.
    pub fn tap(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let a = self.body.layers[0].forward(g, x, trainable);
        g.leaky_relu(a, self.body.slope)
    }

    /// `d score / d x` per row, differentiable in the parameters.
    pub fn input_gradient(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        self.body.input_gradient(g, x, &self.score, trainable)
    }

    /// Scores, class logits and tap features of a batch.
    pub fn criticize(&self, x: &SampleBatch) -> Result<(Tensor, Option<Tensor>, FeatureBatch)> {
        if x.data_dim() != self.body.layers[0].fan_in() {
            return Err(contract("critic input width mismatch"));
        }
        let mut g = Graph::new();
        let xv = g.constant(x.x.clone());
        let out = self.forward(&mut g, xv, false);
        let tap = FeatureBatch::from_samples(g.value(out.tap).clone(), FeatureSource::Distilled, x);
        Ok((
            g.value(out.score).clone(),
            out.logits.map(|l| g.value(l).clone()),
            tap,
        ))
    }

    /// Parameters on the score path, which the Lipschitz constraint governs.
    pub fn score_params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.body.params_mut();
        v.extend(self.score.params_mut());
        v
    }
}

impl Params for Critic {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.body.params();
        v.extend(self.score.params());
        if let Some(a) = &self.aux {
            v.extend(a.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.body.params_mut();
        v.extend(self.score.params_mut());
        if let Some(a) = &mut self.aux {
            v.extend(a.params_mut());
        }
        v
    }
}

/// Wasserstein critic over concatenated feature pairs `[h_left, h_right]`.
#[derive(Debug, Clone)]
pub struct FeatureCritic {
    pub body: Mlp,
    pub score: Linear,
}

impl FeatureCritic {
    pub fn new(cfg: &NetConfig, ids: &mut IdGen, rng: &mut Rng) -> Self {
        let w = cfg.feature_critic_hidden;
        Self {
            body: Mlp::new(
                "feature_critic",
                &[2 * cfg.feature_dim, w, w],
                LEAKY_SLOPE,
                ids,
                rng,
            ),
            score: Linear::new("feature_critic.score", w, 1, ids, rng),
        }
    }

    pub fn input_width(&self) -> usize {
        self.body.layers[0].fan_in()
    }

    /// Scores of already concatenated pairs.
    pub fn forward(&self, g: &mut Graph, pairs: Var, trainable: bool) -> Var {
        let h = self.body.forward(g, pairs, trainable);
        self.score.forward(g, h, trainable)
    }

    pub fn score_pairs(&self, g: &mut Graph, left: Var, right: Var, trainable: bool) -> Var {
        let pairs = g.concat_cols(left, right);
        assert_eq!(g.value(pairs).cols(), self.input_width(), "pair width");
        self.forward(g, pairs, trainable)
    }

    pub fn input_gradient(&self, g: &mut Graph, pairs: Var, trainable: bool) -> Var {
        self.body.input_gradient(g, pairs, &self.score, trainable)
    }
}

impl Params for FeatureCritic {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.body.params();
        v.extend(self.score.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.body.params_mut();
        v.extend(self.score.params_mut());
        v
    }
}
