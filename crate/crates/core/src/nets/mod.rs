//! Small dense networks: the conditional generator, the image critic with
//! its auxiliary classifier head and feature tap, the feature encoder, the
//! pair critic used for adversarial feature matching, and the reference
//! classifier.

mod checkpoint;
mod classifier;
mod critic;
mod encoder;
mod generator;
mod layers;

pub use checkpoint::{Checkpoint, CheckpointEntry};
pub use classifier::{argmax_rows, Classifier};
pub use critic::{Critic, CriticOutput, FeatureCritic};
pub use encoder::{Encoder, EncoderOutput};
pub use generator::{Generator, OutputSquash};
pub use layers::{Linear, Mlp, LEAKY_SLOPE};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{IdGen, Params, Parameter};
use crate::error::{contract, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Zero-based index of a task's class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConditionId(pub usize);

impl ConditionId {
    /// Validates `index < num_conditions`.
    pub fn new(index: usize, num_conditions: usize) -> Result<Self> {
        if index >= num_conditions {
            return Err(contract(format!(
                "condition {index} out of range for {num_conditions} tasks"
            )));
        }
        Ok(Self(index))
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// Standard-normal latent codes. `tag` identifies the draw so that two
/// generator outputs computed from the same codes can be recognised as
/// paired.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z: Tensor,
    pub tag: u64,
}

impl LatentBatch {
    pub fn sample(n: usize, latent_dim: usize, rng: &mut Rng, tag: u64) -> Self {
        let data = (0..n * latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self {
            z: Tensor::matrix(n, latent_dim, data).expect("latent shape"),
            tag,
        }
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    CurrentModel,
    Snapshot,
}

/// Rows of data-space samples with their condition labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub x: Tensor,
    pub conditions: Vec<ConditionId>,
    pub provenance: Provenance,
    /// Latent draw the rows were generated from, if any.
    pub latent_tag: Option<u64>,
}

impl SampleBatch {
    pub fn real(x: Tensor, condition: ConditionId) -> Self {
        let n = x.rows();
        Self {
            x,
            conditions: vec![condition; n],
            provenance: Provenance::Real,
            latent_tag: None,
        }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data_dim(&self) -> usize {
        self.x.cols()
    }

    /// Whether rows correspond one-to-one with `other`: same latent draw and
    /// the same conditions.
    pub fn is_paired_with(&self, other: &SampleBatch) -> bool {
        self.latent_tag.is_some()
            && self.latent_tag == other.latent_tag
            && self.conditions == other.conditions
            && self.x.shape() == other.x.shape()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    LearnedEncoder,
    Distilled,
    Prior,
}

/// Encoded rows, aligned one-to-one with the batch they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub h: Tensor,
    pub source: FeatureSource,
    pub conditions: Vec<ConditionId>,
    pub latent_tag: Option<u64>,
}

impl FeatureBatch {
    pub fn from_samples(h: Tensor, source: FeatureSource, x: &SampleBatch) -> Self {
        Self {
            h,
            source,
            conditions: x.conditions.clone(),
            latent_tag: x.latent_tag,
        }
    }

    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_paired_with(&self, other: &FeatureBatch) -> bool {
        self.latent_tag.is_some()
            && self.latent_tag == other.latent_tag
            && self.conditions == other.conditions
            && self.h.shape() == other.h.shape()
    }
}

/// Layer widths. Every network is two hidden layers deep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub latent_dim: usize,
    pub generator_hidden: usize,
    /// Width of the critic's first hidden layer, which is also the tap.
    pub critic_tap_width: usize,
    pub critic_hidden: usize,
    pub encoder_hidden: usize,
    pub feature_dim: usize,
    pub feature_critic_hidden: usize,
    pub classifier_hidden: usize,
    /// Auxiliary classifier head on the image critic.
    pub critic_aux: bool,
    /// Auxiliary classifier head on the feature encoder.
    pub encoder_aux: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            generator_hidden: 64,
            critic_tap_width: 64,
            critic_hidden: 64,
            encoder_hidden: 64,
            feature_dim: 16,
            feature_critic_hidden: 64,
            classifier_hidden: 64,
            critic_aux: true,
            encoder_aux: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("latent_dim", self.latent_dim),
            ("generator_hidden", self.generator_hidden),
            ("critic_tap_width", self.critic_tap_width),
            ("critic_hidden", self.critic_hidden),
            ("encoder_hidden", self.encoder_hidden),
            ("feature_dim", self.feature_dim),
            ("feature_critic_hidden", self.feature_critic_hidden),
            ("classifier_hidden", self.classifier_hidden),
        ];
        for (name, w) in widths {
            if w == 0 {
                return Err(crate::error::config(format!("model.{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// All networks trained by the continual engine.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub generator: Generator,
    pub critic: Critic,
    pub encoder: Encoder,
    pub feature_critic: FeatureCritic,
}

impl ModelState {
    pub fn new(
        cfg: &NetConfig,
        data_dim: usize,
        num_conditions: usize,
        squash: OutputSquash,
        rng: &mut Rng,
    ) -> Self {
        let mut ids = IdGen::new();
        let generator = Generator::new(cfg, data_dim, num_conditions, squash, &mut ids, rng);
        let critic = Critic::new(cfg, data_dim, num_conditions, &mut ids, rng);
        let encoder = Encoder::new(cfg, data_dim, num_conditions, "encoder", &mut ids, rng);
        let feature_critic = FeatureCritic::new(cfg, &mut ids, rng);
        Self {
            generator,
            critic,
            encoder,
            feature_critic,
        }
    }
}

impl Params for ModelState {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.generator.params();
        v.extend(self.critic.params());
        v.extend(self.encoder.params());
        v.extend(self.feature_critic.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.generator.params_mut();
        v.extend(self.critic.params_mut());
        v.extend(self.encoder.params_mut());
        v.extend(self.feature_critic.params_mut());
        v
    }
}
