//! Task-incremental training: per-task loops, snapshots, the lambda
//! schedule, replay batches under every replay mode, and the three
//! feature sources.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, IdGen, Params, Var};
use crate::error::{config, contract, Error, Result};
use crate::metrics::{
    accuracy_per_condition, frechet_gaussian, train_reference_classifier, ClassifierConfig,
    ConditionalSampler, DistanceKind, ForgetfulnessLedger, ForgetfulnessReport,
};
use crate::nets::{
    Classifier, ConditionId, Critic, Encoder, FeatureBatch, FeatureSource, Generator, LatentBatch, ModelState,
    NetConfig, Provenance, SampleBatch,
};
use crate::objectives::{
    check_alpha, class_cross_entropy, compose_objective, compose_graph, critic_gap,
    feature_pair_losses, generator_adversarial, gradient_penalty, paired_l2, weight_clip,
    LipschitzMode, LossBreakdown, LossParts, DEFAULT_CLIP, GP_WEIGHT,
};
use crate::rng::{self, Rng};
use crate::tasks::{prior_fit_stream, sample_real, TaskStream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    None,
    ReplayData,
    AlignImage,
    AlignFeature,
    AlignCombined,
    Joint,
}

impl ReplayMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReplayMode::None => "none",
            ReplayMode::ReplayData => "replay_data",
            ReplayMode::AlignImage => "align_image",
            ReplayMode::AlignFeature => "align_feature",
            ReplayMode::AlignCombined => "align_combined",
            ReplayMode::Joint => "joint",
        }
    }

    /// Whether a snapshot of the previous model drives training.
    pub fn uses_snapshot(self) -> bool {
        !matches!(self, ReplayMode::None | ReplayMode::Joint)
    }

    pub fn aligns(self) -> bool {
        matches!(
            self,
            ReplayMode::AlignImage | ReplayMode::AlignFeature | ReplayMode::AlignCombined
        )
    }

    /// The blend weight a mode fixes, if any.
    pub fn forced_alpha(self) -> Option<f64> {
        match self {
            ReplayMode::AlignImage => Some(0.0),
            ReplayMode::AlignFeature => Some(1.0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    Paired,
    Unpaired,
}

/// Which side the learned encoder takes in the pair game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderRole {
    /// Maximizes pair discriminability together with the feature critic.
    WithCritic,
    /// Minimizes it, siding with the generator.
    AgainstCritic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub mode: ReplayMode,
    /// Only meaningful for `align_combined`; the other alignment modes fix it.
    pub alpha: Option<f64>,
    pub lambda_base: f64,
    pub feature_source: FeatureSource,
    pub pairing: Pairing,
    pub encoder_role: EncoderRole,
    pub steps_per_task: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    pub lipschitz: LipschitzMode,
    pub clip: f64,
    pub gp_weight: f64,
    pub ac_weight: f64,
    /// Relative weight of the critic-side tap distillation on replayed
    /// rows (distilled source only). The term carries the same
    /// `lambda_t alpha (t - 1)` factor as the generator's feature term.
    pub critic_distill: f64,
    pub optimizer: AdamConfig,
    /// Steps used to pre-fit the prior encoder.
    pub prior_fit_steps: usize,
    /// A metrics row is logged every this many steps.
    pub log_every: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            mode: ReplayMode::AlignFeature,
            alpha: None,
            lambda_base: 1e-3,
            feature_source: FeatureSource::Distilled,
            pairing: Pairing::Paired,
            encoder_role: EncoderRole::WithCritic,
            steps_per_task: 2000,
            batch_size: 64,
            critic_steps: 5,
            lipschitz: LipschitzMode::WeightClip,
            clip: DEFAULT_CLIP,
            gp_weight: GP_WEIGHT,
            ac_weight: 1.0,
            critic_distill: 1.0,
            optimizer: AdamConfig::default(),
            prior_fit_steps: 1000,
            log_every: 50,
        }
    }
}

impl ReplayConfig {
    /// Fills mode-implied values and checks every constraint.
    pub fn materialize(&mut self) -> Result<()> {
        match (self.mode, self.mode.forced_alpha(), self.alpha) {
            (ReplayMode::AlignCombined, _, None) => {
                return Err(config("replay.alpha is required when mode = align_combined"));
            }
            (_, Some(f), Some(a)) if a != f => {
                return Err(config(format!(
                    "replay.alpha may only be set when mode = align_combined ({} fixes alpha = {f})",
                    self.mode.as_str()
                )));
            }
            (_, Some(f), None) => self.alpha = Some(f),
            (m, None, Some(_)) if m != ReplayMode::AlignCombined => {
                return Err(config(format!(
                    "replay.alpha may only be set when mode = align_combined (mode is {})",
                    m.as_str()
                )));
            }
            _ => {}
        }
        if let Some(a) = self.alpha {
            check_alpha(a)?;
        }
        if !(self.lambda_base > 0.0) || !self.lambda_base.is_finite() {
            return Err(config("replay.lambda_base must be > 0"));
        }
        for (name, v) in [
            ("steps_per_task", self.steps_per_task),
            ("batch_size", self.batch_size),
            ("critic_steps", self.critic_steps),
            ("log_every", self.log_every),
        ] {
            if v == 0 {
                return Err(config(format!("replay.{name} must be > 0")));
            }
        }
        if !(self.clip > 0.0) {
            return Err(config("replay.clip must be > 0"));
        }
        if self.gp_weight < 0.0 || self.ac_weight < 0.0 || !(self.critic_distill >= 0.0) {
            return Err(config(
                "replay.gp_weight, replay.ac_weight and replay.critic_distill must be >= 0",
            ));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(config("replay.optimizer: need lr >= 0, beta in [0, 1), eps > 0"));
        }
        if self.feature_source == FeatureSource::Prior && self.prior_fit_steps == 0 {
            return Err(config("replay.prior_fit_steps must be > 0 for the prior source"));
        }
        if self.pairing == Pairing::Unpaired && self.mode.aligns() {
            let l2_feature = self.feature_source != FeatureSource::LearnedEncoder && self.alpha() > 0.0;
            let image = self.alpha() < 1.0;
            if l2_feature || image {
                return Err(config(
                    "replay.pairing = unpaired needs the adversarial feature source alone \
                     (l2 matching requires paired batches)",
                ));
            }
        }
        Ok(())
    }

    /// Effective blend weight; zero for modes without alignment.
    pub fn alpha(&self) -> f64 {
        if self.mode.aligns() {
            self.mode.forced_alpha().or(self.alpha).unwrap_or(0.0)
        } else {
            0.0
        }
    }

    fn feature_active(&self) -> bool {
        self.mode.aligns() && self.alpha() > 0.0
    }

    fn image_active(&self) -> bool {
        self.mode.aligns() && self.alpha() < 1.0
    }

    /// Coefficient of the critic's tap distillation at task `t`, zero when
    /// the term is off.
    fn critic_distill_weight(&self, t: usize) -> Result<f64> {
        if t < 2
            || self.feature_source != FeatureSource::Distilled
            || !self.feature_active()
            || self.critic_distill == 0.0
        {
            return Ok(0.0);
        }
        Ok(self.critic_distill * lambda_schedule(t, self.lambda_base)? * self.alpha() * (t - 1) as f64)
    }
}

/// `lambda_base / (t - 1)` for the 1-based task index `t`.
pub fn lambda_schedule(t: usize, lambda_base: f64) -> Result<f64> {
    if t < 2 {
        return Err(contract("lambda_t is defined from the second task on"));
    }
    Ok(lambda_base / (t - 1) as f64)
}

/// Frozen copy of the model at a task boundary.
#[derive(Debug, Clone)]
pub struct ReplaySnapshot {
    generator: Generator,
    critic: Option<Critic>,
    task: usize,
}

impl ReplaySnapshot {
    pub fn task(&self) -> usize {
        self.task
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn critic(&self) -> Option<&Critic> {
        self.critic.as_ref()
    }
}

/// One replay draw: a condition, latent codes and the snapshot's samples,
/// plus the live model's samples from the same codes when paired.
#[derive(Debug, Clone)]
pub struct ReplayBatch {
    pub conditions: Vec<ConditionId>,
    pub z: LatentBatch,
    pub snapshot: SampleBatch,
    pub current: Option<SampleBatch>,
}

/// Features of a replay batch under the configured source.
#[derive(Debug, Clone)]
pub struct FeaturePairs {
    pub current: FeatureBatch,
    /// Snapshot features paired with `current` (same condition, and same
    /// latent codes under paired replay).
    pub snapshot: FeatureBatch,
    /// Independent snapshot draw anchoring the adversarial pairs.
    pub snapshot_b: Option<FeatureBatch>,
}

/// One logged generator update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub task: usize,
    pub step: usize,
    pub critic_loss: f64,
    pub breakdown: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub task: usize,
    /// Rows logged every `log_every` steps.
    pub logs: Vec<StepLog>,
    /// Generator loss total of every step.
    pub totals: Vec<f64>,
    /// Mean of every step's breakdown.
    pub mean: LossBreakdown,
    /// Real draws per task (0-based) made while training this task.
    pub real_draws: Vec<u64>,
}

#[derive(Debug, Clone)]
struct Optimizers {
    generator: Adam,
    critic: Adam,
    encoder: Adam,
    feature_critic: Adam,
}

#[derive(Debug, Clone)]
struct Streams {
    latent: Rng,
    replay: Rng,
    penalty: Rng,
    mix: Rng,
    data: Vec<Rng>,
}

/// Everything a run mutates.
#[derive(Debug, Clone)]
pub struct EngineState {
    pub model: ModelState,
    pub config: ReplayConfig,
    pub snapshot: Option<ReplaySnapshot>,
    pub prior: Option<Encoder>,
    /// Tasks completed so far; the next task to train is `completed + 1`.
    pub completed: usize,
    num_conditions: usize,
    optim: Optimizers,
    streams: Streams,
    real_draws: Vec<u64>,
    next_tag: u64,
}

impl EngineState {
    pub fn new(
        config: &ReplayConfig,
        net: &NetConfig,
        stream: &TaskStream,
        seed: u64,
    ) -> Result<Self> {
        let mut config = config.clone();
        config.materialize()?;
        net.validate()?;
        let t = stream.len();
        let mut init = rng::stream(seed, "init");
        let model = ModelState::new(net, stream.data_dim(), t, stream.name.squash(), &mut init);
        let prior = if config.feature_source == FeatureSource::Prior {
            Some(fit_prior_encoder(stream, net, seed, config.prior_fit_steps)?)
        } else {
            None
        };
        let adam = || Adam::new(config.optimizer);
        Ok(Self {
            model,
            snapshot: None,
            prior,
            completed: 0,
            num_conditions: t,
            optim: Optimizers {
                generator: adam(),
                critic: adam(),
                encoder: adam(),
                feature_critic: adam(),
            },
            streams: Streams {
                latent: rng::stream(seed, "latent"),
                replay: rng::stream(seed, "replay"),
                penalty: rng::stream(seed, "penalty"),
                mix: rng::stream(seed, "mix"),
                data: (0..t).map(|i| stream.train_rng(i)).collect(),
            },
            real_draws: vec![0; t],
            next_tag: 0,
            config,
        })
    }

    pub fn num_conditions(&self) -> usize {
        self.num_conditions
    }

    /// The task currently being trained (1-based).
    pub fn current_task(&self) -> usize {
        self.completed + 1
    }

    /// Real rows drawn so far from each task's training split.
    pub fn real_draws(&self) -> &[u64] {
        &self.real_draws
    }

    fn latent(&mut self, n: usize, replay: bool) -> LatentBatch {
        let tag = self.next_tag;
        self.next_tag += 1;
        let dim = self.model.generator.latent_dim();
        let r = if replay {
            &mut self.streams.replay
        } else {
            &mut self.streams.latent
        };
        LatentBatch::sample(n, dim, r, tag)
    }

    fn draw_real(&mut self, stream: &TaskStream, task: usize, n: usize) -> Result<SampleBatch> {
        self.real_draws[task] += n as u64;
        sample_real(&stream.tasks[task], n, &mut self.streams.data[task])
    }
}

/// Frozen copy of the live generator (and the critic when the distilled
/// source needs it), tagged with the number of tasks completed.
pub fn take_snapshot(state: &EngineState) -> ReplaySnapshot {
    let mut generator = state.model.generator.clone();
    generator.set_frozen(true);
    let critic = (state.config.feature_source == FeatureSource::Distilled).then(|| {
        let mut c = state.model.critic.clone();
        c.set_frozen(true);
        c
    });
    ReplaySnapshot {
        generator,
        critic,
        task: state.completed,
    }
}

/// A replay draw for one condition chosen uniformly among the previous
/// tasks. `current` is filled only for the alignment modes.
pub fn build_replay_batch(state: &mut EngineState, n: usize) -> Result<ReplayBatch> {
    let t = state.current_task();
    if t < 2 {
        return Err(contract("replay needs at least one completed task"));
    }
    if n == 0 {
        return Err(contract("replay batch needs n > 0"));
    }
    if state.snapshot.is_none() {
        return Err(contract("replay needs a snapshot"));
    }
    let c = ConditionId(state.streams.replay.random_range(0..t - 1));
    let conditions = vec![c; n];
    let z = state.latent(n, true);
    let snap = state.snapshot.as_ref().expect("checked above");
    let snapshot = snap.generator.generate_rows(&conditions, &z, Provenance::Snapshot)?;
    let current = if state.config.mode.aligns() {
        Some(state.model.generator.generate_rows(&conditions, &z, Provenance::CurrentModel)?)
    } else {
        None
    };
    Ok(ReplayBatch {
        conditions,
        z,
        snapshot,
        current,
    })
}

/// Snapshot rows for replay-as-data: conditions drawn per row among the
/// previous tasks.
fn replay_rows(state: &mut EngineState, n: usize) -> Result<SampleBatch> {
    let prev = state.current_task() - 1;
    let conditions: Vec<ConditionId> = (0..n)
        .map(|_| ConditionId(state.streams.replay.random_range(0..prev)))
        .collect();
    let z = state.latent(n, true);
    let snap = state
        .snapshot
        .as_ref()
        .ok_or_else(|| contract("replay needs a snapshot"))?;
    snap.generator.generate_rows(&conditions, &z, Provenance::Snapshot)
}

/// Anchor draw for the adversarial pairs: same conditions, fresh codes.
fn anchor_draw(state: &mut EngineState, conditions: &[ConditionId]) -> Result<SampleBatch> {
    let z = state.latent(conditions.len(), true);
    let snap = state
        .snapshot
        .as_ref()
        .ok_or_else(|| contract("replay needs a snapshot"))?;
    snap.generator.generate_rows(conditions, &z, Provenance::Snapshot)
}

/// Reference draw paired with the current rows, or independent when
/// replay is unpaired.
fn reference_draw(state: &mut EngineState, batch: &ReplayBatch) -> Result<SampleBatch> {
    match state.config.pairing {
        Pairing::Paired => Ok(batch.snapshot.clone()),
        Pairing::Unpaired => anchor_draw(state, &batch.conditions),
    }
}

/// Snapshot-side features of `x` under the active source.
fn snapshot_features(state: &EngineState, x: &SampleBatch) -> Result<Tensor> {
    match state.config.feature_source {
        FeatureSource::Distilled => {
            let critic = state
                .snapshot
                .as_ref()
                .and_then(|s| s.critic.as_ref())
                .ok_or_else(|| contract("distilled features need the snapshot critic"))?;
            Ok(critic.criticize(x)?.2.h)
        }
        FeatureSource::Prior => Ok(prior_encoder(state)?.encode(x)?.h),
        FeatureSource::LearnedEncoder => Ok(state.model.encoder.encode(x)?.h),
    }
}

fn prior_encoder(state: &EngineState) -> Result<&Encoder> {
    match &state.prior {
        Some(e) if e.fitted => Ok(e),
        _ => Err(config("feature_source = prior needs a fitted prior encoder")),
    }
}

/// Live-side features of a graph variable; model parameters enter as
/// constants.
fn live_features(g: &mut Graph, state: &EngineState, x: Var) -> Result<Var> {
    Ok(match state.config.feature_source {
        FeatureSource::Distilled => state.model.critic.tap(g, x, false),
        FeatureSource::Prior => prior_encoder(state)?.features(g, x, false),
        FeatureSource::LearnedEncoder => state.model.encoder.features(g, x, false),
    })
}

/// Aligned features of a replay batch. For the learned encoder an
/// independent anchor draw is added for the pair critic.
pub fn feature_pairs(state: &mut EngineState, batch: &ReplayBatch) -> Result<FeaturePairs> {
    let current = batch
        .current
        .as_ref()
        .ok_or_else(|| contract("feature pairs need the live model's samples"))?;
    let source = state.config.feature_source;
    let h_cur = {
        let mut g = Graph::new();
        let x = g.constant(current.x.clone());
        let h = live_features(&mut g, state, x)?;
        g.value(h).clone()
    };
    let (reference, anchor) = if source == FeatureSource::LearnedEncoder {
        let reference = reference_draw(state, batch)?;
        let anchor = anchor_draw(state, &batch.conditions)?;
        (reference, Some(anchor))
    } else {
        (batch.snapshot.clone(), None)
    };
    let snapshot = FeatureBatch::from_samples(snapshot_features(state, &reference)?, source, &reference);
    let snapshot_b = match anchor {
        Some(a) => Some(FeatureBatch::from_samples(snapshot_features(state, &a)?, source, &a)),
        None => None,
    };
    Ok(FeaturePairs {
        current: FeatureBatch::from_samples(h_cur, source, current),
        snapshot,
        snapshot_b,
    })
}

/// Pre-fits a frozen encoder as a classifier of a disjoint stream.
pub fn fit_prior_encoder(stream: &TaskStream, net: &NetConfig, seed: u64, steps: usize) -> Result<Encoder> {
    let data = prior_fit_stream(stream)?;
    let t = data.len();
    let mut init = rng::stream(seed, "prior/init");
    let cfg = NetConfig {
        encoder_aux: true,
        ..net.clone()
    };
    let mut enc = Encoder::new(&cfg, data.data_dim(), t, "prior", &mut IdGen::new(), &mut init);
    let mut adam = Adam::new(AdamConfig {
        lr: 1e-3,
        beta1: 0.9,
        ..AdamConfig::default()
    });
    let mut pick = rng::stream(seed, "prior/labels");
    let mut draws: Vec<Rng> = (0..t).map(|i| rng::stream(seed, &format!("prior/data/{i}"))).collect();
    let n = 64;
    for _ in 0..steps {
        let labels: Vec<usize> = (0..n).map(|_| pick.random_range(0..t)).collect();
        let mut rows = Vec::with_capacity(n * data.data_dim());
        for &l in &labels {
            rows.extend_from_slice(sample_real(&data.tasks[l], 1, &mut draws[l])?.x.data());
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(n, data.data_dim(), rows)?);
        let out = enc.forward(&mut g, x, true);
        let logits = out.logits.expect("aux head forced on");
        let loss = class_cross_entropy(&mut g, logits, &labels)?;
        let grads = g.backward(loss)?;
        adam.apply(&grads, enc.params_mut())?;
    }
    enc.source = FeatureSource::Prior;
    enc.fitted = true;
    enc.set_frozen(true);
    Ok(enc)
}

/// Rows the critic treats as real for the current step, with their labels.
fn real_batch(state: &mut EngineState, stream: &TaskStream) -> Result<SampleBatch> {
    let t = state.current_task();
    let n = state.config.batch_size;
    match state.config.mode {
        ReplayMode::Joint => {
            let mut counts = vec![0usize; t];
            for _ in 0..n {
                counts[state.streams.mix.random_range(0..t)] += 1;
            }
            let mut parts = Vec::new();
            let mut conditions = Vec::with_capacity(n);
            for (i, &k) in counts.iter().enumerate() {
                if k > 0 {
                    parts.push(state.draw_real(stream, i, k)?.x);
                    conditions.extend(std::iter::repeat_n(ConditionId(i), k));
                }
            }
            let refs: Vec<&Tensor> = parts.iter().collect();
            Ok(SampleBatch {
                x: Tensor::vstack(&refs)?,
                conditions,
                provenance: Provenance::Real,
                latent_tag: None,
            })
        }
        ReplayMode::ReplayData if t > 1 => {
            let fresh = n.div_ceil(t);
            let new = state.draw_real(stream, t - 1, fresh)?;
            let old = replay_rows(state, n - fresh)?;
            let mut conditions = new.conditions.clone();
            conditions.extend(old.conditions.iter().copied());
            Ok(SampleBatch {
                x: Tensor::vstack(&[&new.x, &old.x])?,
                conditions,
                provenance: Provenance::Real,
                latent_tag: None,
            })
        }
        _ => state.draw_real(stream, t - 1, n),
    }
}

/// Conditions the generator is trained on this step.
fn generator_conditions(state: &mut EngineState) -> Vec<ConditionId> {
    let t = state.current_task();
    let n = state.config.batch_size;
    match state.config.mode {
        ReplayMode::Joint => (0..n)
            .map(|_| ConditionId(state.streams.mix.random_range(0..t)))
            .collect(),
        ReplayMode::ReplayData if t > 1 => {
            let fresh = n.div_ceil(t);
            let mut c = vec![ConditionId(t - 1); fresh];
            c.extend((fresh..n).map(|_| ConditionId(state.streams.mix.random_range(0..t - 1))));
            c
        }
        _ => vec![ConditionId(t - 1); n],
    }
}

fn labels(c: &[ConditionId]) -> Vec<usize> {
    c.iter().map(|c| c.0).collect()
}

fn critic_step(state: &mut EngineState, stream: &TaskStream) -> Result<f64> {
    let real = real_batch(state, stream)?;
    let z = state.latent(real.len(), false);
    let fake = state
        .model
        .generator
        .generate_rows(&real.conditions, &z, Provenance::CurrentModel)?;
    let cfg = state.config.clone();
    let mut g = Graph::new();
    let rv = g.constant(real.x.clone());
    let fv = g.constant(fake.x.clone());
    let critic = &state.model.critic;
    let mut loss = critic_gap(&mut g, critic, rv, fv, true)?;
    let value = g.scalar(loss);
    if cfg.lipschitz == LipschitzMode::GradientPenalty && cfg.gp_weight > 0.0 {
        let gp = gradient_penalty(&mut g, critic, &real.x, &fake.x, &mut state.streams.penalty, true)?;
        let w = g.scale(gp, cfg.gp_weight);
        loss = g.add(loss, w);
    }
    if let (Some(_), true) = (&critic.aux, cfg.ac_weight > 0.0) {
        let out = critic.forward(&mut g, rv, true);
        let ce = class_cross_entropy(&mut g, out.logits.expect("aux head"), &labels(&real.conditions))?;
        let w = g.scale(ce, cfg.ac_weight);
        loss = g.add(loss, w);
    }
    let distill = cfg.critic_distill_weight(state.current_task())?;
    if distill > 0.0 {
        let rows = replay_rows(state, cfg.batch_size)?;
        let target = g.constant(snapshot_features(state, &rows)?);
        let x = g.constant(rows.x);
        let h = state.model.critic.tap(&mut g, x, true);
        let d = paired_l2(&mut g, h, target)?;
        let w = g.scale(d, distill);
        loss = g.add(loss, w);
    }
    let grads = g.backward(loss)?;
    state.optim.critic.apply(&grads, state.model.critic.params_mut())?;
    if cfg.lipschitz == LipschitzMode::WeightClip {
        weight_clip(state.model.critic.score_params_mut(), cfg.clip)?;
    }
    Ok(value)
}

/// One update of the pair critic and the learned encoder.
fn feature_critic_step(state: &mut EngineState) -> Result<()> {
    let batch = build_replay_batch(state, state.config.batch_size)?;
    let reference = reference_draw(state, &batch)?;
    let anchor = anchor_draw(state, &batch.conditions)?;
    let current = batch.current.as_ref().expect("alignment mode");
    let cfg = state.config.clone();
    let enc_trainable = true;
    let mut g = Graph::new();
    let (xc, xr, xa) = (
        g.constant(current.x.clone()),
        g.constant(reference.x.clone()),
        g.constant(anchor.x.clone()),
    );
    let enc = &state.model.encoder;
    let hc = enc.features(&mut g, xc, enc_trainable);
    let ro = enc.forward(&mut g, xr, enc_trainable);
    let ha = enc.features(&mut g, xa, enc_trainable);
    let fc = &state.model.feature_critic;
    let pl = feature_pair_losses(&mut g, fc, hc, ha, ro.h, true)?;
    let mut fc_loss = pl.critic;
    if cfg.lipschitz == LipschitzMode::GradientPenalty && cfg.gp_weight > 0.0 {
        let fake = g.concat_cols(hc, ha);
        let real = g.concat_cols(ro.h, ha);
        let (fake, real) = (g.value(fake).clone(), g.value(real).clone());
        let gp = gradient_penalty(&mut g, fc, &real, &fake, &mut state.streams.penalty, true)?;
        let w = g.scale(gp, cfg.gp_weight);
        fc_loss = g.add(fc_loss, w);
    }
    let mut enc_loss = match cfg.encoder_role {
        EncoderRole::WithCritic => pl.critic,
        EncoderRole::AgainstCritic => g.neg(pl.critic),
    };
    if let (Some(logits), true) = (ro.logits, cfg.ac_weight > 0.0) {
        let ce = class_cross_entropy(&mut g, logits, &labels(&reference.conditions))?;
        let w = g.scale(ce, cfg.ac_weight);
        enc_loss = g.add(enc_loss, w);
    }
    let fc_grads = g.backward(fc_loss)?;
    let enc_grads = g.backward(enc_loss)?;
    state
        .optim
        .feature_critic
        .apply(&fc_grads, state.model.feature_critic.params_mut())?;
    state.optim.encoder.apply(&enc_grads, state.model.encoder.params_mut())?;
    if cfg.lipschitz == LipschitzMode::WeightClip {
        weight_clip(state.model.feature_critic.params_mut(), cfg.clip)?;
    }
    if cfg.encoder_role == EncoderRole::WithCritic {
        weight_clip(state.model.encoder.params_mut(), cfg.clip)?;
    }
    Ok(())
}

/// Feature-term graph for the generator update. Returns the scalar term.
fn feature_term(g: &mut Graph, state: &mut EngineState, batch: &ReplayBatch, x_cur: Var) -> Result<Var> {
    let h_cur = live_features(g, state, x_cur)?;
    if state.config.feature_source == FeatureSource::LearnedEncoder {
        let reference = reference_draw(state, batch)?;
        let anchor = anchor_draw(state, &batch.conditions)?;
        let hr = g.constant(snapshot_features(state, &reference)?);
        let ha = g.constant(snapshot_features(state, &anchor)?);
        let pl = feature_pair_losses(g, &state.model.feature_critic, h_cur, ha, hr, false)?;
        Ok(pl.matcher)
    } else {
        let hs = g.constant(snapshot_features(state, &batch.snapshot)?);
        paired_l2(g, h_cur, hs)
    }
}

fn generator_step(state: &mut EngineState) -> Result<LossBreakdown> {
    let t = state.current_task();
    let cfg = state.config.clone();
    let conds = generator_conditions(state);
    let z = state.latent(conds.len(), false);
    let mut g = Graph::new();
    let zv = g.constant(z.z.clone());
    let fake = state.model.generator.forward(&mut g, &labels(&conds), zv, true);
    let current = generator_adversarial(&mut g, &state.model.critic, fake, false)?;
    let aux = match (&state.model.critic.aux, cfg.ac_weight > 0.0) {
        (Some(_), true) => {
            let out = state.model.critic.forward(&mut g, fake, false);
            Some(class_cross_entropy(&mut g, out.logits.expect("aux head"), &labels(&conds))?)
        }
        _ => None,
    };

    let replay = cfg.mode.aligns() && t > 1;
    let (mut feature, mut image) = (None, None);
    if replay {
        let batch = build_replay_batch(state, cfg.batch_size)?;
        let zr = g.constant(batch.z.z.clone());
        let x_cur = state.model.generator.forward(&mut g, &labels(&batch.conditions), zr, true);
        let scale = (t - 1) as f64;
        if cfg.feature_active() {
            let f = feature_term(&mut g, state, &batch, x_cur)?;
            feature = Some(g.scale(f, scale));
        }
        if cfg.image_active() {
            let xs = g.constant(batch.snapshot.x.clone());
            let i = paired_l2(&mut g, x_cur, xs)?;
            image = Some(g.scale(i, scale));
        }
    }
    let lambda_t = if replay { lambda_schedule(t, cfg.lambda_base)? } else { 0.0 };
    let alpha = cfg.alpha();
    let parts = LossParts {
        current_task: g.scalar(current),
        feature_term: feature.map(|v| g.scalar(v)),
        image_term: image.map(|v| g.scalar(v)),
        aux_class_term: aux.map_or(0.0, |v| g.scalar(v)),
        aux_weight: if aux.is_some() { cfg.ac_weight } else { 0.0 },
        ..LossParts::default()
    };
    let breakdown = compose_objective(&parts, lambda_t, alpha)?;
    if !breakdown.is_finite() {
        return Err(Error::Training {
            task: t,
            step: 0,
            detail: "non-finite generator loss".into(),
            breakdown: Some(Box::new(breakdown)),
        });
    }
    let total = compose_graph(
        &mut g,
        current,
        feature,
        image,
        aux.map(|a| (a, cfg.ac_weight)),
        lambda_t,
        alpha,
    );
    let grads = g.backward(total)?;
    state
        .optim
        .generator
        .apply(&grads, state.model.generator.params_mut())?;
    Ok(breakdown)
}

fn at_step(e: Error, task: usize, step: usize, last: Option<LossBreakdown>) -> Error {
    match e {
        Error::Training { detail, breakdown, .. } => Error::Training {
            task,
            step,
            detail,
            breakdown: breakdown.or(last.map(Box::new)),
        },
        Error::Numeric { .. } => Error::Training {
            task,
            step,
            detail: e.to_string(),
            breakdown: last.map(Box::new),
        },
        other => other,
    }
}

/// Trains the next task of `stream` for `steps_per_task` iterations.
pub fn train_task(state: &mut EngineState, stream: &TaskStream) -> Result<TaskOutcome> {
    let t = state.current_task();
    if t > stream.len() || stream.len() != state.num_conditions {
        return Err(contract(format!("task {t} is not part of this stream")));
    }
    if t > 1 && state.config.mode.uses_snapshot() {
        state.snapshot = Some(take_snapshot(state));
    }
    let cfg = state.config.clone();
    let draws_before = state.real_draws.clone();
    let learned = cfg.feature_source == FeatureSource::LearnedEncoder && cfg.feature_active() && t > 1;
    let mut logs = Vec::new();
    let mut totals = Vec::with_capacity(cfg.steps_per_task);
    let mut sum = LossBreakdown::default();
    let mut last: Option<LossBreakdown> = None;
    for step in 1..=cfg.steps_per_task {
        let run = |state: &mut EngineState| -> Result<(f64, LossBreakdown)> {
            let mut critic_loss = 0.0;
            for _ in 0..cfg.critic_steps {
                critic_loss = critic_step(state, stream)?;
            }
            if !critic_loss.is_finite() {
                return Err(Error::Training {
                    task: t,
                    step,
                    detail: "non-finite critic loss".into(),
                    breakdown: None,
                });
            }
            if learned {
                feature_critic_step(state)?;
            }
            Ok((critic_loss, generator_step(state)?))
        };
        let (critic_loss, b) = run(state).map_err(|e| at_step(e, t, step, last))?;
        totals.push(b.total);
        add_into(&mut sum, &b);
        last = Some(b);
        if step % cfg.log_every == 0 || step == cfg.steps_per_task {
            logs.push(StepLog {
                task: t,
                step,
                critic_loss,
                breakdown: b,
            });
        }
    }
    let n = cfg.steps_per_task as f64;
    let mean = LossBreakdown {
        current_task: sum.current_task / n,
        feature_term: sum.feature_term / n,
        image_term: sum.image_term / n,
        aux_class_term: sum.aux_class_term / n,
        lipschitz_term: sum.lipschitz_term / n,
        total: sum.total / n,
        lambda_t: last.map_or(0.0, |b| b.lambda_t),
        alpha: last.map_or(0.0, |b| b.alpha),
    };
    state.completed = t;
    let real_draws = state
        .real_draws
        .iter()
        .zip(&draws_before)
        .map(|(a, b)| a - b)
        .collect();
    Ok(TaskOutcome {
        task: t,
        logs,
        totals,
        mean,
        real_draws,
    })
}

fn add_into(sum: &mut LossBreakdown, b: &LossBreakdown) {
    sum.current_task += b.current_task;
    sum.feature_term += b.feature_term;
    sum.image_term += b.image_term;
    sum.aux_class_term += b.aux_class_term;
    sum.lipschitz_term += b.lipschitz_term;
    sum.total += b.total;
}

/// End-of-task evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub samples_per_condition: usize,
    pub distance: DistanceKind,
    pub classifier: ClassifierConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_condition: 2000,
            distance: DistanceKind::Frechet,
            classifier: ClassifierConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, data_dim: usize) -> Result<()> {
        if self.distance == DistanceKind::Frechet && self.samples_per_condition < data_dim + 1 {
            return Err(config(format!(
                "eval.samples_per_condition must be >= {} for Frechet fits",
                data_dim + 1
            )));
        }
        if self.samples_per_condition == 0 {
            return Err(config("eval.samples_per_condition must be > 0"));
        }
        Ok(())
    }
}

/// Scores of the generator after a task, one entry per seen condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub distances: Vec<f64>,
    pub accuracy: Vec<f64>,
}

/// Distance and accuracy of every condition seen so far. Conditions are
/// scored in parallel, each from its own rng stream.
pub fn evaluate_seen(
    generator: &Generator,
    classifier: &Classifier,
    held_out: &[SampleBatch],
    eval: &EvalConfig,
    t: usize,
    seed: u64,
) -> Result<TaskEvaluation> {
    use rayon::prelude::*;
    if t == 0 || t > held_out.len() {
        return Err(contract("evaluation needs 1 <= t <= T"));
    }
    let scored: Vec<(f64, f64)> = (0..t)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &format!("eval/{t}/{i}"));
            let c = ConditionId(i);
            let acc = accuracy_per_condition(classifier, generator, &[c], eval.samples_per_condition, &mut r)?[0];
            let d = match eval.distance {
                DistanceKind::AccuracyDrop => 1.0 - acc,
                DistanceKind::Frechet => {
                    let x = generator.sample(c, eval.samples_per_condition, &mut r)?;
                    frechet_gaussian(&x.x, &held_out[i].x)?
                }
            };
            Ok((d, acc))
        })
        .collect::<Result<_>>()?;
    Ok(TaskEvaluation {
        distances: scored.iter().map(|s| s.0).collect(),
        accuracy: scored.iter().map(|s| s.1).collect(),
    })
}

/// Everything a stream run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub replay: ReplayConfig,
    pub model: NetConfig,
    pub eval: EvalConfig,
    pub seed: u64,
    pub config_hash: String,
    /// Echo of the full configuration, embedded in the report.
    pub config_echo: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: usize,
    pub mean_loss: LossBreakdown,
    pub last_loss: LossBreakdown,
    pub distances: Vec<f64>,
    pub accuracy: Vec<f64>,
    /// Mean accuracy over the conditions seen so far.
    pub accuracy_proxy: f64,
    pub real_draws: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub classifier_secs: f64,
    pub task_secs: Vec<f64>,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub tasks: Vec<TaskSummary>,
    pub ledger: ForgetfulnessLedger,
    pub forgetfulness: Option<ForgetfulnessReport>,
    pub classifier_accuracy: f64,
    /// Accuracy proxy after task `T / 2` (rounded down, at least 1).
    pub accuracy_half: f64,
    pub accuracy_final: f64,
    pub warnings: Vec<String>,
    pub timings: Timings,
}

impl RunReport {
    /// The report with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Timings::default(),
            ..self.clone()
        }
    }
}

/// Called after every task with the state and what the task produced.
pub trait TaskObserver {
    fn task_done(&mut self, state: &EngineState, outcome: &TaskOutcome, summary: &TaskSummary) -> Result<()>;
}

impl TaskObserver for () {
    fn task_done(&mut self, _: &EngineState, _: &TaskOutcome, _: &TaskSummary) -> Result<()> {
        Ok(())
    }
}

/// Trains every task of `stream` in order and scores forgetting.
pub fn run_stream(
    spec: &RunSpec,
    stream: &TaskStream,
    observer: &mut dyn TaskObserver,
) -> Result<(EngineState, ForgetfulnessLedger, RunReport)> {
    let start = Instant::now();
    spec.eval.validate(stream.data_dim())?;
    let mut state = EngineState::new(&spec.replay, &spec.model, stream, spec.seed)?;
    let clf_start = Instant::now();
    let fit = train_reference_classifier(stream, spec.seed, &spec.model, &spec.eval.classifier)?;
    let classifier_secs = clf_start.elapsed().as_secs_f64();
    let held_out: Vec<SampleBatch> = (0..stream.len())
        .map(|i| stream.held_out(i, spec.eval.samples_per_condition))
        .collect::<Result<_>>()?;

    let mut ledger = ForgetfulnessLedger::new(spec.eval.distance);
    let mut tasks = Vec::with_capacity(stream.len());
    let mut task_secs = Vec::with_capacity(stream.len());
    for t in 1..=stream.len() {
        let ts = Instant::now();
        let outcome = train_task(&mut state, stream)?;
        let ev = evaluate_seen(&state.model.generator, &fit.classifier, &held_out, &spec.eval, t, spec.seed)?;
        ledger.record_task(t, &ev.distances)?;
        let summary = TaskSummary {
            task: t,
            mean_loss: outcome.mean,
            last_loss: outcome.logs.last().map(|l| l.breakdown).unwrap_or_default(),
            accuracy_proxy: ev.accuracy.iter().sum::<f64>() / t as f64,
            distances: ev.distances,
            accuracy: ev.accuracy,
            real_draws: outcome.real_draws.clone(),
        };
        observer.task_done(&state, &outcome, &summary)?;
        tasks.push(summary);
        task_secs.push(ts.elapsed().as_secs_f64());
    }

    let big_t = stream.len();
    let mut warnings = Vec::new();
    if fit.held_out_accuracy < 0.9 {
        warnings.push(format!(
            "reference classifier held-out accuracy {:.3} is below 0.9; accuracy metrics are unreliable",
            fit.held_out_accuracy
        ));
    }
    let own: Vec<f64> = (1..=big_t).filter_map(|t| ledger.get(t, t)).collect();
    let mut sorted = own.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.is_empty() {
        0.0
    } else if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    for (k, d) in own.iter().enumerate() {
        if *d > 5.0 * median {
            warnings.push(format!(
                "task {} was learned poorly (own distance {d:.4} > 5x median {median:.4}); its forgetfulness score may be misleading",
                k + 1
            ));
        }
    }
    let half = (big_t / 2).max(1);
    let report = RunReport {
        config_hash: spec.config_hash.clone(),
        seed: spec.seed,
        config: spec.config_echo.clone(),
        accuracy_half: tasks[half - 1].accuracy_proxy,
        accuracy_final: tasks[big_t - 1].accuracy_proxy,
        tasks,
        forgetfulness: ForgetfulnessReport::from_ledger(&ledger)?,
        ledger: ledger.clone(),
        classifier_accuracy: fit.held_out_accuracy,
        warnings,
        timings: Timings {
            classifier_secs,
            task_secs,
            total_secs: start.elapsed().as_secs_f64(),
        },
    };
    Ok((state, ledger, report))
}
