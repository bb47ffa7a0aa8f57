//! Loss terms. Graph-level builders take and return [`Var`]s so the engine
//! can differentiate them; the batch-level functions evaluate the same
//! builders on plain tensors and enforce the batch contracts.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Parameter, Var};
use crate::error::{config, contract, Result};
use crate::nets::{ConditionId, Critic, FeatureBatch, FeatureCritic, SampleBatch};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Default clamp for weight clipping.
pub const DEFAULT_CLIP: f64 = 0.05;
/// Coefficient on the gradient penalty.
pub const GP_WEIGHT: f64 = 10.0;
/// Stabilizes the norm of an exactly zero input gradient.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzMode {
    WeightClip,
    GradientPenalty,
}

/// A scalar scoring network usable as a Wasserstein critic.
pub trait Scorer {
    /// `n x 1` scores.
    fn score(&self, g: &mut Graph, x: Var, trainable: bool) -> Var;
    /// `d score / d x`, itself differentiable in the parameters.
    fn input_gradient(&self, g: &mut Graph, x: Var, trainable: bool) -> Var;
}

impl Scorer for Critic {
    fn score(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let h = self.body.forward(g, x, trainable);
        self.score.forward(g, h, trainable)
    }
    fn input_gradient(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        Critic::input_gradient(self, g, x, trainable)
    }
}

impl Scorer for FeatureCritic {
    fn score(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        self.forward(g, x, trainable)
    }
    fn input_gradient(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        FeatureCritic::input_gradient(self, g, x, trainable)
    }
}

/// `psi(x) = slope * sum_j x_j`. Handy as an analytic critic.
#[derive(Debug, Clone, Copy)]
pub struct LinearScore {
    pub slope: f64,
}

impl Scorer for LinearScore {
    fn score(&self, g: &mut Graph, x: Var, _trainable: bool) -> Var {
        let s = g.sum_cols(x);
        g.scale(s, self.slope)
    }
    fn input_gradient(&self, g: &mut Graph, x: Var, _trainable: bool) -> Var {
        let shape = g.value(x).shape().to_vec();
        g.constant(Tensor::full(&shape, self.slope))
    }
}

fn check_pair_rows(g: &Graph, a: Var, b: Var) -> Result<()> {
    let (x, y) = (g.value(a), g.value(b));
    if x.rows() == 0 || y.rows() == 0 {
        return Err(contract("empty batch"));
    }
    if x.shape() != y.shape() {
        return Err(contract(format!(
            "batch shapes differ: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// `mean psi(fake) - mean psi(real)`, the quantity the critic minimizes.
pub fn critic_gap<S: Scorer>(
    g: &mut Graph,
    critic: &S,
    real: Var,
    fake: Var,
    trainable: bool,
) -> Result<Var> {
    check_pair_rows(g, real, fake)?;
    let sf = critic.score(g, fake, trainable);
    let sr = critic.score(g, real, trainable);
    let mf = g.mean(sf);
    let mr = g.mean(sr);
    Ok(g.sub(mf, mr))
}

/// `-mean psi(fake)`, minimized by the generator.
pub fn generator_adversarial<S: Scorer>(
    g: &mut Graph,
    critic: &S,
    fake: Var,
    trainable: bool,
) -> Result<Var> {
    if g.value(fake).rows() == 0 {
        return Err(contract("empty batch"));
    }
    let s = critic.score(g, fake, trainable);
    let m = g.mean(s);
    Ok(g.neg(m))
}

fn check_same_conditions(real: &SampleBatch, fake: &SampleBatch) -> Result<()> {
    if real.is_empty() || fake.is_empty() {
        return Err(contract("empty batch"));
    }
    if real.conditions != fake.conditions {
        return Err(contract("real and fake batches carry different conditions"));
    }
    Ok(())
}

/// Critic-side Wasserstein loss on two batches.
pub fn wasserstein_critic_loss<S: Scorer>(critic: &S, real: &SampleBatch, fake: &SampleBatch) -> Result<f64> {
    check_same_conditions(real, fake)?;
    let mut g = Graph::new();
    let r = g.constant(real.x.clone());
    let f = g.constant(fake.x.clone());
    let l = critic_gap(&mut g, critic, r, f, false)?;
    Ok(g.scalar(l))
}

/// Generator-side Wasserstein loss on a batch of generated rows.
pub fn wasserstein_generator_loss<S: Scorer>(critic: &S, fake: &SampleBatch) -> Result<f64> {
    let mut g = Graph::new();
    let f = g.constant(fake.x.clone());
    let l = generator_adversarial(&mut g, critic, f, false)?;
    Ok(g.scalar(l))
}

/// `mean (||grad psi(x_hat)|| - 1)^2` over interpolates
/// `x_hat = u real + (1 - u) fake`, one uniform `u` per row.
pub fn gradient_penalty<S: Scorer>(
    g: &mut Graph,
    critic: &S,
    real: &Tensor,
    fake: &Tensor,
    rng: &mut Rng,
    trainable: bool,
) -> Result<Var> {
    if real.shape() != fake.shape() || real.rows() == 0 {
        return Err(contract("gradient penalty needs equal non-empty batches"));
    }
    let (n, d) = (real.rows(), real.cols());
    let mut mix = Vec::with_capacity(n * d);
    for r in 0..n {
        let u: f64 = rng.random();
        for c in 0..d {
            mix.push(u * real.get(r, c) + (1.0 - u) * fake.get(r, c));
        }
    }
    let x = g.constant(Tensor::matrix(n, d, mix)?);
    let grad = critic.input_gradient(g, x, trainable);
    let norm = g.row_norm(grad, NORM_EPS);
    let dev = g.add_scalar(norm, -1.0);
    let sq = g.square(dev);
    Ok(g.mean(sq))
}

/// Clamps every parameter into `[-c, c]`. Returns the (zero) penalty.
pub fn weight_clip<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(config("weight clip bound must be > 0"));
    }
    for p in params {
        p.clamp(c);
    }
    Ok(0.0)
}

/// Mean over rows of the squared Euclidean distance between paired rows.
pub fn paired_l2(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    check_pair_rows(g, a, b)?;
    let n = g.value(a).rows() as f64;
    let d = g.sub(a, b);
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / n))
}

pub fn feature_l2(current: &FeatureBatch, snapshot: &FeatureBatch) -> Result<f64> {
    if !current.is_paired_with(snapshot) {
        return Err(contract(
            "l2 feature matching needs paired batches (same latent draw and conditions)",
        ));
    }
    let mut g = Graph::new();
    let a = g.constant(current.h.clone());
    let b = g.constant(snapshot.h.clone());
    let l = paired_l2(&mut g, a, b)?;
    Ok(g.scalar(l))
}

pub fn image_l2(current: &SampleBatch, snapshot: &SampleBatch) -> Result<f64> {
    if !current.is_paired_with(snapshot) {
        return Err(contract(
            "image alignment needs paired batches (same latent draw and conditions)",
        ));
    }
    let mut g = Graph::new();
    let a = g.constant(current.x.clone());
    let b = g.constant(snapshot.x.clone());
    let l = paired_l2(&mut g, a, b)?;
    Ok(g.scalar(l))
}

/// Critic and matcher losses over feature pairs. The fake pair is
/// `(current, anchor)`, the real pair `(reference, anchor)`.
#[derive(Debug, Clone, Copy)]
pub struct PairLosses {
    /// `mean psi(fake pair) - mean psi(real pair)`.
    pub critic: Var,
    /// `-mean psi(fake pair)`.
    pub matcher: Var,
}

pub fn feature_pair_losses(
    g: &mut Graph,
    critic: &FeatureCritic,
    current: Var,
    anchor: Var,
    reference: Var,
    trainable: bool,
) -> Result<PairLosses> {
    check_pair_rows(g, current, anchor)?;
    check_pair_rows(g, current, reference)?;
    if 2 * g.value(current).cols() != critic.input_width() {
        return Err(contract("feature width does not match the pair critic"));
    }
    let fake = g.concat_cols(current, anchor);
    let real = g.concat_cols(reference, anchor);
    let critic_loss = critic_gap(g, critic, real, fake, trainable)?;
    let sf = critic.forward(g, fake, trainable);
    let mf = g.mean(sf);
    let matcher = g.neg(mf);
    Ok(PairLosses {
        critic: critic_loss,
        matcher,
    })
}

/// Batch-level pair losses: `(critic side, matcher side)`.
pub fn feature_adversarial_loss(
    critic: &FeatureCritic,
    current: &FeatureBatch,
    anchor: &FeatureBatch,
    reference: &FeatureBatch,
) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let c = g.constant(current.h.clone());
    let a = g.constant(anchor.h.clone());
    let r = g.constant(reference.h.clone());
    let l = feature_pair_losses(&mut g, critic, c, a, r, false)?;
    Ok((g.scalar(l.critic), g.scalar(l.matcher)))
}

/// Mean cross-entropy of softmax(logits) against per-row labels.
pub fn class_cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let t = g.value(logits);
    if t.rows() != labels.len() || t.rows() == 0 {
        return Err(contract("one label per logit row"));
    }
    if labels.iter().any(|&l| l >= t.cols()) {
        return Err(contract("label out of range"));
    }
    let ls = g.log_softmax(logits);
    let picked = g.pick_cols(ls, labels);
    let m = g.mean(picked);
    Ok(g.neg(m))
}

pub fn aux_class_loss(logits: &Tensor, condition: ConditionId) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let labels = vec![condition.0; logits.rows()];
    let ce = class_cross_entropy(&mut g, l, &labels)?;
    Ok(g.scalar(ce))
}

/// Raw loss terms of one generator update, before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub current_task: f64,
    /// Absent when no previous tasks exist or the mode has no feature term.
    pub feature_term: Option<f64>,
    pub image_term: Option<f64>,
    pub aux_class_term: f64,
    pub aux_weight: f64,
    pub lipschitz_term: f64,
    pub lipschitz_weight: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub current_task: f64,
    pub feature_term: f64,
    pub image_term: f64,
    pub aux_class_term: f64,
    pub lipschitz_term: f64,
    pub total: f64,
    pub lambda_t: f64,
    pub alpha: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.current_task,
            self.feature_term,
            self.image_term,
            self.aux_class_term,
            self.lipschitz_term,
            self.total,
            self.lambda_t,
            self.alpha,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `total = current + lambda (alpha F + (1 - alpha) I) + w_aux aux + w_lip lip`.
pub fn compose_objective(parts: &LossParts, lambda_t: f64, alpha: f64) -> Result<LossBreakdown> {
    check_alpha(alpha)?;
    let replay = parts.feature_term.is_some() || parts.image_term.is_some();
    if replay && !(lambda_t > 0.0) {
        return Err(contract("lambda_t must be > 0 when replay terms are present"));
    }
    let f = parts.feature_term.unwrap_or(0.0);
    let i = parts.image_term.unwrap_or(0.0);
    let mut total = parts.current_task;
    if replay {
        total += lambda_t * (alpha * f + (1.0 - alpha) * i);
    }
    total += parts.aux_weight * parts.aux_class_term;
    total += parts.lipschitz_weight * parts.lipschitz_term;
    Ok(LossBreakdown {
        current_task: parts.current_task,
        feature_term: f,
        image_term: i,
        aux_class_term: parts.aux_class_term,
        lipschitz_term: parts.lipschitz_term,
        total,
        lambda_t,
        alpha,
    })
}

/// Graph counterpart of [`compose_objective`] for the generator update.
/// Terms whose coefficient is exactly zero are left out of the graph.
pub fn compose_graph(
    g: &mut Graph,
    current: Var,
    feature: Option<Var>,
    image: Option<Var>,
    aux: Option<(Var, f64)>,
    lambda_t: f64,
    alpha: f64,
) -> Var {
    let mut replay: Option<Var> = None;
    for (term, w) in [(feature, alpha), (image, 1.0 - alpha)] {
        if let Some(v) = term {
            if w != 0.0 {
                let s = g.scale(v, w);
                replay = Some(match replay {
                    Some(r) => g.add(r, s),
                    None => s,
                });
            }
        }
    }
    let mut total = current;
    if let Some(r) = replay {
        let s = g.scale(r, lambda_t);
        total = g.add(total, s);
    }
    if let Some((a, w)) = aux {
        if w != 0.0 {
            let s = g.scale(a, w);
            total = g.add(total, s);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, IdGen};
    use crate::nets::{NetConfig, Provenance};
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> Tensor {
        Tensor::matrix(v.len(), 1, v.to_vec()).unwrap()
    }

    fn batch(x: Tensor) -> SampleBatch {
        SampleBatch::real(x, ConditionId(0))
    }

    fn paired(x: Tensor, p: Provenance) -> SampleBatch {
        let n = x.rows();
        SampleBatch {
            x,
            conditions: vec![ConditionId(1); n],
            provenance: p,
            latent_tag: Some(42),
        }
    }

    fn feats(h: Tensor, tag: Option<u64>) -> FeatureBatch {
        let n = h.rows();
        FeatureBatch {
            h,
            source: crate::nets::FeatureSource::Distilled,
            conditions: vec![ConditionId(0); n],
            latent_tag: tag,
        }
    }

    #[test]
    fn identical_batches_have_zero_gap() {
        let mut rng = crate::rng::stream(1, "c");
        let c = Critic::new(&NetConfig::default(), 2, 3, &mut IdGen::new(), &mut rng);
        let x = batch(Tensor::matrix(3, 2, vec![0.1, 0.2, -1.0, 3.0, 0.5, 0.5]).unwrap());
        assert_eq!(wasserstein_critic_loss(&c, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn linear_critic_gap() {
        let real = batch(col(&[0.0, 2.0]));
        let fake = batch(col(&[-1.0, 1.0]));
        let l = wasserstein_critic_loss(&LinearScore { slope: 1.0 }, &real, &fake).unwrap();
        assert_eq!(l, -1.0);
        assert_eq!(wasserstein_generator_loss(&LinearScore { slope: 1.0 }, &fake).unwrap(), 0.0);
        let empty = batch(Tensor::zeros(&[0, 1]));
        assert!(wasserstein_critic_loss(&LinearScore { slope: 1.0 }, &empty, &empty).is_err());
    }

    #[test]
    fn gap_matches_independent_forward() {
        let mut rng = crate::rng::stream(8, "c");
        let c = Critic::new(&NetConfig::default(), 2, 3, &mut IdGen::new(), &mut rng);
        let mk = |rng: &mut Rng| {
            Tensor::matrix(6, 2, (0..12).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
        };
        let (r, f) = (mk(&mut rng), mk(&mut rng));
        let psi = |x: &Tensor| -> f64 {
            let h = c.body.eval_all(x);
            let top = h.last().unwrap();
            let w = &c.score.weight.value;
            let b = c.score.bias.value.data()[0];
            (0..x.rows())
                .map(|i| b + (0..top.cols()).map(|j| top.get(i, j) * w.get(j, 0)).sum::<f64>())
                .sum::<f64>()
                / x.rows() as f64
        };
        let l = wasserstein_critic_loss(&c, &batch(r.clone()), &batch(f.clone())).unwrap();
        assert!((l - (psi(&f) - psi(&r))).abs() < 1e-12);
    }

    #[test]
    fn penalty_of_linear_critics() {
        let mut rng = crate::rng::stream(0, "gp");
        let (r, f) = (col(&[1.0, -2.0, 0.3]), col(&[0.0, 5.0, 0.1]));
        for (slope, expect) in [(1.0, 0.0), (2.0, 1.0)] {
            let mut g = Graph::new();
            let p = gradient_penalty(&mut g, &LinearScore { slope }, &r, &f, &mut rng, false).unwrap();
            assert!((g.scalar(p) - expect).abs() < 1e-11);
        }
    }

    #[test]
    fn clip_bounds_parameters() {
        let mut rng = crate::rng::stream(3, "c");
        let mut c = Critic::new(&NetConfig::default(), 2, 3, &mut IdGen::new(), &mut rng);
        assert_eq!(weight_clip(c.score_params_mut(), 0.01).unwrap(), 0.0);
        for p in c.score_params_mut() {
            assert!(p.value.data().iter().all(|v| v.abs() <= 0.01));
        }
        assert!(weight_clip(c.score_params_mut(), 0.0).is_err());
    }

    #[test]
    fn l2_examples() {
        let a = feats(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(), Some(1));
        let b = feats(Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap(), Some(1));
        assert_eq!(feature_l2(&a, &a).unwrap(), 0.0);
        assert_eq!(feature_l2(&a, &b).unwrap(), 2.0);
        let unpaired = feats(b.h.clone(), Some(2));
        assert!(feature_l2(&a, &unpaired).is_err());
        assert!(feature_l2(&feats(a.h.clone(), None), &feats(a.h.clone(), None)).is_err());

        let x = paired(col(&[3.0]), Provenance::CurrentModel);
        let y = paired(col(&[1.0]), Provenance::Snapshot);
        assert_eq!(image_l2(&x, &x).unwrap(), 0.0);
        assert_eq!(image_l2(&x, &y).unwrap(), 4.0);
    }

    #[test]
    fn feature_l2_matches_loops() {
        let mut rng = crate::rng::stream(4, "l2");
        let mk = |rng: &mut Rng| {
            Tensor::matrix(4, 16, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let mut expect = 0.0;
        for r in 0..4 {
            let mut s = 0.0;
            for c in 0..16 {
                s += (a.get(r, c) - b.get(r, c)).powi(2);
            }
            expect += s;
        }
        expect /= 4.0;
        let got = feature_l2(&feats(a, Some(0)), &feats(b, Some(0))).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn image_l2_is_feature_l2_with_identity_encoder() {
        let x = paired(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), Provenance::CurrentModel);
        let y = paired(Tensor::matrix(2, 2, vec![0.0, 2.5, 3.0, -1.0]).unwrap(), Provenance::Snapshot);
        let fx = FeatureBatch::from_samples(x.x.clone(), crate::nets::FeatureSource::Prior, &x);
        let fy = FeatureBatch::from_samples(y.x.clone(), crate::nets::FeatureSource::Prior, &y);
        assert_eq!(image_l2(&x, &y).unwrap(), feature_l2(&fx, &fy).unwrap());
    }

    fn pair_critic() -> FeatureCritic {
        let mut rng = crate::rng::stream(6, "fc");
        FeatureCritic::new(&NetConfig::default(), &mut IdGen::new(), &mut rng)
    }

    #[test]
    fn indistinguishable_pairs_give_zero_critic_loss() {
        let fc = pair_critic();
        let mut rng = crate::rng::stream(6, "h");
        let mk = |rng: &mut Rng| {
            feats(Tensor::matrix(5, 16, (0..80).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(), None)
        };
        let (cur, anchor) = (mk(&mut rng), mk(&mut rng));
        let (c, _) = feature_adversarial_loss(&fc, &cur, &anchor, &cur).unwrap();
        assert_eq!(c, 0.0);
        let narrow = feats(Tensor::zeros(&[5, 8]), None);
        assert!(feature_adversarial_loss(&fc, &narrow, &narrow, &narrow).is_err());
    }

    #[test]
    fn matcher_loss_matches_forward_oracle() {
        let fc = pair_critic();
        let mut rng = crate::rng::stream(7, "h");
        let mk = |rng: &mut Rng| {
            Tensor::matrix(3, 16, (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let (cur, a, b) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let mut cat = Vec::new();
        for r in 0..3 {
            cat.extend_from_slice(cur.row(r));
            cat.extend_from_slice(a.row(r));
        }
        let pairs = Tensor::matrix(3, 32, cat).unwrap();
        let top = fc.body.eval_all(&pairs).pop().unwrap();
        let w = &fc.score.weight.value;
        let bias = fc.score.bias.value.data()[0];
        let mean: f64 = (0..3)
            .map(|i| bias + (0..top.cols()).map(|j| top.get(i, j) * w.get(j, 0)).sum::<f64>())
            .sum::<f64>()
            / 3.0;
        let (_, m) = feature_adversarial_loss(&fc, &feats(cur, None), &feats(a, None), &feats(b, None)).unwrap();
        assert!((m + mean).abs() < 1e-12);
    }

    #[test]
    fn aux_loss_examples() {
        let l = aux_class_loss(&Tensor::zeros(&[4, 10]), ConditionId(3)).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        let mut logits = Tensor::zeros(&[2, 5]);
        logits.data_mut()[2] = 20.0;
        logits.data_mut()[7] = 20.0;
        assert!(aux_class_loss(&logits, ConditionId(2)).unwrap() < 1e-8);
    }

    #[test]
    fn compose_examples() {
        let parts = LossParts {
            current_task: 1.0,
            feature_term: Some(2.0),
            image_term: Some(4.0),
            ..LossParts::default()
        };
        let b = compose_objective(&parts, 0.1, 0.25).unwrap();
        assert!((b.total - 1.35).abs() < 1e-15);
        assert_eq!(compose_objective(&parts, 0.1, 1.0).unwrap().total, 1.0 + 0.1 * 2.0);
        assert_eq!(compose_objective(&parts, 0.1, 0.0).unwrap().total, 1.0 + 0.1 * 4.0);
        assert!(matches!(compose_objective(&parts, 0.1, 1.5), Err(crate::Error::Config(_))));
        assert!(compose_objective(&parts, 0.0, 0.5).is_err());
        let first = LossParts {
            current_task: -0.7,
            ..LossParts::default()
        };
        assert_eq!(compose_objective(&first, 0.0, 0.5).unwrap().total, -0.7);
    }

    proptest! {
        #[test]
        fn compose_is_affine_in_alpha_and_linear_in_terms(
            c in -5.0f64..5.0, f in 0.0f64..5.0, i in 0.0f64..5.0,
            lam in 1e-4f64..1.0, k in 0.0f64..3.0,
        ) {
            let total = |f: f64, i: f64, a: f64| {
                let p = LossParts { current_task: c, feature_term: Some(f), image_term: Some(i), ..LossParts::default() };
                compose_objective(&p, lam, a).unwrap().total
            };
            let mid = total(f, i, 0.5);
            prop_assert!((mid - 0.5 * (total(f, i, 0.0) + total(f, i, 1.0))).abs() < 1e-12);
            let a = 0.3;
            let lhs = total(k * f, k * i, a) - c;
            prop_assert!((lhs - k * (total(f, i, a) - c)).abs() < 1e-10);
        }
    }

    #[test]
    fn pair_and_gap_terms_pass_grad_check() {
        let mut rng = crate::rng::stream(12, "gc");
        let mut fc = pair_critic();
        let h: Vec<Tensor> = (0..3)
            .map(|_| Tensor::matrix(4, 16, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let err = grad_check(&mut fc, 1e-6, |g, fc| {
            let v: Vec<Var> = h.iter().map(|t| g.constant(t.clone())).collect();
            let l = feature_pair_losses(g, fc, v[0], v[1], v[2], true)?;
            Ok(g.add(l.critic, l.matcher))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
