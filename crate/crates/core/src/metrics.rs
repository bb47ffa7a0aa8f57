//! Distances between sample sets, the reference classifier, and the
//! forgetfulness ledger with its derived scores.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, IdGen, Params};
use crate::error::{contract, Error, Result};
use crate::nets::{Classifier, ConditionId, Generator, LatentBatch, NetConfig, SampleBatch};
use crate::objectives::class_cross_entropy;
use crate::rng::{self, Rng};
use crate::tasks::{sample_real, TaskStream};
use crate::tensor::Tensor;

/// Below this eigenvalue a covariance is treated as near-singular and both
/// fits receive a small ridge.
const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

/// Sample mean and unbiased covariance of the rows of `x`.
pub fn gaussian_fit(x: &Tensor) -> Result<GaussianFit> {
    let (n, d) = (x.rows(), x.cols());
    if n < d + 1 {
        return Err(contract(format!(
            "need at least {} rows to fit a {d}-dimensional Gaussian, got {n}",
            d + 1
        )));
    }
    let mean = x.column_means();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in 0..n {
        let row = x.row(r);
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            node: 0,
            op: "gaussian_fit",
            detail: "non-finite moments".into(),
        });
    }
    Ok(GaussianFit { mean, cov })
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let s = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Frechet distance between two Gaussians,
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_from_moments(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    let d = a.mean.len();
    if b.mean.len() != d || a.cov.shape() != (d, d) || b.cov.shape() != (d, d) {
        return Err(contract("Gaussian fits of different dimension"));
    }
    if a == b {
        return Ok(0.0);
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let (mut sa, mut sb) = (a.cov.clone(), b.cov.clone());
    if min_eigenvalue(&sa) < RIDGE || min_eigenvalue(&sb) < RIDGE {
        for i in 0..d {
            sa[(i, i)] += RIDGE;
            sb[(i, i)] += RIDGE;
        }
    }
    let ra = sym_sqrt(&sa);
    let mut m = &ra * &sb * &ra;
    m = (&m + m.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let out = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    if !out.is_finite() {
        return Err(Error::Numeric {
            node: 0,
            op: "frechet",
            detail: "non-finite distance".into(),
        });
    }
    Ok(out.max(0.0))
}

/// Frechet distance between Gaussian fits of two row sets.
pub fn frechet_gaussian(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(contract("row sets of different width"));
    }
    frechet_from_moments(&gaussian_fit(a)?, &gaussian_fit(b)?)
}

/// Anything that can produce samples of a condition.
pub trait ConditionalSampler {
    fn sample(&self, condition: ConditionId, n: usize, rng: &mut Rng) -> Result<SampleBatch>;
}

impl ConditionalSampler for Generator {
    fn sample(&self, condition: ConditionId, n: usize, rng: &mut Rng) -> Result<SampleBatch> {
        let z = LatentBatch::sample(n, self.latent_dim(), rng, 0);
        self.generate(condition, &z)
    }
}

/// Fraction of `n` samples per condition that the classifier assigns to
/// their own condition, one entry per condition.
pub fn accuracy_per_condition<S: ConditionalSampler + ?Sized>(
    classifier: &Classifier,
    sampler: &S,
    conditions: &[ConditionId],
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(contract("accuracy needs n > 0"));
    }
    if !classifier.trained {
        return Err(contract("classifier has not been trained"));
    }
    conditions
        .iter()
        .map(|&c| {
            let x = sampler.sample(c, n, rng)?;
            let pred = classifier.classify(&x)?;
            Ok(pred.iter().filter(|&&p| p == c).count() as f64 / n as f64)
        })
        .collect()
}

/// Average over conditions of the per-condition accuracy.
pub fn accuracy_proxy<S: ConditionalSampler + ?Sized>(
    classifier: &Classifier,
    sampler: &S,
    conditions: &[ConditionId],
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if conditions.is_empty() {
        return Err(contract("accuracy needs at least one condition"));
    }
    let acc = accuracy_per_condition(classifier, sampler, conditions, n, rng)?;
    Ok(acc.iter().sum::<f64>() / acc.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub held_out_per_class: usize,
    pub optimizer: AdamConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 64,
            held_out_per_class: 200,
            optimizer: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierFit {
    pub classifier: Classifier,
    pub held_out_accuracy: f64,
}

/// Trains the reference classifier jointly on every task's training split
/// and scores it on the held-out split.
pub fn train_reference_classifier(
    stream: &TaskStream,
    seed: u64,
    net: &NetConfig,
    cfg: &ClassifierConfig,
) -> Result<ClassifierFit> {
    if cfg.steps == 0 || cfg.batch_size == 0 || cfg.held_out_per_class == 0 {
        return Err(crate::error::config("classifier steps, batch size and held-out size must be > 0"));
    }
    let t = stream.len();
    let mut init = rng::stream(seed, "classifier/init");
    let mut clf = Classifier::new(net, stream.data_dim(), t, &mut IdGen::new(), &mut init);
    let mut pick = rng::stream(seed, "classifier/labels");
    let mut draws: Vec<Rng> = (0..t)
        .map(|i| rng::stream(seed, &format!("classifier/data/{i}")))
        .collect();
    let mut adam = Adam::new(cfg.optimizer);
    for _ in 0..cfg.steps {
        let labels: Vec<usize> = (0..cfg.batch_size).map(|_| pick.random_range(0..t)).collect();
        let mut rows = Vec::with_capacity(cfg.batch_size * stream.data_dim());
        for &l in &labels {
            let b = sample_real(&stream.tasks[l], 1, &mut draws[l])?;
            rows.extend_from_slice(b.x.data());
        }
        let x = Tensor::matrix(cfg.batch_size, stream.data_dim(), rows)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let logits = clf.forward(&mut g, xv, true);
        let loss = class_cross_entropy(&mut g, logits, &labels)?;
        let grads = g.backward(loss)?;
        adam.apply(&grads, clf.params_mut())?;
    }
    clf.trained = true;
    let mut correct = 0usize;
    for i in 0..t {
        let x = stream.held_out(i, cfg.held_out_per_class)?;
        correct += clf
            .classify(&x)?
            .iter()
            .filter(|p| p.0 == i)
            .count();
    }
    let held_out_accuracy = correct as f64 / (t * cfg.held_out_per_class) as f64;
    Ok(ClassifierFit {
        classifier: clf,
        held_out_accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Frechet,
    AccuracyDrop,
}

/// `d_t^(i)`: distance on task `i` measured after training task `t`.
/// Task indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub t: usize,
    pub i: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetfulnessLedger {
    pub kind: DistanceKind,
    pub tasks_seen: usize,
    entries: Vec<LedgerEntry>,
}

impl ForgetfulnessLedger {
    pub fn new(kind: DistanceKind) -> Self {
        Self {
            kind,
            tasks_seen: 0,
            entries: Vec::new(),
        }
    }

    /// Records the full row `d_t^(1..=t)` after task `t` completes.
    pub fn record_task(&mut self, t: usize, distances: &[f64]) -> Result<()> {
        if t != self.tasks_seen + 1 {
            return Err(contract(format!(
                "ledger expects task {}, got {t}",
                self.tasks_seen + 1
            )));
        }
        if distances.len() != t {
            return Err(contract(format!("task {t} needs {t} distances")));
        }
        for &d in distances {
            if !d.is_finite() || (self.kind == DistanceKind::Frechet && d < 0.0) {
                return Err(contract(format!("invalid distance {d}")));
            }
        }
        self.entries.extend(
            distances
                .iter()
                .enumerate()
                .map(|(k, &distance)| LedgerEntry { t, i: k + 1, distance }),
        );
        self.tasks_seen = t;
        Ok(())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.t == t && e.i == i)
            .map(|e| e.distance)
    }

    fn need(&self, t: usize, i: usize) -> Result<f64> {
        self.get(t, i)
            .ok_or_else(|| contract(format!("ledger lacks d_{t}^({i})")))
    }

    /// `FS_t = 1/(t-1) sum_{i<t} (d_t^(i) - d_i^(i))`.
    pub fn task_fs(&self, t: usize) -> Result<f64> {
        if t < 2 {
            return Err(contract("forgetfulness needs t >= 2"));
        }
        let mut s = 0.0;
        for i in 1..t {
            s += self.need(t, i)? - self.need(i, i)?;
        }
        Ok(s / (t - 1) as f64)
    }

    /// `CFS_t = FS_t + d_t^(t)`.
    pub fn task_cfs(&self, t: usize) -> Result<f64> {
        Ok(self.task_fs(t)? + self.need(t, t)?)
    }

    /// `(2 / (T (T - 1))) sum_{t>=2} (t - 1) FS_t`; `None` when `T < 2`.
    pub fn overall_fs(&self) -> Result<Option<f64>> {
        self.weighted(|t| self.task_fs(t))
    }

    pub fn overall_cfs(&self) -> Result<Option<f64>> {
        self.weighted(|t| self.task_cfs(t))
    }

    fn weighted(&self, score: impl Fn(usize) -> Result<f64>) -> Result<Option<f64>> {
        let big_t = self.tasks_seen;
        if big_t < 2 {
            return Ok(None);
        }
        let scores: Vec<f64> = (2..=big_t).map(score).collect::<Result<_>>()?;
        Ok(Some(weighted_average(&scores)))
    }
}

/// Weighted average of `scores[k] = S_{k+2}` with weights `t - 1`.
pub fn weighted_average(scores: &[f64]) -> f64 {
    let big_t = scores.len() + 1;
    let s: f64 = scores
        .iter()
        .enumerate()
        .map(|(k, v)| (k + 1) as f64 * v)
        .sum();
    2.0 * s / (big_t * (big_t - 1)) as f64
}

/// Ordinary least-squares slope of `value` against `t`.
pub fn forgetting_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(contract("slope needs at least two points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(contract("slope needs at least two distinct t"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub t: usize,
    pub fs: f64,
    pub cfs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetfulnessReport {
    pub per_task: Vec<TaskScores>,
    pub overall_fs: f64,
    pub overall_cfs: f64,
    pub slope_fs: f64,
    pub slope_cfs: f64,
}

impl ForgetfulnessReport {
    /// `None` when fewer than two tasks have been seen.
    pub fn from_ledger(ledger: &ForgetfulnessLedger) -> Result<Option<Self>> {
        let big_t = ledger.tasks_seen;
        if big_t < 2 {
            return Ok(None);
        }
        let per_task: Vec<TaskScores> = (2..=big_t)
            .map(|t| {
                Ok(TaskScores {
                    t,
                    fs: ledger.task_fs(t)?,
                    cfs: ledger.task_cfs(t)?,
                })
            })
            .collect::<Result<_>>()?;
        let fs: Vec<f64> = per_task.iter().map(|s| s.fs).collect();
        let cfs: Vec<f64> = per_task.iter().map(|s| s.cfs).collect();
        // A single score gives no line; its slope is reported as zero.
        let slope = |v: &[(f64, f64)]| if v.len() < 2 { Ok(0.0) } else { forgetting_slope(v) };
        let pts = |s: &[TaskScores], f: fn(&TaskScores) -> f64| -> Vec<(f64, f64)> {
            s.iter().map(|x| (x.t as f64, f(x))).collect()
        };
        Ok(Some(Self {
            overall_fs: weighted_average(&fs),
            overall_cfs: weighted_average(&cfs),
            slope_fs: slope(&pts(&per_task, |x| x.fs))?,
            slope_cfs: slope(&pts(&per_task, |x| x.cfs))?,
            per_task,
        }))
    }
}
