//! Synthetic task streams: one class per task, either a 2-D Gaussian
//! placed on a circle or a noisy 8x8 glyph raster.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};
use crate::nets::{ConditionId, OutputSquash, SampleBatch};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub const GLYPH_SIDE: usize = 8;
pub const GLYPH_NAMES: [&str; 10] = ["bar", "cross", "box", "diagonal", "dot", "L", "T", "U", "X", "Z"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamName {
    Gauss2d,
    Glyphs8,
}

impl StreamName {
    pub fn as_str(self) -> &'static str {
        match self {
            StreamName::Gauss2d => "gauss2d",
            StreamName::Glyphs8 => "glyphs8",
        }
    }

    pub fn squash(self) -> OutputSquash {
        match self {
            StreamName::Gauss2d => OutputSquash::Identity,
            StreamName::Glyphs8 => OutputSquash::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sampler {
    Gaussian { mean: [f64; 2], sigma: f64 },
    Glyph { template: Vec<f64>, noise: f64 },
}

/// One generative task: a condition and its real-data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub condition: ConditionId,
    pub data_dim: usize,
    sampler: Sampler,
}

impl Task {
    /// An isotropic 2-D Gaussian task.
    pub fn gaussian(condition: ConditionId, mean: [f64; 2], sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mean.iter().all(|m| m.is_finite()) {
            return Err(config("gaussian task needs sigma > 0 and a finite mean"));
        }
        Ok(Self {
            condition,
            data_dim: 2,
            sampler: Sampler::Gaussian { mean, sigma },
        })
    }

    /// Mean of the task's distribution, before any clamping.
    pub fn center(&self) -> Vec<f64> {
        match &self.sampler {
            Sampler::Gaussian { mean, .. } => mean.to_vec(),
            Sampler::Glyph { template, .. } => template.clone(),
        }
    }

    fn draw(&self, rng: &mut Rng, out: &mut Vec<f64>) {
        match &self.sampler {
            Sampler::Gaussian { mean, sigma } => {
                let n = Normal::new(0.0, *sigma).expect("sigma validated");
                out.push(mean[0] + n.sample(rng));
                out.push(mean[1] + n.sample(rng));
            }
            Sampler::Glyph { template, noise } => {
                for &p in template {
                    let e = if *noise > 0.0 {
                        rng.random_range(-*noise..*noise)
                    } else {
                        0.0
                    };
                    out.push((p + e).clamp(0.0, 1.0));
                }
            }
        }
    }
}

/// `n` i.i.d. draws of the task's data. Only `rng` is advanced.
pub fn sample_real(task: &Task, n: usize, rng: &mut Rng) -> Result<SampleBatch> {
    if n == 0 {
        return Err(contract("sample_real needs n > 0"));
    }
    let mut data = Vec::with_capacity(n * task.data_dim);
    for _ in 0..n {
        task.draw(rng, &mut data);
    }
    let x = Tensor::matrix(n, task.data_dim, data)?;
    Ok(SampleBatch::real(x, task.condition))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub name: StreamName,
    pub tasks: Vec<Task>,
    pub seed: u64,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn data_dim(&self) -> usize {
        self.tasks[0].data_dim
    }

    pub fn task(&self, c: ConditionId) -> &Task {
        &self.tasks[c.0]
    }

    /// Training-split sampler stream for task `i`.
    pub fn train_rng(&self, i: usize) -> Rng {
        rng::stream(self.seed, &format!("{}/train/{i}", self.name.as_str()))
    }

    /// Held-out split for task `i`: drawn from its own stream so it never
    /// overlaps the training draws.
    pub fn held_out(&self, i: usize, n: usize) -> Result<SampleBatch> {
        let mut r = rng::stream(self.seed, &format!("{}/heldout/{i}", self.name.as_str()));
        sample_real(&self.tasks[i], n, &mut r)
    }
}

pub fn make_gauss2d(t: usize, radius: f64, sigma: f64, seed: u64) -> Result<TaskStream> {
    make_gauss2d_phase(t, radius, sigma, 0.0, seed)
}

fn make_gauss2d_phase(t: usize, radius: f64, sigma: f64, phase: f64, seed: u64) -> Result<TaskStream> {
    if t == 0 {
        return Err(config("stream.tasks must be >= 1"));
    }
    if !(radius > 0.0) {
        return Err(config("stream.radius must be > 0"));
    }
    if !(sigma > 0.0) {
        return Err(config("stream.sigma must be > 0"));
    }
    let tasks = (0..t)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / t as f64 + phase;
            Task {
                condition: ConditionId(i),
                data_dim: 2,
                sampler: Sampler::Gaussian {
                    mean: [radius * a.cos(), radius * a.sin()],
                    sigma,
                },
            }
        })
        .collect();
    Ok(TaskStream {
        name: StreamName::Gauss2d,
        tasks,
        seed,
    })
}

pub fn make_glyphs8(t: usize, noise: f64, seed: u64) -> Result<TaskStream> {
    make_glyphs8_with(t, noise, seed, false)
}

fn make_glyphs8_with(t: usize, noise: f64, seed: u64, transposed: bool) -> Result<TaskStream> {
    if t == 0 || t > GLYPH_NAMES.len() {
        return Err(config(format!(
            "stream.tasks must be in 1..={} for glyphs8",
            GLYPH_NAMES.len()
        )));
    }
    if !(0.0..0.5).contains(&noise) {
        return Err(config("stream.noise must be in [0, 0.5)"));
    }
    let tasks = (0..t)
        .map(|i| {
            let mut template = glyph(i);
            if transposed {
                template = (0..64).map(|k| template[(k % 8) * 8 + k / 8]).collect();
                template.reverse();
            }
            Task {
                condition: ConditionId(i),
                data_dim: GLYPH_SIDE * GLYPH_SIDE,
                sampler: Sampler::Glyph { template, noise },
            }
        })
        .collect();
    Ok(TaskStream {
        name: StreamName::Glyphs8,
        tasks,
        seed,
    })
}

/// Data for pre-fitting the prior encoder: same family, disjoint classes
/// (Gaussian modes rotated half a step, glyphs transposed and flipped) and
/// an independent seed.
pub fn prior_fit_stream(stream: &TaskStream) -> Result<TaskStream> {
    let seed = rng::derive_seed(stream.seed, "prior-fit");
    let t = stream.len();
    match stream.tasks.first().map(|task| &task.sampler) {
        Some(Sampler::Gaussian { mean, sigma }) => {
            let radius = mean[0].hypot(mean[1]);
            make_gauss2d_phase(t, radius, *sigma, PI / t as f64, seed)
        }
        Some(Sampler::Glyph { noise, .. }) => make_glyphs8_with(t, *noise, seed, true),
        None => Err(contract("empty stream")),
    }
}

/// The 8x8 template of class `i`, row-major, values in {0, 1}.
pub fn glyph(i: usize) -> Vec<f64> {
    let on = |r: usize, c: usize| -> bool {
        match i {
            0 => (3..=4).contains(&c) && (1..=6).contains(&r),
            1 => (3..=4).contains(&r) || (3..=4).contains(&c),
            2 => {
                (1..=6).contains(&r)
                    && (1..=6).contains(&c)
                    && (r == 1 || r == 6 || c == 1 || c == 6)
            }
            3 => r == c,
            4 => (3..=4).contains(&r) && (3..=4).contains(&c),
            5 => (c == 1 && (1..=6).contains(&r)) || (r == 6 && (1..=6).contains(&c)),
            6 => (r == 1 && (1..=6).contains(&c)) || ((3..=4).contains(&c) && (1..=6).contains(&r)),
            7 => {
                ((c == 1 || c == 6) && (1..=6).contains(&r)) || (r == 6 && (1..=6).contains(&c))
            }
            8 => r == c || r + c == 7,
            9 => ((r == 1 || r == 6) && (1..=6).contains(&c)) || (r + c == 7 && (1..=6).contains(&r)),
            _ => false,
        }
    };
    (0..64)
        .map(|k| if on(k / 8, k % 8) { 1.0 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_means_on_circle() {
        let s = make_gauss2d(4, 4.0, 0.15, 0).unwrap();
        let m = s.tasks[1].center();
        assert!(m[0].abs() < 1e-12 && (m[1] - 4.0).abs() < 1e-12);
        let one = make_gauss2d(1, 4.0, 0.15, 0).unwrap();
        assert_eq!(one.tasks[0].center(), vec![4.0, 0.0]);
    }

    #[test]
    fn gauss_rejects_bad_params() {
        assert!(matches!(make_gauss2d(5, 0.0, 0.1, 0), Err(crate::Error::Config(_))));
        assert!(matches!(make_gauss2d(5, 1.0, -0.1, 0), Err(crate::Error::Config(_))));
    }

    #[test]
    fn gauss_sample_mean_converges() {
        let s = make_gauss2d(5, 4.0, 0.15, 9).unwrap();
        let b = sample_real(&s.tasks[0], 10_000, &mut s.train_rng(0)).unwrap();
        let m = b.x.column_means();
        let tol = 3.0 * 0.15 / 100.0;
        assert!((m[0] - 4.0).abs() < tol && m[1].abs() < tol, "{m:?}");
    }

    fn min_separation(t: usize) -> f64 {
        let s = make_gauss2d(t, 4.0, 0.15, 0).unwrap();
        let mut best = f64::INFINITY;
        for a in &s.tasks {
            for b in &s.tasks {
                if a.condition != b.condition {
                    let (p, q) = (a.center(), b.center());
                    best = best.min(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
                }
            }
        }
        best
    }

    #[test]
    fn default_modes_are_well_separated() {
        assert!(min_separation(5) > 20.0 * 0.15);
        // Ten modes on the same circle sit a chord 2 r sin(pi / 10) apart.
        let chord = 8.0 * (PI / 10.0).sin();
        assert!((min_separation(10) - chord).abs() < 1e-12);
        assert!(chord > 16.0 * 0.15);
    }

    #[test]
    fn glyph_templates_are_distinct_and_noise_free_draws_exact() {
        for (i, a) in GLYPH_NAMES.iter().enumerate() {
            for (j, b) in GLYPH_NAMES.iter().enumerate().take(i) {
                assert_ne!(glyph(i), glyph(j), "{a} vs {b}");
            }
        }
        let s = make_glyphs8(10, 0.0, 1).unwrap();
        let b = sample_real(&s.tasks[7], 5, &mut s.train_rng(7)).unwrap();
        for r in 0..5 {
            assert_eq!(b.x.row(r), glyph(7).as_slice());
        }
    }

    #[test]
    fn glyph_bounds_and_errors() {
        assert!(make_glyphs8(11, 0.05, 0).is_err());
        assert!(make_glyphs8(3, 0.5, 0).is_err());
        let s = make_glyphs8(10, 0.45, 1).unwrap();
        let b = sample_real(&s.tasks[2], 200, &mut s.train_rng(2)).unwrap();
        assert!(b.x.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn glyph_mean_matches_clamped_expectation() {
        // Uniform noise on [-a, a] clamped at 0 or 1: pixels at the bounds
        // shift inward by a/4 on average, interior values are unbiased.
        let a = 0.1;
        let s = make_glyphs8(10, a, 3).unwrap();
        let b = sample_real(&s.tasks[1], 5_000, &mut s.train_rng(1)).unwrap();
        let m = b.x.column_means();
        for (p, t) in m.iter().zip(glyph(1)) {
            let expect = if t == 1.0 { 1.0 - a / 4.0 } else { a / 4.0 };
            assert!((p - expect).abs() < 0.01, "{p} vs {expect}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_rejects_zero() {
        let s = make_gauss2d(3, 4.0, 0.15, 5).unwrap();
        let a = sample_real(&s.tasks[2], 7, &mut s.train_rng(2)).unwrap();
        let b = sample_real(&s.tasks[2], 7, &mut s.train_rng(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.x.shape(), &[7, 2]);
        assert!(sample_real(&s.tasks[0], 0, &mut s.train_rng(0)).is_err());
        assert_eq!(make_gauss2d(3, 4.0, 0.15, 5).unwrap(), s);
    }

    #[test]
    fn held_out_differs_from_train() {
        let s = make_gauss2d(3, 4.0, 0.15, 5).unwrap();
        let a = sample_real(&s.tasks[0], 4, &mut s.train_rng(0)).unwrap();
        assert_ne!(a, s.held_out(0, 4).unwrap());
    }

    #[test]
    fn independent_streams_have_uncorrelated_means() {
        let s = make_gauss2d(1, 4.0, 1.0, 0).unwrap();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for k in 0..100 {
            let mut r1 = rng::stream(k, "left");
            let mut r2 = rng::stream(k, "right");
            xs.push(sample_real(&s.tasks[0], 50, &mut r1).unwrap().x.column_means()[0]);
            ys.push(sample_real(&s.tasks[0], 50, &mut r2).unwrap().x.column_means()[0]);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (mean(&xs), mean(&ys));
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 0.1, "corr {corr}");
    }
}
