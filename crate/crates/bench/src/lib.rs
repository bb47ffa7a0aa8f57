//! Fixtures shared by the benchmarks.

use featreplay_core::continual::{train_task, EngineState, ReplayConfig, ReplayMode};
use featreplay_core::nets::{LatentBatch, NetConfig};
use featreplay_core::rng::stream;
use featreplay_core::tasks::{make_gauss2d, TaskStream};
use featreplay_core::Tensor;

/// Standard-normal `rows x cols` matrix.
pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = stream(seed, "bench");
    LatentBatch::sample(rows, cols, &mut r, 0).z
}

/// An engine on gauss2d-5 that has finished the first task, so the next
/// step exercises replay.
pub fn engine_after_first_task(mode: ReplayMode, alpha: Option<f64>) -> (EngineState, TaskStream) {
    let stream = make_gauss2d(5, 4.0, 0.15, 0).expect("stream");
    let cfg = ReplayConfig {
        mode,
        alpha,
        steps_per_task: 20,
        ..ReplayConfig::default()
    };
    let mut state = EngineState::new(&cfg, &NetConfig::default(), &stream, 0).expect("engine");
    train_task(&mut state, &stream).expect("first task");
    state.config.steps_per_task = 1;
    (state, stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        assert_eq!(normal_matrix(3, 4, 1).shape(), &[3, 4]);
        let (mut st, s) = engine_after_first_task(ReplayMode::AlignFeature, None);
        assert_eq!(st.completed, 1);
        let out = train_task(&mut st, &s).unwrap();
        assert_eq!(out.totals.len(), 1);
    }
}
