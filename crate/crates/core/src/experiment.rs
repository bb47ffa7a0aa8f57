//! Experiment configuration, single runs, sweeps and sample dumps, with
//! every artifact written to an output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::continual::{
    run_stream, EngineState, EvalConfig, ReplayConfig, ReplayMode, RunReport, RunSpec, TaskObserver,
    TaskOutcome, TaskSummary,
};
use crate::error::{config, Error, Result};
use crate::metrics::ForgetfulnessLedger;
use crate::nets::{Checkpoint, ConditionId, LatentBatch, ModelState, NetConfig};
use crate::rng;
use crate::tasks::{make_gauss2d, make_glyphs8, StreamName, TaskStream};

/// Environment variables with this prefix override config keys; `__`
/// separates nested keys, e.g. `FEATREPLAY_REPLAY__ALPHA=0.5`.
pub const ENV_PREFIX: &str = "FEATREPLAY_";

/// Seeds of the standard multi-seed comparisons.
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Steps per task used when a glyph stream does not set its own.
pub const GLYPH_STEPS_PER_TASK: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub name: StreamName,
    pub tasks: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_radius() -> f64 {
    4.0
}

fn default_sigma() -> f64 {
    0.15
}

fn default_noise() -> f64 {
    0.05
}

impl StreamSpec {
    pub fn new(name: StreamName, tasks: usize) -> Self {
        Self {
            name,
            tasks,
            radius: default_radius(),
            sigma: default_sigma(),
            noise: default_noise(),
            seed: 0,
        }
    }

    /// Parses the `name-T` shorthand, e.g. `gauss2d-5`.
    pub fn parse_shorthand(s: &str) -> Result<Self> {
        let (name, t) = s
            .rsplit_once('-')
            .ok_or_else(|| config(format!("stream: expected `name-T`, got `{s}`")))?;
        let name = match name {
            "gauss2d" => StreamName::Gauss2d,
            "glyphs8" => StreamName::Glyphs8,
            other => return Err(config(format!("stream: unknown stream `{other}` (gauss2d, glyphs8)"))),
        };
        let t = t
            .parse()
            .map_err(|_| config(format!("stream: task count in `{s}` is not an integer")))?;
        Ok(Self::new(name, t))
    }

    pub fn build(&self) -> Result<TaskStream> {
        match self.name {
            StreamName::Gauss2d => make_gauss2d(self.tasks, self.radius, self.sigma, self.seed),
            StreamName::Glyphs8 => make_glyphs8(self.tasks, self.noise, self.seed),
        }
    }
}

/// The values a sweep iterates over. Alpha sweeps run `align_combined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepAxis {
    Alpha(Vec<f64>),
    Mode(Vec<ReplayMode>),
}

impl SweepAxis {
    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Alpha(v) => v.len(),
            SweepAxis::Mode(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn labels(&self) -> Vec<String> {
        match self {
            SweepAxis::Alpha(v) => v.iter().map(|a| format!("alpha={a}")).collect(),
            SweepAxis::Mode(v) => v.iter().map(|m| format!("mode={}", m.as_str())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamSpec,
    #[serde(default)]
    pub replay: ReplayConfig,
    #[serde(default)]
    pub model: NetConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxis>,
}

impl ExperimentConfig {
    /// A config with defaults for everything but the stream and mode.
    pub fn new(stream: StreamSpec, mode: ReplayMode) -> Result<Self> {
        let mut cfg = Self {
            stream,
            replay: ReplayConfig {
                mode,
                ..ReplayConfig::default()
            },
            model: NetConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
            output_dir: None,
            sweep: None,
        };
        if cfg.stream.name == StreamName::Glyphs8 {
            cfg.replay.steps_per_task = GLYPH_STEPS_PER_TASK;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every constraint and fills mode-implied values.
    pub fn validate(&mut self) -> Result<()> {
        let stream = self.stream.build()?;
        self.replay.materialize()?;
        self.model.validate()?;
        self.eval.validate(stream.data_dim())?;
        let c = &self.eval.classifier;
        if c.steps == 0 || c.batch_size == 0 || c.held_out_per_class == 0 {
            return Err(config("eval.classifier: steps, batch_size and held_out_per_class must be > 0"));
        }
        if let Some(axis) = &self.sweep {
            if axis.is_empty() {
                return Err(config("sweep: axis must list at least one value"));
            }
            for run in self.sweep_runs()? {
                run.1.clone().validate()?;
            }
        }
        Ok(())
    }

    /// Content digest of everything that affects results.
    pub fn hash(&self) -> String {
        let mut v = self.clone();
        v.output_dir = None;
        let text = serde_json::to_string(&v).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Echo of the config without the output location.
    pub fn echo(&self) -> Value {
        let mut v = self.clone();
        v.output_dir = None;
        serde_json::to_value(v).expect("config serializes")
    }

    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            replay: self.replay.clone(),
            model: self.model.clone(),
            eval: self.eval.clone(),
            seed: self.seed,
            config_hash: self.hash(),
            config_echo: self.echo(),
        }
    }

    /// One `(label, config)` per axis value, sharing this config's seed.
    pub fn sweep_runs(&self) -> Result<Vec<(String, ExperimentConfig)>> {
        let axis = self
            .sweep
            .as_ref()
            .ok_or_else(|| config("sweep: no sweep axis configured"))?;
        let mut base = self.clone();
        base.sweep = None;
        base.output_dir = None;
        let runs = match axis {
            SweepAxis::Alpha(values) => values
                .iter()
                .map(|&a| {
                    let mut c = base.clone();
                    c.replay.mode = ReplayMode::AlignCombined;
                    c.replay.alpha = Some(a);
                    c
                })
                .collect::<Vec<_>>(),
            SweepAxis::Mode(values) => values
                .iter()
                .map(|&m| {
                    let mut c = base.clone();
                    c.replay.mode = m;
                    c.replay.alpha = if m == ReplayMode::AlignCombined {
                        base.replay.alpha.filter(|_| base.replay.mode == ReplayMode::AlignCombined)
                    } else {
                        None
                    };
                    c
                })
                .collect(),
        };
        Ok(axis.labels().into_iter().zip(runs).collect())
    }
}

/// Parses and validates a JSON config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_env(text, std::iter::empty())
}

/// As [`parse_config`], applying `ENV_PREFIX` overrides from `vars` first.
pub fn parse_config_with_env(
    text: &str,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<ExperimentConfig> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| config(format!("config is not valid JSON: {e}")))?;
    apply_env_overrides(&mut value, vars)?;
    normalize(&mut value)?;
    let mut cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Sets `a.b.c` for every `PREFIX_A__B__C=value`. Values are read as JSON
/// when they parse, otherwise as strings.
pub fn apply_env_overrides(
    value: &mut Value,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<()> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(str::to_lowercase)
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(config(format!("environment override `{key}` has an empty key segment")));
        }
        let v = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        let mut node = &mut *value;
        for (k, seg) in path.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| config(format!("environment override `{key}`: `{seg}` is not inside an object")))?;
            if k + 1 == path.len() {
                obj.insert(seg.clone(), v.clone());
                break;
            }
            node = obj.entry(seg.clone()).or_insert_with(|| Value::Object(Map::new()));
        }
    }
    Ok(())
}

/// Expands shorthands: a `name-T` stream string, top-level `mode` and
/// `alpha`, and the glyph default for steps per task.
fn normalize(value: &mut Value) -> Result<()> {
    let obj = value
        .as_object_mut()
        .ok_or_else(|| config("config must be a JSON object"))?;
    if let Some(Value::String(s)) = obj.get("stream") {
        let spec = StreamSpec::parse_shorthand(s)?;
        obj.insert("stream".into(), serde_json::to_value(spec)?);
    }
    for key in ["mode", "alpha"] {
        if let Some(v) = obj.remove(key) {
            let replay = obj
                .entry("replay")
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .ok_or_else(|| config("replay must be an object"))?;
            if replay.contains_key(key) {
                return Err(config(format!("`{key}` is set both at top level and in replay")));
            }
            replay.insert(key.into(), v);
        }
    }
    let glyphs = obj
        .get("stream")
        .and_then(|s| s.get("name"))
        .and_then(Value::as_str)
        == Some("glyphs8");
    if glyphs {
        let replay = obj
            .entry("replay")
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .ok_or_else(|| config("replay must be an object"))?;
        replay
            .entry("steps_per_task")
            .or_insert_with(|| Value::from(GLYPH_STEPS_PER_TASK));
    }
    Ok(())
}

/// Reads a config file and applies overrides from the process environment.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_with_env(&text, std::env::vars())
}

const METRICS_HEADER: &str = "config_hash,task,step,critic_loss,current_task,feature_term,image_term,aux_class_term,lipschitz_term,total,lambda_t,alpha";

/// Writes metrics rows and a checkpoint as each task finishes.
struct ArtifactWriter {
    dir: PathBuf,
    hash: String,
    config_json: String,
    metrics: String,
    verbose: bool,
}

impl TaskObserver for ArtifactWriter {
    fn task_done(&mut self, state: &EngineState, outcome: &TaskOutcome, summary: &TaskSummary) -> Result<()> {
        for l in &outcome.logs {
            let b = &l.breakdown;
            writeln!(
                self.metrics,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                self.hash,
                l.task,
                l.step,
                l.critic_loss,
                b.current_task,
                b.feature_term,
                b.image_term,
                b.aux_class_term,
                b.lipschitz_term,
                b.total,
                b.lambda_t,
                b.alpha
            )
            .expect("string write");
        }
        fs::write(self.dir.join("metrics.csv"), &self.metrics)?;
        let ckpt = Checkpoint::capture(&self.hash, &self.config_json, outcome.task, &state.model);
        ckpt.save(&self.dir.join("checkpoints").join(format!("task_{}.ckpt", outcome.task)))?;
        if self.verbose {
            eprintln!(
                "task {} done: accuracy {:.3}, own distance {:.4}",
                summary.task,
                summary.accuracy_proxy,
                summary.distances.last().copied().unwrap_or(f64::NAN)
            );
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct LedgerFile<'a> {
    config_hash: &'a str,
    ledger: &'a ForgetfulnessLedger,
}

/// Refuses to reuse a directory holding another configuration's results.
fn check_out_dir(dir: &Path, hash: &str) -> Result<()> {
    let report = dir.join("report.json");
    if report.exists() {
        let v: Value = serde_json::from_str(&fs::read_to_string(&report)?)?;
        if v.get("config_hash").and_then(Value::as_str) != Some(hash) {
            return Err(config(format!(
                "{} holds results of a different configuration; choose another output directory",
                dir.display()
            )));
        }
    }
    Ok(())
}

/// Trains the configured stream and writes `metrics.csv`, `ledger.json`,
/// `report.json`, `tasks.csv` and per-task checkpoints under `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, verbose: bool) -> Result<RunReport> {
    let spec = cfg.run_spec();
    let stream = cfg.stream.build()?;
    fs::create_dir_all(dir.join("checkpoints"))?;
    check_out_dir(dir, &spec.config_hash)?;
    let mut writer = ArtifactWriter {
        dir: dir.to_path_buf(),
        hash: spec.config_hash.clone(),
        config_json: serde_json::to_string(&spec.config_echo)?,
        metrics: format!("{METRICS_HEADER}\n"),
        verbose,
    };
    let (_, ledger, report) = run_stream(&spec, &stream, &mut writer)?;
    let ledger_file = LedgerFile {
        config_hash: &spec.config_hash,
        ledger: &ledger,
    };
    fs::write(dir.join("ledger.json"), serde_json::to_string_pretty(&ledger_file)? + "\n")?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(dir.join("tasks.csv"), tasks_csv(&report))?;
    Ok(report)
}

/// Plot-ready per-task series.
pub fn tasks_csv(report: &RunReport) -> String {
    let mut s = String::from("config_hash,task,accuracy_proxy,own_distance,fs,cfs\n");
    for t in &report.tasks {
        let scores = report
            .forgetfulness
            .as_ref()
            .and_then(|f| f.per_task.iter().find(|x| x.t == t.task));
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        writeln!(
            s,
            "{},{},{},{},{},{}",
            report.config_hash,
            t.task,
            t.accuracy_proxy,
            t.distances.last().copied().unwrap_or(f64::NAN),
            opt(scores.map(|x| x.fs)),
            opt(scores.map(|x| x.cfs))
        )
        .expect("string write");
    }
    s
}

/// Human-readable per-task table with the overall scores.
pub fn summary_table(report: &RunReport) -> String {
    let mut s = format!("config {}\n", &report.config_hash[..12.min(report.config_hash.len())]);
    s += "task  accuracy  own_dist        FS       CFS\n";
    let f = report.forgetfulness.as_ref();
    for t in &report.tasks {
        let sc = f.and_then(|f| f.per_task.iter().find(|x| x.t == t.task));
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        writeln!(
            s,
            "{:>4}  {:>8.3}  {:>8.4}  {:>8}  {:>8}",
            t.task,
            t.accuracy_proxy,
            t.distances.last().copied().unwrap_or(f64::NAN),
            cell(sc.map(|x| x.fs)),
            cell(sc.map(|x| x.cfs))
        )
        .expect("string write");
    }
    match f {
        Some(f) => writeln!(
            s,
            "overall FS {:.4}  CFS {:.4}  k(FS) {:.4}  k(CFS) {:.4}",
            f.overall_fs, f.overall_cfs, f.slope_fs, f.slope_cfs
        ),
        None => writeln!(s, "overall FS not applicable (single task)"),
    }
    .expect("string write");
    writeln!(
        s,
        "accuracy A_half {:.3}  A_final {:.3}  classifier {:.3}",
        report.accuracy_half, report.accuracy_final, report.classifier_accuracy
    )
    .expect("string write");
    for w in &report.warnings {
        writeln!(s, "warning: {w}").expect("string write");
    }
    s
}

/// One row of a sweep comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    pub config_hash: String,
    pub status: String,
    pub error: Option<String>,
    pub accuracy_half: Option<f64>,
    pub accuracy_final: Option<f64>,
    pub overall_fs: Option<f64>,
    pub overall_cfs: Option<f64>,
    pub slope_fs: Option<f64>,
    pub slope_cfs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    /// The first failure's exit status, if any setting failed.
    pub fn failed(&self) -> bool {
        self.rows.iter().any(|r| r.status != "ok")
    }
}

fn dir_name(label: &str) -> String {
    label.replace('=', "_")
}

/// Runs every axis value in parallel, each in its own subdirectory, and
/// writes `comparison.csv` and `comparison.json`. Failed settings are
/// recorded and the remaining ones still run.
pub fn run_sweep(cfg: &ExperimentConfig, dir: &Path, verbose: bool) -> Result<SweepSummary> {
    use rayon::prelude::*;
    let runs = cfg.sweep_runs()?;
    fs::create_dir_all(dir)?;
    let rows: Vec<SweepRow> = runs
        .par_iter()
        .map(|(label, c)| {
            let hash = c.hash();
            let sub = dir.join(dir_name(label));
            match run_experiment(c, &sub, false) {
                Ok(r) => {
                    if verbose {
                        eprintln!("{label}: accuracy {:.3}", r.accuracy_final);
                    }
                    let f = r.forgetfulness.as_ref();
                    SweepRow {
                        setting: label.clone(),
                        config_hash: hash,
                        status: "ok".into(),
                        error: None,
                        accuracy_half: Some(r.accuracy_half),
                        accuracy_final: Some(r.accuracy_final),
                        overall_fs: f.map(|f| f.overall_fs),
                        overall_cfs: f.map(|f| f.overall_cfs),
                        slope_fs: f.map(|f| f.slope_fs),
                        slope_cfs: f.map(|f| f.slope_cfs),
                    }
                }
                Err(e) => {
                    let _ = write_error_file(&sub, &e, Some(&hash));
                    if verbose {
                        eprintln!("{label}: failed: {e}");
                    }
                    SweepRow {
                        setting: label.clone(),
                        config_hash: hash,
                        status: "failed".into(),
                        error: Some(e.to_string()),
                        accuracy_half: None,
                        accuracy_final: None,
                        overall_fs: None,
                        overall_cfs: None,
                        slope_fs: None,
                        slope_cfs: None,
                    }
                }
            }
        })
        .collect();
    let summary = SweepSummary {
        config_hash: cfg.hash(),
        rows,
    };
    let mut csv = String::from(
        "sweep_hash,setting,config_hash,status,accuracy_half,accuracy_final,overall_fs,overall_cfs,slope_fs,slope_cfs\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &summary.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            summary.config_hash,
            r.setting,
            r.config_hash,
            r.status,
            opt(r.accuracy_half),
            opt(r.accuracy_final),
            opt(r.overall_fs),
            opt(r.overall_cfs),
            opt(r.slope_fs),
            opt(r.slope_cfs)
        )
        .expect("string write");
    }
    fs::write(dir.join("comparison.csv"), csv)?;
    fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// Generates `n` samples per condition from a checkpoint and writes one
/// CSV per condition. When `expected_hash` is given the checkpoint must
/// come from that configuration.
pub fn dump_samples(
    checkpoint: &Path,
    expected_hash: Option<&str>,
    conditions: Option<&[usize]>,
    n: usize,
    seed: u64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if n == 0 {
        return Err(config("dump: n must be > 0"));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    if let Some(h) = expected_hash {
        if h != ckpt.config_hash {
            return Err(config(format!(
                "checkpoint was written by config {} but the given config hashes to {h}",
                ckpt.config_hash
            )));
        }
    }
    let cfg: ExperimentConfig = serde_json::from_str(&ckpt.config_json)?;
    if cfg.hash() != ckpt.config_hash {
        return Err(config("checkpoint's embedded config does not match its hash"));
    }
    let stream = cfg.stream.build()?;
    let t = stream.len();
    let mut init = rng::stream(cfg.seed, "init");
    let mut model = ModelState::new(&cfg.model, stream.data_dim(), t, stream.name.squash(), &mut init);
    ckpt.restore(&mut model)?;
    let all: Vec<usize> = (0..t).collect();
    let conditions = conditions.unwrap_or(&all);
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(conditions.len());
    for &c in conditions {
        let c = ConditionId::new(c, t).map_err(|e| config(e.to_string()))?;
        let mut r = rng::stream(seed, &format!("dump/{}", c.0));
        let z = LatentBatch::sample(n, model.generator.latent_dim(), &mut r, 0);
        let x = model.generator.generate(c, &z)?.x;
        let mut csv = String::from("config_hash,condition");
        for k in 0..x.cols() {
            write!(csv, ",x{k}").expect("string write");
        }
        csv.push('\n');
        for r in 0..x.rows() {
            write!(csv, "{},{}", ckpt.config_hash, c.0).expect("string write");
            for v in x.row(r) {
                write!(csv, ",{v}").expect("string write");
            }
            csv.push('\n');
        }
        let path = dir.join(format!("samples_condition_{}.csv", c.0));
        fs::write(&path, csv)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Machine-readable description of a failure.
pub fn error_record(e: &Error, config_hash: Option<&str>) -> Value {
    let mut v = serde_json::json!({
        "kind": e.kind(),
        "exit_code": e.exit_code(),
        "message": e.to_string(),
        "config_hash": config_hash,
    });
    if let Error::Training { task, step, breakdown, .. } = e {
        v["task"] = Value::from(*task);
        v["step"] = Value::from(*step);
        v["breakdown"] = serde_json::to_value(breakdown).unwrap_or(Value::Null);
    }
    v
}

/// Writes `error.json` into `dir`, creating it if needed.
pub fn write_error_file(dir: &Path, e: &Error, config_hash: Option<&str>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(&error_record(e, config_hash))? + "\n";
    fs::write(dir.join("error.json"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::FeatureSource;

    #[test]
    fn minimal_config_materializes_defaults() {
        let c = parse_config(r#"{"stream": "gauss2d-5", "mode": "align_feature"}"#).unwrap();
        assert_eq!(c.replay.alpha, Some(1.0));
        assert_eq!(c.replay.lambda_base, 1e-3);
        assert_eq!(c.replay.steps_per_task, 2000);
        assert_eq!(c.replay.feature_source, FeatureSource::Distilled);
        assert_eq!(c.stream.tasks, 5);
        assert_eq!(c.stream.radius, 4.0);
        let echoed = serde_json::to_string(&c).unwrap();
        assert_eq!(parse_config(&echoed).unwrap(), c);
    }

    #[test]
    fn glyph_default_steps() {
        let c = parse_config(r#"{"stream": "glyphs8-10", "mode": "none"}"#).unwrap();
        assert_eq!(c.replay.steps_per_task, GLYPH_STEPS_PER_TASK);
        let c = parse_config(r#"{"stream": "glyphs8-10", "replay": {"mode": "none", "steps_per_task": 7}}"#).unwrap();
        assert_eq!(c.replay.steps_per_task, 7);
    }

    #[test]
    fn config_errors() {
        let bad = [
            (r#"{"stream": "gauss2d-5", "mode": "align_combined"}"#, "alpha"),
            (r#"{"stream": "gauss2d-5", "mode": "align_combined", "alpha": 1.5}"#, "alpha"),
            (r#"{"stream": "gauss2d-5", "mode": "none", "alpha": 0.5}"#, "align_combined"),
            (r#"{"stream": "gauss2d-5", "mood": "none"}"#, "mood"),
            (r#"{"stream": "gauss2d-5", "replay": {"lambda_bsae": 1}}"#, "lambda_bsae"),
            (r#"{"stream": "gauss2d-0"}"#, "tasks"),
            (r#"{"stream": "glyphs8-11"}"#, "tasks"),
            (r#"{"stream": "gauss2d-5", "sweep": {"alpha": []}}"#, "sweep"),
            (r#"{"stream": {"name": "gauss2d", "tasks": 3, "sigma": -1}}"#, "sigma"),
            (r#"[1, 2]"#, "object"),
            (r#"{"stream": "#, "JSON"),
        ];
        for (text, needle) in bad {
            match parse_config(text) {
                Err(Error::Config(msg)) => assert!(msg.contains(needle), "{text}: {msg}"),
                other => panic!("{text}: expected a config error, got {other:?}"),
            }
        }
    }

    #[test]
    fn env_overrides() {
        let vars = vec![
            ("FEATREPLAY_REPLAY__ALPHA".to_string(), "0.25".to_string()),
            ("FEATREPLAY_MODE".to_string(), "align_combined".to_string()),
            ("FEATREPLAY_SEED".to_string(), "9".to_string()),
            ("OTHER_SEED".to_string(), "3".to_string()),
        ];
        let c = parse_config_with_env(r#"{"stream": "gauss2d-5"}"#, vars).unwrap();
        assert_eq!(c.replay.mode, ReplayMode::AlignCombined);
        assert_eq!(c.replay.alpha, Some(0.25));
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = parse_config(r#"{"stream": "gauss2d-5", "mode": "none"}"#).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn sweep_axes_expand() {
        let c = parse_config(
            r#"{"stream": "gauss2d-5", "mode": "none", "sweep": {"alpha": [0, 0.2, 0.4, 0.6, 0.8, 1.0]}}"#,
        )
        .unwrap();
        let runs = c.sweep_runs().unwrap();
        assert_eq!(runs.len(), 6);
        assert!(runs.iter().all(|(_, r)| r.replay.mode == ReplayMode::AlignCombined));
        assert_eq!(runs[1].1.replay.alpha, Some(0.2));
        let c = parse_config(
            r#"{"stream": "gauss2d-5", "sweep": {"mode": ["none", "replay_data", "align_image", "align_feature"]}}"#,
        )
        .unwrap();
        let runs = c.sweep_runs().unwrap();
        assert_eq!(runs.len(), 4);
        assert_eq!(runs[3].0, "mode=align_feature");
        assert!(runs.iter().all(|(_, r)| r.seed == c.seed));
    }

    #[test]
    fn error_record_fields() {
        let e = Error::Training {
            task: 2,
            step: 17,
            detail: "nan".into(),
            breakdown: None,
        };
        let v = error_record(&e, Some("abc"));
        assert_eq!(v["exit_code"], 1);
        assert_eq!(v["step"], 17);
        assert_eq!(v["config_hash"], "abc");
        assert_eq!(error_record(&config("x"), None)["exit_code"], 3);
        let io = Error::Io(std::io::Error::other("disk"));
        assert_eq!(error_record(&io, None)["exit_code"], 2);
    }
}
