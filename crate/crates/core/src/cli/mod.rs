//! Seeded training runs, method sweeps and the files they leave behind.
//!
//! A run directory holds `config.json`, `metrics.csv` (one row per training
//! episode), `timings.csv`, `lambda_trace.csv` (one row per acted step),
//! `embeddings.csv` (per-modality features every few steps),
//! `checkpoint.json` and, when evaluation episodes were requested,
//! `evaluation.csv`. Every file is written under a temporary name and renamed
//! once complete.

mod args;
mod atomic;
mod metrics;
mod sweep;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{EpisodeRecord, Evaluation, StepTrace, TrainConfig, Trainer};
use crate::envs::{EnvKind, Modality};
use crate::error::{Error, Result};

pub use args::{main_with_args, Cli};
pub use atomic::{write_atomic, AtomicFile};
pub use metrics::{metrics_header, read_metrics, MetricsRow, MetricsWriter, METRICS_FIXED_COLUMNS, METRICS_VERSION};
pub use sweep::{final_window_return, summarize, sweep, SummaryRow, SweepOutcome};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const LAMBDA_TRACE_FILE: &str = "lambda_trace.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EVALUATION_FILE: &str = "evaluation.csv";
pub const ROLLOUT_DUMP_FILE: &str = "rollout_dump.json";
pub const SUMMARY_FILE: &str = "summary.csv";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub out: PathBuf,
    /// Features are dumped at every global step divisible by this.
    pub embedding_every: u64,
    /// Episodes run after training without learning; 0 skips evaluation.
    pub eval_episodes: usize,
    pub eval_greedy: bool,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvKind::HeteroNav,
            out: PathBuf::from("runs"),
            embedding_every: 5,
            eval_episodes: 0,
            eval_greedy: false,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_every == 0 {
            return Err(Error::Config("embedding_every must be positive".into()));
        }
        self.train.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Evaluation episodes use their own environment stream.
    pub fn eval_seed(&self) -> u64 {
        self.train.seed.wrapping_add(1_000_003)
    }
}

/// What a finished run produced besides its files.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub episodes: Vec<EpisodeRecord>,
    pub env_steps: u64,
    pub evaluation: Option<Evaluation>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(Error),
    #[error("numerical abort: {source}; rollout dumped to {}", dump.display())]
    Numerical { source: Error, dump: PathBuf },
    #[error("{0}")]
    Failed(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Numerical { .. } => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => RunError::Config(e),
            other => RunError::Failed(other),
        }
    }
}

fn cue_name(t: &StepTrace) -> String {
    t.cue.map_or_else(|| "none".to_string(), |c| c.name())
}

struct TraceWriters {
    lambda: csv::Writer<AtomicFile>,
    embeddings: csv::Writer<AtomicFile>,
    modalities: Vec<Modality>,
    every: u64,
}

impl TraceWriters {
    fn create(dir: &Path, modalities: Vec<Modality>, every: u64) -> Result<Self> {
        let mut lambda = csv::Writer::from_writer(AtomicFile::create(dir.join(LAMBDA_TRACE_FILE))?);
        let mut head: Vec<String> =
            ["phase", "episode", "step", "global_step", "cue", "action", "reward"].map(String::from).to_vec();
        head.extend(modalities.iter().map(|m| format!("lambda_{}", m.name())));
        lambda.write_record(&head)?;
        let mut embeddings = csv::Writer::from_writer(AtomicFile::create(dir.join(EMBEDDINGS_FILE))?);
        let mut head: Vec<String> =
            ["phase", "episode", "step", "global_step", "cue", "modality"].map(String::from).to_vec();
        head.extend((0..crate::extractors::FEATURE_DIM).map(|i| format!("f{i}")));
        embeddings.write_record(&head)?;
        Ok(TraceWriters { lambda, embeddings, modalities, every })
    }

    fn write(&mut self, phase: &str, t: &StepTrace) -> Result<()> {
        let mut rec = vec![
            phase.to_string(),
            t.episode.to_string(),
            t.step.to_string(),
            t.global_step.to_string(),
            cue_name(t),
            t.action.to_string(),
            t.reward.to_string(),
        ];
        rec.extend(t.mean_lambda.iter().map(f64::to_string));
        self.lambda.write_record(&rec)?;
        if t.global_step.is_multiple_of(self.every) {
            for (m, f) in self.modalities.iter().zip(&t.features) {
                let mut rec = vec![
                    phase.to_string(),
                    t.episode.to_string(),
                    t.step.to_string(),
                    t.global_step.to_string(),
                    cue_name(t),
                    m.name().to_string(),
                ];
                rec.extend(f.iter().map(f64::to_string));
                self.embeddings.write_record(&rec)?;
            }
        }
        Ok(())
    }

    fn commit(self) -> Result<()> {
        for w in [self.lambda, self.embeddings] {
            w.into_inner().map_err(|e| Error::Io(e.into_error()))?.commit()?;
        }
        Ok(())
    }
}

/// Trains one agent as configured and writes the run directory.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    cfg.validate().map_err(RunError::Config)?;
    let dir = cfg.out.clone();
    fs::create_dir_all(&dir).map_err(|e| RunError::Failed(e.into()))?;
    let json = serde_json::to_string_pretty(cfg).map_err(|e| RunError::Failed(e.into()))?;
    write_atomic(dir.join(CONFIG_FILE), json.as_bytes()).map_err(|e| RunError::Failed(e.into()))?;

    let mut trainer = Trainer::new(cfg.env, cfg.train.clone())?;
    let modalities: Vec<Modality> = trainer.agent().specs().iter().map(|s| s.modality).collect();
    let mut metrics = MetricsWriter::new(AtomicFile::create(dir.join(METRICS_FILE)).map_err(Error::from)?, &modalities)?;
    let mut timings = csv::Writer::from_writer(AtomicFile::create(dir.join(TIMINGS_FILE)).map_err(Error::from)?);
    timings.write_record(["episode", "wall_ms"]).map_err(Error::from)?;
    let mut traces = TraceWriters::create(&dir, modalities.clone(), cfg.embedding_every)?;

    let start = Instant::now();
    let mut episodes = Vec::new();
    while !trainer.done() {
        let report = match trainer.train_step() {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                let dump = dir.join(ROLLOUT_DUMP_FILE);
                let body = trainer.failed_rollout().map(|b| b.dump()).unwrap_or_default();
                let text = serde_json::to_string_pretty(&body).map_err(|e| RunError::Failed(e.into()))?;
                write_atomic(&dump, text.as_bytes()).map_err(|e| RunError::Failed(e.into()))?;
                log::error!("non-finite value at env step {}: {e}", trainer.env_steps());
                return Err(RunError::Numerical { source: e, dump });
            }
            Err(e) => return Err(e.into()),
        };
        for t in &report.steps {
            traces.write("train", t)?;
        }
        for ep in report.episodes {
            metrics.write(&MetricsRow::new(&ep, &report.update))?;
            let ms = start.elapsed().as_millis().to_string();
            timings.write_record([ep.index.to_string(), ms]).map_err(Error::from)?;
            log::debug!("episode {} return {} success {}", ep.index, ep.ret, ep.success);
            episodes.push(ep);
        }
    }

    let evaluation = if cfg.eval_episodes > 0 {
        let eval = trainer.evaluate(cfg.eval_episodes, cfg.eval_greedy, cfg.eval_seed())?;
        for t in &eval.steps {
            traces.write("eval", t)?;
        }
        let mut w = csv::Writer::from_writer(AtomicFile::create(dir.join(EVALUATION_FILE)).map_err(Error::from)?);
        let mut head: Vec<String> = ["episode", "return", "success", "length"].map(String::from).to_vec();
        head.extend(modalities.iter().map(|m| format!("lambda_{}", m.name())));
        w.write_record(&head).map_err(Error::from)?;
        for e in &eval.episodes {
            let mut rec =
                vec![e.index.to_string(), e.ret.to_string(), u8::from(e.success).to_string(), e.length.to_string()];
            rec.extend(e.mean_lambda.iter().map(f64::to_string));
            w.write_record(&rec).map_err(Error::from)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))?.commit().map_err(Error::from)?;
        Some(eval)
    } else {
        None
    };

    let ckpt = serde_json::to_string(&trainer.agent().checkpoint()).map_err(Error::from)?;
    write_atomic(dir.join(CHECKPOINT_FILE), ckpt.as_bytes()).map_err(Error::from)?;
    traces.commit()?;
    let mut timings = timings.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    timings.flush().map_err(Error::from)?;
    timings.commit().map_err(Error::from)?;
    metrics.into_inner()?.commit().map_err(Error::from)?;
    Ok(RunOutcome { out: dir, episodes, env_steps: trainer.env_steps(), evaluation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Method;

    fn small(dir: &Path, env: EnvKind, method: Method) -> RunConfig {
        RunConfig {
            env,
            out: dir.to_path_buf(),
            train: TrainConfig { method, seed: 1, episodes: 2, rollout_length: 16, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { eval_episodes: 1, ..small(dir.path(), EnvKind::AvNav, Method::Maie) };
        let out = run(&cfg).unwrap();
        for f in [CONFIG_FILE, METRICS_FILE, TIMINGS_FILE, LAMBDA_TRACE_FILE, EMBEDDINGS_FILE, CHECKPOINT_FILE, EVALUATION_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".partial"))
            .collect();
        assert!(leftovers.is_empty());
        let (_, rows) = read_metrics(fs::File::open(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows.last().unwrap().env_steps, out.env_steps);
        let trace = fs::read_to_string(dir.path().join(LAMBDA_TRACE_FILE)).unwrap();
        let eval_steps: usize = out.evaluation.unwrap().episodes.iter().map(|e| e.length).sum();
        assert_eq!(trace.lines().count(), 1 + out.env_steps as usize + eval_steps);
        let embed = fs::read_to_string(dir.path().join(EMBEDDINGS_FILE)).unwrap();
        let train_rows = embed.lines().filter(|l| l.starts_with("train,")).count();
        assert_eq!(train_rows, 2 * (out.env_steps as usize / 5));
    }

    #[test]
    fn config_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path(), EnvKind::HeteroNav, Method::NoIe);
        run(&cfg).unwrap();
        let loaded = RunConfig::load(&dir.path().join(CONFIG_FILE)).unwrap();
        assert_eq!(loaded, cfg);
    }

    #[test]
    fn invalid_config_is_rejected_before_work() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(&dir.path().join("run"), EnvKind::HeteroNav, Method::Maie);
        cfg.train.gamma = 2.0;
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        assert!(!dir.path().join("run").exists());
    }

    #[test]
    fn numerical_abort_dumps_rollout() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path(), EnvKind::HeteroNav, Method::Concat);
        // an absurd step size overflows the parameters within a few updates
        cfg.train.lr = 1e300;
        cfg.train.episodes = 1000;
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_NUMERICAL, "{err}");
        let RunError::Numerical { dump, .. } = err else { unreachable!() };
        let body: serde_json::Value = serde_json::from_str(&fs::read_to_string(dump).unwrap()).unwrap();
        assert!(body["steps"].as_array().is_some());
        assert!(!dir.path().join(METRICS_FILE).exists());
    }
}
