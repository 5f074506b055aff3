use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::{run, sweep, RunConfig, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK};
use crate::agent::Method;
use crate::alignment::DistanceKind;
use crate::envs::EnvKind;

#[derive(Debug, Parser)]
#[command(name = "maie", version, about = "Train multimodal actor-critic agents on grid-world tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one agent and write its run directory.
    Run(ConfigArgs),
    /// Train every method/seed pair and summarise final returns.
    Sweep(SweepArgs),
}

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// Start from a saved config.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<EnvKind>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub rollout_length: Option<usize>,
    #[arg(long)]
    pub entropy_coef: Option<f64>,
    #[arg(long)]
    pub value_coef: Option<f64>,
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    #[arg(long)]
    pub c_sim: Option<f64>,
    #[arg(long)]
    pub c_td: Option<f64>,
    #[arg(long)]
    pub distance: Option<DistanceKind>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub fixed_visual_weight: Option<f64>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub embedding_every: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub base: ConfigArgs,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<Method>,
    /// Runs executed at the same time.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

macro_rules! apply {
    ($src:expr, $dst:expr, $($field:ident),*) => {
        $( if let Some(v) = $src.$field.clone() { $dst.$field = v; } )*
    };
}

impl ConfigArgs {
    pub fn resolve(&self) -> crate::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        apply!(self, cfg, env, out, eval_episodes, embedding_every);
        apply!(
            self, cfg.train, method, seed, episodes, gamma, lr, rollout_length, entropy_coef, value_coef,
            max_grad_norm, c_sim, c_td, distance, xi, eps, fixed_visual_weight
        );
        if self.max_steps.is_some() {
            cfg.train.max_steps = self.max_steps;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first) and executes; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(a) => {
            let cfg = match a.resolve() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            match run(&cfg) {
                Ok(o) => {
                    let n = o.episodes.len().max(1) as f64;
                    let success = o.episodes.iter().filter(|e| e.success).count() as f64 / n;
                    println!(
                        "{} episodes, {} env steps, success rate {:.3}; artifacts in {}",
                        o.episodes.len(),
                        o.env_steps,
                        success,
                        o.out.display()
                    );
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::Sweep(a) => {
            let cfg = match a.base.resolve() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            match sweep(&cfg, &a.seeds, &a.methods, a.jobs) {
                Ok(o) => {
                    for r in &o.summary {
                        println!("{:<14} runs={} failed={} mean={:.3} std={:.3}", r.method, r.runs, r.failed, r.mean, r.std);
                    }
                    for (m, s, e) in &o.failures {
                        eprintln!("run {m} seed {s} failed: {e}");
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    if e.to_string().contains("non-finite") {
                        EXIT_NUMERICAL
                    } else {
                        EXIT_CONFIG
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> ConfigArgs {
        let cli = Cli::try_parse_from(std::iter::once("maie").chain(args.iter().copied())).unwrap();
        match cli.command {
            Command::Run(a) => a,
            Command::Sweep(s) => s.base,
        }
    }

    #[test]
    fn flags_override_defaults() {
        let a = parse(&["run", "--env", "mining", "--method", "no_ie", "--c-sim", "0.3", "--rollout-length", "16"]);
        let cfg = a.resolve().unwrap();
        assert_eq!(cfg.env, EnvKind::Mining);
        assert_eq!(cfg.train.method, Method::NoIe);
        assert_eq!(cfg.train.c_sim, 0.3);
        assert_eq!(cfg.train.rollout_length, 16);
        assert_eq!(cfg.train.c_td, 0.01);
    }

    #[test]
    fn unknown_enum_values_exit_with_config_code() {
        assert_eq!(main_with_args(["maie", "run", "--method", "attention"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["maie", "run", "--env", "atari"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["maie", "run", "--gamma", "0"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["maie", "--help"]), EXIT_OK);
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut base = RunConfig::default();
        base.train.seed = 42;
        base.train.lr = 5e-4;
        std::fs::write(&path, serde_json::to_string(&base).unwrap()).unwrap();
        let cfg = parse(&["run", "--config", path.to_str().unwrap(), "--seed", "7"]).resolve().unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.lr, 5e-4);
    }

    #[test]
    fn sweep_lists_are_comma_separated() {
        let cli = Cli::try_parse_from(["maie", "sweep", "--seeds", "0,1,2", "--methods", "maie,concat"]).unwrap();
        let Command::Sweep(s) = cli.command else { panic!() };
        assert_eq!(s.seeds, [0, 1, 2]);
        assert_eq!(s.methods, [Method::Maie, Method::Concat]);
    }
}
