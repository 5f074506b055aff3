use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, TrainConfig, Transition, UpdateMetrics};
use crate::agent::RolloutBuffer;
use crate::envs::{AudioClass, EnvKind, Environment, MultimodalObservation};
use crate::error::Result;
use crate::extractors::RecurrentState;

/// Summary of one finished episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    /// Environment steps taken so far, this episode included.
    pub env_steps: u64,
    pub ret: f64,
    pub success: bool,
    pub length: usize,
    /// Fusion weight of each modality averaged over the episode.
    pub mean_lambda: Vec<f64>,
}

/// One acted step, for traces and embedding dumps.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub episode: usize,
    /// Index within the episode.
    pub step: usize,
    pub global_step: u64,
    pub cue: Option<AudioClass>,
    pub mean_lambda: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub action: usize,
    pub reward: f64,
}

/// What one `train_step` produced.
#[derive(Clone, Debug)]
pub struct RolloutReport {
    /// Episodes that finished during the rollout.
    pub episodes: Vec<EpisodeRecord>,
    pub steps: Vec<StepTrace>,
    pub update: UpdateMetrics,
}

/// Episodes and step traces of a policy run without learning.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub episodes: Vec<EpisodeRecord>,
    pub steps: Vec<StepTrace>,
}

impl Evaluation {
    pub fn success_rate(&self) -> f64 {
        self.episodes.iter().filter(|e| e.success).count() as f64 / self.episodes.len().max(1) as f64
    }

    pub fn mean_return(&self) -> f64 {
        self.episodes.iter().map(|e| e.ret).sum::<f64>() / self.episodes.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
struct EpisodeTally {
    index: usize,
    step: usize,
    ret: f64,
    lambda_sum: Vec<f64>,
}

impl EpisodeTally {
    fn new(index: usize, modalities: usize) -> Self {
        EpisodeTally { index, step: 0, ret: 0.0, lambda_sum: vec![0.0; modalities] }
    }

    fn record(&mut self, lambda: &[f64], reward: f64) {
        self.step += 1;
        self.ret += reward;
        for (s, l) in self.lambda_sum.iter_mut().zip(lambda) {
            *s += l;
        }
    }

    fn finish(&self, env_steps: u64, success: bool) -> EpisodeRecord {
        EpisodeRecord {
            index: self.index,
            env_steps,
            ret: self.ret,
            success,
            length: self.step,
            mean_lambda: self.lambda_sum.iter().map(|s| s / self.step.max(1) as f64).collect(),
        }
    }
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64).collect()
}

/// Drives one agent on one environment: rollouts of `rollout_length` steps
/// that continue across episode boundaries, each followed by an update.
pub struct Trainer {
    kind: EnvKind,
    env: Box<dyn Environment>,
    agent: Agent,
    rng: ChaCha8Rng,
    obs: MultimodalObservation,
    states: Vec<RecurrentState>,
    fresh: bool,
    tally: EpisodeTally,
    env_steps: u64,
    completed: usize,
    failed: Option<RolloutBuffer>,
}

impl Trainer {
    /// Seeds everything from `config.seed`: the environment directly, and
    /// parameter and action streams through a master generator.
    pub fn new(kind: EnvKind, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let param_seed = master.next_u64();
        let rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let mut env = kind.build(config.seed);
        let agent = Agent::new(env.modalities(), env.action_count(), config, param_seed)?;
        let obs = env.reset(None);
        let states = agent.initial_states();
        let m = agent.specs().len();
        Ok(Trainer {
            kind,
            env,
            agent,
            rng,
            obs,
            states,
            fresh: true,
            tally: EpisodeTally::new(0, m),
            env_steps: 0,
            completed: 0,
            failed: None,
        })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn agent_mut(&mut self) -> &mut Agent {
        &mut self.agent
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes_completed(&self) -> usize {
        self.completed
    }

    /// The episode or step budget is spent.
    pub fn done(&self) -> bool {
        let cfg = self.agent.config();
        self.completed >= cfg.episodes || cfg.max_steps.is_some_and(|m| self.env_steps >= m)
    }

    /// The rollout during which collection or the update failed, kept for
    /// post-mortem dumps.
    pub fn failed_rollout(&self) -> Option<&RolloutBuffer> {
        self.failed.as_ref()
    }

    fn collect(&mut self) -> Result<(RolloutBuffer, Vec<StepTrace>, Vec<EpisodeRecord>)> {
        let capacity = self.agent.config().rollout_length;
        let mut buffer = RolloutBuffer::new(capacity, self.states.clone());
        let mut traces = Vec::with_capacity(capacity);
        let mut episodes = Vec::new();
        match self.fill(&mut buffer, &mut traces, &mut episodes) {
            Ok(()) => Ok((buffer, traces, episodes)),
            Err(e) => {
                self.failed = Some(buffer);
                Err(e)
            }
        }
    }

    fn fill(
        &mut self,
        buffer: &mut RolloutBuffer,
        traces: &mut Vec<StepTrace>,
        episodes: &mut Vec<EpisodeRecord>,
    ) -> Result<()> {
        while !buffer.is_full() && !self.done() {
            let d = self.agent.decide(&self.obs, &self.states, Some(&mut self.rng))?;
            let step = self.env.step(d.action)?;
            self.env_steps += 1;
            let mean_lambda = mean_rows(&d.lambda);
            traces.push(StepTrace {
                episode: self.tally.index,
                step: self.tally.step,
                global_step: self.env_steps,
                cue: self.obs.cue,
                mean_lambda: mean_lambda.clone(),
                features: d.features.clone(),
                action: d.action,
                reward: step.reward,
            });
            self.tally.record(&mean_lambda, step.reward);
            let observation = std::mem::replace(&mut self.obs, step.observation);
            buffer.push(Transition {
                observation,
                reset: self.fresh,
                features: d.features,
                lambda: d.lambda,
                action: d.action,
                log_prob: d.log_prob,
                reward: step.reward,
                value: d.value,
                done: step.done,
            });
            self.states = d.states;
            self.fresh = step.done;
            if step.done {
                episodes.push(self.tally.finish(self.env_steps, step.success));
                self.completed += 1;
                self.tally = EpisodeTally::new(self.completed, self.agent.specs().len());
                self.obs = self.env.reset(None);
                self.states = self.agent.initial_states();
            }
        }
        if !self.fresh && !buffer.is_empty() {
            buffer.bootstrap = self.agent.value_of(&self.obs, &self.states)?;
        }
        Ok(())
    }

    /// Collects one rollout without updating; the trainer advances as if it
    /// had trained on it.
    pub fn collect_rollout(&mut self) -> Result<RolloutBuffer> {
        Ok(self.collect()?.0)
    }

    /// Collects one rollout and updates the agent on it.
    pub fn train_step(&mut self) -> Result<RolloutReport> {
        let (buffer, steps, episodes) = self.collect()?;
        match self.agent.update(&buffer) {
            Ok(update) => Ok(RolloutReport { episodes, steps, update }),
            Err(e) => {
                self.failed = Some(buffer);
                Err(e)
            }
        }
    }

    /// Runs `episodes` episodes on a fresh environment seeded with `seed`,
    /// without learning. Greedy mode takes the most probable action.
    pub fn evaluate(&self, episodes: usize, greedy: bool, seed: u64) -> Result<Evaluation> {
        let mut env = self.kind.build(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.agent.specs().len();
        let mut out = Evaluation { episodes: Vec::with_capacity(episodes), steps: Vec::new() };
        let mut global = 0;
        for index in 0..episodes {
            let mut obs = env.reset(None);
            let mut states = self.agent.initial_states();
            let mut tally = EpisodeTally::new(index, m);
            loop {
                let d = self.agent.decide(&obs, &states, if greedy { None } else { Some(&mut rng) })?;
                let step = env.step(d.action)?;
                global += 1;
                let mean_lambda = mean_rows(&d.lambda);
                out.steps.push(StepTrace {
                    episode: index,
                    step: tally.step,
                    global_step: global,
                    cue: obs.cue,
                    mean_lambda: mean_lambda.clone(),
                    features: d.features,
                    action: d.action,
                    reward: step.reward,
                });
                tally.record(&mean_lambda, step.reward);
                obs = step.observation;
                states = d.states;
                if step.done {
                    out.episodes.push(tally.finish(global, step.success));
                    break;
                }
            }
        }
        Ok(out)
    }
}
