//! Advantage actor-critic over the fused multimodal state, trained per
//! rollout in two backward passes: the representation loss into the
//! extractors, then the actor-critic loss through the fusion layer into every
//! parameter.

mod config;
mod heads;
mod losses;
mod rollout;
mod trainer;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::loss_srl;
use crate::autodiff::{Adam, Graph, ParamId, ParamStore, SavedParam, Var};
use crate::enhancement::{fuse, importance, update_stats, ModalityStats};
use crate::envs::{ModalitySpec, MultimodalObservation};
use crate::error::{Error, Result};
use crate::extractors::{Extractors, RecurrentState, FEATURE_DIM};

pub use config::{Method, TrainConfig};
pub use heads::{Mlp, HIDDEN};
pub use losses::{compute_returns, loss_actor, loss_critic, ActorLoss, Categorical};
pub use rollout::{RolloutBuffer, Transition};
pub use trainer::{EpisodeRecord, Evaluation, RolloutReport, StepTrace, Trainer};

/// Scale of the actor's output layer at initialisation; keeps the initial
/// policy close to uniform.
const ACTOR_OUTPUT_SCALE: f64 = 0.01;

/// Result of running the policy on one observation.
#[derive(Clone, Debug)]
pub struct Decision {
    pub action: usize,
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
    /// Raw feature per modality.
    pub features: Vec<Vec<f64>>,
    /// Fusion weights per modality.
    pub lambda: Vec<Vec<f64>>,
    /// Recurrent states after consuming the observation.
    pub states: Vec<RecurrentState>,
}

/// Scalars reported by one update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub loss_actor: f64,
    pub loss_critic: f64,
    pub loss_sim: f64,
    pub loss_td: f64,
    pub loss_srl: f64,
    pub entropy: f64,
    /// Joint gradient norm of the actor-critic pass before clipping.
    pub grad_norm: f64,
    /// Mean fusion weight of each modality over the rollout.
    pub mean_lambda: Vec<f64>,
}

/// Graph handles of the actor-critic pass, exposed for inspection.
pub struct RlPass {
    pub graph: Graph,
    /// Per-modality features `[T, L]`.
    pub features: Vec<Var>,
    pub lambda: Vec<Vec<f64>>,
    /// Fused state `[T, m·L]`.
    pub fused: Var,
    pub values: Vec<f64>,
    pub returns: Vec<f64>,
    pub actor: ActorLoss,
    pub critic: Var,
    pub total: Var,
}

/// Parameters plus normalisation statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub params: BTreeMap<String, SavedParam>,
    pub stats: Vec<ModalityStats>,
}

pub struct Agent {
    config: TrainConfig,
    specs: Vec<ModalitySpec>,
    store: ParamStore,
    extractors: Extractors,
    actor: Mlp,
    critic: Mlp,
    stats: Vec<ModalityStats>,
    srl_opt: Adam,
    rl_opt: Adam,
}

impl Agent {
    /// Fresh agent; parameters are drawn from a stream seeded by `param_seed`.
    pub fn new(specs: &[ModalitySpec], action_count: usize, config: TrainConfig, param_seed: u64) -> Result<Self> {
        config.validate()?;
        if specs.is_empty() || action_count == 0 {
            return Err(Error::Config("agent needs at least one modality and one action".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(param_seed);
        let extractors = Extractors::new(specs, &mut store, &mut rng);
        let fused = specs.len() * FEATURE_DIM;
        let actor = Mlp::new("actor", fused, action_count, ACTOR_OUTPUT_SCALE, &mut store, &mut rng);
        let critic = Mlp::new("critic", fused, 1, 0.0, &mut store, &mut rng);
        let stats = vec![ModalityStats::new(FEATURE_DIM, config.xi, config.eps); specs.len()];
        let adam = config.adam();
        Ok(Agent {
            config,
            specs: specs.to_vec(),
            store,
            extractors,
            actor,
            critic,
            stats,
            srl_opt: Adam::new(adam),
            rl_opt: Adam::new(adam),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ModalitySpec] {
        &self.specs
    }

    pub fn action_count(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn extractors(&self) -> &Extractors {
        &self.extractors
    }

    pub fn stats(&self) -> &[ModalityStats] {
        &self.stats
    }

    /// Extractor parameters φ.
    pub fn extractor_params(&self) -> Vec<ParamId> {
        self.extractors.param_ids()
    }

    /// Actor parameters θ.
    pub fn actor_params(&self) -> Vec<ParamId> {
        self.actor.param_ids()
    }

    /// Critic parameters w.
    pub fn critic_params(&self) -> Vec<ParamId> {
        self.critic.param_ids()
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    pub fn initial_states(&self) -> Vec<RecurrentState> {
        self.extractors.initial_states()
    }

    /// Fusion weights for per-modality feature arrays of any equal length
    /// (a multiple of the feature dimension).
    pub fn fusion_weights(&self, raw: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        match self.config.method {
            m if m.enhances() => {
                let normalized: Vec<Vec<f64>> =
                    raw.iter().zip(&self.stats).map(|(f, s)| s.normalize_values(f)).collect();
                let refs: Vec<&[f64]> = normalized.iter().map(Vec::as_slice).collect();
                importance(&refs)
            }
            Method::FixedWeights => {
                let w = self.config.fixed_weights(raw.len());
                Ok(raw.iter().zip(w).map(|(f, w)| vec![w; f.len()]).collect())
            }
            _ => Ok(raw.iter().map(|f| vec![1.0; f.len()]).collect()),
        }
    }

    fn fused_features(
        &self,
        g: &mut Graph,
        obs: &MultimodalObservation,
        states: &[RecurrentState],
    ) -> Result<(Var, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<RecurrentState>)> {
        if obs.parts.len() != self.extractors.len() || states.len() != self.extractors.len() {
            return Err(Error::Config(format!(
                "{} observation parts and {} states for {} extractors",
                obs.parts.len(),
                states.len(),
                self.extractors.len()
            )));
        }
        let mut vars = Vec::with_capacity(obs.parts.len());
        let mut next = Vec::with_capacity(obs.parts.len());
        for ((e, part), state) in self.extractors.iter().zip(&obs.parts).zip(states) {
            let (f, s) = e.extract(g, &self.store, part, state)?;
            vars.push(f);
            next.push(s);
        }
        let raw: Vec<Vec<f64>> = vars.iter().map(|v| g.value(*v).to_vec()).collect();
        let refs: Vec<&[f64]> = raw.iter().map(Vec::as_slice).collect();
        let lambda = self.fusion_weights(&refs)?;
        let fused = fuse(g, &vars, &lambda)?;
        let fused = g.reshape(fused, vec![1, self.specs.len() * FEATURE_DIM])?;
        Ok((fused, raw, lambda, next))
    }

    /// Runs the policy on one observation. Samples from `rng` when given,
    /// otherwise takes the most probable action.
    pub fn decide(
        &self,
        obs: &MultimodalObservation,
        states: &[RecurrentState],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Decision> {
        let mut g = Graph::no_grad();
        let (fused, features, lambda, states) = self.fused_features(&mut g, obs, states)?;
        let logits = self.actor.forward(&mut g, &self.store, fused)?;
        let value = self.critic.forward(&mut g, &self.store, fused)?;
        let dist = Categorical::from_logits(g.value(logits).data())?;
        let action = match rng {
            Some(r) => dist.sample(r),
            None => dist.argmax(),
        };
        Ok(Decision {
            action,
            log_prob: dist.log_probs[action],
            entropy: dist.entropy(),
            value: g.value(value).item(),
            features,
            lambda,
            states,
        })
    }

    /// Critic estimate of an observation.
    pub fn value_of(&self, obs: &MultimodalObservation, states: &[RecurrentState]) -> Result<f64> {
        let mut g = Graph::no_grad();
        let (fused, ..) = self.fused_features(&mut g, obs, states)?;
        let value = self.critic.forward(&mut g, &self.store, fused)?;
        Ok(g.value(value).item())
    }

    fn feature_sequences(&self, g: &mut Graph, buffer: &RolloutBuffer) -> Result<Vec<Var>> {
        let resets = buffer.resets();
        let mut seqs = Vec::with_capacity(self.extractors.len());
        for (m, e) in self.extractors.iter().enumerate() {
            let obs = buffer.modality_observations(m);
            let (seq, _) = e.extract_sequence(g, &self.store, &obs, &resets, &buffer.init_states[m])?;
            seqs.push(seq);
        }
        Ok(seqs)
    }

    /// Builds the actor-critic loss over `buffer` with the current parameters
    /// and statistics.
    pub fn rl_pass(&self, buffer: &RolloutBuffer) -> Result<RlPass> {
        if buffer.is_empty() {
            return Err(Error::EmptyBatch("rollout"));
        }
        let mut g = Graph::new();
        let features = self.feature_sequences(&mut g, buffer)?;
        let raw: Vec<Vec<f64>> = features.iter().map(|v| g.value(*v).to_vec()).collect();
        let refs: Vec<&[f64]> = raw.iter().map(Vec::as_slice).collect();
        let lambda = self.fusion_weights(&refs)?;
        let fused = fuse(&mut g, &features, &lambda)?;
        let logits = self.actor.forward(&mut g, &self.store, fused)?;
        let value_var = self.critic.forward(&mut g, &self.store, fused)?;
        let values = g.value(value_var).to_vec();
        let returns = compute_returns(&buffer.rewards(), &buffer.dones(), self.config.gamma, buffer.bootstrap)?;
        let advantages: Vec<f64> = returns.iter().zip(&values).map(|(r, v)| r - v).collect();
        let actor = loss_actor(&mut g, logits, &buffer.actions(), &advantages, self.config.entropy_coef)?;
        let critic = loss_critic(&mut g, value_var, &returns)?;
        let weighted = g.scale(critic, self.config.value_coef)?;
        let total = g.add(actor.total, weighted)?;
        Ok(RlPass { graph: g, features, lambda, fused, values, returns, actor, critic, total })
    }

    fn check_finite(what: &'static str, v: f64) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { what, detail: format!("value {v}") })
        }
    }

    /// Two-step update from a full rollout: representation loss into the
    /// extractors, statistics refresh, then the actor-critic loss into every
    /// parameter.
    pub fn update(&mut self, buffer: &RolloutBuffer) -> Result<UpdateMetrics> {
        if buffer.is_empty() {
            return Err(Error::EmptyBatch("rollout"));
        }
        let mut metrics = UpdateMetrics::default();
        let method = self.config.method;

        if method.aligns() {
            let mut g = Graph::new();
            let seqs = self.feature_sequences(&mut g, buffer)?;
            let srl = loss_srl(&mut g, &seqs, &self.config.alignment())?;
            metrics.loss_sim = g.value(srl.sim).item();
            metrics.loss_td = g.value(srl.td).item();
            metrics.loss_srl = g.value(srl.total).item();
            Self::check_finite("loss_srl", metrics.loss_srl)?;
            g.backward(srl.total)?;
            self.store.zero_grad();
            g.accumulate_param_grads(&mut self.store);
            let phi = self.extractor_params();
            self.store.clip_grad_norm(&phi, self.config.max_grad_norm);
            self.srl_opt.step(&mut self.store, &phi);
            self.store.zero_grad();
        }

        if method.enhances() {
            for (m, stats) in self.stats.iter_mut().enumerate() {
                *stats = update_stats(&buffer.modality_features(m), stats)?;
            }
        }

        let mut pass = self.rl_pass(buffer)?;
        metrics.loss_actor = pass.graph.value(pass.actor.total).item();
        metrics.loss_critic = pass.graph.value(pass.critic).item();
        metrics.entropy = pass.graph.value(pass.actor.entropy).item();
        Self::check_finite("loss_actor", metrics.loss_actor)?;
        Self::check_finite("loss_critic", metrics.loss_critic)?;
        metrics.mean_lambda =
            pass.lambda.iter().map(|l| l.iter().sum::<f64>() / l.len() as f64).collect();
        pass.graph.backward(pass.total)?;
        self.store.zero_grad();
        pass.graph.accumulate_param_grads(&mut self.store);
        let all = self.all_params();
        metrics.grad_norm = self.store.clip_grad_norm(&all, self.config.max_grad_norm);
        Self::check_finite("gradient norm", metrics.grad_norm)?;
        self.rl_opt.step(&mut self.store, &all);
        self.store.zero_grad();
        Ok(metrics)
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint { params: self.store.to_saved(), stats: self.stats.clone() }
    }

    pub fn restore(&mut self, ckpt: &AgentCheckpoint) -> Result<()> {
        if ckpt.stats.len() != self.stats.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} modality stats, agent has {}",
                ckpt.stats.len(),
                self.stats.len()
            )));
        }
        self.store.load_saved(&ckpt.params)?;
        self.stats = ckpt.stats.clone();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::envs::EnvKind;

    fn matrix(rows: &[Vec<f64>]) -> Result<Tensor> {
        let cols = rows.first().map_or(0, Vec::len);
        Ok(Tensor::new(vec![rows.len(), cols], rows.concat())?)
    }

    fn trainer(kind: EnvKind, method: Method, seed: u64) -> Trainer {
        let cfg = TrainConfig { method, seed, rollout_length: 8, episodes: 3, max_steps: Some(64), ..Default::default() };
        Trainer::new(kind, cfg).unwrap()
    }

    #[test]
    fn one_update_is_reproducible() {
        let run = || {
            let mut t = trainer(EnvKind::HeteroNav, Method::Maie, 5);
            let r = t.train_step().unwrap();
            (r.update, t.agent().checkpoint())
        };
        let (a, ca) = run();
        let (b, cb) = run();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
    }

    #[test]
    fn concat_keeps_unit_weights_and_skips_alignment() {
        let mut t = trainer(EnvKind::AvNav, Method::Concat, 1);
        let before = t.agent().stats().to_vec();
        let r = t.train_step().unwrap();
        assert_eq!(r.update.mean_lambda, [1.0, 1.0]);
        assert_eq!(r.update.loss_srl, 0.0);
        assert_eq!(t.agent().stats(), before.as_slice());
        assert!(r.steps.iter().all(|s| s.mean_lambda == [1.0, 1.0]));
    }

    #[test]
    fn no_ie_aligns_but_keeps_unit_weights() {
        let mut t = trainer(EnvKind::AvNav, Method::NoIe, 1);
        let before = t.agent().stats().to_vec();
        let r = t.train_step().unwrap();
        assert_eq!(r.update.mean_lambda, [1.0, 1.0]);
        assert!(r.update.loss_srl != 0.0);
        assert_eq!(t.agent().stats(), before.as_slice());
    }

    #[test]
    fn maie_updates_stats_and_weights_sum_to_one() {
        let mut t = trainer(EnvKind::Mining, Method::Maie, 2);
        let before = t.agent().stats().to_vec();
        let r = t.train_step().unwrap();
        assert_ne!(t.agent().stats(), before.as_slice());
        assert!((r.update.mean_lambda.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn srl_step_moves_only_extractors() {
        let mut t = trainer(EnvKind::HeteroNav, Method::Maie, 3);
        let buffer = t.collect_rollout().unwrap();
        let agent = t.agent_mut();
        let heads: Vec<ParamId> = agent.actor_params().into_iter().chain(agent.critic_params()).collect();
        let snapshot = |a: &Agent, ids: &[ParamId]| -> Vec<Vec<f64>> { ids.iter().map(|i| a.store().value(*i).to_vec()).collect() };
        let heads_before = snapshot(agent, &heads);
        let phi = agent.extractor_params();
        let phi_before = snapshot(agent, &phi);
        // alignment pass alone
        let mut g = Graph::new();
        let seqs = agent.feature_sequences(&mut g, &buffer).unwrap();
        let srl = loss_srl(&mut g, &seqs, &agent.config.alignment()).unwrap();
        g.backward(srl.total).unwrap();
        agent.store.zero_grad();
        g.accumulate_param_grads(&mut agent.store);
        assert_eq!(agent.store.grad_norm(&heads), 0.0);
        let p = agent.extractor_params();
        agent.srl_opt.step(&mut agent.store, &p);
        assert_eq!(snapshot(agent, &heads), heads_before);
        assert_ne!(snapshot(agent, &phi), phi_before);
    }

    #[test]
    fn feature_adjoint_is_lambda_weighted() {
        let mut t = trainer(EnvKind::TargetSelect, Method::Maie, 4);
        for _ in 0..2 {
            t.train_step().unwrap();
        }
        let buffer = t.collect_rollout().unwrap();
        let mut pass = t.agent().rl_pass(&buffer).unwrap();
        pass.graph.backward(pass.total).unwrap();
        let up = pass.graph.grad(pass.fused).unwrap().to_vec();
        let m = pass.features.len();
        let width = m * FEATURE_DIM;
        for (k, f) in pass.features.iter().enumerate() {
            let got = pass.graph.grad(*f).unwrap();
            for (i, g) in got.iter().enumerate() {
                let (row, col) = (i / FEATURE_DIM, i % FEATURE_DIM);
                let expected = pass.lambda[k][i] * up[row * width + k * FEATURE_DIM + col];
                assert!((g - expected).abs() <= 1e-10, "modality {k} entry {i}: {g} vs {expected}");
            }
        }
    }

    #[test]
    fn zero_rewards_give_zero_policy_gradient() {
        let mut t = trainer(EnvKind::HeteroNav, Method::Maie, 6);
        let mut buffer = t.collect_rollout().unwrap();
        for s in &mut buffer.steps {
            s.reward = 0.0;
        }
        buffer.bootstrap = 0.0;
        // critic output layer starts at zero
        let pass = t.agent().rl_pass(&buffer).unwrap();
        assert!(pass.values.iter().all(|v| *v == 0.0));
        assert!(pass.returns.iter().all(|r| *r == 0.0));
        assert_eq!(pass.graph.value(pass.actor.policy_gradient).item(), 0.0);
    }

    #[test]
    fn critic_regression_converges() {
        let specs = EnvKind::HeteroNav.build(0).modalities().to_vec();
        let cfg = TrainConfig { lr: 1e-3, ..Default::default() };
        let mut agent = Agent::new(&specs, 4, cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        use rand::Rng;
        let states: Vec<Vec<f64>> = (0..16).map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = matrix(&states).unwrap();
        let ids = agent.critic_params();
        let mut opt = Adam::new(agent.config.adam());
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let v = agent.critic.forward(&mut g, &agent.store, xv).unwrap();
            let l = loss_critic(&mut g, v, &targets).unwrap();
            last = g.value(l).item();
            g.backward(l).unwrap();
            agent.store.zero_grad();
            g.accumulate_param_grads(&mut agent.store);
            opt.step(&mut agent.store, &ids);
        }
        assert!(last < 1e-3, "{last}");
    }

    #[test]
    fn every_method_runs_on_every_env() {
        for kind in EnvKind::ALL {
            for method in Method::ALL {
                let mut t = trainer(kind, method, 0);
                let r = t.train_step().unwrap();
                assert!(r.update.loss_actor.is_finite(), "{kind} {method}");
                assert_eq!(r.steps.len(), 8);
            }
        }
    }

    #[test]
    fn checkpoint_restores_behaviour() {
        let mut a = trainer(EnvKind::Mining, Method::Maie, 7);
        a.train_step().unwrap();
        let ckpt = a.agent().checkpoint();
        let mut b = trainer(EnvKind::Mining, Method::Maie, 8);
        b.agent_mut().restore(&ckpt).unwrap();
        assert_eq!(b.agent().checkpoint(), ckpt);
        let json = serde_json::to_string(&ckpt).unwrap();
        assert_eq!(serde_json::from_str::<AgentCheckpoint>(&json).unwrap(), ckpt);
    }
}
