use serde_json::json;

use crate::envs::{ModalityObs, MultimodalObservation};
use crate::extractors::RecurrentState;

/// One collected environment step.
#[derive(Clone, Debug)]
pub struct Transition {
    pub observation: MultimodalObservation,
    /// The observation is the first of an episode.
    pub reset: bool,
    pub features: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// Time-ordered transitions of one rollout plus what is needed to replay the
/// extractors over them.
#[derive(Clone, Debug)]
pub struct RolloutBuffer {
    capacity: usize,
    /// Recurrent state of every extractor before the first transition.
    pub init_states: Vec<RecurrentState>,
    pub steps: Vec<Transition>,
    /// Critic estimate of the state after the last step; 0 when it ended an
    /// episode.
    pub bootstrap: f64,
}

impl RolloutBuffer {
    pub fn new(capacity: usize, init_states: Vec<RecurrentState>) -> Self {
        RolloutBuffer { capacity, init_states, steps: Vec::with_capacity(capacity), bootstrap: 0.0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.steps.len() >= self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        debug_assert!(!self.is_full());
        self.steps.push(t);
    }

    /// Empties the buffer for the next rollout starting from `init_states`.
    pub fn clear(&mut self, init_states: Vec<RecurrentState>) {
        self.steps.clear();
        self.init_states = init_states;
        self.bootstrap = 0.0;
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn dones(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.done).collect()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn resets(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.reset).collect()
    }

    /// Observations of modality `m` in time order.
    pub fn modality_observations(&self, m: usize) -> Vec<&ModalityObs> {
        self.steps.iter().map(|s| &s.observation.parts[m]).collect()
    }

    /// Features of modality `m` as rows.
    pub fn modality_features(&self, m: usize) -> Vec<&[f64]> {
        self.steps.iter().map(|s| s.features[m].as_slice()).collect()
    }

    /// Everything except raw observations, for post-mortem inspection.
    pub fn dump(&self) -> serde_json::Value {
        json!({
            "bootstrap": self.bootstrap,
            "init_states": self.init_states.iter().map(|s| json!({"h": s.h, "c": s.c})).collect::<Vec<_>>(),
            "steps": self.steps.iter().map(|s| json!({
                "reset": s.reset,
                "action": s.action,
                "log_prob": s.log_prob,
                "reward": s.reward,
                "value": s.value,
                "done": s.done,
                "cue": s.observation.cue.map(|c| c.name()),
                "features": s.features,
                "lambda": s.lambda,
            })).collect::<Vec<_>>(),
        })
    }
}
