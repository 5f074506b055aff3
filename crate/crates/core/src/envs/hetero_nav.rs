use rand_chacha::ChaCha8Rng;

use super::grid::{fingerprint, render_grid, seeded, Pos};
use super::{
    AudioClass, AudioRenderer, EnvKind, Environment, Modality, ModalityObs, ModalitySpec, MultimodalObservation,
    ObsShape, Step, AUDIO_SIZE, EPISODE_CAP,
};
use crate::error::{Error, Result};

const SIZE: usize = 10;
const START: Pos = Pos::new(0, 0);
const GOAL: Pos = Pos::new(9, 9);
const CH_AGENT: usize = 0;
const CH_GOAL: usize = 1;

/// Navigate from the top-left to the bottom-right corner. Vision shows both
/// positions; audio gives the compass bearing of the goal.
pub struct HeteroNav {
    rng: ChaCha8Rng,
    audio: AudioRenderer,
    specs: [ModalitySpec; 2],
    agent: Pos,
    steps: usize,
}

impl HeteroNav {
    pub fn new(seed: u64) -> Self {
        HeteroNav {
            rng: seeded(seed),
            audio: AudioRenderer::default(),
            specs: [
                ModalitySpec {
                    modality: Modality::Visual,
                    shape: ObsShape::Image { channels: 2, height: SIZE, width: SIZE },
                },
                ModalitySpec {
                    modality: Modality::Audio,
                    shape: ObsShape::Image { channels: 1, height: AUDIO_SIZE, width: AUDIO_SIZE },
                },
            ],
            agent: START,
            steps: 0,
        }
    }

    pub fn agent(&self) -> Pos {
        self.agent
    }

    pub fn goal(&self) -> Pos {
        GOAL
    }

    fn observe(&mut self) -> MultimodalObservation {
        let visual = render_grid(2, SIZE, SIZE, &[(CH_AGENT, self.agent), (CH_GOAL, GOAL)]);
        let cue = AudioClass::bearing(GOAL.row - self.agent.row, GOAL.col - self.agent.col);
        let audio = self.audio.render(cue, &mut self.rng);
        MultimodalObservation { parts: vec![ModalityObs::Image(visual), ModalityObs::Image(audio)], cue }
    }
}

impl Environment for HeteroNav {
    fn kind(&self) -> EnvKind {
        EnvKind::HeteroNav
    }

    fn modalities(&self) -> &[ModalitySpec] {
        &self.specs
    }

    fn action_count(&self) -> usize {
        4
    }

    fn reset(&mut self, seed: Option<u64>) -> MultimodalObservation {
        if let Some(s) = seed {
            self.rng = seeded(s);
        }
        self.agent = START;
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if action >= self.action_count() {
            return Err(Error::InvalidAction { action, count: self.action_count() });
        }
        self.steps += 1;
        let next = self.agent.moved(action);
        if next.inside(SIZE, SIZE) {
            self.agent = next;
        }
        let success = self.agent == GOAL;
        let reward = if success { 1.0 } else { -1.0 };
        let done = success || self.steps >= EPISODE_CAP;
        Ok(Step { observation: self.observe(), reward, done, success })
    }

    fn rng_fingerprint(&self) -> u64 {
        fingerprint(&self.rng)
    }
}
